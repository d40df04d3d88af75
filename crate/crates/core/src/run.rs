//! Reproducible runs: a serializable configuration, its execution, and the
//! JSON report that echoes it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{cbps_weights, logistic_eif_weights, true_ps_weights, CbpsConfig, PropensityFit};
use crate::basis::{build_basis, BasisSpec, DesignMatrix, Scope, Term};
use crate::data::{load_csv, ColumnRoles, Dataset};
use crate::diagnostics::{tasmd, BalanceTable};
use crate::dual::{DualSolution, SolveStatus};
use crate::error::{Error, Result};
use crate::estimators::{fit_nuisances, Family};
use crate::inference::{infer_weighting, regression_imputation_report, EstimateReport};
use crate::penalty::{Penalty, PenaltyKind};
use crate::simulation::{run_mc, McResult, Method, SimConfig};
use crate::tuning::{tune_tolerances, TuningConfig, TuningResult};
use crate::weights::{fit_two_step, Orientation, Tolerance, TwoStepConfig, WeightSet};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    #[default]
    Estimate,
    Weights,
    Tune,
    Diagnose,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Weights => "weights",
            Command::Tune => "tune",
            Command::Diagnose => "diagnose",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub outcome: String,
    pub treatment: String,
    pub mediators: Vec<String>,
    pub covariates: Vec<String>,
    pub control_level: Option<String>,
    /// Columns holding known `P(D = 1 | X)` and `P(D = 1 | M, X)`, for `true-ps`.
    pub true_pi: Option<String>,
    pub true_xi: Option<String>,
}

impl DataConfig {
    pub fn roles(&self) -> ColumnRoles {
        let mut covariates = self.covariates.clone();
        for extra in [&self.true_pi, &self.true_xi].into_iter().flatten() {
            if !covariates.contains(extra) {
                covariates.push(extra.clone());
            }
        }
        ColumnRoles {
            outcome: self.outcome.clone(),
            treatment: self.treatment.clone(),
            mediators: self.mediators.clone(),
            covariates,
            control_level: self.control_level.clone(),
        }
    }
}

/// The step-1 basis is a polynomial in the covariates; the step-2 basis adds
/// the mediators and, optionally, their products with each covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    /// Empty means every covariate except known-propensity columns.
    pub covariates: Vec<String>,
    pub degree: u32,
    pub interactions: usize,
    pub standardize: bool,
    pub mediator_interactions: bool,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            covariates: Vec::new(),
            degree: 1,
            interactions: 1,
            standardize: false,
            mediator_interactions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub report: Option<PathBuf>,
    pub weights_csv: Option<PathBuf>,
    pub balance_csv: Option<PathBuf>,
    pub table_csv: Option<PathBuf>,
}

impl OutputConfig {
    pub fn is_empty(&self) -> bool {
        *self == OutputConfig::default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Command,
    pub data: DataConfig,
    pub basis: BasisConfig,
    pub penalty: PenaltyKind,
    pub method: Method,
    pub eps: Tolerance,
    pub delta: Tolerance,
    /// Choose `eps` and `delta` by the bootstrap search instead.
    pub tune: bool,
    pub tune_grid: usize,
    pub tune_reps: usize,
    pub trim: (f64, f64),
    pub level: f64,
    pub seed: u64,
    /// 0 uses every core.
    pub workers: usize,
    pub simulation: SimConfig,
    #[serde(skip_serializing_if = "OutputConfig::is_empty")]
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Estimate,
            data: DataConfig::default(),
            basis: BasisConfig::default(),
            penalty: PenaltyKind::Entropy,
            method: Method::Mw,
            eps: Tolerance::Scalar(0.0),
            delta: Tolerance::Scalar(0.0),
            tune: false,
            tune_grid: 100,
            tune_reps: 50,
            trim: crate::baseline::DEFAULT_TRIM,
            level: 0.95,
            seed: 1,
            workers: 0,
            simulation: SimConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The configuration as echoed in reports: top-level seed, workers and
    /// level propagated into the simulation block, output paths removed.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.simulation.seed = c.seed;
        c.simulation.workers = c.workers;
        c.simulation.level = c.level;
        c.output = OutputConfig::default();
        c
    }
}

/// Solver certificate of one balancing step.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub orientation: Orientation,
    pub step: u8,
    pub status: SolveStatus,
    pub iterations: usize,
    pub duality_gap: f64,
    pub max_violation: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dropped_columns: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Certificate {
    fn from_solution(orientation: Orientation, step: u8, s: &DualSolution) -> Self {
        Self {
            orientation,
            step,
            status: s.status,
            iterations: s.iterations,
            duality_gap: s.duality_gap,
            max_violation: s.max_violation,
            dropped_columns: s.dropped_columns.clone(),
            warnings: s.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropensityCertificate {
    pub orientation: Orientation,
    pub model: crate::baseline::PropensityModel,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    pub objective: f64,
}

impl PropensityCertificate {
    fn new(orientation: Orientation, f: &PropensityFit) -> Self {
        Self {
            orientation,
            model: f.model,
            converged: f.converged,
            separation: f.separation,
            iterations: f.iterations,
            objective: f.objective,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OrientedTuning {
    pub orientation: Orientation,
    #[serde(flatten)]
    pub result: TuningResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBlock {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: Command,
    pub versions: BTreeMap<&'static str, String>,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<EstimateReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub certificates: Vec<Certificate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub propensity: Vec<PropensityCertificate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<BalanceTable>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tuning: Vec<OrientedTuning>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<McResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBlock>,
}

impl Report {
    fn empty(cfg: &RunConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("medweights", env!("CARGO_PKG_VERSION").to_string());
        versions.insert("schema", SCHEMA_VERSION.to_string());
        Self {
            schema_version: SCHEMA_VERSION,
            command: cfg.command,
            versions,
            config: cfg.resolved(),
            estimates: Vec::new(),
            certificates: Vec::new(),
            propensity: Vec::new(),
            diagnostics: Vec::new(),
            tuning: Vec::new(),
            simulation: None,
            warnings: Vec::new(),
            error: None,
        }
    }

    /// A report carrying only the configuration and the error.
    pub fn failed(cfg: &RunConfig, err: &Error) -> Self {
        let mut r = Self::empty(cfg);
        r.error = Some(ErrorBlock {
            kind: if err.is_numerical() { "numerical" } else { "input" },
            message: err.to_string(),
        });
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn estimate(&self, family: Family) -> Option<&EstimateReport> {
        self.estimates.iter().find(|e| e.family == family)
    }
}

/// Data and evaluated bases for a data-driven command.
pub struct Prepared {
    pub data: Dataset,
    pub c: DesignMatrix,
    pub b: DesignMatrix,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("no data file given".into()))?;
    let data = load_csv(path, &cfg.data.roles())?;
    let (c, b) = build_bases(&data, cfg)?;
    Ok(Prepared { data, c, b })
}

pub fn build_bases(data: &Dataset, cfg: &RunConfig) -> Result<(DesignMatrix, DesignMatrix)> {
    let excluded: Vec<&String> = [&cfg.data.true_pi, &cfg.data.true_xi].into_iter().flatten().collect();
    let covs: Vec<String> = if cfg.basis.covariates.is_empty() {
        data.covariate_names()
            .iter()
            .filter(|c| !excluded.contains(c))
            .cloned()
            .collect()
    } else {
        cfg.basis.covariates.clone()
    };
    let c_spec = BasisSpec::polynomial(data, &covs, cfg.basis.degree, cfg.basis.interactions)?
        .standardized(cfg.basis.standardize);
    let mut b_spec = c_spec
        .clone()
        .with_terms(data.mediator_names().iter().cloned().map(Term::Raw));
    if cfg.basis.mediator_interactions {
        for m in data.mediator_names() {
            b_spec = b_spec.with_terms(covs.iter().map(|x| Term::Interaction(vec![m.clone(), x.clone()])));
        }
    }
    let c = build_basis(data, &c_spec, Scope::CovariatesOnly)?;
    let b = build_basis(data, &b_spec, Scope::CovariatesAndMediators)?;
    Ok((c, b))
}

/// Weights in both orientations, with certificates and tuning output.
pub struct FittedWeights {
    pub standard: WeightSet,
    pub exchanged: WeightSet,
    pub certificates: Vec<Certificate>,
    pub propensity: Vec<PropensityCertificate>,
    pub tuning: Vec<OrientedTuning>,
}

fn tuning_config(cfg: &RunConfig, orientation: Orientation) -> TuningConfig {
    TuningConfig {
        grid_size: cfg.tune_grid,
        reps: cfg.tune_reps,
        seed: cfg.seed,
        orientation,
        ..Default::default()
    }
}

pub fn fit_weights(p: &Prepared, cfg: &RunConfig) -> Result<FittedWeights> {
    let data = &p.data;
    let penalty = Penalty::from_kind(cfg.penalty);
    let mut certificates = Vec::new();
    let mut propensity = Vec::new();
    let mut tuning = Vec::new();
    let (standard, exchanged) = match cfg.method {
        Method::Mw | Method::MwTuned => {
            let mut sets = Vec::with_capacity(2);
            for o in [Orientation::Standard, Orientation::Exchanged] {
                let (eps, delta) = if cfg.tune || cfg.method == Method::MwTuned {
                    let tr = tune_tolerances(data, &p.c, &p.b, &penalty, &tuning_config(cfg, o))?;
                    let pair = (Tolerance::Scalar(tr.eps_star), Tolerance::Scalar(tr.delta_star));
                    tuning.push(OrientedTuning {
                        orientation: o,
                        result: tr,
                    });
                    pair
                } else {
                    (cfg.eps.clone(), cfg.delta.clone())
                };
                let two = TwoStepConfig {
                    eps,
                    delta,
                    orientation: o,
                    ..Default::default()
                };
                let ws = fit_two_step(data, &p.c, &p.b, &penalty, &two)?;
                for (step, s) in [(1, &ws.step1), (2, &ws.step2)] {
                    if let Some(s) = s {
                        certificates.push(Certificate::from_solution(o, step, s));
                    }
                }
                sets.push(ws);
            }
            let exc = sets.pop().unwrap();
            (sets.pop().unwrap(), exc)
        }
        Method::Eif => logistic_eif_weights(data, &p.c, &p.b, None)?,
        Method::EifTrim => logistic_eif_weights(data, &p.c, &p.b, Some(cfg.trim))?,
        Method::Cbps => {
            let cc = CbpsConfig::default();
            let (s, pi_s, xi_s) = cbps_weights(data, &p.c, &p.b, &cc, Orientation::Standard)?;
            let (e, pi_e, xi_e) = cbps_weights(data, &p.c, &p.b, &cc, Orientation::Exchanged)?;
            propensity.extend([
                PropensityCertificate::new(Orientation::Standard, &pi_s),
                PropensityCertificate::new(Orientation::Standard, &xi_s),
                PropensityCertificate::new(Orientation::Exchanged, &pi_e),
                PropensityCertificate::new(Orientation::Exchanged, &xi_e),
            ]);
            (s, e)
        }
        Method::TruePs => {
            let (Some(pc), Some(xc)) = (&cfg.data.true_pi, &cfg.data.true_xi) else {
                return Err(Error::Config("true-ps needs the true_pi and true_xi columns".into()));
            };
            let pi = data.column(pc).ok_or_else(|| Error::MissingColumn(pc.clone()))?;
            let xi = data.column(xc).ok_or_else(|| Error::MissingColumn(xc.clone()))?;
            (
                true_ps_weights(data, &pi, &xi, Orientation::Standard)?,
                true_ps_weights(data, &pi, &xi, Orientation::Exchanged)?,
            )
        }
        Method::Ri => return Err(Error::Config("regression imputation produces no weights".into())),
    };
    Ok(FittedWeights {
        standard,
        exchanged,
        certificates,
        propensity,
        tuning,
    })
}

fn balance_tables(p: &Prepared, w: &FittedWeights, cfg: &RunConfig) -> Vec<BalanceTable> {
    let name = cfg.method.name();
    vec![
        tasmd(&p.data, &w.standard, &p.c, &p.b, name),
        tasmd(&p.data, &w.exchanged, &p.c, &p.b, &format!("{name}-exchanged")),
    ]
}

/// Runs the configured command. Side files named in `cfg.output` other than
/// the report itself are written here.
pub fn execute(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::empty(cfg);
    if cfg.command == Command::Simulate {
        let sim = report.config.simulation.clone();
        let res = run_mc(&sim)?;
        if let Some(path) = &cfg.output.table_csv {
            write_with(path, |f| res.write_csv(f))?;
        }
        report.warnings.extend(res.failures.iter().cloned());
        report.simulation = Some(res);
        return Ok(report);
    }

    let p = prepare(cfg)?;
    if cfg.command == Command::Tune {
        let penalty = Penalty::from_kind(cfg.penalty);
        for o in [Orientation::Standard, Orientation::Exchanged] {
            let tr = tune_tolerances(&p.data, &p.c, &p.b, &penalty, &tuning_config(cfg, o))?;
            report.warnings.extend(tr.notes.iter().cloned());
            report.tuning.push(OrientedTuning {
                orientation: o,
                result: tr,
            });
        }
        return Ok(report);
    }

    if cfg.method == Method::Ri {
        if cfg.command != Command::Estimate {
            return Err(Error::Config("regression imputation only supports `estimate`".into()));
        }
        let nuis = fit_nuisances(&p.data, &p.b, &p.c)?;
        report.warnings.extend(nuis.warnings.iter().cloned());
        report
            .estimates
            .push(regression_imputation_report(&nuis, p.data.n(), cfg.level));
        return Ok(report);
    }

    let w = fit_weights(&p, cfg)?;
    if let Some(path) = &cfg.output.weights_csv {
        w.standard.write_csv(&p.data, path)?;
        w.exchanged.write_csv(&p.data, exchanged_path(path))?;
    }
    let tables = balance_tables(&p, &w, cfg);
    if let Some(path) = &cfg.output.balance_csv {
        write_with(path, |f| {
            tables[0].write_long_csv(f)?;
            tables[1].write_long_rows(f)
        })?;
    }
    if cfg.command == Command::Estimate {
        let nuis = fit_nuisances(&p.data, &p.b, &p.c)?;
        report.warnings.extend(nuis.warnings.iter().cloned());
        for family in [Family::EifType, Family::IpwType] {
            report.estimates.push(infer_weighting(
                &p.data,
                &w.standard,
                &w.exchanged,
                &nuis,
                family,
                cfg.method.name(),
                cfg.level,
            )?);
        }
    }
    if matches!(cfg.command, Command::Estimate | Command::Diagnose) {
        report.diagnostics = tables;
    }
    for t in &w.tuning {
        report.warnings.extend(t.result.notes.iter().cloned());
    }
    report.certificates = w.certificates;
    report.propensity = w.propensity;
    report.tuning = w.tuning;
    Ok(report)
}

/// `dir/name.csv` becomes `dir/name_exchanged.csv`.
pub fn exchanged_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_exchanged.{ext}"))
}

fn write_with(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    f(&mut out).map_err(io)?;
    use std::io::Write;
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let mut cfg = RunConfig {
            command: Command::Simulate,
            method: Method::EifTrim,
            eps: Tolerance::PerColumn(vec![0.1, 0.2]),
            seed: 9,
            ..Default::default()
        };
        cfg.data.mediators = vec!["m".into()];
        cfg.simulation.methods = vec![Method::Mw, Method::Ri];
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back.to_toml().unwrap(), text);
        assert_eq!(back.eps, cfg.eps);
    }

    #[test]
    fn partial_toml_takes_defaults() {
        let cfg = RunConfig::from_toml("command = \"tune\"\nseed = 3\n[basis]\ndegree = 2\n").unwrap();
        assert_eq!(cfg.command, Command::Tune);
        assert_eq!(cfg.basis.degree, 2);
        assert_eq!(cfg.level, 0.95);
        assert!(RunConfig::from_toml("bogus = [").is_err());
    }

    #[test]
    fn exchanged_sidecar_name() {
        assert_eq!(exchanged_path(Path::new("/tmp/w.csv")), PathBuf::from("/tmp/w_exchanged.csv"));
    }

    #[test]
    fn simulate_report_is_deterministic_and_echoes_seed() {
        let mut cfg = RunConfig {
            command: Command::Simulate,
            seed: 5,
            workers: 2,
            ..Default::default()
        };
        cfg.simulation.n = 150;
        cfg.simulation.reps = 3;
        cfg.simulation.methods = vec![Method::Mw, Method::Ri];
        let a = execute(&cfg).unwrap().to_json();
        cfg.workers = 1;
        let b = execute(&cfg).unwrap().to_json();
        let strip = |s: &str| s.replace("\"workers\": 1", "").replace("\"workers\": 2", "");
        assert_eq!(strip(&a), strip(&b));
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["config"]["simulation"]["seed"], 5);
    }
}
