//! Monte Carlo designs with a binary mediator and the replication engine.
//!
//! Two data-generating families are provided. Both draw `Z1..Z10` iid
//! standard normal, build nonlinear covariates `X` from them, and draw the
//! treatment and the mediator from logits in `Z`.
//!
//! * `ts`: `Y = 210 + 27.4 Z1 + 13.7 (Z2 + Z3 + Z4) + M + D + e`; both
//!   direct effects equal 1.
//! * `wc`: `Y = 210 + (1.5 D + M - 0.5)(27.4 Z1 + 13.7 (Z2 + Z3 + Z4)) + e`;
//!   both direct effects equal 0.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{cbps_weights, logistic_eif_weights, sigmoid, true_ps_weights, CbpsConfig};
use crate::basis::{build_basis, BasisSpec, DesignMatrix, Scope, Term};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{fit_nuisances, Estimand, Family};
use crate::inference::{infer_weighting, regression_imputation_report, EstimateReport};
use crate::linalg::compensated_sum;
use crate::penalty::Penalty;
use crate::tuning::{tune_tolerances, TuningConfig};
use crate::weights::{fit_both_orientations, Orientation, Tolerance, TwoStepConfig, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpFamily {
    Ts,
    Wc,
}

impl DgpFamily {
    pub fn name(self) -> &'static str {
        match self {
            DgpFamily::Ts => "ts",
            DgpFamily::Wc => "wc",
        }
    }

    /// True value of both natural direct effects.
    pub fn true_nde(self) -> f64 {
        match self {
            DgpFamily::Ts => 1.0,
            DgpFamily::Wc => 0.0,
        }
    }

    fn treatment_logit(self, z: &[f64]) -> f64 {
        match self {
            DgpFamily::Ts => z[0] - 0.5 * z[1] + 0.25 * z[2] + 0.1 * z[3],
            DgpFamily::Wc => -z[0] - 0.1 * z[3],
        }
    }
}

impl std::str::FromStr for DgpFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ts" | "ts2012" => Ok(DgpFamily::Ts),
            "wc" | "wc2018" => Ok(DgpFamily::Wc),
            _ => Err(Error::Config(format!("unknown family `{s}` (expected ts or wc)"))),
        }
    }
}

/// Logit of `P(M = 1 | D = d, Z)`, shared by both families.
fn mediator_logit(z: &[f64], d: f64) -> f64 {
    0.5 - z[0] + 0.5 * z[1] - 0.9 * z[2] + z[3] - 1.5 * d
}

/// `E[Y | Z, D = d, M = m]`.
pub fn structural_mean(family: DgpFamily, z: &[f64], d: f64, m: f64) -> f64 {
    let lin = 27.4 * z[0] + 13.7 * (z[1] + z[2] + z[3]);
    match family {
        DgpFamily::Ts => 210.0 + lin + m + d,
        DgpFamily::Wc => 210.0 + (1.5 * d + m - 0.5) * lin,
    }
}

/// `P(D = 1 | Z)`.
pub fn true_pi1(family: DgpFamily, z: &[f64]) -> f64 {
    sigmoid(family.treatment_logit(z))
}

/// `P(D = 1 | M = m, Z)` by Bayes' rule on the binary mediator.
pub fn true_xi1(family: DgpFamily, z: &[f64], m: f64) -> f64 {
    let p1 = true_pi1(family, z);
    let lik = |d: f64| {
        let q = sigmoid(mediator_logit(z, d));
        if m > 0.5 {
            q
        } else {
            1.0 - q
        }
    };
    let a = p1 * lik(1.0);
    a / (a + (1.0 - p1) * lik(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dgp {
    pub family: DgpFamily,
    pub n: usize,
    pub seed: u64,
}

/// One simulated dataset with its known propensity scores.
#[derive(Debug, Clone)]
pub struct Draw {
    pub data: Dataset,
    pub pi1: Vec<f64>,
    pub xi1: Vec<f64>,
}

const BLOCK_Z: u64 = 0;
const BLOCK_D: u64 = 1;
const BLOCK_M: u64 = 2;
const BLOCK_EPS: u64 = 3;

fn block_rng(seed: u64, rep: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((rep << 3) | block);
    rng
}

pub fn covariate_names(family: DgpFamily) -> Vec<String> {
    let mut names: Vec<String> = (1..=10).map(|j| format!("Z{j}")).collect();
    let nx = match family {
        DgpFamily::Ts => 4,
        DgpFamily::Wc => 10,
    };
    names.extend((1..=nx).map(|j| format!("X{j}")));
    names
}

fn transforms(family: DgpFamily, z: &[f64]) -> Vec<f64> {
    let x1 = (z[0] / 2.0).exp();
    let x3 = (z[0] * z[2] / 25.0 + 0.6).powi(3);
    match family {
        DgpFamily::Ts => vec![x1, z[1] / (1.0 + z[0].exp()) + 10.0, x3, (z[1] * z[3] + 20.0).powi(2)],
        DgpFamily::Wc => {
            let mut x = vec![x1, z[1] / (1.0 + z[0].exp()), x3, (z[1] + z[3] + 20.0).powi(2)];
            x.extend_from_slice(&z[4..10]);
            x
        }
    }
}

impl Dgp {
    pub fn new(family: DgpFamily, n: usize, seed: u64) -> Self {
        Self { family, n, seed }
    }

    /// Replication `rep`; each variable block has its own random stream.
    pub fn draw(&self, rep: u64) -> Draw {
        let n = self.n;
        let mut rz = block_rng(self.seed, rep, BLOCK_Z);
        let mut rd = block_rng(self.seed, rep, BLOCK_D);
        let mut rm = block_rng(self.seed, rep, BLOCK_M);
        let mut re = block_rng(self.seed, rep, BLOCK_EPS);
        let names = covariate_names(self.family);
        let mut x = DMatrix::zeros(n, names.len());
        let mut m = DMatrix::zeros(n, 1);
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut pi1 = Vec::with_capacity(n);
        let mut xi1 = Vec::with_capacity(n);
        for i in 0..n {
            let z: Vec<f64> = (0..10).map(|_| rz.sample(StandardNormal)).collect();
            let p = true_pi1(self.family, &z);
            let di = rd.random::<f64>() < p;
            let df = f64::from(u8::from(di));
            let mi = f64::from(u8::from(rm.random::<f64>() < sigmoid(mediator_logit(&z, df))));
            let e: f64 = re.sample(StandardNormal);
            y.push(structural_mean(self.family, &z, df, mi) + e);
            d.push(di);
            m[(i, 0)] = mi;
            pi1.push(p);
            xi1.push(true_xi1(self.family, &z, mi));
            for (j, v) in z.iter().chain(transforms(self.family, &z).iter()).enumerate() {
                x[(i, j)] = *v;
            }
        }
        let data = Dataset::new(y, d, m, x, vec!["M".into()], names).expect("simulated data is well formed");
        Draw { data, pi1, xi1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    A,
    B,
    C,
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Setting::A),
            "B" => Ok(Setting::B),
            "C" => Ok(Setting::C),
            _ => Err(Error::Config(format!("unknown setting `{s}` (expected A, B or C)"))),
        }
    }
}

/// Variable lists for one design. `c` drives step 1 and `pi`, `b` drives
/// step 2 and `xi`; the outcome regressions use `outcome_x`, with the
/// mediator added for `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingConfig {
    pub setting: Setting,
    pub c_terms: Vec<Term>,
    pub b_terms: Vec<Term>,
    pub outcome_x: Vec<Term>,
    pub outcome_mx: Vec<Term>,
    /// Standardize raw columns within each draw, which puts tolerances in
    /// sd units. Spans, and hence exact balance and the OLS fits, are
    /// unaffected.
    pub standardize: bool,
}

fn raw(names: &[&str]) -> Vec<Term> {
    names.iter().map(|s| Term::Raw(s.to_string())).collect()
}

fn seq(prefix: &str, hi: usize) -> Vec<String> {
    (1..=hi).map(|j| format!("{prefix}{j}")).collect()
}

impl SettingConfig {
    pub fn new(family: DgpFamily, setting: Setting) -> Result<Self> {
        let z4: Vec<String> = seq("Z", 4);
        let z4r: Vec<&str> = z4.iter().map(String::as_str).collect();
        let with_m = |mut v: Vec<Term>| {
            v.push(Term::Raw("M".into()));
            v
        };
        let cfg = match (family, setting) {
            (DgpFamily::Ts, Setting::A) | (DgpFamily::Wc, Setting::A) => SettingConfig {
                setting,
                c_terms: raw(&z4r),
                b_terms: with_m(raw(&z4r)),
                outcome_x: raw(&z4r),
                outcome_mx: with_m(raw(&z4r)),
                standardize: false,
            },
            (DgpFamily::Ts, Setting::B) => {
                let x4 = seq("X", 4);
                let xs: Vec<&str> = x4.iter().map(String::as_str).collect();
                let c: Vec<Term> = raw(&xs).into_iter().chain(raw(&z4r)).collect();
                SettingConfig {
                    setting,
                    b_terms: with_m(c.clone()),
                    c_terms: c,
                    outcome_x: raw(&xs),
                    outcome_mx: with_m(raw(&xs)),
                    standardize: false,
                }
            }
            (DgpFamily::Ts, Setting::C) => {
                let x4 = seq("X", 4);
                let xs: Vec<&str> = x4.iter().map(String::as_str).collect();
                SettingConfig {
                    setting,
                    c_terms: raw(&z4r),
                    b_terms: with_m(raw(&z4r)),
                    outcome_x: raw(&xs),
                    outcome_mx: with_m(raw(&xs)),
                    standardize: false,
                }
            }
            (DgpFamily::Wc, Setting::B) => {
                let x10 = seq("X", 10);
                let xs: Vec<&str> = x10.iter().map(String::as_str).collect();
                let c: Vec<Term> = raw(&xs).into_iter().chain(raw(&z4r)).collect();
                let mut b = with_m(c.clone());
                b.extend(z4.iter().map(|z| Term::Interaction(vec!["M".into(), z.clone()])));
                SettingConfig {
                    setting,
                    c_terms: c,
                    b_terms: b,
                    outcome_x: raw(&xs),
                    outcome_mx: with_m(raw(&xs)),
                    standardize: false,
                }
            }
            (DgpFamily::Wc, Setting::C) => {
                return Err(Error::Config("setting C is defined for the ts family only".into()))
            }
        };
        Ok(cfg)
    }

    pub fn standardized(mut self, standardize: bool) -> Self {
        self.standardize = standardize;
        self
    }
}

/// Evaluated bases for one draw.
#[derive(Debug, Clone)]
pub struct SettingBases {
    pub c: DesignMatrix,
    pub b: DesignMatrix,
    pub outcome_x: DesignMatrix,
    pub outcome_mx: DesignMatrix,
}

impl SettingConfig {
    pub fn bases(&self, data: &Dataset) -> Result<SettingBases> {
        let mk = |terms: &[Term], scope| build_basis(data, &BasisSpec::new(terms.to_vec()).standardized(self.standardize), scope);
        Ok(SettingBases {
            c: mk(&self.c_terms, Scope::CovariatesOnly)?,
            b: mk(&self.b_terms, Scope::CovariatesAndMediators)?,
            outcome_x: mk(&self.outcome_x, Scope::CovariatesOnly)?,
            outcome_mx: mk(&self.outcome_mx, Scope::CovariatesAndMediators)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mw,
    /// Two-step minimal weights with tolerances chosen by the bootstrap search.
    MwTuned,
    Eif,
    EifTrim,
    Cbps,
    TruePs,
    Ri,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mw => "mw",
            Method::MwTuned => "mw-tuned",
            Method::Eif => "eif",
            Method::EifTrim => "eif-trim",
            Method::Cbps => "cbps",
            Method::TruePs => "true-ps",
            Method::Ri => "ri",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mw" => Ok(Method::Mw),
            "mw-tuned" => Ok(Method::MwTuned),
            "eif" => Ok(Method::Eif),
            "eif-trim" => Ok(Method::EifTrim),
            "cbps" => Ok(Method::Cbps),
            "true-ps" => Ok(Method::TruePs),
            "ri" => Ok(Method::Ri),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub family: DgpFamily,
    pub setting: Setting,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub eps: f64,
    pub delta: f64,
    pub level: f64,
    pub tune_grid: usize,
    pub tune_reps: usize,
    /// Tolerances in sd units rather than raw covariate units.
    pub standardize: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            family: DgpFamily::Ts,
            setting: Setting::A,
            n: 500,
            reps: 200,
            seed: 1,
            methods: vec![Method::Mw, Method::Eif, Method::EifTrim, Method::Cbps, Method::TruePs, Method::Ri],
            workers: 0,
            eps: 0.0,
            delta: 0.0,
            level: 0.95,
            tune_grid: 100,
            tune_reps: 25,
            standardize: false,
        }
    }
}

/// Estimates from one replication for one method and estimator family.
#[derive(Debug, Clone)]
struct RepRecord {
    method: Method,
    family: Family,
    report: EstimateReport,
}

/// The direct effects scored in the Monte Carlo tables.
pub const MC_ESTIMANDS: [Estimand; 2] = [Estimand::Nde0, Estimand::Nde1];

#[derive(Debug, Clone, Serialize)]
pub struct McRow {
    pub method: Method,
    pub family: Family,
    pub estimand: Estimand,
    pub truth: f64,
    pub mean: f64,
    pub abs_bias: f64,
    /// Across replications, `R - 1` denominator.
    pub variance: f64,
    /// `mean((estimate - truth)^2)`.
    pub mse: f64,
    /// Share of intervals covering the truth, when intervals exist.
    pub coverage: Option<f64>,
    pub n_ok: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct McResult {
    pub config: SimConfig,
    pub rows: Vec<McRow>,
    pub failures: Vec<String>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl McResult {
    pub fn row(&self, method: Method, family: Family, estimand: Estimand) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.family == family && r.estimand == estimand)
    }

    /// Long CSV: `method,family,estimand,truth,mean,abs_bias,variance,mse,coverage,n_ok`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "method,family,estimand,truth,mean,abs_bias,variance,mse,coverage,n_ok")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method.name(),
                r.family.name(),
                r.estimand.name(),
                r.truth,
                r.mean,
                r.abs_bias,
                r.variance,
                r.mse,
                r.coverage.map_or("NA".to_string(), |c| c.to_string()),
                r.n_ok
            )?;
        }
        Ok(())
    }
}

/// Weight pair for a weighting method on one draw.
pub fn method_weights(
    method: Method,
    draw: &Draw,
    bases: &SettingBases,
    cfg: &SimConfig,
    rep: u64,
) -> Result<(WeightSet, WeightSet)> {
    let data = &draw.data;
    match method {
        Method::Mw => fit_both_orientations(
            data,
            &bases.c,
            &bases.b,
            &Penalty::entropy(),
            &TwoStepConfig::with_tolerances(cfg.eps, cfg.delta),
        ),
        Method::MwTuned => {
            let mut out = Vec::with_capacity(2);
            for (k, o) in [Orientation::Standard, Orientation::Exchanged].into_iter().enumerate() {
                let tc = TuningConfig {
                    grid_size: cfg.tune_grid,
                    reps: cfg.tune_reps,
                    seed: cfg.seed ^ (rep.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(k as u64),
                    orientation: o,
                    ..Default::default()
                };
                let tr = tune_tolerances(data, &bases.c, &bases.b, &Penalty::entropy(), &tc)?;
                let two = TwoStepConfig {
                    eps: Tolerance::Scalar(tr.eps_star),
                    delta: Tolerance::Scalar(tr.delta_star),
                    orientation: o,
                    ..Default::default()
                };
                out.push(crate::weights::fit_two_step(data, &bases.c, &bases.b, &Penalty::entropy(), &two)?);
            }
            let exc = out.pop().unwrap();
            Ok((out.pop().unwrap(), exc))
        }
        Method::Eif => logistic_eif_weights(data, &bases.c, &bases.b, None),
        Method::EifTrim => logistic_eif_weights(data, &bases.c, &bases.b, Some(crate::baseline::DEFAULT_TRIM)),
        Method::Cbps => {
            let cc = CbpsConfig::default();
            let (s, _, _) = cbps_weights(data, &bases.c, &bases.b, &cc, Orientation::Standard)?;
            let (e, _, _) = cbps_weights(data, &bases.c, &bases.b, &cc, Orientation::Exchanged)?;
            Ok((s, e))
        }
        Method::TruePs => Ok((
            true_ps_weights(data, &draw.pi1, &draw.xi1, Orientation::Standard)?,
            true_ps_weights(data, &draw.pi1, &draw.xi1, Orientation::Exchanged)?,
        )),
        Method::Ri => Err(Error::Config("regression imputation has no weights".into())),
    }
}

fn run_rep(cfg: &SimConfig, setting: &SettingConfig, rep: u64) -> (Vec<RepRecord>, Vec<String>) {
    let draw = Dgp::new(cfg.family, cfg.n, cfg.seed).draw(rep);
    let data = &draw.data;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let bases = match setting.bases(data) {
        Ok(b) => b,
        Err(e) => {
            failures.push(format!("rep {rep}: bases: {e}"));
            return (records, failures);
        }
    };
    let nuis = fit_nuisances(data, &bases.outcome_mx, &bases.outcome_x);
    for &method in &cfg.methods {
        let outcome = (|| -> Result<Vec<RepRecord>> {
            if method == Method::Ri {
                let nf = fit_nuisances(data, &bases.b, &bases.c)?;
                return Ok(vec![RepRecord {
                    method,
                    family: Family::RegressionImputation,
                    report: regression_imputation_report(&nf, data.n(), cfg.level),
                }]);
            }
            let nf = nuis.as_ref().map_err(|e| Error::Config(e.to_string()))?;
            let (s, e) = method_weights(method, &draw, &bases, cfg, rep)?;
            let mut v = Vec::with_capacity(2);
            for family in [Family::EifType, Family::IpwType] {
                v.push(RepRecord {
                    method,
                    family,
                    report: infer_weighting(data, &s, &e, nf, family, method.name(), cfg.level)?,
                });
            }
            Ok(v)
        })();
        match outcome {
            Ok(v) => records.extend(v),
            Err(e) => failures.push(format!("rep {rep}: {}: {e}", method.name())),
        }
    }
    (records, failures)
}

pub fn run_mc(cfg: &SimConfig) -> Result<McResult> {
    if cfg.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let setting = SettingConfig::new(cfg.family, cfg.setting)?.standardized(cfg.standardize);
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_rep: Vec<(Vec<RepRecord>, Vec<String>)> = pool.install(|| {
        (0..cfg.reps as u64)
            .into_par_iter()
            .map(|rep| run_rep(cfg, &setting, rep))
            .collect()
    });

    let truth = cfg.family.true_nde();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (_, f) in &per_rep {
        failures.extend(f.iter().cloned());
    }
    let mut families = vec![];
    for &m in &cfg.methods {
        if m == Method::Ri {
            families.push((m, Family::RegressionImputation));
        } else {
            families.push((m, Family::EifType));
            families.push((m, Family::IpwType));
        }
    }
    for (method, family) in families {
        for est in MC_ESTIMANDS {
            // Rep order is fixed, so the sums do not depend on scheduling.
            let rows_here: Vec<&crate::inference::EstimateRow> = per_rep
                .iter()
                .flat_map(|(recs, _)| recs.iter())
                .filter(|r| r.method == method && r.family == family)
                .map(|r| r.report.get(est))
                .collect();
            if rows_here.is_empty() {
                continue;
            }
            let vals: Vec<f64> = rows_here.iter().map(|r| r.estimate).collect();
            let k = vals.len() as f64;
            let mean = compensated_sum(vals.iter().copied()) / k;
            let variance = if vals.len() > 1 {
                compensated_sum(vals.iter().map(|v| (v - mean) * (v - mean))) / (k - 1.0)
            } else {
                0.0
            };
            let mse = compensated_sum(vals.iter().map(|v| (v - truth) * (v - truth))) / k;
            let covers: Vec<bool> = rows_here.iter().filter_map(|r| r.covers(truth)).collect();
            let coverage = (!covers.is_empty())
                .then(|| covers.iter().filter(|&&c| c).count() as f64 / covers.len() as f64);
            rows.push(McRow {
                method,
                family,
                estimand: est,
                truth,
                mean,
                abs_bias: (mean - truth).abs(),
                variance,
                mse,
                coverage,
                n_ok: vals.len(),
            });
        }
    }
    Ok(McResult {
        config: cfg.clone(),
        rows,
        failures,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
