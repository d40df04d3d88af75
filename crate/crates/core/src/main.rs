use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medweights::penalty::PenaltyKind;
use medweights::run::{execute, Command, Report, RunConfig};
use medweights::simulation::{DgpFamily, Method, Setting};
use medweights::weights::Tolerance;

#[derive(Parser)]
#[command(name = "medweights", version, about = "Two-step balancing weights for natural direct and indirect effects")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Weights, point estimates, variances and balance diagnostics.
    Estimate(DataArgs),
    /// Weights only, with solver certificates.
    Weights(DataArgs),
    /// Bootstrap search for the balance tolerances.
    Tune(DataArgs),
    /// Balance table for the chosen weights.
    Diagnose(DataArgs),
    /// Monte Carlo replication of a simulation design.
    Simulate(SimArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    level: Option<f64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct DataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long, value_delimiter = ',')]
    mediators: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long)]
    control_level: Option<String>,
    #[arg(long)]
    true_pi: Option<String>,
    #[arg(long)]
    true_xi: Option<String>,
    /// mw, mw-tuned, eif, eif-trim, cbps, true-ps or ri.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, value_parser = parse_penalty)]
    penalty: Option<PenaltyKind>,
    /// One value, or one per non-constant step-1 column.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta: Option<Vec<f64>>,
    #[arg(long)]
    tune: bool,
    #[arg(long)]
    tune_grid: Option<usize>,
    #[arg(long)]
    tune_reps: Option<usize>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    interactions: Option<usize>,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    mediator_interactions: bool,
    #[arg(long)]
    weights_csv: Option<PathBuf>,
    #[arg(long)]
    balance_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    family: Option<DgpFamily>,
    #[arg(long)]
    setting: Option<Setting>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Balance constraints in sd units instead of raw covariate units.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    table_csv: Option<PathBuf>,
}

fn parse_penalty(s: &str) -> Result<PenaltyKind, String> {
    match s {
        "entropy" => Ok(PenaltyKind::Entropy),
        "quadratic" => Ok(PenaltyKind::Quadratic),
        _ => Err(format!("unknown penalty `{s}` (expected entropy or quadratic)")),
    }
}

fn tolerance(v: Vec<f64>) -> Tolerance {
    if v.len() == 1 {
        Tolerance::Scalar(v[0])
    } else {
        Tolerance::PerColumn(v)
    }
}

fn base_config(common: &Common, command: Command) -> medweights::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.command = command;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(l) = common.level {
        cfg.level = l;
    }
    if common.out.is_some() {
        cfg.output.report = common.out.clone();
    }
    Ok(cfg)
}

fn data_config(a: DataArgs, command: Command) -> medweights::Result<RunConfig> {
    let mut cfg = base_config(&a.common, command)?;
    let d = &mut cfg.data;
    if a.data.is_some() {
        d.path = a.data;
    }
    if let Some(v) = a.outcome {
        d.outcome = v;
    }
    if let Some(v) = a.treatment {
        d.treatment = v;
    }
    if let Some(v) = a.mediators {
        d.mediators = v;
    }
    if let Some(v) = a.covariates {
        d.covariates = v;
    }
    if a.control_level.is_some() {
        d.control_level = a.control_level;
    }
    if a.true_pi.is_some() {
        d.true_pi = a.true_pi;
    }
    if a.true_xi.is_some() {
        d.true_xi = a.true_xi;
    }
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(p) = a.penalty {
        cfg.penalty = p;
    }
    if let Some(e) = a.eps {
        cfg.eps = tolerance(e);
    }
    if let Some(e) = a.delta {
        cfg.delta = tolerance(e);
    }
    cfg.tune |= a.tune;
    if let Some(g) = a.tune_grid {
        cfg.tune_grid = g;
    }
    if let Some(r) = a.tune_reps {
        cfg.tune_reps = r;
    }
    if let Some(k) = a.degree {
        cfg.basis.degree = k;
    }
    if let Some(k) = a.interactions {
        cfg.basis.interactions = k;
    }
    cfg.basis.standardize |= a.standardize;
    cfg.basis.mediator_interactions |= a.mediator_interactions;
    if a.weights_csv.is_some() {
        cfg.output.weights_csv = a.weights_csv;
    }
    if a.balance_csv.is_some() {
        cfg.output.balance_csv = a.balance_csv;
    }
    Ok(cfg)
}

fn sim_config(a: SimArgs) -> medweights::Result<RunConfig> {
    let mut cfg = base_config(&a.common, Command::Simulate)?;
    let s = &mut cfg.simulation;
    if let Some(f) = a.family {
        s.family = f;
    }
    if let Some(v) = a.setting {
        s.setting = v;
    }
    if let Some(n) = a.n {
        s.n = n;
    }
    if let Some(r) = a.reps {
        s.reps = r;
    }
    if let Some(m) = a.methods {
        s.methods = m;
    }
    if let Some(e) = a.eps {
        s.eps = e;
    }
    if let Some(e) = a.delta {
        s.delta = e;
    }
    s.standardize |= a.standardize;
    if a.table_csv.is_some() {
        cfg.output.table_csv = a.table_csv;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (print_config, built) = match cli.cmd {
        Cmd::Estimate(a) => (a.common.print_config, data_config(a, Command::Estimate)),
        Cmd::Weights(a) => (a.common.print_config, data_config(a, Command::Weights)),
        Cmd::Tune(a) => (a.common.print_config, data_config(a, Command::Tune)),
        Cmd::Diagnose(a) => (a.common.print_config, data_config(a, Command::Diagnose)),
        Cmd::Simulate(a) => (a.common.print_config, sim_config(a)),
    };
    let cfg = match built {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if print_config {
        return match cfg.to_toml() {
            Ok(t) => {
                print!("{t}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }
    if cfg.workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let (report, code) = match execute(&cfg) {
        Ok(r) => (r, ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_numerical() { 2 } else { 1 };
            (Report::failed(&cfg, &e), ExitCode::from(code))
        }
    };
    let json = report.to_json();
    match &cfg.output.report {
        Some(path) => {
            if let Err(e) = std::fs::write(path, json + "\n") {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(1);
            }
        }
        None => println!("{json}"),
    }
    code
}
