//! Replicates one simulation design and prints the direct-effect table.
//!
//! cargo run --release --example monte_carlo -- ts A 200

use medweights::simulation::{run_mc, SimConfig};

fn main() -> medweights::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = SimConfig::default();
    if let Some(f) = args.first() {
        cfg.family = f.parse()?;
    }
    if let Some(s) = args.get(1) {
        cfg.setting = s.parse()?;
    }
    if let Some(r) = args.get(2) {
        cfg.reps = r.parse().map_err(|_| medweights::Error::Config("reps must be an integer".into()))?;
    }
    let res = run_mc(&cfg)?;
    println!(
        "{:<9} {:<22} {:<7} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "method", "family", "effect", "mean", "bias", "var", "mse", "cover"
    );
    for r in &res.rows {
        println!(
            "{:<9} {:<22} {:<7} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            r.method.name(),
            r.family.name(),
            r.estimand.name(),
            r.mean,
            r.abs_bias,
            r.variance,
            r.mse,
            r.coverage.map_or("-".into(), |c| format!("{c:.3}"))
        );
    }
    for f in res.failures.iter().take(5) {
        eprintln!("failure: {f}");
    }
    eprintln!("{} failures, {:.1}s", res.failures.len(), res.wall_time_secs);
    Ok(())
}
