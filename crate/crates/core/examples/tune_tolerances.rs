//! Bootstrap search for the step-1 and step-2 tolerances.

use medweights::penalty::Penalty;
use medweights::simulation::{Dgp, DgpFamily, Setting, SettingConfig};
use medweights::tuning::{tune_tolerances, TuningConfig};

fn main() -> medweights::Result<()> {
    let draw = Dgp::new(DgpFamily::Wc, 500, 5).draw(0);
    let bases = SettingConfig::new(DgpFamily::Wc, Setting::B)?.bases(&draw.data)?;
    let cfg = TuningConfig {
        grid_size: 40,
        reps: 25,
        seed: 2024,
        ..Default::default()
    };
    let res = tune_tolerances(&draw.data, &bases.c, &bases.b, &Penalty::entropy(), &cfg)?;
    println!("eps*   = {:.5} (grid {:.5} .. {:.5})", res.eps_star, res.grid_eps[0], res.grid_eps[res.grid_eps.len() - 1]);
    println!("delta* = {:.5} (grid {:.5} .. {:.5})", res.delta_star, res.grid_delta[0], res.grid_delta[res.grid_delta.len() - 1]);
    let best = |s: &[f64]| s.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("criterion at optimum: {:.4e} / {:.4e}", best(&res.scores_eps), best(&res.scores_delta));
    for n in &res.notes {
        println!("note: {n}");
    }
    if !res.failures.is_empty() {
        println!("{} candidates failed", res.failures.len());
    }
    Ok(())
}
