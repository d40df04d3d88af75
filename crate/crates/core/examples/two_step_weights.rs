//! Two-step minimal weights on a simulated draw, in both orientations.

use medweights::penalty::Penalty;
use medweights::simulation::{Dgp, DgpFamily, Setting, SettingConfig};
use medweights::weights::{fit_both_orientations, TwoStepConfig};

fn main() -> medweights::Result<()> {
    let draw = Dgp::new(DgpFamily::Ts, 500, 7).draw(0);
    let bases = SettingConfig::new(DgpFamily::Ts, Setting::B)?.bases(&draw.data)?;
    let (std, exc) = fit_both_orientations(
        &draw.data,
        &bases.c,
        &bases.b,
        &Penalty::entropy(),
        &TwoStepConfig::with_tolerances(0.01, 0.01),
    )?;
    for ws in [&std, &exc] {
        println!("{:?}", ws.orientation);
        for (label, sol) in [("step 1", &ws.step1), ("step 2", &ws.step2)] {
            let s = sol.as_ref().unwrap();
            println!(
                "  {label}: {:?}, {} iterations, gap {:.1e}, max violation {:.1e}",
                s.status, s.iterations, s.duality_gap, s.max_violation
            );
        }
        let max = |w: &[f64]| w.iter().cloned().fold(0.0, f64::max);
        println!("  largest weights: {:.4} / {:.4}", max(&ws.w1), max(&ws.w2));
    }
    let path = std::env::temp_dir().join("two_step_weights.csv");
    std.write_csv(&draw.data, &path)?;
    println!("standard weights written to {}", path.display());
    Ok(())
}
