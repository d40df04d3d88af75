//! All nine estimands with variances and intervals from one simulated draw.

use medweights::estimators::{fit_nuisances, Family};
use medweights::inference::infer_weighting;
use medweights::penalty::Penalty;
use medweights::simulation::{Dgp, DgpFamily, Setting, SettingConfig};
use medweights::weights::{fit_both_orientations, TwoStepConfig};

fn main() -> medweights::Result<()> {
    let draw = Dgp::new(DgpFamily::Ts, 1000, 3).draw(0);
    let data = &draw.data;
    let bases = SettingConfig::new(DgpFamily::Ts, Setting::A)?.bases(data)?;
    let (std, exc) = fit_both_orientations(data, &bases.c, &bases.b, &Penalty::entropy(), &TwoStepConfig::exact())?;
    let nuis = fit_nuisances(data, &bases.outcome_mx, &bases.outcome_x)?;
    for family in [Family::EifType, Family::IpwType] {
        let rep = infer_weighting(data, &std, &exc, &nuis, family, "mw", 0.95)?;
        println!("{} (n = {})", family.name(), rep.n);
        for r in &rep.rows {
            println!(
                "  {:<9} {:>10.4}  se {:>8.4}  [{:>9.4}, {:>9.4}]  p {}",
                r.estimand.name(),
                r.estimate,
                r.se.unwrap_or(f64::NAN),
                r.ci_low.unwrap_or(f64::NAN),
                r.ci_high.unwrap_or(f64::NAN),
                r.p_value.map_or("-".into(), |p| format!("{p:.4}"))
            );
        }
    }
    println!("true direct effects: {}", DgpFamily::Ts.true_nde());
    Ok(())
}
