//! Comparator weights: logistic EIF weights, trimmed, CBPS and true scores.

use medweights::baseline::{cbps_weights, logistic_eif_weights, true_ps_weights, CbpsConfig, DEFAULT_TRIM};
use medweights::estimators::{estimate_ipw_type, Estimand};
use medweights::simulation::{Dgp, DgpFamily, Setting, SettingConfig};
use medweights::weights::{Orientation, WeightSet};

fn summary(name: &str, data: &medweights::data::Dataset, s: &WeightSet, e: &WeightSet) -> medweights::Result<()> {
    let th = estimate_ipw_type(data, s, e)?;
    let max = s.w2.iter().cloned().fold(0.0, f64::max);
    println!(
        "{name:<10} max step-2 weight {max:>8.4}   NDE(0) {:>8.4}   NDE(1) {:>8.4}",
        th.get(Estimand::Nde0),
        th.get(Estimand::Nde1)
    );
    Ok(())
}

fn main() -> medweights::Result<()> {
    let draw = Dgp::new(DgpFamily::Ts, 500, 2).draw(0);
    let data = &draw.data;
    let bases = SettingConfig::new(DgpFamily::Ts, Setting::A)?.bases(data)?;

    let (s, e) = logistic_eif_weights(data, &bases.c, &bases.b, None)?;
    summary("eif", data, &s, &e)?;
    let (s, e) = logistic_eif_weights(data, &bases.c, &bases.b, Some(DEFAULT_TRIM))?;
    summary("eif-trim", data, &s, &e)?;

    let cfg = CbpsConfig::default();
    let (s, pi, xi) = cbps_weights(data, &bases.c, &bases.b, &cfg, Orientation::Standard)?;
    let (e, _, _) = cbps_weights(data, &bases.c, &bases.b, &cfg, Orientation::Exchanged)?;
    println!("cbps GMM objectives: {:.2e} (pi), {:.2e} (xi)", pi.objective, xi.objective);
    summary("cbps", data, &s, &e)?;

    let s = true_ps_weights(data, &draw.pi1, &draw.xi1, Orientation::Standard)?;
    let e = true_ps_weights(data, &draw.pi1, &draw.xi1, Orientation::Exchanged)?;
    summary("true-ps", data, &s, &e)?;
    Ok(())
}
