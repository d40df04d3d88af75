//! TASMD of minimal weights against logistic EIF weights.
//!
//! The long CSV goes to stdout, ready for plotting.

use medweights::baseline::logistic_eif_weights;
use medweights::diagnostics::tasmd;
use medweights::penalty::Penalty;
use medweights::simulation::{Dgp, DgpFamily, Setting, SettingConfig};
use medweights::weights::{fit_two_step, TwoStepConfig};

fn main() -> medweights::Result<()> {
    let draw = Dgp::new(DgpFamily::Wc, 500, 4).draw(0);
    let data = &draw.data;
    let bases = SettingConfig::new(DgpFamily::Wc, Setting::B)?.bases(data)?;
    let mw = fit_two_step(data, &bases.c, &bases.b, &Penalty::entropy(), &TwoStepConfig::exact())?;
    let (eif, _) = logistic_eif_weights(data, &bases.c, &bases.b, None)?;
    let a = tasmd(data, &mw, &bases.c, &bases.b, "mw");
    let b = tasmd(data, &eif, &bases.c, &bases.b, "eif");
    eprintln!("largest TASMD: mw {:.2e}, eif {:.3}", a.max(), b.max());
    let mut out = std::io::stdout().lock();
    a.write_long_csv(&mut out).and_then(|_| b.write_long_rows(&mut out)).expect("stdout");
    Ok(())
}
