//! Full pipeline on a user-supplied CSV in the layout of the framing study.
//!
//! cargo run --release --example framing_csv -- path/to/framing.csv
//!
//! Expected numeric columns: anti_info (outcome), treat (0/1), the
//! mediators p_harm, anx, emo and the covariates age, educ, gender, income.
//! The step-1 basis has the covariates with squares, cubes and all two- and
//! three-way products (20 terms); step 2 adds the mediators.

use medweights::estimators::{Estimand, Family};
use medweights::run::{execute, Command, RunConfig};

fn main() -> medweights::Result<()> {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: framing_csv <file.csv>");
        std::process::exit(1);
    };
    let mut cfg = RunConfig {
        command: Command::Estimate,
        ..Default::default()
    };
    cfg.data.path = Some(path.into());
    cfg.data.outcome = "anti_info".into();
    cfg.data.treatment = "treat".into();
    cfg.data.mediators = ["p_harm", "anx", "emo"].map(String::from).to_vec();
    cfg.data.covariates = ["age", "educ", "gender", "income"].map(String::from).to_vec();
    cfg.basis.degree = 3;
    cfg.basis.interactions = 3;
    let report = execute(&cfg)?;
    for fam in [Family::EifType, Family::IpwType] {
        let rep = report.estimate(fam).expect("weighting report");
        println!("{}", fam.name());
        for e in Estimand::EFFECTS {
            let r = rep.get(e);
            println!(
                "  {:<7} {:>8.4}  var {:.6}  p {:.4}",
                e.name(),
                r.estimate,
                r.variance.unwrap_or(f64::NAN),
                r.p_value.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
