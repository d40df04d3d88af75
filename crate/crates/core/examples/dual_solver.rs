//! Solves one balancing problem through its dual and audits the solution.

use medweights::dual::{check_kkt, solve_dual, BalancingProblem, SolverConfig};
use medweights::penalty::Penalty;
use nalgebra::{DMatrix, DVector};

fn main() -> medweights::Result<()> {
    // Eight units, columns (1, x). Reweight the first five so that their
    // mean of x is 0.4 within a tolerance of 0.05.
    let x = [0.1, 0.9, 0.3, -0.2, 0.6, 1.5, 2.0, 0.7];
    let mut design = DMatrix::from_element(8, 2, 1.0);
    for (i, v) in x.iter().enumerate() {
        design[(i, 1)] = *v;
    }
    let mask: Vec<bool> = (0..8).map(|i| i < 5).collect();
    let prob = BalancingProblem::from_matrix(
        mask,
        design,
        vec!["(constant)".into(), "x".into()],
        Some(0),
        DVector::from_vec(vec![1.0, 0.4]),
        DVector::from_vec(vec![0.0, 0.05]),
        Penalty::entropy(),
    )?;
    let sol = solve_dual(&prob, &SolverConfig::default());
    println!("status {:?} after {} iterations", sol.status, sol.iterations);
    println!("lambda {:?}", sol.lambda);
    for (i, w) in sol.rows.iter().zip(&sol.weights) {
        println!("  unit {i}: weight {w:.6}");
    }
    let kkt = check_kkt(&prob, &sol);
    println!(
        "primal {:.10} dual {:.10} gap {:.2e} max violation {:.2e} slackness {:.2e}",
        kkt.primal_objective,
        kkt.dual_objective,
        kkt.duality_gap,
        kkt.max_violation(),
        kkt.max_slackness()
    );
    Ok(())
}
