//! Conjugate transforms of the built-in penalties.
//!
//! Prints `rho`, the recovered weight `rho'` and the round trip
//! `f'(rho'(t)) = t` on a few dual predictor values.

use medweights::penalty::Penalty;

fn main() {
    for pen in [Penalty::entropy(), Penalty::quadratic(Some(10))] {
        println!("{}", pen.name());
        println!("{:>6} {:>12} {:>12} {:>12}", "t", "rho", "weight", "f'(weight)");
        for t in [-2.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
            let w = pen.rho_prime(t);
            println!("{t:>6.2} {:>12.6} {:>12.6} {:>12.6}", pen.rho(t), w, pen.f_prime(w));
        }
        // Step-1 conjugate at n = 10.
        match pen.zeta(0.3, 10) {
            Ok(z) => println!("zeta(0.3) = {z:.6}, weight {:.6}\n", pen.zeta_prime(0.3, 10).unwrap()),
            Err(e) => println!("zeta(0.3): {e}\n"),
        }
    }
}
