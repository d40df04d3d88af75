//! Bootstrap selection of the step-1 and step-2 tolerances.
//!
//! For each candidate tolerance the weights are fitted once on the original
//! data. Their balance is then scored on bootstrap resamples of the rows and
//! averaged, and the candidate with the smallest average wins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{mean_sd, DesignMatrix};
use crate::data::Dataset;
use crate::dual::SolverConfig;
use crate::error::{Error, Result};
use crate::penalty::Penalty;
use crate::weights::{fit_step1, fit_step2, Orientation, Tolerance};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub grid_size: usize,
    /// Bootstrap resamples per candidate.
    pub reps: usize,
    pub seed: u64,
    /// Explicit grids override the uniform ones.
    pub eps_grid: Option<Vec<f64>>,
    pub delta_grid: Option<Vec<f64>>,
    pub orientation: Orientation,
    pub solver: SolverConfig,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            grid_size: 100,
            reps: 50,
            seed: 0,
            eps_grid: None,
            delta_grid: None,
            orientation: Orientation::Standard,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningResult {
    pub grid_eps: Vec<f64>,
    pub grid_delta: Vec<f64>,
    /// Average step-1 imbalance per candidate; infinite for failed solves.
    pub scores_eps: Vec<f64>,
    pub scores_delta: Vec<f64>,
    pub eps_star: f64,
    pub delta_star: f64,
    pub reps: usize,
    pub seed: u64,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

/// `size` evenly spaced points from 0 to `(n k)^(-1/2)` inclusive.
pub fn uniform_grid(n: usize, k: usize, size: usize) -> Vec<f64> {
    if size <= 1 || k == 0 {
        return vec![0.0];
    }
    let hi = 1.0 / ((n * k) as f64).sqrt();
    (0..size).map(|i| hi * i as f64 / (size - 1) as f64).collect()
}

/// Bootstrap multiplicities for resample `r` of grid candidate `candidate`
/// in `stage`. Each candidate owns its substream, so parallel evaluation
/// order cannot change the draws.
pub fn bootstrap_counts(n: usize, seed: u64, stage: u32, candidate: usize, r: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(stage) << 56) | ((candidate as u64) << 28) | r as u64);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

/// `sum_j |sum_i count_i w_i x_ij - target_j| / sd_j` over the given columns.
pub fn balance_criterion(weights: &[f64], counts: &[u32], design: &DesignMatrix, cols: &[usize], target: &[f64], sds: &[f64]) -> f64 {
    cols.iter()
        .enumerate()
        .map(|(a, &j)| {
            let s: f64 = weights
                .iter()
                .zip(counts)
                .enumerate()
                .filter(|(_, (w, _))| **w != 0.0)
                .map(|(i, (w, &c))| f64::from(c) * w * design.values[(i, j)])
                .sum();
            (s - target[a]).abs() / sds[a]
        })
        .sum()
}

/// Non-constant columns with positive full-sample sd, and those sds.
fn scored_columns(design: &DesignMatrix) -> (Vec<usize>, Vec<f64>) {
    let mut cols = Vec::new();
    let mut sds = Vec::new();
    for j in 0..design.ncols() {
        if design.constant_column() == Some(j) {
            continue;
        }
        let v: Vec<f64> = design.values.column(j).iter().copied().collect();
        let sd = mean_sd(&v).1;
        if sd > 0.0 {
            cols.push(j);
            sds.push(sd);
        }
    }
    (cols, sds)
}

fn normalised(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Index of the smallest score; ties go to the earlier (smaller) candidate.
fn argmin(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn tune_tolerances(
    data: &Dataset,
    c_basis: &DesignMatrix,
    b_basis: &DesignMatrix,
    penalty: &Penalty,
    cfg: &TuningConfig,
) -> Result<TuningResult> {
    if cfg.reps == 0 {
        return Err(Error::Config("at least one bootstrap resample is needed".into()));
    }
    let n = data.n();
    let c = c_basis.ensure_constant();
    let b = b_basis.ensure_constant();
    let grid_eps = cfg
        .eps_grid
        .clone()
        .unwrap_or_else(|| uniform_grid(n, c.n_nonconstant(), cfg.grid_size));
    let grid_delta = cfg
        .delta_grid
        .clone()
        .unwrap_or_else(|| uniform_grid(n, b.n_nonconstant(), cfg.grid_size));
    if grid_eps.is_empty() || grid_delta.is_empty() {
        return Err(Error::Config("tolerance grids must be non-empty".into()));
    }
    let mut failures = Vec::new();

    // Step 1.
    let (c_cols, c_sds) = scored_columns(&c);
    let c_target: Vec<f64> = c_cols.iter().map(|&j| c.values.column(j).mean()).collect();
    let step1: Vec<std::result::Result<(Vec<f64>, f64), String>> = grid_eps
        .par_iter()
        .enumerate()
        .map(|(k, &e)| {
            let (w1, _, _) = fit_step1(data, &c, &Tolerance::Scalar(e), penalty, cfg.orientation, false, &cfg.solver)
                .map_err(|err| format!("eps = {e:e}: {err}"))?;
            let w1 = normalised(w1);
            let score = (0..cfg.reps)
                .map(|r| balance_criterion(&w1, &bootstrap_counts(n, cfg.seed, 1, k, r), &c, &c_cols, &c_target, &c_sds))
                .sum::<f64>()
                / cfg.reps as f64;
            Ok((w1, score))
        })
        .collect();
    let scores_eps: Vec<f64> = step1
        .iter()
        .map(|r| match r {
            Ok((_, s)) => *s,
            Err(_) => f64::INFINITY,
        })
        .collect();
    failures.extend(step1.iter().filter_map(|r| r.as_ref().err().cloned()));
    let i_eps = argmin(&scores_eps).ok_or_else(|| Error::Solver {
        step: 1,
        status: crate::dual::SolveStatus::InfeasibleSuspected,
        max_violation: f64::NAN,
        gap: f64::NAN,
    })?;
    let eps_star = grid_eps[i_eps];
    let w1 = step1[i_eps].as_ref().unwrap().0.clone();

    // Step 2.
    let (b_cols, b_sds) = scored_columns(&b);
    let b_target: Vec<f64> = b_cols
        .iter()
        .map(|&j| (0..n).map(|i| w1[i] * b.values[(i, j)]).sum())
        .collect();
    let step2: Vec<std::result::Result<f64, String>> = grid_delta
        .par_iter()
        .enumerate()
        .map(|(k, &dl)| {
            let (w2, _, _) = fit_step2(data, &b, &w1, &Tolerance::Scalar(dl), penalty, cfg.orientation, false, &cfg.solver)
                .map_err(|err| format!("delta = {dl:e}: {err}"))?;
            let w2 = normalised(w2);
            Ok((0..cfg.reps)
                .map(|r| balance_criterion(&w2, &bootstrap_counts(n, cfg.seed, 2, k, r), &b, &b_cols, &b_target, &b_sds))
                .sum::<f64>()
                / cfg.reps as f64)
        })
        .collect();
    let scores_delta: Vec<f64> = step2.iter().map(|r| *r.as_ref().unwrap_or(&f64::INFINITY)).collect();
    failures.extend(step2.iter().filter_map(|r| r.as_ref().err().cloned()));
    let i_delta = argmin(&scores_delta).ok_or_else(|| Error::Solver {
        step: 2,
        status: crate::dual::SolveStatus::InfeasibleSuspected,
        max_violation: f64::NAN,
        gap: f64::NAN,
    })?;

    let mut notes = Vec::new();
    if scores_delta[i_delta] > 10.0 * scores_eps[i_eps] {
        notes.push(format!(
            "step-2 imbalance {:.3e} exceeds ten times the step-1 imbalance {:.3e}; the sequential search may have settled on a poor step-1 tolerance",
            scores_delta[i_delta], scores_eps[i_eps]
        ));
    }
    Ok(TuningResult {
        grid_eps,
        grid_delta: grid_delta.clone(),
        scores_eps,
        scores_delta,
        eps_star,
        delta_star: grid_delta[i_delta],
        reps: cfg.reps,
        seed: cfg.seed,
        failures,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisSpec, Scope};
    use crate::weights::fit_step1;
    use nalgebra::DMatrix;
    use rand_distr::StandardNormal;

    fn data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
        let d: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < 1.0 / (1.0 + (-0.5 * x[i]).exp())).collect();
        let m: Vec<f64> = (0..n).map(|i| f64::from(u8::from(rng.random::<f64>() < 0.4 + 0.2 * f64::from(u8::from(d[i]))))).collect();
        Dataset::new(
            vec![0.0; n],
            d,
            DMatrix::from_column_slice(n, 1, &m),
            DMatrix::from_column_slice(n, 2, &x),
            vec!["m".into()],
            vec!["x1".into(), "x2".into()],
        )
        .unwrap()
    }

    fn bases(d: &Dataset) -> (DesignMatrix, DesignMatrix) {
        (
            build_basis(d, &BasisSpec::linear(&["x1", "x2"]), Scope::CovariatesOnly).unwrap(),
            build_basis(d, &BasisSpec::linear(&["x1", "x2", "m"]), Scope::CovariatesAndMediators).unwrap(),
        )
    }

    #[test]
    fn grid_endpoints() {
        let g = uniform_grid(100, 4, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 0.0);
        assert!((g[4] - 0.05).abs() < 1e-15);
        assert_eq!(uniform_grid(100, 4, 1), vec![0.0]);
    }

    #[test]
    fn singleton_grid_selects_zero() {
        let d = data(120, 1);
        let (c, b) = bases(&d);
        let cfg = TuningConfig {
            eps_grid: Some(vec![0.0]),
            delta_grid: Some(vec![0.0]),
            reps: 3,
            ..Default::default()
        };
        let r = tune_tolerances(&d, &c, &b, &Penalty::entropy(), &cfg).unwrap();
        assert_eq!((r.eps_star, r.delta_star), (0.0, 0.0));
    }

    #[test]
    fn deterministic_and_in_grid() {
        let d = data(150, 2);
        let (c, b) = bases(&d);
        let cfg = TuningConfig {
            grid_size: 6,
            reps: 5,
            seed: 42,
            ..Default::default()
        };
        let a = tune_tolerances(&d, &c, &b, &Penalty::entropy(), &cfg).unwrap();
        let again = tune_tolerances(&d, &c, &b, &Penalty::entropy(), &cfg).unwrap();
        assert_eq!(a.scores_eps, again.scores_eps);
        assert_eq!(a.scores_delta, again.scores_delta);
        assert!(a.grid_eps.contains(&a.eps_star));
        assert!(a.grid_delta.contains(&a.delta_star));
        let best = a.scores_eps.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(a.scores_eps[a.grid_eps.iter().position(|&e| e == a.eps_star).unwrap()], best);
    }

    #[test]
    fn identity_resample_is_in_sample_imbalance() {
        let d = data(80, 3);
        let (c, _) = bases(&d);
        let c = c.ensure_constant();
        let (w1, _, _) = fit_step1(
            &d,
            &c,
            &Tolerance::Scalar(0.05),
            &Penalty::entropy(),
            Orientation::Standard,
            false,
            &SolverConfig::default(),
        )
        .unwrap();
        let (cols, sds) = scored_columns(&c);
        let target: Vec<f64> = cols.iter().map(|&j| c.values.column(j).mean()).collect();
        let ones = vec![1u32; d.n()];
        let got = balance_criterion(&w1, &ones, &c, &cols, &target, &sds);
        let mut want = 0.0;
        for (a, &j) in cols.iter().enumerate() {
            let wm: f64 = (0..d.n()).map(|i| w1[i] * c.values[(i, j)]).sum();
            want += (wm - target[a]).abs() / sds[a];
        }
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn larger_tolerance_never_raises_dispersion() {
        let d = data(100, 4);
        let (c, _) = bases(&d);
        let mut last = f64::INFINITY;
        for e in [0.0, 0.02, 0.08] {
            let (_, sol, _) = fit_step1(
                &d,
                &c,
                &Tolerance::Scalar(e),
                &Penalty::entropy(),
                Orientation::Standard,
                true,
                &SolverConfig::default(),
            )
            .unwrap();
            let p = primal_objective_of(&sol);
            assert!(p <= last + 1e-10);
            last = p;
        }
    }

    fn primal_objective_of(sol: &crate::dual::DualSolution) -> f64 {
        sol.weights.iter().map(|&w| if w > 0.0 { w * w.ln() } else { 0.0 }).sum()
    }

    #[test]
    fn bootstrap_streams_differ_by_stage_candidate_and_rep() {
        let a = bootstrap_counts(50, 7, 1, 0, 0);
        assert_eq!(a.iter().sum::<u32>(), 50);
        assert_ne!(a, bootstrap_counts(50, 7, 1, 0, 1));
        assert_ne!(a, bootstrap_counts(50, 7, 1, 1, 0));
        assert_ne!(a, bootstrap_counts(50, 7, 2, 0, 0));
        assert_eq!(a, bootstrap_counts(50, 7, 1, 0, 0));
    }
}
