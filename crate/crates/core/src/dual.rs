//! Approximate balancing through the L1-penalised dual.
//!
//! The primal problem is
//!
//! ```text
//! minimise    sum_{i in mask} f(w_i)
//! subject to  | sum_{i in mask} w_i Phi_ij - t_j | <= tol_j     for every column j
//! ```
//!
//! and its dual is the unconstrained composite problem
//!
//! ```text
//! minimise    sum_{i in mask} rho(Phi_i' lambda) - t' lambda + sum_j tol_j |lambda_j|
//! ```
//!
//! whose minimiser gives the weights back through `w_i = rho'(Phi_i' lambda)`.
//! The smooth part is minimised with either a proximal Newton method (each
//! step solves the L1-penalised quadratic model by coordinate descent, then
//! polishes on the active set) or an accelerated proximal gradient method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::penalty::Penalty;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Initial step of the proximal-gradient path.
    pub step_init: f64,
    /// Use proximal Newton steps; otherwise accelerated proximal gradient.
    pub acceleration: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 10_000,
            step_init: 1.0,
            acceleration: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleSuspected,
}

#[derive(Debug, Clone)]
pub struct BalancingProblem {
    /// Which rows receive weights.
    pub mask: Vec<bool>,
    /// Full design, one row per observation.
    pub design: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub constant_column: Option<usize>,
    pub target: DVector<f64>,
    pub tolerances: DVector<f64>,
    pub penalty: Penalty,
}

impl BalancingProblem {
    pub fn new(
        mask: Vec<bool>,
        design: &DesignMatrix,
        target: DVector<f64>,
        tolerances: DVector<f64>,
        penalty: Penalty,
    ) -> Result<Self> {
        Self::from_matrix(
            mask,
            design.values.clone(),
            design.column_names.clone(),
            design.constant_column(),
            target,
            tolerances,
            penalty,
        )
    }

    pub fn from_matrix(
        mask: Vec<bool>,
        design: DMatrix<f64>,
        column_names: Vec<String>,
        constant_column: Option<usize>,
        target: DVector<f64>,
        tolerances: DVector<f64>,
        penalty: Penalty,
    ) -> Result<Self> {
        let k = design.ncols();
        if mask.len() != design.nrows() {
            return Err(Error::Dimension(format!(
                "mask has {} rows, design has {}",
                mask.len(),
                design.nrows()
            )));
        }
        if target.len() != k || tolerances.len() != k || column_names.len() != k {
            return Err(Error::Dimension(format!(
                "design has {k} columns; target {}, tolerances {}, names {}",
                target.len(),
                tolerances.len(),
                column_names.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Dimension("mask selects no rows".into()));
        }
        if tolerances.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::Config("tolerances must be finite and nonnegative".into()));
        }
        if let Some(c) = constant_column {
            if tolerances[c] != 0.0 {
                return Err(Error::Config("the constant column must have zero tolerance".into()));
            }
        }
        Ok(Self {
            mask,
            design,
            column_names,
            constant_column,
            target,
            tolerances,
            penalty,
        })
    }

    pub fn rows(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn ncols(&self) -> usize {
        self.design.ncols()
    }

    /// `sum_{mask} w_i Phi_i - t` for weights listed in mask order.
    pub fn residual(&self, weights: &[f64]) -> DVector<f64> {
        let mut r = -self.target.clone();
        for (&i, &w) in self.rows().iter().zip(weights) {
            for j in 0..self.ncols() {
                r[j] += w * self.design[(i, j)];
            }
        }
        r
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    /// Masked row indices, aligned with `weights`.
    pub rows: Vec<usize>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub duality_gap: f64,
    pub max_violation: f64,
    pub status: SolveStatus,
    pub dropped_columns: Vec<String>,
    pub warnings: Vec<String>,
}

impl DualSolution {
    /// Weights scattered into a length-`n` vector, zero off the mask.
    pub fn full_weights(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&i, &w) in self.rows.iter().zip(&self.weights) {
            out[i] = w;
        }
        out
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Primal dispersion `sum f(w_i)` over weights in mask order.
pub fn primal_objective(prob: &BalancingProblem, weights: &[f64]) -> f64 {
    weights.iter().map(|&w| prob.penalty.f(w)).sum()
}

/// Dual objective in minimisation form.
pub fn dual_objective(prob: &BalancingProblem, lambda: &[f64]) -> f64 {
    let lam = DVector::from_column_slice(lambda);
    let smooth: f64 = prob
        .rows()
        .iter()
        .map(|&i| prob.penalty.rho(prob.design.row(i).dot(&lam.transpose())))
        .sum();
    smooth - prob.target.dot(&lam) + prob.tolerances.iter().zip(lambda).map(|(t, l)| t * l.abs()).sum::<f64>()
}

/// Optimality certificate for a candidate solution.
#[derive(Debug, Clone, Serialize)]
pub struct KktCertificate {
    /// `|residual_j| - tol_j`; positive entries are violations.
    pub violations: Vec<f64>,
    /// `|lambda_j| * (tol_j - |residual_j|)`.
    pub slackness: Vec<f64>,
    pub duality_gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

impl KktCertificate {
    pub fn max_violation(&self) -> f64 {
        self.violations.iter().fold(0.0f64, |a, &v| a.max(v))
    }

    pub fn max_slackness(&self) -> f64 {
        self.slackness.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }
}

pub fn check_kkt(prob: &BalancingProblem, sol: &DualSolution) -> KktCertificate {
    let r = prob.residual(&sol.weights);
    let violations: Vec<f64> = (0..prob.ncols()).map(|j| r[j].abs() - prob.tolerances[j]).collect();
    let slackness = (0..prob.ncols())
        .map(|j| sol.lambda[j].abs() * (prob.tolerances[j] - r[j].abs()))
        .collect();
    let p = primal_objective(prob, &sol.weights);
    let d = dual_objective(prob, &sol.lambda);
    KktCertificate {
        violations,
        slackness,
        duality_gap: p + d,
        primal_objective: p,
        dual_objective: d,
    }
}

/// Above this sup-norm of the scaled dual the problem is treated as infeasible.
const LAMBDA_CAP: f64 = 1e3;

struct Scaled<'a> {
    penalty: &'a Penalty,
    /// Masked rows, kept columns, each column divided by its scale.
    a: DMatrix<f64>,
    t: DVector<f64>,
    tol: DVector<f64>,
    scales: Vec<f64>,
    kept: Vec<usize>,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    eta: DVector<f64>,
}

impl<'a> Scaled<'a> {
    fn l1(&self, lam: &DVector<f64>) -> f64 {
        self.tol.iter().zip(lam.iter()).map(|(t, l)| t * l.abs()).sum()
    }

    fn eval(&self, lam: &DVector<f64>) -> Eval {
        let eta = &self.a * lam;
        let mut value = -self.t.dot(lam);
        let mut w = DVector::zeros(eta.len());
        for (i, &e) in eta.iter().enumerate() {
            value += self.penalty.rho(e);
            w[i] = self.penalty.rho_prime(e);
        }
        let grad = self.a.tr_mul(&w) - &self.t;
        Eval {
            value: if value.is_nan() { f64::INFINITY } else { value },
            grad,
            eta,
        }
    }

    fn objective(&self, lam: &DVector<f64>) -> f64 {
        let e = self.eval(lam);
        e.value + self.l1(lam)
    }

    fn hessian(&self, eta: &DVector<f64>) -> DMatrix<f64> {
        let mut wa = self.a.clone();
        for (i, &e) in eta.iter().enumerate() {
            let c = self.penalty.rho_second(e);
            wa.row_mut(i).scale_mut(c);
        }
        let mut h = self.a.tr_mul(&wa);
        let k = h.nrows();
        let mean_diag = (h.trace() / k as f64).max(f64::MIN_POSITIVE);
        for j in 0..k {
            h[(j, j)] += 1e-13 * mean_diag;
        }
        h
    }

    /// Minimum-norm subgradient of the composite objective.
    fn stationarity(&self, lam: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        (0..lam.len())
            .map(|j| {
                let (l, g, t) = (lam[j], grad[j], self.tol[j]);
                if l > 0.0 {
                    (g + t).abs()
                } else if l < 0.0 {
                    (g - t).abs()
                } else {
                    (g.abs() - t).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Minimises `q'z + z'Hz/2 + sum tol_j |z_j|` starting from `z0`.
fn l1_quadratic(h: &DMatrix<f64>, q: &DVector<f64>, tol: &DVector<f64>, z0: &DVector<f64>) -> DVector<f64> {
    let k = q.len();
    if tol.iter().all(|&t| t == 0.0) {
        let (z, _) = solve_spd(h, &(-q), 1e-12);
        return z;
    }
    let mut z = z0.clone();
    let mut hz = h * &z;
    for _ in 0..2000 {
        let mut max_change = 0.0f64;
        for j in 0..k {
            let hjj = h[(j, j)];
            let u = hjj * z[j] - (q[j] + hz[j]);
            let zn = soft(u, tol[j]) / hjj;
            let delta = zn - z[j];
            if delta != 0.0 {
                hz.axpy(delta, &h.column(j), 1.0);
                z[j] = zn;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change <= 1e-15 * (1.0 + z.amax()) {
            break;
        }
    }
    // Exact solve on the active set with the signs fixed.
    let support: Vec<usize> = (0..k).filter(|&j| z[j] != 0.0).collect();
    if !support.is_empty() {
        let s = support.len();
        let mut hs = DMatrix::zeros(s, s);
        let mut rhs = DVector::zeros(s);
        for (a, &i) in support.iter().enumerate() {
            rhs[a] = -(q[i] + tol[i] * z[i].signum());
            for (b, &j) in support.iter().enumerate() {
                hs[(a, b)] = h[(i, j)];
            }
        }
        let (zs, _) = solve_spd(&hs, &rhs, 1e-12);
        let mut cand = DVector::zeros(k);
        for (a, &i) in support.iter().enumerate() {
            cand[i] = zs[a];
        }
        let signs_ok = support.iter().all(|&i| cand[i].signum() == z[i].signum());
        let hc = h * &cand;
        let zeros_ok = (0..k)
            .filter(|j| cand[*j] == 0.0)
            .all(|j| (q[j] + hc[j]).abs() <= tol[j] * (1.0 + 1e-12) + 1e-15);
        if signs_ok && zeros_ok {
            return cand;
        }
    }
    z
}

pub fn solve_dual(prob: &BalancingProblem, cfg: &SolverConfig) -> DualSolution {
    let rows = prob.rows();
    let k = prob.ncols();
    let mut warnings = Vec::new();

    // Columns constant within the mask: keep one (the intercept when there
    // is one), drop the rest, otherwise lambda is unidentified along a ray.
    let mut kept = Vec::with_capacity(k);
    let mut dropped = Vec::new();
    let mut constant_kept = prob
        .constant_column
        .filter(|&c| column_is_constant(prob, &rows, c));
    for j in 0..k {
        if column_is_constant(prob, &rows, j) {
            if constant_kept.is_none() {
                constant_kept = Some(j);
            }
            if constant_kept != Some(j) {
                dropped.push(j);
                warnings.push(format!(
                    "column `{}` is constant within the weighted group and was dropped",
                    prob.column_names[j]
                ));
                continue;
            }
        }
        kept.push(j);
    }

    let scales: Vec<f64> = kept
        .iter()
        .map(|&j| {
            rows.iter()
                .map(|&i| prob.design[(i, j)].abs())
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut a = DMatrix::zeros(rows.len(), kept.len());
    for (c, (&j, &s)) in kept.iter().zip(&scales).enumerate() {
        for (r, &i) in rows.iter().enumerate() {
            a[(r, c)] = prob.design[(i, j)] / s;
        }
    }
    let t = DVector::from_iterator(kept.len(), kept.iter().zip(&scales).map(|(&j, s)| prob.target[j] / s));
    let tol = DVector::from_iterator(
        kept.len(),
        kept.iter().zip(&scales).map(|(&j, s)| prob.tolerances[j] / s),
    );
    let sc = Scaled {
        penalty: &prob.penalty,
        a,
        t,
        tol,
        scales,
        kept,
    };

    let (lam_scaled, iterations, mut status) = if cfg.acceleration {
        proximal_newton(&sc, prob, cfg)
    } else {
        accelerated_gradient(&sc, prob, cfg)
    };

    let mut lambda = vec![0.0; k];
    for (c, &j) in sc.kept.iter().enumerate() {
        lambda[j] = lam_scaled[c] / sc.scales[c];
    }
    let eta = &sc.a * &lam_scaled;
    let weights: Vec<f64> = eta.iter().map(|&e| prob.penalty.rho_prime(e)).collect();
    let (gap, max_violation, _) = assess(&sc, prob, &lam_scaled, &weights);

    if status == SolveStatus::Converged && !dropped.is_empty() && max_violation > cfg.feas_tol {
        warnings.push(format!(
            "dropped columns leave a violation of {max_violation:.3e}"
        ));
        status = SolveStatus::InfeasibleSuspected;
    }
    if prob.penalty.allows_negative() && weights.iter().any(|&w| w < 0.0) {
        warnings.push(format!(
            "{} negative weights under the {} penalty",
            weights.iter().filter(|&&w| w < 0.0).count(),
            prob.penalty.name()
        ));
    }
    if status == SolveStatus::InfeasibleSuspected {
        let r = prob.residual(&weights);
        let mut worst: Vec<(usize, f64)> = (0..k).map(|j| (j, r[j].abs() - prob.tolerances[j])).collect();
        worst.sort_by(|x, y| y.1.total_cmp(&x.1));
        let names: Vec<String> = worst
            .iter()
            .take(3)
            .filter(|(_, v)| *v > 0.0)
            .map(|(j, v)| format!("{} ({v:.3e})", prob.column_names[*j]))
            .collect();
        warnings.push(format!("most violated constraints: {}", names.join(", ")));
    }

    DualSolution {
        lambda,
        rows,
        weights,
        iterations,
        duality_gap: gap,
        max_violation,
        status,
        dropped_columns: dropped.iter().map(|&j| prob.column_names[j].clone()).collect(),
        warnings,
    }
}

fn column_is_constant(prob: &BalancingProblem, rows: &[usize], j: usize) -> bool {
    let first = prob.design[(rows[0], j)];
    let amax = rows.iter().map(|&i| prob.design[(i, j)].abs()).fold(0.0, f64::max);
    rows.iter()
        .all(|&i| (prob.design[(i, j)] - first).abs() <= 1e-12 * amax.max(1.0))
}

/// Duality gap, maximum violation over all original columns, and whether
/// every convergence criterion holds.
fn assess(sc: &Scaled, prob: &BalancingProblem, lam: &DVector<f64>, weights: &[f64]) -> (f64, f64, bool) {
    let r = prob.residual(weights);
    let max_violation = (0..prob.ncols())
        .map(|j| (r[j].abs() - prob.tolerances[j]).max(0.0))
        .fold(0.0, f64::max);
    let gap: f64 = sc
        .kept
        .iter()
        .enumerate()
        .map(|(c, &j)| {
            let l = lam[c] / sc.scales[c];
            l * r[j] + prob.tolerances[j] * l.abs()
        })
        .sum();
    (gap, max_violation, true)
}

fn criteria_met(sc: &Scaled, prob: &BalancingProblem, lam: &DVector<f64>, ev: &Eval, cfg: &SolverConfig) -> bool {
    if sc.stationarity(lam, &ev.grad) > cfg.feas_tol {
        return false;
    }
    let weights: Vec<f64> = ev.eta.iter().map(|&e| prob.penalty.rho_prime(e)).collect();
    let r = prob.residual(&weights);
    let feasible = sc.kept.iter().all(|&j| {
        r[j].abs() - prob.tolerances[j] <= cfg.feas_tol * prob.target[j].abs().max(1.0)
    });
    if !feasible {
        return false;
    }
    let (gap, _, _) = assess(sc, prob, lam, &weights);
    let primal = primal_objective(prob, &weights);
    gap.abs() <= cfg.gap_tol * (primal.abs() + 1.0)
}

fn proximal_newton(sc: &Scaled, prob: &BalancingProblem, cfg: &SolverConfig) -> (DVector<f64>, usize, SolveStatus) {
    let k = sc.kept.len();
    let mut lam = DVector::zeros(k);
    let mut stalled = 0;
    // One extra Newton step once the criteria hold, which costs little
    // and usually pushes the residuals down to rounding level.
    let mut polished: Option<DVector<f64>> = None;
    for iter in 0..cfg.max_iter {
        let ev = sc.eval(&lam);
        let met = criteria_met(sc, prob, &lam, &ev, cfg);
        if let Some(prev) = polished.take() {
            let best = if met { lam } else { prev };
            return (best, iter, SolveStatus::Converged);
        }
        if met {
            polished = Some(lam.clone());
        }
        if lam.amax() > LAMBDA_CAP {
            return (lam, iter, SolveStatus::InfeasibleSuspected);
        }
        let h = sc.hessian(&ev.eta);
        let q = &ev.grad - &h * &lam;
        let z = l1_quadratic(&h, &q, &sc.tol, &lam);
        let d = &z - &lam;
        let f0 = ev.value + sc.l1(&lam);
        let decrease = ev.grad.dot(&d) + sc.l1(&z) - sc.l1(&lam);
        if !(decrease < 0.0) || d.amax() <= 1e-15 * (1.0 + lam.amax()) {
            // No descent left at working precision.
            stalled += 1;
            if stalled > 2 {
                let status = if criteria_met(sc, prob, &lam, &ev, &relaxed(cfg)) {
                    SolveStatus::Converged
                } else {
                    SolveStatus::MaxIter
                };
                return (lam, iter, status);
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        if -decrease <= 1e3 * f64::EPSILON * (1.0 + f0.abs()) {
            // The predicted decrease is below the rounding level of the
            // objective, so judge the full step by stationarity instead.
            let cand = &lam + &d;
            let ec = sc.eval(&cand);
            if sc.stationarity(&cand, &ec.grad) < sc.stationarity(&lam, &ev.grad) {
                lam = cand;
                accepted = true;
            }
        } else {
            for _ in 0..60 {
                let cand = &lam + alpha * &d;
                if cand == lam {
                    break;
                }
                let fc = sc.objective(&cand);
                if fc <= f0 + 1e-4 * alpha * decrease {
                    lam = cand;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if !accepted {
            stalled += 1;
            if stalled > 2 {
                let ev = sc.eval(&lam);
                let status = if criteria_met(sc, prob, &lam, &ev, &relaxed(cfg)) {
                    SolveStatus::Converged
                } else if lam.amax() > 0.1 * LAMBDA_CAP {
                    SolveStatus::InfeasibleSuspected
                } else {
                    SolveStatus::MaxIter
                };
                return (lam, iter, status);
            }
        } else {
            stalled = 0;
        }
    }
    let ev = sc.eval(&lam);
    let status = if criteria_met(sc, prob, &lam, &ev, cfg) {
        SolveStatus::Converged
    } else if lam.amax() > 0.1 * LAMBDA_CAP {
        SolveStatus::InfeasibleSuspected
    } else {
        SolveStatus::MaxIter
    };
    (lam, cfg.max_iter, status)
}

/// Tolerances loosened by a small factor for the floating-point floor.
fn relaxed(cfg: &SolverConfig) -> SolverConfig {
    SolverConfig {
        gap_tol: cfg.gap_tol * 10.0,
        feas_tol: cfg.feas_tol * 10.0,
        ..*cfg
    }
}

fn accelerated_gradient(sc: &Scaled, prob: &BalancingProblem, cfg: &SolverConfig) -> (DVector<f64>, usize, SolveStatus) {
    let k = sc.kept.len();
    let mut lam = DVector::zeros(k);
    let mut y = lam.clone();
    let mut tk = 1.0f64;
    let mut step = cfg.step_init.max(1e-12);
    let prox = |v: &DVector<f64>, s: f64| DVector::from_iterator(k, v.iter().zip(sc.tol.iter()).map(|(x, t)| soft(*x, s * t)));
    for iter in 0..cfg.max_iter {
        if iter % 10 == 0 {
            let ev = sc.eval(&lam);
            if criteria_met(sc, prob, &lam, &ev, cfg) {
                return (lam, iter, SolveStatus::Converged);
            }
            if lam.amax() > LAMBDA_CAP {
                return (lam, iter, SolveStatus::InfeasibleSuspected);
            }
        }
        let ey = sc.eval(&y);
        let mut next;
        loop {
            next = prox(&(&y - step * &ey.grad), step);
            let diff = &next - &y;
            let fn_ = sc.eval(&next).value;
            let model = ey.value + ey.grad.dot(&diff) + diff.norm_squared() / (2.0 * step);
            if fn_ <= model + 1e-12 * model.abs() || step < 1e-20 {
                break;
            }
            step *= 0.5;
        }
        // Restart momentum when the objective goes up.
        if sc.objective(&next) > sc.objective(&lam) {
            tk = 1.0;
            y = lam.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        y = &next + ((tk - 1.0) / t_next) * (&next - &lam);
        lam = next;
        tk = t_next;
    }
    let ev = sc.eval(&lam);
    let status = if criteria_met(sc, prob, &lam, &ev, cfg) {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIter
    };
    (lam, cfg.max_iter, status)
}
