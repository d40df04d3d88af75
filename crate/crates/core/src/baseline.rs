//! Comparator weights built from propensity scores: plain inverse-propensity
//! (EIF) weights from logistic fits, trimmed EIF weights, two-step CBPS and
//! known propensity scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::DesignMatrix;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::weights::{Orientation, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityModel {
    /// `pi_1(X) = P(D = 1 | X)`.
    PiOnX,
    /// `xi_1(M, X) = P(D = 1 | M, X)`.
    XiOnMX,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropensityFit {
    pub coef: Vec<f64>,
    /// Fitted `P(D = 1 | .)` per row.
    pub fitted: Vec<f64>,
    pub model: PropensityModel,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    /// GMM objective at the solution; zero for maximum likelihood fits.
    pub objective: f64,
}

impl PropensityFit {
    pub fn with_model(mut self, model: PropensityModel) -> Self {
        self.model = model;
        self
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn log1pexp(t: f64) -> f64 {
    if t > 35.0 {
        t
    } else if t < -35.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

fn col_scales(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| x.column(j).amax().max(f64::MIN_POSITIVE))
        .collect()
}

fn scaled(x: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut a = x.clone();
    for (j, &sj) in s.iter().enumerate() {
        a.column_mut(j).unscale_mut(sj);
    }
    a
}

/// Penalised log-likelihood `sum d*eta - log(1+e^eta) - ridge*n*|beta|^2/2`.
fn loglik(a: &DMatrix<f64>, d: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = a * beta;
    let n = d.len() as f64;
    eta.iter().zip(d).map(|(e, y)| y * e - log1pexp(*e)).sum::<f64>() - 0.5 * ridge * n * beta.norm_squared()
}

fn irls(a: &DMatrix<f64>, d: &[f64], ridge: f64, max_iter: usize) -> (DVector<f64>, bool, usize) {
    let k = a.ncols();
    let n = d.len() as f64;
    let mut beta = DVector::zeros(k);
    for it in 0..max_iter {
        let eta = a * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(d.len(), d.iter().zip(&p).map(|(y, p)| y - p));
        let score = a.tr_mul(&resid) - ridge * n * &beta;
        if score.amax() < 1e-11 {
            return (beta, true, it);
        }
        let mut wa = a.clone();
        for (i, pi) in p.iter().enumerate() {
            wa.row_mut(i).scale_mut(pi * (1.0 - pi));
        }
        let mut h = a.tr_mul(&wa);
        for j in 0..k {
            h[(j, j)] += ridge * n;
        }
        let (step, _) = solve_spd(&h, &score, 1e-12);
        if step.amax() < 1e-14 * (1.0 + beta.amax()) {
            return (beta + step, true, it + 1);
        }
        let f0 = loglik(a, d, &beta, ridge);
        // Rounding in the log-likelihood must not block the last steps.
        let slack = 1e-13 * (1.0 + f0.abs());
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand = &beta + t * &step;
            if loglik(a, d, &cand, ridge) >= f0 - slack {
                moved = true;
                beta = cand;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return (beta, score.amax() < 1e-8, it);
        }
    }
    (beta, false, max_iter)
}

/// Maximum-likelihood logistic regression of `d` on `design` by IRLS.
/// Separation (fitted values within 1e-12 of 0 or 1, or no convergence)
/// sets the flag and refits with a 1e-8 ridge.
pub fn fit_logistic(design: &DesignMatrix, d: &[bool]) -> Result<PropensityFit> {
    fit_logistic_matrix(&design.values, d)
}

pub fn fit_logistic_matrix(x: &DMatrix<f64>, d: &[bool]) -> Result<PropensityFit> {
    if x.nrows() != d.len() {
        return Err(Error::Dimension("design and treatment lengths differ".into()));
    }
    if d.iter().all(|&v| v) || d.iter().all(|&v| !v) {
        return Err(Error::EmptyGroup(u8::from(!d[0])));
    }
    let s = col_scales(x);
    let a = scaled(x, &s);
    let dv: Vec<f64> = d.iter().map(|&v| f64::from(u8::from(v))).collect();
    let (mut beta, mut converged, mut iterations) = irls(&a, &dv, 0.0, 50);
    let extreme = |beta: &DVector<f64>| {
        (&a * beta).iter().any(|&e| {
            let p = sigmoid(e);
            p < 1e-12 || p > 1.0 - 1e-12
        })
    };
    let separation = !converged || extreme(&beta);
    if separation {
        let (b, c, it) = irls(&a, &dv, 1e-8, 200);
        beta = b;
        converged = c;
        iterations += it;
    }
    let fitted: Vec<f64> = (&a * &beta)
        .iter()
        .map(|&e| sigmoid(e).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
        .collect();
    let coef = beta.iter().zip(&s).map(|(b, s)| b / s).collect();
    Ok(PropensityFit {
        coef,
        fitted,
        model: PropensityModel::PiOnX,
        converged,
        separation,
        iterations,
        objective: 0.0,
    })
}

/// Trimming interval for propensity scores.
pub const DEFAULT_TRIM: (f64, f64) = (0.01, 0.99);

/// Inverse-propensity weights from `pi_1(X)` and `xi_1(M, X)` per row.
///
/// Standard orientation: `1/pi_0` on controls and `xi_0/(pi_0 xi_1)` on
/// treated. Exchanged: `1/pi_1` on treated and `xi_1/(pi_1 xi_0)` on
/// controls. With trimming, `pi`, each `xi` and the product in the
/// denominator are clamped to the interval first.
pub fn eif_weights_from_probs(
    data: &Dataset,
    pi1: &[f64],
    xi1: &[f64],
    trim: Option<(f64, f64)>,
    orientation: Orientation,
) -> Result<WeightSet> {
    let n = data.n();
    if pi1.len() != n || xi1.len() != n {
        return Err(Error::Dimension("propensity vectors must have one entry per row".into()));
    }
    let clamp = |p: f64| match trim {
        Some((lo, hi)) => p.clamp(lo, hi),
        None => p,
    };
    let floor = |p: f64| match trim {
        Some((lo, _)) => p.max(lo),
        None => p,
    };
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let ref_t = orientation.reference_is_treated();
    for i in 0..n {
        let p1 = clamp(pi1[i]);
        let x1 = clamp(xi1[i]);
        // Probabilities of belonging to the reference group and xi of the
        // reference and step-2 groups.
        let (p_ref, xi_ref, xi_step2) = if ref_t {
            (p1, x1, clamp(1.0 - xi1[i]))
        } else {
            (clamp(1.0 - pi1[i]), clamp(1.0 - xi1[i]), x1)
        };
        if data.is_treated(i) == ref_t {
            w1[i] = 1.0 / p_ref;
        } else {
            w2[i] = xi_ref / floor(p_ref * xi_step2);
        }
    }
    if let Some(i) = w1.iter().chain(&w2).position(|w| !w.is_finite()) {
        return Err(Error::Range(format!(
            "infinite inverse-propensity weight at row {}; consider trimming",
            i % n
        )));
    }
    WeightSet::from_raw(data, orientation, &w1, &w2)
}

pub fn eif_weights(
    pi_fit: &PropensityFit,
    xi_fit: &PropensityFit,
    data: &Dataset,
    trim: Option<(f64, f64)>,
    orientation: Orientation,
) -> Result<WeightSet> {
    eif_weights_from_probs(data, &pi_fit.fitted, &xi_fit.fitted, trim, orientation)
}

/// Weights from known propensity scores.
pub fn true_ps_weights(
    data: &Dataset,
    pi_true: &[f64],
    xi_true: &[f64],
    orientation: Orientation,
) -> Result<WeightSet> {
    eif_weights_from_probs(data, pi_true, xi_true, None, orientation)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbpsConfig {
    /// Include the logistic score moments (over-identified GMM).
    pub include_score: bool,
    pub max_iter: usize,
}

impl Default for CbpsConfig {
    fn default() -> Self {
        Self {
            include_score: true,
            max_iter: 500,
        }
    }
}

/// Moment vector and Jacobian, both averaged over rows.
type Moments<'a> = dyn Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + 'a;

/// Levenberg-Marquardt on `|g(theta)|^2 / 2`.
fn gmm_lm(moments: &Moments, start: DVector<f64>, max_iter: usize) -> (DVector<f64>, f64, bool, usize) {
    let mut theta = start;
    let (mut g, mut j) = moments(&theta);
    let mut obj = 0.5 * g.norm_squared();
    let mut mu = 1e-3;
    for it in 0..max_iter {
        let grad = j.tr_mul(&g);
        if grad.amax() < 1e-12 || obj < 1e-24 {
            return (theta, obj, true, it);
        }
        let jtj = j.tr_mul(&j);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let (step, _) = solve_spd(&a, &(-&grad), 1e-12);
            let cand = &theta + &step;
            let (gc, jc) = moments(&cand);
            let oc = 0.5 * gc.norm_squared();
            if oc.is_finite() && oc < obj {
                let rel = (obj - oc) / obj.max(1e-300);
                theta = cand;
                g = gc;
                j = jc;
                obj = oc;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-14 {
                    return (theta, obj, true, it + 1);
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            // No further decrease at working precision.
            let grad = j.tr_mul(&g);
            let converged = grad.amax() < 1e-8 * (1.0 + obj.sqrt());
            return (theta, obj, converged, it);
        }
    }
    (theta, obj, false, max_iter)
}

/// Two-step covariate balancing propensity scores with identity weighting,
/// started from the logistic maximum-likelihood fits.
pub fn fit_cbps(
    data: &Dataset,
    c_basis: &DesignMatrix,
    b_basis: &DesignMatrix,
    cfg: &CbpsConfig,
) -> Result<(PropensityFit, PropensityFit)> {
    let c = c_basis.ensure_constant().values;
    let b = b_basis.ensure_constant().values;
    let n = data.n();
    let nf = n as f64;
    let d: Vec<f64> = (0..n).map(|i| data.d(i)).collect();
    let dbool = data.treated().to_vec();

    // Step 1: beta on c.
    let sc = col_scales(&c);
    let ca = scaled(&c, &sc);
    let mle1 = fit_logistic_matrix(&c, &dbool)?;
    let start1 = DVector::from_iterator(sc.len(), mle1.coef.iter().zip(&sc).map(|(b, s)| b * s));
    let kc = ca.ncols();
    let include_score = cfg.include_score;
    let m1 = move |beta: &DVector<f64>| {
        let eta = &ca * beta;
        let rows = if include_score { 2 * kc } else { kc };
        let off = rows - kc;
        let mut g = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, kc);
        for i in 0..n {
            let e = eta[i];
            let p1 = sigmoid(e);
            let xi = ca.row(i);
            if include_score {
                for a in 0..kc {
                    g[a] += (d[i] - p1) * xi[a];
                    for bb in 0..kc {
                        jac[(a, bb)] -= p1 * (1.0 - p1) * xi[a] * xi[bb];
                    }
                }
            }
            // (1 - D) / pi_0 - 1 with 1/pi_0 = 1 + e^eta.
            let ee = e.min(700.0).exp();
            let r = (1.0 - d[i]) * (1.0 + ee) - 1.0;
            for a in 0..kc {
                g[off + a] += r * xi[a];
                for bb in 0..kc {
                    jac[(off + a, bb)] += (1.0 - d[i]) * ee * xi[a] * xi[bb];
                }
            }
        }
        (g / nf, jac / nf)
    };
    let (beta, obj1, conv1, it1) = gmm_lm(&m1, start1, cfg.max_iter);
    let ca = scaled(&c, &sc);
    let eta1 = &ca * &beta;
    let pi1: Vec<f64> = eta1.iter().map(|&e| sigmoid(e)).collect();
    let pi_fit = PropensityFit {
        coef: beta.iter().zip(&sc).map(|(b, s)| b / s).collect(),
        fitted: pi1.clone(),
        model: PropensityModel::PiOnX,
        converged: conv1,
        separation: mle1.separation,
        iterations: it1,
        objective: obj1,
    };

    // Step 2: gamma on b, holding pi_0 from step 1.
    let sb = col_scales(&b);
    let ba = scaled(&b, &sb);
    let mle2 = fit_logistic_matrix(&b, &dbool)?;
    let start2 = DVector::from_iterator(sb.len(), mle2.coef.iter().zip(&sb).map(|(g, s)| g * s));
    let kb = ba.ncols();
    let d2: Vec<f64> = (0..n).map(|i| data.d(i)).collect();
    let inv_pi0: Vec<f64> = eta1.iter().map(|&e| 1.0 + e.min(700.0).exp()).collect();
    let m2 = move |gamma: &DVector<f64>| {
        let eta = &ba * gamma;
        let rows = if include_score { 2 * kb } else { kb };
        let off = rows - kb;
        let mut g = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, kb);
        for i in 0..n {
            let e = eta[i];
            let x1 = sigmoid(e);
            let bi = ba.row(i);
            if include_score {
                for a in 0..kb {
                    g[a] += (d2[i] - x1) * bi[a];
                    for bb in 0..kb {
                        jac[(a, bb)] -= x1 * (1.0 - x1) * bi[a] * bi[bb];
                    }
                }
            }
            // D xi_0 / (xi_1 pi_0) - (1 - D) / pi_0 with xi_0 / xi_1 = e^-eta.
            let en = (-e).min(700.0).exp();
            let r = d2[i] * en * inv_pi0[i] - (1.0 - d2[i]) * inv_pi0[i];
            for a in 0..kb {
                g[off + a] += r * bi[a];
                for bb in 0..kb {
                    jac[(off + a, bb)] -= d2[i] * en * inv_pi0[i] * bi[a] * bi[bb];
                }
            }
        }
        (g / nf, jac / nf)
    };
    let (gamma, obj2, conv2, it2) = gmm_lm(&m2, start2, cfg.max_iter);
    let ba = scaled(&b, &sb);
    let xi_fit = PropensityFit {
        coef: gamma.iter().zip(&sb).map(|(g, s)| g / s).collect(),
        fitted: (&ba * &gamma).iter().map(|&e| sigmoid(e)).collect(),
        model: PropensityModel::XiOnMX,
        converged: conv2,
        separation: mle2.separation,
        iterations: it2,
        objective: obj2,
    };
    Ok((pi_fit, xi_fit))
}

/// CBPS weights in either orientation. The exchanged weights come from
/// CBPS fitted with treatment labels flipped.
pub fn cbps_weights(
    data: &Dataset,
    c_basis: &DesignMatrix,
    b_basis: &DesignMatrix,
    cfg: &CbpsConfig,
    orientation: Orientation,
) -> Result<(WeightSet, PropensityFit, PropensityFit)> {
    match orientation {
        Orientation::Standard => {
            let (pi, xi) = fit_cbps(data, c_basis, b_basis, cfg)?;
            let ws = eif_weights(&pi, &xi, data, None, Orientation::Standard)?;
            Ok((ws, pi, xi))
        }
        Orientation::Exchanged => {
            let flipped = data.flipped();
            let (pi, xi) = fit_cbps(&flipped, c_basis, b_basis, cfg)?;
            let ws = eif_weights(&pi, &xi, &flipped, None, Orientation::Standard)?;
            let out = WeightSet {
                orientation: Orientation::Exchanged,
                ..ws
            };
            Ok((out, pi, xi))
        }
    }
}

/// Logistic-fit EIF weights in both orientations.
pub fn logistic_eif_weights(
    data: &Dataset,
    c_basis: &DesignMatrix,
    b_basis: &DesignMatrix,
    trim: Option<(f64, f64)>,
) -> Result<(WeightSet, WeightSet)> {
    let pi = fit_logistic(&c_basis.ensure_constant(), data.treated())?;
    let xi = fit_logistic(&b_basis.ensure_constant(), data.treated())?.with_model(PropensityModel::XiOnMX);
    Ok((
        eif_weights(&pi, &xi, data, trim, Orientation::Standard)?,
        eif_weights(&pi, &xi, data, trim, Orientation::Exchanged)?,
    ))
}
