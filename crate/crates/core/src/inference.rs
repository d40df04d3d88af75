//! Plug-in influence-function variances, normal confidence intervals and
//! p-values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_eif_type, estimate_ipw_type, estimate_regression_imputation, Estimand, Family, NuisanceFit, Thetas,
};
use crate::linalg::compensated_sum;
use crate::weights::WeightSet;

/// Per-row influence contributions for one estimand.
#[derive(Debug, Clone, Serialize)]
pub struct InfluenceVector {
    pub estimand: Estimand,
    pub family: Family,
    pub values: Vec<f64>,
}

impl InfluenceVector {
    pub fn mean(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) / self.values.len() as f64
    }
}

/// Uncentred influence terms on the `n * w` scale.
fn uncentred(data: &Dataset, standard: &WeightSet, exchanged: &WeightSet, nuis: &NuisanceFit, e: Estimand) -> Vec<f64> {
    let n = data.n();
    let nf = n as f64;
    let y = data.y();
    (0..n)
        .map(|i| match e {
            Estimand::Theta10 => {
                nf * standard.w2[i] * (y[i] - nuis.mu1[i]) + nf * standard.w1[i] * (nuis.mu1[i] - nuis.eta10[i]) + nuis.eta10[i]
            }
            Estimand::Theta0 => nf * standard.w1[i] * (y[i] - nuis.m0[i]) + nuis.m0[i],
            Estimand::Theta1 => nf * exchanged.w1[i] * (y[i] - nuis.m1[i]) + nuis.m1[i],
            Estimand::Theta01 => {
                nf * exchanged.w2[i] * (y[i] - nuis.mu0[i])
                    + nf * exchanged.w1[i] * (nuis.mu0[i] - nuis.eta01[i])
                    + nuis.eta01[i]
            }
            _ => unreachable!("effects are differences of levels"),
        })
        .collect()
}

/// Influence contributions for `e`, centred at the family's point estimates
/// in `thetas`. Weight vectors are zero outside their groups, which plays
/// the role of the treatment indicators.
pub fn influence(
    data: &Dataset,
    standard: &WeightSet,
    exchanged: &WeightSet,
    nuis: &NuisanceFit,
    thetas: &Thetas,
    family: Family,
    e: Estimand,
) -> InfluenceVector {
    let values = match e.contrast() {
        None => {
            let t = thetas.get(e);
            uncentred(data, standard, exchanged, nuis, e).into_iter().map(|v| v - t).collect()
        }
        Some((a, b)) => {
            let pa = influence(data, standard, exchanged, nuis, thetas, family, a);
            let pb = influence(data, standard, exchanged, nuis, thetas, family, b);
            pa.values.iter().zip(&pb.values).map(|(x, y)| x - y).collect()
        }
    };
    InfluenceVector {
        estimand: e,
        family,
        values,
    }
}

/// `V = mean(phi^2)`, the per-observation variance; the estimator's own
/// variance is `V / n`.
pub fn variance_theta(phi: &InfluenceVector) -> f64 {
    compensated_sum(phi.values.iter().map(|v| v * v)) / phi.values.len() as f64
}

/// Variance of `a - b` from differenced contributions, already divided by `n`.
pub fn variance_effect(a: &InfluenceVector, b: &InfluenceVector) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::Dimension(format!(
            "influence vectors of length {} and {}",
            a.values.len(),
            b.values.len()
        )));
    }
    let n = a.values.len() as f64;
    let v = compensated_sum(a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y))) / n;
    Ok(v / n)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimand: Estimand,
    pub estimate: f64,
    pub variance: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
}

impl EstimateRow {
    pub fn point(estimand: Estimand, estimate: f64) -> Self {
        Self {
            estimand,
            estimate,
            variance: None,
            se: None,
            ci_low: None,
            ci_high: None,
            p_value: None,
        }
    }

    /// Normal-theory interval and two-sided p-value against zero.
    pub fn with_variance(estimand: Estimand, estimate: f64, variance: f64, level: f64) -> Self {
        let se = variance.max(0.0).sqrt();
        let (lo, hi) = ci(estimate, se, level);
        Self {
            estimand,
            estimate,
            variance: Some(variance),
            se: Some(se),
            ci_low: Some(lo),
            ci_high: Some(hi),
            p_value: Some(p_value(estimate, se)),
        }
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        Some(self.ci_low? <= truth && truth <= self.ci_high?)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn ci(estimate: f64, se: f64, level: f64) -> (f64, f64) {
    let z = std_normal().inverse_cdf(0.5 + level / 2.0);
    (estimate - z * se, estimate + z * se)
}

pub fn p_value(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        2.0 * (1.0 - std_normal().cdf((estimate / se).abs()))
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub family: Family,
    pub method: String,
    pub level: f64,
    pub n: usize,
    pub rows: Vec<EstimateRow>,
}

impl EstimateReport {
    pub fn get(&self, e: Estimand) -> &EstimateRow {
        self.rows.iter().find(|r| r.estimand == e).expect("every estimand has a row")
    }
}

/// Point estimates of a weighting family with plug-in variances for all
/// nine estimands.
pub fn infer_weighting(
    data: &Dataset,
    standard: &WeightSet,
    exchanged: &WeightSet,
    nuis: &NuisanceFit,
    family: Family,
    method: &str,
    level: f64,
) -> Result<EstimateReport> {
    let thetas = match family {
        Family::EifType => estimate_eif_type(data, standard, exchanged, nuis)?,
        Family::IpwType => estimate_ipw_type(data, standard, exchanged)?,
        Family::RegressionImputation => {
            return Ok(regression_imputation_report(nuis, data.n(), level));
        }
    };
    let n = data.n() as f64;
    let rows = Estimand::ALL
        .iter()
        .map(|&e| {
            let phi = influence(data, standard, exchanged, nuis, &thetas, family, e);
            EstimateRow::with_variance(e, thetas.get(e), variance_theta(&phi) / n, level)
        })
        .collect();
    Ok(EstimateReport {
        family,
        method: method.to_string(),
        level,
        n: data.n(),
        rows,
    })
}

/// Regression imputation carries point estimates only.
pub fn regression_imputation_report(nuis: &NuisanceFit, n: usize, level: f64) -> EstimateReport {
    let th = estimate_regression_imputation(nuis);
    EstimateReport {
        family: Family::RegressionImputation,
        method: "ri".into(),
        level,
        n,
        rows: th.all().into_iter().map(|(e, v)| EstimateRow::point(e, v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisSpec, Scope};
    use crate::estimators::fit_nuisances;
    use crate::weights::Orientation;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn toy(y: Vec<f64>) -> Dataset {
        let x = [0.3, -1.2, 0.8, 1.9, -0.4, 0.1, 1.1, -0.7, 0.5, -0.2];
        let m = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let d = [true, false, true, true, false, false, false, true, false, true];
        Dataset::new(
            y,
            d.to_vec(),
            DMatrix::from_column_slice(10, 1, &m),
            DMatrix::from_column_slice(10, 1, &x),
            vec!["m".into()],
            vec!["x".into()],
        )
        .unwrap()
    }

    fn fitted(data: &Dataset) -> NuisanceFit {
        let b = build_basis(data, &BasisSpec::linear(&["x", "m"]), Scope::CovariatesAndMediators).unwrap();
        let c = build_basis(data, &BasisSpec::linear(&["x"]), Scope::CovariatesOnly).unwrap();
        fit_nuisances(data, &b, &c).unwrap()
    }

    #[test]
    fn constant_outcome_has_zero_variance() {
        let data = toy(vec![2.0; 10]);
        let nf = fitted(&data);
        let s = WeightSet::uniform(&data, Orientation::Standard);
        let e = WeightSet::uniform(&data, Orientation::Exchanged);
        let rep = infer_weighting(&data, &s, &e, &nf, Family::EifType, "uniform", 0.95).unwrap();
        for r in &rep.rows {
            assert!(r.variance.unwrap().abs() < 1e-20);
        }
    }

    #[test]
    fn squared_sum_formula_by_hand() {
        let y = vec![1.2, 0.3, 2.2, 3.1, -0.5, 0.9, 1.7, -1.0, 0.2, 0.8];
        let data = toy(y.clone());
        let nf = fitted(&data);
        let raw: Vec<f64> = (0..10).map(|i| 1.0 + 0.2 * i as f64).collect();
        let s = WeightSet::from_raw(&data, Orientation::Standard, &raw, &raw).unwrap();
        let e = WeightSet::from_raw(&data, Orientation::Exchanged, &raw, &raw).unwrap();
        let th = estimate_eif_type(&data, &s, &e, &nf).unwrap();
        let phi = influence(&data, &s, &e, &nf, &th, Family::EifType, Estimand::Theta10);
        let mut acc = 0.0;
        for i in 0..10 {
            let d = data.d(i);
            let t = d * 10.0 * s.w2[i] * (y[i] - nf.mu1[i])
                + (1.0 - d) * 10.0 * s.w1[i] * (nf.mu1[i] - nf.eta10[i])
                + nf.eta10[i]
                - th.theta10;
            acc += t * t;
        }
        assert!((variance_theta(&phi) - acc / 10.0).abs() < 1e-12);
        assert!(phi.mean().abs() < 1e-10);
    }

    #[test]
    fn identical_influences_have_zero_effect_variance() {
        let phi = InfluenceVector {
            estimand: Estimand::Theta1,
            family: Family::EifType,
            values: vec![0.3, -0.1, 0.7, -0.9],
        };
        assert_eq!(variance_effect(&phi, &phi).unwrap(), 0.0);
        let short = InfluenceVector {
            values: vec![1.0],
            ..phi.clone()
        };
        assert!(variance_effect(&phi, &short).is_err());
    }

    #[test]
    fn independent_influences_add_variances() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mk = |v: Vec<f64>| InfluenceVector {
            estimand: Estimand::Theta1,
            family: Family::EifType,
            values: v,
        };
        let v = variance_effect(&mk(a), &mk(b)).unwrap() * n as f64;
        // Var of the sample variance of N(0, 13) at n = 1e5 is about 13 * sqrt(2/n).
        assert!((v - 13.0).abs() < 4.0 * 13.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn interval_and_p_value_arithmetic() {
        // se 0.0425 and estimate -0.099.
        let row = EstimateRow::with_variance(Estimand::Nde0, -0.099, 0.001803, 0.95);
        assert!((row.ci_low.unwrap() + 0.182).abs() < 2e-3);
        assert!((row.ci_high.unwrap() + 0.016).abs() < 2e-3);
        assert!((row.p_value.unwrap() - 0.0198).abs() < 1e-3);
        assert_eq!(p_value(0.0, 0.0), 1.0);
    }
}
