//! Outcome nuisance regressions and the point estimators of the four mean
//! potential outcomes and the effects built from them.

use serde::{Deserialize, Serialize};

use crate::basis::DesignMatrix;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, ols};
use crate::weights::{Orientation, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// `E[Y(1, M(0))]`.
    Theta10,
    /// `E[Y(0, M(1))]`.
    Theta01,
    Theta1,
    Theta0,
    Nde0,
    Nde1,
    Nie0,
    Nie1,
    Ate,
}

impl Estimand {
    pub const ALL: [Estimand; 9] = [
        Estimand::Theta10,
        Estimand::Theta01,
        Estimand::Theta1,
        Estimand::Theta0,
        Estimand::Nde0,
        Estimand::Nde1,
        Estimand::Nie0,
        Estimand::Nie1,
        Estimand::Ate,
    ];

    pub const EFFECTS: [Estimand; 5] = [
        Estimand::Nde0,
        Estimand::Nde1,
        Estimand::Nie0,
        Estimand::Nie1,
        Estimand::Ate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimand::Theta10 => "theta_10",
            Estimand::Theta01 => "theta_01",
            Estimand::Theta1 => "theta_1",
            Estimand::Theta0 => "theta_0",
            Estimand::Nde0 => "NDE(0)",
            Estimand::Nde1 => "NDE(1)",
            Estimand::Nie0 => "NIE(0)",
            Estimand::Nie1 => "NIE(1)",
            Estimand::Ate => "ATE",
        }
    }

    /// `(plus, minus)` mean outcomes for an effect; `None` for a level.
    pub fn contrast(self) -> Option<(Estimand, Estimand)> {
        use Estimand::*;
        match self {
            Nde0 => Some((Theta10, Theta0)),
            Nde1 => Some((Theta1, Theta01)),
            Nie0 => Some((Theta01, Theta0)),
            Nie1 => Some((Theta1, Theta10)),
            Ate => Some((Theta1, Theta0)),
            _ => None,
        }
    }
}

impl std::fmt::Display for Estimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase().replace(['(', ')', '_', ' '], "");
        Estimand::ALL
            .into_iter()
            .find(|e| e.name().to_ascii_lowercase().replace(['(', ')', '_', ' '], "") == k)
            .ok_or_else(|| Error::Config(format!("unknown estimand `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    EifType,
    IpwType,
    RegressionImputation,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::EifType => "eif-type",
            Family::IpwType => "ipw-type",
            Family::RegressionImputation => "regression-imputation",
        }
    }
}

/// Fitted outcome regressions, evaluated on every row.
#[derive(Debug, Clone, Serialize)]
pub struct NuisanceFit {
    /// `E[Y | M, X, D = 1]`.
    pub mu1: Vec<f64>,
    pub mu0: Vec<f64>,
    /// `mu1` projected on `X` among controls.
    pub eta10: Vec<f64>,
    /// `mu0` projected on `X` among treated.
    pub eta01: Vec<f64>,
    /// `E[Y | X, D = d]`.
    pub m1: Vec<f64>,
    pub m0: Vec<f64>,
    pub coef_mu1: Vec<f64>,
    pub coef_mu0: Vec<f64>,
    pub coef_eta10: Vec<f64>,
    pub coef_eta01: Vec<f64>,
    pub coef_m1: Vec<f64>,
    pub coef_m0: Vec<f64>,
    pub warnings: Vec<String>,
}

/// OLS nuisances: `mu_d` regresses `Y` on `outcome_mx` within group `d`,
/// `eta` regresses the fitted `mu` on `outcome_x` within the other group,
/// `m_d` regresses `Y` on `outcome_x` within group `d`.
pub fn fit_nuisances(data: &Dataset, outcome_mx: &DesignMatrix, outcome_x: &DesignMatrix) -> Result<NuisanceFit> {
    let n = data.n();
    if outcome_mx.nrows() != n || outcome_x.nrows() != n {
        return Err(Error::Dimension("outcome bases must have one row per observation".into()));
    }
    let b = outcome_mx.ensure_constant();
    let c = outcome_x.ensure_constant();
    let treated: Vec<usize> = (0..n).filter(|&i| data.is_treated(i)).collect();
    let controls: Vec<usize> = (0..n).filter(|&i| !data.is_treated(i)).collect();
    let mut warnings = Vec::new();
    let mut fit = |x: &DesignMatrix, y: &[f64], rows: &[usize], label: &str| {
        let (coef, ridged) = ols(&x.values, y, rows, 1e-10);
        if ridged {
            warnings.push(format!(
                "{label}: design is rank deficient on {} rows; ridge applied",
                rows.len()
            ));
        }
        let fitted: Vec<f64> = (0..n).map(|i| x.values.row(i).transpose().dot(&coef)).collect();
        (fitted, coef.iter().copied().collect::<Vec<f64>>())
    };
    let y = data.y();
    let (mu1, coef_mu1) = fit(&b, y, &treated, "mu1");
    let (eta10, coef_eta10) = fit(&c, &mu1, &controls, "eta10");
    let (mu0, coef_mu0) = fit(&b, y, &controls, "mu0");
    let (eta01, coef_eta01) = fit(&c, &mu0, &treated, "eta01");
    let (m1, coef_m1) = fit(&c, y, &treated, "m1");
    let (m0, coef_m0) = fit(&c, y, &controls, "m0");
    Ok(NuisanceFit {
        mu1,
        mu0,
        eta10,
        eta01,
        m1,
        m0,
        coef_mu1,
        coef_mu0,
        coef_eta10,
        coef_eta01,
        coef_m1,
        coef_m0,
        warnings,
    })
}

/// The four mean potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thetas {
    pub theta10: f64,
    pub theta01: f64,
    pub theta1: f64,
    pub theta0: f64,
}

impl Thetas {
    pub fn get(&self, e: Estimand) -> f64 {
        match e {
            Estimand::Theta10 => self.theta10,
            Estimand::Theta01 => self.theta01,
            Estimand::Theta1 => self.theta1,
            Estimand::Theta0 => self.theta0,
            _ => {
                let (a, b) = e.contrast().unwrap();
                self.get(a) - self.get(b)
            }
        }
    }

    pub fn all(&self) -> Vec<(Estimand, f64)> {
        Estimand::ALL.iter().map(|&e| (e, self.get(e))).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    compensated_sum(v.iter().copied()) / v.len() as f64
}

fn wsum(w: &[f64], v: &[f64]) -> f64 {
    compensated_sum(w.iter().zip(v).map(|(a, b)| a * b))
}

/// `sum w2 (Y - mu) + sum w1 (mu - eta) + mean(eta)`. The weight vectors
/// are zero outside their groups.
pub fn eif_cross_world(y: &[f64], w1: &[f64], w2: &[f64], mu: &[f64], eta: &[f64]) -> f64 {
    let r2: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let r1: Vec<f64> = mu.iter().zip(eta).map(|(a, b)| a - b).collect();
    wsum(w2, &r2) + wsum(w1, &r1) + mean(eta)
}

/// `sum w (Y - m) + mean(m)`.
pub fn eif_level(y: &[f64], w: &[f64], m: &[f64]) -> f64 {
    let r: Vec<f64> = y.iter().zip(m).map(|(a, b)| a - b).collect();
    wsum(w, &r) + mean(m)
}

fn check_pair(standard: &WeightSet, exchanged: &WeightSet) -> Result<()> {
    if standard.orientation != Orientation::Standard || exchanged.orientation != Orientation::Exchanged {
        return Err(Error::Config(
            "expected one standard and one exchanged weight set".into(),
        ));
    }
    Ok(())
}

/// Efficient-influence-function type estimates. Mean outcomes under
/// control use the standard weights and those under treatment the
/// exchanged weights.
pub fn estimate_eif_type(
    data: &Dataset,
    standard: &WeightSet,
    exchanged: &WeightSet,
    nuis: &NuisanceFit,
) -> Result<Thetas> {
    check_pair(standard, exchanged)?;
    let y = data.y();
    Ok(Thetas {
        theta10: eif_cross_world(y, &standard.w1, &standard.w2, &nuis.mu1, &nuis.eta10),
        theta0: eif_level(y, &standard.w1, &nuis.m0),
        theta1: eif_level(y, &exchanged.w1, &nuis.m1),
        theta01: eif_cross_world(y, &exchanged.w1, &exchanged.w2, &nuis.mu0, &nuis.eta01),
    })
}

pub fn estimate_ipw_type(data: &Dataset, standard: &WeightSet, exchanged: &WeightSet) -> Result<Thetas> {
    check_pair(standard, exchanged)?;
    let y = data.y();
    Ok(Thetas {
        theta10: wsum(&standard.w2, y),
        theta0: wsum(&standard.w1, y),
        theta1: wsum(&exchanged.w1, y),
        theta01: wsum(&exchanged.w2, y),
    })
}

pub fn estimate_regression_imputation(nuis: &NuisanceFit) -> Thetas {
    Thetas {
        theta10: mean(&nuis.eta10),
        theta01: mean(&nuis.eta01),
        theta1: mean(&nuis.m1),
        theta0: mean(&nuis.m0),
    }
}
