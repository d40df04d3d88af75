//! Two-step minimal weights.
//!
//! Step 1 reweights the reference group so that its basis means match the
//! full sample. Step 2 reweights the other group so that its `b(M, X)` means
//! match the step-1 reweighted reference group.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::DesignMatrix;
use crate::data::Dataset;
use crate::dual::{solve_dual, BalancingProblem, DualSolution, SolveStatus, SolverConfig};
use crate::error::{Error, Result};
use crate::penalty::Penalty;

/// Which group is reweighted in step 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Controls in step 1, treated in step 2.
    Standard,
    /// Treated in step 1, controls in step 2.
    Exchanged,
}

impl Orientation {
    /// Treatment value of the step-1 group.
    pub fn reference_is_treated(self) -> bool {
        self == Orientation::Exchanged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tolerance {
    /// Same tolerance on every non-constant column.
    Scalar(f64),
    /// One entry per non-constant column, or per column including the constant.
    PerColumn(Vec<f64>),
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Scalar(0.0)
    }
}

impl From<f64> for Tolerance {
    fn from(v: f64) -> Self {
        Tolerance::Scalar(v)
    }
}

impl Tolerance {
    /// Expands to one entry per column of `design`, zero on the constant.
    pub fn resolve(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        let k = design.ncols();
        let cc = design.constant_column();
        let out = match self {
            Tolerance::Scalar(e) => (0..k).map(|j| if Some(j) == cc { 0.0 } else { *e }).collect(),
            Tolerance::PerColumn(v) if v.len() == k => v.clone(),
            Tolerance::PerColumn(v) if v.len() == design.n_nonconstant() => {
                let mut it = v.iter();
                (0..k)
                    .map(|j| if Some(j) == cc { 0.0 } else { *it.next().unwrap() })
                    .collect()
            }
            Tolerance::PerColumn(v) => {
                return Err(Error::Dimension(format!(
                    "{} tolerances for a basis with {k} columns",
                    v.len()
                )))
            }
        };
        if out.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(Error::Config("tolerances must be finite and nonnegative".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoStepConfig {
    pub eps: Tolerance,
    pub delta: Tolerance,
    pub orientation: Orientation,
    /// Append an all-ones column with zero tolerance when a basis lacks one.
    pub append_constant: bool,
    pub solver: SolverConfig,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        Self {
            eps: Tolerance::Scalar(0.0),
            delta: Tolerance::Scalar(0.0),
            orientation: Orientation::Standard,
            append_constant: true,
            solver: SolverConfig::default(),
        }
    }
}

impl TwoStepConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn with_tolerances(eps: impl Into<Tolerance>, delta: impl Into<Tolerance>) -> Self {
        Self {
            eps: eps.into(),
            delta: delta.into(),
            ..Self::default()
        }
    }

    pub fn oriented(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightSet {
    /// Step-1 weights, length `n`, zero outside the reference group.
    pub w1: Vec<f64>,
    /// Step-2 weights, length `n`, zero inside the reference group.
    pub w2: Vec<f64>,
    pub orientation: Orientation,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub step1: Option<DualSolution>,
    pub step2: Option<DualSolution>,
}

impl WeightSet {
    /// Builds a weight set from raw per-row values, normalising each step to
    /// sum to one over its group.
    pub fn from_raw(data: &Dataset, orientation: Orientation, w1: &[f64], w2: &[f64]) -> Result<Self> {
        let n = data.n();
        if w1.len() != n || w2.len() != n {
            return Err(Error::Dimension("weight vectors must have one entry per row".into()));
        }
        let ref_t = orientation.reference_is_treated();
        let norm = |w: &[f64], group_treated: bool| -> Result<Vec<f64>> {
            let mut out = vec![0.0; n];
            let mut s = 0.0;
            for i in 0..n {
                if data.is_treated(i) == group_treated {
                    if !w[i].is_finite() {
                        return Err(Error::Range(format!("non-finite weight at row {i}")));
                    }
                    out[i] = w[i];
                    s += w[i];
                }
            }
            if !(s.is_finite() && s != 0.0) {
                return Err(Error::Range(format!("weights sum to {s}")));
            }
            out.iter_mut().for_each(|v| *v /= s);
            Ok(out)
        };
        Ok(Self {
            w1: norm(w1, ref_t)?,
            w2: norm(w2, !ref_t)?,
            orientation,
            eps: Vec::new(),
            delta: Vec::new(),
            step1: None,
            step2: None,
        })
    }

    /// Uniform weights within each group.
    pub fn uniform(data: &Dataset, orientation: Orientation) -> Self {
        let ones = vec![1.0; data.n()];
        Self::from_raw(data, orientation, &ones, &ones).expect("both groups are non-empty")
    }

    /// Weighted mean of `values` under step-1 weights.
    pub fn step1_mean(&self, values: &[f64]) -> f64 {
        self.w1.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Weighted mean of `values` under step-2 weights.
    pub fn step2_mean(&self, values: &[f64]) -> f64 {
        self.w2.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Writes `row_id,group,step,weight` for every weighted row.
    pub fn write_csv(&self, data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv_to(data, &mut out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_csv_to(&self, data: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "row_id,group,step,weight")?;
        let ref_t = self.orientation.reference_is_treated();
        for (step, w, treated) in [(1, &self.w1, ref_t), (2, &self.w2, !ref_t)] {
            for i in 0..data.n() {
                if data.is_treated(i) == treated {
                    let g = if treated { "treated" } else { "control" };
                    writeln!(out, "{i},{g},{step},{:?}", w[i])?;
                }
            }
        }
        Ok(())
    }
}

fn prepare(design: &DesignMatrix, append: bool) -> DesignMatrix {
    if append {
        design.ensure_constant()
    } else {
        design.clone()
    }
}

fn check_status(step: u8, sol: &DualSolution) -> Result<()> {
    if sol.status == SolveStatus::Converged {
        Ok(())
    } else {
        Err(Error::Solver {
            step,
            status: sol.status,
            max_violation: sol.max_violation,
            gap: sol.duality_gap,
        })
    }
}

/// Step 1 alone: weights on the reference group balancing `c` to the full sample.
pub fn fit_step1(
    data: &Dataset,
    c_basis: &DesignMatrix,
    eps: &Tolerance,
    penalty: &Penalty,
    orientation: Orientation,
    append_constant: bool,
    solver: &SolverConfig,
) -> Result<(Vec<f64>, DualSolution, Vec<f64>)> {
    let c = prepare(c_basis, append_constant);
    check_rows(data, &c)?;
    let n = data.n();
    let ref_t = orientation.reference_is_treated();
    let mask: Vec<bool> = (0..n).map(|i| data.is_treated(i) == ref_t).collect();
    let g = mask.iter().filter(|&&m| m).count();
    let target = DVector::from_iterator(c.ncols(), (0..c.ncols()).map(|j| c.values.column(j).mean()));
    let eps_v = eps.resolve(&c)?;
    let prob = BalancingProblem::new(
        mask,
        &c,
        target,
        DVector::from_column_slice(&eps_v),
        penalty.resolved_for_group(g),
    )?;
    let sol = solve_dual(&prob, solver);
    check_status(1, &sol)?;
    let w1 = sol.full_weights(n);
    Ok((w1, sol, eps_v))
}

/// Step 2 alone, given full-length step-1 weights.
pub fn fit_step2(
    data: &Dataset,
    b_basis: &DesignMatrix,
    w1: &[f64],
    delta: &Tolerance,
    penalty: &Penalty,
    orientation: Orientation,
    append_constant: bool,
    solver: &SolverConfig,
) -> Result<(Vec<f64>, DualSolution, Vec<f64>)> {
    let b = prepare(b_basis, append_constant);
    check_rows(data, &b)?;
    let n = data.n();
    let ref_t = orientation.reference_is_treated();
    let mask: Vec<bool> = (0..n).map(|i| data.is_treated(i) != ref_t).collect();
    let g = mask.iter().filter(|&&m| m).count();
    let target = DVector::from_iterator(
        b.ncols(),
        (0..b.ncols()).map(|j| (0..n).filter(|&i| !mask[i]).map(|i| w1[i] * b.values[(i, j)]).sum()),
    );
    let delta_v = delta.resolve(&b)?;
    let prob = BalancingProblem::new(
        mask,
        &b,
        target,
        DVector::from_column_slice(&delta_v),
        penalty.resolved_for_group(g),
    )?;
    let sol = solve_dual(&prob, solver);
    check_status(2, &sol)?;
    let w2 = sol.full_weights(n);
    Ok((w2, sol, delta_v))
}

fn check_rows(data: &Dataset, design: &DesignMatrix) -> Result<()> {
    if design.nrows() != data.n() {
        return Err(Error::Dimension(format!(
            "basis has {} rows, data has {}",
            design.nrows(),
            data.n()
        )));
    }
    Ok(())
}

pub fn fit_two_step(
    data: &Dataset,
    c_basis: &DesignMatrix,
    b_basis: &DesignMatrix,
    penalty: &Penalty,
    cfg: &TwoStepConfig,
) -> Result<WeightSet> {
    let (w1, s1, eps) = fit_step1(
        data,
        c_basis,
        &cfg.eps,
        penalty,
        cfg.orientation,
        cfg.append_constant,
        &cfg.solver,
    )?;
    let (w2, s2, delta) = fit_step2(
        data,
        b_basis,
        &w1,
        &cfg.delta,
        penalty,
        cfg.orientation,
        cfg.append_constant,
        &cfg.solver,
    )?;
    Ok(WeightSet {
        w1,
        w2,
        orientation: cfg.orientation,
        eps,
        delta,
        step1: Some(s1),
        step2: Some(s2),
    })
}

/// Standard and exchanged weight sets under one configuration.
pub fn fit_both_orientations(
    data: &Dataset,
    c_basis: &DesignMatrix,
    b_basis: &DesignMatrix,
    penalty: &Penalty,
    cfg: &TwoStepConfig,
) -> Result<(WeightSet, WeightSet)> {
    let std = fit_two_step(data, c_basis, b_basis, penalty, &cfg.clone().oriented(Orientation::Standard))?;
    let exc = fit_two_step(data, c_basis, b_basis, penalty, &cfg.clone().oriented(Orientation::Exchanged))?;
    Ok((std, exc))
}
