//! Target absolute standardized mean differences (TASMD).
//!
//! `cp` compares the step-1 weighted reference group with the full sample
//! and divides by the unweighted reference-group sd. `tc` compares the
//! step-2 weighted group with the step-1 weighted reference group and
//! divides by the unweighted step-2 group sd.

use std::io::Write;

use serde::Serialize;

use crate::basis::{mean_sd, DesignMatrix};
use crate::data::Dataset;
use crate::weights::WeightSet;

#[derive(Debug, Clone, Serialize)]
pub struct BalanceRow {
    pub column: String,
    /// `None` when the column is not in the step-1 basis or its sd is zero.
    pub tasmd_cp: Option<f64>,
    pub tasmd_tc: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceTable {
    pub method: String,
    pub rows: Vec<BalanceRow>,
}

impl BalanceTable {
    pub fn row(&self, column: &str) -> Option<&BalanceRow> {
        self.rows.iter().find(|r| r.column == column)
    }

    /// Largest finite entry over both metrics.
    pub fn max(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [r.tasmd_cp, r.tasmd_tc])
            .flatten()
            .fold(0.0, f64::max)
    }

    /// Long format: `column,metric,value,method`, with `NA` for missing.
    pub fn write_long_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "column,metric,value,method")?;
        self.write_long_rows(out)
    }

    pub fn write_long_rows(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.rows {
            for (metric, v) in [("tasmd_cp", r.tasmd_cp), ("tasmd_tc", r.tasmd_tc)] {
                let value = v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
                writeln!(out, "{},{metric},{value},{}", quote(&r.column), self.method)?;
            }
        }
        Ok(())
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn group_sd(values: &[f64], rows: &[usize]) -> f64 {
    let v: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
    mean_sd(&v).1
}

pub fn tasmd(data: &Dataset, ws: &WeightSet, c_basis: &DesignMatrix, b_basis: &DesignMatrix, method: &str) -> BalanceTable {
    let n = data.n();
    let ref_t = ws.orientation.reference_is_treated();
    let reference: Vec<usize> = (0..n).filter(|&i| data.is_treated(i) == ref_t).collect();
    let other: Vec<usize> = (0..n).filter(|&i| data.is_treated(i) != ref_t).collect();
    let ratio = |diff: f64, sd: f64| (sd > 0.0 && sd.is_finite()).then(|| diff.abs() / sd);

    let mut rows: Vec<BalanceRow> = Vec::new();
    for (j, name) in c_basis.column_names.iter().enumerate() {
        if c_basis.constant_column() == Some(j) {
            continue;
        }
        let col: Vec<f64> = c_basis.values.column(j).iter().copied().collect();
        let full = col.iter().sum::<f64>() / n as f64;
        let cp = ratio(ws.step1_mean(&col) - full, group_sd(&col, &reference));
        rows.push(BalanceRow {
            column: name.clone(),
            tasmd_cp: cp,
            tasmd_tc: None,
        });
    }
    for (j, name) in b_basis.column_names.iter().enumerate() {
        if b_basis.constant_column() == Some(j) {
            continue;
        }
        let col: Vec<f64> = b_basis.values.column(j).iter().copied().collect();
        let tc = ratio(ws.step2_mean(&col) - ws.step1_mean(&col), group_sd(&col, &other));
        match rows.iter_mut().find(|r| &r.column == name) {
            Some(r) => r.tasmd_tc = tc,
            None => rows.push(BalanceRow {
                column: name.clone(),
                tasmd_cp: None,
                tasmd_tc: tc,
            }),
        }
    }
    BalanceTable {
        method: method.to_string(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisSpec, Scope};
    use crate::weights::Orientation;
    use nalgebra::DMatrix;

    #[test]
    fn uniform_weights_arithmetic() {
        // Controls: x = -2, 0, 2 (mean 0, sd 2). Treated: 1, 2, 3.
        let x = [-2.0, 0.0, 2.0, 1.0, 2.0, 3.0];
        let d = [false, false, false, true, true, true];
        let data = Dataset::new(
            vec![0.0; 6],
            d.to_vec(),
            DMatrix::from_column_slice(6, 1, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
            DMatrix::from_column_slice(6, 1, &x),
            vec!["m".into()],
            vec!["x".into()],
        )
        .unwrap();
        let c = build_basis(&data, &BasisSpec::linear(&["x"]), Scope::CovariatesOnly).unwrap();
        let b = build_basis(&data, &BasisSpec::linear(&["x", "m"]), Scope::CovariatesAndMediators).unwrap();
        let ws = WeightSet::uniform(&data, Orientation::Standard);
        let t = tasmd(&data, &ws, &c, &b, "uniform");
        // Full mean 1, control mean 0, control sd 2.
        assert!((t.row("x").unwrap().tasmd_cp.unwrap() - 0.5).abs() < 1e-12);
        // Treated mean 2 against control mean 0 over treated sd 1.
        assert!((t.row("x").unwrap().tasmd_tc.unwrap() - 2.0).abs() < 1e-12);
        assert!(t.row("m").unwrap().tasmd_cp.is_none());
        assert!(t.rows.iter().all(|r| r.column != crate::basis::CONSTANT_NAME));
    }

    #[test]
    fn zero_sd_is_not_applicable() {
        let x = [1.0, 1.0, 1.0, 0.0, 2.0, 3.0];
        let d = [false, false, false, true, true, true];
        let data = Dataset::new(
            vec![0.0; 6],
            d.to_vec(),
            DMatrix::from_column_slice(6, 1, &[0.0; 6]),
            DMatrix::from_column_slice(6, 1, &x),
            vec!["m".into()],
            vec!["x".into()],
        )
        .unwrap();
        let c = build_basis(&data, &BasisSpec::linear(&["x"]), Scope::CovariatesOnly).unwrap();
        let b = build_basis(&data, &BasisSpec::linear(&["x", "m"]), Scope::CovariatesAndMediators).unwrap();
        let ws = WeightSet::uniform(&data, Orientation::Standard);
        let t = tasmd(&data, &ws, &c, &b, "uniform");
        assert!(t.row("x").unwrap().tasmd_cp.is_none());
        assert!(t.row("m").unwrap().tasmd_tc.is_none());
        let mut buf = Vec::new();
        t.write_long_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("column,metric,value,method\n"));
        assert!(s.contains("x,tasmd_cp,NA,uniform"));
    }
}
