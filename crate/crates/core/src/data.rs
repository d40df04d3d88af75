//! Observed mediation data: outcome, binary treatment, mediator block and
//! covariates, all row-aligned.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    d: Vec<bool>,
    m: DMatrix<f64>,
    x: DMatrix<f64>,
    mediator_names: Vec<String>,
    covariate_names: Vec<String>,
}

/// Where a named column lives inside a [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRef {
    Mediator(usize),
    Covariate(usize),
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        d: Vec<bool>,
        m: DMatrix<f64>,
        x: DMatrix<f64>,
        mediator_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if d.len() != n || m.nrows() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "row counts differ: y={}, d={}, m={}, x={}",
                n,
                d.len(),
                m.nrows(),
                x.nrows()
            )));
        }
        if m.ncols() == 0 {
            return Err(Error::Dimension("at least one mediator is required".into()));
        }
        if mediator_names.len() != m.ncols() || covariate_names.len() != x.ncols() {
            return Err(Error::Dimension("column names do not match column counts".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in mediator_names.iter().chain(&covariate_names) {
            if !seen.insert(name.as_str()) {
                return Err(Error::Dimension(format!("duplicate column name `{name}`")));
            }
        }
        if !d.iter().any(|&t| t) {
            return Err(Error::EmptyGroup(1));
        }
        if d.iter().all(|&t| t) {
            return Err(Error::EmptyGroup(0));
        }
        let finite = |v: f64| v.is_finite();
        if !y.iter().copied().all(finite) || !m.iter().copied().all(finite) || !x.iter().copied().all(finite) {
            return Err(Error::Domain("non-finite value in dataset".into()));
        }
        Ok(Self {
            y,
            d,
            m,
            x,
            mediator_names,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn treated(&self) -> &[bool] {
        &self.d
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.d[i]
    }

    /// Treatment indicator as 0.0 / 1.0.
    pub fn d(&self, i: usize) -> f64 {
        if self.d[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn mediators(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn mediator_names(&self) -> &[String] {
        &self.mediator_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_treated(&self) -> usize {
        self.d.iter().filter(|&&t| t).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn column_ref(&self, name: &str) -> Option<ColumnRef> {
        if let Some(j) = self.mediator_names.iter().position(|c| c == name) {
            return Some(ColumnRef::Mediator(j));
        }
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .map(ColumnRef::Covariate)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_ref(name).map(|r| match r {
            ColumnRef::Mediator(j) => self.m.column(j).iter().copied().collect(),
            ColumnRef::Covariate(j) => self.x.column(j).iter().copied().collect(),
        })
    }

    /// Same data with treatment labels swapped.
    pub fn flipped(&self) -> Self {
        Self {
            d: self.d.iter().map(|&t| !t).collect(),
            ..self.clone()
        }
    }

    /// Writes the dataset as CSV with columns `y, d, <mediators>, <covariates>`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header = vec!["y".to_string(), "d".to_string()];
        header.extend(self.mediator_names.iter().cloned());
        header.extend(self.covariate_names.iter().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(header.len());
            // `{:?}` prints the shortest representation that round-trips.
            rec.push(format!("{:?}", self.y[i]));
            rec.push(if self.d[i] { "1" } else { "0" }.to_string());
            rec.extend(self.m.row(i).iter().map(|v| format!("{v:?}")));
            rec.extend(self.x.row(i).iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

/// Maps CSV columns onto dataset roles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    pub mediators: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Level of a two-level string treatment that codes the control group.
    #[serde(default)]
    pub control_level: Option<String>,
}

pub fn load_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, roles)
}

pub fn read_csv<R: std::io::Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
    if roles.mediators.is_empty() {
        return Err(Error::Config("role map must name at least one mediator".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let find = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = find(&roles.outcome)?;
    let d_col = find(&roles.treatment)?;
    let m_cols = roles.mediators.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let x_cols = roles.covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut d_raw: Vec<String> = Vec::new();
    let mut m_vals = Vec::new();
    let mut x_vals = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = row + 1;
        let field = |col: usize, name: &str| -> Result<&str> {
            let v = rec.get(col).map(str::trim).unwrap_or("");
            if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
                Err(Error::MissingValue {
                    row: row_no,
                    column: name.to_string(),
                })
            } else {
                Ok(v)
            }
        };
        let number = |col: usize, name: &str| -> Result<f64> {
            let v = field(col, name)?;
            v.parse::<f64>().map_err(|_| Error::BadNumber {
                row: row_no,
                column: name.to_string(),
                value: v.to_string(),
            })
        };
        y.push(number(y_col, &roles.outcome)?);
        d_raw.push(field(d_col, &roles.treatment)?.to_string());
        for (&c, name) in m_cols.iter().zip(&roles.mediators) {
            m_vals.push(number(c, name)?);
        }
        for (&c, name) in x_cols.iter().zip(&roles.covariates) {
            x_vals.push(number(c, name)?);
        }
    }
    let n = y.len();
    let d = coerce_treatment(&d_raw, &roles.treatment, roles.control_level.as_deref())?;
    let m = DMatrix::from_row_slice(n, m_cols.len(), &m_vals);
    let x = DMatrix::from_row_slice(n, x_cols.len(), &x_vals);
    Dataset::new(y, d, m, x, roles.mediators.clone(), roles.covariates.clone())
}

fn coerce_treatment(raw: &[String], column: &str, control_level: Option<&str>) -> Result<Vec<bool>> {
    let numeric: Option<Vec<f64>> = raw.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let (Some(vals), None) = (&numeric, control_level) {
        return vals
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::NonBinaryTreatment {
                        row: i + 1,
                        column: column.to_string(),
                        value: raw[i].clone(),
                    })
                }
            })
            .collect();
    }
    let control = control_level.ok_or_else(|| {
        Error::Config(format!(
            "treatment `{column}` is not numeric 0/1; declare its control level"
        ))
    })?;
    let mut levels: Vec<&str> = raw.iter().map(String::as_str).collect();
    levels.sort_unstable();
    levels.dedup();
    if levels.len() > 2 {
        let row = raw.iter().position(|v| v != levels[0] && v != levels[1]).unwrap_or(0);
        return Err(Error::NonBinaryTreatment {
            row: row + 1,
            column: column.to_string(),
            value: raw[row].clone(),
        });
    }
    if !levels.contains(&control) {
        return Err(Error::Config(format!(
            "control level `{control}` does not occur in `{column}`"
        )));
    }
    Ok(raw.iter().map(|v| v != control).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles() -> ColumnRoles {
        ColumnRoles {
            outcome: "y".into(),
            treatment: "d".into(),
            mediators: vec!["m".into()],
            covariates: vec!["x1".into()],
            control_level: None,
        }
    }

    #[test]
    fn parses_small_csv() {
        let csv = "y,d,m,x1\n1.0,0,0,1\n2.5,1,1,2\n3,0,1,3\n4,1,0,4\n";
        let data = read_csv(csv.as_bytes(), &roles()).unwrap();
        assert_eq!(data.n(), 4);
        assert_eq!(data.n_treated(), 2);
        assert_eq!(data.column("x1").unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let csv = "y,d,m,x1\n1,0,0,1\n2,2,1,2\n3,1,1,3\n";
        let err = read_csv(csv.as_bytes(), &roles()).unwrap_err();
        assert!(err.to_string().contains("non-binary treatment"), "{err}");
        assert!(matches!(err, Error::NonBinaryTreatment { row: 2, .. }));
    }

    #[test]
    fn reports_missing_column_and_value() {
        let csv = "y,d,m\n1,0,0\n2,1,1\n";
        assert!(matches!(read_csv(csv.as_bytes(), &roles()), Err(Error::MissingColumn(c)) if c == "x1"));
        let csv = "y,d,m,x1\n1,0,,1\n2,1,1,2\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &roles()),
            Err(Error::MissingValue { row: 1, .. })
        ));
    }

    #[test]
    fn empty_group_is_an_error() {
        let csv = "y,d,m,x1\n1,1,0,1\n2,1,1,2\n";
        assert!(matches!(read_csv(csv.as_bytes(), &roles()), Err(Error::EmptyGroup(0))));
    }

    #[test]
    fn two_level_factor_with_control_level() {
        let csv = "y,d,m,x1\n1,pos,0,1\n2,neg,1,2\n3,pos,1,3\n";
        let mut r = roles();
        r.control_level = Some("pos".into());
        let data = read_csv(csv.as_bytes(), &r).unwrap();
        assert_eq!(data.treated(), &[false, true, false]);
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let data = Dataset::new(
            vec![0.1, 1.0 / 3.0, -2.5e-17, 7.0],
            vec![false, true, true, false],
            DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 1.0, 0.0]),
            DMatrix::from_column_slice(4, 1, &[std::f64::consts::PI, 1e300, -0.0, 5.5]),
            vec!["m".into()],
            vec!["x1".into()],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        data.write_csv(&path).unwrap();
        let back = load_csv(&path, &roles()).unwrap();
        for (a, b) in data.y().iter().zip(back.y()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in data.covariates().iter().zip(back.covariates().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(data.treated(), back.treated());
    }
}
