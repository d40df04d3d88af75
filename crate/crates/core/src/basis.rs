//! Basis expansions `c(X)` and `b(M, X)` used by the balancing constraints,
//! the propensity models and the outcome regressions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnRef, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Raw(String),
    Power(String, u32),
    /// Product of two or more distinct raw columns.
    Interaction(Vec<String>),
}

impl Term {
    pub fn name(&self) -> String {
        match self {
            Term::Raw(c) => c.clone(),
            Term::Power(c, k) => format!("{c}^{k}"),
            Term::Interaction(cs) => cs.join(":"),
        }
    }

    fn columns(&self) -> Vec<&str> {
        match self {
            Term::Raw(c) | Term::Power(c, _) => vec![c.as_str()],
            Term::Interaction(cs) => cs.iter().map(String::as_str).collect(),
        }
    }

    fn canonical(&self) -> Term {
        match self {
            Term::Power(c, 1) => Term::Raw(c.clone()),
            Term::Interaction(cs) => {
                let mut cs = cs.clone();
                cs.sort();
                Term::Interaction(cs)
            }
            t => t.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    CovariatesOnly,
    CovariatesAndMediators,
}

/// Frozen centering/scaling for one raw column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub terms: Vec<Term>,
    #[serde(default = "default_true")]
    pub include_constant: bool,
    #[serde(default)]
    pub standardize: bool,
    /// Statistics reused instead of recomputed when standardizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<Vec<ColumnStats>>,
}

fn default_true() -> bool {
    true
}

pub const CONSTANT_NAME: &str = "(constant)";

impl BasisSpec {
    pub fn new(terms: Vec<Term>) -> Self {
        Self {
            terms,
            include_constant: true,
            standardize: false,
            frozen: None,
        }
    }

    /// Raw columns only.
    pub fn linear<S: AsRef<str>>(columns: &[S]) -> Self {
        Self::new(columns.iter().map(|c| Term::Raw(c.as_ref().to_string())).collect())
    }

    pub fn with_constant(mut self, include: bool) -> Self {
        self.include_constant = include;
        self
    }

    pub fn standardized(mut self, standardize: bool) -> Self {
        self.standardize = standardize;
        self
    }

    pub fn with_terms(mut self, extra: impl IntoIterator<Item = Term>) -> Self {
        self.terms.extend(extra);
        self
    }

    /// Polynomial expansion: raw columns, powers `2..=degree` of non-dummy
    /// columns, then all interactions of `2..=max_interaction` distinct
    /// columns. A column with at most two distinct values counts as a dummy.
    pub fn polynomial<S: AsRef<str>>(
        data: &Dataset,
        columns: &[S],
        degree: u32,
        max_interaction: usize,
    ) -> Result<Self> {
        let names: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
        let mut terms: Vec<Term> = names.iter().cloned().map(Term::Raw).collect();
        for k in 2..=degree {
            for c in &names {
                let col = data.column(c).ok_or_else(|| Error::MissingColumn(c.clone()))?;
                if !is_dummy(&col) {
                    terms.push(Term::Power(c.clone(), k));
                }
            }
        }
        for size in 2..=max_interaction.min(names.len()) {
            for combo in combinations(names.len(), size) {
                terms.push(Term::Interaction(combo.iter().map(|&i| names[i].clone()).collect()));
            }
        }
        Ok(Self::new(terms))
    }

    pub fn n_columns(&self) -> usize {
        self.terms.len() + usize::from(self.include_constant)
    }

    fn validate(&self, data: &Dataset, scope: Scope) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.terms {
            if let Term::Power(_, 0) = t {
                return Err(Error::Basis(format!("power 0 in `{}`; use the constant flag", t.name())));
            }
            if let Term::Interaction(cs) = t {
                let mut u = cs.clone();
                u.sort();
                u.dedup();
                if cs.len() < 2 || u.len() != cs.len() {
                    return Err(Error::Basis(format!(
                        "interaction `{}` needs at least two distinct columns",
                        t.name()
                    )));
                }
            }
            if !seen.insert(t.canonical()) {
                return Err(Error::Basis(format!("duplicate term `{}`", t.name())));
            }
            for c in t.columns() {
                match data.column_ref(c) {
                    None => return Err(Error::MissingColumn(c.to_string())),
                    Some(ColumnRef::Mediator(_)) if scope == Scope::CovariatesOnly => {
                        return Err(Error::Basis(format!(
                            "term `{}` uses mediator `{c}` in a covariates-only basis",
                            t.name()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

fn is_dummy(col: &[f64]) -> bool {
    let mut distinct: Vec<f64> = Vec::with_capacity(3);
    for &v in col {
        if !distinct.contains(&v) {
            distinct.push(v);
            if distinct.len() > 2 {
                return false;
            }
        }
    }
    true
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// An evaluated basis: one row per observation, one column per term.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub spec: BasisSpec,
    /// Standardization applied to the raw columns, when any.
    pub stats: Vec<ColumnStats>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Index of the all-ones column, if the basis carries one.
    pub fn constant_column(&self) -> Option<usize> {
        self.spec.include_constant.then(|| self.ncols() - 1)
    }

    /// Number of columns excluding the constant.
    pub fn n_nonconstant(&self) -> usize {
        self.ncols() - usize::from(self.spec.include_constant)
    }

    /// Appends a column of ones when the basis does not already have one.
    pub fn ensure_constant(&self) -> DesignMatrix {
        if self.spec.include_constant {
            return self.clone();
        }
        let n = self.nrows();
        let k = self.ncols();
        let mut values = self.values.clone().insert_column(k, 1.0);
        values.column_mut(k).fill(1.0);
        let mut column_names = self.column_names.clone();
        column_names.push(CONSTANT_NAME.to_string());
        debug_assert_eq!(values.nrows(), n);
        DesignMatrix {
            values,
            column_names,
            spec: BasisSpec {
                include_constant: true,
                ..self.spec.clone()
            },
            stats: self.stats.clone(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

pub fn build_basis(data: &Dataset, spec: &BasisSpec, scope: Scope) -> Result<DesignMatrix> {
    spec.validate(data, scope)?;
    let n = data.n();

    // Raw columns referenced by any term, transformed once.
    let mut raw_names: Vec<&str> = Vec::new();
    for t in &spec.terms {
        for c in t.columns() {
            if !raw_names.contains(&c) {
                raw_names.push(c);
            }
        }
    }
    let mut stats = Vec::new();
    let mut raw: std::collections::HashMap<&str, Vec<f64>> = std::collections::HashMap::new();
    for &c in &raw_names {
        let mut col = data.column(c).ok_or_else(|| Error::MissingColumn(c.to_string()))?;
        if spec.standardize {
            let st = match spec.frozen.as_ref().and_then(|f| f.iter().find(|s| s.column == c)) {
                Some(s) => s.clone(),
                None => {
                    let (mean, sd) = mean_sd(&col);
                    if !(sd > 0.0) {
                        return Err(Error::ZeroVariance(c.to_string()));
                    }
                    ColumnStats {
                        column: c.to_string(),
                        mean,
                        sd,
                    }
                }
            };
            for v in &mut col {
                *v = (*v - st.mean) / st.sd;
            }
            stats.push(st);
        }
        raw.insert(c, col);
    }

    let k = spec.n_columns();
    let mut values = DMatrix::zeros(n, k);
    let mut names = Vec::with_capacity(k);
    for (j, t) in spec.terms.iter().enumerate() {
        let mut out = values.column_mut(j);
        match t {
            Term::Raw(c) => {
                for (o, v) in out.iter_mut().zip(&raw[c.as_str()]) {
                    *o = *v;
                }
            }
            Term::Power(c, p) => {
                for (o, v) in out.iter_mut().zip(&raw[c.as_str()]) {
                    *o = v.powi(*p as i32);
                }
            }
            Term::Interaction(cs) => {
                out.fill(1.0);
                for c in cs {
                    for (o, v) in out.iter_mut().zip(&raw[c.as_str()]) {
                        *o *= *v;
                    }
                }
            }
        }
        names.push(t.name());
    }
    if spec.include_constant {
        values.column_mut(k - 1).fill(1.0);
        names.push(CONSTANT_NAME.to_string());
    }
    if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Basis(format!("non-finite value in column `{}`", names[idx / n])));
    }
    Ok(DesignMatrix {
        values,
        column_names: names,
        spec: spec.clone(),
        stats,
    })
}

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
