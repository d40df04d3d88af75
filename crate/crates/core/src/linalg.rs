use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive (semi)definite `a`. Falls back to
/// a ridge of `ridge * mean(diag)` when the Cholesky factorisation fails.
/// Returns the solution and whether the ridge was needed.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> (DVector<f64>, bool) {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return (x, false);
        }
    }
    let k = a.nrows();
    let scale = (a.trace() / k.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut shift = ridge * scale;
    for _ in 0..12 {
        let mut r = a.clone();
        for i in 0..k {
            r[(i, i)] += shift;
        }
        if let Some(ch) = r.cholesky() {
            return (ch.solve(b), true);
        }
        shift *= 100.0;
    }
    // Indefinite beyond repair: least-squares through SVD.
    let x = a
        .clone()
        .svd(true, true)
        .solve(b, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(k));
    (x, true)
}

/// Least squares of `y` on the rows of `x` selected by `rows`.
/// Returns coefficients and whether a ridge fallback was engaged.
pub(crate) fn ols(x: &DMatrix<f64>, y: &[f64], rows: &[usize], ridge: f64) -> (DVector<f64>, bool) {
    let k = x.ncols();
    let mut sub = DMatrix::zeros(rows.len(), k);
    let mut rhs = DVector::zeros(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        sub.row_mut(r).copy_from(&x.row(i));
        rhs[r] = y[i];
    }
    // Column scaling keeps the factorisation well conditioned.
    let scales: Vec<f64> = (0..k)
        .map(|j| sub.column(j).amax().max(f64::MIN_POSITIVE))
        .collect();
    for j in 0..k {
        sub.column_mut(j).unscale_mut(scales[j]);
    }
    let mut beta = None;
    if rows.len() >= k {
        let qr = sub.clone().qr();
        let r = qr.r();
        let diag_max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let full_rank = (0..k).all(|i| r[(i, i)].abs() > 1e-10 * diag_max);
        if full_rank {
            let qty = qr.q().transpose() * &rhs;
            beta = r.solve_upper_triangular(&qty);
        }
    }
    let (mut b, ridged) = match beta {
        Some(b) => (b, false),
        None => {
            let gram = sub.transpose() * &sub;
            let xty = sub.transpose() * &rhs;
            let (b, _) = solve_spd(&gram_with_ridge(&gram, ridge), &xty, ridge);
            (b, true)
        }
    };
    for j in 0..k {
        b[j] /= scales[j];
    }
    (b, ridged)
}

fn gram_with_ridge(g: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let mut g = g.clone();
    let k = g.nrows();
    let scale = (g.trace() / k.max(1) as f64).max(f64::MIN_POSITIVE);
    for i in 0..k {
        g[(i, i)] += ridge * scale;
    }
    g
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
