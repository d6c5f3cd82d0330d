//! Reference implementations used by the integration tests. Written for
//! clarity, not speed, and sharing no code with the library.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Straight-line column-then-row z-scoring with population std; a vector
/// whose std is at most 1e-12 of its largest magnitude becomes all zeros.
pub fn standardize_oracle(v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = v.len();
    let cols = v[0].len();
    let mut a = v.to_vec();
    for j in 0..cols {
        let mut sum = 0.0;
        for row in a.iter() {
            sum += row[j];
        }
        let mean = sum / rows as f64;
        let mut ss = 0.0;
        for row in a.iter() {
            ss += (row[j] - mean) * (row[j] - mean);
        }
        let sd = (ss / rows as f64).sqrt();
        let scale = a.iter().map(|r| r[j].abs()).fold(0.0, f64::max);
        for row in a.iter_mut() {
            row[j] = if sd <= 1e-12 * scale || sd == 0.0 { 0.0 } else { (row[j] - mean) / sd };
        }
    }
    for row in a.iter_mut() {
        let mean = row.iter().sum::<f64>() / cols as f64;
        let sd = (row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64).sqrt();
        let scale = row.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for x in row.iter_mut() {
            *x = if sd <= 1e-12 * scale || sd == 0.0 { 0.0 } else { (*x - mean) / sd };
        }
    }
    a
}

/// Pair-enumeration Kendall tau-b and tau-c; `None` when undefined.
pub fn kendall_oracle(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt();
    if denom == 0.0 {
        return None;
    }
    let tau_b = (c - d) as f64 / denom;
    let levels = |v: &[f64]| {
        let mut s: Vec<f64> = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.dedup_by(|a, b| a == b);
        s.len()
    };
    let m = levels(x).min(levels(y)) as f64;
    let tau_c = 2.0 * m * (c - d) as f64 / ((n * n) as f64 * (m - 1.0));
    Some((tau_b, tau_c))
}

fn design(x: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), x[0].len(), |i, j| x[i][j])
}

/// Ordinary least squares with intercept via SVD.
pub fn ols_oracle(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len();
    let p = x[0].len();
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[i][j] } else { 1.0 });
    let b = DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-14).expect("svd solve");
    (sol.rows(0, p).iter().copied().collect(), sol[p])
}

/// Ridge in the standardised convention:
/// `(1/2n)|y_c - Z w|^2 + (lambda/2)|w|^2` with Z the centred,
/// population-scaled features; weights mapped back to input units.
pub fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let xm = design(x);
    let p = xm.ncols();
    let means: Vec<f64> = (0..p).map(|j| xm.column(j).mean()).collect();
    let sds: Vec<f64> = (0..p).map(|j| xm.column(j).variance().sqrt()).collect();
    let z = DMatrix::from_fn(xm.nrows(), p, |i, j| (xm[(i, j)] - means[j]) / sds[j]);
    let ybar = y.iter().sum::<f64>() / n;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - ybar));
    let lhs = z.transpose() * &z / n + DMatrix::identity(p, p) * lambda;
    let rhs = z.transpose() * yc / n;
    let w = lhs.cholesky().expect("spd").solve(&rhs);
    let weights: Vec<f64> = (0..p).map(|j| w[j] / sds[j]).collect();
    let intercept = ybar - weights.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>();
    (weights, intercept)
}

/// Positive off-diagonal count of the principal submatrix on `idx`.
pub fn positive_offdiag(m: &[Vec<f64>], idx: &[usize]) -> usize {
    let mut c = 0;
    for &a in idx {
        for &b in idx {
            if a != b && m[a][b] > 0.0 {
                c += 1;
            }
        }
    }
    c
}

/// Every k-subset of 0..n by bitmask enumeration.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == k)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}
