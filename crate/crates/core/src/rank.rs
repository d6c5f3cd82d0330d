//! Kendall rank correlations with tie handling.
//!
//! Pair classification is exact integer counting. [`pair_counts`] uses the
//! O(n log n) sort-and-merge scheme; [`pair_counts_quadratic`] enumerates all
//! pairs and is kept as the reference the fast path must reproduce.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification of all n(n-1)/2 unordered pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub ties_x_only: u64,
    pub ties_y_only: u64,
    pub ties_both: u64,
    pub n: u64,
}

impl PairCounts {
    pub fn total_pairs(&self) -> u64 {
        self.n * self.n.saturating_sub(1) / 2
    }
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Degenerate(format!(
            "rank correlation needs at least 2 observations, got {}",
            x.len()
        )));
    }
    if let Some(v) = x.iter().chain(y).find(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("rank input contains {v}")));
    }
    Ok(())
}

// -0.0 and 0.0 must compare equal; total_cmp alone would split them.
#[inline]
fn cmp(a: f64, b: f64) -> Ordering {
    (a + 0.0).total_cmp(&(b + 0.0))
}

/// Reference O(n^2) pair enumeration.
pub fn pair_counts_quadratic(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    check_inputs(x, y)?;
    let mut c = PairCounts {
        n: x.len() as u64,
        ..Default::default()
    };
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            match (cmp(x[i], x[j]), cmp(y[i], y[j])) {
                (Ordering::Equal, Ordering::Equal) => c.ties_both += 1,
                (Ordering::Equal, _) => c.ties_x_only += 1,
                (_, Ordering::Equal) => c.ties_y_only += 1,
                (a, b) if a == b => c.concordant += 1,
                _ => c.discordant += 1,
            }
        }
    }
    Ok(c)
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if cmp(w[0], w[1]) == Ordering::Equal {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

// Merge sort that returns the number of inversions (strict, equal keys do not count).
fn sort_counting_swaps(values: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = values.split_at_mut(mid);
        let (lbuf, rbuf) = buf.split_at_mut(mid);
        sort_counting_swaps(left, lbuf) + sort_counting_swaps(right, rbuf)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if cmp(values[j], values[i]) == Ordering::Less {
            swaps += (mid - i) as u64;
            buf[k] = values[j];
            j += 1;
        } else {
            buf[k] = values[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + (mid - i)].copy_from_slice(&values[i..mid]);
    k += mid - i;
    buf[k..k + (n - j)].copy_from_slice(&values[j..n]);
    values.copy_from_slice(&buf[..n]);
    swaps
}

/// O(n log n) pair classification; identical results to [`pair_counts_quadratic`].
pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    check_inputs(x, y)?;
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp(x[a], x[b]).then(cmp(y[a], y[b])));

    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let x_ties = tied_pairs(&xs);

    let mut joint = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if cmp(x[w[0]], x[w[1]]) == Ordering::Equal && cmp(y[w[0]], y[w[1]]) == Ordering::Equal {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;

    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let discordant = sort_counting_swaps(&mut ys, &mut buf);
    let y_ties = tied_pairs(&ys);

    let total = (n as u64) * (n as u64 - 1) / 2;
    let concordant = total + joint - x_ties - y_ties - discordant;
    Ok(PairCounts {
        concordant,
        discordant,
        ties_x_only: x_ties - joint,
        ties_y_only: y_ties - joint,
        ties_both: joint,
        n: n as u64,
    })
}

/// Number of distinct values.
pub fn distinct_levels(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(|a, b| cmp(*a, *b));
    v.dedup_by(|a, b| cmp(*a, *b) == Ordering::Equal);
    v.len()
}

/// Kendall's tau-b: `(C - D) / sqrt((C + D + Tx)(C + D + Ty))`.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    tau_b_from_counts(&pair_counts(x, y)?)
}

pub fn tau_b_from_counts(c: &PairCounts) -> Result<f64> {
    let cd = (c.concordant + c.discordant) as f64;
    let denom = ((cd + c.ties_x_only as f64) * (cd + c.ties_y_only as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::Degenerate(
            "tau-b undefined: one input is entirely tied".into(),
        ));
    }
    let tau = (c.concordant as f64 - c.discordant as f64) / denom;
    Ok(tau.clamp(-1.0, 1.0))
}

/// Kendall's tau-c (Stuart): `2m(C - D) / (n^2 (m - 1))`, with `m` the
/// smaller of the two distinct-level counts.
pub fn kendall_tau_c(x: &[f64], y: &[f64]) -> Result<f64> {
    let counts = pair_counts(x, y)?;
    let m = distinct_levels(x).min(distinct_levels(y));
    tau_c_from_counts(&counts, m)
}

pub fn tau_c_from_counts(c: &PairCounts, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "tau-c undefined: min distinct levels is {m}"
        )));
    }
    let n = c.n as f64;
    let m = m as f64;
    Ok(2.0 * m * (c.concordant as f64 - c.discordant as f64) / (n * n * (m - 1.0)))
}
