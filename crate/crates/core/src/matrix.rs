//! Generator-by-evaluator score matrices and the two-pass standardisation.
//!
//! Rows are generators, columns are evaluators. Standardisation z-scores
//! every column first (removing each evaluator's offset and scale), then
//! every row of the result (removing each generator's overall quality). The
//! diagonal of the outcome is the self-preference ("philautia") score.
//!
//! Conventions: population standard deviation everywhere; a vector whose
//! spread is zero (up to 1e-12 relative to its magnitude) maps to zeros and is
//! flagged as degenerate; cells with missing scores average what is present,
//! subject to a coverage floor.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelId, RunManifest, ScoreRecord, Setting};

pub const DEFAULT_MIN_COVERAGE: f64 = 0.95;
const DEGENERATE_RTOL: f64 = 1e-12;
const SCAN_GUARD: u128 = 1_000_000;

/// Mean score matrix with per-cell sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub generators: Vec<ModelId>,
    pub evaluators: Vec<ModelId>,
    pub values: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    pub setting: Setting,
    /// Per evaluator column: integer sums of 0-100 raw scores for each
    /// generator, when the column was built from score records. Empty for
    /// matrices constructed from plain values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub column_raw_sums: Vec<Option<Vec<u64>>>,
}

impl ScoreMatrix {
    /// Wraps precomputed means; counts default to 1 per cell.
    pub fn from_values(
        generators: Vec<ModelId>,
        evaluators: Vec<ModelId>,
        values: Vec<Vec<f64>>,
        setting: Setting,
    ) -> Result<Self> {
        check_shape(&values, generators.len(), evaluators.len())?;
        for (i, row) in values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() || !(0.0..=1.0).contains(v) {
                    return Err(Error::OutOfRange(format!(
                        "cell ({}, {}) = {v} is outside [0, 1]",
                        generators[i], evaluators[j]
                    )));
                }
            }
        }
        let counts = vec![vec![1; evaluators.len()]; generators.len()];
        Ok(ScoreMatrix {
            generators,
            evaluators,
            values,
            counts,
            setting,
            column_raw_sums: Vec::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.generators.len()
    }

    pub fn cols(&self) -> usize {
        self.evaluators.len()
    }

    pub fn get(&self, generator: &ModelId, evaluator: &ModelId) -> Option<f64> {
        let i = self.generators.iter().position(|g| g == generator)?;
        let j = self.evaluators.iter().position(|e| e == evaluator)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.generators, &self.evaluators, &self.values)
    }

    /// Reads a matrix written by [`ScoreMatrix::to_csv`].
    pub fn from_csv<R: Read>(reader: R, setting: Setting) -> Result<Self> {
        let (generators, evaluators, values) = parse_matrix_csv(reader)?;
        ScoreMatrix::from_values(generators, evaluators, values, setting)
    }
}

fn check_shape(values: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if values.len() != rows || values.iter().any(|r| r.len() != cols) {
        return Err(Error::AxisMismatch(format!(
            "values do not form a {rows}x{cols} matrix"
        )));
    }
    Ok(())
}

/// Column-then-row standardised matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedMatrix {
    pub generators: Vec<ModelId>,
    pub evaluators: Vec<ModelId>,
    pub values: Vec<Vec<f64>>,
    pub setting: Setting,
    pub degenerate_rows: Vec<ModelId>,
    pub degenerate_columns: Vec<ModelId>,
}

impl StandardizedMatrix {
    pub fn get(&self, generator: &ModelId, evaluator: &ModelId) -> Option<f64> {
        let i = self.generators.iter().position(|g| g == generator)?;
        let j = self.evaluators.iter().position(|e| e == evaluator)?;
        Some(self.values[i][j])
    }

    pub fn column(&self, evaluator: &ModelId) -> Option<Vec<f64>> {
        let j = self.evaluators.iter().position(|e| e == evaluator)?;
        Some(self.values.iter().map(|r| r[j]).collect())
    }

    /// Ids present on both axes, in generator order.
    pub fn shared_ids(&self) -> Vec<ModelId> {
        let evals: BTreeSet<&ModelId> = self.evaluators.iter().collect();
        self.generators.iter().filter(|g| evals.contains(g)).cloned().collect()
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.generators, &self.evaluators, &self.values)
    }
}

/// Output of the numeric standardisation kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<Vec<f64>>,
    pub degenerate_rows: Vec<usize>,
    pub degenerate_cols: Vec<usize>,
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores a vector in place; returns false (and zeroes it) when degenerate.
fn zscore_in_place(v: &mut [f64]) -> bool {
    let (mean, std) = mean_std(v);
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if std.is_nan() || std <= DEGENERATE_RTOL * scale {
        v.iter_mut().for_each(|x| *x = 0.0);
        return false;
    }
    v.iter_mut().for_each(|x| *x = (*x - mean) / std);
    true
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Z-scores of integer cell sums, computed from exact integer moments.
///
/// Deviations `m*s_i - sum(s)` are reduced by their gcd before the single
/// floating-point step, so the result is bit-identical for any column of the
/// form `a*s + b` with integer `a > 0`. Returns `None` when all sums agree.
fn integer_zscores(sums: &[u64]) -> Option<Vec<f64>> {
    let m = sums.len() as i128;
    let total: i128 = sums.iter().map(|&s| s as i128).sum();
    let dev: Vec<i128> = sums.iter().map(|&s| m * s as i128 - total).collect();
    let g = dev.iter().fold(0u128, |g, d| gcd(g, d.unsigned_abs()));
    if g == 0 {
        return None;
    }
    let reduced: Vec<i128> = dev.iter().map(|d| d / g as i128).collect();
    let ss: i128 = reduced.iter().map(|r| r * r).sum();
    let factor = (m as f64 / ss as f64).sqrt();
    Some(reduced.iter().map(|&r| r as f64 * factor).collect())
}

/// Two-pass standardisation of a plain numeric matrix: columns, then rows.
pub fn standardize_values(values: &[Vec<f64>]) -> Result<Standardized> {
    standardize_impl(values, None)
}

fn standardize_impl(values: &[Vec<f64>], exact_cols: Option<&[Option<Vec<u64>>]>) -> Result<Standardized> {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(Error::TooSmall { rows, cols });
    }
    check_shape(values, rows, cols)?;
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix contains non-finite values".into()));
    }

    let mut out = values.to_vec();
    let mut degenerate_cols = Vec::new();
    for j in 0..cols {
        let exact = exact_cols.and_then(|c| c[j].as_deref());
        let ok = match exact {
            Some(sums) => match integer_zscores(sums) {
                Some(z) => {
                    for (i, zi) in z.into_iter().enumerate() {
                        out[i][j] = zi;
                    }
                    true
                }
                None => {
                    out.iter_mut().for_each(|r| r[j] = 0.0);
                    false
                }
            },
            None => {
                let mut col: Vec<f64> = out.iter().map(|r| r[j]).collect();
                let ok = zscore_in_place(&mut col);
                for (i, v) in col.into_iter().enumerate() {
                    out[i][j] = v;
                }
                ok
            }
        };
        if !ok {
            degenerate_cols.push(j);
        }
    }

    let mut degenerate_rows = Vec::new();
    for (i, row) in out.iter_mut().enumerate() {
        if !zscore_in_place(row) {
            degenerate_rows.push(i);
        }
    }
    Ok(Standardized {
        values: out,
        degenerate_rows,
        degenerate_cols,
    })
}

/// Standardises a score matrix (column pass, then row pass).
///
/// Columns that carry integer raw-score sums with a uniform sample size use
/// the exact integer column pass; other columns use floating point.
pub fn standardize(phi: &ScoreMatrix) -> Result<StandardizedMatrix> {
    let exact: Option<Vec<Option<Vec<u64>>>> = (phi.column_raw_sums.len() == phi.cols()).then(|| {
        phi.column_raw_sums
            .iter()
            .enumerate()
            .map(|(j, sums)| {
                let c0 = phi.counts[0][j];
                let uniform = phi.counts.iter().all(|r| r[j] == c0);
                sums.clone().filter(|_| uniform)
            })
            .collect()
    });
    let s = standardize_impl(&phi.values, exact.as_deref())?;
    Ok(StandardizedMatrix {
        generators: phi.generators.clone(),
        evaluators: phi.evaluators.clone(),
        values: s.values,
        setting: phi.setting,
        degenerate_rows: s.degenerate_rows.iter().map(|&i| phi.generators[i].clone()).collect(),
        degenerate_columns: s.degenerate_cols.iter().map(|&j| phi.evaluators[j].clone()).collect(),
    })
}

/// Builds the mean-score matrix for one setting from score records.
///
/// Axes follow manifest order. Every cell needs at least one score and a
/// coverage (present / images) of at least `min_coverage`.
pub fn build_phi(
    scores: &[ScoreRecord],
    manifest: &RunManifest,
    setting: Setting,
    min_coverage: f64,
) -> Result<ScoreMatrix> {
    build_phi_on_axes(scores, &manifest.generators, &manifest.evaluators, manifest.n_images(), setting, min_coverage)
}

pub(crate) fn build_phi_on_axes(
    scores: &[ScoreRecord],
    generators: &[ModelId],
    evaluators: &[ModelId],
    n_images: usize,
    setting: Setting,
    min_coverage: f64,
) -> Result<ScoreMatrix> {
    let gi: HashMap<&ModelId, usize> = generators.iter().enumerate().map(|(i, g)| (g, i)).collect();
    let ej: HashMap<&ModelId, usize> = evaluators.iter().enumerate().map(|(j, e)| (e, j)).collect();
    let (r, c) = (generators.len(), evaluators.len());
    let mut counts = vec![vec![0usize; c]; r];
    let mut sums = vec![vec![0u64; c]; r];
    for rec in scores.iter().filter(|s| s.setting == setting) {
        let (Some(&i), Some(&j)) = (gi.get(&rec.generator), ej.get(&rec.evaluator)) else {
            continue;
        };
        counts[i][j] += 1;
        sums[i][j] += rec.raw_score as u64;
    }
    let mut values = vec![vec![0.0; c]; r];
    for i in 0..r {
        for j in 0..c {
            let n = counts[i][j];
            if n == 0 {
                return Err(Error::EmptyCell {
                    generator: generators[i].to_string(),
                    evaluator: evaluators[j].to_string(),
                });
            }
            let coverage = n as f64 / n_images as f64;
            if coverage < min_coverage {
                return Err(Error::CoverageBelowFloor {
                    generator: generators[i].to_string(),
                    evaluator: evaluators[j].to_string(),
                    coverage,
                    floor: min_coverage,
                });
            }
            values[i][j] = sums[i][j] as f64 / (100.0 * n as f64);
        }
    }
    Ok(ScoreMatrix {
        generators: generators.to_vec(),
        evaluators: evaluators.to_vec(),
        values,
        counts,
        setting,
        column_raw_sums: (0..c).map(|j| Some(sums.iter().map(|r| r[j]).collect())).collect(),
    })
}

/// Diagonal entries for every model on both axes.
pub fn philautia_scores(phi_tilde: &StandardizedMatrix) -> Result<BTreeMap<ModelId, f64>> {
    let shared = phi_tilde.shared_ids();
    if shared.is_empty() {
        return Err(Error::AxisMismatch("no model appears on both axes".into()));
    }
    Ok(shared
        .into_iter()
        .map(|id| {
            let v = phi_tilde.get(&id, &id).expect("shared id");
            (id, v)
        })
        .collect())
}

/// The philautia score of one model; errors if it is missing from either axis.
pub fn philautia_score(phi_tilde: &StandardizedMatrix, model: &ModelId) -> Result<f64> {
    let as_gen = phi_tilde.generators.contains(model);
    let as_eval = phi_tilde.evaluators.contains(model);
    match (as_gen, as_eval) {
        (true, true) => Ok(phi_tilde.get(model, model).expect("present")),
        (false, false) => Err(Error::UnknownReference {
            kind: "model",
            id: model.to_string(),
        }),
        _ => Err(Error::AxisMismatch(format!(
            "model `{model}` is present on only one axis"
        ))),
    }
}

/// How far a model's self-score sits from the rest of its own column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalZ {
    pub diag: f64,
    pub col_mean: f64,
    pub col_std: f64,
    /// `None` when the column has zero spread.
    pub z: Option<f64>,
}

pub fn diagonal_zscores(phi_tilde: &StandardizedMatrix) -> Result<BTreeMap<ModelId, DiagonalZ>> {
    let diag = philautia_scores(phi_tilde)?;
    Ok(diag
        .into_iter()
        .map(|(id, d)| {
            let col = phi_tilde.column(&id).expect("shared id");
            let (col_mean, col_std) = mean_std(&col);
            let z = (col_std > 0.0).then(|| (d - col_mean) / col_std);
            (
                id,
                DiagonalZ {
                    diag: d,
                    col_mean,
                    col_std,
                    z,
                },
            )
        })
        .collect())
}

/// Rebuilds and re-standardises the matrix without the given models.
pub fn exclude_models(
    scores: &[ScoreRecord],
    manifest: &RunManifest,
    setting: Setting,
    drop_evaluators: &BTreeSet<ModelId>,
    drop_generators: &BTreeSet<ModelId>,
    min_coverage: f64,
) -> Result<StandardizedMatrix> {
    let generators: Vec<ModelId> = manifest
        .generators
        .iter()
        .filter(|g| !drop_generators.contains(*g))
        .cloned()
        .collect();
    let evaluators: Vec<ModelId> = manifest
        .evaluators
        .iter()
        .filter(|e| !drop_evaluators.contains(*e))
        .cloned()
        .collect();
    if generators.len() < 2 || evaluators.len() < 2 {
        return Err(Error::TooSmall {
            rows: generators.len(),
            cols: evaluators.len(),
        });
    }
    let phi = build_phi_on_axes(scores, &generators, &evaluators, manifest.n_images(), setting, min_coverage)?;
    standardize(&phi)
}

/// A principal submatrix and its count of positive off-diagonal entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCount {
    pub ids: Vec<ModelId>,
    pub positive_offdiag: usize,
}

/// Ranks every k-subset of shared models by positive off-diagonal count.
///
/// Ties are broken by the lexicographic order of the sorted member ids.
pub fn submatrix_scan(phi_tilde: &StandardizedMatrix, k: usize) -> Result<Vec<SubsetCount>> {
    let mut ids = phi_tilde.shared_ids();
    ids.sort();
    let m = ids.len();
    if k == 0 || k > m {
        return Err(Error::OutOfRange(format!("k = {k} must be in 1..={m}")));
    }
    let n_subsets = binomial(m as u128, k as u128);
    if n_subsets > SCAN_GUARD {
        return Err(Error::OutOfRange(format!(
            "C({m}, {k}) = {n_subsets} subsets exceeds the scan limit of {SCAN_GUARD}"
        )));
    }
    let row: Vec<usize> = ids
        .iter()
        .map(|id| phi_tilde.generators.iter().position(|g| g == id).unwrap())
        .collect();
    let col: Vec<usize> = ids
        .iter()
        .map(|id| phi_tilde.evaluators.iter().position(|e| e == id).unwrap())
        .collect();
    let mut out: Vec<SubsetCount> = (0..m)
        .combinations(k)
        .map(|subset| {
            let mut positive = 0;
            for &a in &subset {
                for &b in &subset {
                    if a != b && phi_tilde.values[row[a]][col[b]] > 0.0 {
                        positive += 1;
                    }
                }
            }
            SubsetCount {
                ids: subset.iter().map(|&i| ids[i].clone()).collect(),
                positive_offdiag: positive,
            }
        })
        .collect();
    out.sort_by(|a, b| b.positive_offdiag.cmp(&a.positive_offdiag).then_with(|| a.ids.cmp(&b.ids)));
    Ok(out)
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Per-model change of the diagonal from the reference-based to the reference-free matrix.
pub fn settings_delta(
    ref_based: &StandardizedMatrix,
    ref_free: &StandardizedMatrix,
) -> Result<BTreeMap<ModelId, f64>> {
    if ref_based.generators != ref_free.generators || ref_based.evaluators != ref_free.evaluators {
        return Err(Error::AxisMismatch(
            "reference-based and reference-free matrices have different axes".into(),
        ));
    }
    let based = philautia_scores(ref_based)?;
    let free = philautia_scores(ref_free)?;
    Ok(based.into_iter().map(|(id, b)| (id.clone(), free[&id] - b)).collect())
}

/// Per-column min-max scaling of the raw matrix (comparison baseline only).
pub fn minmax_baseline(phi: &ScoreMatrix) -> Result<Vec<Vec<f64>>> {
    let mut out = phi.values.clone();
    for j in 0..phi.cols() {
        let col: Vec<f64> = phi.values.iter().map(|r| r[j]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::Degenerate(format!(
                "column `{}` is constant; min-max scaling is undefined",
                phi.evaluators[j]
            )));
        }
        for (i, v) in col.into_iter().enumerate() {
            out[i][j] = (v - lo) / (hi - lo);
        }
    }
    Ok(out)
}

/// Fixed 6-decimal rendering with negative zero folded to zero.
pub fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// CSV with a `generator` header cell, evaluator columns, and 6-decimal values.
pub fn matrix_csv(generators: &[ModelId], evaluators: &[ModelId], values: &[Vec<f64>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["generator".to_string()];
    header.extend(evaluators.iter().map(|e| e.to_string()));
    w.write_record(&header).expect("in-memory write");
    for (g, row) in generators.iter().zip(values) {
        let mut rec = vec![g.to_string()];
        rec.extend(row.iter().map(|&v| fmt6(v)));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

type ParsedMatrix = (Vec<ModelId>, Vec<ModelId>, Vec<Vec<f64>>);

pub fn parse_matrix_csv<R: Read>(reader: R) -> Result<ParsedMatrix> {
    let mut r = csv::Reader::from_reader(reader);
    let bad = |e: csv::Error| Error::Validation(format!("matrix CSV: {e}"));
    let header = r.headers().map_err(bad)?.clone();
    let evaluators = header
        .iter()
        .skip(1)
        .map(ModelId::new)
        .collect::<Result<Vec<_>>>()?;
    let mut generators = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(bad)?;
        let mut fields = rec.iter();
        generators.push(ModelId::new(fields.next().unwrap_or_default())?);
        let row = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Validation(format!("matrix CSV value `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    Ok((generators, evaluators, values))
}
