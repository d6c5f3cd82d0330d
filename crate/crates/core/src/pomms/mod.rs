//! A panel of judges combined into one evaluator.
//!
//! Members are chosen by greedy forward selection scored with validation
//! Kendall tau-b, and their scores are combined by an elastic-net linear
//! model fitted to human judgments. The fitted panel can then be added to the
//! score matrix as one more evaluator column.

pub mod elastic_net;
mod sfs;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, ScoreMatrix, StandardizedMatrix};
use crate::model::{HumanJudgmentRecord, ModelId, RunManifest, ScoreRecord, Setting, SplitName};
use crate::rank::{kendall_tau_b, kendall_tau_c};

pub use elastic_net::{fit_elastic_net, lambda_max, ElasticNetFit, ElasticNetParams};
pub use sfs::{sfs_select, HyperGrid, SfsOptions, SfsStep, StopReason};

/// Column id used for the ensemble in augmented matrices.
pub const ENSEMBLE_ID: &str = "POMMS";

/// A fitted ensemble: members, linear weights and the hyperparameters used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<ModelId>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub clamp: bool,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Validation("ensemble has no members".into()));
        }
        if self.members.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                left: self.members.len(),
                right: self.weights.len(),
            });
        }
        if self.weights.iter().chain([&self.intercept]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble weights must be finite".into()));
        }
        Ok(())
    }

    /// Prediction from member scores given in member order.
    pub fn predict(&self, member_scores: &[f64]) -> f64 {
        let raw = self.intercept
            + self
                .weights
                .iter()
                .zip(member_scores)
                .map(|(w, s)| w * s)
                .sum::<f64>();
        if self.clamp {
            raw.clamp(0.0, 1.0)
        } else {
            raw
        }
    }
}

/// One supervised example: evaluator scores for a candidate and its human score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub target: f64,
}

/// Train/validation/test partition with a fixed feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedSplit {
    pub features: Vec<ModelId>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Judgments dropped because a feature score was missing.
    #[serde(default)]
    pub dropped: usize,
}

/// Fractions used when judgments carry no split label.
pub const DEFAULT_SPLIT_FRACTIONS: (f64, f64) = (0.8, 0.1);

impl SupervisedSplit {
    /// Joins human judgments with evaluator scores on `(image_id, generator)`.
    ///
    /// Judgments with a `split` label keep it. Unlabelled ones are shuffled
    /// with `seed` and cut into train/val/test by `fractions` (train, val).
    pub fn from_records(
        judgments: &[HumanJudgmentRecord],
        scores: &[ScoreRecord],
        features: &[ModelId],
        setting: Setting,
        fractions: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Validation("no feature evaluators given".into()));
        }
        let fidx: HashMap<&ModelId, usize> = features.iter().enumerate().map(|(i, f)| (f, i)).collect();
        let mut table: HashMap<(&str, &ModelId), Vec<Option<f64>>> = HashMap::new();
        for s in scores.iter().filter(|s| s.setting == setting) {
            if let Some(&j) = fidx.get(&s.evaluator) {
                table
                    .entry((s.image_id.as_str(), &s.generator))
                    .or_insert_with(|| vec![None; features.len()])[j] = Some(s.score);
            }
        }

        let mut seen = BTreeSet::new();
        let mut labelled: BTreeMap<SplitName, Vec<Sample>> = BTreeMap::new();
        let mut unlabelled = Vec::new();
        let mut dropped = 0;
        for j in judgments {
            let id = format!("{}/{}", j.image_id, j.generator);
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateKey(format!("judgment {id}")));
            }
            if setting == Setting::ReferenceBased && j.references.is_empty() {
                return Err(Error::Validation(format!(
                    "judgment {id} has no references in the reference-based setting"
                )));
            }
            let Some(row) = table.get(&(j.image_id.as_str(), &j.generator)) else {
                dropped += 1;
                continue;
            };
            let Some(features) = row.iter().copied().collect::<Option<Vec<f64>>>() else {
                dropped += 1;
                continue;
            };
            let sample = Sample {
                id,
                features,
                target: j.human_score,
            };
            match j.split {
                Some(name) => labelled.entry(name).or_default().push(sample),
                None => unlabelled.push(sample),
            }
        }

        unlabelled.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        unlabelled.shuffle(&mut rng);
        let n = unlabelled.len();
        let n_train = (n as f64 * fractions.0).round() as usize;
        let n_val = ((n as f64 * fractions.1).round() as usize).min(n - n_train);
        let mut rest = unlabelled.into_iter();
        let mut train: Vec<Sample> = labelled.remove(&SplitName::Train).unwrap_or_default();
        train.extend(rest.by_ref().take(n_train));
        let mut val: Vec<Sample> = labelled.remove(&SplitName::Val).unwrap_or_default();
        val.extend(rest.by_ref().take(n_val));
        let mut test: Vec<Sample> = labelled.remove(&SplitName::Test).unwrap_or_default();
        test.extend(rest);

        Ok(SupervisedSplit {
            features: features.to_vec(),
            train,
            val,
            test,
            dropped,
        })
    }

    pub(crate) fn columns_of(&self, members: &[ModelId]) -> Result<Vec<usize>> {
        members
            .iter()
            .map(|m| {
                self.features.iter().position(|f| f == m).ok_or_else(|| Error::UnknownReference {
                    kind: "ensemble member",
                    id: m.to_string(),
                })
            })
            .collect()
    }
}

pub(crate) fn project(samples: &[Sample], cols: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = samples
        .iter()
        .map(|s| cols.iter().map(|&c| s.features[c]).collect())
        .collect();
    let y = samples.iter().map(|s| s.target).collect();
    (x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEvaluation {
    pub tau_b: f64,
    pub tau_c: f64,
    pub n: usize,
}

/// Rank agreement between ensemble predictions and human scores on the test split.
pub fn evaluate_ensemble(spec: &EnsembleSpec, split: &SupervisedSplit) -> Result<EnsembleEvaluation> {
    evaluate_on(spec, split, &split.test)
}

/// Same as [`evaluate_ensemble`] on the validation split.
pub fn evaluate_on_validation(spec: &EnsembleSpec, split: &SupervisedSplit) -> Result<EnsembleEvaluation> {
    evaluate_on(spec, split, &split.val)
}

pub(crate) fn evaluate_on(spec: &EnsembleSpec, split: &SupervisedSplit, samples: &[Sample]) -> Result<EnsembleEvaluation> {
    spec.validate()?;
    let cols = split.columns_of(&spec.members)?;
    let (x, y) = project(samples, &cols);
    let pred: Vec<f64> = x.iter().map(|r| spec.predict(r)).collect();
    Ok(EnsembleEvaluation {
        tau_b: kendall_tau_b(&pred, &y)?,
        tau_c: kendall_tau_c(&pred, &y)?,
        n: samples.len(),
    })
}

/// Rank agreement of one evaluator with human scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorCorrelation {
    pub evaluator: ModelId,
    pub n: usize,
    pub tau_b: f64,
    pub tau_c: f64,
}

/// Kendall tau of every evaluator against human judgments, over all judged
/// captions the evaluator scored (split labels are ignored).
pub fn correlate_evaluators(
    judgments: &[HumanJudgmentRecord],
    scores: &[ScoreRecord],
    evaluators: &[ModelId],
    setting: Setting,
) -> Result<Vec<EvaluatorCorrelation>> {
    evaluators
        .iter()
        .map(|e| {
            let split = SupervisedSplit::from_records(judgments, scores, std::slice::from_ref(e), setting, (1.0, 0.0), 0)?;
            let all: Vec<&Sample> = split.train.iter().chain(&split.val).chain(&split.test).collect();
            let x: Vec<f64> = all.iter().map(|s| s.features[0]).collect();
            let y: Vec<f64> = all.iter().map(|s| s.target).collect();
            Ok(EvaluatorCorrelation {
                evaluator: e.clone(),
                n: x.len(),
                tau_b: kendall_tau_b(&x, &y)?,
                tau_c: kendall_tau_c(&x, &y)?,
            })
        })
        .collect()
}

/// Score matrix with the ensemble appended as an extra evaluator column.
///
/// For each (generator, image) with every member's score present, the
/// ensemble score is the spec's prediction; the column is the per-generator
/// mean of those predictions, subject to the same coverage floor.
pub fn augment_phi_matrix(
    scores: &[ScoreRecord],
    manifest: &RunManifest,
    setting: Setting,
    spec: &EnsembleSpec,
    min_coverage: f64,
) -> Result<ScoreMatrix> {
    spec.validate()?;
    let ensemble_id = ModelId::new(ENSEMBLE_ID)?;
    if manifest.evaluators.contains(&ensemble_id) || manifest.generators.contains(&ensemble_id) {
        return Err(Error::Validation(format!("model id `{ENSEMBLE_ID}` is reserved for the ensemble column")));
    }
    let mut phi = matrix::build_phi(scores, manifest, setting, min_coverage)?;

    let midx: HashMap<&ModelId, usize> = spec.members.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut seen_members = vec![false; spec.members.len()];
    let mut per_item: HashMap<(&str, &ModelId), Vec<Option<f64>>> = HashMap::new();
    for s in scores.iter().filter(|s| s.setting == setting) {
        if let Some(&m) = midx.get(&s.evaluator) {
            seen_members[m] = true;
            per_item
                .entry((s.image_id.as_str(), &s.generator))
                .or_insert_with(|| vec![None; spec.members.len()])[m] = Some(s.score);
        }
    }
    if let Some(m) = seen_members.iter().position(|s| !s) {
        return Err(Error::UnknownReference {
            kind: "ensemble member",
            id: spec.members[m].to_string(),
        });
    }

    let n_images = manifest.n_images();
    for (i, generator) in manifest.generators.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for image in manifest.image_ids() {
            if let Some(row) = per_item.get(&(image, generator)) {
                if let Some(member_scores) = row.iter().copied().collect::<Option<Vec<f64>>>() {
                    sum += spec.predict(&member_scores);
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::EmptyCell {
                generator: generator.to_string(),
                evaluator: ENSEMBLE_ID.into(),
            });
        }
        let coverage = count as f64 / n_images as f64;
        if coverage < min_coverage {
            return Err(Error::CoverageBelowFloor {
                generator: generator.to_string(),
                evaluator: ENSEMBLE_ID.into(),
                coverage,
                floor: min_coverage,
            });
        }
        phi.values[i].push(sum / count as f64);
        phi.counts[i].push(count);
    }
    phi.evaluators.push(ensemble_id);
    if !phi.column_raw_sums.is_empty() {
        phi.column_raw_sums.push(None);
    }
    Ok(phi)
}

/// Standardised matrix including the ensemble column (no ensemble row).
pub fn augment_phi_with_ensemble(
    scores: &[ScoreRecord],
    manifest: &RunManifest,
    setting: Setting,
    spec: &EnsembleSpec,
    min_coverage: f64,
) -> Result<StandardizedMatrix> {
    matrix::standardize(&augment_phi_matrix(scores, manifest, setting, spec, min_coverage)?)
}

/// Ensemble column entries, keyed by generator.
pub fn ensemble_column(augmented: &StandardizedMatrix) -> Result<BTreeMap<ModelId, f64>> {
    let id = ModelId::new(ENSEMBLE_ID)?;
    let col = augmented
        .column(&id)
        .ok_or_else(|| Error::AxisMismatch(format!("matrix has no `{ENSEMBLE_ID}` column")))?;
    Ok(augmented.generators.iter().cloned().zip(col).collect())
}

/// Summary self-preference of the ensemble: the mean of its column over
/// members that are also generators.
pub fn pomms_phi_score(augmented: &StandardizedMatrix, spec: &EnsembleSpec) -> Result<f64> {
    let column = ensemble_column(augmented)?;
    let vals: Vec<f64> = spec.members.iter().filter_map(|m| column.get(m).copied()).collect();
    if vals.is_empty() {
        return Err(Error::Validation("no ensemble member is a generator".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}
