use serde::{Deserialize, Serialize};

use super::elastic_net::{fit_elastic_net, ElasticNetParams};
use super::{project, EnsembleSpec, SupervisedSplit};
use crate::error::{Error, Result};
use crate::model::ModelId;
use crate::rank::{distinct_levels, kendall_tau_b};

/// Hyperparameter grid searched for every candidate subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Default for HyperGrid {
    /// Seven log-spaced lambdas over [1e-4, 1e1] and five alphas over [0, 1].
    fn default() -> Self {
        HyperGrid {
            lambdas: (0..7).map(|i| 10f64.powf(-4.0 + 5.0 * i as f64 / 6.0)).collect(),
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfsOptions {
    pub grid: HyperGrid,
    pub max_size: usize,
    pub clamp: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub standardize: bool,
}

impl Default for SfsOptions {
    fn default() -> Self {
        SfsOptions {
            grid: HyperGrid::default(),
            max_size: 6,
            clamp: true,
            tol: 1e-6,
            max_iter: 10_000,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoImprovement,
    MaxSize,
    CandidatesExhausted,
}

/// One line of the selection trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfsStep {
    pub step: usize,
    pub members: Vec<ModelId>,
    pub added: Option<ModelId>,
    /// Best validation tau-b of the current member set (for the stop entry,
    /// the best rejected extension, if any).
    pub val_tau_b: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub stop: Option<StopReason>,
}

struct Scored {
    tau: f64,
    spec: EnsembleSpec,
}

/// Fits `members` over the grid on train and keeps the best validation tau-b.
/// Returns `None` if every grid point fails or yields tied predictions.
fn best_over_grid(members: &[ModelId], split: &SupervisedSplit, opts: &SfsOptions) -> Result<Option<Scored>> {
    let cols = split.columns_of(members)?;
    let (x_train, y_train) = project(&split.train, &cols);
    let (x_val, y_val) = project(&split.val, &cols);
    let mut best: Option<Scored> = None;
    for &lambda in &opts.grid.lambdas {
        for &alpha in &opts.grid.alphas {
            let params = ElasticNetParams {
                lambda,
                alpha,
                tol: opts.tol,
                max_iter: opts.max_iter,
                standardize: opts.standardize,
            };
            let fit = match fit_elastic_net(&x_train, &y_train, &params) {
                Ok(f) => f,
                Err(Error::NoConvergence { .. }) => {
                    log::debug!("no convergence for {members:?} at lambda={lambda} alpha={alpha}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let spec = EnsembleSpec {
                members: members.to_vec(),
                weights: fit.weights,
                intercept: fit.intercept,
                lambda,
                alpha,
                clamp: opts.clamp,
            };
            let pred: Vec<f64> = x_val.iter().map(|r| spec.predict(r)).collect();
            let Ok(tau) = kendall_tau_b(&pred, &y_val) else {
                continue;
            };
            if best.as_ref().is_none_or(|b| tau > b.tau) {
                best = Some(Scored { tau, spec });
            }
        }
    }
    Ok(best)
}

/// Greedy forward selection of ensemble members.
///
/// Each step tries every remaining candidate, refits over the whole grid,
/// and adds the candidate with the highest validation tau-b (ties go to the
/// lexicographically smaller id). Selection stops when the best addition does
/// not strictly improve validation tau-b or `max_size` members are chosen.
pub fn sfs_select(
    candidates: &[ModelId],
    split: &SupervisedSplit,
    opts: &SfsOptions,
) -> Result<(EnsembleSpec, Vec<SfsStep>)> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidate evaluators".into()));
    }
    if opts.max_size == 0 {
        return Err(Error::OutOfRange("max_size must be at least 1".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let val_targets: Vec<f64> = split.val.iter().map(|s| s.target).collect();
    if val_targets.len() < 2 || distinct_levels(&val_targets) < 2 {
        return Err(Error::Degenerate("validation targets are all tied".into()));
    }
    split.columns_of(candidates)?;

    let mut remaining: Vec<ModelId> = candidates.to_vec();
    remaining.sort();
    remaining.dedup();
    let mut members: Vec<ModelId> = Vec::new();
    let mut current: Option<Scored> = None;
    let mut trace = Vec::new();

    loop {
        if members.len() >= opts.max_size {
            trace.push(stop_entry(trace.len() + 1, &members, None, StopReason::MaxSize));
            break;
        }
        if remaining.is_empty() {
            trace.push(stop_entry(trace.len() + 1, &members, None, StopReason::CandidatesExhausted));
            break;
        }
        let mut best: Option<(usize, Scored)> = None;
        for (idx, cand) in remaining.iter().enumerate() {
            let mut trial = members.clone();
            trial.push(cand.clone());
            if let Some(scored) = best_over_grid(&trial, split, opts)? {
                // `remaining` is sorted, so strict > keeps the smaller id on ties.
                if best.as_ref().is_none_or(|(_, b)| scored.tau > b.tau) {
                    best = Some((idx, scored));
                }
            }
        }
        let Some((idx, scored)) = best else {
            if current.is_none() {
                return Err(Error::Degenerate(
                    "no candidate produced non-constant validation predictions".into(),
                ));
            }
            trace.push(stop_entry(trace.len() + 1, &members, None, StopReason::NoImprovement));
            break;
        };
        if let Some(cur) = &current {
            if scored.tau <= cur.tau {
                trace.push(stop_entry(trace.len() + 1, &members, Some(scored.tau), StopReason::NoImprovement));
                break;
            }
        }
        let added = remaining.remove(idx);
        members.push(added.clone());
        trace.push(SfsStep {
            step: trace.len() + 1,
            members: members.clone(),
            added: Some(added),
            val_tau_b: Some(scored.tau),
            lambda: Some(scored.spec.lambda),
            alpha: Some(scored.spec.alpha),
            stop: None,
        });
        current = Some(scored);
    }

    let spec = current.expect("at least one member selected").spec;
    Ok((spec, trace))
}

fn stop_entry(step: usize, members: &[ModelId], tau: Option<f64>, reason: StopReason) -> SfsStep {
    SfsStep {
        step,
        members: members.to_vec(),
        added: None,
        val_tau_b: tau,
        lambda: None,
        alpha: None,
        stop: Some(reason),
    }
}
