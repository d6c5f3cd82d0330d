//! Synthetic judge panels with known, injected preference bias.
//!
//! Evaluator `j` scores generator `i`'s caption of image `k` as
//! `clip(offset_j + scale_j * (quality_i + eta_ik + bias[i][j]) + eps_ijk, 0, 1)`
//! with `eps ~ Normal(0, noise_std)` and an optional per-item quality jitter
//! `eta ~ Normal(0, item_quality_std)`, then quantised to an integer 0-100
//! raw score. Each image draws from its own ChaCha stream, so output does
//! not depend on generation order.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::StandardizedMatrix;
use crate::model::{HumanJudgmentRecord, ImageEntry, ModelId, RunManifest, ScoreRecord, Setting};
use crate::rank::kendall_tau_b;

/// Maximum tolerated fraction of clipped scores.
pub const MAX_CLIP_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    pub n: usize,
    pub quality: Vec<f64>,
    pub evaluator_offset: Vec<f64>,
    pub evaluator_scale: Vec<f64>,
    /// `bias[i][j]`: evaluator j's bias toward generator i.
    pub bias: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub item_quality_std: f64,
    #[serde(default)]
    pub human_noise_std: f64,
    #[serde(default = "default_setting")]
    pub setting: Setting,
    /// Model ids; defaults to `sim-00`, `sim-01`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_ids: Option<Vec<ModelId>>,
}

fn default_setting() -> Setting {
    Setting::ReferenceFree
}

impl SimConfig {
    /// Identity evaluators, evenly spaced qualities in [0.35, 0.55], no bias.
    pub fn neutral(m: usize, n: usize, noise_std: f64, seed: u64) -> Self {
        let quality = (0..m)
            .map(|i| 0.35 + 0.2 * i as f64 / (m.max(2) - 1) as f64)
            .collect();
        SimConfig {
            m,
            n,
            quality,
            evaluator_offset: vec![0.0; m],
            evaluator_scale: vec![1.0; m],
            bias: vec![vec![0.0; m]; m],
            noise_std,
            seed,
            item_quality_std: 0.0,
            human_noise_std: 0.0,
            setting: Setting::ReferenceFree,
            model_ids: None,
        }
    }

    /// A panel with evaluator offsets in [-0.05, 0.05], scales in [0.8, 1.2]
    /// (drawn from `seed`) and the given self-bias on the diagonal.
    pub fn self_biased(m: usize, n: usize, diag_bias: &[f64], noise_std: f64, seed: u64) -> Self {
        let mut cfg = SimConfig::neutral(m, n, noise_std, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5e7);
        let off = Uniform::new(-0.05, 0.05).expect("valid range");
        let scale = Uniform::new(0.8, 1.2).expect("valid range");
        cfg.evaluator_offset = (0..m).map(|_| off.sample(&mut rng)).collect();
        cfg.evaluator_scale = (0..m).map(|_| scale.sample(&mut rng)).collect();
        for (i, b) in diag_bias.iter().enumerate().take(m) {
            cfg.bias[i][i] = *b;
        }
        cfg
    }

    pub fn ids(&self) -> Vec<ModelId> {
        match &self.model_ids {
            Some(ids) => ids.clone(),
            None => (0..self.m)
                .map(|i| ModelId::new(format!("sim-{i:02}")).expect("valid id"))
                .collect(),
        }
    }

    pub fn image_id(k: usize) -> String {
        format!("img-{k:05}")
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m;
        if m < 2 {
            return Err(Error::Validation(format!("simulation needs m >= 2, got {m}")));
        }
        if self.n < 1 {
            return Err(Error::Validation("simulation needs n >= 1".into()));
        }
        let lens = [
            ("quality", self.quality.len()),
            ("evaluator_offset", self.evaluator_offset.len()),
            ("evaluator_scale", self.evaluator_scale.len()),
            ("bias", self.bias.len()),
        ];
        for (name, len) in lens {
            if len != m {
                return Err(Error::Validation(format!("{name} has length {len}, expected {m}")));
            }
        }
        if self.bias.iter().any(|r| r.len() != m) {
            return Err(Error::Validation(format!("bias must be {m}x{m}")));
        }
        if self.evaluator_scale.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Validation("evaluator scales must be positive".into()));
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("item_quality_std", self.item_quality_std),
            ("human_noise_std", self.human_noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("{name} must be a non-negative number")));
            }
        }
        if let Some(ids) = &self.model_ids {
            if ids.len() != m {
                return Err(Error::Validation(format!("model_ids has length {}, expected {m}", ids.len())));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> RunManifest {
        let ids = self.ids();
        RunManifest {
            generators: ids.clone(),
            evaluators: ids,
            images: (0..self.n)
                .map(|k| ImageEntry {
                    image_id: SimConfig::image_id(k),
                    path: None,
                    url: None,
                })
                .collect(),
            references: BTreeMap::new(),
            settings: vec![self.setting],
        }
    }
}

fn image_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Draws the per-item quality jitter and returns the latent quality of every (i, k).
fn latent(config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let eta = Normal::new(0.0, config.item_quality_std).expect("validated std");
    config.quality.iter().map(|q| q + eta.sample(rng)).collect()
}

/// Generates `m * m * n` score records, deterministic in `seed`.
pub fn simulate_scores(config: &SimConfig) -> Result<Vec<ScoreRecord>> {
    config.validate()?;
    let ids = config.ids();
    let noise = Normal::new(0.0, config.noise_std).expect("validated std");
    let mut out = Vec::with_capacity(config.m * config.m * config.n);
    let mut clipped = 0usize;
    for k in 0..config.n {
        let mut rng = image_rng(config.seed, k);
        let quality = latent(config, &mut rng);
        let image_id = SimConfig::image_id(k);
        for i in 0..config.m {
            for j in 0..config.m {
                let eps = noise.sample(&mut rng);
                let raw = config.evaluator_offset[j]
                    + config.evaluator_scale[j] * (quality[i] + config.bias[i][j])
                    + eps;
                if !(0.0..=1.0).contains(&raw) {
                    clipped += 1;
                }
                let raw_score = (raw.clamp(0.0, 1.0) * 100.0).round() as u32;
                out.push(ScoreRecord::new(
                    image_id.clone(),
                    ids[i].clone(),
                    ids[j].clone(),
                    config.setting,
                    raw_score,
                )?);
            }
        }
    }
    let frac = clipped as f64 / out.len() as f64;
    if frac > MAX_CLIP_FRACTION {
        return Err(Error::Validation(format!(
            "{:.1}% of simulated scores were clipped to [0, 1]; the configuration saturates",
            100.0 * frac
        )));
    }
    Ok(out)
}

/// Human judgments for every (generator, image): the latent item quality
/// plus `human_noise_std` noise, from the same per-image streams as the scores.
pub fn simulate_judgments(config: &SimConfig) -> Result<Vec<HumanJudgmentRecord>> {
    config.validate()?;
    let ids = config.ids();
    let human = Normal::new(0.0, config.human_noise_std).expect("validated std");
    let mut out = Vec::with_capacity(config.m * config.n);
    for k in 0..config.n {
        let mut rng = image_rng(config.seed, k);
        let quality = latent(config, &mut rng);
        // Separate stream offset so judgments do not consume score noise.
        let mut hrng = image_rng(config.seed ^ 0x4a75_6467, k);
        let image_id = SimConfig::image_id(k);
        for (i, q) in quality.iter().enumerate() {
            out.push(HumanJudgmentRecord {
                image_id: image_id.clone(),
                generator: ids[i].clone(),
                candidate: format!("caption of {image_id} by {}", ids[i]),
                references: Vec::new(),
                human_score: q + human.sample(&mut hrng),
                split: None,
                extra: BTreeMap::new(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Fraction of generators whose self-score sign matches the sign of the
    /// injected self-bias excess over the evaluator's row mean.
    pub diag_sign_accuracy: f64,
    /// Tau-b between recovered and injected diagonals; `None` when the
    /// injected diagonal is constant.
    pub diag_rank_correlation: Option<f64>,
}

/// Compares a recovered standardised matrix against the injected bias.
pub fn recovery_report(phi_tilde: &StandardizedMatrix, config: &SimConfig) -> Result<RecoveryReport> {
    config.validate()?;
    let ids = config.ids();
    if phi_tilde.degenerate_rows.len() == phi_tilde.generators.len() {
        return Err(Error::Degenerate("every row of the matrix is degenerate".into()));
    }
    let mut recovered = Vec::with_capacity(config.m);
    let mut injected = Vec::with_capacity(config.m);
    let mut agree = 0usize;
    for (i, model) in ids.iter().enumerate() {
        let d = phi_tilde.get(model, model).ok_or_else(|| Error::UnknownReference {
            kind: "model",
            id: model.to_string(),
        })?;
        let row_mean = config.bias[i].iter().sum::<f64>() / config.m as f64;
        let excess = config.bias[i][i] - row_mean;
        if (d > 0.0) == (excess > 0.0) {
            agree += 1;
        }
        recovered.push(d);
        injected.push(config.bias[i][i]);
    }
    Ok(RecoveryReport {
        diag_sign_accuracy: agree as f64 / config.m as f64,
        diag_rank_correlation: kendall_tau_b(&recovered, &injected).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{build_phi, standardize};

    #[test]
    fn deterministic() {
        let cfg = SimConfig::self_biased(4, 20, &[0.1; 4], 0.02, 9);
        assert_eq!(simulate_scores(&cfg).unwrap(), simulate_scores(&cfg).unwrap());
        let other = SimConfig { seed: 10, ..cfg.clone() };
        assert_ne!(simulate_scores(&cfg).unwrap(), simulate_scores(&other).unwrap());
    }

    #[test]
    fn noiseless_unbiased_panel_is_all_zero() {
        let cfg = SimConfig::neutral(5, 10, 0.0, 1);
        let scores = simulate_scores(&cfg).unwrap();
        assert_eq!(scores.len(), 5 * 5 * 10);
        let phi = build_phi(&scores, &cfg.manifest(), cfg.setting, 1.0).unwrap();
        let t = standardize(&phi).unwrap();
        assert!(t.values.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(t.degenerate_rows.len(), 5);
    }

    #[test]
    fn saturation_guard() {
        let mut cfg = SimConfig::neutral(3, 10, 0.0, 1);
        cfg.evaluator_offset = vec![2.0; 3];
        assert!(simulate_scores(&cfg).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut cfg = SimConfig::neutral(3, 10, 0.0, 1);
        cfg.bias.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::neutral(3, 10, 0.0, 1);
        cfg.evaluator_scale[0] = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn judgments_track_latent_quality() {
        let mut cfg = SimConfig::neutral(3, 5, 0.0, 4);
        cfg.item_quality_std = 0.05;
        let j = simulate_judgments(&cfg).unwrap();
        assert_eq!(j.len(), 15);
        let s = simulate_scores(&cfg).unwrap();
        // With identity evaluators and no noise, each score is the rounded latent quality.
        for rec in &j {
            let matching = s
                .iter()
                .find(|r| r.image_id == rec.image_id && r.generator == rec.generator)
                .unwrap();
            assert!((matching.score - rec.human_score).abs() <= 0.005 + 1e-12);
        }
    }
}
