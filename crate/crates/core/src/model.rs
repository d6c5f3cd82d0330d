//! Domain records, their JSONL file formats, and dataset coverage accounting.
//!
//! Every record type is stored as one JSON object per line. The canonical
//! writer emits keys in sorted order and floats in shortest round-trip form,
//! so writing the same records twice yields identical bytes. Fields the
//! schema does not know about are kept in `extra` and written back out.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Identifier of a model acting as a generator and/or evaluator.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidRecord("model id must not be empty".into()));
        }
        if id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidRecord(format!(
                "model id `{id}` must not contain whitespace"
            )));
        }
        Ok(ModelId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        ModelId::new(value)
    }
}

impl From<ModelId> for String {
    fn from(id: ModelId) -> String {
        id.0
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelId::new(s)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ModelId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Whether the judge prompt includes human reference captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "ref-based")]
    ReferenceBased,
    #[serde(rename = "ref-free")]
    ReferenceFree,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::ReferenceBased, Setting::ReferenceFree];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::ReferenceBased => "ref-based",
            Setting::ReferenceFree => "ref-free",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref-based" => Ok(Setting::ReferenceBased),
            "ref-free" => Ok(Setting::ReferenceFree),
            other => Err(Error::InvalidRecord(format!(
                "unknown setting `{other}` (expected ref-based or ref-free)"
            ))),
        }
    }
}

/// Records that can be checked after decoding.
pub trait Record: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<()>;
}

/// A caption produced by one generator for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub generator: ModelId,
    pub caption: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Record for CaptionRecord {
    fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidRecord("image_id must not be empty".into()));
        }
        if self.caption.trim().is_empty() {
            return Err(Error::InvalidRecord("caption must not be empty".into()));
        }
        Ok(())
    }
}

/// One evaluator's score for one generator's caption of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub generator: ModelId,
    pub evaluator: ModelId,
    pub setting: Setting,
    pub raw_score: u32,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl ScoreRecord {
    /// Builds a record from an integer 0-100 score; `score` is derived as raw/100.
    pub fn new(
        image_id: impl Into<String>,
        generator: ModelId,
        evaluator: ModelId,
        setting: Setting,
        raw_score: u32,
    ) -> Result<Self> {
        if raw_score > 100 {
            return Err(Error::OutOfRange(format!(
                "raw_score {raw_score} outside 0..=100"
            )));
        }
        Ok(ScoreRecord {
            image_id: image_id.into(),
            generator,
            evaluator,
            setting,
            raw_score,
            score: normalize_raw(raw_score),
            raw_response: None,
            extra: BTreeMap::new(),
        })
    }

    pub fn key(&self) -> ScoreKey {
        ScoreKey {
            image_id: self.image_id.clone(),
            generator: self.generator.clone(),
            evaluator: self.evaluator.clone(),
            setting: self.setting,
        }
    }
}

/// Linear 0-100 to [0,1] normalisation.
pub fn normalize_raw(raw_score: u32) -> f64 {
    raw_score as f64 / 100.0
}

impl Record for ScoreRecord {
    fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidRecord("image_id must not be empty".into()));
        }
        if self.raw_score > 100 {
            return Err(Error::OutOfRange(format!(
                "raw_score {} outside 0..=100",
                self.raw_score
            )));
        }
        if self.score != normalize_raw(self.raw_score) {
            return Err(Error::InvalidRecord(format!(
                "score {} must equal raw_score/100 = {}",
                self.score,
                normalize_raw(self.raw_score)
            )));
        }
        Ok(())
    }
}

/// Uniqueness key of a score record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScoreKey {
    pub image_id: String,
    pub generator: ModelId,
    pub evaluator: ModelId,
    pub setting: Setting,
}

impl fmt::Display for ScoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(image={}, generator={}, evaluator={}, setting={})",
            self.image_id, self.generator, self.evaluator, self.setting
        )
    }
}

/// Which partition of a supervised benchmark a judgment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// A human quality judgment of a candidate caption.
///
/// `generator` names the source of the candidate and joins the judgment to
/// score records keyed by `(image_id, generator)`. Benchmarks without a
/// notion of generator can use any fixed id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanJudgmentRecord {
    pub image_id: String,
    #[serde(default = "default_candidate_source")]
    pub generator: ModelId,
    pub candidate: String,
    pub references: Vec<String>,
    pub human_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitName>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

fn default_candidate_source() -> ModelId {
    ModelId("candidate".to_string())
}

impl Record for HumanJudgmentRecord {
    fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidRecord("image_id must not be empty".into()));
        }
        if !self.human_score.is_finite() {
            return Err(Error::InvalidRecord("human_score must be finite".into()));
        }
        Ok(())
    }
}

/// An image in the run and where to load it from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

/// The universe of models, images, references and settings for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub generators: Vec<ModelId>,
    pub evaluators: Vec<ModelId>,
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub references: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_settings")]
    pub settings: Vec<Setting>,
}

fn default_settings() -> Vec<Setting> {
    Setting::ALL.to_vec()
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, ids) in [("generator", &self.generators), ("evaluator", &self.evaluators)] {
            let unique: BTreeSet<_> = ids.iter().collect();
            if unique.len() != ids.len() {
                return Err(Error::Validation(format!("duplicate {axis} id in manifest")));
            }
        }
        let images: BTreeSet<_> = self.images.iter().map(|i| &i.image_id).collect();
        if images.len() != self.images.len() {
            return Err(Error::Validation("duplicate image id in manifest".into()));
        }
        if self.images.is_empty() {
            return Err(Error::Validation("manifest lists no images".into()));
        }
        Ok(())
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.images.iter().map(|i| i.image_id.as_str())
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn references_for(&self, image_id: &str) -> Option<&[String]> {
        self.references.get(image_id).map(Vec::as_slice)
    }
}

/// A decoded record together with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Numbered<T> {
    pub line: usize,
    pub record: T,
}

/// Reads a JSONL file into typed records, keeping line numbers.
///
/// Blank lines are skipped. Each record is validated after decoding; the
/// first failure aborts with the offending line number.
pub fn load_records<T: Record>(path: &Path) -> Result<Vec<Numbered<T>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Numbered {
            line: idx + 1,
            record: decode_line(path, idx + 1, &line)?,
        });
    }
    Ok(out)
}

/// Like [`load_records`] but drops the line numbers.
pub fn read_records<T: Record>(path: &Path) -> Result<Vec<T>> {
    Ok(load_records(path)?.into_iter().map(|n| n.record).collect())
}

pub(crate) fn decode_line<T: Record>(path: &Path, line_no: usize, line: &str) -> Result<T> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })?;
    let record: T = serde_json::from_value(value).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })?;
    record.validate().map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(record)
}

/// Canonical single-line encoding: sorted keys, shortest round-trip floats.
pub fn to_canonical_line<T: Serialize>(record: &T) -> Result<String> {
    // serde_json's Map is a BTreeMap here, so going through Value sorts keys.
    let value = serde_json::to_value(record)?;
    Ok(serde_json::to_string(&value)?)
}

/// Writes records as canonical JSONL, replacing any existing file.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        writeln!(w, "{}", to_canonical_line(record)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The kinds of JSONL files the pipeline reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Captions,
    Scores,
    Judgments,
}

impl FromStr for RecordKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "captions" => Ok(RecordKind::Captions),
            "scores" => Ok(RecordKind::Scores),
            "judgments" => Ok(RecordKind::Judgments),
            other => Err(Error::InvalidRecord(format!("unknown record kind `{other}`"))),
        }
    }
}

/// Parses and validates a file of the given kind, returning the record count.
pub fn check_file(path: &Path, kind: RecordKind) -> Result<usize> {
    Ok(match kind {
        RecordKind::Captions => load_records::<CaptionRecord>(path)?.len(),
        RecordKind::Scores => load_records::<ScoreRecord>(path)?.len(),
        RecordKind::Judgments => load_records::<HumanJudgmentRecord>(path)?.len(),
    })
}

/// Coverage of one (generator, evaluator, setting) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub generator: ModelId,
    pub evaluator: ModelId,
    pub setting: Setting,
    pub count: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_images: usize,
    pub total_records: usize,
    pub cells: Vec<CoverageCell>,
}

impl CoverageReport {
    pub fn cell(&self, generator: &ModelId, evaluator: &ModelId, setting: Setting) -> Option<&CoverageCell> {
        self.cells
            .iter()
            .find(|c| &c.generator == generator && &c.evaluator == evaluator && c.setting == setting)
    }

    pub fn min_coverage(&self) -> f64 {
        self.cells.iter().map(|c| c.coverage).fold(1.0, f64::min)
    }

    pub fn cells_below(&self, floor: f64) -> impl Iterator<Item = &CoverageCell> {
        self.cells.iter().filter(move |c| c.coverage < floor)
    }
}

/// Checks scores against the manifest and counts per-cell coverage.
///
/// Fails on duplicate keys (all of them are listed) and on records that
/// reference a model, image, or setting outside the manifest.
pub fn validate_dataset(manifest: &RunManifest, scores: &[ScoreRecord]) -> Result<CoverageReport> {
    let generators: BTreeSet<&ModelId> = manifest.generators.iter().collect();
    let evaluators: BTreeSet<&ModelId> = manifest.evaluators.iter().collect();
    let images: BTreeSet<&str> = manifest.image_ids().collect();
    let settings: BTreeSet<Setting> = manifest.settings.iter().copied().collect();

    let mut seen: HashMap<ScoreKey, usize> = HashMap::with_capacity(scores.len());
    let mut counts: HashMap<(&ModelId, &ModelId, Setting), usize> = HashMap::new();
    for record in scores {
        record.validate()?;
        if !generators.contains(&record.generator) {
            return Err(Error::UnknownReference {
                kind: "generator",
                id: record.generator.to_string(),
            });
        }
        if !evaluators.contains(&record.evaluator) {
            return Err(Error::UnknownReference {
                kind: "evaluator",
                id: record.evaluator.to_string(),
            });
        }
        if !images.contains(record.image_id.as_str()) {
            return Err(Error::UnknownReference {
                kind: "image",
                id: record.image_id.clone(),
            });
        }
        if !settings.contains(&record.setting) {
            return Err(Error::UnknownReference {
                kind: "setting",
                id: record.setting.to_string(),
            });
        }
        *seen.entry(record.key()).or_default() += 1;
        *counts
            .entry((&record.generator, &record.evaluator, record.setting))
            .or_default() += 1;
    }

    let mut duplicates: Vec<&ScoreKey> = seen.iter().filter(|(_, &n)| n > 1).map(|(k, _)| k).collect();
    if !duplicates.is_empty() {
        duplicates.sort();
        let listed: Vec<String> = duplicates.iter().map(|k| k.to_string()).collect();
        return Err(Error::DuplicateKey(listed.join(", ")));
    }

    let n = manifest.n_images();
    let mut cells = Vec::new();
    for &setting in &manifest.settings {
        for generator in &manifest.generators {
            for evaluator in &manifest.evaluators {
                let count = counts.get(&(generator, evaluator, setting)).copied().unwrap_or(0);
                cells.push(CoverageCell {
                    generator: generator.clone(),
                    evaluator: evaluator.clone(),
                    setting,
                    count,
                    coverage: count as f64 / n as f64,
                });
            }
        }
    }
    Ok(CoverageReport {
        n_images: n,
        total_records: scores.len(),
        cells,
    })
}
