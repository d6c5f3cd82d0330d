//! Caption generation and score collection against chat-completion endpoints.

pub mod client;
pub mod journal;
pub mod mock;
pub mod parse;
pub mod prompt;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_channel::unbounded;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaptionRecord, ImageEntry, ModelId, RunManifest, ScoreRecord, Setting};

pub use client::{ChatClient, EndpointConfig, ImageTransport};
pub use journal::{missing_path, Journal, Journaled, MissingEntry};
pub use mock::{MockReply, MockRequest, MockServer};
pub use parse::parse_score;
pub use prompt::{render_prompt, PromptBundle};

/// What a collection run did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary<T> {
    /// Everything now in the journal, prior entries first.
    pub records: Vec<T>,
    pub already_done: usize,
    pub written: usize,
    pub missing: usize,
    pub http_calls: usize,
}

/// One unit of work.
struct Job {
    endpoint: usize,
    key: Vec<String>,
    image: usize,
    kind: JobKind,
}

enum JobKind {
    Caption { generator: ModelId },
    Score { generator: ModelId, evaluator: ModelId, setting: Setting, caption: String },
}

enum Outcome<T> {
    Done(T),
    Missing(MissingEntry),
    Fatal(Error),
}

struct Ctx<'a> {
    manifest: &'a RunManifest,
    bundle: &'a PromptBundle,
}

impl Ctx<'_> {
    fn image(&self, job: &Job) -> &ImageEntry {
        &self.manifest.images[job.image]
    }

    fn prompt(&self, job: &Job) -> Result<String> {
        match &job.kind {
            JobKind::Caption { .. } => Ok(self.bundle.generation_prompt.clone()),
            JobKind::Score { setting, caption, .. } => {
                let refs = match setting {
                    Setting::ReferenceBased => self.manifest.references_for(&self.image(job).image_id),
                    Setting::ReferenceFree => None,
                };
                render_prompt(self.bundle, *setting, caption, refs)
            }
        }
    }
}

trait FromReply: Sized {
    fn from_reply(job: &Job, image_id: &str, reply: String) -> Result<Self>;
}

impl FromReply for ScoreRecord {
    fn from_reply(job: &Job, image_id: &str, reply: String) -> Result<Self> {
        let JobKind::Score { generator, evaluator, setting, .. } = &job.kind else {
            unreachable!("score job expected")
        };
        let raw = parse_score(&reply)?;
        let mut rec = ScoreRecord::new(image_id, generator.clone(), evaluator.clone(), *setting, raw)?;
        rec.raw_response = Some(reply);
        Ok(rec)
    }
}

impl FromReply for CaptionRecord {
    fn from_reply(job: &Job, image_id: &str, reply: String) -> Result<Self> {
        let JobKind::Caption { generator } = &job.kind else {
            unreachable!("caption job expected")
        };
        let caption = reply.trim();
        if caption.is_empty() {
            return Err(Error::Parse("empty caption".into()));
        }
        Ok(CaptionRecord {
            image_id: image_id.to_string(),
            generator: generator.clone(),
            caption: caption.to_string(),
            extra: BTreeMap::new(),
        })
    }
}

fn clients_for(ids: &[ModelId], endpoints: &BTreeMap<ModelId, EndpointConfig>) -> Result<Vec<Arc<ChatClient>>> {
    ids.iter()
        .map(|id| {
            let cfg = endpoints.get(id).ok_or_else(|| Error::UnknownReference {
                kind: "endpoint",
                id: id.to_string(),
            })?;
            Ok(Arc::new(ChatClient::new(cfg.clone())?))
        })
        .collect()
}

fn attempt_job<T: FromReply>(ctx: &Ctx<'_>, client: &ChatClient, job: &Job, calls: &AtomicUsize) -> Outcome<T> {
    let prompt = match ctx.prompt(job) {
        Ok(p) => p,
        Err(e) => return Outcome::Fatal(e),
    };
    let image = ctx.image(job);
    let payload = match client::image_payload(image, client.config.image_transport) {
        Ok(p) => p,
        Err(e) => return Outcome::Fatal(e),
    };
    let attempts = client.config.max_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        calls.fetch_add(1, Ordering::Relaxed);
        match client
            .complete(&prompt, payload.as_deref())
            .and_then(|reply| T::from_reply(job, &image.image_id, reply))
        {
            Ok(rec) => return Outcome::Done(rec),
            Err(e @ (Error::Parse(_) | Error::Transport(_))) => {
                log::debug!("{} attempt {}: {e}", job.key.join("/"), attempt + 1);
                last = e.to_string();
                if attempt + 1 < attempts {
                    std::thread::sleep(client.backoff(attempt));
                }
            }
            Err(e) => return Outcome::Fatal(e),
        }
    }
    log::warn!(
        "{} ({}): giving up after {attempts} attempts: {last}",
        job.key.join("/"),
        client.config.model_name
    );
    Outcome::Missing(MissingEntry { key: job.key.clone(), attempts, error: last })
}

/// Runs jobs on per-endpoint worker pools and journals results in job order.
fn run_jobs<T: Journaled + FromReply + Send>(
    ctx: &Ctx<'_>,
    clients: &[Arc<ChatClient>],
    jobs: Vec<Job>,
    journal: &mut Journal<T>,
) -> Result<(usize, usize, usize)> {
    let calls = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (result_tx, result_rx) = unbounded::<(usize, Outcome<T>)>();
    let mut queues = Vec::with_capacity(clients.len());
    let mut written = 0;
    let mut missing = 0;
    let total = jobs.len();

    let outcome = std::thread::scope(|scope| -> Result<()> {
        for client in clients {
            let (tx, rx) = unbounded::<usize>();
            queues.push(tx);
            for _ in 0..client.config.max_parallel {
                let rx = rx.clone();
                let result_tx = result_tx.clone();
                let (jobs, calls, abort) = (&jobs, &calls, &abort);
                scope.spawn(move || {
                    for idx in rx.iter() {
                        if abort.load(Ordering::Relaxed) {
                            break;
                        }
                        let out = attempt_job::<T>(ctx, client, &jobs[idx], calls);
                        if result_tx.send((idx, out)).is_err() {
                            break;
                        }
                    }
                });
            }
        }
        drop(result_tx);
        for (idx, job) in jobs.iter().enumerate() {
            queues[job.endpoint].send(idx).expect("worker queue open");
        }
        queues.clear();

        // Single writer; the reorder buffer keeps the journal in job order.
        let mut pending: BTreeMap<usize, Outcome<T>> = BTreeMap::new();
        let mut next = 0;
        let write = |out: Outcome<T>, journal: &mut Journal<T>, written: &mut usize, missing: &mut usize| match out {
            Outcome::Done(rec) => journal.append(rec).map(|_| *written += 1),
            Outcome::Missing(m) => journal.append_missing(m).map(|_| *missing += 1),
            Outcome::Fatal(e) => Err(e),
        };
        for (idx, out) in result_rx.iter() {
            pending.insert(idx, out);
            while let Some(out) = pending.remove(&next) {
                if let Err(e) = write(out, journal, &mut written, &mut missing) {
                    abort.store(true, Ordering::Relaxed);
                    return Err(e);
                }
                next += 1;
                if next % 1000 == 0 {
                    log::info!("{}: {next}/{total} jobs journaled", journal.path().display());
                }
            }
        }
        Ok(())
    });
    outcome?;
    Ok((written, missing, calls.into_inner()))
}

/// Asks every generator endpoint for a caption of every image.
pub fn generate_captions(
    manifest: &RunManifest,
    endpoints: &BTreeMap<ModelId, EndpointConfig>,
    bundle: &PromptBundle,
    journal_path: &Path,
) -> Result<CollectSummary<CaptionRecord>> {
    manifest.validate()?;
    bundle.validate()?;
    let clients = clients_for(&manifest.generators, endpoints)?;
    let mut journal: Journal<CaptionRecord> = Journal::open(journal_path)?;
    let prior = journal.records().len() + journal.missing().len();
    let mut jobs = Vec::new();
    for (image, entry) in manifest.images.iter().enumerate() {
        for (endpoint, generator) in manifest.generators.iter().enumerate() {
            let key = journal::caption_key(&entry.image_id, generator.as_str());
            if journal.is_done(&key) {
                continue;
            }
            jobs.push(Job { endpoint, key, image, kind: JobKind::Caption { generator: generator.clone() } });
        }
    }
    let ctx = Ctx { manifest, bundle };
    let (written, missing, http_calls) = run_jobs(&ctx, &clients, jobs, &mut journal)?;
    Ok(CollectSummary { records: journal.into_records(), already_done: prior, written, missing, http_calls })
}

/// Scores every caption with every evaluator in every manifest setting.
///
/// Jobs already in the journal (scored or given up on) are skipped, so a
/// rerun on a complete journal makes no requests. Captions absent from
/// `captions` leave their cells unscored; coverage is checked downstream.
pub fn collect_scores(
    manifest: &RunManifest,
    captions: &[CaptionRecord],
    endpoints: &BTreeMap<ModelId, EndpointConfig>,
    bundle: &PromptBundle,
    journal_path: &Path,
) -> Result<CollectSummary<ScoreRecord>> {
    manifest.validate()?;
    bundle.validate()?;
    if manifest.settings.contains(&Setting::ReferenceBased) {
        if let Some(img) = manifest.images.iter().find(|i| manifest.references_for(&i.image_id).is_none_or(|r| r.is_empty())) {
            return Err(Error::Validation(format!(
                "image `{}` has no references for the ref-based setting",
                img.image_id
            )));
        }
    }
    let clients = clients_for(&manifest.evaluators, endpoints)?;
    let mut by_cell: HashMap<(&str, &str), &str> = HashMap::new();
    for c in captions {
        if by_cell.insert((&c.image_id, c.generator.as_str()), &c.caption).is_some() {
            return Err(Error::DuplicateKey(format!("caption ({}, {})", c.image_id, c.generator)));
        }
    }
    let mut journal: Journal<ScoreRecord> = Journal::open(journal_path)?;
    let prior = journal.records().len() + journal.missing().len();
    let mut jobs = Vec::new();
    let mut uncaptioned = 0usize;
    for &setting in &manifest.settings {
        for (image, entry) in manifest.images.iter().enumerate() {
            for generator in &manifest.generators {
                let Some(caption) = by_cell.get(&(entry.image_id.as_str(), generator.as_str())) else {
                    uncaptioned += 1;
                    continue;
                };
                for (endpoint, evaluator) in manifest.evaluators.iter().enumerate() {
                    let key = journal::score_key(setting.as_str(), &entry.image_id, generator.as_str(), evaluator.as_str());
                    if journal.is_done(&key) {
                        continue;
                    }
                    jobs.push(Job {
                        endpoint,
                        key,
                        image,
                        kind: JobKind::Score {
                            generator: generator.clone(),
                            evaluator: evaluator.clone(),
                            setting,
                            caption: caption.to_string(),
                        },
                    });
                }
            }
        }
    }
    if uncaptioned > 0 {
        log::warn!("{uncaptioned} (setting, image, generator) combinations have no caption and were skipped");
    }
    let ctx = Ctx { manifest, bundle };
    let (written, missing, http_calls) = run_jobs(&ctx, &clients, jobs, &mut journal)?;
    Ok(CollectSummary { records: journal.into_records(), already_done: prior, written, missing, http_calls })
}
