use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use philautia::collector::{self, EndpointConfig, PromptBundle};
use philautia::matrix::{self, ScoreMatrix, StandardizedMatrix, DEFAULT_MIN_COVERAGE};
use philautia::model::{self, RecordKind};
use philautia::pomms::{self, EnsembleSpec, SfsOptions, SupervisedSplit, DEFAULT_SPLIT_FRACTIONS};
use philautia::report::{self, ColorScale, ReportFormat};
use philautia::simulator::{self, SimConfig};
use philautia::{CaptionRecord, Error, HumanJudgmentRecord, ModelId, RunManifest, ScoreRecord, Setting};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "philautia", version, about = "Self-preference audits for panels of model judges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Data {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "ref-free")]
    setting: Setting,
    #[arg(long, default_value_t = DEFAULT_MIN_COVERAGE)]
    min_coverage: f64,
}

#[derive(Args)]
struct Supervised {
    #[arg(long)]
    judgments: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "ref-free")]
    setting: Setting,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Check a JSONL file, and with --manifest report per-cell coverage.
    Validate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value = "scores")]
        kind: RecordKind,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_COVERAGE)]
        min_coverage: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score captions with every evaluator endpoint, resuming from the journal at --out.
    Collect {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON object mapping model id to endpoint config.
        #[arg(long)]
        endpoints: PathBuf,
        #[arg(long)]
        captions: PathBuf,
        /// Ask generator endpoints for missing captions first, journaling to --captions.
        #[arg(long)]
        generate_captions: bool,
        /// JSON prompt bundle; the built-in prompts are used otherwise.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean score matrix as CSV.
    Phi {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a heatmap with a min-max colour scale.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Column-then-row standardised matrix as CSV.
    Standardize {
        #[command(flatten)]
        data: Data,
        /// Evaluators to leave out before standardising.
        #[arg(long, value_delimiter = ',')]
        drop_evaluators: Vec<ModelId>,
        #[arg(long, value_delimiter = ',')]
        drop_generators: Vec<ModelId>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Build the audit report (JSON) for one setting.
    Audit {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank k-model principal submatrices by positive off-diagonal count.
    Scan {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        k: usize,
        /// Keep only the best N subsets.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Change of each philautia score from ref-based to ref-free.
    Delta {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_COVERAGE)]
        min_coverage: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kendall tau of each evaluator against human judgments.
    Correlate {
        #[command(flatten)]
        sup: Supervised,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select and fit the judge ensemble.
    PommsTrain {
        #[command(flatten)]
        sup: Supervised,
        #[arg(long, default_value_t = 6)]
        max_size: usize,
        /// Restrict candidates to these evaluators.
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<ModelId>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a fitted ensemble on the test split.
    PommsEval {
        #[command(flatten)]
        sup: Supervised,
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Standardised matrix with the ensemble as an extra evaluator column.
    Augment {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Write a synthetic panel (manifest, scores, judgments) into a directory.
    Simulate {
        /// SimConfig JSON; overrides the shape flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        models: usize,
        #[arg(long, default_value_t = 500)]
        images: usize,
        #[arg(long, default_value_t = 0.1)]
        diag_bias: f64,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        item_quality_std: f64,
        #[arg(long, default_value_t = 0.0)]
        human_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an audit report as csv, markdown or json, optionally with heatmaps.
    Report {
        #[arg(long)]
        audit: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Heatmap of the standardised matrix.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Heatmap of the raw mean matrix.
        #[arg(long)]
        raw_svg: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?;
        }
    }
    Ok(())
}

fn json_text<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load_data(d: &Data) -> anyhow::Result<(RunManifest, Vec<ScoreRecord>)> {
    let manifest = RunManifest::load(&d.manifest)?;
    let scores = model::read_records(&d.scores)?;
    Ok((manifest, scores))
}

fn build(d: &Data) -> anyhow::Result<(RunManifest, Vec<ScoreRecord>, ScoreMatrix)> {
    let (manifest, scores) = load_data(d)?;
    let phi = matrix::build_phi(&scores, &manifest, d.setting, d.min_coverage)?;
    Ok((manifest, scores, phi))
}

fn write_svg(path: &Path, m: &StandardizedMatrix, title: &str) -> anyhow::Result<()> {
    report::write_heatmap_svg(&m.generators, &m.evaluators, &m.values, ColorScale::Diverging, Some(title), path)?;
    Ok(())
}

fn split_of(sup: &Supervised, features: &[ModelId]) -> anyhow::Result<SupervisedSplit> {
    let judgments: Vec<HumanJudgmentRecord> = model::read_records(&sup.judgments)?;
    let scores: Vec<ScoreRecord> = model::read_records(&sup.scores)?;
    let split =
        SupervisedSplit::from_records(&judgments, &scores, features, sup.setting, DEFAULT_SPLIT_FRACTIONS, sup.seed)?;
    if split.dropped > 0 {
        log::warn!("{} judgments lack a score from some candidate and were dropped", split.dropped);
    }
    Ok(split)
}

#[derive(Serialize)]
struct TrainOutput {
    spec: EnsembleSpec,
    trace: Vec<pomms::SfsStep>,
    validation: pomms::EnsembleEvaluation,
    n_train: usize,
    n_val: usize,
    n_test: usize,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Validate { scores, kind, manifest, min_coverage, out } => {
            let n = model::check_file(&scores, kind)?;
            let Some(manifest) = manifest else {
                return emit(out.as_deref(), &format!("{}: {n} valid records\n", scores.display()));
            };
            if kind != RecordKind::Scores {
                anyhow::bail!(Error::Validation("--manifest applies to score files only".into()));
            }
            let manifest = RunManifest::load(&manifest)?;
            let records: Vec<ScoreRecord> = model::read_records(&scores)?;
            let cov = model::validate_dataset(&manifest, &records)?;
            emit(out.as_deref(), &json_text(&cov)?)?;
            let below = cov.cells_below(min_coverage).next().cloned();
            if let Some(c) = below {
                return Err(Error::CoverageBelowFloor {
                    generator: c.generator.to_string(),
                    evaluator: c.evaluator.to_string(),
                    coverage: c.coverage,
                    floor: min_coverage,
                }
                .into());
            }
        }
        Command::Collect { manifest, endpoints, captions, generate_captions, prompts, out } => {
            let manifest = RunManifest::load(&manifest)?;
            let text = std::fs::read_to_string(&endpoints).map_err(|e| Error::Io { path: endpoints.clone(), source: e })?;
            let endpoints: BTreeMap<ModelId, EndpointConfig> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", endpoints.display()))?;
            let bundle = match prompts {
                Some(p) => PromptBundle::load(&p)?,
                None => PromptBundle::default(),
            };
            let caption_records: Vec<CaptionRecord> = if generate_captions {
                let s = collector::generate_captions(&manifest, &endpoints, &bundle, &captions)?;
                log::info!("captions: {} new, {} missing, {} calls", s.written, s.missing, s.http_calls);
                s.records
            } else {
                model::read_records(&captions)?
            };
            let s = collector::collect_scores(&manifest, &caption_records, &endpoints, &bundle, &out)?;
            eprintln!(
                "{}: {} records ({} new, {} already journaled, {} missing, {} requests)",
                out.display(),
                s.records.len(),
                s.written,
                s.already_done,
                s.missing,
                s.http_calls
            );
        }
        Command::Phi { data, out, svg } => {
            let (_, _, phi) = build(&data)?;
            if let Some(p) = svg {
                let title = format!("Mean scores ({})", data.setting);
                report::write_heatmap_svg(&phi.generators, &phi.evaluators, &phi.values, ColorScale::MinMax, Some(&title), &p)?;
            }
            emit(out.as_deref(), &phi.to_csv())?;
        }
        Command::Standardize { data, drop_evaluators, drop_generators, out, svg } => {
            let t = if drop_evaluators.is_empty() && drop_generators.is_empty() {
                matrix::standardize(&build(&data)?.2)?
            } else {
                let (manifest, scores) = load_data(&data)?;
                let de: BTreeSet<ModelId> = drop_evaluators.into_iter().collect();
                let dg: BTreeSet<ModelId> = drop_generators.into_iter().collect();
                matrix::exclude_models(&scores, &manifest, data.setting, &de, &dg, data.min_coverage)?
            };
            for id in &t.degenerate_columns {
                log::warn!("evaluator `{id}` has a constant column");
            }
            if let Some(p) = svg {
                write_svg(&p, &t, &format!("Standardized scores ({})", data.setting))?;
            }
            emit(out.as_deref(), &t.to_csv())?;
        }
        Command::Audit { data, out } => {
            let (_, _, phi) = build(&data)?;
            let audit = report::build_audit(phi)?;
            emit(out.as_deref(), &report::render_report(&audit, ReportFormat::Json)?)?;
        }
        Command::Scan { data, k, top, out } => {
            let t = matrix::standardize(&build(&data)?.2)?;
            let ranked = matrix::submatrix_scan(&t, k)?;
            let mut csv = String::from("rank,members,positive_offdiag\n");
            for (r, s) in ranked.iter().take(top.unwrap_or(usize::MAX)).enumerate() {
                let names: Vec<&str> = s.ids.iter().map(ModelId::as_str).collect();
                csv.push_str(&format!("{},{},{}\n", r + 1, names.join(";"), s.positive_offdiag));
            }
            emit(out.as_deref(), &csv)?;
        }
        Command::Delta { scores, manifest, min_coverage, out } => {
            let manifest = RunManifest::load(&manifest)?;
            let records: Vec<ScoreRecord> = model::read_records(&scores)?;
            let based = matrix::standardize(&matrix::build_phi(&records, &manifest, Setting::ReferenceBased, min_coverage)?)?;
            let free = matrix::standardize(&matrix::build_phi(&records, &manifest, Setting::ReferenceFree, min_coverage)?)?;
            let delta = matrix::settings_delta(&based, &free)?;
            let pb = matrix::philautia_scores(&based)?;
            let pf = matrix::philautia_scores(&free)?;
            let mut csv = String::from("model,ref_based,ref_free,delta\n");
            for (id, d) in &delta {
                csv.push_str(&format!("{id},{},{},{}\n", matrix::fmt6(pb[id]), matrix::fmt6(pf[id]), matrix::fmt6(*d)));
            }
            emit(out.as_deref(), &csv)?;
        }
        Command::Correlate { sup, out } => {
            let manifest = RunManifest::load(&sup.manifest)?;
            let judgments: Vec<HumanJudgmentRecord> = model::read_records(&sup.judgments)?;
            let scores: Vec<ScoreRecord> = model::read_records(&sup.scores)?;
            let rows = pomms::correlate_evaluators(&judgments, &scores, &manifest.evaluators, sup.setting)?;
            let mut csv = String::from("evaluator,n,tau_b,tau_c\n");
            for r in rows {
                csv.push_str(&format!("{},{},{},{}\n", r.evaluator, r.n, matrix::fmt6(r.tau_b), matrix::fmt6(r.tau_c)));
            }
            emit(out.as_deref(), &csv)?;
        }
        Command::PommsTrain { sup, max_size, candidates, out } => {
            let manifest = RunManifest::load(&sup.manifest)?;
            let candidates = if candidates.is_empty() { manifest.evaluators.clone() } else { candidates };
            let split = split_of(&sup, &candidates)?;
            let opts = SfsOptions { max_size, ..Default::default() };
            let (spec, trace) = pomms::sfs_select(&candidates, &split, &opts)?;
            let validation = pomms::evaluate_on_validation(&spec, &split)?;
            let output = TrainOutput {
                spec,
                trace,
                validation,
                n_train: split.train.len(),
                n_val: split.val.len(),
                n_test: split.test.len(),
            };
            emit(out.as_deref(), &json_text(&output)?)?;
        }
        Command::PommsEval { sup, ensemble, out } => {
            let spec = load_spec(&ensemble)?;
            let split = split_of(&sup, &spec.members)?;
            let eval = pomms::evaluate_ensemble(&spec, &split)?;
            emit(out.as_deref(), &json_text(&eval)?)?;
        }
        Command::Augment { data, ensemble, out, svg } => {
            let spec = load_spec(&ensemble)?;
            let (manifest, scores) = load_data(&data)?;
            let t = pomms::augment_phi_with_ensemble(&scores, &manifest, data.setting, &spec, data.min_coverage)?;
            if let Some(p) = svg {
                write_svg(&p, &t, &format!("Standardized scores with {} ({})", pomms::ENSEMBLE_ID, data.setting))?;
            }
            emit(out.as_deref(), &t.to_csv())?;
        }
        Command::Simulate { config, models, images, diag_bias, noise, item_quality_std, human_noise, seed, out } => {
            let cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    serde_json::from_str::<SimConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => SimConfig {
                    item_quality_std,
                    human_noise_std: human_noise,
                    ..SimConfig::self_biased(models, images, &vec![diag_bias; models], noise, seed)
                },
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            let scores = simulator::simulate_scores(&cfg)?;
            let judgments = simulator::simulate_judgments(&cfg)?;
            emit(Some(&out.join("manifest.json")), &json_text(&cfg.manifest())?)?;
            emit(Some(&out.join("config.json")), &json_text(&cfg)?)?;
            model::write_records(&out.join("scores.jsonl"), &scores)?;
            model::write_records(&out.join("judgments.jsonl"), &judgments)?;
        }
        Command::Report { audit, format, out, svg, raw_svg } => {
            let text = std::fs::read_to_string(&audit).map_err(|e| Error::Io { path: audit.clone(), source: e })?;
            let audit: report::AuditReport =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", audit.display()))?;
            if let Some(p) = svg {
                write_svg(&p, &audit.phi_tilde, &format!("Standardized scores ({})", audit.setting))?;
            }
            if let Some(p) = raw_svg {
                let phi = &audit.phi;
                let title = format!("Mean scores ({})", audit.setting);
                report::write_heatmap_svg(&phi.generators, &phi.evaluators, &phi.values, ColorScale::MinMax, Some(&title), &p)?;
            }
            emit(out.as_deref(), &report::render_report(&audit, format)?)?;
        }
    }
    Ok(())
}

fn load_spec(path: &Path) -> anyhow::Result<EnsembleSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    // Accept either a bare spec or the output of pomms-train.
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let spec_value = value.get("spec").cloned().unwrap_or(value);
    let spec: EnsembleSpec = serde_json::from_value(spec_value).map_err(Error::from)?;
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
