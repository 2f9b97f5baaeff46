//! The operations behind the CLI subcommands, exposed as plain functions
//! so tests and examples can drive complete pipelines in-process.
//!
//! Every command writes its artifacts under an output directory with
//! fixed file names and deterministic contents; the only file carrying
//! timestamps is the `run_state.json` / `judge_state.json` sidecar. All
//! listings are sorted by question id, so repeating a command over
//! unchanged inputs reproduces every artifact byte for byte (model and
//! judge replies are replayed from the on-disk response cache without
//! network traffic).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::RunManifest;
use crate::dataset::{self, Axis, Question};
use crate::error::{Error, Result};
use crate::judge::{self, JudgeClient};
use crate::metrics::{self, HeatmapKind};
use crate::mock;
use crate::model_client::{
    build_inference_request, for_each_parallel, EndpointConfig, FrameSource, HttpTransport,
    InferenceRecord, Limiter, PromptMode, QueryRunner, ResponseCache, SamplingConfig, Transport,
    DEFAULT_REQUEST_BYTE_CAP,
};
use crate::report;
use crate::srft;
use crate::tdpo;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const RUN_FAILURES_FILE: &str = "run_failures.jsonl";
pub const JUDGE_FAILURES_FILE: &str = "judge_failures.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const RUN_STATE_FILE: &str = "run_state.json";
pub const JUDGE_STATE_FILE: &str = "judge_state.json";
pub const CACHE_DIR: &str = "cache";

/// Flags shared by the pipeline commands.
#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    /// Output directory override (defaults to the manifest's).
    pub out_override: Option<PathBuf>,
    /// Continue an interrupted run instead of refusing to touch it.
    pub resume: bool,
    /// Concurrency override (defaults to the endpoint's).
    pub concurrency: Option<usize>,
    /// Force chain-of-thought prompting regardless of the manifest.
    pub force_cot: bool,
}

/// A per-question failure that did not abort the command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub question_id: String,
    pub error: String,
}

/// Progress sidecar; the single place timestamps are allowed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSidecar {
    /// `running`, `complete`, or `partial`.
    pub status: String,
    pub model_name: String,
    pub sampling_digest: String,
    pub n_questions: usize,
    pub n_done: usize,
    pub n_failures: usize,
    pub started_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<u64>,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_state(path: &Path, state: &StateSidecar) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(state)?)?;
    Ok(())
}

fn read_state(path: &Path) -> Result<Option<StateSidecar>> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn write_failures(path: &Path, failures: &[ItemFailure]) -> Result<()> {
    let mut sorted = failures.to_vec();
    sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let mut out = String::new();
    for f in &sorted {
        out.push_str(&serde_json::to_string(f)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Resolves an endpoint into a transport: `mock:` schemes map to the
/// built-in scripted endpoints, anything else becomes a real HTTP client
/// with its bearer token read from the configured environment variable.
pub fn resolve_transport(endpoint: &EndpointConfig) -> Result<Arc<dyn Transport>> {
    if endpoint.is_mock() {
        return match endpoint.base_url.as_str() {
            "mock:scenario60" => Ok(Arc::new(mock::scenario60().model_transport())),
            "mock:semantic-judge" => Ok(Arc::new(mock::SemanticJudgeTransport)),
            other => Err(Error::Config(format!(
                "unknown mock endpoint {other:?} (available: mock:scenario60, mock:semantic-judge)"
            ))),
        };
    }
    let api_key = endpoint.resolve_api_key()?;
    Ok(Arc::new(HttpTransport::new(
        &endpoint.base_url,
        api_key,
        Duration::from_secs_f64(endpoint.timeout_s),
    )?))
}

fn effective_sampling(manifest: &RunManifest, flags: &RunFlags) -> SamplingConfig {
    let mut sampling = manifest.sampling.clone();
    if flags.force_cot {
        sampling.prompt_mode = PromptMode::Cot;
    }
    sampling
}

fn out_dir(manifest: &RunManifest, flags: &RunFlags) -> PathBuf {
    flags
        .out_override
        .clone()
        .unwrap_or_else(|| manifest.output.dir.clone())
}

/// Loads the corpus and enforces the variant-group protocol.
fn load_validated_dataset(path: &Path) -> Result<Vec<Question>> {
    let questions = dataset::load_dataset(path)?;
    dataset::validate_groups(&questions)?;
    Ok(questions)
}

#[derive(Debug)]
pub struct StatsSummary {
    pub total: u64,
    pub out_dir: PathBuf,
}

/// `stats`: corpus composition tables.
pub fn cmd_stats(data: &Path, out: &Path, compare_published: bool) -> Result<StatsSummary> {
    let questions = load_validated_dataset(data)?;
    let stats = dataset::compute_stats(&questions)?;
    std::fs::create_dir_all(out)?;
    report::write_stats_csv(out.join("stats.csv"), &stats)?;
    report::write_stats_md(out.join("stats.md"), &stats, compare_published)?;
    Ok(StatsSummary {
        total: stats.total,
        out_dir: out.to_path_buf(),
    })
}

#[derive(Debug)]
pub struct RunSummary {
    pub total: usize,
    pub cache_hits: usize,
    pub fresh: usize,
    pub failures: Vec<ItemFailure>,
    pub out_dir: PathBuf,
}

/// `run`: query the model once per question, through the response cache.
pub fn cmd_run(manifest: &RunManifest, flags: &RunFlags) -> Result<RunSummary> {
    let questions = load_validated_dataset(&manifest.dataset.path)?;
    let sampling = effective_sampling(manifest, flags);
    sampling.validate()?;
    let out = out_dir(manifest, flags);
    std::fs::create_dir_all(&out)?;

    let state_path = out.join(RUN_STATE_FILE);
    if let Some(prior) = read_state(&state_path)? {
        if prior.status != "complete" && !flags.resume {
            return Err(Error::Config(format!(
                "{} reports an unfinished run (status {:?}); pass --resume to continue it",
                state_path.display(),
                prior.status
            )));
        }
    }

    let transport = resolve_transport(&manifest.model)?;
    let cache = Arc::new(ResponseCache::open(out.join(CACHE_DIR))?);
    let concurrency = flags.concurrency.unwrap_or(manifest.model.max_concurrency).max(1);
    let limiter = Limiter::new(concurrency);
    let runner = Arc::new(QueryRunner::new(
        transport,
        cache,
        limiter,
        manifest.model.max_retries,
    ));
    let frame_source = manifest.frames.to_frame_source()?;
    let model_name = manifest.model.model_name.clone();
    let digest = sampling.digest();

    let mut state = StateSidecar {
        status: "running".into(),
        model_name: model_name.clone(),
        sampling_digest: digest.clone(),
        n_questions: questions.len(),
        n_done: 0,
        n_failures: 0,
        started_at: unix_now(),
        finished_at: None,
    };
    write_state(&state_path, &state)?;

    let outcomes = for_each_parallel(questions.clone(), concurrency, |q| {
        query_one(&q, &frame_source, &sampling, &model_name, &digest, &runner)
            .map_err(|e| (q.id.clone(), e))
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut cache_hits = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok((record, was_hit)) => {
                if was_hit {
                    cache_hits += 1;
                }
                records.push(record);
            }
            Err((question_id, err)) => {
                if err.is_fatal() {
                    return Err(err);
                }
                failures.push(ItemFailure {
                    question_id,
                    error: err.to_string(),
                });
            }
        }
    }

    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(out.join(RECORDS_FILE), text)?;
    write_failures(&out.join(RUN_FAILURES_FILE), &failures)?;

    state.status = if failures.is_empty() { "complete" } else { "partial" }.into();
    state.n_done = records.len();
    state.n_failures = failures.len();
    state.finished_at = Some(unix_now());
    write_state(&state_path, &state)?;

    Ok(RunSummary {
        total: questions.len(),
        cache_hits,
        fresh: records.len() - cache_hits,
        failures,
        out_dir: out,
    })
}

fn query_one(
    q: &Question,
    frame_source: &FrameSource,
    sampling: &SamplingConfig,
    model_name: &str,
    digest: &str,
    runner: &QueryRunner,
) -> Result<(InferenceRecord, bool)> {
    let frames = frame_source.frames_for(q, sampling)?;
    let request = build_inference_request(q, &frames, sampling, model_name, DEFAULT_REQUEST_BYTE_CAP)?;
    let outcome = runner.cached_query(model_name, &q.id, digest, &request)?;
    Ok((outcome.record, outcome.cache_hit))
}

fn load_records(path: &Path) -> Result<Vec<InferenceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {} (run the `run` command first)", path.display(), e),
        ))
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct JudgeSummary {
    pub total: usize,
    pub unjudgeable: usize,
    pub failures: Vec<ItemFailure>,
    pub out_dir: PathBuf,
}

/// `judge`: grade every recorded reply with the judge endpoint.
pub fn cmd_judge(manifest: &RunManifest, flags: &RunFlags) -> Result<JudgeSummary> {
    let questions = load_validated_dataset(&manifest.dataset.path)?;
    let sampling = effective_sampling(manifest, flags);
    let out = out_dir(manifest, flags);
    let records = load_records(&out.join(RECORDS_FILE))?;

    // Every question needs a record produced under the same sampling
    // configuration.
    let digest = sampling.digest();
    let mut by_id = std::collections::HashMap::new();
    for r in &records {
        if r.sampling_digest != digest {
            return Err(Error::Integrity(format!(
                "record for {:?} was produced under sampling digest {} but the \
                 current configuration digests to {}; re-run inference",
                r.question_id, r.sampling_digest, digest
            )));
        }
        by_id.insert(r.question_id.as_str(), r);
    }
    let missing: Vec<&str> = questions
        .iter()
        .filter(|q| !by_id.contains_key(q.id.as_str()))
        .map(|q| q.id.as_str())
        .collect();
    if !missing.is_empty() {
        let shown = missing.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
        return Err(Error::Integrity(format!(
            "{} question(s) have no inference record (first: {}); re-run inference",
            missing.len(),
            shown
        )));
    }

    let transport = resolve_transport(&manifest.judge)?;
    let cache = Arc::new(ResponseCache::open(out.join(CACHE_DIR))?);
    let concurrency = flags.concurrency.unwrap_or(manifest.judge.max_concurrency).max(1);
    let limiter = Limiter::new(concurrency);
    let runner = Arc::new(QueryRunner::new(
        transport,
        cache,
        limiter,
        manifest.judge.max_retries,
    ));
    let client = JudgeClient::new(runner, manifest.judge.model_name.clone());
    let prompt_mode = sampling.prompt_mode;

    let state_path = out.join(JUDGE_STATE_FILE);
    let mut state = StateSidecar {
        status: "running".into(),
        model_name: manifest.judge.model_name.clone(),
        sampling_digest: digest,
        n_questions: questions.len(),
        n_done: 0,
        n_failures: 0,
        started_at: unix_now(),
        finished_at: None,
    };
    write_state(&state_path, &state)?;

    let items: Vec<(Question, String)> = questions
        .iter()
        .map(|q| (q.clone(), by_id[q.id.as_str()].response_text.clone()))
        .collect();
    let outcomes = for_each_parallel(items, concurrency, |(q, response)| {
        client
            .judge_answer(&q, &response, prompt_mode)
            .map_err(|e| (q.id.clone(), e))
    });

    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(v) => verdicts.push(v),
            Err((question_id, err)) => {
                if err.is_fatal() {
                    return Err(err);
                }
                failures.push(ItemFailure {
                    question_id,
                    error: err.to_string(),
                });
            }
        }
    }
    verdicts.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    judge::write_verdicts(out.join(VERDICTS_FILE), &verdicts)?;
    write_failures(&out.join(JUDGE_FAILURES_FILE), &failures)?;

    state.status = if failures.is_empty() { "complete" } else { "partial" }.into();
    state.n_done = verdicts.len();
    state.n_failures = failures.len();
    state.finished_at = Some(unix_now());
    write_state(&state_path, &state)?;

    Ok(JudgeSummary {
        total: questions.len(),
        unjudgeable: verdicts.iter().filter(|v| v.unjudgeable()).count(),
        failures,
        out_dir: out,
    })
}

#[derive(Debug)]
pub struct ScoreSummary {
    pub n: u64,
    pub correct: u64,
    pub accuracy_pct: Option<f64>,
    pub pooled_bias_pct: Option<f64>,
    pub unjudgeable: usize,
    pub out_dir: PathBuf,
}

/// `score`: the headline accuracy and consistency tables.
pub fn cmd_score(data: &Path, verdicts_path: &Path, out: &Path) -> Result<ScoreSummary> {
    let questions = load_validated_dataset(data)?;
    let verdicts = judge::load_verdicts(verdicts_path)?;
    let table = metrics::accuracy_table(&questions, &verdicts)?;
    let bias = metrics::bias_report(&questions, &verdicts)?;
    std::fs::create_dir_all(out)?;
    report::write_accuracy_csv(out.join("accuracy_table.csv"), &table)?;
    report::write_bias_csv(out.join("bias_report.csv"), &bias)?;
    Ok(ScoreSummary {
        n: table.total().n,
        correct: table.total().correct,
        accuracy_pct: table.total().accuracy_pct(),
        pooled_bias_pct: bias.pooled_pct(),
        unjudgeable: verdicts.iter().filter(|v| v.unjudgeable()).count(),
        out_dir: out.to_path_buf(),
    })
}

/// `report`: heatmaps, bucketed accuracy curves and the Markdown digest.
pub fn cmd_report(
    data: &Path,
    verdicts_path: &Path,
    out: &Path,
    model_name: &str,
    model_size_b: Option<f64>,
) -> Result<ScoreSummary> {
    let questions = load_validated_dataset(data)?;
    let verdicts = judge::load_verdicts(verdicts_path)?;
    let table = metrics::accuracy_table(&questions, &verdicts)?;
    let bias = metrics::bias_report(&questions, &verdicts)?;
    std::fs::create_dir_all(out)?;

    report::write_accuracy_csv(out.join("accuracy_table.csv"), &table)?;
    report::write_bias_csv(out.join("bias_report.csv"), &bias)?;

    let mut format_heat = None;
    for kind in HeatmapKind::ALL {
        let heat = metrics::pair_heatmap(&questions, &verdicts, kind)?;
        report::write_heatmap_csv(out.join(format!("heatmap_{}.csv", kind.as_str())), &heat)?;
        if kind == HeatmapKind::FormatAspect {
            format_heat = Some(heat);
        }
    }

    let mut bucket_series = Vec::new();
    for axis in [Axis::Duration, Axis::Frames, Axis::QuestionLength] {
        let edges = axis.default_edges();
        let series = metrics::bucket_series(&questions, &verdicts, axis, &edges)?;
        report::write_bucket_csv(out.join(format!("buckets_{}.csv", axis.as_str())), &series)?;
        bucket_series.push((axis, series));
    }

    let unjudgeable = verdicts.iter().filter(|v| v.unjudgeable()).count();
    report::write_summary_md(
        out.join("summary.md"),
        model_name,
        &table,
        &bias,
        format_heat.as_ref().expect("format heatmap computed"),
        &bucket_series,
        unjudgeable as u64,
    )?;

    if let Some(size_b) = model_size_b {
        let point = report::ScatterPoint {
            model: model_name.to_string(),
            size_b,
            accuracy_pct: table.total().accuracy_pct().unwrap_or(0.0),
            pooled_bias_pct: bias.pooled_pct(),
        };
        report::write_size_scatter_csv(out.join("size_scatter.csv"), &[point])?;
    }

    Ok(ScoreSummary {
        n: table.total().n,
        correct: table.total().correct,
        accuracy_pct: table.total().accuracy_pct(),
        pooled_bias_pct: bias.pooled_pct(),
        unjudgeable,
        out_dir: out.to_path_buf(),
    })
}

/// Arguments of the preference-training command.
#[derive(Debug, Clone)]
pub struct TdpoArgs {
    pub data: Option<PathBuf>,
    /// Generate this many synthetic pairs when no data file is given.
    pub synthetic: usize,
    pub out: PathBuf,
    pub config: tdpo::TdpoConfig,
    pub mode: tdpo::ScoreMode,
    pub normalize_standard: bool,
    pub dim: usize,
    pub vocab: usize,
}

#[derive(Debug)]
pub struct TdpoSummary {
    pub pairs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_margin_rate: f64,
    pub out_dir: PathBuf,
}

/// `tdpo`: train the toy policy on preference pairs and write the trace.
pub fn cmd_tdpo(args: &TdpoArgs) -> Result<TdpoSummary> {
    args.config.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let pairs = match &args.data {
        Some(path) => tdpo::load_pairs(path)?,
        None => {
            let pairs = tdpo::synthetic_pairs(args.synthetic, args.vocab, args.dim, args.config.seed);
            tdpo::write_pairs(args.out.join("pairs.jsonl"), &pairs)?;
            pairs
        }
    };
    let mut policy = tdpo::ToyPolicy::seeded(args.dim, args.vocab, args.config.seed);
    let outcome = tdpo::train_tdpo(&mut policy, &pairs, &args.config, args.mode, args.normalize_standard)?;
    tdpo::write_trace_csv(args.out.join("tdpo_trace.csv"), &outcome.trace)?;
    Ok(TdpoSummary {
        pairs: pairs.len(),
        initial_loss: outcome.trace[0].mean_loss,
        final_loss: outcome.final_loss,
        final_margin_rate: outcome.final_margin_rate,
        out_dir: args.out.clone(),
    })
}

/// Arguments of the fine-tuning command.
#[derive(Debug, Clone)]
pub struct SrftArgs {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub config: srft::SrftConfig,
    pub dim: usize,
    pub vocab: usize,
}

#[derive(Debug)]
pub struct SrftSummary {
    pub samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Largest singular value of the learned update and the largest one
    /// past the adapter rank (the low-rank certificate).
    pub top_singular_value: f64,
    pub tail_singular_value: f64,
    pub out_dir: PathBuf,
}

/// `srft`: fine-tune a low-rank adapter on reasoning samples.
pub fn cmd_srft(args: &SrftArgs) -> Result<SrftSummary> {
    std::fs::create_dir_all(&args.out)?;
    let samples = match &args.data {
        Some(path) => srft::load_samples(path)?,
        None => {
            let samples = srft::standard_toy_batch();
            srft::write_samples(args.out.join("samples.jsonl"), &samples)?;
            samples
        }
    };
    let policy = tdpo::ToyPolicy::seeded(args.dim, args.vocab, args.config.seed);
    let outcome = srft::train_srft(&policy, &samples, &args.config)?;
    srft::write_srft_trace_csv(args.out.join("srft_trace.csv"), &outcome.trace)?;
    srft::save_adapter(args.out.join("adapter.json"), &outcome.adapter)?;
    let svals = outcome.adapter.update_singular_values();
    Ok(SrftSummary {
        samples: samples.len(),
        initial_loss: outcome.trace[0].loss,
        final_loss: outcome.final_loss,
        top_singular_value: svals[0],
        tail_singular_value: svals[args.config.rank..].first().copied().unwrap_or(0.0),
        out_dir: args.out.clone(),
    })
}
