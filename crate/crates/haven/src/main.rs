//! Command-line front end for the evaluation harness and the training lab.
//!
//! Exit codes: 0 on full success, 3 when the command finished but some
//! per-question items failed (details land in the `*_failures.jsonl`
//! artifacts), 1 on fatal errors, 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use haven::commands::{self, RunFlags};
use haven::config::load_manifest;
use haven::{srft, tdpo};

#[derive(Parser)]
#[command(
    name = "haven",
    about = "Video hallucination evaluation harness and desk-scale training lab",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a question file: category grid, format shares, histograms.
    Stats {
        /// Question file (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for stats.csv and stats.md.
        #[arg(long)]
        out: PathBuf,
        /// Also compare the composition against the published benchmark grid.
        #[arg(long)]
        compare_published: bool,
    },
    /// Query the model once per question (cached, parallel, resumable).
    Run {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Continue an interrupted run instead of refusing to touch it.
        #[arg(long)]
        resume: bool,
    },
    /// Grade recorded replies with the judge model.
    Judge {
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score judged verdicts: accuracy grid and answer-consistency report.
    Score {
        /// Question file (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Verdict file produced by `judge`.
        #[arg(long)]
        verdicts: PathBuf,
        /// Output directory for accuracy_table.csv and bias_report.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Full report: score tables plus heatmaps, bucket curves and summary.md.
    Report {
        /// Question file (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Verdict file produced by `judge`.
        #[arg(long)]
        verdicts: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Model name to print in the report.
        #[arg(long)]
        model: String,
        /// Parameter count in billions; adds a size_scatter.csv point.
        #[arg(long)]
        model_size_b: Option<f64>,
    },
    /// Train the toy policy on preference pairs with segment-weighted scoring.
    Tdpo {
        /// Preference pairs (JSONL). Defaults to generated synthetic pairs.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of synthetic pairs when --data is not given.
        #[arg(long, default_value_t = 50)]
        synthetic: usize,
        /// Output directory for pairs.jsonl (synthetic only) and tdpo_trace.csv.
        #[arg(long)]
        out: PathBuf,
        /// Weight on hallucinated-segment tokens inside the sequence score.
        #[arg(long, default_value_t = 5.0)]
        gamma: f64,
        /// Preference temperature.
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Sequence scoring rule.
        #[arg(long, value_enum, default_value_t = ScoreModeArg::Weighted)]
        score: ScoreModeArg,
        /// Length-normalize the standard score (ignored under --score weighted).
        #[arg(long)]
        normalize_standard: bool,
        /// Feature dimension of the toy policy.
        #[arg(long, default_value_t = tdpo::TOY_DIM)]
        dim: usize,
        /// Vocabulary size of the toy policy.
        #[arg(long, default_value_t = tdpo::TOY_VOCAB)]
        vocab: usize,
    },
    /// Fine-tune a low-rank adapter on reasoning samples, base weights frozen.
    Srft {
        /// Reasoning samples (JSONL). Defaults to the built-in toy batch.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for srft_trace.csv and adapter.json.
        #[arg(long)]
        out: PathBuf,
        /// Scale applied to the low-rank update.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Adapter rank (at most half the smaller weight dimension).
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Feature dimension of the toy policy.
        #[arg(long, default_value_t = tdpo::TOY_DIM)]
        dim: usize,
        /// Vocabulary size of the toy policy.
        #[arg(long, default_value_t = tdpo::TOY_VOCAB)]
        vocab: usize,
    },
}

/// Options shared by `run` and `judge`.
#[derive(Args)]
struct PipelineArgs {
    /// Run manifest (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrency override (defaults to the endpoint's max_concurrency).
    #[arg(long)]
    concurrency: Option<usize>,
    /// Force chain-of-thought prompting. Applies to run and judge alike:
    /// the judge stage must know how the replies were prompted.
    #[arg(long)]
    cot: bool,
}

impl PipelineArgs {
    fn flags(&self, resume: bool) -> RunFlags {
        RunFlags {
            out_override: self.out.clone(),
            resume,
            concurrency: self.concurrency,
            force_cot: self.cot,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreModeArg {
    Standard,
    Weighted,
}

impl From<ScoreModeArg> for tdpo::ScoreMode {
    fn from(v: ScoreModeArg) -> Self {
        match v {
            ScoreModeArg::Standard => tdpo::ScoreMode::Standard,
            ScoreModeArg::Weighted => tdpo::ScoreMode::Weighted,
        }
    }
}

fn fmt_opt_pct(v: Option<f64>) -> String {
    v.map(|p| format!("{p:.2}%")).unwrap_or_else(|| "NA".into())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Stats {
            data,
            out,
            compare_published,
        } => {
            let summary = commands::cmd_stats(&data, &out, compare_published)?;
            println!(
                "stats: {} questions summarized into {}",
                summary.total,
                summary.out_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { pipeline, resume } => {
            let manifest = load_manifest(&pipeline.config)?;
            let summary = commands::cmd_run(&manifest, &pipeline.flags(resume))?;
            println!(
                "run: {}/{} answered ({} from cache, {} fresh), {} failed; artifacts in {}",
                summary.total - summary.failures.len(),
                summary.total,
                summary.cache_hits,
                summary.fresh,
                summary.failures.len(),
                summary.out_dir.display()
            );
            if summary.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "run: per-question failures recorded in {}",
                    summary.out_dir.join(commands::RUN_FAILURES_FILE).display()
                );
                Ok(ExitCode::from(3))
            }
        }
        Command::Judge { pipeline } => {
            let manifest = load_manifest(&pipeline.config)?;
            let summary = commands::cmd_judge(&manifest, &pipeline.flags(false))?;
            println!(
                "judge: {}/{} graded ({} unjudgeable), {} failed; verdicts in {}",
                summary.total - summary.failures.len(),
                summary.total,
                summary.unjudgeable,
                summary.failures.len(),
                summary.out_dir.join(commands::VERDICTS_FILE).display()
            );
            if summary.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "judge: per-question failures recorded in {}",
                    summary.out_dir.join(commands::JUDGE_FAILURES_FILE).display()
                );
                Ok(ExitCode::from(3))
            }
        }
        Command::Score { data, verdicts, out } => {
            let s = commands::cmd_score(&data, &verdicts, &out)?;
            println!(
                "score: accuracy {} ({}/{}), pooled inconsistency {}, {} unjudgeable; tables in {}",
                fmt_opt_pct(s.accuracy_pct),
                s.correct,
                s.n,
                fmt_opt_pct(s.pooled_bias_pct),
                s.unjudgeable,
                s.out_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            data,
            verdicts,
            out,
            model,
            model_size_b,
        } => {
            let s = commands::cmd_report(&data, &verdicts, &out, &model, model_size_b)?;
            println!(
                "report: accuracy {} ({}/{}), pooled inconsistency {}; report in {}",
                fmt_opt_pct(s.accuracy_pct),
                s.correct,
                s.n,
                fmt_opt_pct(s.pooled_bias_pct),
                s.out_dir.join("summary.md").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Tdpo {
            data,
            synthetic,
            out,
            gamma,
            beta,
            lr,
            steps,
            seed,
            score,
            normalize_standard,
            dim,
            vocab,
        } => {
            let args = commands::TdpoArgs {
                data,
                synthetic,
                out,
                config: tdpo::TdpoConfig {
                    gamma,
                    beta,
                    lr,
                    steps,
                    seed,
                },
                mode: score.into(),
                normalize_standard,
                dim,
                vocab,
            };
            let s = commands::cmd_tdpo(&args)?;
            println!(
                "tdpo: {} pairs, loss {:.6} -> {:.6}, final margin rate {:.1}%; trace in {}",
                s.pairs,
                s.initial_loss,
                s.final_loss,
                s.final_margin_rate * 100.0,
                s.out_dir.join("tdpo_trace.csv").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Srft {
            data,
            out,
            alpha,
            rank,
            lr,
            steps,
            seed,
            dim,
            vocab,
        } => {
            let args = commands::SrftArgs {
                data,
                out,
                config: srft::SrftConfig {
                    alpha,
                    rank,
                    lr,
                    steps,
                    seed,
                },
                dim,
                vocab,
            };
            let s = commands::cmd_srft(&args)?;
            println!(
                "srft: {} samples, loss {:.6} -> {:.6}, update singular values top {:.4e} / past-rank {:.4e}; adapter in {}",
                s.samples,
                s.initial_loss,
                s.final_loss,
                s.top_singular_value,
                s.tail_singular_value,
                s.out_dir.join("adapter.json").display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
