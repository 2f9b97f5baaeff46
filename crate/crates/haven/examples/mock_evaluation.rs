//! Runs the complete evaluation pipeline — inference, judging, scoring,
//! reporting — against the built-in scripted endpoints, so the whole flow
//! can be watched without network access or credentials.
//!
//! ```text
//! cargo run --example mock_evaluation
//! cargo run --example mock_evaluation -- demo/
//! ```
//!
//! With a directory argument the corpus, a ready-to-use `run.toml` and all
//! artifacts persist there, so the same world can then be driven through
//! the `haven` binary; without one everything lands in a tempdir.

use std::path::PathBuf;

use haven::commands::{self, RunFlags, VERDICTS_FILE};
use haven::config::{DatasetSection, FramesSection, OutputSection, RunManifest};
use haven::dataset;
use haven::mock;
use haven::model_client::{EndpointConfig, SamplingConfig};

fn main() -> anyhow::Result<()> {
    let mut tmp = None;
    let dir: PathBuf = match std::env::args().nth(1) {
        Some(arg) => {
            std::fs::create_dir_all(&arg)?;
            arg.into()
        }
        None => tmp.insert(tempfile::tempdir()?).path().to_path_buf(),
    };
    let data_path = dir.join("questions.jsonl");
    let out = dir.join("out");

    // The scripted world bundles a 60-question corpus and a reply script
    // for a fictional video model with designed strengths and weaknesses.
    let world = mock::scenario60();
    dataset::write_dataset(&data_path, &world.questions)?;
    println!("wrote {} questions to {}", world.questions.len(), data_path.display());

    let manifest = RunManifest {
        dataset: DatasetSection { path: data_path.clone() },
        model: EndpointConfig {
            base_url: "mock:scenario60".into(),
            api_key_env: "UNUSED_FOR_MOCK".into(),
            model_name: "scripted-video-model".into(),
            max_concurrency: 4,
            timeout_s: 30.0,
            max_retries: 2,
        },
        judge: EndpointConfig {
            base_url: "mock:semantic-judge".into(),
            api_key_env: "UNUSED_FOR_MOCK".into(),
            model_name: "scripted-judge".into(),
            max_concurrency: 4,
            timeout_s: 30.0,
            max_retries: 2,
        },
        sampling: SamplingConfig::default(),
        frames: FramesSection::default(), // synthetic frames
        output: OutputSection { dir: out.clone() },
    };
    let manifest_toml = toml::to_string(&manifest)?;
    std::fs::write(dir.join("run.toml"), &manifest_toml)?;
    println!("\nmanifest written to {}:\n{}", dir.join("run.toml").display(), manifest_toml);

    let flags = RunFlags::default();
    let run = commands::cmd_run(&manifest, &flags)?;
    println!(
        "run:    {} answered ({} fresh, {} cached), {} failed",
        run.total,
        run.fresh,
        run.cache_hits,
        run.failures.len()
    );

    let judged = commands::cmd_judge(&manifest, &flags)?;
    println!(
        "judge:  {} graded, {} unjudgeable",
        judged.total, judged.unjudgeable
    );

    let score = commands::cmd_score(&data_path, &out.join(VERDICTS_FILE), &out)?;
    println!(
        "score:  accuracy {:.2}% ({}/{}), pooled answer inconsistency {}",
        score.accuracy_pct.unwrap_or(0.0),
        score.correct,
        score.n,
        score
            .pooled_bias_pct
            .map(|p| format!("{p:.2}%"))
            .unwrap_or_else(|| "NA".into()),
    );

    commands::cmd_report(
        &data_path,
        &out.join(VERDICTS_FILE),
        &out,
        "scripted-video-model",
        Some(7.0),
    )?;
    println!("\n--- summary.md ---\n");
    println!("{}", std::fs::read_to_string(out.join("summary.md"))?);

    // Running inference again touches no endpoint: every reply replays
    // from the on-disk cache and the artifacts come out byte-identical.
    let rerun = commands::cmd_run(&manifest, &flags)?;
    println!(
        "rerun:  {} answered, {} from cache",
        rerun.total, rerun.cache_hits
    );
    Ok(())
}
