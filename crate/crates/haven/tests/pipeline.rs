//! Drives the installed `haven` binary end to end against the scripted
//! offline endpoints: pipeline artifacts, exit codes, resume gating,
//! chain-of-thought mode and byte-stability of reruns.
//!
//! The client internals (retry budget, cache hits, concurrency caps) are
//! covered by unit tests next to the code; these tests only assert what a
//! user can observe from the command line.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use haven::commands::{RECORDS_FILE, RUN_FAILURES_FILE, VERDICTS_FILE};
use haven::dataset::{self, QFormat};
use haven::{judge, mock};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_haven"))
}

fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn haven binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited with a code")
}

#[track_caller]
fn assert_exit(out: &Output, want: i32) {
    assert_eq!(
        exit_code(out),
        want,
        "unexpected exit code\nstdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn nonempty_lines(path: &Path) -> usize {
    read(path).lines().filter(|l| !l.trim().is_empty()).count()
}

/// A dataset file plus a manifest pointing mock endpoints at it.
struct World {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    manifest: PathBuf,
    out: PathBuf,
}

fn manifest_toml(data: &Path, out: &Path, model_base: &str, timeout_s: f64, max_retries: u32) -> String {
    format!(
        r#"[dataset]
path = "{data}"

[model]
base_url = "{model_base}"
api_key_env = "HAVEN_PIPELINE_TEST_KEY"
model_name = "scripted-video-model"
max_concurrency = 4
timeout_s = {timeout_s}
max_retries = {max_retries}

[judge]
base_url = "mock:semantic-judge"
api_key_env = "UNUSED"
model_name = "scripted-judge"
max_concurrency = 4
timeout_s = 10.0
max_retries = 1

[output]
dir = "{out}"
"#,
        data = data.display(),
        out = out.display(),
    )
}

fn scripted_world() -> World {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("questions.jsonl");
    dataset::write_dataset(&data, &mock::scenario60().questions).unwrap();
    let out = tmp.path().join("out");
    let manifest = tmp.path().join("run.toml");
    std::fs::write(&manifest, manifest_toml(&data, &out, "mock:scenario60", 10.0, 1)).unwrap();
    World {
        _tmp: tmp,
        data,
        manifest,
        out,
    }
}

#[test]
fn full_pipeline_produces_artifacts_and_reruns_are_byte_stable() {
    let w = scripted_world();
    let cfg = w.manifest.to_str().unwrap();

    let first = run_cli(&["run", "--config", cfg], &[]);
    assert_exit(&first, 0);
    assert!(
        stdout(&first).contains("run: 60/60 answered (0 from cache, 60 fresh), 0 failed"),
        "stdout: {}",
        stdout(&first)
    );
    assert_eq!(nonempty_lines(&w.out.join(RECORDS_FILE)), 60);
    assert_eq!(nonempty_lines(&w.out.join(RUN_FAILURES_FILE)), 0);
    let records_once = read(&w.out.join(RECORDS_FILE));

    // A second run is served entirely from the response cache and rewrites
    // the record file byte for byte.
    let second = run_cli(&["run", "--config", cfg], &[]);
    assert_exit(&second, 0);
    assert!(
        stdout(&second).contains("(60 from cache, 0 fresh)"),
        "stdout: {}",
        stdout(&second)
    );
    assert_eq!(read(&w.out.join(RECORDS_FILE)), records_once);

    let judged = run_cli(&["judge", "--config", cfg], &[]);
    assert_exit(&judged, 0);
    assert!(
        stdout(&judged).contains("judge: 60/60 graded (0 unjudgeable), 0 failed"),
        "stdout: {}",
        stdout(&judged)
    );
    let verdicts_path = w.out.join(VERDICTS_FILE);
    assert_eq!(nonempty_lines(&verdicts_path), 60);
    let verdicts_once = read(&verdicts_path);

    let rejudged = run_cli(&["judge", "--config", cfg], &[]);
    assert_exit(&rejudged, 0);
    assert_eq!(read(&verdicts_path), verdicts_once);

    let tables = w.out.join("tables");
    let scored = run_cli(
        &[
            "score",
            "--data",
            w.data.to_str().unwrap(),
            "--verdicts",
            verdicts_path.to_str().unwrap(),
            "--out",
            tables.to_str().unwrap(),
        ],
        &[],
    );
    assert_exit(&scored, 0);
    assert!(
        stdout(&scored)
            .contains("score: accuracy 53.33% (32/60), pooled inconsistency 42.11%, 0 unjudgeable"),
        "stdout: {}",
        stdout(&scored)
    );

    let report = w.out.join("report");
    let reported = run_cli(
        &[
            "report",
            "--data",
            w.data.to_str().unwrap(),
            "--verdicts",
            verdicts_path.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
            "--model",
            "scripted-video-model",
            "--model-size-b",
            "7",
        ],
        &[],
    );
    assert_exit(&reported, 0);
    for file in [
        "accuracy_table.csv",
        "bias_report.csv",
        "heatmap_cause_aspect.csv",
        "heatmap_format_aspect.csv",
        "heatmap_format_cause.csv",
        "buckets_duration.csv",
        "buckets_frames.csv",
        "buckets_question_length.csv",
        "summary.md",
        "size_scatter.csv",
    ] {
        assert!(report.join(file).is_file(), "missing report artifact {file}");
    }
    assert!(read(&report.join("summary.md")).contains("scripted-video-model"));
    assert_eq!(nonempty_lines(&report.join("size_scatter.csv")), 2);

    // Scoring the same verdicts into a fresh directory reproduces the
    // tables exactly.
    let tables2 = w.out.join("tables2");
    let rescored = run_cli(
        &[
            "score",
            "--data",
            w.data.to_str().unwrap(),
            "--verdicts",
            verdicts_path.to_str().unwrap(),
            "--out",
            tables2.to_str().unwrap(),
        ],
        &[],
    );
    assert_exit(&rescored, 0);
    for file in ["accuracy_table.csv", "bias_report.csv"] {
        assert_eq!(read(&tables2.join(file)), read(&tables.join(file)), "{file} drifted");
    }
}

#[test]
fn cot_mode_extracts_answers_for_choice_formats_and_scores_identically() {
    let w = scripted_world();
    let cfg = w.manifest.to_str().unwrap();
    let data = w.data.to_str().unwrap();

    // Direct-mode pipeline in the manifest's output directory.
    assert_exit(&run_cli(&["run", "--config", cfg], &[]), 0);
    assert_exit(&run_cli(&["judge", "--config", cfg], &[]), 0);
    let direct_tables = w.out.join("tables");
    assert_exit(
        &run_cli(
            &[
                "score",
                "--data",
                data,
                "--verdicts",
                w.out.join(VERDICTS_FILE).to_str().unwrap(),
                "--out",
                direct_tables.to_str().unwrap(),
            ],
            &[],
        ),
        0,
    );

    // Chain-of-thought pipeline in an overridden output directory.
    let cot_out = w._tmp.path().join("out_cot");
    let cot = cot_out.to_str().unwrap();
    assert_exit(&run_cli(&["run", "--config", cfg, "--cot", "--out", cot], &[]), 0);

    // Judging chain-of-thought records without --cot is refused: the
    // verdicts would silently grade the wrong prediction text.
    let mismatched = run_cli(&["judge", "--config", cfg, "--out", cot], &[]);
    assert_exit(&mismatched, 1);
    assert!(
        stderr(&mismatched).contains("re-run inference"),
        "stderr: {}",
        stderr(&mismatched)
    );

    assert_exit(&run_cli(&["judge", "--config", cfg, "--cot", "--out", cot], &[]), 0);

    // Extraction happens exactly for the closed formats.
    let questions = dataset::load_dataset(&w.data).unwrap();
    let format_of: std::collections::HashMap<&str, QFormat> =
        questions.iter().map(|q| (q.id.as_str(), q.format)).collect();
    let verdicts = judge::load_verdicts(cot_out.join(VERDICTS_FILE)).unwrap();
    assert_eq!(verdicts.len(), 60);
    for v in &verdicts {
        let format = format_of[v.question_id.as_str()];
        match format {
            QFormat::ShortAnswer => assert!(
                v.extracted_answer.is_none(),
                "{}: short answers are judged without extraction",
                v.question_id
            ),
            QFormat::Binary => {
                let ans = v.extracted_answer.as_deref().unwrap_or_else(|| {
                    panic!("{}: yes/no reply should have been extracted", v.question_id)
                });
                // Binary extractions come back normalized to lowercase.
                assert!(ans == "yes" || ans == "no", "{}: got {ans:?}", v.question_id);
            }
            QFormat::MultipleChoice => assert!(
                v.extracted_answer.is_some(),
                "{}: choice reply should have been extracted",
                v.question_id
            ),
        }
    }

    // The scripted replies carry the same final answer in both modes, so
    // the scored tables must come out identical.
    let cot_tables = cot_out.join("tables");
    assert_exit(
        &run_cli(
            &[
                "score",
                "--data",
                data,
                "--verdicts",
                cot_out.join(VERDICTS_FILE).to_str().unwrap(),
                "--out",
                cot_tables.to_str().unwrap(),
            ],
            &[],
        ),
        0,
    );
    for file in ["accuracy_table.csv", "bias_report.csv"] {
        assert_eq!(
            read(&cot_tables.join(file)),
            read(&direct_tables.join(file)),
            "{file} differs between prompt modes"
        );
    }
}

#[test]
fn judging_before_running_is_a_fatal_error() {
    let w = scripted_world();
    let out = run_cli(&["judge", "--config", w.manifest.to_str().unwrap()], &[]);
    assert_exit(&out, 1);
    assert!(
        stderr(&out).contains("run the `run` command first"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn interrupted_runs_are_refused_until_resume_is_passed() {
    let w = scripted_world();
    let cfg = w.manifest.to_str().unwrap();

    // Simulate a run that died mid-flight: the state sidecar never reached
    // a terminal status.
    std::fs::create_dir_all(&w.out).unwrap();
    std::fs::write(
        w.out.join("run_state.json"),
        concat!(
            "{\"status\":\"running\",\"model_name\":\"scripted-video-model\",",
            "\"sampling_digest\":\"0011223344556677\",\"n_questions\":60,",
            "\"n_done\":12,\"n_failures\":0,\"started_at\":1755000000,",
            "\"finished_at\":null}"
        ),
    )
    .unwrap();

    let refused = run_cli(&["run", "--config", cfg], &[]);
    assert_exit(&refused, 1);
    assert!(
        stderr(&refused).contains("pass --resume to continue it"),
        "stderr: {}",
        stderr(&refused)
    );

    let resumed = run_cli(&["run", "--config", cfg, "--resume"], &[]);
    assert_exit(&resumed, 0);
    assert!(stdout(&resumed).contains("60/60 answered"), "stdout: {}", stdout(&resumed));
}

#[test]
fn unreachable_endpoint_records_item_failures_and_a_resumed_run_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("questions.jsonl");
    let one_group: Vec<_> = mock::scenario60()
        .questions
        .into_iter()
        .filter(|q| q.group_id == "b01")
        .collect();
    assert_eq!(one_group.len(), 2);
    dataset::write_dataset(&data, &one_group).unwrap();

    let out = tmp.path().join("out");
    let manifest = tmp.path().join("run.toml");
    // Port 9 (discard) is closed; every question fails at the transport
    // layer without taking down the run.
    std::fs::write(
        &manifest,
        manifest_toml(&data, &out, "http://127.0.0.1:9/v1", 1.0, 0),
    )
    .unwrap();
    let key = [("HAVEN_PIPELINE_TEST_KEY", "test-key")];
    let cfg = manifest.to_str().unwrap();

    let failed = run_cli(&["run", "--config", cfg], &key);
    assert_exit(&failed, 3);
    assert!(
        stdout(&failed).contains("run: 0/2 answered"),
        "stdout: {}",
        stdout(&failed)
    );
    assert!(
        stderr(&failed).contains("run_failures.jsonl"),
        "stderr: {}",
        stderr(&failed)
    );
    assert_eq!(nonempty_lines(&out.join(RUN_FAILURES_FILE)), 2);
    assert_eq!(nonempty_lines(&out.join(RECORDS_FILE)), 0);
    let state: serde_json::Value =
        serde_json::from_str(&read(&out.join("run_state.json"))).unwrap();
    assert_eq!(state["status"], "partial");

    // A partial run is protected the same way as an interrupted one.
    let refused = run_cli(&["run", "--config", cfg], &key);
    assert_exit(&refused, 1);
    assert!(
        stderr(&refused).contains("pass --resume to continue it"),
        "stderr: {}",
        stderr(&refused)
    );

    // Point the manifest at the scripted endpoint and resume: the run
    // completes and the rest of the pipeline works off the fresh records.
    std::fs::write(&manifest, manifest_toml(&data, &out, "mock:scenario60", 10.0, 1)).unwrap();
    let resumed = run_cli(&["run", "--config", cfg, "--resume"], &key);
    assert_exit(&resumed, 0);
    assert!(stdout(&resumed).contains("run: 2/2 answered"), "stdout: {}", stdout(&resumed));
    assert_eq!(nonempty_lines(&out.join(RUN_FAILURES_FILE)), 0);

    assert_exit(&run_cli(&["judge", "--config", cfg], &key), 0);
    let scored = run_cli(
        &[
            "score",
            "--data",
            data.to_str().unwrap(),
            "--verdicts",
            out.join(VERDICTS_FILE).to_str().unwrap(),
            "--out",
            out.join("tables").to_str().unwrap(),
        ],
        &key,
    );
    assert_exit(&scored, 0);
    assert!(
        stdout(&scored).contains("accuracy 100.00% (2/2)"),
        "stdout: {}",
        stdout(&scored)
    );
}

#[test]
fn usage_and_validation_errors_use_distinct_exit_codes() {
    // Missing required arguments and unknown subcommands are usage errors.
    assert_exit(&run_cli(&["stats"], &[]), 2);
    assert_exit(&run_cli(&["definitely-not-a-command"], &[]), 2);

    // A syntactically valid invocation with an impossible hyperparameter
    // fails like any other fatal error.
    let tmp = tempfile::tempdir().unwrap();
    let bad = run_cli(
        &["tdpo", "--out", tmp.path().to_str().unwrap(), "--beta", "0"],
        &[],
    );
    assert_exit(&bad, 1);

    // So does a missing manifest, and the message names the file.
    let gone = tmp.path().join("missing.toml");
    let no_manifest = run_cli(&["run", "--config", gone.to_str().unwrap()], &[]);
    assert_exit(&no_manifest, 1);
    assert!(
        stderr(&no_manifest).contains("missing.toml"),
        "stderr: {}",
        stderr(&no_manifest)
    );
}

#[test]
fn stats_and_training_commands_write_their_artifacts() {
    let w = scripted_world();

    let stats_dir = w._tmp.path().join("stats");
    let stats = run_cli(
        &[
            "stats",
            "--data",
            w.data.to_str().unwrap(),
            "--out",
            stats_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_exit(&stats, 0);
    assert!(stdout(&stats).contains("stats: 60 questions"), "stdout: {}", stdout(&stats));
    assert!(stats_dir.join("stats.csv").is_file());
    assert!(stats_dir.join("stats.md").is_file());

    let tdpo_dir = w._tmp.path().join("tdpo");
    let tdpo = run_cli(
        &["tdpo", "--out", tdpo_dir.to_str().unwrap(), "--steps", "25"],
        &[],
    );
    assert_exit(&tdpo, 0);
    assert!(stdout(&tdpo).contains("tdpo: 50 pairs"), "stdout: {}", stdout(&tdpo));
    assert_eq!(nonempty_lines(&tdpo_dir.join("pairs.jsonl")), 50);
    let trace = read(&tdpo_dir.join("tdpo_trace.csv"));
    assert!(trace.starts_with("step,mean_loss,margin_rate\n"));
    assert!(trace.lines().count() > 2);

    let srft_dir = w._tmp.path().join("srft");
    let srft = run_cli(
        &["srft", "--out", srft_dir.to_str().unwrap(), "--steps", "10"],
        &[],
    );
    assert_exit(&srft, 0);
    assert!(stdout(&srft).contains("srft: 8 samples"), "stdout: {}", stdout(&srft));
    assert_eq!(nonempty_lines(&srft_dir.join("samples.jsonl")), 8);
    assert!(read(&srft_dir.join("srft_trace.csv")).starts_with("step,loss\n"));
    let adapter = haven::srft::load_adapter(srft_dir.join("adapter.json")).unwrap();
    assert_eq!(adapter.rank, 4);
    assert_eq!(adapter.b.ncols(), 4);
}
