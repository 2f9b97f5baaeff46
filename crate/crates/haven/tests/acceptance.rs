//! Acceptance suite: the checks a release must pass, one test per
//! criterion. Every test ends by printing a single `PASS [n/9]` line
//! (visible under `cargo test --test acceptance -- --nocapture`), so a
//! green run doubles as a readable checklist.
//!
//! The metric tests verify the library against independent brute-force
//! recomputations written here from the definitions alone; the training
//! tests verify analytic gradients against central finite differences and
//! pin down end-state numbers as frozen regression fixtures; the pipeline
//! tests freeze artifact bytes and the five judge prompts.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use haven::commands::{self, RunFlags, VERDICTS_FILE};
use haven::config::{DatasetSection, FramesSection, OutputSection, RunManifest};
use haven::dataset::{self, Aspect, Axis, Cause, QFormat, Question, VariantTag};
use haven::error::Error;
use haven::judge::{self, TemplateId, Verdict};
use haven::metrics::{self, HeatmapKind};
use haven::mock;
use haven::model_client::{EndpointConfig, SamplingConfig};
use haven::srft::{self, LoraAdapter, SrftConfig};
use haven::tdpo::{
    self, PreferencePair, ScoreMode, SegmentLabel, TdpoConfig, ToyPolicy, TOY_DIM, TOY_VOCAB,
};

// ---------------------------------------------------------------------------
// [1/9] Metrics vs an independent brute-force oracle
// ---------------------------------------------------------------------------

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.gen_range(0..xs.len())]
}

const FILLER_WORDS: [&str; 10] = [
    "door", "red-ish", "open", "gate,", "tall", "very", "quickly", "it's", "stop.", "run",
];

fn filler_text(rng: &mut ChaCha8Rng) -> String {
    let words = rng.gen_range(1..=55);
    let mut text = (0..words)
        .map(|_| pick(rng, &FILLER_WORDS))
        .collect::<Vec<_>>()
        .join(" ");
    text.push('?');
    text
}

#[allow(clippy::too_many_arguments)]
fn make_question(
    id: String,
    group_id: &str,
    variant_tag: VariantTag,
    format: QFormat,
    cause: Cause,
    aspect: Aspect,
    video_ref: &str,
    text: String,
    gold_answer: &str,
    duration_s: f64,
    frame_count: u64,
) -> Question {
    Question {
        id,
        group_id: group_id.to_string(),
        variant_tag,
        video_ref: video_ref.to_string(),
        cause,
        aspect,
        format,
        text,
        gold_answer: gold_answer.to_string(),
        duration_s,
        frame_count,
    }
}

/// One randomized well-formed corpus plus a complete verdict set: every
/// question gets exactly one verdict, some of which are unjudgeable, and
/// the verdict file order is shuffled relative to the questions.
fn random_scenario(seed: u64) -> (Vec<Question>, Vec<Verdict>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0000 + seed);
    let n_groups = rng.gen_range(2..=18);
    let mut questions = Vec::new();

    for g in 0..n_groups {
        let cause = pick(&mut rng, &Cause::ALL);
        let aspect = pick(&mut rng, &Aspect::ALL);
        let format = pick(&mut rng, &QFormat::ALL);
        let gid = format!("g{seed}-{g:02}");
        let video = format!("videos/{seed}-{g:03}.mp4");
        let duration_s = rng.gen_range(0..900) as f64 / 10.0;
        let frame_count = rng.gen_range(0..1500);
        match format {
            QFormat::Binary => {
                questions.push(make_question(
                    format!("{gid}-y"),
                    &gid,
                    VariantTag::YesCorrect,
                    format,
                    cause,
                    aspect,
                    &video,
                    filler_text(&mut rng),
                    "Yes",
                    duration_s,
                    frame_count,
                ));
                questions.push(make_question(
                    format!("{gid}-n"),
                    &gid,
                    VariantTag::NoCorrect,
                    format,
                    cause,
                    aspect,
                    &video,
                    filler_text(&mut rng),
                    "No",
                    duration_s,
                    frame_count,
                ));
            }
            QFormat::MultipleChoice => {
                for (tag, gold) in [
                    (VariantTag::A, "A. the first option"),
                    (VariantTag::B, "B. the first option"),
                    (VariantTag::C, "C. the first option"),
                ] {
                    questions.push(make_question(
                        format!("{gid}-{}", tag.as_str()),
                        &gid,
                        tag,
                        format,
                        cause,
                        aspect,
                        &video,
                        filler_text(&mut rng),
                        gold,
                        duration_s,
                        frame_count,
                    ));
                }
            }
            QFormat::ShortAnswer => {
                let gold = if rng.gen_bool(0.1) { "no answer" } else { "The clip shows a tower." };
                questions.push(make_question(
                    format!("{gid}-s"),
                    &gid,
                    VariantTag::Sole,
                    format,
                    cause,
                    aspect,
                    &video,
                    filler_text(&mut rng),
                    gold,
                    duration_s,
                    frame_count,
                ));
            }
        }
    }

    let mut verdicts: Vec<Verdict> = questions
        .iter()
        .map(|q| {
            if rng.gen_bool(0.12) {
                // Unjudgeable: the raw reply never parsed as a verdict.
                let raw = if rng.gen_bool(0.5) { "I think 1".to_string() } else { String::new() };
                Verdict {
                    question_id: q.id.clone(),
                    correct: false,
                    extracted_answer: None,
                    judge_model: "oracle-judge".into(),
                    raw_judge_output: raw,
                }
            } else {
                let correct = rng.gen_bool(0.6);
                Verdict {
                    question_id: q.id.clone(),
                    correct,
                    extracted_answer: None,
                    judge_model: "oracle-judge".into(),
                    raw_judge_output: if correct { "1".into() } else { "0".into() },
                }
            }
        })
        .collect();
    verdicts.shuffle(&mut rng);
    (questions, verdicts)
}

/// Linear-scan verdict lookup: the oracle deliberately avoids maps.
fn oracle_verdict<'a>(verdicts: &'a [Verdict], id: &str) -> &'a Verdict {
    verdicts
        .iter()
        .find(|v| v.question_id == id)
        .expect("every question has a verdict")
}

/// A reply is usable iff it is exactly "1" or "0" after trimming.
fn oracle_unjudgeable(v: &Verdict) -> bool {
    let t = v.raw_judge_output.trim();
    t != "1" && t != "0"
}

/// Re-statement of the question-length rule: each alphanumeric run is one
/// token, every other non-whitespace character is its own token.
fn oracle_tokens(text: &str) -> usize {
    let mut n = 0;
    let mut in_run = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            in_run = false;
        } else if ch.is_alphanumeric() {
            if !in_run {
                n += 1;
                in_run = true;
            }
        } else {
            n += 1;
            in_run = false;
        }
    }
    n
}

fn oracle_axis_value(q: &Question, axis: Axis) -> f64 {
    match axis {
        Axis::Duration => q.duration_s,
        Axis::Frames => q.frame_count as f64,
        Axis::QuestionLength => oracle_tokens(&q.text) as f64,
    }
}

/// Half-open buckets with a final overflow bucket at the last edge.
fn oracle_bucket(value: f64, edges: &[f64]) -> usize {
    if value >= *edges.last().unwrap() {
        return edges.len() - 1;
    }
    let mut i = 0;
    while !(value >= edges[i] && value < edges[i + 1]) {
        i += 1;
    }
    i
}

fn oracle_bucket_label(edges: &[f64], i: usize) -> String {
    if i + 1 < edges.len() {
        format!("[{}, {})", edges[i], edges[i + 1])
    } else {
        format!("[{}, inf)", edges[i])
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct Counts {
    n: u64,
    correct: u64,
}

impl Counts {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += u64::from(correct);
    }
}

#[derive(Debug, Default, PartialEq, Eq)]
struct GroupCounts {
    groups: u64,
    biased: u64,
    all_correct: u64,
    excluded: u64,
}

fn oracle_bias_bucket(
    questions: &[Question],
    verdicts: &[Verdict],
    format: QFormat,
) -> GroupCounts {
    let mut by_group: BTreeMap<&str, Vec<&Question>> = BTreeMap::new();
    for q in questions {
        by_group.entry(q.group_id.as_str()).or_default().push(q);
    }
    let mut out = GroupCounts::default();
    for members in by_group.values() {
        if members[0].format != format {
            continue;
        }
        let vs: Vec<&Verdict> = members.iter().map(|q| oracle_verdict(verdicts, &q.id)).collect();
        if vs.iter().any(|v| oracle_unjudgeable(v)) {
            out.excluded += 1;
            continue;
        }
        out.groups += 1;
        if vs.iter().any(|v| v.correct != vs[0].correct) {
            out.biased += 1;
        }
        if vs.iter().all(|v| v.correct) {
            out.all_correct += 1;
        }
    }
    out
}

fn check_scenario_against_oracle(questions: &[Question], verdicts: &[Verdict]) {
    // Accuracy grid and total.
    let table = metrics::accuracy_table(questions, verdicts).expect("accuracy");
    let mut oracle_total = Counts::default();
    for &cause in &Cause::ALL {
        for &aspect in &Aspect::ALL {
            let mut cell = Counts::default();
            for q in questions.iter().filter(|q| q.cause == cause && q.aspect == aspect) {
                cell.add(oracle_verdict(verdicts, &q.id).correct);
            }
            let got = table.cell(cause, aspect);
            assert_eq!((got.n, got.correct), (cell.n, cell.correct), "cell {cause}/{aspect}");
            oracle_total.n += cell.n;
            oracle_total.correct += cell.correct;
        }
    }
    let got_total = table.total();
    assert_eq!((got_total.n, got_total.correct), (oracle_total.n, oracle_total.correct));

    // Consistency bias per format bucket plus the pooled rate.
    let report = metrics::bias_report(questions, verdicts).expect("bias");
    let want_b = oracle_bias_bucket(questions, verdicts, QFormat::Binary);
    let want_m = oracle_bias_bucket(questions, verdicts, QFormat::MultipleChoice);
    for (got, want, name) in [
        (&report.binary, &want_b, "binary"),
        (&report.multiple_choice, &want_m, "multiple_choice"),
    ] {
        assert_eq!(
            (got.groups, got.biased, got.all_correct, got.excluded),
            (want.groups, want.biased, want.all_correct, want.excluded),
            "{name} bias counts"
        );
    }
    let pooled_groups = want_b.groups + want_m.groups;
    let oracle_pooled = if pooled_groups == 0 {
        None
    } else {
        Some(100.0 * (want_b.biased + want_m.biased) as f64 / pooled_groups as f64)
    };
    assert_eq!(report.pooled_pct(), oracle_pooled, "pooled bias");

    // Bucketed accuracy along all three axes; empty buckets omitted.
    for axis in [Axis::Duration, Axis::Frames, Axis::QuestionLength] {
        let edges = axis.default_edges();
        let got = metrics::bucket_series(questions, verdicts, axis, &edges).expect("buckets");
        let mut want: Vec<(String, Counts)> = Vec::new();
        for i in 0..edges.len() {
            let mut tally = Counts::default();
            for q in questions {
                if oracle_bucket(oracle_axis_value(q, axis), &edges) == i {
                    tally.add(oracle_verdict(verdicts, &q.id).correct);
                }
            }
            if tally.n > 0 {
                want.push((oracle_bucket_label(&edges, i), tally));
            }
        }
        assert_eq!(got.len(), want.len(), "bucket count along {axis}");
        for (g, (label, tally)) in got.iter().zip(&want) {
            assert_eq!(&g.label, label, "bucket label along {axis}");
            assert_eq!((g.tally.n, g.tally.correct), (tally.n, tally.correct), "bucket tally along {axis}");
        }
    }

    // All three pairwise heatmaps.
    for kind in HeatmapKind::ALL {
        let got = metrics::pair_heatmap(questions, verdicts, kind).expect("heatmap");
        let (want_rows, want_cols): (Vec<&str>, Vec<&str>) = match kind {
            HeatmapKind::CauseAspect => (
                Cause::ALL.iter().map(|c| c.as_str()).collect(),
                Aspect::ALL.iter().map(|a| a.as_str()).collect(),
            ),
            HeatmapKind::FormatAspect => (
                QFormat::ALL.iter().map(|f| f.as_str()).collect(),
                Aspect::ALL.iter().map(|a| a.as_str()).collect(),
            ),
            HeatmapKind::FormatCause => (
                QFormat::ALL.iter().map(|f| f.as_str()).collect(),
                Cause::ALL.iter().map(|c| c.as_str()).collect(),
            ),
        };
        assert_eq!(got.row_labels, want_rows);
        assert_eq!(got.col_labels, want_cols);
        for (r, row_label) in want_rows.iter().enumerate() {
            for (c, col_label) in want_cols.iter().enumerate() {
                let mut want_cell = Counts::default();
                for q in questions {
                    let (qr, qc) = match kind {
                        HeatmapKind::CauseAspect => (q.cause.as_str(), q.aspect.as_str()),
                        HeatmapKind::FormatAspect => (q.format.as_str(), q.aspect.as_str()),
                        HeatmapKind::FormatCause => (q.format.as_str(), q.cause.as_str()),
                    };
                    if qr == *row_label && qc == *col_label {
                        want_cell.add(oracle_verdict(verdicts, &q.id).correct);
                    }
                }
                let got_cell = got.cells[r][c];
                assert_eq!(
                    (got_cell.n, got_cell.correct),
                    (want_cell.n, want_cell.correct),
                    "heatmap {kind:?} cell {row_label}/{col_label}"
                );
            }
        }
    }
}

#[test]
fn metrics_match_a_brute_force_oracle_on_randomized_scenarios() {
    let started = Instant::now();
    for seed in 0..1000 {
        let (questions, verdicts) = random_scenario(seed);
        check_scenario_against_oracle(&questions, &verdicts);
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "oracle sweep took {elapsed:?}, budget is 10s"
    );
    println!(
        "PASS [1/9] metrics: accuracy, bias, buckets and heatmaps match a brute-force oracle on 1000 randomized scenarios ({} ms)",
        elapsed.as_millis()
    );
}

// ---------------------------------------------------------------------------
// [2/9] Weighted-score reductions and the degenerate-weight contract
// ---------------------------------------------------------------------------

fn random_labels(rng: &mut ChaCha8Rng, len: usize) -> Vec<SegmentLabel> {
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.5) {
                SegmentLabel::Original
            } else {
                SegmentLabel::Corrected
            }
        })
        .collect()
}

#[test]
fn weighted_score_reductions_and_degeneracy_contract_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // γ = 1 collapses the weighted score to the plain mean log-prob.
    for _ in 0..100_000 {
        let len = rng.gen_range(1..=12);
        let logps: Vec<f64> = (0..len).map(|_| -rng.gen_range(0.0..8.0f64)).collect();
        let labels = random_labels(&mut rng, len);
        let weighted = tdpo::weighted_score(&logps, &labels, 1.0).unwrap();
        let mean = logps.iter().sum::<f64>() / len as f64;
        assert!(
            (weighted - mean).abs() <= 1e-12,
            "gamma=1 must equal the mean: {weighted} vs {mean}"
        );
    }

    // With no corrected tokens the score ignores γ entirely and equals the
    // length-normalized standard score, bit for bit.
    for _ in 0..2_000 {
        let len = rng.gen_range(1..=12);
        let logps: Vec<f64> = (0..len).map(|_| -rng.gen_range(0.0..8.0f64)).collect();
        let labels = vec![SegmentLabel::Original; len];
        let gamma = match rng.gen_range(0..4) {
            0 => 0.0,
            1 => rng.gen_range(0.0..1.0),
            2 => rng.gen_range(1.0..10.0),
            _ => rng.gen_range(10.0..100.0),
        };
        let weighted = tdpo::weighted_score(&logps, &labels, gamma).unwrap();
        let standard = tdpo::standard_score(&logps, true).unwrap();
        assert_eq!(
            weighted.to_bits(),
            standard.to_bits(),
            "all-original score must be gamma-free (gamma={gamma})"
        );
    }

    // Degenerate weights error exactly when the weight mass is zero:
    // an empty sequence, or γ = 0 with every token corrected.
    for case in 0..2_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3_000 + case);
        let len = rng.gen_range(0..=6);
        let logps: Vec<f64> = (0..len).map(|_| -rng.gen_range(0.0..4.0f64)).collect();
        let labels = random_labels(&mut rng, len);
        let gamma = if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.1..5.0) };
        let n_o = labels.iter().filter(|&&l| l == SegmentLabel::Original).count() as f64;
        let n_h = len as f64 - n_o;
        let degenerate = n_o + gamma * n_h == 0.0;
        match tdpo::weighted_score(&logps, &labels, gamma) {
            Err(Error::DegenerateWeights) => {
                assert!(degenerate, "spurious degeneracy for n_o={n_o} n_h={n_h} gamma={gamma}")
            }
            Ok(_) => assert!(!degenerate, "missed degeneracy for n_o={n_o} n_h={n_h} gamma={gamma}"),
            Err(other) => panic!("unexpected error: {other}"),
        }
    }

    println!(
        "PASS [2/9] weighted score: γ=1 mean reduction (1e5 sequences), all-original γ-independence, degenerate-weight contract"
    );
}

// ---------------------------------------------------------------------------
// [3/9] Preference loss fixed point at policy == reference
// ---------------------------------------------------------------------------

#[test]
fn preference_loss_sits_at_ln_two_when_policy_equals_reference() {
    let ln2 = std::f64::consts::LN_2;
    for i in 0..100u64 {
        let dim = 4 + (i % 5) as usize;
        let vocab = 6 + (i % 7) as usize;
        let pairs = tdpo::synthetic_pairs(1, vocab, dim, 10_000 + i);
        let policy = ToyPolicy::seeded(dim, vocab, 500 + i);
        let reference = policy.clone();
        for beta in [0.05, 0.1, 1.0] {
            for (mode, normalize) in [
                (ScoreMode::Weighted, false),
                (ScoreMode::Standard, false),
                (ScoreMode::Standard, true),
            ] {
                let cfg = TdpoConfig {
                    gamma: if i % 2 == 0 { 5.0 } else { 0.5 },
                    beta,
                    lr: 0.1,
                    steps: 1,
                    seed: 0,
                };
                let loss =
                    tdpo::batch_loss(&policy, &reference, &pairs, &cfg, mode, normalize).unwrap();
                assert!(
                    (loss - ln2).abs() <= 1e-9,
                    "loss {loss} at the symmetric point (beta={beta}, mode={mode:?})"
                );
            }
        }
    }
    println!(
        "PASS [3/9] preference loss: ln 2 fixed point at policy == reference (100 pairs × both score modes × β ∈ {{0.05, 0.1, 1.0}})"
    );
}

// ---------------------------------------------------------------------------
// [4/9] Analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn argmax_abs(m: &DMatrix<f64>) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_abs = -1.0;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if m[(r, c)].abs() > best_abs {
                best_abs = m[(r, c)].abs();
                best = (r, c);
            }
        }
    }
    best
}

fn check_tdpo_gradient(mode: ScoreMode, instances: u64) {
    let h = 1e-5;
    for i in 0..instances {
        let dim = 4 + (i % 5) as usize;
        let vocab = 6 + (i % 7) as usize;
        let pairs = tdpo::synthetic_pairs(2 + (i % 3) as usize, vocab, dim, 40_000 + i);
        let policy = ToyPolicy::seeded(dim, vocab, 9_000 + i);
        let reference = ToyPolicy::seeded(dim, vocab, 77_000 + i);
        let cfg = TdpoConfig {
            gamma: [0.5, 2.0, 5.0][(i % 3) as usize],
            beta: [0.05, 0.1, 1.0][(i % 3) as usize],
            lr: 0.1,
            steps: 1,
            seed: 0,
        };
        let normalize = i % 2 == 0;
        let eval = tdpo::batch_gradient(&policy, &reference, &pairs, &cfg, mode, normalize).unwrap();
        let (r, c) = argmax_abs(&eval.grad);

        let mut plus = policy.clone();
        plus.weights[(r, c)] += h;
        let mut minus = policy.clone();
        minus.weights[(r, c)] -= h;
        let fd = (tdpo::batch_loss(&plus, &reference, &pairs, &cfg, mode, normalize).unwrap()
            - tdpo::batch_loss(&minus, &reference, &pairs, &cfg, mode, normalize).unwrap())
            / (2.0 * h);
        let err = rel_err(eval.grad[(r, c)], fd);
        assert!(
            err < 1e-4,
            "{mode:?} gradient off at instance {i}: analytic {} vs fd {fd} (rel err {err})",
            eval.grad[(r, c)]
        );
    }
}

fn check_srft_gradients(instances: u64) {
    let h = 1e-5;
    let samples = srft::standard_toy_batch();
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(60_000 + i);
        let dim = 6 + (i % 5) as usize;
        let vocab = 8 + (i % 7) as usize;
        let rank = 1 + (i as usize % (dim.min(vocab) / 2));
        let alpha = [0.5, 1.0, 2.0][(i % 3) as usize];
        let policy = ToyPolicy::seeded(dim, vocab, 100 + i);
        let mut adapter = LoraAdapter::seeded(dim, vocab, rank, alpha, 200 + i).unwrap();
        // Move B off its zero initialization so the loss depends on A too.
        adapter.b = DMatrix::from_fn(dim, rank, |_, _| (rng.gen::<f64>() - 0.5) * 0.2);

        let eval = srft::srft_gradients(&policy, &adapter, &samples).unwrap();

        let (ra, ca) = argmax_abs(&eval.grad_a);
        let mut plus = adapter.clone();
        plus.a[(ra, ca)] += h;
        let mut minus = adapter.clone();
        minus.a[(ra, ca)] -= h;
        let fd_a = (srft::srft_loss(&policy, &plus, &samples).unwrap()
            - srft::srft_loss(&policy, &minus, &samples).unwrap())
            / (2.0 * h);
        let err_a = rel_err(eval.grad_a[(ra, ca)], fd_a);
        assert!(err_a < 1e-4, "A-gradient off at instance {i}: rel err {err_a}");

        let (rb, cb) = argmax_abs(&eval.grad_b);
        let mut plus = adapter.clone();
        plus.b[(rb, cb)] += h;
        let mut minus = adapter.clone();
        minus.b[(rb, cb)] -= h;
        let fd_b = (srft::srft_loss(&policy, &plus, &samples).unwrap()
            - srft::srft_loss(&policy, &minus, &samples).unwrap())
            / (2.0 * h);
        let err_b = rel_err(eval.grad_b[(rb, cb)], fd_b);
        assert!(err_b < 1e-4, "B-gradient off at instance {i}: rel err {err_b}");
    }
}

#[test]
fn analytic_gradients_match_central_finite_differences() {
    let started = Instant::now();
    check_tdpo_gradient(ScoreMode::Standard, 100);
    check_tdpo_gradient(ScoreMode::Weighted, 100);
    check_srft_gradients(100);
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "gradient sweep took {elapsed:?}, budget is 30s"
    );
    println!(
        "PASS [4/9] gradients: analytic vs central finite differences (h=1e-5) rel err < 1e-4 on 100 instances per objective ({} ms)",
        elapsed.as_millis()
    );
}

// ---------------------------------------------------------------------------
// [5/9] Preference training end-state: margins, direction, frozen fixtures
// ---------------------------------------------------------------------------

fn train_weighted(gamma: f64, pairs: &[PreferencePair]) -> (tdpo::TrainingOutcome, f64) {
    let mut policy = ToyPolicy::seeded(TOY_DIM, TOY_VOCAB, 7);
    let reference = policy.clone();
    let cfg = TdpoConfig { gamma, beta: 0.1, lr: 0.1, steps: 200, seed: 7 };
    let outcome = tdpo::train_tdpo(&mut policy, pairs, &cfg, ScoreMode::Weighted, false).unwrap();
    let gain = tdpo::corrected_logprob_gain(&policy, &reference, pairs).unwrap();
    (outcome, gain)
}

#[test]
// Fixture literals are kept exactly as captured, digits beyond f64
// round-trip included.
#[allow(clippy::excessive_precision)]
fn preference_training_hits_margin_and_directional_targets() {
    let pairs = tdpo::synthetic_pairs(50, TOY_VOCAB, TOY_DIM, 7);
    let (high, gain_high) = train_weighted(5.0, &pairs);
    let (low, gain_low) = train_weighted(1.0, &pairs);

    // Training starts at the symmetric fixed point and ends with almost
    // every pair preferring the revised continuation.
    assert!((high.trace[0].mean_loss - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(
        high.final_margin_rate >= 0.9,
        "final positive-margin rate {}",
        high.final_margin_rate
    );

    // Heavier corrected-token weight must lift corrected tokens harder.
    assert!(
        gain_high > gain_low,
        "directional check failed: gain at gamma=5 ({gain_high}) vs gamma=1 ({gain_low})"
    );

    // Frozen regression fixtures from the first verified run.
    assert!((high.final_loss - 0.692944462569919484).abs() < 1e-12, "got {}", high.final_loss);
    assert_eq!(high.final_margin_rate, 0.98);
    assert!((gain_high - 3.09478920201598394e-3).abs() < 1e-15, "got {gain_high}");
    assert!((low.final_loss - 0.693023088474592708).abs() < 1e-12, "got {}", low.final_loss);
    assert!((gain_low - 1.71642118109771114e-3).abs() < 1e-15, "got {gain_low}");

    println!(
        "PASS [5/9] preference training: {:.0}% positive margins; corrected-token gain {:+.6} (γ=5) > {:+.6} (γ=1); frozen fixtures hold",
        100.0 * high.final_margin_rate,
        gain_high,
        gain_low
    );
}

// ---------------------------------------------------------------------------
// [6/9] Adapter fine-tuning contracts
// ---------------------------------------------------------------------------

#[test]
// Fixture literals are kept exactly as captured, digits beyond f64
// round-trip included.
#[allow(clippy::excessive_precision)]
fn adapter_fine_tuning_contracts_hold() {
    let policy = ToyPolicy::seeded(TOY_DIM, TOY_VOCAB, 7);
    let base_bits: Vec<u64> = policy.weights.iter().map(|w| w.to_bits()).collect();
    let samples = srft::standard_toy_batch();
    let cfg = SrftConfig::default();
    let outcome = srft::train_srft(&policy, &samples, &cfg).unwrap();

    // The base weights are bit-for-bit untouched; only the adapter moved.
    let after_bits: Vec<u64> = policy.weights.iter().map(|w| w.to_bits()).collect();
    assert_eq!(base_bits, after_bits, "base weights changed during fine-tuning");

    // The learned update is certifiably low-rank.
    let svals = outcome.adapter.update_singular_values();
    assert!(svals[0] > 1.0, "training left no visible update (top σ = {})", svals[0]);
    for (idx, &s) in svals.iter().enumerate().skip(cfg.rank) {
        assert!(s < 1e-9, "singular value {idx} past rank {} is {s}", cfg.rank);
    }

    // Full-batch descent makes strict progress over the first ten steps.
    for i in 0..10 {
        assert!(
            outcome.trace[i + 1].loss < outcome.trace[i].loss,
            "loss failed to decrease at step {i}: {} -> {}",
            outcome.trace[i].loss,
            outcome.trace[i + 1].loss
        );
    }

    // Frozen regression fixtures from the first verified run.
    assert!((outcome.trace[0].loss - 3.46950818891982715).abs() < 1e-12, "got {}", outcome.trace[0].loss);
    assert!((outcome.final_loss - 3.05438271336050926).abs() < 1e-12, "got {}", outcome.final_loss);

    println!(
        "PASS [6/9] adapter fine-tuning: base bit-unchanged, update rank ≤ {}, loss {:.6} → {:.6} strictly decreasing early; frozen fixtures hold",
        cfg.rank, outcome.trace[0].loss, outcome.final_loss
    );
}

// ---------------------------------------------------------------------------
// [7/9] End-to-end determinism on the scripted corpus
// ---------------------------------------------------------------------------

const GOLDEN_ACCURACY_CSV: &str = concat!(
    "cause,aspect,n,correct,accuracy\n",
    "prior_conflict,object,16,11,68.75\n",
    "prior_conflict,scene,4,4,100.00\n",
    "prior_conflict,event,11,7,63.64\n",
    "in_context_conflict,object,5,1,20.00\n",
    "in_context_conflict,scene,4,0,0.00\n",
    "in_context_conflict,event,6,2,33.33\n",
    "capability_deficiency,object,6,4,66.67\n",
    "capability_deficiency,scene,3,1,33.33\n",
    "capability_deficiency,event,5,2,40.00\n",
    "total,,60,32,53.33\n",
);

const GOLDEN_BIAS_CSV: &str = concat!(
    "binary_groups,binary_biased,binary_bias_pct,binary_excluded,",
    "mc_groups,mc_biased,mc_bias_pct,mc_excluded,",
    "pooled_groups,pooled_biased,pooled_bias_pct\n",
    "15,6,40.00,0,4,2,50.00,0,19,8,42.11\n",
);

fn scripted_manifest(root: &Path, data: &Path) -> RunManifest {
    RunManifest {
        dataset: DatasetSection { path: data.to_path_buf() },
        model: EndpointConfig {
            base_url: "mock:scenario60".into(),
            api_key_env: "UNUSED".into(),
            model_name: "scripted-video-model".into(),
            max_concurrency: 4,
            timeout_s: 10.0,
            max_retries: 1,
        },
        judge: EndpointConfig {
            base_url: "mock:semantic-judge".into(),
            api_key_env: "UNUSED".into(),
            model_name: "scripted-judge".into(),
            max_concurrency: 4,
            timeout_s: 10.0,
            max_retries: 1,
        },
        sampling: SamplingConfig::default(),
        frames: FramesSection::default(),
        output: OutputSection { dir: root.join("out") },
    }
}

fn run_scripted_pipeline(root: &Path) -> (String, String) {
    let data = root.join("questions.jsonl");
    dataset::write_dataset(&data, &mock::scenario60().questions).unwrap();
    let manifest = scripted_manifest(root, &data);
    let flags = RunFlags::default();

    let run = commands::cmd_run(&manifest, &flags).unwrap();
    assert_eq!(run.total, 60);
    assert!(run.failures.is_empty(), "scripted run must not fail items");
    let judged = commands::cmd_judge(&manifest, &flags).unwrap();
    assert_eq!(judged.total, 60);
    commands::cmd_score(&data, &manifest.output.dir.join(VERDICTS_FILE), &manifest.output.dir)
        .unwrap();

    let accuracy =
        std::fs::read_to_string(manifest.output.dir.join("accuracy_table.csv")).unwrap();
    let bias = std::fs::read_to_string(manifest.output.dir.join("bias_report.csv")).unwrap();
    (accuracy, bias)
}

#[test]
fn scripted_pipeline_reproduces_frozen_csv_bytes_twice() {
    let started = Instant::now();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (acc_a, bias_a) = run_scripted_pipeline(dir_a.path());
    let (acc_b, bias_b) = run_scripted_pipeline(dir_b.path());

    // The designed corpus scores 32/60 with 6/15 + 2/4 inconsistent
    // groups (pooled 8/19); both files must reproduce those numbers
    // byte-for-byte, run after run.
    assert_eq!(acc_a, GOLDEN_ACCURACY_CSV, "accuracy table drifted from the enumerated values");
    assert_eq!(bias_a, GOLDEN_BIAS_CSV, "bias report drifted from the enumerated values");
    assert_eq!(acc_a, acc_b, "accuracy table not byte-stable across runs");
    assert_eq!(bias_a, bias_b, "bias report not byte-stable across runs");

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "two pipeline runs took {elapsed:?}, budget is 5s"
    );
    println!(
        "PASS [7/9] pipeline determinism: scripted corpus reproduces the enumerated accuracy/bias CSVs byte-identically twice ({} ms)",
        elapsed.as_millis()
    );
}

// ---------------------------------------------------------------------------
// [8/9] Judge prompt fidelity and strict verdict parsing
// ---------------------------------------------------------------------------

const GOLDEN_MC_JUDGE: &str = r#"You are a professional homework grading tool. I will provide you with four rules for grading:
1. This is a multiple-choice question. Judge the correctness based on the selected letter and actual content of the provided answers.
2. Regardless of the question type, respond only with either 1 or 0, without any additional explanation.
3. 1 means the prediction is correct, and 0 means it is incorrect.
4. If the predicted answer matches the correct answer in meaning, even if it is phrased differently, consider it correct.
For example, if the prediction conveys the same meaning as the standard answer, you should respond with 1.
Based on the question and its standard answer, is the prediction correct? If yes, return only 1; otherwise, return only 0.
Question: {question}
Standard Answer: {answer}
The Predicted Answer: {prediction}"#;

const GOLDEN_BC_JUDGE: &str = r#"You are a professional homework grading tool. I will provide you with four rules for grading:
1. This is a yes/no question. The Standard Answer is only Yes/No, please directly compare the standard answer with 'yes' or 'no' in the predicted answer.
2. No matter what kind of questions, only response with one of 1 or 0. No more explanation.
3. 1 means correct (they are the same), 0 means wrong (they are different).
For example, if the prediction conveys the same meaning as the standard answer, you should respond with 1.
Based on the question, is the prediction correct? If yes, only return 1, otherwise only return 0.
Question: {question}
Standard Answer: {answer}
The Predicted Answer: {prediction}"#;

const GOLDEN_SA_JUDGE: &str = r#"You are a professional homework grading tool. I will provide you with four rules for grading
1. The Standard Answer is a sentence. Compare the provided predicted answers based on their meaning rather than exact wording. The prediction is correct if it conveys the same intent.
2. If the question asks about identity or species, the predicted answer is correct as long as the core identity or species is correct, even if descriptive adjectives differ.
3. If the question asks about a scene, the predicted answer is correct if the described scene exists in the standard answer or is similar.
4. If the answer indicates that the asked character, object or event is not visible or does not exist, it should be considered as "No answer."
5. Regardless of the question type, respond only with either 1 or 0, without any additional explanation.
6. 1 means correct, and 0 means incorrect.
For example, if the prediction conveys the same meaning as the standard answer, even if phrased differently, you should respond with 1.
Based on the question, is the prediction correct? If yes, return only 1; otherwise, return only 0.
Question: {question}
Standard Answer: {answer}
The Predicted Answer: {prediction}"#;

const GOLDEN_MC_EXTRACT: &str = r#"This is a multiple-choice question. Based on the given question and reasoning process, extract the corresponding answer of the reasoning process.
Question: {question}
Reasoning Process: {prediction}
Instructions:
1. Identify the correct answer based on the reasoning process.
2. If the reasoning process directly mentions one of the given choices (A, B, or C), return the corresponding letter along with the full text of that option (e.g., "A. Option text").
3. If the reasoning process provides an answer that does not explicitly mention A, B, or C, compare its meaning to the given choices and return the best-matching option in the format "Letter. Option text".
4. If the reasoning process concludes that the correct answer is "no answer" or "I don't know", return "no answer".
5. Return only the final answer, without explanation or additional text.
6. Foucs more on the final summary sentence."#;

const GOLDEN_BC_EXTRACT: &str = r#"This is a multiple-choice question. Based on the given question and reasoning process, extract the corresponding answer of the reasoning process.
Question: {question}
Reasoning Process: {prediction}
Instructions:
1. Identify the correct answer based on the reasoning process.
2. If the reasoning process explicitly states "yes" or "no", return direct "yes" or "no"
3. If the reasoning process concludes that the correct answer is "no answer" or "I don't know", return "no answer".
5. Return only the final "yes" or "no", without explanation or additional text."#;

#[test]
fn judge_templates_are_byte_frozen_and_verdict_parsing_is_strict() {
    let golden: [(TemplateId, &str); 5] = [
        (TemplateId::McJudge, GOLDEN_MC_JUDGE),
        (TemplateId::BcJudge, GOLDEN_BC_JUDGE),
        (TemplateId::SaJudge, GOLDEN_SA_JUDGE),
        (TemplateId::McExtract, GOLDEN_MC_EXTRACT),
        (TemplateId::BcExtract, GOLDEN_BC_EXTRACT),
    ];
    for (id, want) in golden {
        let got = judge::template(id).body;
        assert_eq!(got, want, "template {} drifted from its frozen bytes", id.as_str());
        assert_eq!(got.len(), want.len());
    }
    // Secondary pin: the exact on-disk sizes of the five prompts.
    for (id, bytes) in [
        (TemplateId::McJudge, 833),
        (TemplateId::BcJudge, 702),
        (TemplateId::SaJudge, 1197),
        (TemplateId::McExtract, 898),
        (TemplateId::BcExtract, 560),
    ] {
        assert_eq!(judge::template(id).body.len(), bytes, "size of {}", id.as_str());
    }

    // The verdict parser accepts exactly "1" and "0" modulo surrounding
    // whitespace — nothing else.
    for reply in ["1", " 1", "1 ", "\t1\n", "  1  "] {
        assert!(judge::parse_verdict(reply).unwrap(), "accepting {reply:?}");
    }
    for reply in ["0", " 0", "0\n", "\t0\t"] {
        assert!(!judge::parse_verdict(reply).unwrap(), "accepting {reply:?}");
    }
    for reply in [
        "", " ", "01", "10", "1.0", "1.", "0.0", "yes", "no", "correct", "One", "１",
        "0 1", "true", "answer: 1", "[1]",
    ] {
        assert!(judge::parse_verdict(reply).is_err(), "must reject {reply:?}");
    }

    println!(
        "PASS [8/9] judge prompts: five templates byte-frozen; verdict parser accepts exactly '1'/'0' after trim"
    );
}

// ---------------------------------------------------------------------------
// [9/9] Corpus statistics on the released-count replica
// ---------------------------------------------------------------------------

#[test]
fn replica_corpus_stats_match_released_counts_and_flag_inconsistency() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("questions.jsonl");
    dataset::write_dataset(&data, &mock::published_replica()).unwrap();

    let out = dir.path().join("stats");
    let summary = commands::cmd_stats(&data, &out, true).unwrap();
    assert_eq!(summary.total, 6497);

    // Column sums of the cause × aspect grid, recomputed from stats.csv.
    let csv_text = std::fs::read_to_string(out.join("stats.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let mut column_sums: BTreeMap<String, u64> = BTreeMap::new();
    let mut grand_total = None;
    for record in rdr.records() {
        let record = record.unwrap();
        let count: u64 = record[2].parse().unwrap();
        if &record[0] == "total" {
            grand_total = Some(count);
        } else {
            *column_sums.entry(record[1].to_string()).or_default() += count;
        }
    }
    assert_eq!(column_sums.get("object"), Some(&3363));
    assert_eq!(column_sums.get("scene"), Some(&889));
    assert_eq!(column_sums.get("event"), Some(&2245));
    assert_eq!(grand_total, Some(6497));

    // The Markdown report agrees with the reference cells and calls out
    // that the reference's own printed row totals do not add up.
    let md = std::fs::read_to_string(out.join("stats.md")).unwrap();
    assert!(md.contains("| column total | 3363 | 889 | 2245 | 6497 |"), "column totals missing");
    assert!(md.contains("All computed counts match the reference table."));
    assert!(md.contains("| prior_conflict | 4611 | 4569 | INCONSISTENT (off by 42) |"));
    assert!(md.contains("| in_context_conflict | 580 | 538 | INCONSISTENT (off by 42) |"));
    assert!(md.contains("| capability_deficiency | 1306 | 1156 | INCONSISTENT (off by 150) |"));

    println!(
        "PASS [9/9] corpus stats: replica column sums 3363/889/2245 (total 6497); self-inconsistent reference row totals flagged"
    );
}
