//! Segment-weighted direct preference optimization on a toy analytic
//! policy.
//!
//! Preference data consists of (chosen, rejected) continuation pairs. The
//! rejected side is a model's original, flawed response; the chosen side
//! is its human-revised version, with the edited tokens labeled corrected
//! (`h`) and the untouched ones original (`o`). Two sequence scores are
//! supported:
//!
//! * **standard** — the plain sum of token log-probabilities (optionally
//!   length-normalized), the score classic DPO uses;
//! * **weighted** — `K · (Σ_o log p + γ · Σ_h log p)` with
//!   `K = 1 / (|o| + γ·|h|)`, which re-balances how much the corrected
//!   spans contribute. At `γ = 1` it reduces to the length-normalized
//!   standard score; on an all-original sequence it equals it exactly.
//!
//! The policy itself is a single softmax layer over a fixed, hash-derived
//! feature map ([`crate::features`]), so log-probabilities, losses, and
//! gradients are all available in closed form and can be cross-checked
//! against finite differences.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{context_features, hash_tokenize};

/// Provenance of one continuation token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentLabel {
    /// Carried over unchanged from the model's original response.
    #[serde(rename = "o")]
    Original,
    /// Edited in by the human reviser.
    #[serde(rename = "h")]
    Corrected,
}

/// A tokenized continuation with per-token provenance labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedSequence {
    pub tokens: Vec<u32>,
    pub labels: Vec<SegmentLabel>,
    /// Human-readable rendering; not used by training.
    pub text: String,
}

impl SegmentedSequence {
    pub fn check_shape(&self) -> Result<()> {
        if self.tokens.len() != self.labels.len() {
            return Err(Error::Domain(format!(
                "sequence has {} tokens but {} labels",
                self.tokens.len(),
                self.labels.len()
            )));
        }
        Ok(())
    }
}

/// One preference example: the same prompt with a preferred (chosen) and a
/// dispreferred (rejected) continuation. The chosen side is the revised
/// response — its corrected spans mark the edits — while the rejected side
/// is the unrevised original, so it carries only original labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: SegmentedSequence,
    pub rejected: SegmentedSequence,
    /// Optional per-example conditioning vector standing in for video
    /// content; folded into the feature map when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_features: Option<Vec<f64>>,
}

impl PreferencePair {
    pub fn check_shape(&self) -> Result<()> {
        self.chosen.check_shape()?;
        self.rejected.check_shape()?;
        if self.rejected.labels.contains(&SegmentLabel::Corrected) {
            return Err(Error::Domain(
                "rejected continuation carries corrected labels; edits belong to the \
                 chosen (revised) continuation only"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Loads preference pairs from JSONL with line-numbered parse errors.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        pair.check_shape().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}

/// Writes preference pairs as JSONL.
pub fn write_pairs(path: impl AsRef<Path>, pairs: &[PreferencePair]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// How a continuation is scored against the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Sum of token log-probabilities (classic DPO).
    Standard,
    /// Segment-weighted score emphasizing human-corrected spans.
    Weighted,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdpoConfig {
    /// Weight of corrected-token log-probabilities in the weighted score.
    /// Must be finite and non-negative.
    pub gamma: f64,
    /// Preference sharpness of the DPO loss. Must be finite and positive.
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TdpoConfig {
    fn default() -> Self {
        TdpoConfig {
            gamma: 5.0,
            beta: 0.1,
            lr: 0.1,
            steps: 200,
            seed: 7,
        }
    }
}

impl TdpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Argument(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::Argument(format!(
                "beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Argument(format!("lr must be finite and > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Segment-weighted sequence score over precomputed token log-probs:
/// `(Σ_o + γ·Σ_h) / (|o| + γ·|h|)`. A zero weight mass — an empty
/// sequence, or `γ = 0` with every token corrected — has no defined score
/// and is rejected.
pub fn weighted_score(logps: &[f64], labels: &[SegmentLabel], gamma: f64) -> Result<f64> {
    if logps.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} log-probs vs {} labels",
            logps.len(),
            labels.len()
        )));
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Argument(format!(
            "gamma must be finite and >= 0, got {gamma}"
        )));
    }
    let mut sum_o = 0.0;
    let mut sum_h = 0.0;
    let mut n_o = 0.0;
    let mut n_h = 0.0;
    for (lp, label) in logps.iter().zip(labels) {
        match label {
            SegmentLabel::Original => {
                sum_o += lp;
                n_o += 1.0;
            }
            SegmentLabel::Corrected => {
                sum_h += lp;
                n_h += 1.0;
            }
        }
    }
    let denom = n_o + gamma * n_h;
    if denom == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok((sum_o + gamma * sum_h) * (1.0 / denom))
}

/// Standard sequence score: the sum of token log-probs, optionally divided
/// by sequence length. An empty sequence cannot be length-normalized.
pub fn standard_score(logps: &[f64], normalize: bool) -> Result<f64> {
    let sum: f64 = logps.iter().sum();
    if !normalize {
        return Ok(sum);
    }
    if logps.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    Ok(sum * (1.0 / logps.len() as f64))
}

/// Numerically stable `softplus(z) = ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The DPO loss for one pair given the policy-vs-reference margin:
/// `-ln σ(β · margin)`. At `margin = 0` (policy equals reference) this is
/// exactly `ln 2`.
pub fn dpo_loss(beta: f64, margin: f64) -> f64 {
    softplus(-beta * margin)
}

/// Default feature dimension for the desk-scale policy.
pub const TOY_DIM: usize = 16;
/// Default vocabulary size for the desk-scale policy.
pub const TOY_VOCAB: usize = 32;

/// A linear-softmax autoregressive policy over a hash-derived feature map.
///
/// `weights` is `dim × vocab`; token probabilities at each position are
/// `softmax(weightsᵀ · φ)` for the context features `φ` of that position.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    pub dim: usize,
    pub vocab: usize,
    pub weights: DMatrix<f64>,
}

impl ToyPolicy {
    /// Small random initialization, deterministic in the seed.
    pub fn seeded(dim: usize, vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = DMatrix::from_fn(dim, vocab, |_, _| (rng.gen::<f64>() - 0.5) * 0.1);
        ToyPolicy { dim, vocab, weights }
    }

    /// All-zero weights: every token distribution is uniform.
    pub fn uniform(dim: usize, vocab: usize) -> Self {
        ToyPolicy {
            dim,
            vocab,
            weights: DMatrix::zeros(dim, vocab),
        }
    }

    /// Log-probabilities of each token of `continuation`, conditioning on
    /// the prompt, optional video features, and previously generated
    /// tokens.
    pub fn token_logprobs(
        &self,
        prompt: &str,
        video_features: &[f64],
        continuation: &[u32],
    ) -> Result<Vec<f64>> {
        let prompt_tokens = hash_tokenize(prompt, self.vocab);
        let mut out = Vec::with_capacity(continuation.len());
        for (pos, &token) in continuation.iter().enumerate() {
            let phi = DVector::from_vec(context_features(
                &prompt_tokens,
                video_features,
                &continuation[..pos],
                pos,
                self.dim,
            ));
            out.push(self.token_logprob_at(&phi, token)?);
        }
        Ok(out)
    }

    fn token_logprob_at(&self, phi: &DVector<f64>, token: u32) -> Result<f64> {
        if token as usize >= self.vocab {
            return Err(Error::Domain(format!(
                "token {} outside vocabulary of size {}",
                token, self.vocab
            )));
        }
        let logits = self.weights.transpose() * phi;
        Ok(log_softmax_at(&logits, token as usize))
    }
}

/// `log softmax(logits)[idx]`, computed stably.
fn log_softmax_at(logits: &DVector<f64>, idx: usize) -> f64 {
    let max = logits.max();
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits[idx] - lse
}

/// One sequence with its context features precomputed. Features depend
/// only on the data (never on the weights), so they are shared across
/// training steps and finite-difference probes.
struct PreparedSequence {
    feats: Vec<DVector<f64>>,
    tokens: Vec<u32>,
    labels: Vec<SegmentLabel>,
}

struct PreparedPair {
    chosen: PreparedSequence,
    rejected: PreparedSequence,
}

fn prepare_sequence(dim: usize, vocab: usize, prompt: &str, video: &[f64], seq: &SegmentedSequence) -> Result<PreparedSequence> {
    seq.check_shape()?;
    let prompt_tokens = hash_tokenize(prompt, vocab);
    let feats = (0..seq.tokens.len())
        .map(|pos| {
            DVector::from_vec(context_features(
                &prompt_tokens,
                video,
                &seq.tokens[..pos],
                pos,
                dim,
            ))
        })
        .collect();
    Ok(PreparedSequence {
        feats,
        tokens: seq.tokens.clone(),
        labels: seq.labels.clone(),
    })
}

fn prepare_pairs(policy: &ToyPolicy, pairs: &[PreferencePair]) -> Result<Vec<PreparedPair>> {
    pairs
        .iter()
        .map(|pair| {
            let video: &[f64] = pair.video_features.as_deref().unwrap_or(&[]);
            Ok(PreparedPair {
                chosen: prepare_sequence(policy.dim, policy.vocab, &pair.prompt, video, &pair.chosen)?,
                rejected: prepare_sequence(policy.dim, policy.vocab, &pair.prompt, video, &pair.rejected)?,
            })
        })
        .collect()
}

fn sequence_logps(weights: &DMatrix<f64>, seq: &PreparedSequence, vocab: usize) -> Result<Vec<f64>> {
    seq.tokens
        .iter()
        .zip(&seq.feats)
        .map(|(&token, phi)| {
            if token as usize >= vocab {
                return Err(Error::Domain(format!(
                    "token {token} outside vocabulary of size {vocab}"
                )));
            }
            let logits = weights.transpose() * phi;
            Ok(log_softmax_at(&logits, token as usize))
        })
        .collect()
}

fn score_prepared(
    weights: &DMatrix<f64>,
    seq: &PreparedSequence,
    vocab: usize,
    mode: ScoreMode,
    gamma: f64,
    normalize_standard: bool,
) -> Result<f64> {
    let logps = sequence_logps(weights, seq, vocab)?;
    match mode {
        ScoreMode::Standard => standard_score(&logps, normalize_standard),
        ScoreMode::Weighted => weighted_score(&logps, &seq.labels, gamma),
    }
}

/// Per-token weight under a score mode: the coefficient each token's
/// log-prob carries in the sequence score.
fn token_weights(seq: &PreparedSequence, mode: ScoreMode, gamma: f64, normalize_standard: bool) -> Result<Vec<f64>> {
    match mode {
        ScoreMode::Standard => {
            let n = seq.tokens.len();
            if normalize_standard {
                if n == 0 {
                    return Err(Error::DegenerateWeights);
                }
                Ok(vec![1.0 / n as f64; n])
            } else {
                Ok(vec![1.0; n])
            }
        }
        ScoreMode::Weighted => {
            let n_o = seq.labels.iter().filter(|&&l| l == SegmentLabel::Original).count() as f64;
            let n_h = seq.labels.len() as f64 - n_o;
            let denom = n_o + gamma * n_h;
            if denom == 0.0 {
                return Err(Error::DegenerateWeights);
            }
            let k = 1.0 / denom;
            Ok(seq
                .labels
                .iter()
                .map(|&l| if l == SegmentLabel::Original { k } else { k * gamma })
                .collect())
        }
    }
}

/// Batch evaluation: mean loss, mean gradient with respect to the policy
/// weights, and the fraction of pairs whose policy margin is positive.
pub struct BatchEval {
    pub mean_loss: f64,
    pub grad: DMatrix<f64>,
    pub margin_rate: f64,
}

struct EvalSettings {
    mode: ScoreMode,
    gamma: f64,
    beta: f64,
    normalize_standard: bool,
}

fn eval_batch(
    weights: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    prepared: &[PreparedPair],
    vocab: usize,
    s: &EvalSettings,
    want_grad: bool,
) -> Result<BatchEval> {
    assert!(!prepared.is_empty(), "empty preference batch");
    let mut total_loss = 0.0;
    let mut positive = 0usize;
    let mut grad = DMatrix::zeros(weights.nrows(), weights.ncols());
    let scale = 1.0 / prepared.len() as f64;

    for pair in prepared {
        let s_c = score_prepared(weights, &pair.chosen, vocab, s.mode, s.gamma, s.normalize_standard)?;
        let s_r = score_prepared(weights, &pair.rejected, vocab, s.mode, s.gamma, s.normalize_standard)?;
        let r_c = score_prepared(reference, &pair.chosen, vocab, s.mode, s.gamma, s.normalize_standard)?;
        let r_r = score_prepared(reference, &pair.rejected, vocab, s.mode, s.gamma, s.normalize_standard)?;
        let margin = (s_c - s_r) - (r_c - r_r);
        total_loss += dpo_loss(s.beta, margin);
        if margin > 0.0 {
            positive += 1;
        }

        if want_grad {
            // d loss / d margin = -β · σ(-β·margin); the margin depends on
            // the weights only through s_c - s_r, and each token's log-prob
            // gradient is the classic softmax outer product
            // φ · (e_y - p)ᵀ.
            let dloss_dmargin = -s.beta * sigmoid(-s.beta * margin);
            for (seq, sign) in [(&pair.chosen, 1.0), (&pair.rejected, -1.0)] {
                let token_w = token_weights(seq, s.mode, s.gamma, s.normalize_standard)?;
                for ((phi, &token), w) in seq.feats.iter().zip(&seq.tokens).zip(token_w) {
                    let logits = weights.transpose() * phi;
                    let max = logits.max();
                    let mut probs: DVector<f64> = logits.map(|z| (z - max).exp());
                    let z: f64 = probs.iter().sum();
                    probs /= z;
                    let coef = scale * dloss_dmargin * sign * w;
                    // grad += coef · φ · (e_y - p)ᵀ, unrolled to avoid the
                    // temporary rank-1 matrix.
                    for col in 0..weights.ncols() {
                        let e_y = if col == token as usize { 1.0 } else { 0.0 };
                        let g = coef * (e_y - probs[col]);
                        for row in 0..weights.nrows() {
                            grad[(row, col)] += g * phi[row];
                        }
                    }
                }
            }
        }
    }

    Ok(BatchEval {
        mean_loss: total_loss * scale,
        grad,
        margin_rate: positive as f64 / prepared.len() as f64,
    })
}

/// Mean DPO loss of `policy` against `reference` over `pairs` — the same
/// quantity training descends, exposed for direct inspection and for
/// finite-difference probing of the analytic gradient.
pub fn batch_loss(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[PreferencePair],
    cfg: &TdpoConfig,
    mode: ScoreMode,
    normalize_standard: bool,
) -> Result<f64> {
    cfg.validate()?;
    let prepared = prepare_pairs(policy, pairs)?;
    let settings = EvalSettings {
        mode,
        gamma: cfg.gamma,
        beta: cfg.beta,
        normalize_standard,
    };
    Ok(eval_batch(&policy.weights, &reference.weights, &prepared, policy.vocab, &settings, false)?.mean_loss)
}

/// Mean loss and its analytic gradient with respect to the policy weights.
pub fn batch_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[PreferencePair],
    cfg: &TdpoConfig,
    mode: ScoreMode,
    normalize_standard: bool,
) -> Result<BatchEval> {
    cfg.validate()?;
    let prepared = prepare_pairs(policy, pairs)?;
    let settings = EvalSettings {
        mode,
        gamma: cfg.gamma,
        beta: cfg.beta,
        normalize_standard,
    };
    eval_batch(&policy.weights, &reference.weights, &prepared, policy.vocab, &settings, true)
}

/// One row of the training trace, recorded before each update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub mean_loss: f64,
    pub margin_rate: f64,
}

/// The outcome of a training run.
pub struct TrainingOutcome {
    /// Pre-update metrics at every step; `trace[0]` is the initial state
    /// (loss exactly `ln 2` when training starts from the reference).
    pub trace: Vec<TraceRow>,
    /// Metrics after the final update.
    pub final_loss: f64,
    pub final_margin_rate: f64,
}

/// Full-batch gradient descent of the DPO loss, starting from — and
/// comparing against — a frozen copy of `policy`'s initial weights. A
/// non-finite loss aborts with the diverging step.
pub fn train_tdpo(
    policy: &mut ToyPolicy,
    pairs: &[PreferencePair],
    cfg: &TdpoConfig,
    mode: ScoreMode,
    normalize_standard: bool,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Argument("no preference pairs to train on".into()));
    }
    let reference = policy.weights.clone();
    let prepared = prepare_pairs(policy, pairs)?;
    let settings = EvalSettings {
        mode,
        gamma: cfg.gamma,
        beta: cfg.beta,
        normalize_standard,
    };

    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let eval = eval_batch(&policy.weights, &reference, &prepared, policy.vocab, &settings, true)?;
        if !eval.mean_loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        trace.push(TraceRow {
            step,
            mean_loss: eval.mean_loss,
            margin_rate: eval.margin_rate,
        });
        policy.weights -= cfg.lr * &eval.grad;
    }

    let final_eval = eval_batch(&policy.weights, &reference, &prepared, policy.vocab, &settings, false)?;
    if !final_eval.mean_loss.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }
    Ok(TrainingOutcome {
        trace,
        final_loss: final_eval.mean_loss,
        final_margin_rate: final_eval.margin_rate,
    })
}

/// Writes the training trace as `step,mean_loss,margin_rate` CSV.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path.as_ref())?);
    w.write_record(["step", "mean_loss", "margin_rate"])?;
    for row in trace {
        w.write_record([
            row.step.to_string(),
            format!("{:.6}", row.mean_loss),
            format!("{:.4}", row.margin_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean log-probability gain (policy minus reference) over the corrected
/// tokens of the chosen continuations — the material the weighted score is
/// designed to push up hardest, so raising γ should raise this number.
pub fn corrected_logprob_gain(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[PreferencePair],
) -> Result<f64> {
    let mut gain = 0.0;
    let mut count = 0usize;
    for pair in pairs {
        let video: &[f64] = pair.video_features.as_deref().unwrap_or(&[]);
        let pol = policy.token_logprobs(&pair.prompt, video, &pair.chosen.tokens)?;
        let refp = reference.token_logprobs(&pair.prompt, video, &pair.chosen.tokens)?;
        for ((lp, lr), &label) in pol.iter().zip(&refp).zip(&pair.chosen.labels) {
            if label == SegmentLabel::Corrected {
                gain += lp - lr;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Argument(
            "no corrected tokens found in any chosen continuation".into(),
        ));
    }
    Ok(gain / count as f64)
}

const SYNTH_PROMPTS: [&str; 8] = [
    "Describe the main activity in the clip.",
    "What does the person do after entering?",
    "Summarize the scene shown in the video.",
    "What happens near the table?",
    "Describe what the animal is doing.",
    "What changes between the start and the end?",
    "What is the weather like in the clip?",
    "Describe the objects on the left side.",
];

/// Generates a deterministic synthetic preference set.
///
/// Each pair shares a prompt and a video vector. The rejected continuation
/// plays the model's original response (all tokens labeled `o`); the
/// chosen continuation is its revision, keeping roughly half of the tokens
/// and replacing the rest with other vocabulary items labeled `h` — at
/// least one edit per pair. `policy_dim` sizes the video vectors.
pub fn synthetic_pairs(n: usize, vocab: usize, policy_dim: usize, seed: u64) -> Vec<PreferencePair> {
    assert!(vocab >= 4, "synthetic data needs a few distinct tokens");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let prompt = SYNTH_PROMPTS[i % SYNTH_PROMPTS.len()].to_string();
        let video: Vec<f64> = (0..policy_dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        let len = rng.gen_range(4..=8);
        let rejected_tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect();
        let mut chosen_tokens = rejected_tokens.clone();
        let mut chosen_labels = vec![SegmentLabel::Original; len];
        for pos in 0..len {
            // Revise roughly half of the positions to a different token.
            if rng.gen_bool(0.5) {
                let offset = rng.gen_range(1..vocab as u32);
                chosen_tokens[pos] = (rejected_tokens[pos] + offset) % vocab as u32;
                chosen_labels[pos] = SegmentLabel::Corrected;
            }
        }
        // Guarantee at least one edit per chosen sequence.
        if chosen_labels.iter().all(|&l| l == SegmentLabel::Original) {
            let pos = rng.gen_range(0..len);
            let offset = rng.gen_range(1..vocab as u32);
            chosen_tokens[pos] = (rejected_tokens[pos] + offset) % vocab as u32;
            chosen_labels[pos] = SegmentLabel::Corrected;
        }
        let render = |tokens: &[u32]| {
            tokens
                .iter()
                .map(|t| format!("w{t}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        pairs.push(PreferencePair {
            prompt,
            chosen: SegmentedSequence {
                text: render(&chosen_tokens),
                tokens: chosen_tokens,
                labels: chosen_labels,
            },
            rejected: SegmentedSequence {
                text: render(&rejected_tokens),
                tokens: rejected_tokens,
                labels: vec![SegmentLabel::Original; len],
            },
            video_features: Some(video),
        });
    }
    pairs
}
