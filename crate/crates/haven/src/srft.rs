//! Low-rank supervised fine-tuning of the toy policy on reasoning
//! targets, with the base weights bit-frozen.
//!
//! The trainable object is a LoRA adapter `ΔW = B·A` (`B` is `d×r`, `A`
//! is `r×k`); the policy scores tokens under the composed weights
//! `W' = W + α·B·A` while `W` itself is never touched. The loss is the
//! total next-token negative log-likelihood over the batch divided by the
//! total token count, so sample lengths weigh in proportionally rather
//! than per-sample.
//!
//! Samples pair a question with a target reasoning trace, optionally
//! referencing a "static video" — a directory of byte-identical frames
//! standing in for an image that a video model is asked to reason about.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{context_features, hash_tokenize, splitmix64, to_signed_unit};
use crate::tdpo::ToyPolicy;

/// One supervised sample: a question about a (possibly static) video and
/// the reasoning trace the policy should learn to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSample {
    pub video_ref: String,
    pub question: String,
    pub reasoning_target: String,
    /// Where the sample came from (e.g. an image-QA corpus converted to
    /// static video).
    pub source: String,
}

impl ReasoningSample {
    pub fn check_shape(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::Domain("sample has an empty question".into()));
        }
        if self.reasoning_target.trim().is_empty() {
            return Err(Error::Domain(format!(
                "sample for {:?} has an empty reasoning target",
                self.video_ref
            )));
        }
        Ok(())
    }
}

/// Loads reasoning samples from JSONL with line-numbered errors; empty
/// questions or reasoning targets are rejected at the offending line.
pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<ReasoningSample>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: ReasoningSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        sample.check_shape().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

/// Writes reasoning samples as JSONL.
pub fn write_samples(path: impl AsRef<Path>, samples: &[ReasoningSample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for sample in samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Converts one image into a static-video sample: the frame bytes are
/// written `n_frames` times under `frames_root/<sample_id>/` so the frame
/// sampler sees an ordinary video directory whose every frame is
/// identical. Empty reasoning targets are rejected so callers can count
/// and log the skipped conversions.
pub fn make_static_video_sample(
    frames_root: impl AsRef<Path>,
    sample_id: &str,
    frame_bytes: &[u8],
    n_frames: usize,
    question: &str,
    reasoning_target: &str,
    source: &str,
) -> Result<ReasoningSample> {
    if n_frames == 0 {
        return Err(Error::Argument("a static video needs at least one frame".into()));
    }
    let sample = ReasoningSample {
        video_ref: format!("{sample_id}.static"),
        question: question.to_string(),
        reasoning_target: reasoning_target.to_string(),
        source: source.to_string(),
    };
    sample.check_shape()?;
    let dir = frames_root.as_ref().join(sample_id);
    std::fs::create_dir_all(&dir)?;
    for i in 0..n_frames {
        std::fs::write(dir.join(format!("{i:04}.png")), frame_bytes)?;
    }
    Ok(sample)
}

/// Verifies that a static-video directory holds at least one frame and
/// that every frame is byte-identical.
pub fn verify_static_frames(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Integrity(format!("{}: no frames found", dir.display())));
    }
    let first = std::fs::read(&names[0])?;
    for path in &names[1..] {
        if std::fs::read(path)? != first {
            return Err(Error::Integrity(format!(
                "{}: frame {} differs from {}",
                dir.display(),
                path.display(),
                names[0].display()
            )));
        }
    }
    Ok(())
}

/// A low-rank adapter: `ΔW = B·A`, applied as `W' = W + α·B·A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `r × k`.
    pub a: DMatrix<f64>,
    /// `d × r`.
    pub b: DMatrix<f64>,
    pub alpha: f64,
    pub rank: usize,
}

impl LoraAdapter {
    /// Standard initialization: `A` small random (seeded), `B` zero, so
    /// the composed weights start exactly at the base weights.
    pub fn seeded(d: usize, k: usize, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        validate_shape(d, k, rank, alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(rank, k, |_, _| (rng.gen::<f64>() - 0.5) * 0.2);
        let b = DMatrix::zeros(d, rank);
        Ok(LoraAdapter { a, b, alpha, rank })
    }

    pub fn check_shape(&self, d: usize, k: usize) -> Result<()> {
        validate_shape(d, k, self.rank, self.alpha)?;
        if self.a.nrows() != self.rank || self.a.ncols() != k {
            return Err(Error::Domain(format!(
                "A is {}×{}, expected {}×{k}",
                self.a.nrows(),
                self.a.ncols(),
                self.rank
            )));
        }
        if self.b.nrows() != d || self.b.ncols() != self.rank {
            return Err(Error::Domain(format!(
                "B is {}×{}, expected {d}×{}",
                self.b.nrows(),
                self.b.ncols(),
                self.rank
            )));
        }
        Ok(())
    }

    /// The dense update `α·B·A`.
    pub fn delta(&self) -> DMatrix<f64> {
        self.alpha * &self.b * &self.a
    }

    /// Singular values of the update `B·A`, largest first. At most `rank`
    /// of them can be meaningfully non-zero; the tail certifies the
    /// low-rank structure.
    pub fn update_singular_values(&self) -> Vec<f64> {
        let ba = &self.b * &self.a;
        let svd = ba.svd(false, false);
        let mut vals: Vec<f64> = svd.singular_values.iter().copied().collect();
        vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
        vals
    }
}

fn validate_shape(d: usize, k: usize, rank: usize, alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Argument(format!("alpha must be finite and > 0, got {alpha}")));
    }
    let cap = d.min(k) / 2;
    if rank == 0 || rank > cap {
        return Err(Error::Argument(format!(
            "rank must be in 1..={cap} for {d}×{k} weights, got {rank}"
        )));
    }
    Ok(())
}

/// Composes base weights with an adapter: `W + α·B·A`. The base matrix is
/// taken by reference and never modified.
pub fn lora_compose(base: &DMatrix<f64>, adapter: &LoraAdapter) -> DMatrix<f64> {
    base + adapter.delta()
}

/// On-disk form of an adapter: matrices as row-major nested arrays.
#[derive(Debug, Serialize, Deserialize)]
struct AdapterFile {
    alpha: f64,
    rank: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Domain(format!("adapter matrix {what} is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Domain(format!("adapter matrix {what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Writes an adapter as JSON (row-major nested arrays, exact f64s).
pub fn save_adapter(path: impl AsRef<Path>, adapter: &LoraAdapter) -> Result<()> {
    let file = AdapterFile {
        alpha: adapter.alpha,
        rank: adapter.rank,
        a: matrix_rows(&adapter.a),
        b: matrix_rows(&adapter.b),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Reads an adapter written by [`save_adapter`] and re-checks its shape.
pub fn load_adapter(path: impl AsRef<Path>) -> Result<LoraAdapter> {
    let file: AdapterFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let a = rows_matrix(&file.a, "A")?;
    let b = rows_matrix(&file.b, "B")?;
    let adapter = LoraAdapter {
        a,
        b,
        alpha: file.alpha,
        rank: file.rank,
    };
    adapter.check_shape(adapter.b.nrows(), adapter.a.ncols())?;
    Ok(adapter)
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrftConfig {
    pub alpha: f64,
    pub rank: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SrftConfig {
    fn default() -> Self {
        SrftConfig {
            alpha: 1.0,
            rank: 4,
            lr: 0.5,
            steps: 200,
            seed: 7,
        }
    }
}

impl SrftConfig {
    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        validate_shape(d, k, self.rank, self.alpha)?;
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Argument(format!("lr must be finite and > 0, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(Error::Argument("steps must be >= 1".into()));
        }
        Ok(())
    }
}

struct PreparedSample {
    feats: Vec<DVector<f64>>,
    tokens: Vec<u32>,
}

/// Per-sample conditioning vector derived from the video reference, so
/// different videos give the policy different contexts.
fn video_ref_features(video_ref: &str, dim: usize) -> Vec<f64> {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &byte in video_ref.as_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    (0..dim)
        .map(|j| 0.5 * to_signed_unit(splitmix64(h ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))))
        .collect()
}

fn prepare_samples(policy: &ToyPolicy, samples: &[ReasoningSample]) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            s.check_shape()?;
            let tokens = hash_tokenize(&s.reasoning_target, policy.vocab);
            if tokens.is_empty() {
                return Err(Error::Domain(format!(
                    "reasoning target for {:?} tokenized to nothing",
                    s.video_ref
                )));
            }
            let prompt_tokens = hash_tokenize(&s.question, policy.vocab);
            let video = video_ref_features(&s.video_ref, policy.dim);
            let feats = (0..tokens.len())
                .map(|pos| {
                    DVector::from_vec(context_features(
                        &prompt_tokens,
                        &video,
                        &tokens[..pos],
                        pos,
                        policy.dim,
                    ))
                })
                .collect();
            Ok(PreparedSample { feats, tokens })
        })
        .collect()
}

fn nll_and_grad(
    composed: &DMatrix<f64>,
    prepared: &[PreparedSample],
    vocab: usize,
    want_grad: bool,
) -> (f64, DMatrix<f64>, usize) {
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    let mut grad = DMatrix::zeros(composed.nrows(), composed.ncols());
    for sample in prepared {
        for (phi, &token) in sample.feats.iter().zip(&sample.tokens) {
            debug_assert!((token as usize) < vocab);
            let logits = composed.transpose() * phi;
            let max = logits.max();
            let mut probs: DVector<f64> = logits.map(|z| (z - max).exp());
            let z: f64 = probs.iter().sum();
            probs /= z;
            total_nll -= logits[token as usize] - max - z.ln();
            total_tokens += 1;
            if want_grad {
                // d(-log p_y)/dW' = φ · (p - e_y)ᵀ.
                for col in 0..composed.ncols() {
                    let e_y = if col == token as usize { 1.0 } else { 0.0 };
                    let g = probs[col] - e_y;
                    for row in 0..composed.nrows() {
                        grad[(row, col)] += g * phi[row];
                    }
                }
            }
        }
    }
    (total_nll, grad, total_tokens)
}

/// Mean per-token negative log-likelihood of the reasoning targets under
/// the composed weights `W + α·B·A`: total NLL over the batch divided by
/// total token count.
pub fn srft_loss(policy: &ToyPolicy, adapter: &LoraAdapter, samples: &[ReasoningSample]) -> Result<f64> {
    adapter.check_shape(policy.dim, policy.vocab)?;
    let prepared = prepare_samples(policy, samples)?;
    if prepared.is_empty() {
        return Err(Error::Argument("no samples to score".into()));
    }
    let composed = lora_compose(&policy.weights, adapter);
    let (nll, _, tokens) = nll_and_grad(&composed, &prepared, policy.vocab, false);
    Ok(nll / tokens as f64)
}

/// The loss together with its analytic gradients with respect to the
/// adapter factors: `dA = α·Bᵀ·G` and `dB = α·G·Aᵀ` for
/// `G = ∂loss/∂W'`.
pub struct SrftEval {
    pub loss: f64,
    pub grad_a: DMatrix<f64>,
    pub grad_b: DMatrix<f64>,
}

/// Computes loss and adapter gradients at the current adapter state.
pub fn srft_gradients(
    policy: &ToyPolicy,
    adapter: &LoraAdapter,
    samples: &[ReasoningSample],
) -> Result<SrftEval> {
    adapter.check_shape(policy.dim, policy.vocab)?;
    let prepared = prepare_samples(policy, samples)?;
    if prepared.is_empty() {
        return Err(Error::Argument("no samples to score".into()));
    }
    let composed = lora_compose(&policy.weights, adapter);
    let (nll, mut grad_w, tokens) = nll_and_grad(&composed, &prepared, policy.vocab, true);
    grad_w /= tokens as f64;
    Ok(SrftEval {
        loss: nll / tokens as f64,
        grad_a: adapter.alpha * adapter.b.transpose() * &grad_w,
        grad_b: adapter.alpha * &grad_w * adapter.a.transpose(),
    })
}

/// One row of the fine-tuning trace, recorded before each update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SrftTraceRow {
    pub step: usize,
    pub loss: f64,
}

/// The outcome of a fine-tuning run.
pub struct SrftOutcome {
    pub adapter: LoraAdapter,
    pub trace: Vec<SrftTraceRow>,
    pub final_loss: f64,
}

/// Fine-tunes a fresh adapter on the samples by full-batch gradient
/// descent. The policy's base weights are read but never written; only
/// the adapter factors move. Training starts at the base model exactly
/// (`B = 0`) and aborts if the loss turns non-finite.
pub fn train_srft(
    policy: &ToyPolicy,
    samples: &[ReasoningSample],
    cfg: &SrftConfig,
) -> Result<SrftOutcome> {
    cfg.validate(policy.dim, policy.vocab)?;
    if samples.is_empty() {
        return Err(Error::Argument("no samples to train on".into()));
    }
    let prepared = prepare_samples(policy, samples)?;
    let mut adapter = LoraAdapter::seeded(policy.dim, policy.vocab, cfg.rank, cfg.alpha, cfg.seed)?;

    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let composed = lora_compose(&policy.weights, &adapter);
        let (nll, mut grad_w, tokens) = nll_and_grad(&composed, &prepared, policy.vocab, true);
        let loss = nll / tokens as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        trace.push(SrftTraceRow { step, loss });
        grad_w /= tokens as f64;
        let grad_a = adapter.alpha * adapter.b.transpose() * &grad_w;
        let grad_b = adapter.alpha * &grad_w * adapter.a.transpose();
        adapter.a -= cfg.lr * grad_a;
        adapter.b -= cfg.lr * grad_b;
    }

    let composed = lora_compose(&policy.weights, &adapter);
    let (nll, _, tokens) = nll_and_grad(&composed, &prepared, policy.vocab, false);
    let final_loss = nll / tokens as f64;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }
    Ok(SrftOutcome {
        adapter,
        trace,
        final_loss,
    })
}

/// Writes the fine-tuning trace as `step,loss` CSV.
pub fn write_srft_trace_csv(path: impl AsRef<Path>, trace: &[SrftTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path.as_ref())?);
    w.write_record(["step", "loss"])?;
    for row in trace {
        w.write_record([row.step.to_string(), format!("{:.6}", row.loss)])?;
    }
    w.flush()?;
    Ok(())
}

/// A small fixed batch of reasoning samples for demos and regression
/// tests.
pub fn standard_toy_batch() -> Vec<ReasoningSample> {
    let rows: [(&str, &str, &str); 8] = [
        (
            "clips/kitchen-032.mp4",
            "What does the person pour into the bowl?",
            "The person lifts a carton, tilts it over the bowl, and milk flows out; they pour milk.",
        ),
        (
            "clips/street-114.mp4",
            "How many cyclists pass the camera?",
            "One cyclist passes on the left, then two more together; three cyclists pass in total.",
        ),
        (
            "clips/park-007.mp4",
            "What is the dog chasing?",
            "A red disc flies across the lawn and the dog sprints after it; the dog chases a frisbee.",
        ),
        (
            "clips/harbor-220.mp4",
            "Does the boat leave the dock?",
            "The ropes are untied and the gap to the dock widens steadily; yes, the boat departs.",
        ),
        (
            "clips/office-045.mp4",
            "What color is the folder on the desk?",
            "The folder next to the keyboard reflects a strong yellow hue; it is yellow.",
        ),
        (
            "clips/garden-310.mp4",
            "What tool does the gardener use first?",
            "Before anything else the gardener picks up a small trowel to loosen the soil.",
        ),
        (
            "clips/stadium-188.mp4",
            "Which team scores in the clip?",
            "The players in blue celebrate after the ball crosses the line; the blue team scores.",
        ),
        (
            "clips/lab-902.mp4",
            "What happens after the liquid is heated?",
            "Bubbles form along the glass and the liquid turns cloudy shortly after heating begins.",
        ),
    ];
    rows.iter()
        .map(|&(video_ref, question, reasoning_target)| ReasoningSample {
            video_ref: video_ref.to_string(),
            question: question.to_string(),
            reasoning_target: reasoning_target.to_string(),
            source: "toy".to_string(),
        })
        .collect()
}
