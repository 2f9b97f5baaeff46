//! Benchmark dataset model: question records, variant groups, and corpus
//! statistics.
//!
//! A dataset is a JSONL file with one question per line. Questions come in
//! *variant groups*: rephrasings of the same underlying probe against the
//! same video, used later to measure whether a model answers the group
//! consistently. Binary groups hold a yes-leaning and a no-leaning variant,
//! multiple-choice groups hold three option-rotations (A/B/C), short-answer
//! groups hold a single free-form variant.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProtocolViolation, Result};

/// Why a question is expected to trigger hallucination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    /// The question contradicts world knowledge the model holds from pretraining.
    PriorConflict,
    /// The question premise contradicts what the video actually shows.
    InContextConflict,
    /// The question probes content the model is simply too weak to perceive.
    CapabilityDeficiency,
}

impl Cause {
    pub const ALL: [Cause; 3] = [
        Cause::PriorConflict,
        Cause::InContextConflict,
        Cause::CapabilityDeficiency,
    ];

    /// Stable lowercase identifier, identical to the serialized form.
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::PriorConflict => "prior_conflict",
            Cause::InContextConflict => "in_context_conflict",
            Cause::CapabilityDeficiency => "capability_deficiency",
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the question asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Object,
    Scene,
    Event,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Object, Aspect::Scene, Aspect::Event];

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Object => "object",
            Aspect::Scene => "scene",
            Aspect::Event => "event",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Question format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QFormat {
    Binary,
    MultipleChoice,
    ShortAnswer,
}

impl QFormat {
    pub const ALL: [QFormat; 3] = [QFormat::Binary, QFormat::MultipleChoice, QFormat::ShortAnswer];

    pub fn as_str(self) -> &'static str {
        match self {
            QFormat::Binary => "binary",
            QFormat::MultipleChoice => "multiple_choice",
            QFormat::ShortAnswer => "short_answer",
        }
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which rephrasing of the group this question is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantTag {
    /// Binary variant whose gold answer is "Yes".
    YesCorrect,
    /// Binary variant whose gold answer is "No".
    NoCorrect,
    /// Option rotation where the gold option is listed as A.
    A,
    /// Option rotation where the gold option is listed as B.
    B,
    /// Option rotation where the gold option is listed as C.
    C,
    /// The single variant of a short-answer group.
    Sole,
}

impl VariantTag {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantTag::YesCorrect => "yes_correct",
            VariantTag::NoCorrect => "no_correct",
            VariantTag::A => "a",
            VariantTag::B => "b",
            VariantTag::C => "c",
            VariantTag::Sole => "sole",
        }
    }

    /// The option letter for multiple-choice tags.
    pub fn option_letter(self) -> Option<char> {
        match self {
            VariantTag::A => Some('A'),
            VariantTag::B => Some('B'),
            VariantTag::C => Some('C'),
            _ => None,
        }
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gold answer marking a question as unanswerable from the video.
/// Compared case-insensitively; legal for every format.
pub const NO_ANSWER: &str = "no answer";

/// Returns true when a gold answer marks the question as unanswerable.
pub fn is_no_answer(answer: &str) -> bool {
    answer.trim().eq_ignore_ascii_case(NO_ANSWER)
}

/// One benchmark question.
///
/// Serialized JSONL field names are part of the on-disk contract:
/// `id, group_id, variant_tag, video_ref, cause, aspect, format, question,
/// answer, duration_s, frame_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub group_id: String,
    pub variant_tag: VariantTag,
    /// Path or URI of the source video. The harness never decodes it; frames
    /// are supplied by an external extractor.
    pub video_ref: String,
    pub cause: Cause,
    pub aspect: Aspect,
    pub format: QFormat,
    /// Question text shown to the model.
    #[serde(rename = "question")]
    pub text: String,
    /// Gold answer used by the judge.
    #[serde(rename = "answer")]
    pub gold_answer: String,
    /// Video duration in seconds; non-negative.
    pub duration_s: f64,
    /// Total frame count of the source video.
    pub frame_count: u64,
}

impl Question {
    /// Checks the per-question shape rules that do not need the rest of the
    /// group: tag/format agreement and gold-answer shape.
    pub fn check_shape(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Integrity("question with empty id".into()));
        }
        if self.group_id.is_empty() {
            return Err(Error::Integrity(format!("question {}: empty group_id", self.id)));
        }
        if !self.duration_s.is_finite() || self.duration_s < 0.0 {
            return Err(Error::Integrity(format!(
                "question {}: duration_s must be finite and non-negative, got {}",
                self.id, self.duration_s
            )));
        }
        let gold = self.gold_answer.trim();
        if gold.is_empty() {
            return Err(Error::Integrity(format!("question {}: empty gold answer", self.id)));
        }
        let unanswerable = is_no_answer(gold);
        match self.format {
            QFormat::Binary => {
                if !matches!(self.variant_tag, VariantTag::YesCorrect | VariantTag::NoCorrect) {
                    return Err(Error::Integrity(format!(
                        "question {}: binary question must carry tag yes_correct or no_correct, got {}",
                        self.id, self.variant_tag
                    )));
                }
                if !unanswerable {
                    let want = match self.variant_tag {
                        VariantTag::YesCorrect => "yes",
                        _ => "no",
                    };
                    if !gold.eq_ignore_ascii_case(want) {
                        return Err(Error::Integrity(format!(
                            "question {}: tag {} requires gold answer {:?} (or {:?}), got {:?}",
                            self.id, self.variant_tag, want, NO_ANSWER, self.gold_answer
                        )));
                    }
                }
            }
            QFormat::MultipleChoice => {
                let letter = match self.variant_tag.option_letter() {
                    Some(l) => l,
                    None => {
                        return Err(Error::Integrity(format!(
                            "question {}: multiple-choice question must carry tag a, b or c, got {}",
                            self.id, self.variant_tag
                        )))
                    }
                };
                if !unanswerable {
                    let first = gold.chars().next().unwrap_or(' ');
                    if !first.eq_ignore_ascii_case(&letter) {
                        return Err(Error::Integrity(format!(
                            "question {}: tag {} requires the gold answer to start with option letter {}, got {:?}",
                            self.id, self.variant_tag, letter, self.gold_answer
                        )));
                    }
                }
            }
            QFormat::ShortAnswer => {
                if self.variant_tag != VariantTag::Sole {
                    return Err(Error::Integrity(format!(
                        "question {}: short-answer question must carry tag sole, got {}",
                        self.id, self.variant_tag
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A validated variant group: all rephrasings of one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantGroup {
    pub group_id: String,
    pub format: QFormat,
    pub cause: Cause,
    pub aspect: Aspect,
    pub video_ref: String,
    /// Member questions, ordered by variant tag.
    pub members: Vec<Question>,
}

impl VariantGroup {
    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|q| q.id.as_str())
    }
}

/// Loads a JSONL dataset, checking per-question shape and id uniqueness.
///
/// Parse and shape errors carry the 1-based line number of the offending
/// record; a duplicated question id is an integrity error naming the id.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Question>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", path.display(), e),
        ))
    })?;
    let reader = BufReader::new(file);
    parse_dataset_lines(reader.lines(), path)
}

fn parse_dataset_lines(
    lines: impl Iterator<Item = std::io::Result<String>>,
    path: &Path,
) -> Result<Vec<Question>> {
    let mut questions = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        q.check_shape().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        if let Some(first) = seen.insert(q.id.clone(), lineno) {
            return Err(Error::Integrity(format!(
                "duplicate question id {:?} (lines {} and {})",
                q.id, first, lineno
            )));
        }
        questions.push(q);
    }
    Ok(questions)
}

/// Writes questions back out as JSONL, one record per line, field order as
/// declared on [`Question`].
pub fn write_dataset(path: impl AsRef<Path>, questions: &[Question]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for q in questions {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Partitions questions into variant groups and enforces the transformation
/// protocol:
///
/// * binary groups have exactly two members with tags {yes_correct, no_correct};
/// * multiple-choice groups have exactly three members with tags {a, b, c};
/// * short-answer groups have exactly one member tagged sole;
/// * all members of a group share format, cause, aspect and video_ref.
///
/// Violations are collected (not short-circuited) so one pass reports every
/// broken group.
pub fn validate_groups(questions: &[Question]) -> Result<Vec<VariantGroup>> {
    // Group while preserving first-appearance order for deterministic output.
    let mut order: Vec<&str> = Vec::new();
    let mut by_group: HashMap<&str, Vec<&Question>> = HashMap::new();
    for q in questions {
        let entry = by_group.entry(q.group_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(q.group_id.as_str());
        }
        entry.push(q);
    }

    let mut groups = Vec::with_capacity(order.len());
    let mut violations = Vec::new();
    for gid in order {
        let members = &by_group[gid];
        match check_group(gid, members) {
            Ok(group) => groups.push(group),
            Err(v) => violations.extend(v),
        }
    }
    if violations.is_empty() {
        Ok(groups)
    } else {
        Err(Error::Protocol(violations))
    }
}

fn check_group(gid: &str, members: &[&Question]) -> std::result::Result<VariantGroup, Vec<ProtocolViolation>> {
    let mut violations = Vec::new();
    let head = members[0];

    for q in members.iter().skip(1) {
        if q.format != head.format {
            violations.push(ProtocolViolation::new(
                gid,
                format!("mixed formats {} and {}", head.format, q.format),
            ));
        }
        if q.cause != head.cause {
            violations.push(ProtocolViolation::new(
                gid,
                format!("mixed causes {} and {}", head.cause, q.cause),
            ));
        }
        if q.aspect != head.aspect {
            violations.push(ProtocolViolation::new(
                gid,
                format!("mixed aspects {} and {}", head.aspect, q.aspect),
            ));
        }
        if q.video_ref != head.video_ref {
            violations.push(ProtocolViolation::new(
                gid,
                format!("mixed video refs {:?} and {:?}", head.video_ref, q.video_ref),
            ));
        }
    }

    let mut tags: Vec<VariantTag> = members.iter().map(|q| q.variant_tag).collect();
    tags.sort();
    let expected: &[VariantTag] = match head.format {
        QFormat::Binary => &[VariantTag::YesCorrect, VariantTag::NoCorrect],
        QFormat::MultipleChoice => &[VariantTag::A, VariantTag::B, VariantTag::C],
        QFormat::ShortAnswer => &[VariantTag::Sole],
    };
    let mut expected_sorted = expected.to_vec();
    expected_sorted.sort();
    if tags != expected_sorted {
        let found = tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ");
        let want = expected.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ");
        violations.push(ProtocolViolation::new(
            gid,
            format!(
                "{} group must carry tags {{{}}}, found {} member(s) with tags {{{}}}",
                head.format,
                want,
                members.len(),
                found
            ),
        ));
    }

    if !violations.is_empty() {
        return Err(violations);
    }

    let mut ordered: Vec<Question> = members.iter().map(|q| (*q).clone()).collect();
    ordered.sort_by_key(|q| q.variant_tag);
    Ok(VariantGroup {
        group_id: gid.to_string(),
        format: head.format,
        cause: head.cause,
        aspect: head.aspect,
        video_ref: head.video_ref.clone(),
        members: ordered,
    })
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

/// Token counter used for question-length statistics. Pluggable so reports
/// can be computed under a model-specific tokenizer; the default is
/// [`whitespace_punct_token_count`].
pub type TokenCounter<'a> = &'a dyn Fn(&str) -> usize;

/// Default question-length tokenizer: alphanumeric runs count as one token
/// each, every other non-whitespace character counts as its own token.
///
/// "Is there a dog?" -> ["Is", "there", "a", "dog", "?"] -> 5.
pub fn whitespace_punct_token_count(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            in_word = false;
        } else if ch.is_alphanumeric() {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            count += 1;
            in_word = false;
        }
    }
    count
}

/// Name reported alongside statistics produced with the default tokenizer.
pub const DEFAULT_TOKENIZER_NAME: &str = "whitespace+punctuation";

/// Histogram over half-open buckets `[e_i, e_{i+1})` plus one trailing
/// overflow bucket for values `>= last edge`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// Strictly increasing bucket edges.
    pub edges: Vec<f64>,
    /// One count per interval, plus the final overflow bucket:
    /// `counts.len() == edges.len()`.
    pub counts: Vec<u64>,
}

impl Histogram {
    fn new(edges: Vec<f64>) -> Self {
        let n = edges.len();
        Histogram {
            edges,
            counts: vec![0; n],
        }
    }

    fn add(&mut self, value: f64) -> Result<()> {
        let idx = bucket_index(value, &self.edges)?;
        self.counts[idx] += 1;
        Ok(())
    }

    /// Human-readable label of one bucket ("[10, 20)" or "[70, inf)").
    pub fn bucket_label(&self, idx: usize) -> String {
        if idx + 1 < self.edges.len() {
            format!("[{}, {})", self.edges[idx], self.edges[idx + 1])
        } else {
            format!("[{}, inf)", self.edges[idx])
        }
    }
}

/// Axis a question can be bucketed along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Video duration in seconds.
    Duration,
    /// Total frame count of the source video.
    Frames,
    /// Question length in tokens.
    QuestionLength,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Duration => "duration",
            Axis::Frames => "frames",
            Axis::QuestionLength => "question_length",
        }
    }

    /// Default bucket edges used by corpus statistics and report bucketing.
    pub fn default_edges(self) -> Vec<f64> {
        match self {
            // 10-second bins over [0, 70), then overflow.
            Axis::Duration => (0..=7).map(|i| (i * 10) as f64).collect(),
            // 100-frame bins over [0, 1200), then overflow.
            Axis::Frames => (0..=12).map(|i| (i * 100) as f64).collect(),
            // 5-token bins over [0, 50), then overflow.
            Axis::QuestionLength => (0..=10).map(|i| (i * 5) as f64).collect(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The numeric value a question exposes along an axis.
pub fn axis_value(q: &Question, axis: Axis, tokens: TokenCounter) -> f64 {
    match axis {
        Axis::Duration => q.duration_s,
        Axis::Frames => q.frame_count as f64,
        Axis::QuestionLength => tokens(&q.text) as f64,
    }
}

/// Index of `value` among half-open buckets described by `edges`, with a
/// final overflow bucket for `value >= edges.last()`.
///
/// `edges` must be strictly increasing with at least two entries. Values
/// below the first edge (including all negatives when edges start at 0) are
/// a domain error: they belong to no bucket.
pub fn bucket_index(value: f64, edges: &[f64]) -> Result<usize> {
    if edges.len() < 2 {
        return Err(Error::Argument(format!(
            "bucket edges need at least two entries, got {}",
            edges.len()
        )));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("bucket edges must be strictly increasing".into()));
    }
    if !value.is_finite() || value < edges[0] {
        return Err(Error::Domain(format!(
            "value {} lies below the first bucket edge {}",
            value, edges[0]
        )));
    }
    let last = edges.len() - 1;
    if value >= edges[last] {
        // Overflow bucket shares the index space right after the intervals.
        return Ok(last);
    }
    // edges[0] <= value < edges[last]: find the unique interval.
    let mut idx = 0;
    while value >= edges[idx + 1] {
        idx += 1;
    }
    Ok(idx)
}

/// Buckets a question along `axis` using the default tokenizer for the
/// question-length axis.
pub fn assign_bucket(q: &Question, axis: Axis, edges: &[f64]) -> Result<usize> {
    assign_bucket_with(q, axis, edges, &whitespace_punct_token_count)
}

/// Buckets a question along `axis` under a caller-supplied token counter.
pub fn assign_bucket_with(
    q: &Question,
    axis: Axis,
    edges: &[f64],
    tokens: TokenCounter,
) -> Result<usize> {
    bucket_index(axis_value(q, axis, tokens), edges)
}

/// Corpus statistics: the cause-by-aspect count grid, format shares, and
/// length/duration/frame histograms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    /// `cell_counts[cause][aspect]`, indexed in `Cause::ALL` / `Aspect::ALL`
    /// order.
    pub cell_counts: [[u64; 3]; 3],
    /// Fraction of questions per format. Empty input yields all-zero shares.
    pub format_shares: BTreeMap<QFormat, f64>,
    pub duration_hist: Histogram,
    pub frames_hist: Histogram,
    pub question_len_hist: Histogram,
    /// Name of the tokenizer the length histogram was computed under.
    pub tokenizer: String,
    pub total: u64,
}

impl DatasetStats {
    /// Sum over aspects for one cause (a row of the grid).
    pub fn row_sum(&self, cause: Cause) -> u64 {
        self.cell_counts[cause_idx(cause)].iter().sum()
    }

    /// Sum over causes for one aspect (a column of the grid).
    pub fn column_sum(&self, aspect: Aspect) -> u64 {
        let j = aspect_idx(aspect);
        self.cell_counts.iter().map(|row| row[j]).sum()
    }

    pub fn cell(&self, cause: Cause, aspect: Aspect) -> u64 {
        self.cell_counts[cause_idx(cause)][aspect_idx(aspect)]
    }
}

pub(crate) fn cause_idx(cause: Cause) -> usize {
    Cause::ALL.iter().position(|&c| c == cause).unwrap()
}

pub(crate) fn aspect_idx(aspect: Aspect) -> usize {
    Aspect::ALL.iter().position(|&a| a == aspect).unwrap()
}

/// Computes corpus statistics with the default tokenizer.
pub fn compute_stats(questions: &[Question]) -> Result<DatasetStats> {
    compute_stats_with(questions, &whitespace_punct_token_count, DEFAULT_TOKENIZER_NAME)
}

/// Computes corpus statistics under a caller-supplied token counter.
/// `tokenizer_name` is carried into reports so they state how question
/// length was measured.
pub fn compute_stats_with(
    questions: &[Question],
    tokens: TokenCounter,
    tokenizer_name: &str,
) -> Result<DatasetStats> {
    let mut stats = DatasetStats {
        cell_counts: [[0; 3]; 3],
        format_shares: QFormat::ALL.iter().map(|&f| (f, 0.0)).collect(),
        duration_hist: Histogram::new(Axis::Duration.default_edges()),
        frames_hist: Histogram::new(Axis::Frames.default_edges()),
        question_len_hist: Histogram::new(Axis::QuestionLength.default_edges()),
        tokenizer: tokenizer_name.to_string(),
        total: 0,
    };
    let mut format_counts: BTreeMap<QFormat, u64> = QFormat::ALL.iter().map(|&f| (f, 0)).collect();
    for q in questions {
        stats.cell_counts[cause_idx(q.cause)][aspect_idx(q.aspect)] += 1;
        *format_counts.get_mut(&q.format).unwrap() += 1;
        stats.duration_hist.add(q.duration_s)?;
        stats.frames_hist.add(q.frame_count as f64)?;
        stats.question_len_hist.add(tokens(&q.text) as f64)?;
        stats.total += 1;
    }
    if stats.total > 0 {
        for (fmt, share) in stats.format_shares.iter_mut() {
            *share = format_counts[fmt] as f64 / stats.total as f64;
        }
    }
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Published reference statistics
// ---------------------------------------------------------------------------

/// Statistics of the published benchmark release, used by the stats command
/// to cross-check a local copy of the corpus.
pub mod published {
    use super::{Aspect, Cause};

    /// Question counts per (cause, aspect) cell as released, indexed in
    /// `Cause::ALL` / `Aspect::ALL` order.
    pub const CELL_COUNTS: [[u64; 3]; 3] = [
        [2162, 686, 1763],
        [94, 82, 404],
        [1107, 121, 78],
    ];

    /// Per-cause totals as printed in the release. These do *not* equal the
    /// sums of the published cells; the harness trusts cells and surfaces
    /// the discrepancy rather than guessing which figure was intended.
    pub const ROW_TOTALS_AS_PUBLISHED: [u64; 3] = [4569, 538, 1156];

    /// Published grand total. Consistent with the cell grid.
    pub const TOTAL: u64 = 6497;

    /// Cell count for one (cause, aspect) pair.
    pub fn cell(cause: Cause, aspect: Aspect) -> u64 {
        CELL_COUNTS[super::cause_idx(cause)][super::aspect_idx(aspect)]
    }
}
