//! Aggregation of verdicts into accuracy and consistency metrics.
//!
//! Everything here accumulates integer counts in a single pass and derives
//! percentages only at the edge, so results are exact, independent of
//! input order, and cheap to cross-check against a brute-force
//! recomputation.
//!
//! Two metric families:
//!
//! * **Accuracy** — share of judged-correct replies, overall and split by
//!   hallucination cause × content aspect, by question format, or along
//!   bucketed axes (video duration, frame count, question length).
//!   Unjudgeable items count as incorrect.
//! * **Consistency bias** — share of variant groups whose members receive
//!   internally inconsistent verdicts: a yes/no pair where exactly one
//!   phrasing is judged correct, or an option-rotation triple whose three
//!   verdicts are not all equal. Groups containing an unjudgeable member
//!   are excluded from the rate and tallied separately. Short-answer
//!   groups have a single member and no consistency notion.

use std::collections::HashMap;

use crate::dataset::{
    validate_groups, Aspect, Axis, Cause, QFormat, Question, TokenCounter, VariantGroup,
};
use crate::error::{Error, Result};
use crate::judge::Verdict;

/// An integer (answered, correct) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub n: u64,
    pub correct: u64,
}

impl Tally {
    pub fn add(&mut self, correct: bool) {
        self.n += 1;
        if correct {
            self.correct += 1;
        }
    }

    /// Accuracy in percent; undefined (None) for an empty cell.
    pub fn accuracy_pct(&self) -> Option<f64> {
        if self.n == 0 {
            None
        } else {
            Some(100.0 * self.correct as f64 / self.n as f64)
        }
    }
}

/// Accuracy split by cause × aspect, with an overall total.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccuracyTable {
    cells: [[Tally; 3]; 3],
    total: Tally,
}

impl AccuracyTable {
    pub fn cell(&self, cause: Cause, aspect: Aspect) -> Tally {
        self.cells[cause_idx(cause)][aspect_idx(aspect)]
    }

    pub fn total(&self) -> Tally {
        self.total
    }

    pub fn row(&self, cause: Cause) -> Tally {
        Aspect::ALL.iter().fold(Tally::default(), |mut acc, &a| {
            let c = self.cell(cause, a);
            acc.n += c.n;
            acc.correct += c.correct;
            acc
        })
    }

    pub fn column(&self, aspect: Aspect) -> Tally {
        Cause::ALL.iter().fold(Tally::default(), |mut acc, &c| {
            let cell = self.cell(c, aspect);
            acc.n += cell.n;
            acc.correct += cell.correct;
            acc
        })
    }
}

fn cause_idx(c: Cause) -> usize {
    Cause::ALL.iter().position(|&x| x == c).unwrap()
}

fn aspect_idx(a: Aspect) -> usize {
    Aspect::ALL.iter().position(|&x| x == a).unwrap()
}

/// Pairs every question with its verdict, enforcing a complete one-to-one
/// join: duplicate verdicts, verdicts for unknown questions, and questions
/// left without a verdict are all integrity errors.
pub fn join_verdicts<'a>(
    questions: &'a [Question],
    verdicts: &'a [Verdict],
) -> Result<Vec<(&'a Question, &'a Verdict)>> {
    let mut by_id: HashMap<&str, &Verdict> = HashMap::with_capacity(verdicts.len());
    for v in verdicts {
        if by_id.insert(&v.question_id, v).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate verdict for question {:?}",
                v.question_id
            )));
        }
    }
    let mut joined = Vec::with_capacity(questions.len());
    let mut missing = Vec::new();
    let mut seen_questions: HashMap<&str, ()> = HashMap::with_capacity(questions.len());
    for q in questions {
        if seen_questions.insert(&q.id, ()).is_some() {
            return Err(Error::Integrity(format!("duplicate question id {:?}", q.id)));
        }
        match by_id.remove(q.id.as_str()) {
            Some(v) => joined.push((q, v)),
            None => missing.push(q.id.as_str()),
        }
    }
    if !missing.is_empty() {
        let shown = missing.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
        return Err(Error::Integrity(format!(
            "{} question(s) have no verdict (first: {})",
            missing.len(),
            shown
        )));
    }
    if let Some((id, _)) = by_id.iter().next() {
        return Err(Error::Integrity(format!(
            "{} verdict(s) reference unknown questions (first: {:?})",
            by_id.len(),
            id
        )));
    }
    Ok(joined)
}

/// Builds the cause × aspect accuracy table over a complete verdict set.
pub fn accuracy_table(questions: &[Question], verdicts: &[Verdict]) -> Result<AccuracyTable> {
    let mut table = AccuracyTable::default();
    for (q, v) in join_verdicts(questions, verdicts)? {
        table.cells[cause_idx(q.cause)][aspect_idx(q.aspect)].add(v.correct);
        table.total.add(v.correct);
    }
    Ok(table)
}

/// Consistency counts for one question format.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BiasBucket {
    /// Groups with a verdict for every member.
    pub groups: u64,
    /// Groups whose members' verdicts are not all equal.
    pub biased: u64,
    /// Groups with every member judged correct (strictly consistent and
    /// right), reported alongside the bias rate.
    pub all_correct: u64,
    /// Groups dropped from the rate because a member was unjudgeable.
    pub excluded: u64,
}

impl BiasBucket {
    /// Bias in percent over judgeable groups; None when no group qualifies.
    pub fn bias_pct(&self) -> Option<f64> {
        if self.groups == 0 {
            None
        } else {
            Some(100.0 * self.biased as f64 / self.groups as f64)
        }
    }
}

/// Consistency bias over yes/no pairs and option-rotation triples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BiasReport {
    pub binary: BiasBucket,
    pub multiple_choice: BiasBucket,
}

impl BiasReport {
    /// Pooled bias across both formats, computed from pooled integer
    /// counts — not an average of the two rates.
    pub fn pooled_pct(&self) -> Option<f64> {
        let groups = self.binary.groups + self.multiple_choice.groups;
        if groups == 0 {
            None
        } else {
            Some(100.0 * (self.binary.biased + self.multiple_choice.biased) as f64 / groups as f64)
        }
    }

    pub fn excluded_total(&self) -> u64 {
        self.binary.excluded + self.multiple_choice.excluded
    }
}

/// Computes consistency bias from validated variant groups.
pub fn bias_report(questions: &[Question], verdicts: &[Verdict]) -> Result<BiasReport> {
    let groups = validate_groups(questions)?;
    let joined = join_verdicts(questions, verdicts)?;
    let by_id: HashMap<&str, &Verdict> = joined.iter().map(|(q, v)| (q.id.as_str(), *v)).collect();
    Ok(bias_from_groups(&groups, &by_id))
}

fn bias_from_groups(groups: &[VariantGroup], by_id: &HashMap<&str, &Verdict>) -> BiasReport {
    let mut report = BiasReport::default();
    for group in groups {
        let bucket = match group.format {
            QFormat::Binary => &mut report.binary,
            QFormat::MultipleChoice => &mut report.multiple_choice,
            QFormat::ShortAnswer => continue,
        };
        // join_verdicts already guaranteed presence of every member.
        let members: Vec<&Verdict> = group
            .members
            .iter()
            .map(|q| by_id[q.id.as_str()])
            .collect();
        if members.iter().any(|v| v.unjudgeable()) {
            bucket.excluded += 1;
            continue;
        }
        bucket.groups += 1;
        let first = members[0].correct;
        if members.iter().any(|v| v.correct != first) {
            bucket.biased += 1;
        }
        if members.iter().all(|v| v.correct) {
            bucket.all_correct += 1;
        }
    }
    report
}

/// Accuracy within one value bucket along an axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketPoint {
    pub label: String,
    pub tally: Tally,
}

/// Accuracy along a bucketed axis; empty buckets are omitted.
pub fn bucket_series(
    questions: &[Question],
    verdicts: &[Verdict],
    axis: Axis,
    edges: &[f64],
) -> Result<Vec<BucketPoint>> {
    bucket_series_with(
        questions,
        verdicts,
        axis,
        edges,
        &crate::dataset::whitespace_punct_token_count,
    )
}

/// [`bucket_series`] with an explicit question-length token counter.
pub fn bucket_series_with(
    questions: &[Question],
    verdicts: &[Verdict],
    axis: Axis,
    edges: &[f64],
    tokens: TokenCounter,
) -> Result<Vec<BucketPoint>> {
    let joined = join_verdicts(questions, verdicts)?;
    // One overflow bucket past the last edge, mirroring Histogram.
    let mut tallies = vec![Tally::default(); edges.len()];
    for (q, v) in joined {
        let idx = crate::dataset::assign_bucket_with(q, axis, edges, tokens)?;
        tallies[idx].add(v.correct);
    }
    let hist = crate::dataset::Histogram {
        edges: edges.to_vec(),
        counts: vec![0; edges.len()],
    };
    Ok(tallies
        .into_iter()
        .enumerate()
        .filter(|(_, t)| t.n > 0)
        .map(|(i, tally)| BucketPoint {
            label: hist.bucket_label(i),
            tally,
        })
        .collect())
}

/// Which pair of categorical dimensions a heatmap crosses. The three
/// dimensions (cause, aspect, format) yield exactly three distinct pairs;
/// crossing a dimension with itself is unrepresentable by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapKind {
    CauseAspect,
    FormatAspect,
    FormatCause,
}

impl HeatmapKind {
    pub const ALL: [HeatmapKind; 3] = [
        HeatmapKind::CauseAspect,
        HeatmapKind::FormatAspect,
        HeatmapKind::FormatCause,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeatmapKind::CauseAspect => "cause_aspect",
            HeatmapKind::FormatAspect => "format_aspect",
            HeatmapKind::FormatCause => "format_cause",
        }
    }

    fn labels(self) -> (Vec<&'static str>, Vec<&'static str>) {
        let causes = || Cause::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>();
        let aspects = || Aspect::ALL.iter().map(|a| a.as_str()).collect::<Vec<_>>();
        let formats = || QFormat::ALL.iter().map(|f| f.as_str()).collect::<Vec<_>>();
        match self {
            HeatmapKind::CauseAspect => (causes(), aspects()),
            HeatmapKind::FormatAspect => (formats(), aspects()),
            HeatmapKind::FormatCause => (formats(), causes()),
        }
    }

    fn indices(self, q: &Question) -> (usize, usize) {
        let fmt_idx = |f: QFormat| QFormat::ALL.iter().position(|&x| x == f).unwrap();
        match self {
            HeatmapKind::CauseAspect => (cause_idx(q.cause), aspect_idx(q.aspect)),
            HeatmapKind::FormatAspect => (fmt_idx(q.format), aspect_idx(q.aspect)),
            HeatmapKind::FormatCause => (fmt_idx(q.format), cause_idx(q.cause)),
        }
    }
}

/// A 3×3 accuracy cross-table over two categorical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub kind: HeatmapKind,
    pub row_labels: Vec<&'static str>,
    pub col_labels: Vec<&'static str>,
    pub cells: Vec<Vec<Tally>>,
}

impl Heatmap {
    pub fn grand_total(&self) -> Tally {
        let mut total = Tally::default();
        for row in &self.cells {
            for cell in row {
                total.n += cell.n;
                total.correct += cell.correct;
            }
        }
        total
    }
}

/// Builds the accuracy heatmap crossing the two dimensions of `kind`.
pub fn pair_heatmap(
    questions: &[Question],
    verdicts: &[Verdict],
    kind: HeatmapKind,
) -> Result<Heatmap> {
    let (row_labels, col_labels) = kind.labels();
    let mut cells = vec![vec![Tally::default(); col_labels.len()]; row_labels.len()];
    for (q, v) in join_verdicts(questions, verdicts)? {
        let (r, c) = kind.indices(q);
        cells[r][c].add(v.correct);
    }
    Ok(Heatmap {
        kind,
        row_labels,
        col_labels,
        cells,
    })
}
