//! Deterministic CSV and Markdown rendering of metrics.
//!
//! Every writer emits rows in a fixed canonical order (causes, aspects and
//! formats in their declaration order), formats percentages with two
//! decimals, and writes `NA` for undefined values, so identical inputs
//! always produce identical bytes. No timestamps or environment details
//! appear in any artifact.

use std::path::Path;

use crate::dataset::{Aspect, Axis, Cause, DatasetStats, Histogram, QFormat};
use crate::error::Result;
use crate::metrics::{AccuracyTable, BiasReport, BucketPoint, Heatmap, HeatmapKind, Tally};

/// Two-decimal percentage, or `NA` when undefined.
pub fn fmt_pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => "NA".to_string(),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_writer(std::fs::File::create(path)?))
}

/// `accuracy_table.csv`: one row per cause × aspect cell plus a total row.
pub fn write_accuracy_csv(path: impl AsRef<Path>, table: &AccuracyTable) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["cause", "aspect", "n", "correct", "accuracy"])?;
    for &cause in &Cause::ALL {
        for &aspect in &Aspect::ALL {
            let cell = table.cell(cause, aspect);
            w.write_record([
                cause.as_str(),
                aspect.as_str(),
                &cell.n.to_string(),
                &cell.correct.to_string(),
                &fmt_pct(cell.accuracy_pct()),
            ])?;
        }
    }
    let total = table.total();
    w.write_record([
        "total",
        "",
        &total.n.to_string(),
        &total.correct.to_string(),
        &fmt_pct(total.accuracy_pct()),
    ])?;
    w.flush()?;
    Ok(())
}

/// `bias_report.csv`: a single wide row of pooled consistency counts.
pub fn write_bias_csv(path: impl AsRef<Path>, report: &BiasReport) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record([
        "binary_groups",
        "binary_biased",
        "binary_bias_pct",
        "binary_excluded",
        "mc_groups",
        "mc_biased",
        "mc_bias_pct",
        "mc_excluded",
        "pooled_groups",
        "pooled_biased",
        "pooled_bias_pct",
    ])?;
    let b = &report.binary;
    let m = &report.multiple_choice;
    w.write_record([
        b.groups.to_string(),
        b.biased.to_string(),
        fmt_pct(b.bias_pct()),
        b.excluded.to_string(),
        m.groups.to_string(),
        m.biased.to_string(),
        fmt_pct(m.bias_pct()),
        m.excluded.to_string(),
        (b.groups + m.groups).to_string(),
        (b.biased + m.biased).to_string(),
        fmt_pct(report.pooled_pct()),
    ])?;
    w.flush()?;
    Ok(())
}

/// `buckets_{axis}.csv`: accuracy per non-empty value bucket.
pub fn write_bucket_csv(path: impl AsRef<Path>, series: &[BucketPoint]) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["bucket", "n", "correct", "accuracy"])?;
    for point in series {
        w.write_record([
            point.label.as_str(),
            &point.tally.n.to_string(),
            &point.tally.correct.to_string(),
            &fmt_pct(point.tally.accuracy_pct()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn heatmap_dims(kind: HeatmapKind) -> (&'static str, &'static str) {
    match kind {
        HeatmapKind::CauseAspect => ("cause", "aspect"),
        HeatmapKind::FormatAspect => ("format", "aspect"),
        HeatmapKind::FormatCause => ("format", "cause"),
    }
}

/// `heatmap_{kind}.csv`: long-form accuracy cross-table.
pub fn write_heatmap_csv(path: impl AsRef<Path>, heat: &Heatmap) -> Result<()> {
    let (row_dim, col_dim) = heatmap_dims(heat.kind);
    let mut w = csv_writer(path.as_ref())?;
    w.write_record([row_dim, col_dim, "n", "correct", "accuracy"])?;
    for (r, row_label) in heat.row_labels.iter().enumerate() {
        for (c, col_label) in heat.col_labels.iter().enumerate() {
            let cell = heat.cells[r][c];
            w.write_record([
                *row_label,
                *col_label,
                &cell.n.to_string(),
                &cell.correct.to_string(),
                &fmt_pct(cell.accuracy_pct()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn pct_with_counts(tally: Tally) -> String {
    format!("{} ({}/{})", fmt_pct(tally.accuracy_pct()), tally.correct, tally.n)
}

/// `summary.md`: the human-readable digest of one evaluation run.
///
/// `format_heat` must be the format × aspect heatmap (its row sums give
/// per-format accuracy); `unjudgeable` is the count of replies that never
/// produced a parseable verdict.
pub fn write_summary_md(
    path: impl AsRef<Path>,
    model_name: &str,
    table: &AccuracyTable,
    bias: &BiasReport,
    format_heat: &Heatmap,
    buckets: &[(Axis, Vec<BucketPoint>)],
    unjudgeable: u64,
) -> Result<()> {
    assert_eq!(format_heat.kind, HeatmapKind::FormatAspect);
    let mut out = String::new();
    out.push_str(&format!("# Evaluation report: {model_name}\n\n"));

    out.push_str("## Accuracy by hallucination cause and content aspect\n\n");
    out.push_str("| cause \\ aspect | object | scene | event | all |\n");
    out.push_str("|---|---|---|---|---|\n");
    for &cause in &Cause::ALL {
        let cells: Vec<String> = Aspect::ALL
            .iter()
            .map(|&a| pct_with_counts(table.cell(cause, a)))
            .collect();
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            cause.as_str(),
            cells.join(" | "),
            pct_with_counts(table.row(cause))
        ));
    }
    let col_cells: Vec<String> = Aspect::ALL
        .iter()
        .map(|&a| pct_with_counts(table.column(a)))
        .collect();
    out.push_str(&format!(
        "| all | {} | {} |\n\n",
        col_cells.join(" | "),
        pct_with_counts(table.total())
    ));

    out.push_str("## Accuracy by question format\n\n");
    out.push_str("| format | n | correct | accuracy |\n|---|---|---|---|\n");
    for (r, &format) in QFormat::ALL.iter().enumerate() {
        let mut row = Tally::default();
        for cell in &format_heat.cells[r] {
            row.n += cell.n;
            row.correct += cell.correct;
        }
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            format.as_str(),
            row.n,
            row.correct,
            fmt_pct(row.accuracy_pct())
        ));
    }
    out.push('\n');

    out.push_str("## Consistency bias across variant groups\n\n");
    out.push_str("A group is biased when its rephrasings receive conflicting verdicts.\n\n");
    out.push_str("| format | groups | biased | bias | all correct | excluded |\n|---|---|---|---|---|---|\n");
    for (name, bucket) in [("binary", &bias.binary), ("multiple_choice", &bias.multiple_choice)] {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            name,
            bucket.groups,
            bucket.biased,
            fmt_pct(bucket.bias_pct()),
            bucket.all_correct,
            bucket.excluded
        ));
    }
    out.push_str(&format!(
        "| pooled | {} | {} | {} | {} | {} |\n\n",
        bias.binary.groups + bias.multiple_choice.groups,
        bias.binary.biased + bias.multiple_choice.biased,
        fmt_pct(bias.pooled_pct()),
        bias.binary.all_correct + bias.multiple_choice.all_correct,
        bias.excluded_total()
    ));
    out.push_str(&format!(
        "Unjudgeable replies (counted incorrect, groups excluded from bias): {unjudgeable}\n\n"
    ));

    for (axis, series) in buckets {
        out.push_str(&format!("## Accuracy by {}\n\n", axis.as_str()));
        out.push_str("| bucket | n | correct | accuracy |\n|---|---|---|---|\n");
        for point in series {
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                point.label,
                point.tally.n,
                point.tally.correct,
                fmt_pct(point.tally.accuracy_pct())
            ));
        }
        out.push('\n');
    }

    std::fs::write(path, out)?;
    Ok(())
}

/// One model on the size-versus-quality scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub model: String,
    pub size_b: f64,
    pub accuracy_pct: f64,
    pub pooled_bias_pct: Option<f64>,
}

/// `size_scatter.csv`: parameter count (billions) against accuracy and
/// pooled bias, for eyeballing scale trends across evaluated checkpoints.
/// Rows are sorted by size, then model name.
pub fn write_size_scatter_csv(path: impl AsRef<Path>, points: &[ScatterPoint]) -> Result<()> {
    let mut sorted: Vec<&ScatterPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.size_b
            .partial_cmp(&b.size_b)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.model.cmp(&b.model))
    });
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["model", "size_b", "accuracy_pct", "pooled_bias_pct"])?;
    for p in sorted {
        w.write_record([
            p.model.as_str(),
            &format!("{}", p.size_b),
            &fmt_pct(Some(p.accuracy_pct)),
            &fmt_pct(p.pooled_bias_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `stats.csv`: cause × aspect question counts plus the grand total.
pub fn write_stats_csv(path: impl AsRef<Path>, stats: &DatasetStats) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["cause", "aspect", "count"])?;
    for &cause in &Cause::ALL {
        for &aspect in &Aspect::ALL {
            w.write_record([
                cause.as_str(),
                aspect.as_str(),
                &stats.cell(cause, aspect).to_string(),
            ])?;
        }
    }
    w.write_record(["total", "", &stats.total.to_string()])?;
    w.flush()?;
    Ok(())
}

fn histogram_md(out: &mut String, title: &str, hist: &Histogram) {
    out.push_str(&format!("### {title}\n\n"));
    out.push_str("| bucket | count |\n|---|---|\n");
    for (i, count) in hist.counts.iter().enumerate() {
        out.push_str(&format!("| {} | {} |\n", hist.bucket_label(i), count));
    }
    out.push('\n');
}

/// `stats.md`: dataset composition — count grid with marginals, format
/// shares and the three size histograms. With `compare_reference` the
/// count grid is checked against the benchmark's own published reference
/// table, including flags for reference rows whose printed totals do not
/// equal the sum of their printed cells.
pub fn write_stats_md(
    path: impl AsRef<Path>,
    stats: &DatasetStats,
    compare_reference: bool,
) -> Result<()> {
    use crate::dataset::published;

    let mut out = String::new();
    out.push_str("# Dataset composition\n\n");
    out.push_str(&format!("Total questions: {}\n\n", stats.total));

    out.push_str("## Questions by hallucination cause and content aspect\n\n");
    out.push_str("| cause \\ aspect | object | scene | event | row total |\n");
    out.push_str("|---|---|---|---|---|\n");
    for &cause in &Cause::ALL {
        let cells: Vec<String> = Aspect::ALL
            .iter()
            .map(|&a| stats.cell(cause, a).to_string())
            .collect();
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            cause.as_str(),
            cells.join(" | "),
            stats.row_sum(cause)
        ));
    }
    let col_sums: Vec<String> = Aspect::ALL
        .iter()
        .map(|&a| stats.column_sum(a).to_string())
        .collect();
    out.push_str(&format!("| column total | {} | {} |\n\n", col_sums.join(" | "), stats.total));

    out.push_str("## Question format shares\n\n");
    out.push_str("| format | share |\n|---|---|\n");
    for (format, share) in &stats.format_shares {
        out.push_str(&format!(
            "| {} | {} |\n",
            format.as_str(),
            fmt_pct(Some(100.0 * share))
        ));
    }
    out.push('\n');

    out.push_str("## Size distributions\n\n");
    out.push_str(&format!("Question length tokenizer: {}\n\n", stats.tokenizer));
    histogram_md(&mut out, "Video duration (seconds)", &stats.duration_hist);
    histogram_md(&mut out, "Frame count", &stats.frames_hist);
    histogram_md(&mut out, "Question length (tokens)", &stats.question_len_hist);

    if compare_reference {
        out.push_str("## Comparison against the published reference counts\n\n");
        out.push_str("| cause | aspect | computed | reference | match |\n|---|---|---|---|---|\n");
        let mut all_match = true;
        for &cause in &Cause::ALL {
            for &aspect in &Aspect::ALL {
                let got = stats.cell(cause, aspect);
                let want = published::cell(cause, aspect);
                if got != want {
                    all_match = false;
                }
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    cause.as_str(),
                    aspect.as_str(),
                    got,
                    want,
                    if got == want { "yes" } else { "NO" }
                ));
            }
        }
        out.push_str(&format!(
            "| total | | {} | {} | {} |\n\n",
            stats.total,
            published::TOTAL,
            if stats.total == published::TOTAL { "yes" } else { "NO" }
        ));
        out.push_str(if all_match && stats.total == published::TOTAL {
            "All computed counts match the reference table.\n\n"
        } else {
            "Some computed counts differ from the reference table.\n\n"
        });

        out.push_str("### Reference-internal row totals\n\n");
        out.push_str(
            "The reference table prints its own per-cause totals; rows where \
             that printed total differs from the sum of the printed cells are \
             flagged here.\n\n",
        );
        out.push_str("| cause | sum of reference cells | reference row total | flag |\n|---|---|---|---|\n");
        for (i, &cause) in Cause::ALL.iter().enumerate() {
            let cell_sum: u64 = Aspect::ALL.iter().map(|&a| published::cell(cause, a)).sum();
            let printed = published::ROW_TOTALS_AS_PUBLISHED[i];
            let flag = if cell_sum == printed {
                "consistent".to_string()
            } else {
                format!("INCONSISTENT (off by {})", cell_sum as i64 - printed as i64)
            };
            out.push_str(&format!("| {} | {} | {} | {} |\n", cause.as_str(), cell_sum, printed, flag));
        }
        out.push('\n');
    }

    std::fs::write(path, out)?;
    Ok(())
}
