//! Loads a question corpus, validates its variant-group structure and
//! prints composition statistics: the cause × aspect grid, format shares
//! and the three accuracy-bucketing histograms.
//!
//! ```text
//! cargo run --example dataset_stats
//! ```

use haven::dataset::{self, Aspect, Cause, QFormat};
use haven::mock;

fn main() -> anyhow::Result<()> {
    // Any JSONL question file works here; the scripted 60-question corpus
    // keeps the example self-contained.
    let questions = mock::scenario60().questions;
    let groups = dataset::validate_groups(&questions)?;
    let stats = dataset::compute_stats(&questions)?;

    println!("{} questions in {} variant groups\n", stats.total, groups.len());

    println!("{:<24} {:>8} {:>8} {:>8}", "cause \\ aspect", "object", "scene", "event");
    for (ci, cause) in Cause::ALL.iter().enumerate() {
        print!("{:<24}", cause.as_str());
        for ai in 0..Aspect::ALL.len() {
            print!(" {:>8}", stats.cell_counts[ci][ai]);
        }
        println!();
    }

    println!("\nformat shares:");
    for format in QFormat::ALL {
        println!(
            "  {:<16} {:>6.1}%",
            format.as_str(),
            stats.format_shares[&format] * 100.0
        );
    }

    print_hist("video duration (s)", &stats.duration_hist);
    print_hist("video frame count", &stats.frames_hist);
    print_hist(
        &format!("question length ({} tokens)", stats.tokenizer),
        &stats.question_len_hist,
    );
    Ok(())
}

fn print_hist(title: &str, hist: &haven::dataset::Histogram) {
    println!("\n{title}:");
    for (idx, n) in hist.counts.iter().enumerate() {
        if *n > 0 {
            println!("  {:<12} {n}", hist.bucket_label(idx));
        }
    }
}
