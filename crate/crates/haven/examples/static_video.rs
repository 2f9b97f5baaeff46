//! Turns single images into "static videos" — a frame directory holding
//! n identical copies — producing reasoning samples for fine-tuning, and
//! shows the integrity check that guards them.
//!
//! ```text
//! cargo run --example static_video
//! ```

use haven::model_client::TINY_PNG;
use haven::srft;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let frames_root = dir.path().join("frames");

    let sample = srft::make_static_video_sample(
        &frames_root,
        "chart-0001",
        &TINY_PNG,
        8,
        "What trend does the chart in the video show?",
        "The line rises steadily from left to right, so the chart shows a consistent upward trend across the whole period.",
        "image-reasoning-set",
    )?;
    println!("built sample:");
    println!("  video_ref: {}", sample.video_ref);
    println!("  source:    {}", sample.source);

    let frame_dir = frames_root.join("chart-0001");
    let mut names: Vec<_> = std::fs::read_dir(&frame_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    println!("  frames:    {names:?}");

    srft::verify_static_frames(&frame_dir)?;
    println!("\nintegrity check passed: every frame is byte-identical");

    // Corrupting one frame makes verification fail loudly.
    std::fs::write(frame_dir.join("0003.png"), b"not the same frame")?;
    match srft::verify_static_frames(&frame_dir) {
        Ok(()) => println!("unexpectedly passed"),
        Err(e) => println!("after corrupting one frame: {e}"),
    }

    // The samples feed straight into fine-tuning alongside any others.
    let batch = vec![sample];
    srft::write_samples(dir.path().join("samples.jsonl"), &batch)?;
    let back = srft::load_samples(dir.path().join("samples.jsonl"))?;
    println!("\nsample file round trip: {} sample(s)", back.len());
    Ok(())
}
