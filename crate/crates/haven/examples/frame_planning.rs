//! Shows how a question becomes one OpenAI-compatible chat request: frame
//! payloads from a frame source, direct versus chain-of-thought prompting,
//! and the request-size guard.
//!
//! ```text
//! cargo run --example frame_planning
//! ```

use haven::mock;
use haven::model_client::{
    build_inference_request, FrameSource, PromptMode, SamplingConfig, DEFAULT_REQUEST_BYTE_CAP,
};

fn main() -> anyhow::Result<()> {
    let question = mock::scenario60().questions.into_iter().next().unwrap();
    println!(
        "question {} ({} / {} / {}):\n  {}\n",
        question.id,
        question.cause.as_str(),
        question.aspect.as_str(),
        question.format.as_str(),
        question.text
    );

    // The synthetic source hands back n_frames identical tiny PNGs; the
    // directory and command sources read real extracted frames instead.
    let sampling = SamplingConfig {
        n_frames: 8,
        ..SamplingConfig::default()
    };
    let frames = FrameSource::Synthetic.frames_for(&question, &sampling)?;
    println!(
        "sampled {} frames, {} bytes each ({})",
        frames.len(),
        frames[0].bytes.len(),
        frames[0].mime
    );

    let request = build_inference_request(
        &question,
        &frames,
        &sampling,
        "example-video-model",
        DEFAULT_REQUEST_BYTE_CAP,
    )?;
    println!(
        "direct request: {} message(s), text part: {:?}",
        request.messages.len(),
        request.last_text().unwrap_or("")
    );

    let cot = SamplingConfig {
        prompt_mode: PromptMode::Cot,
        ..sampling.clone()
    };
    let request = build_inference_request(
        &question,
        &frames,
        &cot,
        "example-video-model",
        DEFAULT_REQUEST_BYTE_CAP,
    )?;
    println!(
        "cot request text part: {:?}",
        request.last_text().unwrap_or("")
    );

    // Every sampling parameter that shapes the request feeds the cache
    // digest, so answers from different configurations never mix.
    println!("\nsampling digests:");
    println!("  direct: {}", sampling.digest());
    println!("  cot:    {}", cot.digest());

    // Oversized payloads are refused before any bytes leave the machine.
    let huge = vec![haven::model_client::FramePayload {
        bytes: vec![0u8; DEFAULT_REQUEST_BYTE_CAP + 1],
        mime: "image/png",
    }];
    let err = build_inference_request(
        &question,
        &huge,
        &sampling,
        "example-video-model",
        DEFAULT_REQUEST_BYTE_CAP,
    )
    .unwrap_err();
    println!("\noversized request rejected: {err}");
    Ok(())
}
