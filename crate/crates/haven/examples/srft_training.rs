//! Fine-tunes a low-rank adapter on reasoning samples while the base
//! weights stay bit-for-bit frozen, then certifies the low-rank structure
//! of the learned update through its singular values.
//!
//! ```text
//! cargo run --example srft_training
//! ```

use haven::srft::{self, SrftConfig};
use haven::tdpo::{ToyPolicy, TOY_DIM, TOY_VOCAB};

fn main() -> anyhow::Result<()> {
    let samples = srft::standard_toy_batch();
    println!("{} reasoning samples; first:", samples.len());
    println!("  video:     {}", samples[0].video_ref);
    println!("  question:  {}", samples[0].question);
    println!("  target:    {}\n", samples[0].reasoning_target);

    let cfg = SrftConfig::default(); // alpha 1, rank 4, lr 0.5, 200 steps
    let policy = ToyPolicy::seeded(TOY_DIM, TOY_VOCAB, cfg.seed);
    let before = policy.weights.clone();

    let outcome = srft::train_srft(&policy, &samples, &cfg)?;
    println!(
        "loss {:.6} -> {:.6} over {} steps (adapter rank {})",
        outcome.trace[0].loss,
        outcome.final_loss,
        cfg.steps,
        cfg.rank
    );
    println!(
        "base weights untouched: {}",
        if policy.weights == before { "yes (bit-identical)" } else { "NO" }
    );

    // The dense update B·A can have at most `rank` non-zero singular
    // values; everything past them is numerically zero.
    let svals = outcome.adapter.update_singular_values();
    println!("\nsingular values of the learned update:");
    for (i, v) in svals.iter().enumerate().take(cfg.rank + 2) {
        let marker = if i < cfg.rank { "" } else { "   <- past the rank" };
        println!("  sigma_{i} = {v:.3e}{marker}");
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("adapter.json");
    srft::save_adapter(&path, &outcome.adapter)?;
    let restored = srft::load_adapter(&path)?;
    println!(
        "\nadapter round trip through {}: {}",
        path.display(),
        if restored == outcome.adapter { "exact" } else { "LOSSY" }
    );

    // Composed weights = base + alpha * B * A; the adapter is all that
    // ever needs saving.
    let composed = srft::lora_compose(&policy.weights, &outcome.adapter);
    println!(
        "composed weight delta Frobenius norm: {:.4}",
        (&composed - &policy.weights).norm()
    );
    Ok(())
}
