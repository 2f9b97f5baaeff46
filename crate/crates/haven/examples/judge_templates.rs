//! Shows the grading side of the harness: the five fixed prompt templates,
//! how a question/answer/prediction triple is spliced into them, and the
//! deliberately strict verdict parser.
//!
//! ```text
//! cargo run --example judge_templates
//! ```

use haven::judge::{self, TemplateId};

fn main() -> anyhow::Result<()> {
    println!("the five judge/extraction templates:\n");
    for id in TemplateId::ALL {
        let body = judge::template(id).body;
        let first_line = body.lines().next().unwrap_or("");
        println!("  {:<12} {} chars, opens: {first_line:?}", id.as_str(), body.len());
    }

    let question = "What is the person in the video doing?";
    let gold = "A person is assembling a wooden shelf.";
    let prediction = "Someone puts together furniture with a screwdriver.";

    println!("\nrendered short-answer judging prompt:\n");
    let prompt = judge::render_prompt(TemplateId::SaJudge, question, Some(gold), prediction)?;
    println!("{prompt}");

    // Chain-of-thought replies to choice questions are not judged raw;
    // the final answer is lifted out first with an extraction prompt.
    let cot_reply = "The visible tools and the half-built frame suggest assembly. FINAL: yes";
    println!("\nrendered yes/no extraction prompt for a chain-of-thought reply:\n");
    let prompt = judge::render_prompt(TemplateId::BcExtract, question, None, cot_reply)?;
    println!("{prompt}");

    // The verdict parser accepts exactly "1" or "0" (after trimming) and
    // nothing else; anything off-format triggers one strict re-ask before
    // the item is counted as unjudgeable.
    println!("\nverdict parsing:");
    for reply in ["1", " 0\n", "correct", "1.", "The answer is 1"] {
        match judge::parse_verdict(reply) {
            Ok(v) => println!("  {reply:?} -> {}", if v { "correct" } else { "incorrect" }),
            Err(e) => println!("  {reply:?} -> rejected ({e})"),
        }
    }

    println!("\nbinary extraction normalization:");
    for reply in ["Yes.", "\"no\"", "NO ANSWER", "maybe"] {
        match judge::normalize_binary_extraction(reply) {
            Ok(v) => println!("  {reply:?} -> {v:?}"),
            Err(e) => println!("  {reply:?} -> rejected ({e})"),
        }
    }
    Ok(())
}
