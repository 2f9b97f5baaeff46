//! Scripted offline stand-ins for the model and judge endpoints, plus
//! synthetic corpora with hand-computed expected metrics.
//!
//! [`scenario60`] builds a 60-question corpus together with a scripted
//! model whose replies produce a fully known outcome: every per-cell
//! accuracy, the per-format consistency bias, and the pooled bias were
//! worked out by hand when the scenario was designed, so end-to-end runs
//! can be checked against exact numbers. [`SemanticJudgeTransport`] plays
//! the judge: it parses the rendered judge prompt, compares the embedded
//! gold and predicted answers semantically (but deterministically), and
//! replies `1`/`0`; extraction prompts are answered by lifting the
//! `FINAL:` marker that scripted chain-of-thought replies carry.
//!
//! [`published_replica`] generates a corpus whose cause × aspect counts
//! reproduce the benchmark's published composition table exactly.

use std::collections::HashMap;

use crate::dataset::{Aspect, Cause, QFormat, Question, VariantTag};
use crate::judge::{template, TemplateId};
use crate::model_client::transport::ScriptedTransport;
use crate::model_client::{ChatRequest, Transport, TransportFault, DEFAULT_COT_SUFFIX};

/// Marker scripted chain-of-thought replies embed before their final
/// answer; the mock extraction stage lifts whatever follows it.
pub const FINAL_MARKER: &str = "FINAL:";

/// A self-contained offline evaluation scenario.
pub struct MockWorld {
    pub questions: Vec<Question>,
    /// Model replies keyed by the exact prompt text the harness sends
    /// (both direct and chain-of-thought phrasings are scripted).
    pub model_script: HashMap<String, String>,
}

impl MockWorld {
    /// A scripted model transport covering every question in both prompt
    /// modes. Unknown prompts fail with HTTP 404.
    pub fn model_transport(&self) -> ScriptedTransport {
        ScriptedTransport::by_text(self.model_script.clone(), None)
    }
}

/// Expected results of [`scenario60`], hand-derived at design time.
pub mod scenario60_expected {
    /// `(cause, aspect, n, correct)` in canonical order.
    pub const CELLS: [(&str, &str, u64, u64); 9] = [
        ("prior_conflict", "object", 16, 11),
        ("prior_conflict", "scene", 4, 4),
        ("prior_conflict", "event", 11, 7),
        ("in_context_conflict", "object", 5, 1),
        ("in_context_conflict", "scene", 4, 0),
        ("in_context_conflict", "event", 6, 2),
        ("capability_deficiency", "object", 6, 4),
        ("capability_deficiency", "scene", 3, 1),
        ("capability_deficiency", "event", 5, 2),
    ];
    pub const TOTAL_N: u64 = 60;
    pub const TOTAL_CORRECT: u64 = 32;
    pub const BINARY_GROUPS: u64 = 15;
    pub const BINARY_BIASED: u64 = 6;
    pub const MC_GROUPS: u64 = 4;
    pub const MC_BIASED: u64 = 2;
    /// 100 · (6 + 2) / (15 + 4), two decimals.
    pub const POOLED_BIAS_PCT: &str = "42.11";
}

const TOPICS: [&str; 20] = [
    "a man opening a red umbrella",
    "a chef flipping a pancake",
    "a dog jumping over a fence",
    "a cyclist turning left at the corner",
    "a child stacking wooden blocks",
    "a woman watering potted plants",
    "a cat knocking a cup off the table",
    "a worker climbing a ladder",
    "a bird landing on the railing",
    "a car reversing into a driveway",
    "a boy kicking a ball against a wall",
    "a barista steaming milk",
    "a runner tying a shoelace",
    "a painter rolling white paint",
    "a girl feeding ducks by the pond",
    "a couple setting up a tent",
    "a technician replacing a light bulb",
    "a fisherman casting a line",
    "a skater grinding a rail",
    "a musician tuning a guitar",
];

#[allow(clippy::too_many_arguments)] // private constructor mirroring the struct fields
fn base_question(
    id: String,
    group: &str,
    tag: VariantTag,
    format: QFormat,
    cause: Cause,
    aspect: Aspect,
    text: String,
    gold: String,
    index: usize,
) -> Question {
    Question {
        id,
        group_id: group.to_string(),
        variant_tag: tag,
        video_ref: format!("videos/{group}.mp4"),
        cause,
        aspect,
        format,
        text,
        gold_answer: gold,
        duration_s: 4.0 + (index % 13) as f64 * 4.5,
        frame_count: 96 + (index as u64 % 13) * 108,
    }
}

struct ScenarioBuilder {
    questions: Vec<Question>,
    script: HashMap<String, String>,
    index: usize,
}

impl ScenarioBuilder {
    fn new() -> Self {
        ScenarioBuilder {
            questions: Vec::new(),
            script: HashMap::new(),
            index: 0,
        }
    }

    fn add_reply(&mut self, question_text: &str, reply: &str) {
        self.script.insert(question_text.to_string(), reply.to_string());
        self.script.insert(
            format!("{question_text}\n{DEFAULT_COT_SUFFIX}"),
            format!(
                "Watching the sampled frames in order and reasoning step by step. {FINAL_MARKER} {reply}"
            ),
        );
    }

    fn topic(&self) -> &'static str {
        TOPICS[self.index % TOPICS.len()]
    }

    /// One yes/no pair; `bits` are the planned judged-correct outcomes for
    /// the yes-correct and no-correct variants.
    fn binary_pair(&mut self, n: usize, cause: Cause, aspect: Aspect, bits: (bool, bool)) {
        let topic = self.topic();
        self.index += 1;
        let group = format!("b{n:02}");
        let yes_text = format!("Does the video show {topic}?");
        let no_text = format!("Is the video missing any moment of {topic}?");
        let yes_reply = if bits.0 { "Yes" } else { "No" };
        let no_reply = if bits.1 { "No" } else { "Yes" };
        self.add_reply(&yes_text, yes_reply);
        self.add_reply(&no_text, no_reply);
        self.questions.push(base_question(
            format!("{group}-yes"),
            &group,
            VariantTag::YesCorrect,
            QFormat::Binary,
            cause,
            aspect,
            yes_text,
            "Yes".into(),
            self.index,
        ));
        self.questions.push(base_question(
            format!("{group}-no"),
            &group,
            VariantTag::NoCorrect,
            QFormat::Binary,
            cause,
            aspect,
            no_text,
            "No".into(),
            self.index,
        ));
    }

    /// One option-rotation triple; `bits` are planned outcomes for the
    /// variants whose correct option is A, B, C respectively.
    fn mc_triple(&mut self, n: usize, cause: Cause, aspect: Aspect, bits: (bool, bool, bool)) {
        let topic = self.topic();
        self.index += 1;
        let group = format!("m{n:02}");
        let options = [
            topic.to_string(),
            "an empty room with static furniture".to_string(),
            "a timelapse of moving clouds".to_string(),
        ];
        for (v, (&tag, bit)) in [VariantTag::A, VariantTag::B, VariantTag::C]
            .iter()
            .zip([bits.0, bits.1, bits.2])
            .enumerate()
        {
            let letter = tag.option_letter().unwrap();
            // Rotate so the true topic sits at the variant's letter.
            let mut lines = Vec::new();
            let mut gold = String::new();
            for (slot, l) in ['A', 'B', 'C'].iter().enumerate() {
                let content = &options[(slot + 3 - v) % 3];
                lines.push(format!("{l}. {content}"));
                if *l == letter {
                    gold = format!("{l}. {content}");
                }
            }
            let text = format!(
                "What is the main content of the video?\n{}",
                lines.join("\n")
            );
            let wrong = lines
                .iter()
                .find(|line| !line.starts_with(letter))
                .unwrap()
                .clone();
            let reply = if bit { gold.clone() } else { wrong };
            self.add_reply(&text, &reply);
            self.questions.push(base_question(
                format!("{group}-{}", letter.to_ascii_lowercase()),
                &group,
                tag,
                QFormat::MultipleChoice,
                cause,
                aspect,
                text,
                gold,
                self.index,
            ));
        }
    }

    /// One short-answer question with a planned outcome.
    fn short_answer(&mut self, n: usize, cause: Cause, aspect: Aspect, bit: bool) {
        let topic = self.topic();
        self.index += 1;
        let group = format!("s{n:02}");
        let text = format!("Describe what happens in the video (clip {n}).");
        let gold = format!("The video shows {topic}.");
        let reply = if bit {
            gold.clone()
        } else {
            "The clip shows something entirely different.".to_string()
        };
        self.add_reply(&text, &reply);
        self.questions.push(base_question(
            format!("{group}-sole"),
            &group,
            VariantTag::Sole,
            QFormat::ShortAnswer,
            cause,
            aspect,
            text,
            gold,
            self.index,
        ));
    }
}

/// The 60-question scripted scenario. See [`scenario60_expected`] for the
/// numbers it was designed to produce.
pub fn scenario60() -> MockWorld {
    use Aspect::{Event, Object, Scene};
    use Cause::{CapabilityDeficiency as C, InContextConflict as I, PriorConflict as P};

    let mut b = ScenarioBuilder::new();

    // Binary pairs p1..p15 with planned (yes-variant, no-variant) verdicts.
    b.binary_pair(1, P, Object, (true, true));
    b.binary_pair(2, P, Object, (true, false));
    b.binary_pair(3, P, Object, (false, false));
    b.binary_pair(4, P, Object, (true, true));
    b.binary_pair(5, P, Object, (false, true));
    b.binary_pair(6, P, Scene, (true, true));
    b.binary_pair(7, P, Event, (true, false));
    b.binary_pair(8, P, Event, (false, false));
    b.binary_pair(9, I, Scene, (false, false));
    b.binary_pair(10, I, Event, (false, true));
    b.binary_pair(11, P, Event, (true, true));
    b.binary_pair(12, C, Object, (true, false));
    b.binary_pair(13, C, Object, (true, true));
    b.binary_pair(14, I, Event, (false, false));
    b.binary_pair(15, C, Scene, (true, false));

    // Option-rotation triples t1..t4.
    b.mc_triple(1, P, Object, (true, true, true));
    b.mc_triple(2, P, Event, (true, true, false));
    b.mc_triple(3, I, Object, (false, false, false));
    b.mc_triple(4, C, Event, (true, false, false));

    // Short answers.
    b.short_answer(1, P, Object, true);
    b.short_answer(2, P, Object, false);
    b.short_answer(3, P, Object, true);
    b.short_answer(4, P, Scene, true);
    b.short_answer(5, P, Scene, true);
    b.short_answer(6, P, Event, true);
    b.short_answer(7, P, Event, true);
    b.short_answer(8, I, Object, false);
    b.short_answer(9, I, Object, true);
    b.short_answer(10, I, Scene, false);
    b.short_answer(11, I, Scene, false);
    b.short_answer(12, I, Event, true);
    b.short_answer(13, I, Event, false);
    b.short_answer(14, C, Object, true);
    b.short_answer(15, C, Object, false);
    b.short_answer(16, C, Scene, false);
    b.short_answer(17, C, Event, true);
    b.short_answer(18, C, Event, false);

    MockWorld {
        questions: b.questions,
        model_script: b.script,
    }
}

/// A deterministic judge endpoint: it recognizes which of the five prompt
/// templates a request was rendered from, parses the embedded fields, and
/// grades or extracts accordingly. Replies are always well-formed, so
/// strict parsing never needs the re-ask path.
pub struct SemanticJudgeTransport;

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = text[s..].find(end)? + s;
    Some(&text[s..e])
}

fn after<'a>(text: &'a str, start: &str) -> Option<&'a str> {
    let s = text.rfind(start)? + start.len();
    Some(&text[s..])
}

fn norm(s: &str) -> String {
    s.trim().trim_end_matches('.').trim().to_ascii_lowercase()
}

impl SemanticJudgeTransport {
    fn respond(&self, prompt: &str) -> Result<String, TransportFault> {
        // Route by phrases unique to each template body.
        let mc_extract_id = "Foucs more on the final summary sentence.";
        let bc_extract_id = "Return only the final \"yes\" or \"no\"";
        let bc_judge_id = "This is a yes/no question.";
        let mc_judge_id = "based on the selected letter";
        let sa_judge_id = "The Standard Answer is a sentence.";
        debug_assert!(template(TemplateId::McExtract).body.contains(mc_extract_id));
        debug_assert!(template(TemplateId::BcExtract).body.contains(bc_extract_id));
        debug_assert!(template(TemplateId::BcJudge).body.contains(bc_judge_id));
        debug_assert!(template(TemplateId::McJudge).body.contains(mc_judge_id));
        debug_assert!(template(TemplateId::SaJudge).body.contains(sa_judge_id));

        if prompt.contains(mc_extract_id) || prompt.contains(bc_extract_id) {
            let reasoning = between(prompt, "\nReasoning Process: ", "\nInstructions:")
                .ok_or_else(|| malformed("no reasoning section"))?;
            let answer = match after(reasoning, FINAL_MARKER) {
                Some(tail) => tail.trim().to_string(),
                None => "no answer".to_string(),
            };
            return Ok(answer);
        }

        let standard = between(prompt, "\nStandard Answer: ", "\nThe Predicted Answer: ")
            .ok_or_else(|| malformed("no standard answer"))?;
        let predicted =
            after(prompt, "\nThe Predicted Answer: ").ok_or_else(|| malformed("no prediction"))?;

        let correct = if prompt.contains(bc_judge_id) {
            norm(standard) == norm(predicted)
        } else if prompt.contains(mc_judge_id) {
            let letter = |s: &str| s.trim().chars().next().map(|c| c.to_ascii_uppercase());
            if norm(standard) == "no answer" || norm(predicted) == "no answer" {
                norm(standard) == norm(predicted)
            } else {
                letter(standard).is_some() && letter(standard) == letter(predicted)
            }
        } else if prompt.contains(sa_judge_id) {
            norm(predicted).contains(&norm(standard))
        } else {
            return Err(malformed("unrecognized template"));
        };
        Ok(if correct { "1" } else { "0" }.to_string())
    }
}

fn malformed(message: &str) -> TransportFault {
    TransportFault::Malformed(message.to_string())
}

impl Transport for SemanticJudgeTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFault> {
        let prompt = request
            .last_text()
            .ok_or_else(|| malformed("no text content"))?;
        self.respond(prompt)
    }
}

/// Generates a corpus whose cause × aspect composition matches the
/// benchmark's published count table cell for cell (grand total 6497).
/// Groups are well-formed variant groups; durations, frame counts and
/// question lengths vary deterministically.
pub fn published_replica() -> Vec<Question> {
    use crate::dataset::published;

    let mut questions = Vec::new();
    let mut serial = 0usize;
    for &cause in &Cause::ALL {
        for &aspect in &Aspect::ALL {
            let count = published::cell(cause, aspect) as usize;
            // A few option triples for texture, then yes/no pairs, with a
            // short-answer filler for parity.
            let triples = (count / 10).min(40);
            let mut remaining = count - 3 * triples;
            let singles = remaining % 2;
            remaining -= singles;
            let pairs = remaining / 2;

            for t in 0..triples {
                serial += 1;
                let group = format!("r{serial:05}");
                let topic = TOPICS[serial % TOPICS.len()];
                for &tag in &[VariantTag::A, VariantTag::B, VariantTag::C] {
                    let letter = tag.option_letter().unwrap();
                    questions.push(base_question(
                        format!("{group}-{}", letter.to_ascii_lowercase()),
                        &group,
                        tag,
                        QFormat::MultipleChoice,
                        cause,
                        aspect,
                        format!(
                            "Which option best describes the clip (set {t})?\nA. {topic}\nB. a blank screen\nC. an unrelated photograph"
                        ),
                        format!(
                            "{letter}. {}",
                            match letter {
                                'A' => topic.to_string(),
                                'B' => "a blank screen".to_string(),
                                _ => "an unrelated photograph".to_string(),
                            }
                        ),
                        serial,
                    ));
                }
            }
            for _ in 0..pairs {
                serial += 1;
                let group = format!("r{serial:05}");
                let topic = TOPICS[serial % TOPICS.len()];
                questions.push(base_question(
                    format!("{group}-yes"),
                    &group,
                    VariantTag::YesCorrect,
                    QFormat::Binary,
                    cause,
                    aspect,
                    format!("Does the clip contain {topic}?"),
                    "Yes".into(),
                    serial,
                ));
                questions.push(base_question(
                    format!("{group}-no"),
                    &group,
                    VariantTag::NoCorrect,
                    QFormat::Binary,
                    cause,
                    aspect,
                    format!("Does the clip omit {topic} throughout?"),
                    "No".into(),
                    serial,
                ));
            }
            for _ in 0..singles {
                serial += 1;
                let group = format!("r{serial:05}");
                let topic = TOPICS[serial % TOPICS.len()];
                questions.push(base_question(
                    format!("{group}-sole"),
                    &group,
                    VariantTag::Sole,
                    QFormat::ShortAnswer,
                    cause,
                    aspect,
                    format!("Summarize the clip labelled {group}."),
                    format!("The video shows {topic}."),
                    serial,
                ));
            }
        }
    }
    questions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_stats, published, validate_groups};
    use crate::judge::render_prompt;

    #[test]
    fn scenario_has_sixty_well_formed_questions() {
        let world = scenario60();
        assert_eq!(world.questions.len(), 60);
        for q in &world.questions {
            q.check_shape().unwrap();
        }
        let groups = validate_groups(&world.questions).unwrap();
        assert_eq!(groups.len(), 15 + 4 + 18);
        // Every question is scripted in both prompt modes.
        assert_eq!(world.model_script.len(), 120);
        for q in &world.questions {
            assert!(world.model_script.contains_key(&q.text), "{}", q.id);
        }
    }

    #[test]
    fn scenario_cells_match_the_design() {
        let world = scenario60();
        let stats = compute_stats(&world.questions).unwrap();
        for &(cause, aspect, n, _) in &scenario60_expected::CELLS {
            let c = Cause::ALL.iter().copied().find(|c| c.as_str() == cause).unwrap();
            let a = Aspect::ALL.iter().copied().find(|a| a.as_str() == aspect).unwrap();
            assert_eq!(stats.cell(c, a), n, "{cause}/{aspect}");
        }
        assert_eq!(stats.total, scenario60_expected::TOTAL_N);
        assert_eq!(stats.format_shares[&QFormat::Binary], 0.5);
        assert_eq!(stats.format_shares[&QFormat::MultipleChoice], 0.2);
        assert_eq!(stats.format_shares[&QFormat::ShortAnswer], 0.3);
    }

    #[test]
    fn semantic_judge_grades_each_format() {
        let judge = SemanticJudgeTransport;
        // Binary.
        let p = render_prompt(TemplateId::BcJudge, "Q?", Some("Yes"), "yes").unwrap();
        assert_eq!(judge.respond(&p).unwrap(), "1");
        let p = render_prompt(TemplateId::BcJudge, "Q?", Some("No"), "yes").unwrap();
        assert_eq!(judge.respond(&p).unwrap(), "0");
        // Multiple choice: letter decides.
        let p = render_prompt(TemplateId::McJudge, "Q?", Some("B. a cat"), "B. a cat").unwrap();
        assert_eq!(judge.respond(&p).unwrap(), "1");
        let p = render_prompt(TemplateId::McJudge, "Q?", Some("B. a cat"), "A. a dog").unwrap();
        assert_eq!(judge.respond(&p).unwrap(), "0");
        // Short answer: containment of the gold meaning string.
        let p = render_prompt(
            TemplateId::SaJudge,
            "Q?",
            Some("The video shows a chef flipping a pancake."),
            "Step by step... FINAL: The video shows a chef flipping a pancake.",
        )
        .unwrap();
        assert_eq!(judge.respond(&p).unwrap(), "1");
    }

    #[test]
    fn semantic_judge_extracts_the_final_marker() {
        let judge = SemanticJudgeTransport;
        let p = render_prompt(
            TemplateId::BcExtract,
            "Q?",
            None,
            "Thinking it through. FINAL: Yes",
        )
        .unwrap();
        assert_eq!(judge.respond(&p).unwrap(), "Yes");
        let p = render_prompt(TemplateId::McExtract, "Q?", None, "Hmm. FINAL: B. a cat").unwrap();
        assert_eq!(judge.respond(&p).unwrap(), "B. a cat");
        // Without the marker the reply reports no answer.
        let p = render_prompt(TemplateId::McExtract, "Q?", None, "rambling only").unwrap();
        assert_eq!(judge.respond(&p).unwrap(), "no answer");
    }

    #[test]
    fn replica_reproduces_the_published_grid_exactly() {
        let questions = published_replica();
        for q in &questions {
            q.check_shape().unwrap();
        }
        validate_groups(&questions).unwrap();
        let stats = compute_stats(&questions).unwrap();
        for &cause in &Cause::ALL {
            for &aspect in &Aspect::ALL {
                assert_eq!(
                    stats.cell(cause, aspect),
                    published::cell(cause, aspect),
                    "{cause:?}/{aspect:?}"
                );
            }
        }
        assert_eq!(stats.total, published::TOTAL);
        assert_eq!(stats.column_sum(Aspect::Object), 3363);
        assert_eq!(stats.column_sum(Aspect::Scene), 889);
        assert_eq!(stats.column_sum(Aspect::Event), 2245);
    }
}
