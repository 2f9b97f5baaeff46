//! LLM-as-judge pipeline: prompt templates, verdict parsing, answer
//! extraction for chain-of-thought replies, and the judging client.
//!
//! The five prompt bodies are shipped verbatim as fixture files under
//! `templates/` and embedded at compile time. Their placeholder names are
//! normalized relative to the published prompt sheets — `{question[idx]}`,
//! `{answer[idx]}`, `{res[idx]}`/`{extract_answer}` become `{question}`,
//! `{answer}`, `{prediction}` — with every other byte kept intact,
//! including the original typos. Rendering is pure substitution: no
//! trimming, no re-wrapping, and values are never re-scanned for
//! placeholders.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{QFormat, Question};
use crate::error::{Error, Result};
use crate::model_client::{ChatRequest, PromptMode, QueryRunner};

/// The five prompt templates of the judging protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    /// Grades a multiple-choice prediction against the gold option.
    McJudge,
    /// Grades a yes/no prediction against the gold answer.
    BcJudge,
    /// Grades a free-form short answer by meaning.
    SaJudge,
    /// Extracts the chosen option from a multiple-choice reasoning trace.
    McExtract,
    /// Extracts yes/no from a yes/no reasoning trace.
    BcExtract,
}

/// A template body plus its identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: &'static str,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::McJudge,
        TemplateId::BcJudge,
        TemplateId::SaJudge,
        TemplateId::McExtract,
        TemplateId::BcExtract,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::McJudge => "mc_judge",
            TemplateId::BcJudge => "bc_judge",
            TemplateId::SaJudge => "sa_judge",
            TemplateId::McExtract => "mc_extract",
            TemplateId::BcExtract => "bc_extract",
        }
    }
}

/// Returns the verbatim template for an id.
pub fn template(id: TemplateId) -> PromptTemplate {
    let body = match id {
        TemplateId::McJudge => include_str!("../templates/mc_judge.txt"),
        TemplateId::BcJudge => include_str!("../templates/bc_judge.txt"),
        TemplateId::SaJudge => include_str!("../templates/sa_judge.txt"),
        TemplateId::McExtract => include_str!("../templates/mc_extract.txt"),
        TemplateId::BcExtract => include_str!("../templates/bc_extract.txt"),
    };
    PromptTemplate { id, body }
}

/// Judge template for a question format.
pub fn judge_template_for(format: QFormat) -> TemplateId {
    match format {
        QFormat::Binary => TemplateId::BcJudge,
        QFormat::MultipleChoice => TemplateId::McJudge,
        QFormat::ShortAnswer => TemplateId::SaJudge,
    }
}

/// Extraction template for a question format; short answers are judged in a
/// single step even under chain-of-thought, so they have none.
pub fn extract_template_for(format: QFormat) -> Option<TemplateId> {
    match format {
        QFormat::Binary => Some(TemplateId::BcExtract),
        QFormat::MultipleChoice => Some(TemplateId::McExtract),
        QFormat::ShortAnswer => None,
    }
}

const PLACEHOLDERS: [&str; 3] = ["{question}", "{answer}", "{prediction}"];

/// Fills `{question}`, `{answer}` and `{prediction}` in one left-to-right
/// pass. A placeholder present in the body with no value supplied is a
/// template error; substituted values are inserted verbatim and never
/// re-scanned, so braces inside predictions cannot inject anything.
pub fn render_prompt(
    id: TemplateId,
    question: &str,
    answer: Option<&str>,
    prediction: &str,
) -> Result<String> {
    let body = template(id).body;
    let mut out = String::with_capacity(body.len() + question.len() + prediction.len());
    let mut rest = body;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let mut matched = false;
        for ph in PLACEHOLDERS {
            if let Some(after) = tail.strip_prefix(ph) {
                let value = match ph {
                    "{question}" => Some(question),
                    "{prediction}" => Some(prediction),
                    _ => answer,
                };
                match value {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(Error::Template {
                            template: id.as_str(),
                            placeholder: "answer",
                        })
                    }
                }
                rest = after;
                matched = true;
                break;
            }
        }
        if !matched {
            // A literal brace that opens no known placeholder.
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Parses a judge reply into a correctness bit: the reply must be exactly
/// "1" or "0" after trimming ASCII whitespace. Anything else — including
/// "1." or "The answer is 1" — is a verdict format error.
pub fn parse_verdict(reply: &str) -> Result<bool> {
    match reply.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        _ => Err(Error::VerdictFormat(reply.to_string())),
    }
}

/// Normalizes a yes/no extraction reply to one of `yes`, `no`, `no answer`
/// (lowercased, trimmed, optional trailing period dropped). Any other shape
/// is an extraction format error.
pub fn normalize_binary_extraction(reply: &str) -> Result<String> {
    let lowered = reply.trim().to_ascii_lowercase();
    let cleaned = lowered.trim_end_matches('.').trim();
    let cleaned = cleaned.trim_matches('"');
    match cleaned {
        "yes" | "no" | "no answer" => Ok(cleaned.to_string()),
        _ => Err(Error::ExtractionFormat(reply.to_string())),
    }
}

/// Validates a multiple-choice extraction reply: either `no answer`
/// (case-insensitive) or `<letter>. <option text>` with letter in A/B/C.
/// Returned verbatim apart from surrounding whitespace.
pub fn validate_mc_extraction(reply: &str) -> Result<String> {
    let trimmed = reply.trim();
    if trimmed.eq_ignore_ascii_case("no answer") || trimmed.eq_ignore_ascii_case("\"no answer\"") {
        return Ok("no answer".to_string());
    }
    let mut chars = trimmed.chars();
    let letter_ok = matches!(chars.next(), Some('A' | 'B' | 'C'));
    let dot_ok = chars.next() == Some('.');
    let space_ok = chars.next() == Some(' ');
    let body_nonempty = chars.next().is_some();
    if letter_ok && dot_ok && space_ok && body_nonempty {
        Ok(trimmed.to_string())
    } else {
        Err(Error::ExtractionFormat(reply.to_string()))
    }
}

/// Appended to a prompt when the first judge reply failed verdict parsing.
pub const STRICT_VERDICT_RETRY: &str = "\nRespond with exactly one character: 1 or 0.";

/// Appended to an extraction prompt when the first reply matched no
/// accepted shape.
pub const STRICT_EXTRACT_RETRY: &str = "\nReturn only the answer in the required format, with no extra words.";

/// The judged outcome for one question.
///
/// Serialized JSONL fields are part of the on-disk contract: `question_id,
/// correct, extracted_answer, judge_model, raw_judge_output`. Unjudgeable
/// items are stored with `correct = false` and a `raw_judge_output` that
/// does not parse as a verdict (the malformed reply, or the empty string
/// when extraction already failed); [`Verdict::unjudgeable`] recovers the
/// flag from exactly that property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub question_id: String,
    pub correct: bool,
    /// Extraction result; present iff the chain-of-thought extraction path
    /// ran (multiple-choice and yes/no questions under CoT).
    pub extracted_answer: Option<String>,
    pub judge_model: String,
    pub raw_judge_output: String,
}

impl Verdict {
    /// True when no usable verdict was obtained. Such items count as
    /// incorrect for accuracy and exclude their group from bias.
    pub fn unjudgeable(&self) -> bool {
        parse_verdict(&self.raw_judge_output).is_err()
    }
}

/// Reads a verdict JSONL file; duplicate question ids are an integrity
/// error.
pub fn load_verdicts(path: impl AsRef<Path>) -> Result<Vec<Verdict>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Verdict = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if let Some(first) = seen.insert(v.question_id.clone(), idx + 1) {
            return Err(Error::Integrity(format!(
                "duplicate verdict for question {:?} (lines {} and {})",
                v.question_id,
                first,
                idx + 1
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// Writes verdicts as JSONL in the given order.
pub fn write_verdicts(path: impl AsRef<Path>, verdicts: &[Verdict]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in verdicts {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Judging client: renders prompts, queries the judge endpoint at
/// temperature 0 through the shared cached runner, and enforces the strict
/// parse/re-ask discipline.
pub struct JudgeClient {
    runner: Arc<QueryRunner>,
    judge_model: String,
}

impl JudgeClient {
    pub fn new(runner: Arc<QueryRunner>, judge_model: impl Into<String>) -> Self {
        JudgeClient {
            runner,
            judge_model: judge_model.into(),
        }
    }

    pub fn judge_model(&self) -> &str {
        &self.judge_model
    }

    fn ask(&self, question_id: &str, prompt: &str) -> Result<String> {
        let request = ChatRequest::text_only(&self.judge_model, prompt);
        let digest = prompt_digest(prompt);
        let outcome = self
            .runner
            .cached_query(&self.judge_model, question_id, &digest, &request)?;
        Ok(outcome.record.response_text)
    }

    /// Runs the extraction stage on a chain-of-thought reply. Transport
    /// failures propagate; a reply that matches no accepted shape is
    /// re-asked once strictly, then reported as an extraction format error.
    pub fn extract_answer(&self, question: &Question, reasoning: &str) -> Result<String> {
        let template_id = extract_template_for(question.format).ok_or_else(|| {
            Error::Argument(format!(
                "question {}: short-answer questions have no extraction stage",
                question.id
            ))
        })?;
        let prompt = render_prompt(template_id, &question.text, None, reasoning)?;
        let first = self.ask(&question.id, &prompt)?;
        match self.normalize_extraction(question.format, &first) {
            Ok(ans) => Ok(ans),
            Err(_) => {
                let strict = format!("{prompt}{STRICT_EXTRACT_RETRY}");
                let second = self.ask(&question.id, &strict)?;
                self.normalize_extraction(question.format, &second)
            }
        }
    }

    fn normalize_extraction(&self, format: QFormat, reply: &str) -> Result<String> {
        match format {
            QFormat::Binary => normalize_binary_extraction(reply),
            QFormat::MultipleChoice => validate_mc_extraction(reply),
            QFormat::ShortAnswer => Err(Error::Argument(
                "short-answer replies are never extracted".into(),
            )),
        }
    }

    /// Judges one model reply end to end.
    ///
    /// Under CoT, multiple-choice and yes/no replies go through extraction
    /// first and the extracted answer becomes the judged prediction; short
    /// answers are judged in one step in both modes. A verdict that fails
    /// strict parsing is re-asked once; if it still fails — or extraction
    /// found no usable answer — the item is returned unjudgeable (counted
    /// incorrect) rather than failing the run.
    pub fn judge_answer(
        &self,
        question: &Question,
        response_text: &str,
        prompt_mode: PromptMode,
    ) -> Result<Verdict> {
        let mut extracted_answer = None;
        let prediction: String = if prompt_mode == PromptMode::Cot && question.format != QFormat::ShortAnswer {
            match self.extract_answer(question, response_text) {
                Ok(ans) => {
                    extracted_answer = Some(ans.clone());
                    ans
                }
                Err(Error::ExtractionFormat(_)) => {
                    // No usable answer in the reasoning: unjudgeable.
                    return Ok(Verdict {
                        question_id: question.id.clone(),
                        correct: false,
                        extracted_answer: None,
                        judge_model: self.judge_model.clone(),
                        raw_judge_output: String::new(),
                    });
                }
                Err(other) => return Err(other),
            }
        } else {
            response_text.to_string()
        };

        let template_id = judge_template_for(question.format);
        let prompt = render_prompt(template_id, &question.text, Some(&question.gold_answer), &prediction)?;
        let first = self.ask(&question.id, &prompt)?;
        let (correct, raw) = match parse_verdict(&first) {
            Ok(bit) => (bit, first),
            Err(_) => {
                let strict = format!("{prompt}{STRICT_VERDICT_RETRY}");
                let second = self.ask(&question.id, &strict)?;
                match parse_verdict(&second) {
                    Ok(bit) => (bit, second),
                    Err(_) => (false, second),
                }
            }
        };

        Ok(Verdict {
            question_id: question.id.clone(),
            correct,
            extracted_answer,
            judge_model: self.judge_model.clone(),
            raw_judge_output: raw,
        })
    }
}

fn prompt_digest(prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Aspect, Cause, VariantTag};
    use crate::model_client::{Limiter, NoSleep, ResponseCache, ScriptedTransport, Transport, TransportFault};

    fn question(format: QFormat) -> Question {
        let (tag, gold) = match format {
            QFormat::Binary => (VariantTag::YesCorrect, "Yes"),
            QFormat::MultipleChoice => (VariantTag::B, "B. a blue car"),
            QFormat::ShortAnswer => (VariantTag::Sole, "A man rides a horse."),
        };
        Question {
            id: "q1".into(),
            group_id: "g1".into(),
            variant_tag: tag,
            video_ref: "videos/g1.mp4".into(),
            cause: Cause::PriorConflict,
            aspect: Aspect::Object,
            format,
            text: "What is happening?".into(),
            gold_answer: gold.into(),
            duration_s: 8.0,
            frame_count: 192,
        }
    }

    fn client_with(outcomes: Vec<std::result::Result<String, TransportFault>>) -> (JudgeClient, Arc<ScriptedTransport>, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let transport = Arc::new(ScriptedTransport::new(outcomes));
        let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
        let runner = Arc::new(
            crate::model_client::QueryRunner::new(transport.clone() as Arc<dyn Transport>, cache, Limiter::new(2), 1)
                .with_sleeper(Arc::new(NoSleep)),
        );
        (JudgeClient::new(runner, "judge-model"), transport, dir)
    }

    #[test]
    fn every_template_embeds_with_its_placeholders() {
        for id in TemplateId::ALL {
            let t = template(id);
            assert!(t.body.contains("{question}"), "{id:?}");
            assert!(t.body.contains("{prediction}"), "{id:?}");
            let has_answer = t.body.contains("{answer}");
            match id {
                TemplateId::McJudge | TemplateId::BcJudge | TemplateId::SaJudge => {
                    assert!(has_answer, "{id:?} must compare against the gold answer")
                }
                _ => assert!(!has_answer, "{id:?} extraction sees no gold answer"),
            }
            // Each placeholder appears exactly once per template.
            for ph in ["{question}", "{answer}", "{prediction}"] {
                assert!(t.body.matches(ph).count() <= 1, "{id:?} repeats {ph}");
            }
        }
    }

    #[test]
    fn judge_prompts_end_with_the_prediction() {
        for id in [TemplateId::McJudge, TemplateId::BcJudge, TemplateId::SaJudge] {
            let rendered = render_prompt(id, "Q?", Some("Gold"), "the prediction").unwrap();
            assert!(rendered.ends_with("The Predicted Answer: the prediction"), "{id:?}");
            assert!(rendered.contains("Question: Q?"));
            assert!(rendered.contains("Standard Answer: Gold"));
        }
    }

    #[test]
    fn rendering_without_answer_errors_on_judge_templates_only() {
        assert!(matches!(
            render_prompt(TemplateId::BcJudge, "Q?", None, "p"),
            Err(Error::Template { .. })
        ));
        // Extraction templates carry no {answer}; rendering succeeds.
        render_prompt(TemplateId::McExtract, "Q?", None, "reasoning").unwrap();
    }

    #[test]
    fn rendering_is_verbatim_in_the_prediction_slot() {
        let tricky = "contains {answer} and {question} braces";
        let rendered = render_prompt(TemplateId::SaJudge, "Q?", Some("Gold"), tricky).unwrap();
        assert!(rendered.ends_with(tricky), "values must never be re-scanned");
    }

    #[test]
    fn verdict_parsing_is_strict() {
        assert!(parse_verdict("1").unwrap());
        assert!(!parse_verdict("0").unwrap());
        assert!(!parse_verdict(" 0\n").unwrap());
        assert!(parse_verdict("\t1 ").unwrap());
        for bad in ["1.", "01", "yes", "", "The answer is 1", "0 or 1"] {
            assert!(parse_verdict(bad).is_err(), "{bad:?} must not parse");
        }
    }

    #[test]
    fn binary_extraction_normalizes() {
        assert_eq!(normalize_binary_extraction(" Yes.").unwrap(), "yes");
        assert_eq!(normalize_binary_extraction("NO").unwrap(), "no");
        assert_eq!(normalize_binary_extraction("No Answer").unwrap(), "no answer");
        assert!(normalize_binary_extraction("maybe").is_err());
    }

    #[test]
    fn mc_extraction_requires_letter_dot_text() {
        assert_eq!(validate_mc_extraction("B. a blue car").unwrap(), "B. a blue car");
        assert_eq!(validate_mc_extraction("  no answer ").unwrap(), "no answer");
        for bad in ["D. nope", "B.", "B the car", "b. lowercase letter", ""] {
            assert!(validate_mc_extraction(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn direct_short_answer_takes_exactly_one_judge_call() {
        let (client, transport, _dir) = client_with(vec![Ok("1".into())]);
        let v = client
            .judge_answer(&question(QFormat::ShortAnswer), "A man rides a horse.", PromptMode::Direct)
            .unwrap();
        assert!(v.correct);
        assert!(!v.unjudgeable());
        assert_eq!(v.extracted_answer, None);
        assert_eq!(v.raw_judge_output, "1");
        assert_eq!(transport.calls(), 1);
    }

    #[test]
    fn cot_short_answer_skips_extraction() {
        let (client, transport, _dir) = client_with(vec![Ok("0".into())]);
        let v = client
            .judge_answer(&question(QFormat::ShortAnswer), "Thinking... the answer is a horse.", PromptMode::Cot)
            .unwrap();
        assert!(!v.correct);
        assert_eq!(v.extracted_answer, None);
        assert_eq!(transport.calls(), 1, "short answers are judged single-step under CoT");
    }

    #[test]
    fn cot_binary_runs_extraction_then_judging() {
        let (client, transport, _dir) = client_with(vec![Ok("Yes.".into()), Ok("1".into())]);
        let v = client
            .judge_answer(&question(QFormat::Binary), "Step by step... thus yes.", PromptMode::Cot)
            .unwrap();
        assert!(v.correct);
        assert_eq!(v.extracted_answer.as_deref(), Some("yes"));
        assert_eq!(transport.calls(), 2);
    }

    #[test]
    fn malformed_verdict_gets_one_strict_reask() {
        let (client, transport, _dir) = client_with(vec![Ok("The answer is 1".into()), Ok("1".into())]);
        let v = client
            .judge_answer(&question(QFormat::ShortAnswer), "prediction", PromptMode::Direct)
            .unwrap();
        assert!(v.correct);
        assert!(!v.unjudgeable());
        assert_eq!(transport.calls(), 2);
    }

    #[test]
    fn twice_malformed_verdict_is_unjudgeable_and_incorrect() {
        let (client, transport, _dir) = client_with(vec![Ok("It is right".into()), Ok("Definitely 1".into())]);
        let v = client
            .judge_answer(&question(QFormat::ShortAnswer), "prediction", PromptMode::Direct)
            .unwrap();
        assert!(!v.correct);
        assert!(v.unjudgeable());
        assert_eq!(v.raw_judge_output, "Definitely 1");
        assert_eq!(transport.calls(), 2);
    }

    #[test]
    fn failed_extraction_is_unjudgeable_without_judge_call() {
        let (client, transport, _dir) = client_with(vec![
            Ok("I cannot tell".into()),
            Ok("Still cannot tell".into()),
        ]);
        let v = client
            .judge_answer(&question(QFormat::MultipleChoice), "rambling...", PromptMode::Cot)
            .unwrap();
        assert!(!v.correct);
        assert!(v.unjudgeable());
        assert_eq!(v.extracted_answer, None);
        assert_eq!(transport.calls(), 2, "extraction + strict re-ask, no judge call");
    }

    #[test]
    fn judge_transport_failure_propagates_as_error() {
        let (client, _transport, _dir) = client_with(vec![Err(TransportFault::Http {
            status: 401,
            body: "no".into(),
        })]);
        let err = client
            .judge_answer(&question(QFormat::ShortAnswer), "prediction", PromptMode::Direct)
            .unwrap_err();
        assert!(matches!(err, Error::Permanent { .. }));
    }

    #[test]
    fn judging_twice_is_deterministic_via_the_cache() {
        let (client, transport, _dir) = client_with(vec![Ok("1".into())]);
        let q = question(QFormat::ShortAnswer);
        let first = client.judge_answer(&q, "prediction", PromptMode::Direct).unwrap();
        let second = client.judge_answer(&q, "prediction", PromptMode::Direct).unwrap();
        assert_eq!(first, second);
        assert_eq!(transport.calls(), 1, "second pass is served from cache");
    }

    #[test]
    fn verdict_jsonl_round_trips_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.jsonl");
        let verdicts = vec![
            Verdict {
                question_id: "q1".into(),
                correct: true,
                extracted_answer: None,
                judge_model: "judge".into(),
                raw_judge_output: "1".into(),
            },
            Verdict {
                question_id: "q2".into(),
                correct: false,
                extracted_answer: Some("no".into()),
                judge_model: "judge".into(),
                raw_judge_output: "0".into(),
            },
        ];
        write_verdicts(&path, &verdicts).unwrap();
        let back = load_verdicts(&path).unwrap();
        assert_eq!(back, verdicts);

        let mut dup = verdicts.clone();
        dup.push(verdicts[0].clone());
        write_verdicts(&path, &dup).unwrap();
        assert!(matches!(load_verdicts(&path), Err(Error::Integrity(_))));
    }
}
