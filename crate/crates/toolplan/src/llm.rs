//! Chat-endpoint client, the two judge protocols (plan quality and MCQ
//! retention), and the retention benchmark harness.
//!
//! The endpoint contract is the ubiquitous chat-completion shape: POST of
//! `{model, messages, temperature, max_tokens}` returning assistant text.
//! Configure it with `JUDGE_BASE_URL`, `JUDGE_API_KEY`, and `JUDGE_MODEL`.
//! Deterministic offline stubs ship for tests and the `--offline` CLI mode.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::catalog::{serialize_catalog, ToolCatalog};
use crate::plan::{render_plan, Plan};

pub const PLAN_JUDGE_TEMPLATE: &str = include_str!("../assets/judge_plan_prompt.txt");
pub const MCQ_JUDGE_TEMPLATE: &str = include_str!("../assets/judge_mcq_prompt.txt");

/// Bounded request concurrency used when judging many plans.
pub const DEFAULT_JUDGE_CONCURRENCY: usize = 4;

const MAX_ATTEMPTS: u32 = 3;
const INITIAL_BACKOFF: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("endpoint error after {attempts} attempts: {message}")]
    EndpointError { attempts: u32, message: String },
    #[error("malformed verdict: {0}")]
    MalformedVerdict(String),
    #[error("judge score {value} for '{dimension}' is outside 1..=5")]
    OutOfRangeScore { dimension: &'static str, value: i64 },
    #[error("missing response for item {0}")]
    MissingResponse(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ChatRequest {
    pub fn user(model: &str, content: String, max_tokens: usize) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage { role: "user".into(), content }],
            temperature: 0.0,
            max_tokens,
        }
    }
}

/// Anything that can answer a chat request with assistant text.
pub trait ChatClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

/// HTTP client for a chat-completions endpoint, configured via environment.
pub struct HttpChatClient {
    base_url: String,
    api_key: Option<String>,
    pub model: String,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(base_url: String, api_key: Option<String>, model: String) -> Self {
        HttpChatClient {
            base_url,
            api_key,
            model,
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Read `JUDGE_BASE_URL`, `JUDGE_API_KEY`, `JUDGE_MODEL`.
    pub fn from_env() -> Result<Self, LlmError> {
        let base_url = std::env::var("JUDGE_BASE_URL").map_err(|_| LlmError::EndpointError {
            attempts: 0,
            message: "JUDGE_BASE_URL is not set".into(),
        })?;
        let model = std::env::var("JUDGE_MODEL").map_err(|_| LlmError::EndpointError {
            attempts: 0,
            message: "JUDGE_MODEL is not set".into(),
        })?;
        Ok(Self::new(base_url, std::env::var("JUDGE_API_KEY").ok(), model))
    }

    fn send_once(&self, request: &ChatRequest) -> Result<String, String> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut builder = self.client.post(&url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| e.to_string())?;
        if !response.status().is_success() {
            return Err(format!("HTTP {}", response.status()));
        }
        let body: Value = response.json().map_err(|e| e.to_string())?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response carries no assistant text".to_string())
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut backoff = INITIAL_BACKOFF;
        let mut last_error = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match self.send_once(request) {
                Ok(text) => return Ok(text),
                Err(message) => {
                    last_error = message;
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(LlmError::EndpointError { attempts: MAX_ATTEMPTS, message: last_error })
    }
}

/// Deterministic stub: answers from a scripted queue, falling back to a
/// function of the request.
pub struct StubChatClient {
    queue: Mutex<Vec<String>>,
    fallback: Box<dyn Fn(&ChatRequest) -> String + Send + Sync>,
}

impl StubChatClient {
    pub fn scripted(responses: Vec<String>) -> Self {
        let mut queue = responses;
        queue.reverse();
        StubChatClient {
            queue: Mutex::new(queue),
            fallback: Box::new(|_| r#"{"error":"stub queue exhausted"}"#.to_string()),
        }
    }

    pub fn with_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> String + Send + Sync + 'static,
    {
        StubChatClient { queue: Mutex::new(Vec::new()), fallback: Box::new(f) }
    }
}

impl ChatClient for StubChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        if let Some(next) = self.queue.lock().expect("stub queue").pop() {
            return Ok(next);
        }
        Ok((self.fallback)(request))
    }
}

/// Offline plan judge: a neutral verdict for every plan. Useful for dry runs
/// of the evaluation pipeline without an endpoint.
pub fn offline_plan_judge() -> StubChatClient {
    StubChatClient::with_fn(|_| {
        r#"{"correctness": 3, "server_routing": 3, "tool_selection": 3, "argument_quality": 3, "efficiency": 3, "dependency_correctness": 3}"#
            .to_string()
    })
}

/// Offline MCQ judge: extracts the stated correct answer and the last answer
/// letter the model committed to from the judge prompt, then compares them.
pub fn offline_mcq_judge() -> StubChatClient {
    StubChatClient::with_fn(|request| {
        let prompt = request
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let expected = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Correct answer: "))
            .map(|s| s.trim().to_string());
        let response_section = prompt.split("Model response:").nth(1).unwrap_or_default();
        let committed = last_answer_letter(response_section);
        let correct = match (expected, committed) {
            (Some(e), Some(c)) => e == c.to_string(),
            _ => false,
        };
        format!(r#"{{"correct": {correct}}}"#)
    })
}

/// The last standalone A-D letter in a response, the answer the model
/// commits to.
fn last_answer_letter(text: &str) -> Option<char> {
    let bytes = text.as_bytes();
    let mut found = None;
    for (i, &b) in bytes.iter().enumerate() {
        if !(b'A'..=b'D').contains(&b) {
            continue;
        }
        let before_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        let after_ok = i + 1 >= bytes.len() || !bytes[i + 1].is_ascii_alphanumeric();
        if before_ok && after_ok {
            found = Some(b as char);
        }
    }
    found
}

/// Six-dimension 1-5 plan rating with the computed overall mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub correctness: i64,
    pub server_routing: i64,
    pub tool_selection: i64,
    pub argument_quality: i64,
    pub efficiency: i64,
    pub dependency_correctness: i64,
    pub overall: f64,
}

impl JudgeVerdict {
    pub fn from_dimensions(dims: [i64; 6]) -> Result<Self, LlmError> {
        const NAMES: [&str; 6] = [
            "correctness",
            "server_routing",
            "tool_selection",
            "argument_quality",
            "efficiency",
            "dependency_correctness",
        ];
        for (name, value) in NAMES.iter().zip(dims) {
            if !(1..=5).contains(&value) {
                return Err(LlmError::OutOfRangeScore { dimension: name, value });
            }
        }
        let overall = dims.iter().sum::<i64>() as f64 / 6.0;
        Ok(JudgeVerdict {
            correctness: dims[0],
            server_routing: dims[1],
            tool_selection: dims[2],
            argument_quality: dims[3],
            efficiency: dims[4],
            dependency_correctness: dims[5],
            overall,
        })
    }
}

/// Pull the first JSON object out of judge output, tolerating code fences
/// and surrounding prose.
fn extract_json_object(text: &str) -> Result<Value, LlmError> {
    let start = text
        .find('{')
        .ok_or_else(|| LlmError::MalformedVerdict(format!("no JSON object in: {text}")))?;
    let end = text
        .rfind('}')
        .ok_or_else(|| LlmError::MalformedVerdict(format!("no JSON object in: {text}")))?;
    serde_json::from_str(&text[start..=end])
        .map_err(|e| LlmError::MalformedVerdict(format!("{e}: {text}")))
}

fn parse_verdict(text: &str) -> Result<JudgeVerdict, LlmError> {
    let object = extract_json_object(text)?;
    let dim = |name: &str| -> Result<i64, LlmError> {
        object
            .get(name)
            .and_then(Value::as_i64)
            .ok_or_else(|| LlmError::MalformedVerdict(format!("missing dimension '{name}'")))
    };
    JudgeVerdict::from_dimensions([
        dim("correctness")?,
        dim("server_routing")?,
        dim("tool_selection")?,
        dim("argument_quality")?,
        dim("efficiency")?,
        dim("dependency_correctness")?,
    ])
}

/// Ask the judge to rate a candidate plan against the gold reference.
///
/// The prompt carries the question, both plans, the tool inventory, and the
/// 5/3/1 rubric; the response must be a JSON object with integer scores.
pub fn judge_plan(
    question: &str,
    gold: &Plan,
    candidate: &Plan,
    catalog: &ToolCatalog,
    client: &dyn ChatClient,
) -> Result<JudgeVerdict, LlmError> {
    let prompt = PLAN_JUDGE_TEMPLATE
        .replace("{question}", question)
        .replace("{gold_plan}", &render_plan(gold))
        .replace("{candidate_plan}", &render_plan(candidate))
        .replace("{catalog}", &serialize_catalog(catalog));
    let model = std::env::var("JUDGE_MODEL").unwrap_or_else(|_| "judge".into());
    let request = ChatRequest::user(&model, prompt, 8192);
    parse_verdict(&client.chat(&request)?)
}

/// Judge many (question, gold, candidate) triples with bounded concurrency.
/// Output order matches input order.
pub fn judge_plans(
    inputs: &[(String, Plan, Plan)],
    catalog: &ToolCatalog,
    client: &dyn ChatClient,
    concurrency: usize,
) -> Vec<Result<JudgeVerdict, LlmError>> {
    let concurrency = concurrency.max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<JudgeVerdict, LlmError>>>> =
        inputs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..concurrency.min(inputs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= inputs.len() {
                    break;
                }
                let (question, gold, candidate) = &inputs[i];
                let verdict = judge_plan(question, gold, candidate, catalog, client);
                *results[i].lock().expect("result slot") = Some(verdict);
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot").expect("worker filled slot"))
        .collect()
}

/// One retention benchmark question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub source: McqSource,
    pub question: String,
    pub choices: Vec<String>,
    /// Correct answer letter, A-D.
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McqSource {
    #[serde(rename = "MMLU")]
    Mmlu,
    #[serde(rename = "ARC")]
    Arc,
    #[serde(rename = "HellaSwag")]
    HellaSwag,
}

impl McqSource {
    pub fn label(&self) -> &'static str {
        match self {
            McqSource::Mmlu => "MMLU",
            McqSource::Arc => "ARC",
            McqSource::HellaSwag => "HellaSwag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqGrade {
    pub correct: bool,
    pub raw_text: String,
}

/// Grade one model response via the judge; the grade reflects the judge's
/// JSON verdict, not token matching.
pub fn judge_mcq(
    item: &McqItem,
    model_response: &str,
    client: &dyn ChatClient,
) -> Result<McqGrade, LlmError> {
    let choices = item
        .choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", (b'A' + i as u8) as char, c))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = MCQ_JUDGE_TEMPLATE
        .replace("{question}", &item.question)
        .replace("{choices}", &choices)
        .replace("{answer}", &item.answer)
        .replace("{response}", model_response);
    let model = std::env::var("JUDGE_MODEL").unwrap_or_else(|_| "judge".into());
    let request = ChatRequest::user(&model, prompt, 1024);
    let text = client.chat(&request)?;
    let object = extract_json_object(&text)?;
    let correct = object
        .get("correct")
        .and_then(Value::as_bool)
        .ok_or_else(|| LlmError::MalformedVerdict(format!("missing 'correct' flag: {text}")))?;
    Ok(McqGrade { correct, raw_text: model_response.to_string() })
}

/// The benchmark composition: 40 MMLU + 30 ARC + 30 HellaSwag.
pub fn check_benchmark_composition(items: &[McqItem]) -> bool {
    let count = |s: McqSource| items.iter().filter(|i| i.source == s).count();
    items.len() == 100
        && count(McqSource::Mmlu) == 40
        && count(McqSource::Arc) == 30
        && count(McqSource::HellaSwag) == 30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAccuracy {
    pub overall: f64,
    pub per_source: BTreeMap<String, f64>,
    pub correct_ids: Vec<String>,
}

/// Retention comparison between a base and fine-tuned model on the same
/// items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub base: ModelAccuracy,
    pub finetuned: ModelAccuracy,
    /// Fine-tuned accuracy divided by base accuracy.
    pub retention: f64,
    /// Items the base model answered correctly but the fine-tuned model missed.
    pub forgotten: Vec<String>,
    /// Items newly answered correctly after fine-tuning.
    pub learned: Vec<String>,
}

fn grade_model(
    items: &[McqItem],
    responses: &BTreeMap<String, String>,
    client: &dyn ChatClient,
) -> Result<ModelAccuracy, LlmError> {
    let mut correct_ids = Vec::new();
    let mut per_source_total: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for item in items {
        let response = responses
            .get(&item.id)
            .ok_or_else(|| LlmError::MissingResponse(item.id.clone()))?;
        let grade = judge_mcq(item, response, client)?;
        let entry = per_source_total.entry(item.source.label()).or_insert((0, 0));
        entry.1 += 1;
        if grade.correct {
            entry.0 += 1;
            correct_ids.push(item.id.clone());
        }
    }
    let overall = correct_ids.len() as f64 / items.len() as f64;
    let per_source = per_source_total
        .into_iter()
        .map(|(k, (c, n))| (k.to_string(), c as f64 / n as f64))
        .collect();
    Ok(ModelAccuracy { overall, per_source, correct_ids })
}

/// Grade both response sets and compute retention bookkeeping.
pub fn run_retention(
    items: &[McqItem],
    base_responses: &BTreeMap<String, String>,
    ft_responses: &BTreeMap<String, String>,
    client: &dyn ChatClient,
) -> Result<RetentionReport, LlmError> {
    let base = grade_model(items, base_responses, client)?;
    let finetuned = grade_model(items, ft_responses, client)?;
    let base_set: std::collections::BTreeSet<&String> = base.correct_ids.iter().collect();
    let ft_set: std::collections::BTreeSet<&String> = finetuned.correct_ids.iter().collect();
    let forgotten: Vec<String> =
        base.correct_ids.iter().filter(|id| !ft_set.contains(id)).cloned().collect();
    let learned: Vec<String> =
        finetuned.correct_ids.iter().filter(|id| !base_set.contains(id)).cloned().collect();
    let retention = if base.overall > 0.0 { finetuned.overall / base.overall } else { 0.0 };
    Ok(RetentionReport { base, finetuned, retention, forgotten, learned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::fixture_catalog;
    use crate::plan::parse_plan;

    fn gold_114() -> Plan {
        parse_plan(include_str!("../fixtures/scenario-114.plan")).unwrap()
    }

    #[test]
    fn verdict_of_all_fours() {
        let stub = StubChatClient::scripted(vec![
            r#"{"correctness":4,"server_routing":4,"tool_selection":4,"argument_quality":4,"efficiency":4,"dependency_correctness":4}"#.into(),
        ]);
        let v = judge_plan("q", &gold_114(), &gold_114(), &fixture_catalog(), &stub).unwrap();
        assert_eq!(v.overall, 4.0);
    }

    #[test]
    fn verdict_mean_arithmetic() {
        let v = JudgeVerdict::from_dimensions([4, 4, 4, 3, 4, 4]).unwrap();
        assert!((v.overall - 3.8333333333333335).abs() < 1e-9);
    }

    #[test]
    fn five_dimensions_is_malformed() {
        let stub = StubChatClient::scripted(vec![
            r#"{"correctness":4,"server_routing":4,"tool_selection":4,"argument_quality":4,"efficiency":4}"#.into(),
        ]);
        let err = judge_plan("q", &gold_114(), &gold_114(), &fixture_catalog(), &stub).unwrap_err();
        assert!(matches!(err, LlmError::MalformedVerdict(_)));
    }

    #[test]
    fn out_of_range_score_rejected() {
        let err = JudgeVerdict::from_dimensions([6, 4, 4, 4, 4, 4]).unwrap_err();
        assert!(matches!(err, LlmError::OutOfRangeScore { dimension: "correctness", value: 6 }));
    }

    #[test]
    fn verdict_tolerates_code_fences() {
        let stub = StubChatClient::scripted(vec![
            "```json\n{\"correctness\":5,\"server_routing\":5,\"tool_selection\":5,\"argument_quality\":5,\"efficiency\":5,\"dependency_correctness\":5}\n```".into(),
        ]);
        let v = judge_plan("q", &gold_114(), &gold_114(), &fixture_catalog(), &stub).unwrap();
        assert_eq!(v.overall, 5.0);
    }

    fn item(id: &str, answer: &str) -> McqItem {
        McqItem {
            id: id.into(),
            source: McqSource::Mmlu,
            question: "Which?".into(),
            choices: vec!["w".into(), "x".into(), "y".into(), "z".into()],
            answer: answer.into(),
        }
    }

    #[test]
    fn mcq_stub_verdicts() {
        let yes = StubChatClient::scripted(vec![r#"{"correct": true}"#.into()]);
        assert!(judge_mcq(&item("q1", "B"), "The answer is B", &yes).unwrap().correct);

        let no = StubChatClient::scripted(vec![r#"{"correct": false}"#.into()]);
        assert!(!judge_mcq(&item("q1", "B"), "The answer is C", &no).unwrap().correct);

        let garbage = StubChatClient::scripted(vec!["not json at all".into()]);
        assert!(matches!(
            judge_mcq(&item("q1", "B"), "B", &garbage),
            Err(LlmError::MalformedVerdict(_))
        ));
    }

    #[test]
    fn offline_mcq_judge_compares_final_letter() {
        let judge = offline_mcq_judge();
        let g = judge_mcq(&item("q1", "B"), "I considered A, but the answer is B.", &judge).unwrap();
        assert!(g.correct);
        let g = judge_mcq(&item("q1", "B"), "Definitely C.", &judge).unwrap();
        assert!(!g.correct);
    }

    #[test]
    fn retention_arithmetic_and_bookkeeping() {
        // 4 items; base answers 2 correctly, fine-tuned keeps 1, forgets 1, learns 1.
        let items: Vec<McqItem> =
            (1..=4).map(|i| item(&format!("q{i}"), "A")).collect();
        let respond = |pattern: [&str; 4]| -> BTreeMap<String, String> {
            pattern
                .iter()
                .enumerate()
                .map(|(i, letter)| (format!("q{}", i + 1), format!("Answer: {letter}")))
                .collect()
        };
        let base = respond(["A", "A", "C", "C"]);
        let ft = respond(["A", "C", "A", "C"]);
        let judge = offline_mcq_judge();
        let report = run_retention(&items, &base, &ft, &judge).unwrap();
        assert_eq!(report.base.overall, 0.5);
        assert_eq!(report.finetuned.overall, 0.5);
        assert_eq!(report.retention, 1.0);
        assert_eq!(report.forgotten, vec!["q2".to_string()]);
        assert_eq!(report.learned, vec!["q3".to_string()]);
    }

    #[test]
    fn missing_response_names_item() {
        let items = vec![item("q1", "A")];
        let err =
            run_retention(&items, &BTreeMap::new(), &BTreeMap::new(), &offline_mcq_judge())
                .unwrap_err();
        assert!(matches!(err, LlmError::MissingResponse(id) if id == "q1"));
    }

    #[test]
    fn judge_plans_preserves_order() {
        let stub = StubChatClient::with_fn(|_| {
            r#"{"correctness":3,"server_routing":3,"tool_selection":3,"argument_quality":3,"efficiency":3,"dependency_correctness":3}"#.to_string()
        });
        let inputs: Vec<(String, Plan, Plan)> = (0..7)
            .map(|i| (format!("q{i}"), gold_114(), gold_114()))
            .collect();
        let verdicts = judge_plans(&inputs, &fixture_catalog(), &stub, 4);
        assert_eq!(verdicts.len(), 7);
        assert!(verdicts.iter().all(|v| v.as_ref().unwrap().overall == 3.0));
    }
}
