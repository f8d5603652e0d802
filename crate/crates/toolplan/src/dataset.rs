//! SFT dataset construction: the three example types, the pattern-aware
//! stratified split, and training-configuration assembly.
//!
//! The split happens at the scenario level before any paraphrase expansion,
//! so every paraphrase and derived trace stays on the same side as its
//! scenario. Everything is deterministic given a seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::catalog::{near_miss_pairs, ToolCatalog, NEAR_MISS_THRESHOLD};
use crate::llm::{ChatClient, ChatRequest};
use crate::plan::{
    parse_plan, render_plan, scan_placeholder_tokens, validate_structure, Plan, Severity,
};
use crate::prompts::build_description_free_prompt;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("scenario {0}: gold plan has no actionable steps")]
    NoActionableSteps(String),
    #[error("test fraction {0} must be in (0, 1)")]
    InvalidFraction(f64),
    #[error("scenario {id}: invalid gold plan: {detail}")]
    InvalidGoldPlan { id: String, detail: String },
    #[error("scenario {id}: {{step_{reference}}} does not reference an earlier step")]
    DanglingPlaceholder { id: String, reference: usize },
    #[error("example pool for config {0} is empty")]
    EmptyPool(char),
    #[error("teacher unavailable: {0}")]
    TeacherUnavailable(String),
    #[error("bad scenario record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One execution-trace record attached to a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub output: Value,
}

/// One benchmark scenario: question, gold plan text, paraphrases, traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub question: String,
    /// Gold plan in plan-DSL text form.
    pub gold_plan: String,
    #[serde(default)]
    pub paraphrases: Vec<String>,
    #[serde(default)]
    pub traces: Vec<TraceRecord>,
}

impl Scenario {
    pub fn parsed_gold_plan(&self) -> Result<Plan, DatasetError> {
        parse_plan(&self.gold_plan).map_err(|e| DatasetError::InvalidGoldPlan {
            id: self.id.clone(),
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftKind {
    ToolKnowledge,
    Plan,
    Execution,
}

/// One supervised training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub kind: SftKind,
    pub input: String,
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<String>,
}

/// The scenario-level train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub pattern_map: BTreeMap<String, String>,
}

/// Pattern key for stratification: dominant server (most frequent among
/// actionable steps, ties broken alphabetically), the sorted (server, tool)
/// pair set, and a step-count bucket from {1,2,3,4,5+}.
pub fn assign_pattern(scenario: &Scenario) -> Result<String, DatasetError> {
    let plan = scenario.parsed_gold_plan()?;
    let actionable: Vec<_> = plan.steps.iter().filter(|s| s.is_actionable()).collect();
    if actionable.is_empty() {
        return Err(DatasetError::NoActionableSteps(scenario.id.clone()));
    }

    let mut frequency: BTreeMap<&str, usize> = BTreeMap::new();
    for step in &actionable {
        *frequency.entry(step.server.as_str()).or_default() += 1;
    }
    // BTreeMap iterates alphabetically, so max_by keeps the alphabetically
    // first name on ties.
    let dominant = frequency
        .iter()
        .rev()
        .max_by_key(|(_, count)| **count)
        .map(|(name, _)| *name)
        .expect("non-empty frequency map");

    let pairs: std::collections::BTreeSet<String> = actionable
        .iter()
        .map(|s| format!("{}.{}", s.server, s.tool))
        .collect();
    let bucket = match plan.steps.len() {
        n @ 1..=4 => n.to_string(),
        _ => "5+".to_string(),
    };
    Ok(format!(
        "{dominant}|{}|{bucket}",
        pairs.into_iter().collect::<Vec<_>>().join(",")
    ))
}

/// Pattern-aware stratified split. Groups scenarios by pattern key, shuffles
/// each group with the seed, and allocates test slots by largest remainder so
/// the total test count is `round(N * test_fraction)`.
pub fn stratified_split(
    scenarios: &[Scenario],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitManifest, DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    if scenarios.is_empty() {
        return Err(DatasetError::BadRecord("no scenarios to split".into()));
    }

    let mut pattern_map = BTreeMap::new();
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for scenario in scenarios {
        let key = assign_pattern(scenario)?;
        pattern_map.insert(scenario.id.clone(), key.clone());
        groups.entry(key).or_default().push(scenario.id.clone());
    }

    let total = scenarios.len();
    let test_total = (total as f64 * test_fraction).round() as usize;

    // Largest-remainder allocation of test slots across groups.
    let mut quotas: Vec<(String, usize, f64)> = groups
        .iter()
        .map(|(key, ids)| {
            let exact = ids.len() as f64 * test_fraction;
            let base = (exact.floor() as usize).min(ids.len());
            (key.clone(), base, exact - exact.floor())
        })
        .collect();
    let mut allocated: usize = quotas.iter().map(|(_, base, _)| base).sum();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        quotas[b]
            .2
            .partial_cmp(&quotas[a].2)
            .unwrap()
            .then_with(|| quotas[a].0.cmp(&quotas[b].0))
    });
    while allocated < test_total {
        let mut progressed = false;
        for &idx in &by_remainder {
            if allocated >= test_total {
                break;
            }
            let group_size = groups[&quotas[idx].0].len();
            if quotas[idx].1 < group_size {
                quotas[idx].1 += 1;
                allocated += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (key, quota, _) in &quotas {
        let mut ids = groups[key].clone();
        ids.sort();
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            if i < *quota {
                test_ids.push(id);
            } else {
                train_ids.push(id);
            }
        }
    }
    train_ids.sort();
    test_ids.sort();
    Ok(SplitManifest { seed, test_fraction, train_ids, test_ids, pattern_map })
}

fn ownership_question(tool: &str) -> String {
    format!("Which MCP server provides the tool `{tool}`?")
}

/// Deterministic tool-knowledge examples: ownership, argument schemas,
/// server listings, and near-miss discrimination pairs. A teacher client,
/// when supplied, contributes paraphrased variants that are validated
/// against the catalog before inclusion; failures are dropped and counted.
pub fn build_tool_knowledge_examples(
    catalog: &ToolCatalog,
    teacher: Option<&dyn ChatClient>,
) -> Result<Vec<SftExample>, DatasetError> {
    let mut examples = Vec::new();
    let push = |examples: &mut Vec<SftExample>, input: String, target: String| {
        examples.push(SftExample { kind: SftKind::ToolKnowledge, input, target, scenario_id: None });
    };

    for server in &catalog.servers {
        for tool in &server.tools {
            push(
                &mut examples,
                ownership_question(&tool.name),
                format!("`{}` is provided by the `{}` MCP server.", tool.name, server.name),
            );
            let args = if tool.args.is_empty() {
                "It takes no arguments.".to_string()
            } else {
                let list = tool
                    .args
                    .iter()
                    .map(|a| {
                        format!(
                            "`{}` ({}, {})",
                            a.key,
                            a.arg_type,
                            if a.required { "required" } else { "optional" }
                        )
                    })
                    .collect::<Vec<_>>()
                    .join(", ");
                format!("It takes {list}.")
            };
            push(
                &mut examples,
                format!("What arguments does `{}.{}` require?", server.name, tool.name),
                format!("{args} It returns {}.", tool.returns),
            );
        }
        if !server.tools.is_empty() {
            let names = server
                .tools
                .iter()
                .map(|t| format!("`{}`", t.name))
                .collect::<Vec<_>>()
                .join(", ");
            push(
                &mut examples,
                format!("Which tools does the `{}` MCP server expose?", server.name),
                format!("The `{}` server exposes: {names}.", server.name),
            );
        }
    }

    // Hard negatives: near-miss tool names that must not be confused.
    for (a, b, _) in near_miss_pairs(catalog, NEAR_MISS_THRESHOLD) {
        let describe = |name: &str| {
            catalog
                .tools()
                .find(|t| t.name == name)
                .map(|t| format!("`{}` ({}): {}", t.name, t.server, t.description))
                .unwrap_or_default()
        };
        push(
            &mut examples,
            format!("When should you call `{a}` rather than `{b}`?"),
            format!("These are distinct tools. {} {}", describe(&a), describe(&b)),
        );
    }

    if let Some(teacher) = teacher {
        let mut dropped = 0usize;
        let mut extra = Vec::new();
        for server in &catalog.servers {
            for tool in &server.tools {
                let prompt = format!(
                    "Rewrite this question in different words, keeping the name `{}` verbatim: {}",
                    tool.name,
                    ownership_question(&tool.name)
                );
                let request = ChatRequest::user("teacher", prompt, 256);
                let paraphrase = teacher
                    .chat(&request)
                    .map_err(|e| DatasetError::TeacherUnavailable(e.to_string()))?;
                let paraphrase = paraphrase.trim().to_string();
                // Only keep variants that still reference the catalog fact.
                if paraphrase.contains(tool.name.as_str()) && !paraphrase.is_empty() {
                    extra.push(SftExample {
                        kind: SftKind::ToolKnowledge,
                        input: paraphrase,
                        target: format!(
                            "`{}` is provided by the `{}` MCP server.",
                            tool.name, server.name
                        ),
                        scenario_id: None,
                    });
                } else {
                    dropped += 1;
                }
            }
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} teacher paraphrases that failed catalog validation");
        }
        examples.extend(extra);
    }

    Ok(examples)
}

/// Question-to-plan examples: one per question (and per paraphrase when
/// enabled), input in the description-free condition, target the rendered
/// gold plan. Gold plans must validate cleanly against the catalog.
pub fn build_plan_examples(
    scenarios: &[Scenario],
    catalog: &ToolCatalog,
    include_paraphrases: bool,
) -> Result<Vec<SftExample>, DatasetError> {
    let mut ordered: Vec<&Scenario> = scenarios.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let mut examples = Vec::new();
    for scenario in ordered {
        let plan = scenario.parsed_gold_plan()?;
        let errors: Vec<String> = validate_structure(&plan, catalog)
            .into_iter()
            .filter(|f| f.severity == Severity::Error)
            .map(|f| f.to_string())
            .collect();
        if !errors.is_empty() {
            return Err(DatasetError::InvalidGoldPlan {
                id: scenario.id.clone(),
                detail: errors.join("; "),
            });
        }
        let target = render_plan(&plan);
        let mut questions = vec![scenario.question.as_str()];
        if include_paraphrases {
            questions.extend(scenario.paraphrases.iter().map(String::as_str));
        }
        for question in questions {
            let input = build_description_free_prompt(question)
                .map_err(|e| DatasetError::InvalidGoldPlan {
                    id: scenario.id.clone(),
                    detail: e.to_string(),
                })?
                .text;
            examples.push(SftExample {
                kind: SftKind::Plan,
                input,
                target: target.clone(),
                scenario_id: Some(scenario.id.clone()),
            });
        }
    }
    Ok(examples)
}

/// Execution-style examples: plan steps interleaved with observed trace
/// lines. Scenarios without traces contribute nothing. Every `{step_N}`
/// token must reference an earlier step of the plan.
pub fn build_execution_examples(
    scenarios: &[Scenario],
) -> Result<Vec<SftExample>, DatasetError> {
    let mut ordered: Vec<&Scenario> = scenarios.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let mut examples = Vec::new();
    for scenario in ordered {
        if scenario.traces.is_empty() {
            continue;
        }
        let plan = scenario.parsed_gold_plan()?;
        let outputs: BTreeMap<usize, &Value> =
            scenario.traces.iter().map(|t| (t.step, &t.output)).collect();

        let mut target = String::new();
        for step in &plan.steps {
            if step.index > 1 {
                target.push('\n');
            }
            let block = render_plan(&Plan::from_steps(vec![step.clone()]));
            // Args may only look backwards.
            for (_, _, n) in scan_placeholder_tokens(&block) {
                if n == 0 || n >= step.index {
                    return Err(DatasetError::DanglingPlaceholder {
                        id: scenario.id.clone(),
                        reference: n,
                    });
                }
            }
            target.push_str(block.trim_end());
            target.push('\n');
            if let Some(output) = outputs.get(&step.index) {
                let line = format!(
                    "#Observation: {}",
                    serde_json::to_string(output).expect("trace output serializes")
                );
                for (_, _, n) in scan_placeholder_tokens(&line) {
                    if n == 0 || n > plan.steps.len() || n > step.index {
                        return Err(DatasetError::DanglingPlaceholder {
                            id: scenario.id.clone(),
                            reference: n,
                        });
                    }
                }
                target.push_str(&line);
                target.push('\n');
            }
        }

        let input = build_description_free_prompt(&scenario.question)
            .map_err(|e| DatasetError::InvalidGoldPlan {
                id: scenario.id.clone(),
                detail: e.to_string(),
            })?
            .text;
        examples.push(SftExample {
            kind: SftKind::Execution,
            input,
            target,
            scenario_id: Some(scenario.id.clone()),
        });
    }
    Ok(examples)
}

/// Training configuration: which example pools are included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Config {
    /// Plan-only.
    A,
    /// Tool-knowledge only.
    B,
    /// Tool + plan + execution.
    C,
}

impl std::str::FromStr for Config {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Config::A),
            "B" => Ok(Config::B),
            "C" => Ok(Config::C),
            other => Err(format!("unknown config '{other}' (expected A, B, or C)")),
        }
    }
}

impl Config {
    pub fn letter(&self) -> char {
        match self {
            Config::A => 'A',
            Config::B => 'B',
            Config::C => 'C',
        }
    }
}

/// Assemble a configuration's pool, shuffle with the seed, and split into
/// train/eval with `|eval| = round(N * eval_fraction)`.
pub fn assemble_config(
    config: Config,
    tool_pool: &[SftExample],
    plan_pool: &[SftExample],
    exec_pool: &[SftExample],
    eval_fraction: f64,
    seed: u64,
) -> Result<(Vec<SftExample>, Vec<SftExample>), DatasetError> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(eval_fraction));
    }
    let mut pool: Vec<SftExample> = match config {
        Config::A => plan_pool.to_vec(),
        Config::B => tool_pool.to_vec(),
        Config::C => {
            let mut all = tool_pool.to_vec();
            all.extend_from_slice(plan_pool);
            all.extend_from_slice(exec_pool);
            all
        }
    };
    if pool.is_empty() {
        return Err(DatasetError::EmptyPool(config.letter()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let eval_count = ((pool.len() as f64) * eval_fraction).round() as usize;
    let train_count = pool.len() - eval_count;
    let eval = pool.split_off(train_count);
    Ok((pool, eval))
}

/// Scan emitted examples for split leakage. Returns a violation message per
/// offending example: a test-side scenario id, or a training input that
/// contains a test scenario's question or paraphrase as a substring.
pub fn scan_leakage(
    manifest: &SplitManifest,
    scenarios: &[Scenario],
    train_examples: &[SftExample],
) -> Vec<String> {
    let test_ids: std::collections::BTreeSet<&str> =
        manifest.test_ids.iter().map(String::as_str).collect();
    let mut test_texts: Vec<(&str, &str)> = Vec::new();
    for scenario in scenarios.iter().filter(|s| test_ids.contains(s.id.as_str())) {
        test_texts.push((scenario.id.as_str(), scenario.question.as_str()));
        for p in &scenario.paraphrases {
            test_texts.push((scenario.id.as_str(), p.as_str()));
        }
    }

    let mut violations = Vec::new();
    for (i, example) in train_examples.iter().enumerate() {
        if let Some(id) = &example.scenario_id {
            if test_ids.contains(id.as_str()) {
                violations.push(format!("example {i} carries test scenario id {id}"));
            }
        }
        for (id, text) in &test_texts {
            if !text.is_empty() && example.input.contains(text) {
                violations.push(format!("example {i} input contains test scenario {id} text"));
            }
        }
    }
    violations
}

/// Read a scenario corpus from JSONL.
pub fn read_scenarios(path: &std::path::Path) -> Result<Vec<Scenario>, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenarios_jsonl(&text)
}

pub fn parse_scenarios_jsonl(text: &str) -> Result<Vec<Scenario>, DatasetError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| DatasetError::BadRecord(e.to_string())))
        .collect()
}

/// Serialize examples to JSONL, one record per line.
pub fn examples_to_jsonl(examples: &[SftExample]) -> String {
    let mut out = String::new();
    for example in examples {
        out.push_str(&serde_json::to_string(example).expect("example serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::fixture_catalog;
    use crate::llm::StubChatClient;

    fn make_scenario(id: &str, question: &str, plan_text: &str) -> Scenario {
        Scenario {
            id: id.into(),
            question: question.into(),
            gold_plan: plan_text.into(),
            paraphrases: vec![],
            traces: vec![],
        }
    }

    fn one_step_plan(server: &str, tool: &str, args: &str) -> String {
        format!("#Task: do it\n#Agent: {server}\n#Tool: {tool}\n#Args: {args}\n#Dependency: none\n#ExpectedOutput: result\n")
    }

    fn scenario_114() -> Scenario {
        Scenario {
            id: "scenario-114".into(),
            question: "What are the failure modes of Chiller 6 that can be identified by analyzing the data from the available sensors?".into(),
            gold_plan: include_str!("../fixtures/scenario-114.plan").into(),
            paraphrases: vec!["Which Chiller 6 failure modes are detectable from its sensors?".into()],
            traces: vec![
                TraceRecord { step: 1, output: serde_json::json!("CHL-006") },
                TraceRecord { step: 2, output: serde_json::json!(["TEMP-01", "PRESS-02"]) },
            ],
        }
    }

    #[test]
    fn pattern_for_scenario_114() {
        let key = assign_pattern(&scenario_114()).unwrap();
        // IoTAgent and FMSRAgent tie at 2 actionable steps each; the
        // alphabetical winner is FMSRAgent. Four steps, bucket 4.
        assert!(key.starts_with("FMSRAgent|"), "key was {key}");
        assert!(key.ends_with("|4"), "key was {key}");
        assert!(key.contains("IoTAgent.assets"));
        assert_eq!(key.matches(',').count(), 3);
    }

    #[test]
    fn pattern_bucket_for_single_step() {
        let s = make_scenario("s1", "q", &one_step_plan("IoT", "list_sites", "{}"));
        assert!(assign_pattern(&s).unwrap().ends_with("|1"));
    }

    #[test]
    fn identical_plans_share_pattern_and_none_only_errors() {
        let a = make_scenario("a", "q1", &one_step_plan("IoT", "list_sites", "{}"));
        let b = make_scenario("b", "q2", &one_step_plan("IoT", "list_sites", "{}"));
        assert_eq!(assign_pattern(&a).unwrap(), assign_pattern(&b).unwrap());

        let none = make_scenario("c", "q", &one_step_plan("none", "none", "{}"));
        assert!(matches!(assign_pattern(&none), Err(DatasetError::NoActionableSteps(_))));
    }

    #[test]
    fn split_of_ten_identical_patterns() {
        let scenarios: Vec<Scenario> = (0..10)
            .map(|i| {
                make_scenario(&format!("s{i:02}"), "q", &one_step_plan("IoT", "list_sites", "{}"))
            })
            .collect();
        let manifest = stratified_split(&scenarios, 0.2, 7).unwrap();
        assert_eq!(manifest.test_ids.len(), 2);
        assert_eq!(manifest.train_ids.len(), 8);
        // Same seed, same manifest.
        assert_eq!(manifest, stratified_split(&scenarios, 0.2, 7).unwrap());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let scenarios = vec![make_scenario("s", "q", &one_step_plan("IoT", "list_sites", "{}"))];
        assert!(matches!(
            stratified_split(&scenarios, 1.5, 1),
            Err(DatasetError::InvalidFraction(_))
        ));
    }

    #[test]
    fn tool_knowledge_covers_every_tool() {
        let catalog = fixture_catalog();
        let examples = build_tool_knowledge_examples(&catalog, None).unwrap();
        let ownership = examples
            .iter()
            .filter(|e| e.input.starts_with("Which MCP server provides"))
            .count();
        assert_eq!(ownership, catalog.tool_count());
        assert!(examples.iter().all(|e| e.scenario_id.is_none()));
        // The hard-negative pair from the catalog's near misses is present.
        assert!(examples.iter().any(|e| e.input.contains("get_failure_mode_sensor_mapping")
            && e.input.contains("get_failure_modes")));
    }

    #[test]
    fn empty_catalog_yields_no_examples() {
        let catalog = crate::catalog::ToolCatalog { version: "1".into(), servers: vec![] };
        assert!(build_tool_knowledge_examples(&catalog, None).unwrap().is_empty());
    }

    #[test]
    fn teacher_paraphrases_are_validated() {
        let catalog = fixture_catalog();
        // Teacher echoes the tool name for `assets` only; everything else is dropped.
        let teacher = StubChatClient::with_fn(|request| {
            let content = &request.messages[0].content;
            if content.contains("`assets`") {
                "Tell me which server owns the assets tool.".to_string()
            } else {
                "I cannot help with that.".to_string()
            }
        });
        let with_teacher = build_tool_knowledge_examples(&catalog, Some(&teacher)).unwrap();
        let without = build_tool_knowledge_examples(&catalog, None).unwrap();
        assert_eq!(with_teacher.len(), without.len() + 1);
    }

    #[test]
    fn plan_examples_per_question_and_paraphrase() {
        let catalog = fixture_catalog();
        let s = scenario_114();
        let with = build_plan_examples(&[s.clone()], &catalog, true).unwrap();
        assert_eq!(with.len(), 2);
        let without = build_plan_examples(&[s.clone()], &catalog, false).unwrap();
        assert_eq!(without.len(), 1);
        assert_eq!(without[0].scenario_id.as_deref(), Some("scenario-114"));
        // Input is the description-free condition: no catalog text.
        assert!(!without[0].input.contains("Tool Catalog"));
        // Target re-parses.
        assert!(parse_plan(&without[0].target).is_ok());
    }

    #[test]
    fn invalid_gold_plan_names_scenario() {
        let catalog = fixture_catalog();
        let bad = make_scenario("s-bad", "q", &one_step_plan("NoSuchServer", "tool", "{}"));
        match build_plan_examples(&[bad], &catalog, false) {
            Err(DatasetError::InvalidGoldPlan { id, .. }) => assert_eq!(id, "s-bad"),
            other => panic!("expected InvalidGoldPlan, got {other:?}"),
        }
    }

    #[test]
    fn execution_example_interleaves_traces() {
        let examples = build_execution_examples(&[scenario_114()]).unwrap();
        assert_eq!(examples.len(), 1);
        let target = &examples[0].target;
        assert!(target.contains("#Observation: \"CHL-006\""));
        // Step 4's args keep their backward placeholders.
        assert!(target.contains("{step_2}") && target.contains("{step_3}"));
    }

    #[test]
    fn scenario_without_traces_is_skipped() {
        let mut s = scenario_114();
        s.traces.clear();
        assert!(build_execution_examples(&[s]).unwrap().is_empty());
    }

    #[test]
    fn dangling_trace_placeholder_rejected() {
        let mut s = scenario_114();
        s.traces = vec![TraceRecord { step: 1, output: serde_json::json!("see {step_9}") }];
        match build_execution_examples(&[s]) {
            Err(DatasetError::DanglingPlaceholder { reference: 9, .. }) => {}
            other => panic!("expected DanglingPlaceholder, got {other:?}"),
        }
    }

    fn dummy_examples(kind: SftKind, n: usize) -> Vec<SftExample> {
        (0..n)
            .map(|i| SftExample {
                kind,
                input: format!("in{i}"),
                target: format!("out{i}"),
                scenario_id: None,
            })
            .collect()
    }

    #[test]
    fn config_c_split_arithmetic() {
        // 500 + 1233 + 100 = 1833, the full corpus size.
        let tool = dummy_examples(SftKind::ToolKnowledge, 500);
        let plan = dummy_examples(SftKind::Plan, 1233);
        let exec = dummy_examples(SftKind::Execution, 100);
        let (train, eval) = assemble_config(Config::C, &tool, &plan, &exec, 0.05, 11).unwrap();
        assert_eq!((train.len(), eval.len()), (1741, 92));
    }

    #[test]
    fn config_a_uses_plan_pool_only() {
        let tool = dummy_examples(SftKind::ToolKnowledge, 10);
        let plan = dummy_examples(SftKind::Plan, 1200);
        let (train, eval) = assemble_config(Config::A, &tool, &plan, &[], 0.05, 3).unwrap();
        assert_eq!((train.len(), eval.len()), (1140, 60));
        assert!(train.iter().chain(eval.iter()).all(|e| e.kind == SftKind::Plan));
    }

    #[test]
    fn config_assembly_is_deterministic_and_partitions() {
        let tool = dummy_examples(SftKind::ToolKnowledge, 30);
        let plan = dummy_examples(SftKind::Plan, 70);
        let a = assemble_config(Config::C, &tool, &plan, &[], 0.1, 5).unwrap();
        let b = assemble_config(Config::C, &tool, &plan, &[], 0.1, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len() + a.1.len(), 100);

        assert!(matches!(
            assemble_config(Config::B, &[], &plan, &[], 0.1, 5),
            Err(DatasetError::EmptyPool('B'))
        ));
    }

    #[test]
    fn leakage_scan_flags_test_text_in_train_input() {
        let s = scenario_114();
        let manifest = SplitManifest {
            seed: 0,
            test_fraction: 0.2,
            train_ids: vec![],
            test_ids: vec![s.id.clone()],
            pattern_map: BTreeMap::new(),
        };
        let leaky = vec![SftExample {
            kind: SftKind::Plan,
            input: format!("prompt: {}", s.question),
            target: "t".into(),
            scenario_id: None,
        }];
        assert_eq!(scan_leakage(&manifest, &[s.clone()], &leaky).len(), 1);
        assert!(scan_leakage(&manifest, &[s], &dummy_examples(SftKind::Plan, 3)).is_empty());
    }
}
