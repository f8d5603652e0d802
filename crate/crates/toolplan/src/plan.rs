//! The structured plan DSL: parsing, rendering, structural validation, and
//! actionable-pair extraction.
//!
//! A plan is a sequence of step blocks separated by blank lines. Each block
//! starts with `#Task:` and carries the markers `#Agent`, `#Tool`, `#Args`,
//! `#Dependency`, and `#ExpectedOutput`, one per line. `#Args` bodies are
//! JSON objects; `#Dependency` is a comma-separated list of earlier step
//! numbers or the literal `none`. The sentinel value `none` for `#Agent` or
//! `#Tool` marks a step as non-actionable.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::ToolCatalog;

/// Sentinel for a step that does not invoke a tool.
pub const NONE_SENTINEL: &str = "none";

const MARKER_TASK: &str = "#Task:";
const MARKER_AGENT: &str = "#Agent:";
const MARKER_TOOL: &str = "#Tool:";
const MARKER_ARGS: &str = "#Args:";
const MARKER_DEPENDENCY: &str = "#Dependency:";
const MARKER_EXPECTED: &str = "#ExpectedOutput:";

const ALL_MARKERS: [&str; 6] = [
    MARKER_TASK,
    MARKER_AGENT,
    MARKER_TOOL,
    MARKER_ARGS,
    MARKER_DEPENDENCY,
    MARKER_EXPECTED,
];

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan text is empty")]
    EmptyInput,
    #[error("step {step}: missing or malformed marker {marker}")]
    MalformedStep { step: usize, marker: &'static str },
    #[error("step {step}: unparseable #Args JSON: {text}")]
    MalformedArgs { step: usize, text: String },
    #[error("step {step}: dependency on step {dependency} is not a backward reference")]
    ForwardDependency { step: usize, dependency: usize },
}

/// One step of a structured plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    /// 1-based position within the plan.
    pub index: usize,
    pub task: String,
    /// MCP server name as written (`#Agent` in the plan text), or `none`.
    pub server: String,
    pub tool: String,
    /// JSON argument object; insertion order preserved.
    pub args: Map<String, Value>,
    /// Indices of earlier steps this step depends on.
    pub dependencies: Vec<usize>,
    pub expected_output: String,
}

impl PlanStep {
    /// A step is actionable when both server and tool are real names.
    pub fn is_actionable(&self) -> bool {
        self.server != NONE_SENTINEL && self.tool != NONE_SENTINEL
    }
}

/// An ordered, contiguous sequence of plan steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    /// Raw text as parsed; empty for programmatically built plans.
    pub source_text: String,
}

impl PartialEq for Plan {
    fn eq(&self, other: &Self) -> bool {
        // Equality is over step content, not the raw text it came from.
        self.steps == other.steps
    }
}

impl Plan {
    pub fn from_steps(steps: Vec<PlanStep>) -> Self {
        Plan { steps, source_text: String::new() }
    }
}

/// Strip a trailing `Agent` suffix so prose-style server names match the
/// short names used by catalogs (`IoTAgent` and `IoT` are the same server).
pub fn normalize_server(name: &str) -> &str {
    match name.strip_suffix("Agent") {
        Some(short) if !short.is_empty() => short,
        _ => name,
    }
}

/// Severity of a structural finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One structural problem located in a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub step: usize,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "[{sev}] step {}: {}", self.step, self.message)
    }
}

/// Parse plan-DSL text into a [`Plan`].
///
/// Step blocks are contiguous runs of non-blank lines starting with `#Task:`;
/// markers are order-insensitive within a block except `#Task`, which comes
/// first. A marker's value continues onto following lines until the next
/// marker. Missing `#Dependency` parses as an empty list; missing `#Args`
/// parses as an empty object.
pub fn parse_plan(text: &str) -> Result<Plan, PlanError> {
    if text.trim().is_empty() {
        return Err(PlanError::EmptyInput);
    }

    let mut steps = Vec::new();
    for (block_no, block) in split_blocks(text).into_iter().enumerate() {
        let index = block_no + 1;
        steps.push(parse_step(index, &block)?);
    }
    if steps.is_empty() {
        return Err(PlanError::MalformedStep { step: 1, marker: MARKER_TASK });
    }

    Ok(Plan { steps, source_text: text.to_string() })
}

fn split_blocks(text: &str) -> Vec<Vec<String>> {
    let mut blocks: Vec<Vec<String>> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.trim_end().to_string());
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

fn marker_of(line: &str) -> Option<&'static str> {
    let trimmed = line.trim_start();
    ALL_MARKERS.iter().find(|m| trimmed.starts_with(**m)).copied()
}

fn parse_step(index: usize, lines: &[String]) -> Result<PlanStep, PlanError> {
    if marker_of(&lines[0]) != Some(MARKER_TASK) {
        return Err(PlanError::MalformedStep { step: index, marker: MARKER_TASK });
    }

    // Collect (marker, joined value) in block order.
    let mut fields: Vec<(&'static str, String)> = Vec::new();
    for line in lines {
        match marker_of(line) {
            Some(marker) => {
                let value = line.trim_start()[marker.len()..].trim().to_string();
                // A repeated marker within one block is malformed.
                if fields.iter().any(|(m, _)| *m == marker) {
                    return Err(PlanError::MalformedStep { step: index, marker });
                }
                fields.push((marker, value));
            }
            None => match fields.last_mut() {
                Some((_, value)) => {
                    value.push('\n');
                    value.push_str(line.trim());
                }
                None => {
                    return Err(PlanError::MalformedStep { step: index, marker: MARKER_TASK })
                }
            },
        }
    }

    let get = |marker: &'static str| -> Option<&str> {
        fields.iter().find(|(m, _)| *m == marker).map(|(_, v)| v.as_str())
    };
    let require = |marker: &'static str| -> Result<String, PlanError> {
        get(marker)
            .filter(|v| !v.is_empty())
            .map(str::to_string)
            .ok_or(PlanError::MalformedStep { step: index, marker })
    };

    let task = require(MARKER_TASK)?;
    let server = require(MARKER_AGENT)?;
    let tool = require(MARKER_TOOL)?;
    let expected_output = require(MARKER_EXPECTED)?;

    let args = match get(MARKER_ARGS) {
        None => Map::new(),
        Some(body) => match serde_json::from_str::<Value>(body) {
            Ok(Value::Object(map)) => map,
            _ => {
                return Err(PlanError::MalformedArgs { step: index, text: body.to_string() })
            }
        },
    };

    let dependencies = match get(MARKER_DEPENDENCY) {
        None => Vec::new(),
        Some(body) if body.is_empty() || body == NONE_SENTINEL => Vec::new(),
        Some(body) => {
            let mut deps = Vec::new();
            for part in body.split(',') {
                let dep: usize = part.trim().parse().map_err(|_| PlanError::MalformedStep {
                    step: index,
                    marker: MARKER_DEPENDENCY,
                })?;
                if dep == 0 {
                    return Err(PlanError::MalformedStep {
                        step: index,
                        marker: MARKER_DEPENDENCY,
                    });
                }
                if dep >= index {
                    return Err(PlanError::ForwardDependency { step: index, dependency: dep });
                }
                deps.push(dep);
            }
            deps
        }
    };

    Ok(PlanStep { index, task, server, tool, args, dependencies, expected_output })
}

/// Render a plan back to DSL text with markers in canonical order.
///
/// Inverse of [`parse_plan`]: `parse_plan(render_plan(p)) == p` for any
/// invariant-valid plan.
pub fn render_plan(plan: &Plan) -> String {
    let mut out = String::new();
    for (i, step) in plan.steps.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{MARKER_TASK} {}\n", step.task));
        out.push_str(&format!("{MARKER_AGENT} {}\n", step.server));
        out.push_str(&format!("{MARKER_TOOL} {}\n", step.tool));
        out.push_str(&format!(
            "{MARKER_ARGS} {}\n",
            serde_json::to_string(&Value::Object(step.args.clone())).expect("args serialize")
        ));
        let deps = if step.dependencies.is_empty() {
            NONE_SENTINEL.to_string()
        } else {
            step.dependencies
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        out.push_str(&format!("{MARKER_DEPENDENCY} {deps}\n"));
        out.push_str(&format!("{MARKER_EXPECTED} {}\n", step.expected_output));
    }
    out
}

/// Check a plan against a catalog: server/tool existence, tool ownership,
/// required argument keys, dependency direction, sentinel consistency.
///
/// Findings are data, not failures; an empty list means the plan is valid.
pub fn validate_structure(plan: &Plan, catalog: &ToolCatalog) -> Vec<Finding> {
    let mut findings = Vec::new();
    let error = |step: usize, message: String| Finding { severity: Severity::Error, step, message };
    let warning =
        |step: usize, message: String| Finding { severity: Severity::Warning, step, message };

    for step in &plan.steps {
        for &dep in &step.dependencies {
            if dep == step.index {
                findings.push(error(step.index, format!("self dependency on step {dep}")));
            } else if dep > step.index {
                findings.push(error(step.index, format!("forward dependency on step {dep}")));
            }
        }

        let server_none = step.server == NONE_SENTINEL;
        let tool_none = step.tool == NONE_SENTINEL;
        if server_none != tool_none {
            findings.push(warning(
                step.index,
                "server and tool must both be 'none' for a non-actionable step".to_string(),
            ));
        }
        if server_none && tool_none {
            continue;
        }

        let server_name = normalize_server(&step.server);
        let Some(server) = catalog.server(server_name) else {
            findings.push(error(step.index, format!("unknown server '{}'", step.server)));
            continue;
        };
        if !tool_none {
            match server.tool(&step.tool) {
                Some(tool) => {
                    for arg in tool.args.iter().filter(|a| a.required) {
                        if !step.args.contains_key(&arg.key) {
                            findings.push(error(
                                step.index,
                                format!(
                                    "missing required argument key '{}' for {}.{}",
                                    arg.key, server.name, tool.name
                                ),
                            ));
                        }
                    }
                }
                None => {
                    if catalog.owner_of(&step.tool).is_some() {
                        findings.push(error(
                            step.index,
                            format!(
                                "tool '{}' is not owned by server '{}'",
                                step.tool, step.server
                            ),
                        ));
                    } else {
                        findings
                            .push(error(step.index, format!("unknown tool '{}'", step.tool)));
                    }
                }
            }
        }

        // `#Dependency` is authoritative; placeholders pointing elsewhere get a warning.
        for referenced in placeholder_refs(&step.args) {
            if !step.dependencies.contains(&referenced) {
                findings.push(warning(
                    step.index,
                    format!("args reference {{step_{referenced}}} which is not a declared dependency"),
                ));
            }
        }
    }
    findings
}

/// Step indices referenced by `{step_N}` tokens anywhere in an args object.
pub fn placeholder_refs(args: &Map<String, Value>) -> Vec<usize> {
    let mut refs = Vec::new();
    for value in args.values() {
        collect_refs(value, &mut refs);
    }
    refs
}

fn collect_refs(value: &Value, out: &mut Vec<usize>) {
    match value {
        Value::String(s) => out.extend(scan_placeholder_tokens(s).into_iter().map(|(_, _, n)| n)),
        Value::Array(items) => items.iter().for_each(|v| collect_refs(v, out)),
        Value::Object(map) => map.values().for_each(|v| collect_refs(v, out)),
        _ => {}
    }
}

/// Locate every `{step_N}` token in a string as (start, end, N).
pub fn scan_placeholder_tokens(text: &str) -> Vec<(usize, usize, usize)> {
    let mut tokens = Vec::new();
    let mut rest = 0;
    while let Some(pos) = text[rest..].find("{step_") {
        let start = rest + pos;
        let digits_start = start + "{step_".len();
        match text[digits_start..].find('}') {
            Some(close) => {
                let digits = &text[digits_start..digits_start + close];
                if let Ok(n) = digits.parse::<usize>() {
                    tokens.push((start, digits_start + close + 1, n));
                }
                rest = digits_start + close + 1;
            }
            None => break,
        }
    }
    tokens
}

/// Deduplicated `(server, tool)` pairs over actionable steps, names as written.
pub fn extract_actionable_pairs(plan: &Plan) -> BTreeSet<(String, String)> {
    plan.steps
        .iter()
        .filter(|s| s.is_actionable())
        .map(|s| (s.server.clone(), s.tool.clone()))
        .collect()
}
