//! Mock MCP execution environment.
//!
//! Runs a plan against stub tool handlers, resolving `{step_N}` placeholders
//! and enforcing dependency order. Execution is sequential and halts at the
//! first failure; stub outputs are canned JSON fixtures, so runs are fully
//! deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::{validate_args, ToolCatalog};
use crate::plan::{normalize_server, scan_placeholder_tokens, Plan, Severity};

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("step {step}: dependency on step {dependency} is a forward reference")]
    ForwardDependency { step: usize, dependency: usize },
    #[error("step {step}: depends on itself")]
    SelfDependency { step: usize },
    #[error("no handler registered for {server}.{tool}")]
    UnknownHandler { server: String, tool: String },
    #[error("handler target {server}.{tool} does not exist in the catalog")]
    NotInCatalog { server: String, tool: String },
    #[error("unresolved placeholder {{step_{reference}}}")]
    UnresolvedPlaceholder { reference: usize },
    #[error("argument validation failed: {0}")]
    ArgValidation(String),
}

type Handler = Box<dyn Fn(&Map<String, Value>) -> Value + Send + Sync>;

/// Stub responders keyed by normalized `(server, tool)`, backed by the
/// catalog for schema checks.
pub struct ToolRegistry {
    catalog: ToolCatalog,
    handlers: BTreeMap<(String, String), Handler>,
}

impl ToolRegistry {
    pub fn new(catalog: ToolCatalog) -> Self {
        ToolRegistry { catalog, handlers: BTreeMap::new() }
    }

    pub fn catalog(&self) -> &ToolCatalog {
        &self.catalog
    }

    /// Register a handler; the (server, tool) pair must exist in the catalog.
    pub fn register<F>(&mut self, server: &str, tool: &str, handler: F) -> Result<(), ExecError>
    where
        F: Fn(&Map<String, Value>) -> Value + Send + Sync + 'static,
    {
        let server = normalize_server(server).to_string();
        let exists = self
            .catalog
            .server(&server)
            .map(|s| s.tool(tool).is_some())
            .unwrap_or(false);
        if !exists {
            return Err(ExecError::NotInCatalog { server, tool: tool.to_string() });
        }
        self.handlers.insert((server, tool.to_string()), Box::new(handler));
        Ok(())
    }

    /// Build a registry of canned responses from fixture JSON: an object
    /// mapping `"Server.tool"` to the value the stub returns.
    pub fn from_fixture_json(catalog: ToolCatalog, json: &str) -> Result<Self, ExecError> {
        let canned: BTreeMap<String, Value> = serde_json::from_str(json)
            .map_err(|e| ExecError::ArgValidation(format!("bad registry fixture: {e}")))?;
        let mut registry = ToolRegistry::new(catalog);
        for (key, output) in canned {
            let (server, tool) = key.split_once('.').ok_or_else(|| {
                ExecError::ArgValidation(format!("registry key '{key}' is not Server.tool"))
            })?;
            let value = output.clone();
            registry.register(server, tool, move |_args| value.clone())?;
        }
        Ok(registry)
    }

    /// Registry covering every tool in the shipped fixture catalog.
    pub fn fixture_registry() -> Self {
        Self::from_fixture_json(
            crate::catalog::fixture_catalog(),
            include_str!("../fixtures/assetops.registry.json"),
        )
        .expect("fixture registry is valid")
    }

    fn handler(&self, server: &str, tool: &str) -> Option<&Handler> {
        self.handlers.get(&(normalize_server(server).to_string(), tool.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    Failed { step: usize, reason: String },
}

/// Outcome of running a plan: per-step outputs and post-substitution args.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub step_outputs: BTreeMap<usize, Value>,
    pub status: ExecStatus,
    pub resolved_args: BTreeMap<usize, Map<String, Value>>,
}

impl ExecutionResult {
    pub fn succeeded(&self) -> bool {
        self.status == ExecStatus::Success
    }

    /// One JSONL line per executed step: step, server, tool, resolved args,
    /// output.
    pub fn to_trace_jsonl(&self, plan: &Plan) -> String {
        let mut out = String::new();
        for step in &plan.steps {
            let Some(output) = self.step_outputs.get(&step.index) else { continue };
            let record = serde_json::json!({
                "step": step.index,
                "server": step.server,
                "tool": step.tool,
                "resolved_args": self.resolved_args.get(&step.index).cloned().unwrap_or_default(),
                "output": output,
            });
            out.push_str(&serde_json::to_string(&record).expect("trace record"));
            out.push('\n');
        }
        out
    }
}

/// Verify every dependency is a strict backward reference and return the
/// execution order, which is the plan's own step order.
pub fn check_dependencies(plan: &Plan) -> Result<Vec<usize>, ExecError> {
    for step in &plan.steps {
        for &dep in &step.dependencies {
            if dep == step.index {
                return Err(ExecError::SelfDependency { step: step.index });
            }
            if dep > step.index {
                return Err(ExecError::ForwardDependency { step: step.index, dependency: dep });
            }
        }
    }
    Ok(plan.steps.iter().map(|s| s.index).collect())
}

/// Substitute `{step_N}` placeholders using earlier step outputs.
///
/// A value that is exactly `"{step_N}"` is replaced by output N verbatim,
/// preserving structure; a string merely containing the token has the
/// substring replaced by the output's text rendering.
pub fn resolve_placeholders(
    args: &Map<String, Value>,
    outputs: &BTreeMap<usize, Value>,
) -> Result<Map<String, Value>, ExecError> {
    let mut resolved = Map::new();
    for (key, value) in args {
        resolved.insert(key.clone(), resolve_value(value, outputs)?);
    }
    Ok(resolved)
}

fn resolve_value(value: &Value, outputs: &BTreeMap<usize, Value>) -> Result<Value, ExecError> {
    match value {
        Value::String(s) => {
            let tokens = scan_placeholder_tokens(s);
            if tokens.is_empty() {
                return Ok(value.clone());
            }
            // Whole-value substitution keeps the referenced output's structure.
            if tokens.len() == 1 && tokens[0].0 == 0 && tokens[0].1 == s.len() {
                let n = tokens[0].2;
                return outputs
                    .get(&n)
                    .cloned()
                    .ok_or(ExecError::UnresolvedPlaceholder { reference: n });
            }
            let mut result = String::new();
            let mut cursor = 0;
            for (start, end, n) in tokens {
                let output = outputs
                    .get(&n)
                    .ok_or(ExecError::UnresolvedPlaceholder { reference: n })?;
                result.push_str(&s[cursor..start]);
                result.push_str(&render_text(output));
                cursor = end;
            }
            result.push_str(&s[cursor..]);
            Ok(Value::String(result))
        }
        Value::Array(items) => Ok(Value::Array(
            items
                .iter()
                .map(|v| resolve_value(v, outputs))
                .collect::<Result<_, _>>()?,
        )),
        Value::Object(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                out.insert(k.clone(), resolve_value(v, outputs)?);
            }
            Ok(Value::Object(out))
        }
        _ => Ok(value.clone()),
    }
}

/// Text rendering used for embedded substitution: bare strings stay unquoted,
/// everything else is compact JSON.
fn render_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => serde_json::to_string(other).expect("value renders"),
    }
}

/// Execute a plan sequentially against the registry.
///
/// Per step: resolve placeholders, validate args against the tool schema,
/// invoke the stub, record the output. Non-actionable steps record a null
/// output and are not invoked. Execution halts at the first failure.
pub fn execute_plan(plan: &Plan, registry: &ToolRegistry) -> ExecutionResult {
    let mut result = ExecutionResult {
        step_outputs: BTreeMap::new(),
        status: ExecStatus::Success,
        resolved_args: BTreeMap::new(),
    };

    let order = match check_dependencies(plan) {
        Ok(order) => order,
        Err(e) => {
            let step = plan.steps.first().map(|s| s.index).unwrap_or(0);
            result.status = ExecStatus::Failed { step, reason: e.to_string() };
            return result;
        }
    };

    for index in order {
        let step = &plan.steps[index - 1];
        if !step.is_actionable() {
            result.step_outputs.insert(step.index, Value::Null);
            continue;
        }

        let args = match resolve_placeholders(&step.args, &result.step_outputs) {
            Ok(args) => args,
            Err(e) => {
                result.status = ExecStatus::Failed { step: step.index, reason: e.to_string() };
                return result;
            }
        };

        let server = normalize_server(&step.server);
        let schema = registry
            .catalog
            .server(server)
            .and_then(|s| s.tool(&step.tool));
        if let Some(schema) = schema {
            let errors: Vec<String> = validate_args(schema, &args)
                .into_iter()
                .filter(|f| f.severity == Severity::Error)
                .map(|f| f.message)
                .collect();
            if !errors.is_empty() {
                result.status = ExecStatus::Failed {
                    step: step.index,
                    reason: ExecError::ArgValidation(errors.join("; ")).to_string(),
                };
                return result;
            }
        }

        let Some(handler) = registry.handler(&step.server, &step.tool) else {
            result.status = ExecStatus::Failed {
                step: step.index,
                reason: ExecError::UnknownHandler {
                    server: step.server.clone(),
                    tool: step.tool.clone(),
                }
                .to_string(),
            };
            return result;
        };

        let output = handler(&args);
        result.resolved_args.insert(step.index, args);
        result.step_outputs.insert(step.index, output);
    }

    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{parse_plan, Plan, PlanStep};

    fn gold_114() -> Plan {
        parse_plan(include_str!("../fixtures/scenario-114.plan")).unwrap()
    }

    fn bare_step(index: usize, server: &str, tool: &str) -> PlanStep {
        PlanStep {
            index,
            task: "t".into(),
            server: server.into(),
            tool: tool.into(),
            args: Map::new(),
            dependencies: vec![],
            expected_output: "o".into(),
        }
    }

    #[test]
    fn dependency_order_for_gold_plan() {
        assert_eq!(check_dependencies(&gold_114()).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(check_dependencies(&Plan::from_steps(vec![])).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn forward_and_self_dependencies_detected() {
        let mut fwd = bare_step(2, "none", "none");
        fwd.dependencies = vec![3];
        let plan = Plan::from_steps(vec![bare_step(1, "none", "none"), fwd]);
        assert_eq!(
            check_dependencies(&plan),
            Err(ExecError::ForwardDependency { step: 2, dependency: 3 })
        );

        let mut selfdep = bare_step(1, "none", "none");
        selfdep.dependencies = vec![1];
        assert_eq!(
            check_dependencies(&Plan::from_steps(vec![selfdep])),
            Err(ExecError::SelfDependency { step: 1 })
        );
    }

    #[test]
    fn whole_value_substitution_preserves_structure() {
        let args: Map<String, Value> = serde_json::from_str(r#"{"sensors":"{step_2}"}"#).unwrap();
        let mut outputs = BTreeMap::new();
        outputs.insert(2, serde_json::json!(["T1", "P1"]));
        let resolved = resolve_placeholders(&args, &outputs).unwrap();
        assert_eq!(resolved["sensors"], serde_json::json!(["T1", "P1"]));
    }

    #[test]
    fn embedded_substitution_uses_text_rendering() {
        let args: Map<String, Value> =
            serde_json::from_str(r#"{"note":"use {step_1} data"}"#).unwrap();
        let mut outputs = BTreeMap::new();
        outputs.insert(1, Value::String("A6".into()));
        let resolved = resolve_placeholders(&args, &outputs).unwrap();
        assert_eq!(resolved["note"], Value::String("use A6 data".into()));
    }

    #[test]
    fn args_without_placeholders_unchanged() {
        let args: Map<String, Value> =
            serde_json::from_str(r#"{"site_name":"MAIN","n":3}"#).unwrap();
        let resolved = resolve_placeholders(&args, &BTreeMap::new()).unwrap();
        assert_eq!(Value::Object(resolved), serde_json::json!({"site_name":"MAIN","n":3}));
    }

    #[test]
    fn missing_output_is_unresolved() {
        let args: Map<String, Value> = serde_json::from_str(r#"{"x":"{step_9}"}"#).unwrap();
        assert_eq!(
            resolve_placeholders(&args, &BTreeMap::new()),
            Err(ExecError::UnresolvedPlaceholder { reference: 9 })
        );
    }

    #[test]
    fn gold_plan_executes_on_fixture_registry() {
        let registry = ToolRegistry::fixture_registry();
        let plan = gold_114();
        let result = execute_plan(&plan, &registry);
        assert!(result.succeeded(), "status: {:?}", result.status);
        assert_eq!(result.step_outputs.len(), 4);

        // Step 4 consumed the outputs of steps 2 and 3.
        let step4 = &result.resolved_args[&4];
        assert_eq!(step4["sensors"], result.step_outputs[&2]);
        assert_eq!(step4["failure_modes"], result.step_outputs[&3]);
        let rendered = serde_json::to_string(&result.resolved_args).unwrap();
        assert!(!rendered.contains("{step_"));
    }

    #[test]
    fn unknown_handler_fails_at_first_step() {
        let registry = ToolRegistry::new(crate::catalog::fixture_catalog());
        let mut step = bare_step(1, "IoT", "assets");
        step.args.insert("site_name".into(), Value::String("MAIN".into()));
        let result = execute_plan(&Plan::from_steps(vec![step]), &registry);
        match result.status {
            ExecStatus::Failed { step: 1, ref reason } => {
                assert!(reason.contains("no handler registered"))
            }
            ref other => panic!("expected failure, got {other:?}"),
        }
        assert!(result.step_outputs.is_empty());
    }

    #[test]
    fn nonexistent_tool_cannot_be_registered() {
        let mut registry = ToolRegistry::new(crate::catalog::fixture_catalog());
        let err = registry.register("IoT", "nonexistent", |_| Value::Null).unwrap_err();
        assert_eq!(
            err,
            ExecError::NotInCatalog { server: "IoT".into(), tool: "nonexistent".into() }
        );
    }

    #[test]
    fn unresolved_placeholder_halts_execution() {
        let registry = ToolRegistry::fixture_registry();
        let mut s1 = bare_step(1, "IoT", "list_sites");
        s1.args = Map::new();
        let mut s2 = bare_step(2, "IoT", "assets");
        s2.args.insert("site_name".into(), Value::String("{step_3}".into()));
        s2.dependencies = vec![1];
        let s3 = bare_step(3, "none", "none");
        let result = execute_plan(&Plan::from_steps(vec![s1, s2, s3]), &registry);
        match result.status {
            ExecStatus::Failed { step: 2, ref reason } => {
                assert!(reason.contains("unresolved placeholder"))
            }
            ref other => panic!("expected failure at step 2, got {other:?}"),
        }
        // Nothing after the failed step executed.
        assert!(!result.step_outputs.contains_key(&3));
    }

    #[test]
    fn arg_validation_failure_halts() {
        let registry = ToolRegistry::fixture_registry();
        let step = bare_step(1, "IoT", "assets");
        let result = execute_plan(&Plan::from_steps(vec![step]), &registry);
        match result.status {
            ExecStatus::Failed { step: 1, ref reason } => {
                assert!(reason.contains("missing required key site_name"))
            }
            ref other => panic!("expected arg failure, got {other:?}"),
        }
    }

    #[test]
    fn non_actionable_steps_record_null() {
        let registry = ToolRegistry::fixture_registry();
        let plan = Plan::from_steps(vec![bare_step(1, "none", "none")]);
        let result = execute_plan(&plan, &registry);
        assert!(result.succeeded());
        assert_eq!(result.step_outputs[&1], Value::Null);
    }

    #[test]
    fn execution_is_deterministic() {
        let registry = ToolRegistry::fixture_registry();
        let plan = gold_114();
        assert_eq!(execute_plan(&plan, &registry), execute_plan(&plan, &registry));
    }

    #[test]
    fn trace_jsonl_has_one_line_per_executed_step() {
        let registry = ToolRegistry::fixture_registry();
        let plan = gold_114();
        let result = execute_plan(&plan, &registry);
        let trace = result.to_trace_jsonl(&plan);
        assert_eq!(trace.lines().count(), 4);
    }
}
