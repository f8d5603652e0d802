//! The fixed tool catalog: load from JSON, serialize to prompt text, and
//! validate argument objects against tool schemas.
//!
//! Catalog files carry a top-level `servers` array; the schema is documented
//! in `docs/catalog_schema.md`. The catalog is immutable after load and
//! freely shareable across threads.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::plan::{Finding, Severity};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog file not found: {0}")]
    FileNotFound(String),
    #[error("failed to read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog schema violation at {pointer}: {message}")]
    SchemaViolation { pointer: String, message: String },
    #[error("duplicate server '{0}'")]
    DuplicateServer(String),
    #[error("duplicate tool '{tool}' on server '{server}'")]
    DuplicateTool { server: String, tool: String },
}

/// JSON scalar/container types understood by tool argument schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    String,
    Integer,
    Number,
    Boolean,
    Object,
    Array,
}

impl ArgType {
    pub fn matches(&self, value: &Value) -> bool {
        match self {
            ArgType::String => value.is_string(),
            ArgType::Integer => value.as_i64().is_some() || value.as_u64().is_some(),
            ArgType::Number => value.is_number(),
            ArgType::Boolean => value.is_boolean(),
            ArgType::Object => value.is_object(),
            ArgType::Array => value.is_array(),
        }
    }
}

impl fmt::Display for ArgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArgType::String => "string",
            ArgType::Integer => "integer",
            ArgType::Number => "number",
            ArgType::Boolean => "boolean",
            ArgType::Object => "object",
            ArgType::Array => "array",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub key: String,
    #[serde(rename = "type")]
    pub arg_type: ArgType,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub server: String,
    pub description: String,
    pub args: Vec<ArgSpec>,
    pub returns: String,
}

impl ToolSpec {
    /// One-line signature, e.g. `assets(site_name: string)`.
    pub fn signature(&self) -> String {
        let params = self
            .args
            .iter()
            .map(|a| {
                if a.required {
                    format!("{}: {}", a.key, a.arg_type)
                } else {
                    format!("{}?: {}", a.key, a.arg_type)
                }
            })
            .collect::<Vec<_>>()
            .join(", ");
        format!("{}({})", self.name, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub name: String,
    pub description: String,
    pub tools: Vec<ToolSpec>,
}

impl ServerSpec {
    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCatalog {
    pub version: String,
    pub servers: Vec<ServerSpec>,
}

impl ToolCatalog {
    pub fn server(&self, name: &str) -> Option<&ServerSpec> {
        self.servers.iter().find(|s| s.name == name)
    }

    /// The server owning a tool name, if any.
    pub fn owner_of(&self, tool: &str) -> Option<&ServerSpec> {
        self.servers.iter().find(|s| s.tool(tool).is_some())
    }

    pub fn tool_count(&self) -> usize {
        self.servers.iter().map(|s| s.tools.len()).sum()
    }

    pub fn tools(&self) -> impl Iterator<Item = &ToolSpec> {
        self.servers.iter().flat_map(|s| s.tools.iter())
    }

    fn check_invariants(&self) -> Result<(), CatalogError> {
        let mut seen_servers = std::collections::HashSet::new();
        for server in &self.servers {
            if !seen_servers.insert(server.name.as_str()) {
                return Err(CatalogError::DuplicateServer(server.name.clone()));
            }
            let mut seen_tools = std::collections::HashSet::new();
            for tool in &server.tools {
                if !seen_tools.insert(tool.name.as_str()) {
                    return Err(CatalogError::DuplicateTool {
                        server: server.name.clone(),
                        tool: tool.name.clone(),
                    });
                }
                let mut seen_keys = std::collections::HashSet::new();
                for arg in &tool.args {
                    if !seen_keys.insert(arg.key.as_str()) {
                        return Err(CatalogError::SchemaViolation {
                            pointer: format!("/servers/{}/tools/{}", server.name, tool.name),
                            message: format!("duplicate argument key '{}'", arg.key),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parse catalog JSON and reject invariant violations.
pub fn parse_catalog(json: &str) -> Result<ToolCatalog, CatalogError> {
    let mut catalog: ToolCatalog =
        serde_json::from_str(json).map_err(|e| CatalogError::SchemaViolation {
            pointer: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
    // Denormalize ownership onto each tool.
    for server in &mut catalog.servers {
        let name = server.name.clone();
        for tool in &mut server.tools {
            tool.server = name.clone();
        }
    }
    catalog.check_invariants()?;
    Ok(catalog)
}

/// Load and validate a `*.catalog.json` file.
pub fn load_catalog(path: &Path) -> Result<ToolCatalog, CatalogError> {
    if !path.exists() {
        return Err(CatalogError::FileNotFound(path.display().to_string()));
    }
    parse_catalog(&std::fs::read_to_string(path)?)
}

/// The catalog shipped with the harness: 5 servers, 23 tools.
pub fn fixture_catalog() -> ToolCatalog {
    parse_catalog(include_str!("../fixtures/assetops.catalog.json"))
        .expect("fixture catalog is valid")
}

/// Serialize the catalog into deterministic prompt text: servers in
/// declaration order, each tool with its signature, argument list,
/// description, and return type.
pub fn serialize_catalog(catalog: &ToolCatalog) -> String {
    let mut out = String::new();
    out.push_str(&format!("## Tool Catalog (version {})\n", catalog.version));
    for server in &catalog.servers {
        out.push('\n');
        out.push_str(&format!("### MCP Server: {}\n", server.name));
        out.push_str(&format!("{}\n", server.description));
        for tool in &server.tools {
            out.push('\n');
            out.push_str(&format!("- {}.{}\n", server.name, tool.signature()));
            for arg in &tool.args {
                let req = if arg.required { "required" } else { "optional" };
                out.push_str(&format!("    arg {}: {} ({})\n", arg.key, arg.arg_type, req));
            }
            out.push_str(&format!("    returns: {}\n", tool.returns));
            out.push_str(&format!("    {}\n", tool.description));
        }
    }
    out
}

/// Check an argument object against a tool schema: missing required keys,
/// unknown keys, and type mismatches. Empty means valid.
pub fn validate_args(tool: &ToolSpec, args: &Map<String, Value>) -> Vec<Finding> {
    let mut findings = Vec::new();
    for arg in &tool.args {
        match args.get(&arg.key) {
            None if arg.required => findings.push(Finding {
                severity: Severity::Error,
                step: 0,
                message: format!("missing required key {}", arg.key),
            }),
            Some(value) if !arg.arg_type.matches(value) => findings.push(Finding {
                severity: Severity::Error,
                step: 0,
                message: format!(
                    "key {} expects {}, got {}",
                    arg.key,
                    arg.arg_type,
                    json_type_name(value)
                ),
            }),
            _ => {}
        }
    }
    for key in args.keys() {
        if !tool.args.iter().any(|a| &a.key == key) {
            findings.push(Finding {
                severity: Severity::Error,
                step: 0,
                message: format!("unknown key {key}"),
            });
        }
    }
    findings
}

fn json_type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Unordered tool-name pairs whose common-prefix similarity reaches the
/// threshold, sorted by descending similarity (then name, for determinism).
///
/// Similarity is `2 * lcp / (|a| + |b|)`: the shared prefix length
/// normalized by mean name length. Used to mine hard-negative pairs like
/// `get_failure_modes` vs `get_failure_mode_sensor_mapping`.
pub fn near_miss_pairs(catalog: &ToolCatalog, threshold: f64) -> Vec<(String, String, f64)> {
    let names: Vec<&str> = catalog.tools().map(|t| t.name.as_str()).collect();
    let mut pairs = Vec::new();
    for i in 0..names.len() {
        for j in (i + 1)..names.len() {
            let sim = prefix_similarity(names[i], names[j]);
            if sim >= threshold {
                let (a, b) = if names[i] <= names[j] {
                    (names[i], names[j])
                } else {
                    (names[j], names[i])
                };
                pairs.push((a.to_string(), b.to_string(), sim));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap()
            .then_with(|| x.0.cmp(&y.0))
            .then_with(|| x.1.cmp(&y.1))
    });
    pairs
}

/// Default near-miss threshold.
pub const NEAR_MISS_THRESHOLD: f64 = 0.6;

fn prefix_similarity(a: &str, b: &str) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let lcp = a
        .bytes()
        .zip(b.bytes())
        .take_while(|(x, y)| x == y)
        .count();
    (2.0 * lcp as f64) / (a.len() + b.len()) as f64
}
