//! Prompt construction for the two planning conditions, plus token-budget
//! accounting.
//!
//! The preamble and output-format texts are versioned assets under
//! `assets/`; changing them changes every bundle deterministically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{serialize_catalog, ToolCatalog};

pub const PREAMBLE: &str = include_str!("../assets/preamble.txt");
pub const OUTPUT_FORMAT: &str = include_str!("../assets/output_format.txt");

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("informed bundle has zero estimated tokens")]
    ZeroInformedTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Informed,
    DescriptionFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub name: String,
    pub text: String,
    pub token_estimate: usize,
}

/// A fully assembled prompt with per-section token accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub condition: Condition,
    pub text: String,
    /// Sum of the per-section estimates.
    pub token_estimate: usize,
    pub sections: Vec<PromptSection>,
}

/// Pluggable token counter; the default heuristic is `ceil(chars / 4)`.
pub trait TokenEstimator {
    fn estimate(&self, text: &str) -> usize;
}

/// Model-agnostic heuristic: four characters per token, rounded up.
pub struct CharHeuristic;

impl TokenEstimator for CharHeuristic {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

/// Estimate tokens with the default heuristic.
pub fn estimate_tokens(text: &str) -> usize {
    CharHeuristic.estimate(text)
}

fn assemble(
    condition: Condition,
    sections: Vec<(&str, String)>,
    estimator: &dyn TokenEstimator,
) -> PromptBundle {
    let sections: Vec<PromptSection> = sections
        .into_iter()
        .map(|(name, text)| {
            let token_estimate = estimator.estimate(&text);
            PromptSection { name: name.to_string(), text, token_estimate }
        })
        .collect();
    let text = sections
        .iter()
        .map(|s| s.text.trim_end())
        .collect::<Vec<_>>()
        .join("\n\n");
    let token_estimate = sections.iter().map(|s| s.token_estimate).sum();
    PromptBundle { condition, text, token_estimate, sections }
}

/// Schema-informed prompt: preamble, serialized catalog, output format, query.
pub fn build_informed_prompt(
    query: &str,
    catalog: &ToolCatalog,
) -> Result<PromptBundle, PromptError> {
    build_informed_prompt_with(query, catalog, &CharHeuristic)
}

pub fn build_informed_prompt_with(
    query: &str,
    catalog: &ToolCatalog,
    estimator: &dyn TokenEstimator,
) -> Result<PromptBundle, PromptError> {
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    Ok(assemble(
        Condition::Informed,
        vec![
            ("preamble", PREAMBLE.to_string()),
            ("catalog", serialize_catalog(catalog)),
            ("output_format", OUTPUT_FORMAT.to_string()),
            ("query", query.trim().to_string()),
        ],
        estimator,
    ))
}

/// Description-free prompt: the catalog section is removed entirely.
pub fn build_description_free_prompt(query: &str) -> Result<PromptBundle, PromptError> {
    build_description_free_prompt_with(query, &CharHeuristic)
}

pub fn build_description_free_prompt_with(
    query: &str,
    estimator: &dyn TokenEstimator,
) -> Result<PromptBundle, PromptError> {
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    Ok(assemble(
        Condition::DescriptionFree,
        vec![
            ("preamble", PREAMBLE.to_string()),
            ("output_format", OUTPUT_FORMAT.to_string()),
            ("query", query.trim().to_string()),
        ],
        estimator,
    ))
}

/// Fraction of prompt tokens removed by the description-free condition:
/// `1 - free/informed`.
pub fn reduction_ratio(informed: &PromptBundle, free: &PromptBundle) -> Result<f64, PromptError> {
    reduction_ratio_counts(informed.token_estimate, free.token_estimate)
}

/// Reduction ratio over raw token counts.
pub fn reduction_ratio_counts(informed: usize, free: usize) -> Result<f64, PromptError> {
    if informed == 0 {
        return Err(PromptError::ZeroInformedTokens);
    }
    Ok(1.0 - free as f64 / informed as f64)
}
