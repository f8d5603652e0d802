//! Structural plan metrics: set-based F1 over (server, tool) pairs, argument
//! key F1 over matched tool calls, routing and tool-selection accuracy, and
//! report aggregation.
//!
//! Server names are normalized (trailing `Agent` stripped) before comparison
//! so that `IoTAgent` in a plan matches `IoT` in another.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{normalize_server, Plan};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty row set")]
    EmptyRowSet,
}

/// Precision/recall/F1 over a pair of sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub gold_size: usize,
    pub candidate_size: usize,
}

impl PairScore {
    fn from_counts(matched: usize, gold_size: usize, candidate_size: usize) -> Self {
        // Both sides empty: a plan correctly containing nothing is a perfect match.
        if gold_size == 0 && candidate_size == 0 {
            return PairScore {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                matched: 0,
                gold_size,
                candidate_size,
            };
        }
        let precision = if candidate_size > 0 { matched as f64 / candidate_size as f64 } else { 0.0 };
        let recall = if gold_size > 0 { matched as f64 / gold_size as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PairScore { precision, recall, f1, matched, gold_size, candidate_size }
    }
}

/// Normalized (server, tool) pairs over actionable steps.
fn normalized_pairs(plan: &Plan) -> BTreeSet<(String, String)> {
    plan.steps
        .iter()
        .filter(|s| s.is_actionable())
        .map(|s| (normalize_server(&s.server).to_string(), s.tool.clone()))
        .collect()
}

/// Set-based F1 over (server, tool) pairs from actionable steps.
pub fn at_f1(gold: &Plan, candidate: &Plan) -> PairScore {
    let gold_pairs = normalized_pairs(gold);
    let cand_pairs = normalized_pairs(candidate);
    let matched = gold_pairs.intersection(&cand_pairs).count();
    PairScore::from_counts(matched, gold_pairs.len(), cand_pairs.len())
}

/// Union of argument keys across every actionable step using a given pair.
fn arg_keys_by_pair(plan: &Plan) -> BTreeMap<(String, String), BTreeSet<String>> {
    let mut map: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for step in plan.steps.iter().filter(|s| s.is_actionable()) {
        let pair = (normalize_server(&step.server).to_string(), step.tool.clone());
        map.entry(pair).or_default().extend(step.args.keys().cloned());
    }
    map
}

/// Micro-averaged F1 over argument key names for matched (server, tool) pairs.
///
/// When a pair occurs multiple times in a plan, the union of its arg keys is
/// compared. No matched pairs scores 0 unless neither plan has actionable
/// steps, which scores 1.
pub fn argkey_f1(gold: &Plan, candidate: &Plan) -> PairScore {
    let gold_keys = arg_keys_by_pair(gold);
    let cand_keys = arg_keys_by_pair(candidate);

    if gold_keys.is_empty() && cand_keys.is_empty() {
        return PairScore::from_counts(0, 0, 0);
    }

    let mut matched = 0usize;
    let mut gold_total = 0usize;
    let mut cand_total = 0usize;
    let mut any_pair = false;
    for (pair, gk) in &gold_keys {
        let Some(ck) = cand_keys.get(pair) else { continue };
        any_pair = true;
        matched += gk.intersection(ck).count();
        gold_total += gk.len();
        cand_total += ck.len();
    }
    if !any_pair {
        return PairScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            matched: 0,
            gold_size: 0,
            candidate_size: 0,
        };
    }
    PairScore::from_counts(matched, gold_total, cand_total)
}

/// Fraction of gold actionable pairs whose server appears among candidate
/// servers (server-level recall).
pub fn routing_accuracy(gold: &Plan, candidate: &Plan) -> f64 {
    let gold_pairs = normalized_pairs(gold);
    if gold_pairs.is_empty() {
        return 1.0;
    }
    let gold_servers: BTreeSet<String> = gold_pairs.iter().map(|(s, _)| s.clone()).collect();
    let cand_servers: BTreeSet<String> =
        normalized_pairs(candidate).into_iter().map(|(s, _)| s).collect();
    let hit = gold_servers.iter().filter(|s| cand_servers.contains(*s)).count();
    hit as f64 / gold_servers.len() as f64
}

/// Fraction of gold actionable (server, tool) pairs present in the candidate
/// (pair-level recall).
pub fn tool_selection_accuracy(gold: &Plan, candidate: &Plan) -> f64 {
    let gold_pairs = normalized_pairs(gold);
    if gold_pairs.is_empty() {
        return 1.0;
    }
    let cand_pairs = normalized_pairs(candidate);
    let hit = gold_pairs.intersection(&cand_pairs).count();
    hit as f64 / gold_pairs.len() as f64
}

/// Per-scenario evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario_id: String,
    pub at: PairScore,
    pub argkey: PairScore,
    pub routing_accuracy: f64,
    pub tool_selection_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_overall: Option<f64>,
}

/// Arithmetic means over the evaluated scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub at_f1: f64,
    pub argkey_f1: f64,
    pub routing_accuracy: f64,
    pub tool_selection_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_overall: Option<f64>,
    pub scenario_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ScenarioRow>,
    pub aggregate: Aggregate,
}

/// Aggregate per-scenario rows into a report. Judge means are taken over the
/// rows that carry a judge score.
pub fn aggregate_report(rows: Vec<ScenarioRow>) -> Result<EvalReport, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::EmptyRowSet);
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&ScenarioRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let judged: Vec<f64> = rows.iter().filter_map(|r| r.judge_overall).collect();
    let aggregate = Aggregate {
        at_f1: mean(&|r| r.at.f1),
        argkey_f1: mean(&|r| r.argkey.f1),
        routing_accuracy: mean(&|r| r.routing_accuracy),
        tool_selection_accuracy: mean(&|r| r.tool_selection_accuracy),
        judge_overall: if judged.is_empty() {
            None
        } else {
            Some(judged.iter().sum::<f64>() / judged.len() as f64)
        },
        scenario_count: rows.len(),
    };
    Ok(EvalReport { rows, aggregate })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV with one row per scenario; columns documented in
    /// `docs/report_columns.md`.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record([
                "scenario_id",
                "at_precision",
                "at_recall",
                "at_f1",
                "argkey_precision",
                "argkey_recall",
                "argkey_f1",
                "routing_accuracy",
                "tool_selection_accuracy",
                "judge_overall",
            ])
            .expect("csv header");
        for row in &self.rows {
            writer
                .write_record([
                    row.scenario_id.clone(),
                    format!("{:.6}", row.at.precision),
                    format!("{:.6}", row.at.recall),
                    format!("{:.6}", row.at.f1),
                    format!("{:.6}", row.argkey.precision),
                    format!("{:.6}", row.argkey.recall),
                    format!("{:.6}", row.argkey.f1),
                    format!("{:.6}", row.routing_accuracy),
                    format!("{:.6}", row.tool_selection_accuracy),
                    row.judge_overall.map(|j| format!("{j:.6}")).unwrap_or_default(),
                ])
                .expect("csv row");
        }
        String::from_utf8(writer.into_inner().expect("csv buffer")).expect("csv utf8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{parse_plan, Plan, PlanStep};
    use serde_json::{Map, Value};

    fn step(index: usize, server: &str, tool: &str, keys: &[&str]) -> PlanStep {
        let mut args = Map::new();
        for k in keys {
            args.insert(k.to_string(), Value::String("v".into()));
        }
        PlanStep {
            index,
            task: format!("t{index}"),
            server: server.into(),
            tool: tool.into(),
            args,
            dependencies: vec![],
            expected_output: "o".into(),
        }
    }

    fn plan(steps: Vec<PlanStep>) -> Plan {
        Plan::from_steps(steps)
    }

    fn gold_114() -> Plan {
        parse_plan(include_str!("../fixtures/scenario-114.plan")).unwrap()
    }

    #[test]
    fn identical_plans_score_one() {
        let g = gold_114();
        let s = at_f1(&g, &g.clone());
        assert_eq!(s.f1, 1.0);
        assert_eq!(s.matched, 4);
        assert_eq!(argkey_f1(&g, &g).f1, 1.0);
        assert_eq!(routing_accuracy(&g, &g), 1.0);
        assert_eq!(tool_selection_accuracy(&g, &g), 1.0);
    }

    #[test]
    fn three_of_four_plus_extra_scores_three_quarters() {
        let g = gold_114();
        let c = plan(vec![
            step(1, "IoTAgent", "assets", &[]),
            step(2, "IoTAgent", "sensors", &[]),
            step(3, "FMSRAgent", "get_failure_modes", &[]),
            step(4, "TSFM", "forecast", &[]),
        ]);
        let s = at_f1(&g, &c);
        assert!((s.precision - 0.75).abs() < 1e-12);
        assert!((s.recall - 0.75).abs() < 1e-12);
        assert!((s.f1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn both_empty_scores_one() {
        let e = plan(vec![step(1, "none", "none", &[])]);
        assert_eq!(at_f1(&e, &e.clone()).f1, 1.0);
        assert_eq!(argkey_f1(&e, &e).f1, 1.0);
    }

    #[test]
    fn one_empty_scores_zero() {
        let g = gold_114();
        let e = plan(vec![step(1, "none", "none", &[])]);
        assert_eq!(at_f1(&g, &e).f1, 0.0);
        assert_eq!(at_f1(&e, &g).f1, 0.0);
    }

    #[test]
    fn server_suffix_normalization_matches() {
        let g = plan(vec![step(1, "IoTAgent", "assets", &[])]);
        let c = plan(vec![step(1, "IoT", "assets", &[])]);
        assert_eq!(at_f1(&g, &c).f1, 1.0);
    }

    #[test]
    fn argkey_partial_recall() {
        let g = plan(vec![step(1, "IoT", "sensors", &["site_name", "asset_id"])]);
        let c = plan(vec![step(1, "IoT", "sensors", &["site_name"])]);
        let s = argkey_f1(&g, &c);
        assert!((s.precision - 1.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn argkey_micro_average_over_two_pairs() {
        // Pair one: 2-of-2 keys correct. Pair two: candidate has 1 wrong key, gold has 2.
        let g = plan(vec![
            step(1, "IoT", "assets", &["a", "b"]),
            step(2, "IoT", "sensors", &["c", "d"]),
        ]);
        let c = plan(vec![
            step(1, "IoT", "assets", &["a", "b"]),
            step(2, "IoT", "sensors", &["e"]),
        ]);
        let s = argkey_f1(&g, &c);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn argkey_no_matched_pairs_scores_zero() {
        let g = plan(vec![step(1, "IoT", "assets", &["a"])]);
        let c = plan(vec![step(1, "TSFM", "forecast", &["b"])]);
        assert_eq!(argkey_f1(&g, &c).f1, 0.0);
    }

    #[test]
    fn routing_recall_over_servers() {
        let g = plan(vec![
            step(1, "IoTAgent", "assets", &[]),
            step(2, "FMSRAgent", "get_failure_modes", &[]),
        ]);
        let c = plan(vec![step(1, "IoTAgent", "assets", &[])]);
        assert!((routing_accuracy(&g, &c) - 0.5).abs() < 1e-12);
        let empty = plan(vec![step(1, "none", "none", &[])]);
        assert_eq!(routing_accuracy(&g, &empty), 0.0);
    }

    #[test]
    fn duplicated_steps_do_not_change_metrics() {
        let g = gold_114();
        let mut doubled = g.clone();
        let mut extra = g.steps.clone();
        for (i, s) in extra.iter_mut().enumerate() {
            s.index = g.steps.len() + i + 1;
            s.dependencies.clear();
        }
        doubled.steps.extend(extra);
        assert_eq!(at_f1(&g, &doubled), at_f1(&g, &g));
        assert_eq!(argkey_f1(&g, &doubled), argkey_f1(&g, &g));
    }

    #[test]
    fn aggregate_means() {
        let row = |id: &str, f1: f64| ScenarioRow {
            scenario_id: id.into(),
            at: PairScore { precision: f1, recall: f1, f1, matched: 0, gold_size: 0, candidate_size: 0 },
            argkey: PairScore { precision: 0.0, recall: 0.0, f1: 0.0, matched: 0, gold_size: 0, candidate_size: 0 },
            routing_accuracy: 1.0,
            tool_selection_accuracy: 1.0,
            judge_overall: None,
        };
        let report = aggregate_report(vec![row("a", 0.5), row("b", 1.0)]).unwrap();
        assert!((report.aggregate.at_f1 - 0.75).abs() < 1e-12);

        let single = aggregate_report(vec![row("a", 0.4)]).unwrap();
        assert!((single.aggregate.at_f1 - 0.4).abs() < 1e-12);

        assert!(matches!(aggregate_report(vec![]), Err(MetricsError::EmptyRowSet)));
    }

    #[test]
    fn csv_has_header_and_one_row_per_scenario() {
        let row = ScenarioRow {
            scenario_id: "s1".into(),
            at: at_f1(&gold_114(), &gold_114()),
            argkey: argkey_f1(&gold_114(), &gold_114()),
            routing_accuracy: 1.0,
            tool_selection_accuracy: 1.0,
            judge_overall: Some(3.5),
        };
        let report = aggregate_report(vec![row]).unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("scenario_id,"));
    }
}
