//! Command-line entry point for the tool-planning harness.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage/input error. Every
//! command is deterministic given identical inputs and seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use toolplan::catalog::{load_catalog, ToolCatalog};
use toolplan::dataset::{
    assemble_config, build_execution_examples, build_plan_examples,
    build_tool_knowledge_examples, examples_to_jsonl, read_scenarios, scan_leakage, Config,
    DatasetError, Scenario, SftKind, SplitManifest,
};
use toolplan::executor::{execute_plan, ExecStatus, ToolRegistry};
use toolplan::llm::{
    judge_plans, offline_mcq_judge, offline_plan_judge, run_retention, ChatClient, HttpChatClient,
    McqItem, DEFAULT_JUDGE_CONCURRENCY,
};
use toolplan::metrics::{
    aggregate_report, argkey_f1, at_f1, routing_accuracy, tool_selection_accuracy, ScenarioRow,
};
use toolplan::plan::{parse_plan, Plan};
use toolplan::prompts::{
    build_description_free_prompt, build_informed_prompt, reduction_ratio, Condition,
};

#[derive(Parser)]
#[command(name = "toolplan", version, about = "Fixed-catalog tool-planning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stratified scenario split into train/test manifest
    Split(SplitArgs),
    /// Build SFT training data for a configuration
    BuildData(BuildDataArgs),
    /// Build a prompt bundle for one question
    BuildPrompts(BuildPromptsArgs),
    /// Score candidate plans against gold plans
    Evaluate(EvaluateArgs),
    /// Run a plan on the mock tool registry
    Execute(ExecuteArgs),
    /// Grade MCQ retention between base and fine-tuned responses
    Retention(RetentionArgs),
    /// Summarize an evaluation report
    Report(ReportArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Scenario corpus JSONL
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Test fraction in (0, 1)
    #[arg(long, default_value_t = 0.2)]
    fraction: f64,
    /// Manifest output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildDataArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Training configuration: A (plan-only), B (tool-only), C (tool+plan)
    #[arg(long)]
    config: Config,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    eval_fraction: f64,
    /// Skip paraphrase expansion of plan examples
    #[arg(long)]
    no_paraphrases: bool,
    /// Output directory (train.jsonl, eval.jsonl, stats.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildPromptsArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// The user question
    #[arg(long)]
    question: String,
    /// informed or description-free
    #[arg(long, default_value = "informed")]
    condition: String,
    /// Output directory (prompt.txt, bundle.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Directory holding one <scenario-id>.plan file per test scenario
    #[arg(long)]
    candidates: PathBuf,
    /// Also collect LLM-judge scores
    #[arg(long)]
    with_judge: bool,
    /// Use the deterministic offline judge stub instead of an endpoint
    #[arg(long)]
    offline_judge: bool,
    #[arg(long, default_value_t = DEFAULT_JUDGE_CONCURRENCY)]
    judge_concurrency: usize,
    /// Output directory (report.json, report.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExecuteArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// Registry fixture JSON mapping "Server.tool" to canned outputs
    #[arg(long)]
    registry: PathBuf,
    /// Plan-DSL file to execute
    #[arg(long)]
    plan: PathBuf,
    /// Trace output JSONL
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetentionArgs {
    /// MCQ items JSONL
    #[arg(long)]
    items: PathBuf,
    /// Base-model responses JSONL ({item_id, text})
    #[arg(long)]
    base: PathBuf,
    /// Fine-tuned-model responses JSONL
    #[arg(long)]
    finetuned: PathBuf,
    /// Use the deterministic offline judge stub instead of an endpoint
    #[arg(long)]
    offline_judge: bool,
    /// Report output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json produced by evaluate
    #[arg(long)]
    input: PathBuf,
    /// Optionally rewrite the report as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Failures that map to exit codes.
enum CliError {
    /// Exit 2: bad usage or bad input files.
    Usage(String),
    /// Exit 1: internal failure.
    Internal(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
    fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Split(args) => cmd_split(args),
        Command::BuildData(args) => cmd_build_data(args),
        Command::BuildPrompts(args) => cmd_build_prompts(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Execute(args) => cmd_execute(args),
        Command::Retention(args) => cmd_retention(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(message)) => {
            eprintln!("internal error: {message}");
            ExitCode::from(1)
        }
    }
}

fn read_corpus(path: &Path) -> Result<Vec<Scenario>, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("corpus not found: {}", path.display())));
    }
    read_scenarios(path).map_err(CliError::usage)
}

fn read_manifest(path: &Path) -> Result<SplitManifest, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("manifest not found: {}", path.display())));
    }
    let text = fs::read_to_string(path).map_err(CliError::usage)?;
    serde_json::from_str(&text).map_err(CliError::usage)
}

fn read_catalog(path: &Path) -> Result<ToolCatalog, CliError> {
    load_catalog(path).map_err(CliError::usage)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::internal)?;
    }
    fs::write(path, contents).map_err(CliError::internal)
}

fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    let scenarios = read_corpus(&args.corpus)?;
    let manifest = toolplan::dataset::stratified_split(&scenarios, args.fraction, args.seed)
        .map_err(|e| match e {
            DatasetError::InvalidFraction(_) => CliError::usage(e),
            other => CliError::usage(other),
        })?;
    let json = serde_json::to_string_pretty(&manifest).map_err(CliError::internal)?;
    write_file(&args.out, &format!("{json}\n"))?;
    println!(
        "split {} scenarios into {} train / {} test -> {}",
        scenarios.len(),
        manifest.train_ids.len(),
        manifest.test_ids.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_build_data(args: BuildDataArgs) -> Result<(), CliError> {
    let scenarios = read_corpus(&args.corpus)?;
    let manifest = read_manifest(&args.manifest)?;
    let catalog = read_catalog(&args.catalog)?;

    let by_id: BTreeMap<&str, &Scenario> =
        scenarios.iter().map(|s| (s.id.as_str(), s)).collect();
    let train_scenarios: Vec<Scenario> = manifest
        .train_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("manifest names unknown scenario {id}")))
        })
        .collect::<Result<_, _>>()?;

    let tool_pool = build_tool_knowledge_examples(&catalog, None).map_err(CliError::usage)?;
    let plan_pool = build_plan_examples(&train_scenarios, &catalog, !args.no_paraphrases)
        .map_err(CliError::usage)?;
    let exec_pool = build_execution_examples(&train_scenarios).map_err(CliError::usage)?;

    let (train, eval) = assemble_config(
        args.config,
        &tool_pool,
        &plan_pool,
        &exec_pool,
        args.eval_fraction,
        args.seed,
    )
    .map_err(CliError::usage)?;

    let leaks = scan_leakage(&manifest, &scenarios, &train);
    if !leaks.is_empty() {
        return Err(CliError::Internal(format!(
            "split leakage detected: {}",
            leaks.join("; ")
        )));
    }

    let count_kind = |pool: &[toolplan::dataset::SftExample], kind: SftKind| {
        pool.iter().filter(|e| e.kind == kind).count()
    };
    let stats = serde_json::json!({
        "config": args.config.letter().to_string(),
        "seed": args.seed,
        "eval_fraction": args.eval_fraction,
        "pool_size": train.len() + eval.len(),
        "train_count": train.len(),
        "eval_count": eval.len(),
        "train_by_kind": {
            "tool_knowledge": count_kind(&train, SftKind::ToolKnowledge),
            "plan": count_kind(&train, SftKind::Plan),
            "execution": count_kind(&train, SftKind::Execution),
        },
        "leakage_violations": 0,
    });

    write_file(&args.out.join("train.jsonl"), &examples_to_jsonl(&train))?;
    write_file(&args.out.join("eval.jsonl"), &examples_to_jsonl(&eval))?;
    write_file(
        &args.out.join("stats.json"),
        &format!("{}\n", serde_json::to_string_pretty(&stats).map_err(CliError::internal)?),
    )?;
    println!(
        "config {}: {} train / {} eval examples -> {}",
        args.config.letter(),
        train.len(),
        eval.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_build_prompts(args: BuildPromptsArgs) -> Result<(), CliError> {
    let bundle = match args.condition.as_str() {
        "informed" => {
            let catalog = read_catalog(&args.catalog)?;
            build_informed_prompt(&args.question, &catalog).map_err(CliError::usage)?
        }
        "description-free" | "description_free" => {
            build_description_free_prompt(&args.question).map_err(CliError::usage)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown condition '{other}' (expected informed or description-free)"
            )))
        }
    };
    write_file(&args.out.join("prompt.txt"), &bundle.text)?;
    write_file(
        &args.out.join("bundle.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&bundle).map_err(CliError::internal)?
        ),
    )?;
    // Token accounting against the informed condition, when applicable.
    if bundle.condition == Condition::DescriptionFree && args.catalog.exists() {
        let catalog = read_catalog(&args.catalog)?;
        if let Ok(informed) = build_informed_prompt(&args.question, &catalog) {
            if let Ok(ratio) = reduction_ratio(&informed, &bundle) {
                println!("token reduction vs informed: {:.1}%", ratio * 100.0);
            }
        }
    }
    println!(
        "{} prompt, ~{} tokens -> {}",
        args.condition,
        bundle.token_estimate,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let scenarios = read_corpus(&args.corpus)?;
    let manifest = read_manifest(&args.manifest)?;
    let catalog = read_catalog(&args.catalog)?;
    let by_id: BTreeMap<&str, &Scenario> =
        scenarios.iter().map(|s| (s.id.as_str(), s)).collect();

    let mut pairs: Vec<(String, Plan, Plan)> = Vec::new();
    for id in &manifest.test_ids {
        let scenario = by_id
            .get(id.as_str())
            .ok_or_else(|| CliError::Usage(format!("manifest names unknown scenario {id}")))?;
        let gold = scenario.parsed_gold_plan().map_err(CliError::usage)?;
        let candidate_path = args.candidates.join(format!("{id}.plan"));
        if !candidate_path.exists() {
            return Err(CliError::Usage(format!(
                "missing candidate plan for scenario {id}: {}",
                candidate_path.display()
            )));
        }
        let text = fs::read_to_string(&candidate_path).map_err(CliError::usage)?;
        // An unparseable candidate scores as an empty plan.
        let candidate = parse_plan(&text).unwrap_or_else(|e| {
            log::warn!("candidate for {id} failed to parse ({e}); scoring as empty");
            Plan::from_steps(vec![])
        });
        pairs.push((scenario.question.clone(), gold, candidate));
    }

    let verdicts: Vec<Option<f64>> = if args.with_judge {
        let offline;
        let http;
        let client: &dyn ChatClient = if args.offline_judge {
            offline = offline_plan_judge();
            &offline
        } else {
            http = HttpChatClient::from_env().map_err(CliError::usage)?;
            &http
        };
        judge_plans(&pairs, &catalog, client, args.judge_concurrency)
            .into_iter()
            .map(|r| match r {
                Ok(v) => Some(v.overall),
                Err(e) => {
                    log::warn!("judge failed: {e}");
                    None
                }
            })
            .collect()
    } else {
        vec![None; pairs.len()]
    };

    let rows: Vec<ScenarioRow> = manifest
        .test_ids
        .iter()
        .zip(pairs.iter())
        .zip(verdicts)
        .map(|((id, (_, gold, candidate)), judge_overall)| ScenarioRow {
            scenario_id: id.clone(),
            at: at_f1(gold, candidate),
            argkey: argkey_f1(gold, candidate),
            routing_accuracy: routing_accuracy(gold, candidate),
            tool_selection_accuracy: tool_selection_accuracy(gold, candidate),
            judge_overall,
        })
        .collect();

    let report = aggregate_report(rows).map_err(CliError::usage)?;
    write_file(&args.out.join("report.json"), &format!("{}\n", report.to_json()))?;
    write_file(&args.out.join("report.csv"), &report.to_csv())?;
    println!(
        "evaluated {} scenarios: AT-F1 {:.3}, ArgKey-F1 {:.3} -> {}",
        report.aggregate.scenario_count,
        report.aggregate.at_f1,
        report.aggregate.argkey_f1,
        args.out.display()
    );
    Ok(())
}

fn cmd_execute(args: ExecuteArgs) -> Result<(), CliError> {
    let catalog = read_catalog(&args.catalog)?;
    if !args.registry.exists() {
        return Err(CliError::Usage(format!("registry not found: {}", args.registry.display())));
    }
    let registry_json = fs::read_to_string(&args.registry).map_err(CliError::usage)?;
    let registry =
        ToolRegistry::from_fixture_json(catalog, &registry_json).map_err(CliError::usage)?;
    if !args.plan.exists() {
        return Err(CliError::Usage(format!("plan not found: {}", args.plan.display())));
    }
    let plan_text = fs::read_to_string(&args.plan).map_err(CliError::usage)?;
    let plan = parse_plan(&plan_text).map_err(CliError::usage)?;

    let result = execute_plan(&plan, &registry);
    write_file(&args.out, &result.to_trace_jsonl(&plan))?;
    match &result.status {
        ExecStatus::Success => {
            println!("executed {} steps -> {}", result.step_outputs.len(), args.out.display())
        }
        ExecStatus::Failed { step, reason } => {
            println!("execution failed at step {step}: {reason}")
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct ResponseRecord {
    item_id: String,
    text: String,
}

fn read_responses(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("responses not found: {}", path.display())));
    }
    let text = fs::read_to_string(path).map_err(CliError::usage)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str::<ResponseRecord>(line)
                .map(|r| (r.item_id, r.text))
                .map_err(CliError::usage)
        })
        .collect()
}

fn cmd_retention(args: RetentionArgs) -> Result<(), CliError> {
    if !args.items.exists() {
        return Err(CliError::Usage(format!("items not found: {}", args.items.display())));
    }
    let items_text = fs::read_to_string(&args.items).map_err(CliError::usage)?;
    let items: Vec<McqItem> = items_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(CliError::usage))
        .collect::<Result<_, _>>()?;
    if !toolplan::llm::check_benchmark_composition(&items) {
        log::warn!("item set is not the standard 40 MMLU + 30 ARC + 30 HellaSwag composition");
    }

    let base = read_responses(&args.base)?;
    let finetuned = read_responses(&args.finetuned)?;
    let offline;
    let http;
    let client: &dyn ChatClient = if args.offline_judge {
        offline = offline_mcq_judge();
        &offline
    } else {
        http = HttpChatClient::from_env().map_err(CliError::usage)?;
        &http
    };
    let report = run_retention(&items, &base, &finetuned, client).map_err(CliError::usage)?;
    write_file(
        &args.out,
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&report).map_err(CliError::internal)?
        ),
    )?;
    println!(
        "base {:.3}, fine-tuned {:.3}, retention {:.3} ({} forgotten, {} learned) -> {}",
        report.base.overall,
        report.finetuned.overall,
        report.retention,
        report.forgotten.len(),
        report.learned.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    if !args.input.exists() {
        return Err(CliError::Usage(format!("report not found: {}", args.input.display())));
    }
    let text = fs::read_to_string(&args.input).map_err(CliError::usage)?;
    let report: toolplan::metrics::EvalReport =
        serde_json::from_str(&text).map_err(CliError::usage)?;
    let a = &report.aggregate;
    println!("scenarios: {}", a.scenario_count);
    println!("AT-F1: {:.4}", a.at_f1);
    println!("ArgKey-F1: {:.4}", a.argkey_f1);
    println!("routing accuracy: {:.4}", a.routing_accuracy);
    println!("tool-selection accuracy: {:.4}", a.tool_selection_accuracy);
    if let Some(judge) = a.judge_overall {
        println!("judge overall: {:.4}", judge);
    }
    if let Some(csv_path) = args.csv {
        write_file(&csv_path, &report.to_csv())?;
        println!("csv -> {}", csv_path.display());
    }
    Ok(())
}
