//! Command-line front end for the stakeholder-panel evaluation engine.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use panel_eval::baselines::{
    DUAL_ROLE_JUDGE_ID, PANEL_JUDGE_ID, REFERENCE_OVERLAP_JUDGE_ID, RUBRIC_JUDGE_ID,
    SIMPLE_ROLE_JUDGE_ID,
};
use panel_eval::metrics::AlignmentReport;
use panel_eval::pipeline::{correlate_files, CostReport, Overrides, Pipeline, RunSummary};

#[derive(Parser)]
#[command(
    name = "panel-eval",
    version,
    about = "Evaluate generated text with stakeholder persona panels, baseline judges, and human-alignment metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (JSON); relative paths inside it are resolved
    /// against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts; reruns resume from what is present.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for debate jobs (overrides the config).
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum DebateJudge {
    Panel,
    SimpleRole,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BaselineJudge {
    GEval,
    ChatEval,
    SimpleRole,
    RougeL,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Md,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured judge end to end and write all artifacts.
    Run(RunArgs),
    /// Extract stakeholders from the corpus and consolidate them into groups.
    Extract(RunArgs),
    /// Extract (or reuse) stakeholder groups, then construct their personas.
    Personas(RunArgs),
    /// Run a debate judge (persona panels or the single-role ablation).
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "panel")]
        judge: DebateJudge,
    },
    /// Run one baseline judge.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        judge: BaselineJudge,
        /// Discussion rounds for the two-role judge (overrides the config).
        #[arg(long)]
        rounds: Option<usize>,
        /// Samples averaged by the rubric judge (overrides the config).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Recompute alignment reports from existing score and rating tables.
    Correlate {
        /// Judge scores (scores.csv from a run).
        #[arg(long)]
        scores: PathBuf,
        /// Human ratings (human.csv from a run).
        #[arg(long)]
        human: PathBuf,
        /// Where to write the report JSON; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a report file for reading.
    Report {
        /// report.json from a run.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: ReportFormat,
    },
    /// Summarize token usage and estimate spend.
    Cost {
        /// cost.json from a run.
        #[arg(long)]
        cost: PathBuf,
        /// Price per million tokens, in your billing currency.
        #[arg(long)]
        price_per_million: Option<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn build_pipeline(args: &RunArgs, judges: Option<Vec<String>>) -> Result<Pipeline, Box<dyn std::error::Error>> {
    let overrides = Overrides {
        judges,
        concurrency_limit: args.concurrency,
        ..Overrides::default()
    };
    Ok(Pipeline::with_overrides(&args.config, &args.out, overrides)?)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run(args) => {
            let pipeline = build_pipeline(&args, None)?;
            print_summary(&pipeline.run()?);
        }
        Command::Extract(args) => {
            let pipeline = build_pipeline(&args, None)?;
            let groups = pipeline.stage_extract()?;
            println!("{} stakeholder groups:", groups.len());
            for group in &groups {
                println!(
                    "  {} ({} records, {} dimensions)",
                    group.group_name,
                    group.member_records.len(),
                    group.consolidated_dimensions.len()
                );
            }
        }
        Command::Personas(args) => {
            let pipeline = build_pipeline(&args, None)?;
            let groups = pipeline.stage_extract()?;
            let personas = pipeline.stage_personas(&groups)?;
            for (group, members) in &personas {
                println!("{group}:");
                for persona in members {
                    println!("  {} — {}", persona.persona_name, persona.evaluative_dimension);
                }
            }
        }
        Command::Evaluate { run: args, judge } => {
            let judge_id = match judge {
                DebateJudge::Panel => PANEL_JUDGE_ID,
                DebateJudge::SimpleRole => SIMPLE_ROLE_JUDGE_ID,
            };
            let pipeline = build_pipeline(&args, Some(vec![judge_id.to_string()]))?;
            print_summary(&pipeline.run()?);
        }
        Command::Baseline { run: args, judge, rounds, samples } => {
            let judge_id = match judge {
                BaselineJudge::GEval => RUBRIC_JUDGE_ID,
                BaselineJudge::ChatEval => DUAL_ROLE_JUDGE_ID,
                BaselineJudge::SimpleRole => SIMPLE_ROLE_JUDGE_ID,
                BaselineJudge::RougeL => REFERENCE_OVERLAP_JUDGE_ID,
            };
            let overrides = Overrides {
                judges: Some(vec![judge_id.to_string()]),
                discussion_rounds: rounds,
                rubric_samples: samples,
                concurrency_limit: args.concurrency,
            };
            let pipeline = Pipeline::with_overrides(&args.config, &args.out, overrides)?;
            print_summary(&pipeline.run()?);
        }
        Command::Correlate { scores, human, out } => {
            let reports = correlate_files(&scores, &human)?;
            let json = serde_json::to_string_pretty(&reports)?;
            match out {
                Some(path) => {
                    panel_eval::pipeline::write_atomic(&path, format!("{json}\n").as_bytes())?;
                    println!("wrote {}", path.display());
                }
                None => println!("{json}"),
            }
        }
        Command::Report { report, format } => {
            let reports: BTreeMap<String, AlignmentReport> =
                serde_json::from_slice(&std::fs::read(&report)?)?;
            match format {
                ReportFormat::Json => {
                    println!("{}", serde_json::to_string_pretty(&reports)?)
                }
                ReportFormat::Md => print!("{}", render_markdown(&reports)),
            }
        }
        Command::Cost { cost, price_per_million } => {
            let report: CostReport = serde_json::from_slice(&std::fs::read(&cost)?)?;
            println!("calls: {}", report.total_calls);
            println!(
                "tokens: {}{}",
                report.total_tokens,
                if report.approximate { " (approximate)" } else { "" }
            );
            let mut by_stage: BTreeMap<String, u64> = BTreeMap::new();
            for entry in &report.entries {
                *by_stage.entry(entry.stage.to_string()).or_default() += entry.total_tokens();
            }
            for (stage, tokens) in &by_stage {
                println!("  {stage}: {tokens}");
            }
            if let Some(price) = price_per_million {
                println!(
                    "estimated cost: {:.4}",
                    panel_eval::pipeline::estimated_cost(report.total_tokens, price)
                );
            }
        }
    }
    Ok(())
}

fn print_summary(summary: &RunSummary) {
    println!("run complete: {}", summary.out_dir.display());
    for judge in &summary.judges {
        let scored = summary.items_scored.get(judge).copied().unwrap_or(0);
        println!("  {judge}: {scored} items scored");
    }
    println!(
        "model calls: {} ({} tokens)",
        summary.total_calls, summary.total_tokens
    );
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.4}")).unwrap_or_else(|| "—".to_string())
}

fn render_markdown(reports: &BTreeMap<String, AlignmentReport>) -> String {
    let mut out = String::new();
    for (judge_id, report) in reports {
        out.push_str(&format!("## {judge_id}\n\n"));
        out.push_str(&format!("Items scored: {}\n", report.n_items));
        if let Some(alpha) = report.krippendorff_alpha {
            out.push_str(&format!("Inter-rater agreement (alpha): {alpha:.4}\n"));
        }
        out.push('\n');
        out.push_str("| human dimension | items | spearman | kendall | pearson |\n");
        out.push_str("|---|---|---|---|---|\n");
        for (dimension, alignment) in &report.dimensions {
            out.push_str(&format!(
                "| {dimension} | {} | {} | {} | {} |\n",
                alignment.n_items,
                fmt_opt(alignment.spearman_rho),
                fmt_opt(alignment.kendall_tau),
                fmt_opt(alignment.pearson_r),
            ));
        }
        for (dimension, overlap) in &report.skipped_dimensions {
            out.push_str(&format!(
                "\nSkipped {dimension}: only {overlap} overlapping items.\n"
            ));
        }
        out.push('\n');
    }
    out
}
