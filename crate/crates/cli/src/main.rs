use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use causeway::harness::{
    ablate, bundled, read_trace, replay, standard_settings, toggle_product, HarnessError, PolicyMode, RunOptions,
    Scenario, Toggles,
};
use causeway::{run, MetricReport, RuleSet};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "causeway", version, about = "Plan and run multi-agent crafting scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan and execute one scenario, writing artifacts to --out.
    Run(RunArgs),
    /// Compare settings with parts of the method switched off.
    Ablate(AblateArgs),
    /// Re-execute a trace and check it reproduces the recorded metrics.
    Replay(ReplayArgs),
    /// Check that a scenario file parses and is consistent.
    Validate(ScenarioArg),
    /// List the rule library, or show one rule.
    Rules(RulesArgs),
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
}

#[derive(Copy, Clone, ValueEnum)]
enum PolicyArg {
    Scripted,
    Remote,
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Overrides the number of agents.
    #[arg(long)]
    agents: Option<u32>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Chat-completion endpoint for the remote policy.
    #[arg(long)]
    reasoner_endpoint: Option<String>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            agents: self.agents,
            policy: self.policy.map(|p| match p {
                PolicyArg::Scripted => PolicyMode::Scripted,
                PolicyArg::Remote => PolicyMode::Remote,
            }),
            reasoner_endpoint: self.reasoner_endpoint.clone(),
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Execute the unrefined graph.
    #[arg(long)]
    no_causal: bool,
    /// Assign paths at random instead of by busy rate.
    #[arg(long)]
    no_busy_rate: bool,
    /// Ignore dependencies; every subtask is its own path.
    #[arg(long)]
    no_graph: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds per setting.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    /// Vary causal refinement (with other --no-* flags: all combinations).
    #[arg(long)]
    no_causal: bool,
    /// Vary the busy-rate assignment.
    #[arg(long)]
    no_busy_rate: bool,
    /// Vary the use of the dependency graph.
    #[arg(long)]
    no_graph: bool,
    /// Directory for ablation.json and ablation.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// A trace.ndjson file, or a run directory containing one.
    trace: PathBuf,
    /// Metrics to compare against; defaults to metrics.json next to the trace.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct RulesArgs {
    /// Show only this rule.
    id: Option<u32>,
    /// Include the extension rules of this scenario.
    #[arg(long)]
    scenario: Option<String>,
}

fn load(spec: &str) -> anyhow::Result<Scenario> {
    let path = Path::new(spec);
    if path.exists() {
        return Scenario::load(path).with_context(|| format!("loading {spec}"));
    }
    match bundled::get(spec) {
        Some(s) => Ok(s?),
        None => bail!(
            "{spec} is neither a file nor a bundled scenario ({})",
            bundled::names().collect::<Vec<_>>().join(", ")
        ),
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(a: RunArgs) -> anyhow::Result<ExitCode> {
    let sc = load(&a.common.scenario.scenario)?;
    let opts = RunOptions {
        seed: a.seed,
        toggles: Toggles { busy_rate: !a.no_busy_rate, causal: !a.no_causal, graph: !a.no_graph },
        out_dir: a.out.clone(),
        ..a.common.options()
    };
    let out = run(&sc, &opts)?;
    println!("{}", out.report.to_json());
    if let Some(dir) = &a.out {
        log::info!("artifacts written to {}", dir.display());
    }
    Ok(ExitCode::from(out.exit_code() as u8))
}

fn cmd_ablate(a: AblateArgs) -> anyhow::Result<ExitCode> {
    let sc = load(&a.common.scenario.scenario)?;
    let settings = if a.no_busy_rate || a.no_causal || a.no_graph {
        toggle_product(a.no_busy_rate, a.no_causal, a.no_graph)
    } else {
        standard_settings()
    };
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let report = ablate(&sc, &settings, &seeds, a.threads, &a.common.options())?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("ablation.json"), &report.to_json())?;
        write(&dir.join("ablation.csv"), &report.to_csv())?;
    }
    print!("{}", report.to_csv());
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(a: ReplayArgs) -> anyhow::Result<ExitCode> {
    let trace_path = if a.trace.is_dir() { a.trace.join("trace.ndjson") } else { a.trace.clone() };
    let text = std::fs::read_to_string(&trace_path).with_context(|| format!("reading {}", trace_path.display()))?;
    let events = read_trace(&text)?;
    let (_, report) = replay(&events)?;
    let metrics_path = a.metrics.unwrap_or_else(|| trace_path.with_file_name("metrics.json"));
    if metrics_path.exists() {
        let stored: MetricReport = serde_json::from_str(
            &std::fs::read_to_string(&metrics_path).with_context(|| format!("reading {}", metrics_path.display()))?,
        )
        .with_context(|| format!("parsing {}", metrics_path.display()))?;
        if stored != report {
            return Err(HarnessError::DivergenceDetected {
                line: events.len(),
                detail: format!("recomputed metrics differ from {}", metrics_path.display()),
            }
            .into());
        }
        eprintln!("replay matches {}", metrics_path.display());
    }
    println!("{}", report.to_json());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(a: ScenarioArg) -> anyhow::Result<ExitCode> {
    let sc = load(&a.scenario)?;
    sc.build_world()?;
    println!("{}: ok ({}, {} agents, {} extension rules)", sc.name, sc.task.kind_name(), sc.agents, sc.rules.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_rules(a: RulesArgs) -> anyhow::Result<ExitCode> {
    let set = match &a.scenario {
        Some(s) => load(s)?.rule_set()?,
        None => RuleSet::with_extensions(Vec::new()).context("builtin rules")?,
    };
    match a.id {
        Some(id) => {
            let rule = set.get(id).with_context(|| format!("no rule with id {id}"))?;
            println!("{}", serde_json::to_string_pretty(rule)?);
        }
        None => {
            for r in set.rules() {
                println!("{:>3}  {}", r.id, r.statement);
                println!("     counterfactual: {}", r.counterfactual);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Rules(a) => cmd_rules(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
