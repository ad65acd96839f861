//! `skillforge` command-line interface.
//!
//! Machine-readable JSON goes to stdout; progress and errors go to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use skillforge::abstraction::Granularity;
use skillforge::config::{
    AbstractionBackendId, FileConfig, GlobalConfig, Overrides, PerceptionBackendId, PlannerBackendId, CONFIG_FILE,
};
use skillforge::error::{exit, Error, Result};
use skillforge::eval::{
    compare_strategies, evaluate_task, run_trials, summarize, BatchSpec, NewTask, Suite, SuccessTable,
};
use skillforge::library::{DemoPolicy, MatchResult, SkillLibrary, SkillStatus};
use skillforge::pipeline::Engine;
use skillforge::planner::{StepAdvisor, TaskPlan};
use skillforge::sim::{parse_condition, ProfileSet, TaskSpec};

#[derive(Parser)]
#[command(name = "skillforge", version, about = "Atomic skill library orchestration")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Config file (defaults to ./skillforge.toml when present).
    #[arg(long, global = true, env = "SKILLFORGE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "SKILLFORGE_FIXTURES_DIR")]
    fixtures_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "SKILLFORGE_LIBRARY")]
    library: Option<PathBuf>,
    #[arg(long, global = true, env = "SKILLFORGE_TEMPLATES_DIR")]
    templates_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "SKILLFORGE_PROFILES_DIR")]
    profiles_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "SKILLFORGE_LEXICON")]
    lexicon: Option<PathBuf>,
    #[arg(long, global = true, env = "SKILLFORGE_GRANULARITY")]
    granularity: Option<Granularity>,
    #[arg(long, global = true, env = "SKILLFORGE_PLANNER_BACKEND", value_parser = parse_planner_backend)]
    planner_backend: Option<PlannerBackendId>,
    #[arg(long, global = true, env = "SKILLFORGE_ABSTRACTION_BACKEND", value_parser = parse_abstraction_backend)]
    abstraction_backend: Option<AbstractionBackendId>,
    #[arg(long, global = true, env = "SKILLFORGE_PERCEPTION_BACKEND", value_parser = parse_perception_backend)]
    perception_backend: Option<PerceptionBackendId>,
    /// Ask the planner which subtask comes next before every stage.
    #[arg(long, global = true, env = "SKILLFORGE_REPLAN_EACH_STEP", num_args = 0..=1,
          default_missing_value = "true", value_parser = BoolishValueParser::new())]
    replan_each_step: Option<bool>,
    /// Extra attempts allowed after a stage fails.
    #[arg(long, global = true, env = "SKILLFORGE_RETRY_LIMIT")]
    retry_limit: Option<u32>,
    /// CI mode: `run` and `eval` refuse to start without --seed.
    #[arg(long, global = true, env = "CI", num_args = 0..=1, default_missing_value = "true",
          value_parser = BoolishValueParser::new())]
    ci: Option<bool>,
}

fn parse_planner_backend(s: &str) -> Result<PlannerBackendId, String> {
    match s {
        "mock" => Ok(PlannerBackendId::Mock),
        "http" => Ok(PlannerBackendId::Http),
        _ => Err("expected `mock` or `http`".into()),
    }
}

fn parse_abstraction_backend(s: &str) -> Result<AbstractionBackendId, String> {
    match s {
        "lexicon" => Ok(AbstractionBackendId::Lexicon),
        "http" => Ok(AbstractionBackendId::Http),
        _ => Err("expected `lexicon` or `http`".into()),
    }
}

fn parse_perception_backend(s: &str) -> Result<PerceptionBackendId, String> {
    match s {
        "fixture" => Ok(PerceptionBackendId::Fixture),
        "http" => Ok(PerceptionBackendId::Http),
        _ => Err("expected `fixture` or `http`".into()),
    }
}

#[derive(Args)]
struct TaskArgs {
    /// Task instruction in natural language.
    #[arg(long)]
    task: String,
    /// Scene fixture id or image reference.
    #[arg(long)]
    scene: String,
    #[arg(long)]
    task_id: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a task into subtasks and print the plan.
    Plan(TaskArgs),
    /// Create, inspect or extend the skill library.
    #[command(subcommand)]
    Library(LibraryCommand),
    /// Execute a task against the library with simulated executors.
    Run(RunArgs),
    /// Run an evaluation suite and write success-rate tables.
    Eval(EvalArgs),
    /// Compare demo costs of end-to-end and skill-based collection.
    Cost(CostArgs),
}

#[derive(Subcommand)]
enum LibraryCommand {
    /// Create an empty library.
    Init {
        /// Overwrite an existing library file.
        #[arg(long)]
        force: bool,
    },
    /// Print records and the update log.
    Inspect,
    /// Plan a task, register missing skills and print the data manifest.
    Update {
        #[command(flatten)]
        task: TaskArgs,
        /// Demonstrations requested per new skill.
        #[arg(long, default_value_t = DemoPolicy::default().demos_per_skill)]
        demos: u32,
    },
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    /// Executor profile used for every stage instead of each skill's binding.
    #[arg(long)]
    profile: Option<String>,
    /// Placement condition, e.g. `banana=ID,plate=OOD`.
    #[arg(long, default_value = "")]
    condition: String,
    /// Mark untrained skills of this task as trained (bound to --profile or
    /// `sim_default`) and save the library before running.
    #[arg(long)]
    record_training: bool,
    /// Demos recorded per skill with --record-training.
    #[arg(long, default_value_t = DemoPolicy::default().demos_per_skill)]
    demos: u32,
    #[arg(long, env = "SKILLFORGE_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the suite seed.
    #[arg(long, env = "SKILLFORGE_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct CostArgs {
    /// Task spec files.
    #[arg(required = true)]
    specs: Vec<PathBuf>,
    /// New tasks to check against the library.
    #[arg(long)]
    new_tasks: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewTaskEntry {
    task_id: String,
    instruction: String,
    scene_id: String,
    #[serde(default)]
    end_to_end: Option<TaskSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewTaskFile {
    new_tasks: Vec<NewTaskEntry>,
}

fn resolve_config(g: &GlobalArgs) -> Result<GlobalConfig> {
    let file = match &g.config {
        Some(p) => Some(FileConfig::load(p)?),
        None if Path::new(CONFIG_FILE).is_file() => Some(FileConfig::load(CONFIG_FILE)?),
        None => None,
    };
    let overrides = Overrides {
        fixtures_dir: g.fixtures_dir.clone(),
        library_path: g.library.clone(),
        templates_dir: g.templates_dir.clone(),
        profiles_dir: g.profiles_dir.clone(),
        lexicon_path: g.lexicon.clone(),
        granularity: g.granularity,
        seed: None,
        planner_backend: g.planner_backend,
        abstraction_backend: g.abstraction_backend,
        perception_backend: g.perception_backend,
        replan_each_step: g.replan_each_step,
        retry_limit: g.retry_limit,
        ci: g.ci,
    };
    Ok(GlobalConfig::resolve("", file, overrides)?)
}

/// Writes pretty JSON to stdout. A closed pipe is not an error.
fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || "()-_+.".contains(c) { c } else { '_' }).collect()
}

fn plan_task(engine: &Engine, t: &TaskArgs) -> Result<TaskPlan> {
    engine.plan(&t.task, &t.scene, t.task_id.as_deref())
}

fn cmd_plan(cfg: GlobalConfig, t: &TaskArgs) -> Result<()> {
    let engine = Engine::new(cfg)?;
    print_json(&plan_task(&engine, t)?);
    Ok(())
}

fn cmd_library(cfg: GlobalConfig, cmd: &LibraryCommand) -> Result<()> {
    match cmd {
        LibraryCommand::Init { force } => {
            if cfg.library_path.exists() && !force {
                return Err(Error::Usage(format!(
                    "{} already exists; pass --force to overwrite",
                    cfg.library_path.display()
                )));
            }
            let lib = SkillLibrary::new(cfg.granularity);
            lib.save(&cfg.library_path)?;
            eprintln!("created {} ({} granularity)", cfg.library_path.display(), cfg.granularity);
            print_json(&json!({
                "library_path": cfg.library_path,
                "granularity": lib.granularity,
                "library_version": lib.library_version,
                "records": lib.records.len(),
            }));
        }
        LibraryCommand::Inspect => {
            let lib = SkillLibrary::load(&cfg.library_path)?;
            print_json(&lib);
        }
        LibraryCommand::Update { task, demos } => {
            let mut lib = SkillLibrary::load(&cfg.library_path)?;
            let engine = Engine::new(cfg.clone())?;
            let plan = plan_task(&engine, task)?;
            let report = engine.gap_report(&lib, &plan)?;
            let policy = DemoPolicy { demos_per_skill: *demos, ..DemoPolicy::default() };
            let manifest = engine.update_cycle(&mut lib, &plan, &policy)?;
            lib.save(&cfg.library_path)?;
            eprintln!("{} new skills", manifest.entries.len());
            print_json(&json!({
                "task_id": plan.task.task_id,
                "gap_report": report,
                "manifest": manifest,
                "library_version": lib.library_version,
            }));
        }
    }
    Ok(())
}

fn cmd_run(cfg: GlobalConfig, a: &RunArgs) -> Result<()> {
    let seed = cfg.seed_for("run", a.seed)?;
    if a.trials == 0 {
        return Err(Error::Usage("--trials must be at least 1".into()));
    }
    let condition = parse_condition(&a.condition).map_err(Error::Usage)?;
    let mut lib = SkillLibrary::load(&cfg.library_path)?;
    GlobalConfig::require_dir("profiles directory", &cfg.profiles_dir)?;
    let profiles = ProfileSet::load_dir(&cfg.profiles_dir)?;
    let engine = Engine::new(cfg.clone())?;
    let plan = plan_task(&engine, &a.task)?;

    if a.record_training {
        let binding = a.profile.clone().unwrap_or_else(|| "sim_default".into());
        profiles.get(&binding)?;
        let mut trained = Vec::new();
        for s in &plan.subtasks {
            if let MatchResult::Matched(id) = lib.match_subtask(&s.signature, cfg.granularity) {
                if lib.records[&id].status != SkillStatus::Trained {
                    lib.record_training(&id, a.demos, &binding)?;
                    trained.push(id);
                }
            }
        }
        if !trained.is_empty() {
            lib.save(&cfg.library_path)?;
            eprintln!("recorded training for {}", trained.join(", "));
        }
    }

    let run_lib = match &a.profile {
        Some(p) => {
            profiles.get(p)?;
            let mut l = lib.clone();
            for r in l.records.values_mut().filter(|r| r.status == SkillStatus::Trained) {
                r.executor_binding = Some(p.clone());
            }
            l
        }
        None => lib,
    };
    let spec = BatchSpec {
        task_id: plan.task.task_id.clone(),
        method: "run".into(),
        condition,
        trials: a.trials,
        seed,
    };
    let advisor: Option<&(dyn StepAdvisor + Sync)> = cfg.replan_each_step.then_some(engine.planner() as _);
    let outcomes = run_trials(&spec, &plan, &run_lib, &profiles, cfg.granularity, cfg.retry_limit, advisor)?;
    let summary = summarize(&spec, &plan, &outcomes);
    eprintln!(
        "{}: {} trial(s), overall success {}%",
        plan.task.task_id,
        a.trials,
        skillforge::eval::fmt_rate(summary.overall_rate)
    );
    print_json(&json!({
        "task_id": plan.task.task_id,
        "seed": seed,
        "condition": a.condition,
        "trials": a.trials,
        "stage_labels": summary.stage_labels,
        "stage_rates": summary.stage_rates,
        "overall_rate": summary.overall_rate,
        "outcomes": outcomes,
    }));
    Ok(())
}

fn cmd_eval(cfg: GlobalConfig, a: &EvalArgs) -> Result<()> {
    if a.seed.is_none() && cfg.ci {
        cfg.seed_for("eval", None)?;
    }
    let mut suite = Suite::load(&a.suite)?;
    if let Some(seed) = a.seed {
        suite.seed = seed;
    }
    GlobalConfig::require_dir("profiles directory", &cfg.profiles_dir)?;
    let profiles = ProfileSet::load_dir(&cfg.profiles_dir)?;
    let engine = Engine::new(cfg.clone())?;
    let advisor: Option<&(dyn StepAdvisor + Sync)> = cfg.replan_each_step.then_some(engine.planner() as _);

    let mut report = format!(
        "# Evaluation report: {}\n\nSeed {}, {} trial(s) per cell, retry limit {}.\n\
         Stage rates are percentages of all trials; a stage that was not reached counts as a failure.\n",
        suite.suite_id, suite.seed, suite.trials, suite.retry_limit
    );
    let mut files = Vec::new();
    for task in &suite.tasks {
        let plan = engine.plan(&task.instruction, &task.scene_id, Some(&task.task_id))?;
        let results = evaluate_task(&suite, task, &plan, &profiles, engine.lexicon(), advisor)?;
        let table = SuccessTable::from_results(&results)?;
        for method in &table.methods {
            let path = a.out.join(file_stem(&task.task_id)).join(format!("{}.csv", file_stem(method)));
            write_file(&path, &table.method_csv(method)?)?;
            files.push(path);
        }
        report.push_str(&format!("\n## {}\n\n_{}_\n\n{}", task.task_id, task.instruction, table.to_markdown()));
        eprintln!("{}: {} method(s) x {} condition(s)", task.task_id, table.methods.len(), table.conditions.len());
    }
    let report_path = a.out.join("report.md");
    write_file(&report_path, &report)?;
    files.push(report_path);
    print_json(&json!({ "suite_id": suite.suite_id, "seed": suite.seed, "files": files }));
    Ok(())
}

fn cmd_cost(cfg: GlobalConfig, a: &CostArgs) -> Result<()> {
    let specs = a.specs.iter().map(TaskSpec::load).collect::<Result<Vec<_>, _>>()?;
    let (plans, e2e, lib) = match &a.new_tasks {
        None => (Vec::new(), Vec::new(), SkillLibrary::new(cfg.granularity)),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
            let file: NewTaskFile = serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
            let engine = Engine::new(cfg.clone())?;
            let lib = SkillLibrary::load(&cfg.library_path)?;
            let mut plans = Vec::new();
            let mut e2e = Vec::new();
            for t in file.new_tasks {
                if let Some(s) = &t.end_to_end {
                    s.validate()?;
                }
                plans.push(engine.plan(&t.instruction, &t.scene_id, Some(&t.task_id))?);
                e2e.push(t.end_to_end);
            }
            (plans, e2e, lib)
        }
    };
    let new_tasks: Vec<NewTask<'_>> =
        plans.iter().zip(&e2e).map(|(plan, spec)| NewTask { plan, end_to_end_spec: spec.as_ref() }).collect();
    let lexicon = match &cfg.lexicon_path {
        Some(p) => skillforge::abstraction::Lexicon::load(p)?,
        None => skillforge::abstraction::Lexicon::builtin(),
    };
    let report = compare_strategies(&specs, &new_tasks, &lib, cfg.granularity, &DemoPolicy::default(), &lexicon)?;
    eprintln!(
        "end-to-end total {} demos, skill-based total {} demos",
        report.total_end_to_end, report.total_skill_based
    );
    print_json(&report);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    match &cli.command {
        Command::Plan(t) => cmd_plan(cfg, t),
        Command::Library(c) => cmd_library(cfg, c),
        Command::Run(a) => cmd_run(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Cost(a) => cmd_cost(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
