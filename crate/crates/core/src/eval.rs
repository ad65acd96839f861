//! Batch evaluation, success-rate tables and the strategy comparison report.
//!
//! A stage rate is the share of all trials in which that stage succeeded.
//! Stages that were never reached count as failures, so rates never rise
//! from one stage to the next.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AtomicSkillDefinition, Granularity, Lexicon};
use crate::library::{DemoPolicy, LibraryError, SkillLibrary};
use crate::planner::{StepAdvisor, TaskPlan};
use crate::sim::{
    data_cost, format_condition, parse_condition, run_task, Condition, ExecutionContext, Placement, ProfileSet, RunOptions,
    SimError, Strategy, TaskSpec, TrialOutcome,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no results to tabulate")]
    EmptyResults,
    #[error("task `{task_id}`: expected {expected} stages, found {found}")]
    InconsistentStageCount { task_id: String, expected: usize, found: usize },
    #[error("results mix tasks `{0}` and `{1}`")]
    MixedTasks(String, String),
    #[error("duplicate result for method `{method}` under {condition}")]
    DuplicateCell { method: String, condition: String },
    #[error("invalid suite: {0}")]
    InvalidSuite(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub task_id: String,
    pub method: String,
    pub condition: Condition,
    pub trials: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub task_id: String,
    pub method: String,
    pub condition: Condition,
    pub trials: u32,
    pub stage_labels: Vec<String>,
    /// Percent of all trials in which each stage succeeded.
    pub stage_rates: Vec<f64>,
    pub overall_rate: f64,
}

/// Runs `spec.trials` independent trials in parallel, in trial order.
pub fn run_trials(
    spec: &BatchSpec,
    plan: &TaskPlan,
    lib: &SkillLibrary,
    profiles: &ProfileSet,
    granularity: Granularity,
    retry_limit: u32,
    advisor: Option<&(dyn StepAdvisor + Sync)>,
) -> Result<Vec<TrialOutcome>> {
    if spec.trials == 0 {
        return Err(EvalError::InvalidSuite("trials must be at least 1".into()));
    }
    Ok((0..u64::from(spec.trials))
        .into_par_iter()
        .map(|trial| {
            let ctx = ExecutionContext::new(spec.condition.clone(), spec.seed, trial);
            let opts = RunOptions { granularity, retry_limit, advisor: advisor.map(|a| a as &dyn StepAdvisor) };
            run_task(plan, lib, profiles, &ctx, &opts)
        })
        .collect::<Result<_, SimError>>()?)
}

/// Per-stage success rates over all trials.
pub fn summarize(spec: &BatchSpec, plan: &TaskPlan, outcomes: &[TrialOutcome]) -> BatchResult {
    let mut successes = vec![0u32; plan.subtasks.len()];
    let mut overall = 0u32;
    for o in outcomes {
        for s in o.per_stage.iter().filter(|s| s.success) {
            successes[(s.ordinal - 1) as usize] += 1;
        }
        overall += u32::from(o.overall_success);
    }
    let trials = outcomes.len().max(1) as f64;
    let pct = |k: u32| f64::from(k) * 100.0 / trials;
    BatchResult {
        task_id: spec.task_id.clone(),
        method: spec.method.clone(),
        condition: spec.condition.clone(),
        trials: outcomes.len() as u32,
        stage_labels: stage_labels(plan),
        stage_rates: successes.into_iter().map(pct).collect(),
        overall_rate: pct(overall),
    }
}

/// [`run_trials`] followed by [`summarize`].
pub fn run_batch(
    spec: &BatchSpec,
    plan: &TaskPlan,
    lib: &SkillLibrary,
    profiles: &ProfileSet,
    granularity: Granularity,
    retry_limit: u32,
    advisor: Option<&(dyn StepAdvisor + Sync)>,
) -> Result<BatchResult> {
    let outcomes = run_trials(spec, plan, lib, profiles, granularity, retry_limit, advisor)?;
    Ok(summarize(spec, plan, &outcomes))
}

/// Column labels for stages: the verb alone when verbs are distinct,
/// otherwise verb plus object.
pub fn stage_labels(plan: &TaskPlan) -> Vec<String> {
    let verbs: Vec<&str> = plan.subtasks.iter().map(|s| s.signature.verb.as_str()).collect();
    let distinct = verbs.iter().collect::<BTreeSet<_>>().len() == verbs.len();
    plan.subtasks
        .iter()
        .map(|s| {
            let mut label = s.signature.verb.replace('-', " ");
            if !distinct {
                label.push(' ');
                label.push_str(&s.signature.object_slot.replace('-', " "));
            }
            let mut chars = label.chars();
            chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
        })
        .collect()
}

pub fn condition_label(condition: &Condition) -> String {
    let n = condition.len();
    let ood: Vec<&str> = condition.iter().filter(|(_, t)| **t == Placement::OOD).map(|(s, _)| s.as_str()).collect();
    match (n, ood.len()) {
        (0, _) => "nominal".into(),
        (1, 0) => format!("{} ID", condition.keys().next().unwrap()),
        (2, 0) => "both ID".into(),
        (_, 0) => "all ID".into(),
        (2, 2) => "both OOD".into(),
        (n, k) if n == k && n > 2 => "all OOD".into(),
        _ => format!("{} OOD", ood.join("+")),
    }
}

/// Success rates of every method of one task across conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessTable {
    pub task_id: String,
    pub stage_labels: Vec<String>,
    pub conditions: Vec<Condition>,
    pub methods: Vec<String>,
    /// `(method index, condition index)` to per-stage percentages.
    pub cells: BTreeMap<(usize, usize), Vec<f64>>,
}

impl SuccessTable {
    pub fn from_results(results: &[BatchResult]) -> Result<Self> {
        let first = results.first().ok_or(EvalError::EmptyResults)?;
        let mut conditions: Vec<Condition> = Vec::new();
        let mut methods: Vec<String> = Vec::new();
        for r in results {
            if r.task_id != first.task_id {
                return Err(EvalError::MixedTasks(first.task_id.clone(), r.task_id.clone()));
            }
            if r.stage_rates.len() != first.stage_rates.len() || r.stage_labels.len() != first.stage_rates.len() {
                return Err(EvalError::InconsistentStageCount {
                    task_id: r.task_id.clone(),
                    expected: first.stage_rates.len(),
                    found: r.stage_rates.len().max(r.stage_labels.len()),
                });
            }
            if !conditions.contains(&r.condition) {
                conditions.push(r.condition.clone());
            }
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
        order_conditions(&mut conditions);
        let mut cells = BTreeMap::new();
        for r in results {
            let m = methods.iter().position(|x| *x == r.method).unwrap();
            let c = conditions.iter().position(|x| *x == r.condition).unwrap();
            if cells.insert((m, c), r.stage_rates.clone()).is_some() {
                return Err(EvalError::DuplicateCell { method: r.method.clone(), condition: format_condition(&r.condition) });
            }
        }
        Ok(Self { task_id: first.task_id.clone(), stage_labels: first.stage_labels.clone(), conditions, methods, cells })
    }

    pub fn condition_labels(&self) -> Vec<String> {
        self.conditions.iter().map(condition_label).collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let labels = self.condition_labels();
        let _ = writeln!(out, "Stages: {}", self.stage_labels.join(" | "));
        out.push('\n');
        let _ = writeln!(out, "| Method | {} |", labels.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(labels.len()));
        for (m, method) in self.methods.iter().enumerate() {
            let cells: Vec<String> = (0..self.conditions.len())
                .map(|c| match self.cells.get(&(m, c)) {
                    Some(rates) => rates.iter().map(|r| fmt_rate(*r)).collect::<Vec<_>>().join(" "),
                    None => "-".into(),
                })
                .collect();
            let _ = writeln!(out, "| {method} | {} |", cells.join(" | "));
        }
        out
    }

    /// CSV for one method: one row per stage, one column per condition.
    pub fn method_csv(&self, method: &str) -> Result<String> {
        let m = self.methods.iter().position(|x| x == method).ok_or(EvalError::EmptyResults)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "stage".to_string()];
        header.extend(self.condition_labels());
        w.write_record(&header)?;
        for (k, stage) in self.stage_labels.iter().enumerate() {
            let mut row = vec![method.to_string(), stage.clone()];
            row.extend((0..self.conditions.len()).map(|c| match self.cells.get(&(m, c)) {
                Some(rates) => fmt_rate(rates[k]),
                None => String::new(),
            }));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Orders conditions as both ID, first slot OOD, second slot OOD, both OOD
/// when every condition tags the same slots; otherwise keeps first
/// appearance.
fn order_conditions(conditions: &mut [Condition]) {
    let Some(first) = conditions.first() else { return };
    let slots: Vec<String> = first.keys().cloned().collect();
    if !conditions.iter().all(|c| c.keys().eq(slots.iter())) {
        return;
    }
    conditions.sort_by_key(|c| {
        let tags: Vec<u8> = c.values().map(|t| u8::from(*t == Placement::ID)).collect();
        (c.values().filter(|t| **t == Placement::OOD).count(), tags)
    });
}

pub fn fmt_rate(rate: f64) -> String {
    if (rate - rate.round()).abs() < 1e-9 {
        format!("{:.0}", rate)
    } else {
        format!("{:.1}", rate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: String,
    /// Executor profile per stage, in plan order.
    pub stage_profiles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteTask {
    pub task_id: String,
    pub instruction: String,
    pub scene_id: String,
    /// `slot=ID|OOD,...` strings; empty means a single nominal condition.
    #[serde(default)]
    pub conditions: Vec<String>,
    pub methods: Vec<MethodSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub suite_id: String,
    pub seed: u64,
    pub trials: u32,
    /// Suites run without retries unless they ask for them.
    #[serde(default)]
    pub retry_limit: u32,
    #[serde(default)]
    pub granularity: Granularity,
    pub tasks: Vec<SuiteTask>,
}

impl Suite {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        let suite: Self = serde_json::from_str(&text).map_err(|e| EvalError::InvalidSuite(format!("{}: {e}", path.display())))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(EvalError::InvalidSuite("trials must be at least 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(EvalError::InvalidSuite("suite has no tasks".into()));
        }
        for t in &self.tasks {
            if t.methods.is_empty() {
                return Err(EvalError::InvalidSuite(format!("task `{}` has no methods", t.task_id)));
            }
            for c in &t.conditions {
                parse_condition(c).map_err(|e| EvalError::InvalidSuite(format!("task `{}`: {e}", t.task_id)))?;
            }
        }
        Ok(())
    }
}

impl SuiteTask {
    pub fn parsed_conditions(&self) -> Vec<Condition> {
        if self.conditions.is_empty() {
            return vec![Condition::new()];
        }
        self.conditions.iter().map(|c| parse_condition(c).expect("validated suite")).collect()
    }
}

/// A throwaway library in which each stage's skill is trained and bound to
/// the method's profile for that stage.
pub fn method_library(plan: &TaskPlan, method: &MethodSpec, g: Granularity, lexicon: &Lexicon) -> Result<SkillLibrary> {
    if method.stage_profiles.len() != plan.subtasks.len() {
        return Err(EvalError::InconsistentStageCount {
            task_id: plan.task.task_id.clone(),
            expected: plan.subtasks.len(),
            found: method.stage_profiles.len(),
        });
    }
    let mut lib = SkillLibrary::new(g);
    for (s, profile) in plan.subtasks.iter().zip(&method.stage_profiles) {
        let def = AtomicSkillDefinition::from_signature(&s.signature, g, lexicon);
        let id = def.skill_id.clone();
        match lib.get(&id) {
            Some(existing) if existing.executor_binding.as_deref() != Some(profile.as_str()) => {
                return Err(EvalError::InvalidSuite(format!(
                    "method `{}` binds skill `{id}` to two different profiles",
                    method.method
                )));
            }
            Some(_) => continue,
            None => {
                lib.register(def)?;
                lib.record_training(&id, 1, profile)?;
            }
        }
    }
    Ok(lib)
}

/// Every (method, condition) batch of one suite task.
pub fn evaluate_task(
    suite: &Suite,
    task: &SuiteTask,
    plan: &TaskPlan,
    profiles: &ProfileSet,
    lexicon: &Lexicon,
    advisor: Option<&(dyn StepAdvisor + Sync)>,
) -> Result<Vec<BatchResult>> {
    let mut results = Vec::new();
    for method in &task.methods {
        let lib = method_library(plan, method, suite.granularity, lexicon)?;
        for condition in task.parsed_conditions() {
            let spec = BatchSpec {
                task_id: task.task_id.clone(),
                method: method.method.clone(),
                condition,
                trials: suite.trials,
                seed: suite.seed,
            };
            results.push(run_batch(&spec, plan, &lib, profiles, suite.granularity, suite.retry_limit, advisor)?);
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCost {
    pub task_id: String,
    pub end_to_end: u64,
    pub skill_based: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewTaskGap {
    pub task_id: String,
    pub missing_skills: Vec<String>,
    /// Demos the skill-based strategy still needs for the missing skills.
    pub skill_based_additional: u64,
    /// Demos an end-to-end policy needs for this task, when a spec is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end_to_end_additional: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub tasks: Vec<TaskCost>,
    pub total_end_to_end: u64,
    pub total_skill_based: u64,
    pub new_tasks: Vec<NewTaskGap>,
}

/// A task the library has not seen yet, optionally with its end-to-end task spec.
pub struct NewTask<'a> {
    pub plan: &'a TaskPlan,
    pub end_to_end_spec: Option<&'a TaskSpec>,
}

pub fn compare_strategies(
    specs: &[TaskSpec],
    new_tasks: &[NewTask<'_>],
    lib: &SkillLibrary,
    g: Granularity,
    policy: &DemoPolicy,
    lexicon: &Lexicon,
) -> Result<StrategyReport> {
    let tasks: Vec<TaskCost> = specs
        .iter()
        .map(|s| TaskCost {
            task_id: s.task_id.clone(),
            end_to_end: data_cost(s, Strategy::EndToEnd),
            skill_based: data_cost(s, Strategy::SkillBased),
        })
        .collect();
    let mut gaps = Vec::new();
    for t in new_tasks {
        let report = lib.gap_report(t.plan, g, lexicon)?;
        let missing = report.missing_skill_ids();
        gaps.push(NewTaskGap {
            task_id: t.plan.task.task_id.clone(),
            skill_based_additional: missing.len() as u64 * u64::from(policy.demos_per_skill),
            missing_skills: missing,
            end_to_end_additional: t.end_to_end_spec.map(|s| data_cost(s, Strategy::EndToEnd)),
        });
    }
    Ok(StrategyReport {
        total_end_to_end: tasks.iter().map(|t| t.end_to_end).sum(),
        total_skill_based: tasks.iter().map(|t| t.skill_based).sum(),
        tasks,
        new_tasks: gaps,
    })
}
