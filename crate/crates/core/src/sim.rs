//! Simulated skill executors, the orchestration loop that chains them, and
//! the demo-cost calculator.
//!
//! Each skill execution is a Bernoulli draw from a counter-based stream:
//! the ChaCha key comes from the seed, the stream id is the trial index and
//! the block position is derived from `(ordinal, attempt)`. Trials never
//! share state and can run in any order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{skill_id, Granularity};
use crate::library::{MatchResult, SkillLibrary, SkillRecord, SkillStatus};
use crate::planner::{next_directive, PlannerDirective, PlannerError, StepAdvisor, TaskPlan, DEFAULT_RETRY_LIMIT};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("skill gap: no trained skill for {}", .0.join(", "))]
    SkillGap(Vec<String>),
    #[error("skills not trained: {}", .0.join(", "))]
    SkillNotTrained(Vec<String>),
    #[error("profile `{profile}` has no entry for condition {condition} and no default")]
    UnknownCondition { profile: String, condition: String },
    #[error("unknown executor profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid executor profile `{profile}`: {reason}")]
    InvalidProfile { profile: String, reason: String },
    #[error("invalid task spec `{task_id}`: {reason}")]
    InvalidTaskSpec { task_id: String, reason: String },
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Placement {
    ID,
    OOD,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::ID => "ID",
            Placement::OOD => "OOD",
        })
    }
}

/// Per-slot placement tags, in slot declaration order.
pub type Condition = IndexMap<String, Placement>;

pub fn format_condition(condition: &Condition) -> String {
    if condition.is_empty() {
        return "{}".into();
    }
    let parts: Vec<String> = condition.iter().map(|(k, v)| format!("{k}={v}")).collect();
    parts.join(",")
}

/// Parses `slot=ID,slot=OOD`. An empty string is the empty condition.
pub fn parse_condition(text: &str) -> Result<Condition, String> {
    let mut out = Condition::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (slot, tag) = part.split_once('=').ok_or_else(|| format!("expected slot=ID|OOD, got `{part}`"))?;
        let tag = match tag.trim().to_ascii_uppercase().as_str() {
            "ID" => Placement::ID,
            "OOD" => Placement::OOD,
            other => return Err(format!("unknown placement `{other}`")),
        };
        if out.insert(slot.trim().to_string(), tag).is_some() {
            return Err(format!("slot `{}` given twice", slot.trim()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionEntry {
    pub tags: Condition,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorProfile {
    pub profile_id: String,
    #[serde(default)]
    pub default_p: Option<f64>,
    #[serde(default)]
    pub conditions: Vec<ConditionEntry>,
    /// Fixed cost per attempt in simulation ticks.
    #[serde(default)]
    pub latency_ticks: Option<u32>,
}

fn valid_p(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl ExecutorProfile {
    pub fn constant(profile_id: impl Into<String>, p: f64) -> Self {
        Self { profile_id: profile_id.into(), default_p: Some(p), conditions: Vec::new(), latency_ticks: None }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| SimError::InvalidProfile { profile: self.profile_id.clone(), reason };
        if self.profile_id.is_empty() {
            return Err(bad("empty profile_id".into()));
        }
        if let Some(p) = self.default_p {
            if !valid_p(p) {
                return Err(bad(format!("default_p {p} outside [0,1]")));
            }
        }
        for c in &self.conditions {
            if !valid_p(c.p) {
                return Err(bad(format!("p {} outside [0,1] for {}", c.p, format_condition(&c.tags))));
            }
        }
        Ok(())
    }

    /// The entry whose tags are all satisfied by `condition`, preferring the
    /// one with the most tags; otherwise `default_p`.
    pub fn probability(&self, condition: &Condition) -> Result<f64> {
        self.conditions
            .iter()
            .filter(|e| e.tags.iter().all(|(slot, tag)| condition.get(slot) == Some(tag)))
            .fold(None::<&ConditionEntry>, |best, e| match best {
                Some(b) if b.tags.len() >= e.tags.len() => Some(b),
                _ => Some(e),
            })
            .map(|e| e.p)
            .or(self.default_p)
            .ok_or_else(|| SimError::UnknownCondition {
                profile: self.profile_id.clone(),
                condition: format_condition(condition),
            })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let profile: Self = read_json(path.as_ref())?;
        profile.validate()?;
        Ok(profile)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| SimError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| SimError::Parse { path: path.display().to_string(), source })
}

/// Profiles keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileSet {
    profiles: BTreeMap<String, ExecutorProfile>,
}

impl ProfileSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, profile: ExecutorProfile) -> Result<()> {
        profile.validate()?;
        self.profiles.insert(profile.profile_id.clone(), profile);
        Ok(())
    }

    pub fn with(mut self, profile: ExecutorProfile) -> Result<Self> {
        self.insert(profile)?;
        Ok(self)
    }

    pub fn get(&self, id: &str) -> Result<&ExecutorProfile> {
        self.profiles.get(id).ok_or_else(|| SimError::UnknownProfile(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    /// Loads every `*.json` file in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let io = |source| SimError::Io { path: dir.display().to_string(), source };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut set = Self::new();
        for p in paths {
            set.insert(ExecutorProfile::load(&p)?)?;
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionContext {
    pub condition: Condition,
    pub rng_seed: u64,
    pub trial_index: u64,
}

impl ExecutionContext {
    pub fn new(condition: Condition, rng_seed: u64, trial_index: u64) -> Self {
        Self { condition, rng_seed, trial_index }
    }
}

/// Uniform draw in [0,1) that depends only on its four arguments.
pub fn uniform_draw(seed: u64, trial_index: u64, ordinal: u32, attempt: u32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    let block = (u128::from(ordinal) << 32) | u128::from(attempt);
    rng.set_word_pos(block * 16);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One simulated rollout of a trained skill.
pub fn execute_skill(
    record: &SkillRecord,
    profiles: &ProfileSet,
    ctx: &ExecutionContext,
    ordinal: u32,
    attempt: u32,
) -> Result<bool> {
    let binding = match (&record.status, &record.executor_binding) {
        (SkillStatus::Trained, Some(b)) => b,
        _ => return Err(SimError::SkillNotTrained(vec![record.skill_id().to_string()])),
    };
    let p = profiles.get(binding)?.probability(&ctx.condition)?;
    Ok(uniform_draw(ctx.rng_seed, ctx.trial_index, ordinal, attempt) < p)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub ordinal: u32,
    pub skill_id: String,
    pub success: bool,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub task_id: String,
    pub trial_index: u64,
    pub per_stage: Vec<StageOutcome>,
    pub overall_success: bool,
    pub directive_trace: Vec<PlannerDirective>,
    pub ticks: u64,
}

pub struct RunOptions<'a> {
    pub granularity: Granularity,
    /// Extra attempts allowed per stage after a failure.
    pub retry_limit: u32,
    /// Consulted before every stage when present; its advice must agree
    /// with the plan order.
    pub advisor: Option<&'a dyn StepAdvisor>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self { granularity: Granularity::Medium, retry_limit: DEFAULT_RETRY_LIMIT, advisor: None }
    }
}

/// Resolves every subtask to a trained library record, in plan order.
pub fn resolve_skills<'l>(plan: &TaskPlan, lib: &'l SkillLibrary, g: Granularity) -> Result<Vec<&'l SkillRecord>> {
    let mut missing = Vec::new();
    let mut untrained = Vec::new();
    let mut records = Vec::new();
    for s in &plan.subtasks {
        match lib.match_subtask(&s.signature, g) {
            MatchResult::Matched(id) => {
                let rec = &lib.records[&id];
                if rec.status != SkillStatus::Trained {
                    untrained.push(id);
                }
                records.push(rec);
            }
            MatchResult::Missing => missing.push(skill_id(&s.signature, g)),
        }
    }
    for list in [&mut missing, &mut untrained] {
        list.sort();
        list.dedup();
    }
    if !missing.is_empty() {
        return Err(SimError::SkillGap(missing));
    }
    if !untrained.is_empty() {
        return Err(SimError::SkillNotTrained(untrained));
    }
    Ok(records)
}

/// Runs one trial of `plan`, driving the planner's directive loop.
pub fn run_task(
    plan: &TaskPlan,
    lib: &SkillLibrary,
    profiles: &ProfileSet,
    ctx: &ExecutionContext,
    opts: &RunOptions<'_>,
) -> Result<TrialOutcome> {
    let records = resolve_skills(plan, lib, opts.granularity)?;
    let mut state = plan.fresh();
    let mut per_stage: Vec<StageOutcome> = Vec::new();
    let mut trace = Vec::new();
    let mut ticks = 0u64;
    let mut last = None;
    loop {
        let directive = next_directive(&mut state, last, opts.retry_limit)?;
        trace.push(directive.clone());
        let (ordinal, attempt) = match directive {
            PlannerDirective::Execute { ordinal } => {
                if let Some(advisor) = opts.advisor {
                    if let Some(advised) = advisor.advise(&state)? {
                        if advised != ordinal {
                            return Err(PlannerError::InconsistentPlanState(format!(
                                "planner advised subtask {advised} while subtask {ordinal} is active"
                            ))
                            .into());
                        }
                    }
                }
                (ordinal, 0)
            }
            PlannerDirective::Retry { ordinal, attempt } => (ordinal, attempt),
            PlannerDirective::Abort { .. } | PlannerDirective::Complete => break,
        };
        let record = records[(ordinal - 1) as usize];
        let success = execute_skill(record, profiles, ctx, ordinal, attempt)?;
        let profile = profiles.get(record.executor_binding.as_deref().unwrap_or_default())?;
        ticks += u64::from(profile.latency_ticks.unwrap_or(0));
        match per_stage.last_mut() {
            Some(stage) if stage.ordinal == ordinal => {
                stage.success = success;
                stage.attempts += 1;
            }
            _ => per_stage.push(StageOutcome { ordinal, skill_id: record.skill_id().to_string(), success, attempts: 1 }),
        }
        last = Some(success);
    }
    let overall_success = per_stage.len() == plan.subtasks.len() && per_stage.iter().all(|s| s.success);
    Ok(TrialOutcome {
        task_id: plan.task.task_id.clone(),
        trial_index: ctx.trial_index,
        per_stage,
        overall_success,
        directive_trace: trace,
        ticks,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotSpec {
    pub slot: String,
    pub position_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillDemos {
    pub skill_id: String,
    pub demos: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    #[serde(default)]
    pub slots: Vec<SlotSpec>,
    pub demos_per_setting: u32,
    #[serde(default)]
    pub skill_split: Vec<SkillDemos>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| SimError::InvalidTaskSpec { task_id: self.task_id.clone(), reason: reason.into() };
        if self.task_id.is_empty() {
            return Err(bad("empty task_id"));
        }
        if self.demos_per_setting == 0 {
            return Err(bad("demos_per_setting must be positive"));
        }
        if self.slots.iter().any(|s| s.position_count == 0) {
            return Err(bad("position_count must be positive"));
        }
        if self.skill_split.iter().any(|s| s.demos == 0) {
            return Err(bad("skill demos must be positive"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = read_json(path.as_ref())?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    EndToEnd,
    SkillBased,
}

/// Demonstrations needed to cover `spec` under `strategy`.
pub fn data_cost(spec: &TaskSpec, strategy: Strategy) -> u64 {
    match strategy {
        Strategy::EndToEnd => {
            spec.slots.iter().map(|s| u64::from(s.position_count)).product::<u64>() * u64::from(spec.demos_per_setting)
        }
        Strategy::SkillBased => spec.skill_split.iter().map(|s| u64::from(s.demos)).sum(),
    }
}
