//! Task decomposition and runtime directives.
//!
//! A [`Planner`] renders the planning prompt from a [`SceneGraph`], asks its
//! backend for a numbered plan, and canonicalizes each phrase into a
//! [`SkillSignature`]. During execution, [`next_directive`] is the local
//! state machine that decides which subtask runs next.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abstraction::{tokenize, AbstractionError, Canonicalizer, LexiconCanonicalizer, SkillSignature};
use crate::http::{BackendConfig, HttpError, JsonClient};
use crate::scene::SceneGraph;

pub const DEFAULT_RETRY_LIMIT: u32 = 1;
pub const DEFAULT_MALFORMED_RETRIES: u32 = 3;
pub const RULES_SCHEMA_VERSION: u32 = 1;

const BUILTIN_TEMPLATE: &str = include_str!("../../../templates/vlp_prompt.txt");
const BUILTIN_RULES: &str = include_str!("../../../fixtures/planner_rules.json");
const PLACEHOLDERS: [&str; 4] = ["description", "relations", "objects", "instruction"];
const NONE_OBSERVED: &str = "none observed";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("task instruction is empty")]
    EmptyInstruction,
    #[error("malformed planner response: {0}")]
    MalformedPlannerResponse(String),
    #[error("planner backend unavailable: {0}")]
    BackendUnavailable(#[from] HttpError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error("inconsistent plan state: {0}")]
    InconsistentPlanState(String),
    #[error("prompt template error: {0}")]
    Template(String),
    #[error("planner rule table error: {0}")]
    Rules(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstruction {
    pub task_id: String,
    pub text: String,
}

impl TaskInstruction {
    pub fn new(task_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { task_id: task_id.into(), text: text.into() }
    }

    /// Builds an instruction whose id is a slug of its text.
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        Self { task_id: slug(&text), text }
    }
}

/// Lowercase hyphen-joined words, at most 48 characters.
pub fn slug(text: &str) -> String {
    let mut s = tokenize(text).join("-");
    if s.len() > 48 {
        s.truncate(48);
        s = s.trim_end_matches('-').to_string();
    }
    if s.is_empty() {
        "task".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubtaskStatus {
    Pending,
    Active,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub ordinal: u32,
    pub text: String,
    pub signature: SkillSignature,
    pub status: SubtaskStatus,
    /// Retries consumed so far.
    #[serde(default)]
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    /// SHA-256 of the exact prompt text, hex encoded.
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub task: TaskInstruction,
    pub scene_id: String,
    pub subtasks: Vec<Subtask>,
    pub provenance: Provenance,
}

impl TaskPlan {
    pub fn subtask(&self, ordinal: u32) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.ordinal == ordinal)
    }

    /// Copy of the plan with every subtask reset to Pending.
    pub fn fresh(&self) -> TaskPlan {
        let mut p = self.clone();
        for s in &mut p.subtasks {
            s.status = SubtaskStatus::Pending;
            s.retries = 0;
        }
        p
    }

    /// Checks ordinal contiguity and the Done* (Active|Failed)? Pending* shape.
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InconsistentPlanState(m.to_string()));
        if self.subtasks.is_empty() {
            return bad("plan has no subtasks");
        }
        for (i, s) in self.subtasks.iter().enumerate() {
            if s.ordinal as usize != i + 1 {
                return bad("subtask ordinals are not contiguous from 1");
            }
        }
        let mut phase = 0; // 0: done prefix, 1: after the active/failed slot
        for s in &self.subtasks {
            match (phase, s.status) {
                (0, SubtaskStatus::Done) => {}
                (0, SubtaskStatus::Active | SubtaskStatus::Failed) => phase = 1,
                (_, SubtaskStatus::Pending) => phase = 1,
                _ => return bad("subtask statuses are out of order"),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlannerDirective {
    Execute { ordinal: u32 },
    Retry { ordinal: u32, attempt: u32 },
    Abort { reason: String },
    Complete,
}

impl fmt::Display for PlannerDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlannerDirective::Execute { ordinal } => write!(f, "Execute({ordinal})"),
            PlannerDirective::Retry { ordinal, attempt } => write!(f, "Retry({ordinal}, {attempt})"),
            PlannerDirective::Abort { reason } => write!(f, "Abort({reason})"),
            PlannerDirective::Complete => f.write_str("Complete"),
        }
    }
}

/// Advances the plan's state machine by one step.
///
/// `last_outcome` reports the result of the currently Active subtask and
/// must be `None` exactly when no subtask is Active.
pub fn next_directive(
    plan: &mut TaskPlan,
    last_outcome: Option<bool>,
    retry_limit: u32,
) -> Result<PlannerDirective, PlannerError> {
    plan.validate()?;
    let active = plan.subtasks.iter().position(|s| s.status == SubtaskStatus::Active);
    match (active, last_outcome) {
        (Some(_), None) => Err(PlannerError::InconsistentPlanState("active subtask has no reported outcome".into())),
        (None, Some(_)) => Err(PlannerError::InconsistentPlanState("outcome reported but no subtask is active".into())),
        (Some(i), Some(true)) => {
            plan.subtasks[i].status = SubtaskStatus::Done;
            Ok(activate_next(plan))
        }
        (Some(i), Some(false)) => {
            let s = &mut plan.subtasks[i];
            if s.retries < retry_limit {
                s.retries += 1;
                Ok(PlannerDirective::Retry { ordinal: s.ordinal, attempt: s.retries })
            } else {
                s.status = SubtaskStatus::Failed;
                Ok(PlannerDirective::Abort {
                    reason: format!("subtask {} failed after {} attempt(s)", s.ordinal, s.retries + 1),
                })
            }
        }
        (None, None) => {
            if let Some(f) = plan.subtasks.iter().find(|s| s.status == SubtaskStatus::Failed) {
                return Ok(PlannerDirective::Abort { reason: format!("subtask {} failed", f.ordinal) });
            }
            Ok(activate_next(plan))
        }
    }
}

fn activate_next(plan: &mut TaskPlan) -> PlannerDirective {
    match plan.subtasks.iter_mut().find(|s| s.status == SubtaskStatus::Pending) {
        Some(s) => {
            s.status = SubtaskStatus::Active;
            PlannerDirective::Execute { ordinal: s.ordinal }
        }
        None => PlannerDirective::Complete,
    }
}

/// Versioned prompt template with `{description}`, `{relations}`,
/// `{objects}` and `{instruction}` placeholders. A leading `#!` line carries
/// the version tag and is not part of the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    body: String,
}

impl PromptTemplate {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATE).expect("builtin template is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlannerError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PlannerError::Template(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PlannerError> {
        let (version, body) = match text.strip_prefix("#!") {
            Some(rest) => {
                let (head, body) = rest.split_once('\n').unwrap_or((rest, ""));
                (head.trim().to_string(), body.to_string())
            }
            None => ("unversioned".to_string(), text.to_string()),
        };
        let re = Regex::new(r"\{([a-z_]+)\}").expect("static regex");
        let found: BTreeSet<&str> = re.captures_iter(&body).map(|c| c.get(1).unwrap().as_str()).collect();
        for name in &found {
            if !PLACEHOLDERS.contains(name) {
                return Err(PlannerError::Template(format!("unknown placeholder {{{name}}}")));
            }
        }
        for name in PLACEHOLDERS {
            if !found.contains(name) {
                return Err(PlannerError::Template(format!("missing placeholder {{{name}}}")));
            }
        }
        Ok(Self { version, body })
    }

    pub fn render(&self, task: &TaskInstruction, scene: &SceneGraph) -> String {
        let or_none = |lines: Vec<String>| if lines.is_empty() { NONE_OBSERVED.to_string() } else { lines.join("\n") };
        let objects = or_none(
            scene
                .objects
                .iter()
                .map(|o| {
                    let b = o.bbox;
                    format!("- {} ({}) at [{}, {}, {}, {}]", o.object_id, o.label, b.x_min, b.y_min, b.x_max, b.y_max)
                })
                .collect(),
        );
        let relations = or_none(scene.relations.iter().map(|r| format!("- {r}")).collect());
        let description = if scene.description.trim().is_empty() { NONE_OBSERVED } else { scene.description.trim() };
        // single pass so placeholder-like text inside values is never re-expanded
        let re = Regex::new(r"\{(description|relations|objects|instruction)\}").expect("static regex");
        re.replace_all(&self.body, |c: &regex::Captures| match &c[1] {
            "description" => description.to_string(),
            "relations" => relations.clone(),
            "objects" => objects.clone(),
            _ => task.text.trim().to_string(),
        })
        .into_owned()
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPlan {
    pub phrases: Vec<String>,
    pub next: Option<u32>,
}

/// Parses `PLAN:` followed by `N. <phrase>` lines and an optional `NEXT: N`.
/// The `PLAN:` header may be omitted; text before it is ignored.
pub fn parse_plan_block(raw: &str) -> Result<ParsedPlan, PlannerError> {
    let malformed = |m: &str| Err(PlannerError::MalformedPlannerResponse(m.to_string()));
    let item = Regex::new(r"^(\d+)[.)]\s*(.*)$").expect("static regex");
    let next_re = Regex::new(r"(?i)^next:\s*(\d+)\s*$").expect("static regex");
    let lines: Vec<&str> = raw.lines().map(str::trim).collect();
    let start = match lines.iter().position(|l| l.eq_ignore_ascii_case("plan:")) {
        Some(i) => i + 1,
        None => match lines.iter().position(|l| item.is_match(l)) {
            Some(i) => i,
            None => return malformed("no numbered plan found"),
        },
    };
    let mut phrases = Vec::new();
    let mut next = None;
    for line in &lines[start..] {
        if line.is_empty() {
            continue;
        }
        if let Some(c) = next_re.captures(line) {
            next = Some(c[1].parse::<u32>().map_err(|_| PlannerError::MalformedPlannerResponse("bad NEXT".into()))?);
            break;
        }
        if next.is_some() {
            break;
        }
        let Some(c) = item.captures(line) else {
            return malformed(&format!("unexpected line `{line}`"));
        };
        let n: usize = c[1].parse().map_err(|_| PlannerError::MalformedPlannerResponse("bad item number".into()))?;
        if n != phrases.len() + 1 {
            return malformed("plan items are not numbered 1, 2, 3, ...");
        }
        let phrase = c[2].trim().trim_end_matches('.').trim();
        if phrase.is_empty() {
            return malformed(&format!("plan item {n} is blank"));
        }
        phrases.push(phrase.to_string());
    }
    if phrases.is_empty() {
        return malformed("plan is empty");
    }
    if let Some(n) = next {
        if n == 0 || n as usize > phrases.len() {
            return malformed("NEXT references a missing item");
        }
    }
    Ok(ParsedPlan { phrases, next })
}

pub fn parse_plan_response(raw: &str) -> Result<Vec<String>, PlannerError> {
    parse_plan_block(raw).map(|p| p.phrases)
}

/// Renders phrases in the planner response grammar.
pub fn format_plan_response(phrases: &[String], next: Option<u32>) -> String {
    let mut out = String::from("PLAN:\n");
    for (i, p) in phrases.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, p));
    }
    if let Some(n) = next {
        out.push_str(&format!("NEXT: {n}\n"));
    }
    out
}

/// A language model (or stand-in) that answers planning prompts in the
/// response grammar.
pub trait PlannerBackend: Send + Sync {
    fn backend_id(&self) -> String;

    /// Answers the full planning prompt with a `PLAN:` block.
    fn complete(&self, prompt: &str, task: &TaskInstruction) -> Result<String, PlannerError>;

    /// Answers a progress prompt with a `NEXT: N` line.
    fn next_step(&self, prompt: &str, plan: &TaskPlan) -> Result<String, PlannerError> {
        let _ = plan;
        self.complete(prompt, &plan.task)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerRule {
    /// Case-insensitive regex over the normalized instruction.
    pub pattern: String,
    /// Subtask phrases; `$1`, `$2`, ... are replaced by capture groups.
    pub subtasks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    schema_version: u32,
    rules: Vec<PlannerRule>,
}

/// Deterministic planner: an explicit pattern-to-plan table, with a
/// clause-splitting template fallback for instructions no rule matches.
pub struct MockRuleTable {
    rules: Vec<(Regex, PlannerRule)>,
    canonicalizer: LexiconCanonicalizer,
    digest: String,
}

impl MockRuleTable {
    pub fn builtin(canonicalizer: LexiconCanonicalizer) -> Self {
        Self::from_json(BUILTIN_RULES, canonicalizer).expect("builtin rules are valid")
    }

    pub fn load(path: impl AsRef<Path>, canonicalizer: LexiconCanonicalizer) -> Result<Self, PlannerError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PlannerError::Rules(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text, canonicalizer)
    }

    pub fn from_json(text: &str, canonicalizer: LexiconCanonicalizer) -> Result<Self, PlannerError> {
        let file: RulesFile = serde_json::from_str(text).map_err(|e| PlannerError::Rules(e.to_string()))?;
        if file.schema_version != RULES_SCHEMA_VERSION {
            return Err(PlannerError::Rules(format!("unsupported rules schema {}", file.schema_version)));
        }
        let rules = file
            .rules
            .into_iter()
            .map(|r| {
                let re = Regex::new(&format!("(?i)^(?:{})$", r.pattern))
                    .map_err(|e| PlannerError::Rules(format!("pattern `{}`: {e}", r.pattern)))?;
                if r.subtasks.is_empty() {
                    return Err(PlannerError::Rules(format!("pattern `{}` has no subtasks", r.pattern)));
                }
                Ok((re, r))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let digest = prompt_hash(text)[..12].to_string();
        Ok(Self { rules, canonicalizer, digest })
    }

    /// Lowercase, single-spaced, without trailing punctuation.
    fn normalize(text: &str) -> String {
        text.split_whitespace().collect::<Vec<_>>().join(" ").trim_end_matches(['.', '!']).to_lowercase()
    }

    pub fn plan_phrases(&self, instruction: &str) -> Result<Vec<String>, PlannerError> {
        let norm = Self::normalize(instruction);
        for (re, rule) in &self.rules {
            if let Some(caps) = re.captures(&norm) {
                return Ok(rule
                    .subtasks
                    .iter()
                    .map(|t| {
                        let mut out = String::new();
                        caps.expand(t, &mut out);
                        out
                    })
                    .collect());
            }
        }
        self.fallback(&norm)
    }

    /// Splits on clause connectives and substitutes the previous clause's
    /// object for `it`/`them`.
    fn fallback(&self, norm: &str) -> Result<Vec<String>, PlannerError> {
        let splitter = Regex::new(r"\s*(?:,\s*and then\b|,\s*then\b|\band then\b|\bthen\b|,\s*and\b|\band\b|[,;])\s*")
            .expect("static regex");
        let mut phrases: Vec<String> = Vec::new();
        let mut last_object: Option<String> = None;
        let pronoun = Regex::new(r"\b(it|them)\b").expect("static regex");
        let mut pending_modifier: Option<String> = None;
        for clause in splitter.split(norm).map(str::trim).filter(|c| !c.is_empty()) {
            let mut clause = match &last_object {
                Some(obj) => pronoun.replace_all(clause, format!("the {obj}").as_str()).into_owned(),
                None => clause.to_string(),
            };
            // "align and tilt ..." splits into a lone modifier; rejoin it.
            if let Some(m) = pending_modifier.take() {
                clause = format!("{m} and {clause}");
            }
            if self.canonicalizer.lexicon().modifiers().any(|m| m == clause) {
                pending_modifier = Some(clause);
                continue;
            }
            let (_, raw_object) = self.canonicalizer.parse(&clause)?;
            last_object = Some(raw_object);
            phrases.push(clause);
        }
        if phrases.is_empty() {
            return Err(PlannerError::MalformedPlannerResponse("instruction yields no clauses".into()));
        }
        Ok(phrases)
    }
}

impl PlannerBackend for MockRuleTable {
    fn backend_id(&self) -> String {
        format!("mock-rule-table/{}", self.digest)
    }

    fn complete(&self, _prompt: &str, task: &TaskInstruction) -> Result<String, PlannerError> {
        let phrases = self.plan_phrases(&task.text)?;
        Ok(format_plan_response(&phrases, Some(1)))
    }

    fn next_step(&self, _prompt: &str, plan: &TaskPlan) -> Result<String, PlannerError> {
        let next = plan
            .subtasks
            .iter()
            .find(|s| matches!(s.status, SubtaskStatus::Active | SubtaskStatus::Pending))
            .map(|s| s.ordinal)
            .unwrap_or(plan.subtasks.len() as u32);
        let phrases: Vec<String> = plan.subtasks.iter().map(|s| s.text.clone()).collect();
        Ok(format_plan_response(&phrases, Some(next)))
    }
}

/// Generic chat-completion planner.
pub struct HttpLlm {
    client: JsonClient,
}

impl HttpLlm {
    pub fn new(config: BackendConfig) -> Result<Self, PlannerError> {
        Ok(Self { client: JsonClient::new(config)? })
    }
}

impl PlannerBackend for HttpLlm {
    fn backend_id(&self) -> String {
        let cfg = self.client.config();
        format!(
            "http-llm/{}@{}",
            cfg.model.as_deref().unwrap_or("default"),
            cfg.endpoint_url.as_deref().unwrap_or_default()
        )
    }

    fn complete(&self, prompt: &str, _task: &TaskInstruction) -> Result<String, PlannerError> {
        Ok(self.client.chat(prompt)?)
    }
}

/// Runtime hook that confirms each step with the planner backend.
pub trait StepAdvisor {
    fn advise(&self, plan: &TaskPlan) -> Result<Option<u32>, PlannerError>;
}

pub struct Planner {
    backend: Box<dyn PlannerBackend>,
    template: PromptTemplate,
    canonicalizer: Arc<dyn Canonicalizer>,
    malformed_retries: u32,
    replan_each_step: bool,
}

impl Planner {
    pub fn new(backend: Box<dyn PlannerBackend>, template: PromptTemplate, canonicalizer: Arc<dyn Canonicalizer>) -> Self {
        Self { backend, template, canonicalizer, malformed_retries: DEFAULT_MALFORMED_RETRIES, replan_each_step: false }
    }

    pub fn with_malformed_retries(mut self, retries: u32) -> Self {
        self.malformed_retries = retries;
        self
    }

    pub fn with_replan_each_step(mut self, on: bool) -> Self {
        self.replan_each_step = on;
        self
    }

    pub fn replan_each_step(&self) -> bool {
        self.replan_each_step
    }

    pub fn backend_id(&self) -> String {
        self.backend.backend_id()
    }

    pub fn build_prompt(&self, task: &TaskInstruction, scene: &SceneGraph) -> String {
        self.template.render(task, scene)
    }

    /// Decomposes an instruction into Pending subtasks. Never consults a
    /// skill library.
    pub fn decompose(&self, task: &TaskInstruction, scene: &SceneGraph) -> Result<TaskPlan, PlannerError> {
        if task.text.trim().is_empty() {
            return Err(PlannerError::EmptyInstruction);
        }
        let prompt = self.build_prompt(task, scene);
        let mut last_err = None;
        let mut phrases = None;
        for _ in 0..=self.malformed_retries {
            let raw = self.backend.complete(&prompt, task)?;
            match parse_plan_response(&raw) {
                Ok(p) => {
                    phrases = Some(p);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let phrases = match phrases {
            Some(p) => p,
            None => return Err(last_err.expect("at least one attempt")),
        };
        let subtasks = phrases
            .into_iter()
            .enumerate()
            .map(|(i, text)| {
                let signature = self.canonicalizer.canonicalize(&text)?;
                Ok(Subtask { ordinal: i as u32 + 1, text, signature, status: SubtaskStatus::Pending, retries: 0 })
            })
            .collect::<Result<Vec<_>, PlannerError>>()?;
        Ok(TaskPlan {
            task: task.clone(),
            scene_id: scene.scene_id.clone(),
            subtasks,
            provenance: Provenance { backend_id: self.backend.backend_id(), prompt_hash: prompt_hash(&prompt) },
        })
    }

    fn progress_prompt(plan: &TaskPlan) -> String {
        let mut out = format!("Task: {}\nPlan progress:\n", plan.task.text);
        for s in &plan.subtasks {
            out.push_str(&format!("{}. {} [{:?}]\n", s.ordinal, s.text, s.status));
        }
        out.push_str("Specify which subtask needs to be executed next. Answer `NEXT: N`.\n");
        out
    }
}

impl StepAdvisor for Planner {
    fn advise(&self, plan: &TaskPlan) -> Result<Option<u32>, PlannerError> {
        if !self.replan_each_step {
            return Ok(None);
        }
        let raw = self.backend.next_step(&Self::progress_prompt(plan), plan)?;
        let re = Regex::new(r"(?im)^\s*next:\s*(\d+)\s*$").expect("static regex");
        let n = re
            .captures(&raw)
            .and_then(|c| c[1].parse().ok())
            .ok_or_else(|| PlannerError::MalformedPlannerResponse("progress reply has no NEXT line".into()))?;
        Ok(Some(n))
    }
}

/// Object-noun hints for the detector: every unigram and bigram of the
/// instruction that is not a stopword.
pub fn label_hints(instruction: &str, canonicalizer: &dyn Canonicalizer) -> Vec<String> {
    let lx = canonicalizer.lexicon();
    let tokens = tokenize(instruction);
    let mut hints = BTreeSet::new();
    for (i, t) in tokens.iter().enumerate() {
        if lx.is_stopword(t) {
            continue;
        }
        hints.insert(t.clone());
        if let Some(next) = tokens.get(i + 1).filter(|n| !lx.is_stopword(n)) {
            hints.insert(format!("{t} {next}"));
        }
    }
    hints.into_iter().collect()
}
