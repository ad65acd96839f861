//! Persistent skill registry: lifecycle, matching, gap detection and the
//! new-task update cycle.
//!
//! Every mutation bumps `library_version` by one and appends exactly one
//! entry to the update log, so `library_version == update_log.len()` at all
//! times. Records are deprecated, never deleted.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abstraction::{abstract_signatures, project, AbstractionError, AtomicSkillDefinition, Granularity, Lexicon, SkillSignature};
use crate::planner::TaskPlan;

pub const LIBRARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("illegal transition for `{skill_id}`: {from:?} -> {to:?}")]
    IllegalTransition { skill_id: String, from: SkillStatus, to: SkillStatus },
    #[error("skill `{0}` is already registered")]
    DuplicateSkill(String),
    #[error("library granularity is {library}, operation requested {requested}")]
    GranularityMismatch { library: Granularity, requested: Granularity },
    #[error("invalid training record: {0}")]
    InvalidTraining(String),
    #[error("invalid demo policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("library schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("corrupt library file: {0}")]
    CorruptLibrary(String),
    #[error("library file has unknown field: {0}")]
    UnknownField(String),
}

pub type Result<T, E = LibraryError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkillStatus {
    Defined,
    DataCollected,
    Trained,
    Deprecated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillRecord {
    pub definition: AtomicSkillDefinition,
    pub status: SkillStatus,
    pub demo_count: u32,
    pub executor_binding: Option<String>,
    /// Per-record revision, starting at 1 and bumped on every change.
    pub version: u64,
}

impl SkillRecord {
    pub fn skill_id(&self) -> &str {
        &self.definition.skill_id
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.status == SkillStatus::Trained
            && (self.executor_binding.as_deref().is_none_or(str::is_empty) || self.demo_count == 0)
        {
            return Err(format!("trained skill `{}` lacks an executor binding or demos", self.skill_id()));
        }
        if self.version == 0 {
            return Err(format!("skill `{}` has version 0", self.skill_id()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogEvent {
    Created,
    SkillRegistered,
    DataCollected,
    SkillTrained,
    SkillDeprecated,
    UpdateCycleCovered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub event: LogEvent,
    pub skill_id: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillLibrary {
    pub granularity: Granularity,
    pub library_version: u64,
    pub records: BTreeMap<String, SkillRecord>,
    pub update_log: Vec<LogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchResult {
    Matched(String),
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedStage {
    pub ordinal: u32,
    pub skill_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingStage {
    pub ordinal: u32,
    pub proposal: AtomicSkillDefinition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapReport {
    pub task_id: String,
    pub matched: Vec<MatchedStage>,
    pub missing: Vec<MissingStage>,
}

impl GapReport {
    /// Distinct proposed skill ids, sorted.
    pub fn missing_skill_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.missing.iter().map(|m| m.proposal.skill_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionGrid {
    pub rows: u32,
    pub cols: u32,
}

impl PositionGrid {
    /// Named placement points `r1c1`, `r1c2`, ... in row-major order.
    pub fn points(&self) -> Vec<String> {
        (1..=self.rows).flat_map(|r| (1..=self.cols).map(move |c| format!("r{r}c{c}"))).collect()
    }
}

/// How many demonstrations a newly defined skill needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPolicy {
    pub demos_per_skill: u32,
    pub grid: Option<PositionGrid>,
}

impl Default for DemoPolicy {
    /// Nine demos over a 3×3 grid of placement points.
    fn default() -> Self {
        Self { demos_per_skill: 9, grid: Some(PositionGrid { rows: 3, cols: 3 }) }
    }
}

impl DemoPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.demos_per_skill == 0 {
            return Err(LibraryError::InvalidPolicy("demos_per_skill must be positive".into()));
        }
        if let Some(g) = self.grid {
            if g.rows == 0 || g.cols == 0 {
                return Err(LibraryError::InvalidPolicy("position grid must be non-empty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub skill_id: String,
    pub demos_required: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_grid: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DataManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DataManifest {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl SkillLibrary {
    /// An empty library at version 1 with a single `Created` log entry.
    pub fn new(granularity: Granularity) -> Self {
        let mut lib = Self { granularity, library_version: 0, records: BTreeMap::new(), update_log: Vec::new() };
        lib.log(LogEvent::Created, None, format!("granularity {granularity}"));
        lib
    }

    fn log(&mut self, event: LogEvent, skill_id: Option<&str>, detail: String) {
        self.library_version += 1;
        self.update_log.push(LogEntry { timestamp: now_ms(), event, skill_id: skill_id.map(str::to_string), detail });
    }

    pub fn get(&self, skill_id: &str) -> Option<&SkillRecord> {
        self.records.get(skill_id)
    }

    pub fn definitions(&self) -> BTreeMap<String, AtomicSkillDefinition> {
        self.records.iter().map(|(id, r)| (id.clone(), r.definition.clone())).collect()
    }

    /// Adds a definition as a `Defined` record.
    pub fn register(&mut self, definition: AtomicSkillDefinition) -> Result<()> {
        if definition.granularity != self.granularity {
            return Err(LibraryError::GranularityMismatch { library: self.granularity, requested: definition.granularity });
        }
        let id = definition.skill_id.clone();
        if self.records.contains_key(&id) {
            return Err(LibraryError::DuplicateSkill(id));
        }
        let detail = definition.render();
        self.records.insert(
            id.clone(),
            SkillRecord { definition, status: SkillStatus::Defined, demo_count: 0, executor_binding: None, version: 1 },
        );
        self.log(LogEvent::SkillRegistered, Some(&id), detail);
        Ok(())
    }

    fn record_mut(&mut self, skill_id: &str) -> Result<&mut SkillRecord> {
        self.records.get_mut(skill_id).ok_or_else(|| LibraryError::UnknownSkill(skill_id.to_string()))
    }

    /// Defined -> DataCollected.
    pub fn record_data(&mut self, skill_id: &str, demo_count: u32) -> Result<()> {
        if demo_count == 0 {
            return Err(LibraryError::InvalidTraining("demo_count must be positive".into()));
        }
        let rec = self.record_mut(skill_id)?;
        if rec.status != SkillStatus::Defined {
            return Err(LibraryError::IllegalTransition {
                skill_id: skill_id.into(),
                from: rec.status,
                to: SkillStatus::DataCollected,
            });
        }
        rec.status = SkillStatus::DataCollected;
        rec.demo_count = demo_count;
        rec.version += 1;
        self.log(LogEvent::DataCollected, Some(skill_id), format!("{demo_count} demos"));
        Ok(())
    }

    /// Defined | DataCollected -> Trained.
    pub fn record_training(&mut self, skill_id: &str, demo_count: u32, executor_binding: &str) -> Result<()> {
        let rec = self.record_mut(skill_id)?;
        if !matches!(rec.status, SkillStatus::Defined | SkillStatus::DataCollected) {
            return Err(LibraryError::IllegalTransition { skill_id: skill_id.into(), from: rec.status, to: SkillStatus::Trained });
        }
        if demo_count == 0 || executor_binding.is_empty() {
            return Err(LibraryError::InvalidTraining("training needs demos and an executor binding".into()));
        }
        rec.status = SkillStatus::Trained;
        rec.demo_count = demo_count;
        rec.executor_binding = Some(executor_binding.to_string());
        rec.version += 1;
        self.log(LogEvent::SkillTrained, Some(skill_id), format!("{demo_count} demos, executor {executor_binding}"));
        Ok(())
    }

    pub fn deprecate(&mut self, skill_id: &str) -> Result<()> {
        let rec = self.record_mut(skill_id)?;
        if rec.status == SkillStatus::Deprecated {
            return Err(LibraryError::IllegalTransition {
                skill_id: skill_id.into(),
                from: rec.status,
                to: SkillStatus::Deprecated,
            });
        }
        rec.status = SkillStatus::Deprecated;
        rec.version += 1;
        self.log(LogEvent::SkillDeprecated, Some(skill_id), String::new());
        Ok(())
    }

    /// Finds the non-deprecated record whose signature projects to the same
    /// signature as `sig` at `g`. Ties go to the highest record version, then
    /// the lexicographically smallest id.
    pub fn match_subtask(&self, sig: &SkillSignature, g: Granularity) -> MatchResult {
        let want = project(sig, g);
        self.records
            .values()
            .filter(|r| r.status != SkillStatus::Deprecated)
            .filter(|r| project(&r.definition.signature, g) == want)
            .max_by(|a, b| a.version.cmp(&b.version).then_with(|| b.skill_id().cmp(a.skill_id())))
            .map_or(MatchResult::Missing, |r| MatchResult::Matched(r.skill_id().to_string()))
    }

    /// Matches every subtask; proposals for the unmatched ones come from
    /// abstracting them against the current definitions. Fails without a
    /// partial report if any subtask signature is invalid.
    pub fn gap_report(&self, plan: &TaskPlan, g: Granularity, lexicon: &Lexicon) -> Result<GapReport> {
        for s in &plan.subtasks {
            lexicon.validate_signature(&s.signature)?;
        }
        let mut matched = Vec::new();
        let mut unmatched = Vec::new();
        for s in &plan.subtasks {
            match self.match_subtask(&s.signature, g) {
                MatchResult::Matched(skill_id) => matched.push(MatchedStage { ordinal: s.ordinal, skill_id }),
                MatchResult::Missing => unmatched.push(s),
            }
        }
        let outcome = abstract_signatures(
            unmatched.iter().map(|s| (s.text.as_str(), &s.signature)),
            g,
            &self.definitions(),
            lexicon,
        );
        let missing = unmatched
            .iter()
            .map(|s| MissingStage { ordinal: s.ordinal, proposal: outcome.definitions[&outcome.mapping[&s.text]].clone() })
            .collect();
        Ok(GapReport { task_id: plan.task.task_id.clone(), matched, missing })
    }

    /// Registers every missing definition as `Defined` and returns the data
    /// needed to train them. A fully covered task only gets a log entry.
    pub fn update_cycle(&mut self, plan: &TaskPlan, g: Granularity, policy: &DemoPolicy, lexicon: &Lexicon) -> Result<DataManifest> {
        policy.validate()?;
        if g != self.granularity {
            return Err(LibraryError::GranularityMismatch { library: self.granularity, requested: g });
        }
        let report = self.gap_report(plan, g, lexicon)?;
        let mut proposals: BTreeMap<String, AtomicSkillDefinition> = BTreeMap::new();
        for m in report.missing {
            proposals.entry(m.proposal.skill_id.clone()).or_insert(m.proposal);
        }
        if proposals.is_empty() {
            self.log(LogEvent::UpdateCycleCovered, None, format!("task {} fully covered", plan.task.task_id));
            return Ok(DataManifest::default());
        }
        let grid = policy.grid.map(|g| g.points());
        let mut manifest = DataManifest::default();
        for (id, def) in proposals {
            self.register(def)?;
            manifest.entries.push(ManifestEntry {
                skill_id: id,
                demos_required: policy.demos_per_skill,
                position_grid: grid.clone(),
            });
        }
        Ok(manifest)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.library_version != self.update_log.len() as u64 {
            return Err(format!(
                "library_version {} does not match {} log entries",
                self.library_version,
                self.update_log.len()
            ));
        }
        for (id, rec) in &self.records {
            if id != rec.skill_id() {
                return Err(format!("record key `{id}` does not match skill id `{}`", rec.skill_id()));
            }
            rec.check()?;
        }
        Ok(())
    }

    fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("library serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Writes the library atomically: a temporary file in the target
    /// directory is renamed over `path`. Missing parent directories are
    /// created.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| LibraryError::Io { path: path.display().to_string(), source };
        let file = LibraryFile { schema_version: LIBRARY_SCHEMA_VERSION, checksum: self.checksum(), library: self.clone() };
        let text = serde_json::to_string_pretty(&file).expect("library serializes");
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(text.as_bytes()).map_err(io)?;
        tmp.write_all(b"\n").map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| LibraryError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = LibraryFile { schema_version: LIBRARY_SCHEMA_VERSION, checksum: self.checksum(), library: self.clone() };
        serde_json::to_string_pretty(&file).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| LibraryError::CorruptLibrary(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| LibraryError::CorruptLibrary("top level is not an object".into()))?;
        let version = obj
            .get("schema_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| LibraryError::CorruptLibrary("missing schema_version".into()))?;
        if version != u64::from(LIBRARY_SCHEMA_VERSION) {
            return Err(LibraryError::SchemaVersionMismatch { found: version, expected: LIBRARY_SCHEMA_VERSION });
        }
        let file: LibraryFile = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            if msg.contains("unknown field") {
                LibraryError::UnknownField(msg)
            } else {
                LibraryError::CorruptLibrary(msg)
            }
        })?;
        if file.library.checksum() != file.checksum {
            return Err(LibraryError::CorruptLibrary("checksum mismatch".into()));
        }
        file.library.validate().map_err(LibraryError::CorruptLibrary)?;
        Ok(file.library)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    schema_version: u32,
    checksum: String,
    library: SkillLibrary,
}
