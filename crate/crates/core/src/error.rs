//! Crate-level error with stable process exit codes.

use thiserror::Error;

use crate::abstraction::AbstractionError;
use crate::config::ConfigError;
use crate::eval::EvalError;
use crate::library::LibraryError;
use crate::perception::PerceptionError;
use crate::planner::PlannerError;
use crate::scene::SceneError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const FIXTURE_MISSING: i32 = 10;
    pub const BACKEND_UNAVAILABLE: i32 = 11;
    pub const EMPTY_INSTRUCTION: i32 = 12;
    pub const MALFORMED_RESPONSE: i32 = 13;
    pub const UNPARSABLE_PHRASE: i32 = 14;
    pub const IO: i32 = 20;
    pub const SCHEMA_VERSION: i32 = 21;
    pub const CORRUPT_LIBRARY: i32 = 22;
    pub const LIBRARY_STATE: i32 = 23;
    pub const SKILL_GAP: i32 = 30;
    pub const SKILL_NOT_TRAINED: i32 = 31;
    pub const UNKNOWN_CONDITION: i32 = 32;
    pub const EVAL: i32 = 40;
}

fn planner_code(e: &PlannerError) -> i32 {
    match e {
        PlannerError::EmptyInstruction => exit::EMPTY_INSTRUCTION,
        PlannerError::MalformedPlannerResponse(_) => exit::MALFORMED_RESPONSE,
        PlannerError::BackendUnavailable(_) => exit::BACKEND_UNAVAILABLE,
        PlannerError::Abstraction(a) => abstraction_code(a),
        PlannerError::Template(_) | PlannerError::Rules(_) => exit::CONFIG,
        PlannerError::InconsistentPlanState(_) => exit::OTHER,
    }
}

fn abstraction_code(e: &AbstractionError) -> i32 {
    match e {
        AbstractionError::UnparsablePhrase { .. } | AbstractionError::InvalidSignature(_) => exit::UNPARSABLE_PHRASE,
        AbstractionError::Lexicon(_) => exit::CONFIG,
        AbstractionError::Backend(_) => exit::BACKEND_UNAVAILABLE,
    }
}

fn library_code(e: &LibraryError) -> i32 {
    match e {
        LibraryError::UnknownSkill(_) | LibraryError::IllegalTransition { .. } | LibraryError::DuplicateSkill(_) => {
            exit::LIBRARY_STATE
        }
        LibraryError::InvalidTraining(_) | LibraryError::InvalidPolicy(_) | LibraryError::GranularityMismatch { .. } => {
            exit::USAGE
        }
        LibraryError::Abstraction(a) => abstraction_code(a),
        LibraryError::Io { .. } => exit::IO,
        LibraryError::SchemaVersionMismatch { .. } => exit::SCHEMA_VERSION,
        LibraryError::CorruptLibrary(_) | LibraryError::UnknownField(_) => exit::CORRUPT_LIBRARY,
    }
}

fn sim_code(e: &SimError) -> i32 {
    match e {
        SimError::SkillGap(_) => exit::SKILL_GAP,
        SimError::SkillNotTrained(_) => exit::SKILL_NOT_TRAINED,
        SimError::UnknownCondition { .. } => exit::UNKNOWN_CONDITION,
        SimError::UnknownProfile(_) | SimError::InvalidProfile { .. } | SimError::InvalidTaskSpec { .. } => exit::CONFIG,
        SimError::Planner(p) => planner_code(p),
        SimError::Io { .. } => exit::IO,
        SimError::Parse { .. } => exit::CONFIG,
    }
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => exit::CONFIG,
            Error::Scene(_) => exit::FIXTURE_MISSING,
            Error::Perception(p) => match p {
                PerceptionError::FixtureMissing(_)
                | PerceptionError::InvalidFixture { .. }
                | PerceptionError::NoMaskAvailable { .. }
                | PerceptionError::UnknownObject { .. }
                | PerceptionError::Scene(_) => exit::FIXTURE_MISSING,
                PerceptionError::BackendUnavailable(_) | PerceptionError::Timeout { .. } => exit::BACKEND_UNAVAILABLE,
                PerceptionError::InvalidRequest(_) => exit::USAGE,
            },
            Error::Planner(p) => planner_code(p),
            Error::Abstraction(a) => abstraction_code(a),
            Error::Library(l) => library_code(l),
            Error::Sim(s) => sim_code(s),
            Error::Eval(e) => match e {
                EvalError::Sim(s) => sim_code(s),
                EvalError::Library(l) => library_code(l),
                EvalError::Io { .. } => exit::IO,
                _ => exit::EVAL,
            },
            Error::Io { .. } => exit::IO,
            Error::Usage(_) => exit::USAGE,
        }
    }
}
