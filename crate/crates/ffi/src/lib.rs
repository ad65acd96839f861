//! C ABI over the skillforge engine.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every function returns an [`SfStatus`]; on
//! failure, [`sf_last_error_message`] describes the error on the calling
//! thread. Strings returned through out-parameters are heap-allocated and
//! must be released with [`sf_string_free`]. Structured values cross the
//! boundary as JSON text.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use skillforge::abstraction::Granularity;
use skillforge::config::{FileConfig, GlobalConfig, Overrides, CONFIG_FILE};
use skillforge::error::{exit, Error};
use skillforge::library::{DemoPolicy, SkillLibrary};
use skillforge::pipeline::Engine;
use skillforge::planner::TaskPlan;
use skillforge::scene::{infer_relations, SceneObject};
use skillforge::sim::{data_cost, Strategy, TaskSpec};

/// Result of every call. Values below 50 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    Other = 1,
    Usage = 2,
    Config = 3,
    FixtureMissing = 10,
    BackendUnavailable = 11,
    EmptyInstruction = 12,
    MalformedResponse = 13,
    UnparsablePhrase = 14,
    Io = 20,
    SchemaVersionMismatch = 21,
    CorruptLibrary = 22,
    LibraryState = 23,
    SkillGap = 30,
    SkillNotTrained = 31,
    UnknownCondition = 32,
    Eval = 40,
    NullArgument = 50,
    InvalidUtf8 = 51,
    InvalidJson = 52,
    Internal = 99,
}

impl SfStatus {
    fn from_exit_code(code: i32) -> Self {
        match code {
            exit::OK => SfStatus::Ok,
            exit::USAGE => SfStatus::Usage,
            exit::CONFIG => SfStatus::Config,
            exit::FIXTURE_MISSING => SfStatus::FixtureMissing,
            exit::BACKEND_UNAVAILABLE => SfStatus::BackendUnavailable,
            exit::EMPTY_INSTRUCTION => SfStatus::EmptyInstruction,
            exit::MALFORMED_RESPONSE => SfStatus::MalformedResponse,
            exit::UNPARSABLE_PHRASE => SfStatus::UnparsablePhrase,
            exit::IO => SfStatus::Io,
            exit::SCHEMA_VERSION => SfStatus::SchemaVersionMismatch,
            exit::CORRUPT_LIBRARY => SfStatus::CorruptLibrary,
            exit::LIBRARY_STATE => SfStatus::LibraryState,
            exit::SKILL_GAP => SfStatus::SkillGap,
            exit::SKILL_NOT_TRAINED => SfStatus::SkillNotTrained,
            exit::UNKNOWN_CONDITION => SfStatus::UnknownCondition,
            exit::EVAL => SfStatus::Eval,
            _ => SfStatus::Other,
        }
    }
}

/// Demo-collection strategy for [`sf_data_cost`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStrategy {
    EndToEnd = 0,
    SkillBased = 1,
}

/// Opaque skill library handle.
pub struct SfLibrary {
    inner: SkillLibrary,
}

/// Opaque engine handle: perception, planner and lexicon configured from a
/// project root.
pub struct SfEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SfStatus::from_exit_code(e.exit_code()), e.to_string())
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        }
    )*};
}
from_core!(
    skillforge::library::LibraryError,
    skillforge::scene::SceneError,
    skillforge::sim::SimError,
    skillforge::config::ConfigError
);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SfStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SfStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(SfStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

fn non_null<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(SfStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

fn json_arg<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure(SfStatus::InvalidJson, format!("`{name}`: {e}")))
}

/// # Safety
/// `out` must be a valid, non-null pointer.
unsafe fn put_string(out: *mut *mut c_char, s: String) {
    *out = CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw();
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("value serializes")
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer previously returned through an out-parameter
/// of this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an empty library at `granularity` ("coarse", "medium" or "fine").
///
/// # Safety
/// `granularity` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_library_new(granularity: *const c_char, out: *mut *mut SfLibrary) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        let g: Granularity = str_arg(granularity, "granularity")?.parse().map_err(|e| Failure(SfStatus::Usage, e))?;
        *out = Box::into_raw(Box::new(SfLibrary { inner: SkillLibrary::new(g) }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_library_load(path: *const c_char, out: *mut *mut SfLibrary) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        let lib = SkillLibrary::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SfLibrary { inner: lib }));
        Ok(())
    })
}

/// Writes the library atomically to `path`.
///
/// # Safety
/// `lib` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn sf_library_save(lib: *const SfLibrary, path: *const c_char) -> SfStatus {
    guard(|| {
        let lib = lib.as_ref().ok_or_else(|| Failure(SfStatus::NullArgument, "`lib` is null".into()))?;
        lib.inner.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases a library handle. Null is ignored.
///
/// # Safety
/// `lib` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_library_free(lib: *mut SfLibrary) {
    if !lib.is_null() {
        drop(Box::from_raw(lib));
    }
}

/// # Safety
/// `lib` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_library_version(lib: *const SfLibrary, out: *mut u64) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        let lib = lib.as_ref().ok_or_else(|| Failure(SfStatus::NullArgument, "`lib` is null".into()))?;
        *out = lib.inner.library_version;
        Ok(())
    })
}

/// The library in its on-disk JSON form.
///
/// # Safety
/// `lib` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_library_to_json(lib: *const SfLibrary, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        let lib = lib.as_ref().ok_or_else(|| Failure(SfStatus::NullArgument, "`lib` is null".into()))?;
        put_string(out, lib.inner.to_json());
        Ok(())
    })
}

/// Marks a skill Trained with `demos` demonstrations, bound to an executor.
///
/// # Safety
/// `lib` must be a live handle; the strings must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn sf_library_record_training(
    lib: *mut SfLibrary,
    skill_id: *const c_char,
    demos: u32,
    executor_binding: *const c_char,
) -> SfStatus {
    guard(|| {
        let lib = lib.as_mut().ok_or_else(|| Failure(SfStatus::NullArgument, "`lib` is null".into()))?;
        let id = str_arg(skill_id, "skill_id")?;
        let binding = str_arg(executor_binding, "executor_binding")?;
        lib.inner.record_training(id, demos, binding)?;
        Ok(())
    })
}

/// Builds an engine for the project at `root`, reading `root/skillforge.toml`
/// when present.
///
/// # Safety
/// `root` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_new(root: *const c_char, out: *mut *mut SfEngine) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        let root = Path::new(str_arg(root, "root")?);
        let file_path = root.join(CONFIG_FILE);
        let file = if file_path.is_file() { Some(FileConfig::load(&file_path)?) } else { None };
        let cfg = GlobalConfig::resolve(root, file, Overrides::default())?;
        let engine = Engine::new(cfg)?;
        *out = Box::into_raw(Box::new(SfEngine { inner: engine }));
        Ok(())
    })
}

/// Releases an engine handle. Null is ignored.
///
/// # Safety
/// `engine` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_free(engine: *mut SfEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

fn engine_ref<'a>(engine: *const SfEngine) -> Result<&'a SfEngine, Failure> {
    // SAFETY: callers pass null or a live handle.
    unsafe { engine.as_ref() }.ok_or_else(|| Failure(SfStatus::NullArgument, "`engine` is null".into()))
}

/// Decomposes `instruction` in scene `scene_id`; writes the plan as JSON.
///
/// # Safety
/// `engine` must be a live handle; the strings must be valid C strings and
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_plan(
    engine: *const SfEngine,
    instruction: *const c_char,
    scene_id: *const c_char,
    out_json: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let engine = engine_ref(engine)?;
        let plan = engine.inner.plan(str_arg(instruction, "instruction")?, str_arg(scene_id, "scene_id")?, None)?;
        put_string(out_json, to_json(&plan));
        Ok(())
    })
}

/// Gap report of a plan (JSON as produced by [`sf_engine_plan`]).
///
/// # Safety
/// Handles must be live; `plan_json` a valid C string; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_gap_report(
    engine: *const SfEngine,
    lib: *const SfLibrary,
    plan_json: *const c_char,
    out_json: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let engine = engine_ref(engine)?;
        let lib = lib.as_ref().ok_or_else(|| Failure(SfStatus::NullArgument, "`lib` is null".into()))?;
        let plan: TaskPlan = json_arg(str_arg(plan_json, "plan_json")?, "plan_json")?;
        let report = engine.inner.gap_report(&lib.inner, &plan)?;
        put_string(out_json, to_json(&report));
        Ok(())
    })
}

/// Registers the plan's missing skills and writes the data manifest as JSON.
///
/// # Safety
/// Handles must be live; `plan_json` a valid C string; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_update_cycle(
    engine: *const SfEngine,
    lib: *mut SfLibrary,
    plan_json: *const c_char,
    demos_per_skill: u32,
    out_json: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let engine = engine_ref(engine)?;
        let lib = lib.as_mut().ok_or_else(|| Failure(SfStatus::NullArgument, "`lib` is null".into()))?;
        let plan: TaskPlan = json_arg(str_arg(plan_json, "plan_json")?, "plan_json")?;
        let policy = DemoPolicy { demos_per_skill, ..DemoPolicy::default() };
        let manifest = engine.inner.update_cycle(&mut lib.inner, &plan, &policy)?;
        put_string(out_json, to_json(&manifest));
        Ok(())
    })
}

/// Spatial relations for a JSON array of scene objects.
///
/// # Safety
/// `objects_json` must be a valid C string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_infer_relations(objects_json: *const c_char, out_json: *mut *mut c_char) -> SfStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let objects: Vec<SceneObject> = json_arg(str_arg(objects_json, "objects_json")?, "objects_json")?;
        let relations = infer_relations(&objects)?;
        put_string(out_json, to_json(&relations));
        Ok(())
    })
}

/// Demo count of a task spec (JSON) under `strategy`.
///
/// # Safety
/// `spec_json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_data_cost(spec_json: *const c_char, strategy: SfStrategy, out: *mut u64) -> SfStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec: TaskSpec = json_arg(str_arg(spec_json, "spec_json")?, "spec_json")?;
        spec.validate()?;
        let strategy = match strategy {
            SfStrategy::EndToEnd => Strategy::EndToEnd,
            SfStrategy::SkillBased => Strategy::SkillBased,
        };
        *out = data_cost(&spec, strategy);
        Ok(())
    })
}
