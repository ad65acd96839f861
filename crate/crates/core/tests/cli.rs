use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use skillforge::error::exit;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn command(cwd: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skillforge"));
    cmd.current_dir(cwd).env_remove("CI");
    for (k, _) in std::env::vars() {
        if k.starts_with("SKILLFORGE_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn run_in(cwd: &Path, args: &[&str]) -> Output {
    command(cwd).args(args).output().unwrap()
}

fn run(args: &[&str]) -> Output {
    run_in(&repo_root(), args)
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

struct TempLib {
    _dir: tempfile::TempDir,
    path: String,
}

fn temp_lib() -> TempLib {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("library.json").to_str().unwrap().to_string();
    TempLib { _dir: dir, path }
}

const POUR: &str = "pour water from the bottle into the mug";

#[test]
fn plan_prints_subtasks_for_fixture_scene() {
    let out = run(&["plan", "--task", "put the banana on the plate", "--scene", "banana_plate_1"]);
    assert_eq!(code(&out), exit::OK);
    let plan = stdout_json(&out);
    let texts: Vec<&str> = plan["subtasks"].as_array().unwrap().iter().map(|s| s["text"].as_str().unwrap()).collect();
    assert_eq!(texts.len(), 2, "{texts:?}");
    assert_eq!(plan["subtasks"][0]["signature"]["verb"], "pick-up");
    assert_eq!(plan["subtasks"][1]["signature"]["target_slot"], "plate");
}

#[test]
fn planning_errors_map_to_exit_codes() {
    assert_eq!(code(&run(&["plan", "--task", "   ", "--scene", "banana_plate_1"])), exit::EMPTY_INSTRUCTION);
    assert_eq!(code(&run(&["plan", "--task", "pick up the cup", "--scene", "no_such_scene"])), exit::FIXTURE_MISSING);
    assert_eq!(code(&run(&["plan", "--scene", "banana_plate_1"])), exit::USAGE);
    assert_eq!(code(&run(&["--planner-backend", "oracle", "plan", "--task", "x", "--scene", "y"])), exit::USAGE);
}

#[test]
fn library_update_is_idempotent() {
    let lib = temp_lib();
    let init = run(&["--library", &lib.path, "library", "init"]);
    assert_eq!(code(&init), exit::OK);
    assert_eq!(stdout_json(&init)["library_version"], 1);
    assert_eq!(code(&run(&["--library", &lib.path, "library", "init"])), exit::USAGE);
    assert_eq!(code(&run(&["--library", &lib.path, "library", "init", "--force"])), exit::OK);

    let first = run(&["--library", &lib.path, "library", "update", "--task", POUR, "--scene", "bottle_mug_1"]);
    assert_eq!(code(&first), exit::OK);
    let first_json = stdout_json(&first);
    let added = first_json["manifest"]["entries"].as_array().unwrap().len();
    assert!(added > 0);
    assert!(String::from_utf8_lossy(&first.stderr).contains(&format!("{added} new skills")));

    let second = run(&["--library", &lib.path, "library", "update", "--task", POUR, "--scene", "bottle_mug_1"]);
    assert_eq!(code(&second), exit::OK);
    let second_json = stdout_json(&second);
    assert!(second_json["manifest"]["entries"].as_array().unwrap().is_empty());
    assert!(second_json["gap_report"]["missing"].as_array().unwrap().is_empty());

    let library = stdout_json(&run(&["--library", &lib.path, "library", "inspect"]));
    assert_eq!(library["records"].as_object().unwrap().len(), added);
    assert_eq!(library["library_version"].as_u64().unwrap() as usize, library["update_log"].as_array().unwrap().len());
}

#[test]
fn run_distinguishes_gaps_from_untrained_skills() {
    let lib = temp_lib();
    run(&["--library", &lib.path, "library", "init"]);
    let base = ["--library", &lib.path, "run", "--task", POUR, "--scene", "bottle_mug_1", "--seed", "3"];
    assert_eq!(code(&run(&base)), exit::SKILL_GAP);

    run(&["--library", &lib.path, "library", "update", "--task", POUR, "--scene", "bottle_mug_1"]);
    assert_eq!(code(&run(&base)), exit::SKILL_NOT_TRAINED);

    let mut args = base.to_vec();
    args.extend(["--record-training", "--trials", "20"]);
    let out = run(&args);
    assert_eq!(code(&out), exit::OK, "{}", String::from_utf8_lossy(&out.stderr));
    let again = run(&args);
    assert_eq!(out.stdout, again.stdout);

    assert_eq!(code(&run(&base)), exit::OK);
}

#[test]
fn run_with_conditions() {
    let lib = temp_lib();
    run(&["--library", &lib.path, "library", "init"]);
    let task = "put the banana on the plate";
    run(&["--library", &lib.path, "library", "update", "--task", task, "--scene", "banana_plate_1"]);
    let base = vec!["--library", &lib.path, "run", "--task", task, "--scene", "banana_plate_1", "--seed", "9"];
    let mut args = base.clone();
    args.extend(["--record-training", "--profile", "t1_banana_octo_end_to_end_s1", "--trials", "50"]);
    let mut ok = args.clone();
    ok.extend(["--condition", "banana=ID,plate=ID"]);
    assert_eq!(code(&run(&ok)), exit::OK);

    let mut partial = args.clone();
    partial.extend(["--condition", "banana=ID"]);
    assert_eq!(code(&run(&partial)), exit::UNKNOWN_CONDITION);

    let mut malformed = args.clone();
    malformed.extend(["--condition", "banana=maybe"]);
    assert_eq!(code(&run(&malformed)), exit::USAGE);

    let mut unknown = base.clone();
    unknown.extend(["--profile", "no_such_profile"]);
    assert_eq!(code(&run(&unknown)), exit::CONFIG);
}

#[test]
fn ci_mode_requires_a_seed() {
    let lib = temp_lib();
    run(&["--library", &lib.path, "library", "init"]);
    run(&["--library", &lib.path, "library", "update", "--task", POUR, "--scene", "bottle_mug_1"]);
    let args = ["--library", &lib.path, "run", "--task", POUR, "--scene", "bottle_mug_1", "--record-training"];
    let out = command(&repo_root()).args(args).env("CI", "true").output().unwrap();
    assert_eq!(code(&out), exit::CONFIG);
    let out = command(&repo_root()).args(args).env("CI", "true").env("SKILLFORGE_SEED", "5").output().unwrap();
    assert_eq!(code(&out), exit::OK, "{}", String::from_utf8_lossy(&out.stderr));
    let out = command(&repo_root()).args(args).args(["--ci", "--seed", "5"]).output().unwrap();
    assert_eq!(code(&out), exit::OK);
}

#[test]
fn config_precedence_flag_over_env_over_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("skillforge.toml"), "granularity = \"fine\"\nlibrary_path = \"lib.json\"\n").unwrap();
    let granularity = |out: Output| {
        assert_eq!(code(&out), exit::OK, "{}", String::from_utf8_lossy(&out.stderr));
        stdout_json(&out)["granularity"].as_str().unwrap().to_string()
    };
    assert_eq!(granularity(run_in(dir.path(), &["library", "init", "--force"])), "fine");
    assert!(dir.path().join("lib.json").is_file());
    let env = command(dir.path()).args(["library", "init", "--force"]).env("SKILLFORGE_GRANULARITY", "medium").output().unwrap();
    assert_eq!(granularity(env), "medium");
    let flag = command(dir.path())
        .args(["--granularity", "coarse", "library", "init", "--force"])
        .env("SKILLFORGE_GRANULARITY", "medium")
        .output()
        .unwrap();
    assert_eq!(granularity(flag), "coarse");

    std::fs::write(dir.path().join("skillforge.toml"), "granularity = \"fine\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&run_in(dir.path(), &["library", "init", "--force"])), exit::CONFIG);
}

#[test]
fn damaged_library_files_are_rejected() {
    let lib = temp_lib();
    run(&["--library", &lib.path, "library", "init"]);
    let text = std::fs::read_to_string(&lib.path).unwrap();

    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["schema_version"] = Value::from(99);
    std::fs::write(&lib.path, v.to_string()).unwrap();
    assert_eq!(code(&run(&["--library", &lib.path, "library", "inspect"])), exit::SCHEMA_VERSION);

    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["library"]["library_version"] = Value::from(7);
    std::fs::write(&lib.path, v.to_string()).unwrap();
    assert_eq!(code(&run(&["--library", &lib.path, "library", "inspect"])), exit::CORRUPT_LIBRARY);

    std::fs::write(&lib.path, "{ not json").unwrap();
    assert_eq!(code(&run(&["--library", &lib.path, "library", "inspect"])), exit::CORRUPT_LIBRARY);

    assert_eq!(code(&run(&["--library", "/nonexistent/dir/lib.json", "library", "inspect"])), exit::IO);
}

#[test]
fn eval_writes_tables() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = run(&["eval", "--suite", "suites/table2.json", "--out", out_dir.path().to_str().unwrap(), "--seed", "1"]);
    assert_eq!(code(&out), exit::OK, "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(out_dir.path().join("report.md")).unwrap();
    assert!(report.contains('|'));
    let csvs: Vec<_> = walk(out_dir.path()).into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
    assert!(!csvs.is_empty());
    for csv in csvs {
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("method,stage,"), "{}", csv.display());
    }
}

#[test]
fn cost_reports_totals() {
    let out = run(&["cost", "tasks/pour_water.json", "tasks/banana.json", "tasks/pen.json"]);
    assert_eq!(code(&out), exit::OK);
    let report = stdout_json(&out);
    assert_eq!(report["total_end_to_end"], 78);
    assert_eq!(report["total_skill_based"], 51);
    assert_eq!(code(&run(&["cost"])), exit::USAGE);
    assert_eq!(code(&run(&["cost", "tasks/missing.json"])), exit::IO);
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
