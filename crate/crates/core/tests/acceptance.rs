//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use skillforge::abstraction::{
    abstract_subtasks, induced_subtask_texts, Canonicalizer, Granularity, Lexicon, LexiconCanonicalizer,
};
use skillforge::config::GlobalConfig;
use skillforge::eval::{run_batch, BatchSpec};
use skillforge::library::{DemoPolicy, MatchResult, SkillLibrary};
use skillforge::pipeline::Engine;
use skillforge::planner::{Provenance, Subtask, SubtaskStatus, TaskInstruction, TaskPlan};
use skillforge::scene::{infer_relations, BoundingBox, RelationKind, SceneObject, SegmentationMask};
use skillforge::sim::{ExecutorProfile, ProfileSet};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn cli(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skillforge"));
    cmd.current_dir(repo_root()).args(args).env_remove("CI");
    for (k, _) in std::env::vars() {
        if k.starts_with("SKILLFORGE_") {
            cmd.env_remove(k);
        }
    }
    cmd.output().unwrap()
}

fn cli_ok(args: &[&str]) -> Result<Output, String> {
    let out = cli(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("`skillforge {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------
// random phrases from the lexicon grammar

struct Grammar {
    verbs: Vec<String>,
    canonical: BTreeMap<String, String>,
    modifiers: Vec<String>,
    qualifiers: Vec<String>,
    target_preps: BTreeMap<String, String>,
}

const NOUNS: &[&str] = &["cup", "banana", "plate", "mug", "bottle", "pen", "pen holder", "tray", "sponge", "lid", "towel", "block"];
const COLORS: &[&str] = &["red", "green", "blue", "yellow"];

impl Grammar {
    fn load() -> Self {
        let text = std::fs::read_to_string(repo_root().join("lexicon/verbs.json")).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        let strings = |key: &str| -> Vec<String> {
            v[key].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
        };
        let map = |key: &str| -> BTreeMap<String, String> {
            v[key].as_object().unwrap().iter().map(|(k, s)| (k.clone(), s.as_str().unwrap().to_string())).collect()
        };
        let canonical = map("verbs");
        Self {
            verbs: canonical.keys().cloned().collect(),
            canonical,
            modifiers: strings("modifiers"),
            qualifiers: strings("qualifiers"),
            target_preps: map("target_prepositions"),
        }
    }

    fn noun_phrase(&self, rng: &mut StdRng) -> String {
        let mut words = vec!["the".to_string()];
        if rng.random_bool(0.2) {
            words.push(self.qualifiers.choose(rng).unwrap().clone());
        }
        if rng.random_bool(0.4) {
            words.push(COLORS.choose(rng).unwrap().to_string());
        }
        words.push(NOUNS.choose(rng).unwrap().to_string());
        words.join(" ")
    }

    fn phrase(&self, rng: &mut StdRng) -> String {
        let verb = self.verbs.choose(rng).unwrap();
        let mut out = String::new();
        if rng.random_bool(0.2) {
            out.push_str(self.modifiers.choose(rng).unwrap());
            out.push(' ');
        }
        out.push_str(verb);
        out.push(' ');
        out.push_str(&self.noun_phrase(rng));
        if let Some(prep) = self.target_preps.get(&self.canonical[verb]) {
            if rng.random_bool(0.7) {
                out.push(' ');
                out.push_str(prep);
                out.push(' ');
                out.push_str(&self.noun_phrase(rng));
            }
        }
        out
    }
}

fn synthetic_plan(task_id: &str, phrases: &[String], canon: &dyn Canonicalizer) -> TaskPlan {
    let subtasks = phrases
        .iter()
        .enumerate()
        .map(|(i, p)| Subtask {
            ordinal: i as u32 + 1,
            text: p.clone(),
            signature: canon.canonicalize(p).unwrap_or_else(|e| panic!("grammar produced `{p}`: {e}")),
            status: SubtaskStatus::Pending,
            retries: 0,
        })
        .collect();
    TaskPlan {
        task: TaskInstruction::new(task_id, phrases.join(", then ")),
        scene_id: "synthetic".into(),
        subtasks,
        provenance: Provenance { backend_id: "synthetic".into(), prompt_hash: String::new() },
    }
}

fn random_granularity(rng: &mut StdRng) -> Granularity {
    *[Granularity::Coarse, Granularity::Medium, Granularity::Fine].choose(rng).unwrap()
}

// ---------------------------------------------------------------------------
// criteria

fn criterion_1() -> Result<Verdict, String> {
    let start = Instant::now();
    let out = cli_ok(&["cost", "tasks/pour_water.json", "tasks/banana.json", "tasks/pen.json"])?;
    let elapsed = start.elapsed();
    let report: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let tasks = report["tasks"].as_array().ok_or("no tasks array")?;
    let e2e: Vec<u64> = tasks.iter().map(|t| t["end_to_end"].as_u64().unwrap()).collect();
    let sb: Vec<u64> = tasks.iter().map(|t| t["skill_based"].as_u64().unwrap()).collect();
    let pass = e2e == [27, 24, 27] && sb == [18, 15, 18] && elapsed < Duration::from_secs(1);
    Ok(verdict(pass, format!("end-to-end {e2e:?}, skill-based {sb:?}, {:.0} ms", elapsed.as_secs_f64() * 1e3)))
}

fn criterion_2() -> Result<Verdict, String> {
    let engine = Engine::new(GlobalConfig::defaults_at(repo_root())).map_err(|e| e.to_string())?;
    let plan = engine
        .plan("move the red, green, and blue blocks in that order", "blocks_1", Some("blocks_red_green_blue"))
        .map_err(|e| e.to_string())?;
    let mut lib = SkillLibrary::new(Granularity::Medium);
    let manifest = engine.update_cycle(&mut lib, &plan, &DemoPolicy::default()).map_err(|e| e.to_string())?;
    for e in &manifest.entries {
        lib.record_training(&e.skill_id, e.demos_required, "sim_default").map_err(|e| e.to_string())?;
    }
    let ids: Vec<&String> = lib.records.keys().collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("library.json");
    lib.save(&path).map_err(|e| e.to_string())?;
    let out = cli_ok(&[
        "--library",
        path.to_str().unwrap(),
        "cost",
        "tasks/blocks_red_green_blue.json",
        "--new-tasks",
        "tasks/new_block_orders.json",
    ])?;
    let report: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let new_tasks = report["new_tasks"].as_array().ok_or("no new_tasks array")?;
    let missing: Vec<usize> = new_tasks.iter().map(|t| t["missing_skills"].as_array().unwrap().len()).collect();
    let e2e: Vec<u64> = new_tasks.iter().map(|t| t["end_to_end_additional"].as_u64().unwrap_or(0)).collect();
    let pass = ids.len() == 3 && missing == [0, 0, 0] && e2e == [10, 10, 10];
    Ok(verdict(pass, format!("library {ids:?}; missing per order {missing:?}; end-to-end re-collection {e2e:?}")))
}

fn criterion_3(grammar: &Grammar) -> Result<Verdict, String> {
    let lexicon = Arc::new(Lexicon::builtin());
    let canon = LexiconCanonicalizer::new(lexicon.clone());
    let mut rng = StdRng::seed_from_u64(3);
    let mut libs: BTreeMap<&str, SkillLibrary> = BTreeMap::new();
    let mut violations = 0;
    let mut registered = 0;
    for i in 0..100 {
        let g = random_granularity(&mut rng);
        let n = rng.random_range(1..=5);
        let phrases: Vec<String> = (0..n).map(|_| grammar.phrase(&mut rng)).collect();
        let plan = synthetic_plan(&format!("synthetic_{i}"), &phrases, &canon);
        let lib = libs.entry(g.as_str()).or_insert_with(|| SkillLibrary::new(g));
        let manifest = lib.update_cycle(&plan, g, &DemoPolicy::default(), &lexicon).map_err(|e| e.to_string())?;
        registered += manifest.entries.len();
        for e in &manifest.entries {
            lib.record_training(&e.skill_id, e.demos_required, "sim_default").map_err(|e| e.to_string())?;
        }
        let gap = lib.gap_report(&plan, g, &lexicon).map_err(|e| e.to_string())?;
        if !gap.missing.is_empty() {
            violations += 1;
        }
    }
    Ok(verdict(violations == 0, format!("100 tasks, {registered} skills acquired, {violations} violations")))
}

const GRID: u32 = 64;

#[derive(Clone, Copy)]
struct Rect {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

fn random_rect(rng: &mut StdRng, prev: &[Rect]) -> Rect {
    let choice = if prev.is_empty() { 0 } else { rng.random_range(0..4) };
    let p = prev.last().copied();
    match (choice, p) {
        // nested inside the previous rectangle
        (1, Some(p)) if p.x1 - p.x0 >= 2 && p.y1 - p.y0 >= 2 => {
            let x0 = rng.random_range(p.x0..p.x1 - 1);
            let y0 = rng.random_range(p.y0..p.y1 - 1);
            Rect { x0, y0, x1: rng.random_range(x0 + 1..=p.x1), y1: rng.random_range(y0 + 1..=p.y1) }
        }
        // resting just below the previous rectangle
        (2, Some(p)) if p.y1 + 1 < GRID => {
            let y0 = (p.y1 + rng.random_range(0..7)).min(GRID - 1);
            let x0 = rng.random_range(p.x0.saturating_sub(4)..=p.x0.min(GRID - 1));
            let x1 = rng.random_range(x0 + 1..=GRID.min(p.x1 + 4).max(x0 + 1));
            Rect { x0, y0, x1, y1: rng.random_range(y0 + 1..=GRID) }
        }
        _ => {
            let x0 = rng.random_range(0..GRID - 1);
            let y0 = rng.random_range(0..GRID - 1);
            let w = rng.random_range(1..=(GRID - x0).min(40));
            let h = rng.random_range(1..=(GRID - y0).min(40));
            Rect { x0, y0, x1: x0 + w, y1: y0 + h }
        }
    }
}

fn raster(r: &Rect) -> Vec<bool> {
    let mut px = vec![false; (GRID * GRID) as usize];
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            px[(y * GRID + x) as usize] = true;
        }
    }
    px
}

fn encode(px: &[bool]) -> SegmentationMask {
    let mut runs = Vec::new();
    for y in 0..GRID {
        let mut x = 0;
        while x < GRID {
            if px[(y * GRID + x) as usize] {
                let start = x;
                while x < GRID && px[(y * GRID + x) as usize] {
                    x += 1;
                }
                runs.push((y * GRID + start, x - start));
            } else {
                x += 1;
            }
        }
    }
    SegmentationMask { width: GRID, height: GRID, runs }
}

/// Pixel-set view of one object.
struct PixelSet {
    px: Vec<bool>,
    area: u64,
    cols: BTreeSet<u32>,
    rows: BTreeSet<u32>,
}

impl PixelSet {
    fn new(px: Vec<bool>) -> Self {
        let mut cols = BTreeSet::new();
        let mut rows = BTreeSet::new();
        let mut area = 0;
        for (i, &on) in px.iter().enumerate() {
            if on {
                area += 1;
                cols.insert(i as u32 % GRID);
                rows.insert(i as u32 / GRID);
            }
        }
        Self { px, area, cols, rows }
    }
    fn x_min(&self) -> f64 {
        f64::from(*self.cols.first().unwrap())
    }
    fn x_end(&self) -> f64 {
        f64::from(*self.cols.last().unwrap() + 1)
    }
    fn y_min(&self) -> f64 {
        f64::from(*self.rows.first().unwrap())
    }
    fn y_end(&self) -> f64 {
        f64::from(*self.rows.last().unwrap() + 1)
    }
    fn cx(&self) -> f64 {
        (self.x_min() + self.x_end()) / 2.0
    }
    fn cy(&self) -> f64 {
        (self.y_min() + self.y_end()) / 2.0
    }
}

fn shared(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    a.intersection(b).count() as f64 / a.len().min(b.len()) as f64
}

fn oracle_kinds(a: &PixelSet, b: &PixelSet) -> BTreeSet<RelationKind> {
    let inter = a.px.iter().zip(&b.px).filter(|(x, y)| **x && **y).count() as u64;
    let union = a.area + b.area - inter;
    let iou = inter as f64 / union as f64;
    let left = |a: &PixelSet, b: &PixelSet| a.cx() < b.cx() && a.x_end() <= b.cx() && shared(&a.rows, &b.rows) >= 0.25;
    let above = |a: &PixelSet, b: &PixelSet| a.cy() < b.cy() && a.y_end() <= b.cy() && shared(&a.cols, &b.cols) >= 0.25;
    let on_top = |a: &PixelSet, b: &PixelSet| {
        let empty_rows_between = b.y_min() - a.y_end();
        shared(&a.cols, &b.cols) >= 0.5 && (0.0..=5.0).contains(&empty_rows_between)
    };
    let inside = |a: &PixelSet, b: &PixelSet| a.area < b.area && inter as f64 / a.area as f64 >= 0.95;
    let dx = (b.x_min() - a.x_end()).max(a.x_min() - b.x_end()).max(0.0);
    let dy = (b.y_min() - a.y_end()).max(a.y_min() - b.y_end()).max(0.0);
    let mut out = BTreeSet::new();
    let rules = [
        (left(a, b), RelationKind::LeftOf),
        (left(b, a), RelationKind::RightOf),
        (above(a, b), RelationKind::Above),
        (above(b, a), RelationKind::Below),
        (on_top(a, b), RelationKind::OnTopOf),
        (on_top(b, a), RelationKind::Beneath),
        (inside(a, b), RelationKind::Inside),
        (inside(b, a), RelationKind::Contains),
        (inter == 0 && (dx * dx + dy * dy).sqrt() <= 15.0, RelationKind::NextTo),
        (iou > 0.0 && iou < 0.95, RelationKind::Overlapping),
        (inter == 0, RelationKind::Disjoint),
    ];
    for (holds, kind) in rules {
        if holds {
            out.insert(kind);
        }
    }
    out
}

fn criterion_4() -> Result<Verdict, String> {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut pairs = 0;
    let mut seen_kinds: BTreeMap<RelationKind, usize> = BTreeMap::new();
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let mut rects: Vec<Rect> = Vec::new();
        for _ in 0..n {
            let r = random_rect(&mut rng, &rects);
            rects.push(r);
        }
        let sets: Vec<PixelSet> = rects.iter().map(|r| PixelSet::new(raster(r))).collect();
        let objects: Vec<SceneObject> = rects
            .iter()
            .zip(&sets)
            .enumerate()
            .map(|(i, (r, s))| {
                SceneObject::new(format!("o{i}"), "block", BoundingBox::from([r.x0, r.y0, r.x1, r.y1]))
                    .with_mask(encode(&s.px))
            })
            .collect();
        let got: BTreeSet<(String, String, RelationKind)> = infer_relations(&objects)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| (r.subject_id, r.object_id, r.kind))
            .collect();
        let mut want = BTreeSet::new();
        for (i, a) in sets.iter().enumerate() {
            for (j, b) in sets.iter().enumerate() {
                if i == j {
                    continue;
                }
                pairs += 1;
                for kind in oracle_kinds(a, b) {
                    *seen_kinds.entry(kind).or_default() += 1;
                    want.insert((format!("o{i}"), format!("o{j}"), kind));
                }
            }
        }
        mismatches += got.symmetric_difference(&want).count();
    }
    let elapsed = start.elapsed();
    let all_kinds = seen_kinds.len() == 11;
    let pass = mismatches == 0 && elapsed < Duration::from_secs(30) && all_kinds;
    Ok(verdict(
        pass,
        format!(
            "{pairs} ordered pairs, {mismatches} mismatches, {} of 11 kinds exercised, {:.2} s",
            seen_kinds.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn within_3_sigma(rate_pct: f64, p: f64, n: u32) -> (bool, f64) {
    let bound = 3.0 * (p * (1.0 - p) / f64::from(n)).sqrt();
    ((rate_pct / 100.0 - p).abs() <= bound, bound * 100.0)
}

fn criterion_5() -> Result<Verdict, String> {
    let lexicon = Arc::new(Lexicon::builtin());
    let canon = LexiconCanonicalizer::new(lexicon.clone());
    let g = Granularity::Medium;
    let profiles = ProfileSet::new()
        .with(ExecutorProfile::constant("stage_one", 1.0))
        .and_then(|p| p.with(ExecutorProfile::constant("stage_two", 0.8)))
        .and_then(|p| p.with(ExecutorProfile::constant("coin", 0.5)))
        .map_err(|e| e.to_string())?;

    let train = |plan: &TaskPlan, bindings: &[&str]| -> Result<SkillLibrary, String> {
        let mut lib = SkillLibrary::new(g);
        lib.update_cycle(plan, g, &DemoPolicy::default(), &lexicon).map_err(|e| e.to_string())?;
        for (s, b) in plan.subtasks.iter().zip(bindings) {
            let MatchResult::Matched(id) = lib.match_subtask(&s.signature, g) else {
                return Err(format!("subtask `{}` not registered", s.text));
            };
            lib.record_training(&id, 1, b).map_err(|e| e.to_string())?;
        }
        Ok(lib)
    };
    let n = 10_000;
    let spec = |task: &str| BatchSpec {
        task_id: task.into(),
        method: "sim".into(),
        condition: Default::default(),
        trials: n,
        seed: 20_250,
    };

    let two = synthetic_plan("two_stage", &["pick up the bottle".into(), "pour the bottle into the mug".into()], &canon);
    let lib = train(&two, &["stage_one", "stage_two"])?;
    let r = run_batch(&spec("two_stage"), &two, &lib, &profiles, g, 0, None).map_err(|e| e.to_string())?;
    let (ok1, b1) = within_3_sigma(r.stage_rates[0], 1.0, n);
    let (ok2, b2) = within_3_sigma(r.stage_rates[1], 0.8, n);

    let one = synthetic_plan("retry", &["push the block".into()], &canon);
    let lib = train(&one, &["coin"])?;
    let retry = run_batch(&spec("retry"), &one, &lib, &profiles, g, 1, None).map_err(|e| e.to_string())?;
    let expected = 1.0 - (1.0f64 - 0.5).powi(2);
    let (ok3, b3) = within_3_sigma(retry.overall_rate, expected, n);

    Ok(verdict(
        ok1 && ok2 && ok3,
        format!(
            "stages ({:.2}, {:.2}) vs (100 ±{b1:.2}, 80 ±{b2:.2}); retry r=1 p=0.5 {:.2} vs {:.0} ±{b3:.2}",
            r.stage_rates[0],
            r.stage_rates[1],
            retry.overall_rate,
            expected * 100.0
        ),
    ))
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn random_library(rng: &mut StdRng, grammar: &Grammar, canon: &LexiconCanonicalizer) -> Result<SkillLibrary, String> {
    let g = random_granularity(rng);
    let mut lib = SkillLibrary::new(g);
    let n = rng.random_range(0..=4);
    let phrases: Vec<String> = (0..n).map(|_| grammar.phrase(rng)).collect();
    if !phrases.is_empty() {
        let plan = synthetic_plan("random", &phrases, canon);
        let policy = DemoPolicy { demos_per_skill: rng.random_range(1..=20), ..DemoPolicy::default() };
        lib.update_cycle(&plan, g, &policy, canon.lexicon()).map_err(|e| e.to_string())?;
    }
    let ids: Vec<String> = lib.records.keys().cloned().collect();
    for id in ids {
        match rng.random_range(0..4) {
            0 => {}
            1 => lib.record_data(&id, rng.random_range(1..50)).map_err(|e| e.to_string())?,
            2 => lib.record_training(&id, rng.random_range(1..50), "sim_default").map_err(|e| e.to_string())?,
            _ => lib.deprecate(&id).map_err(|e| e.to_string())?,
        }
    }
    Ok(lib)
}

fn criterion_6(grammar: &Grammar) -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        cli_ok(&["eval", "--suite", "suites/table1.json", "--out", out.to_str().unwrap(), "--seed", "41"])?;
    }
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    let csvs = ta.keys().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    let eval_same = csvs > 0 && ta == tb;

    let canon = LexiconCanonicalizer::new(Arc::new(Lexicon::builtin()));
    let mut rng = StdRng::seed_from_u64(6);
    let mut round_trip_failures = 0;
    for i in 0..100 {
        let lib = random_library(&mut rng, grammar, &canon)?;
        let path = dir.path().join(format!("lib_{i}.json"));
        lib.save(&path).map_err(|e| e.to_string())?;
        match SkillLibrary::load(&path) {
            Ok(back) if back == lib => {}
            _ => round_trip_failures += 1,
        }
    }

    let plan_args = ["plan", "--task", "pour water from the bottle into the mug", "--scene", "bottle_mug_1"];
    let p1 = cli_ok(&plan_args)?.stdout;
    let p2 = cli_ok(&plan_args)?.stdout;
    let plan_same = !p1.is_empty() && p1 == p2;

    Ok(verdict(
        eval_same && round_trip_failures == 0 && plan_same,
        format!(
            "(a) {csvs} eval CSVs identical: {eval_same}; (b) {round_trip_failures}/100 round-trip failures; (c) plan output identical: {plan_same}"
        ),
    ))
}

fn criterion_7(grammar: &Grammar) -> Result<Verdict, String> {
    let canon = LexiconCanonicalizer::new(Arc::new(Lexicon::builtin()));
    let mut rng = StdRng::seed_from_u64(7);
    let mut violations = 0;
    let mut defs = 0;
    for _ in 0..100 {
        let g = random_granularity(&mut rng);
        let n = rng.random_range(1..=8);
        let phrases: Vec<String> = (0..n).map(|_| grammar.phrase(&mut rng)).collect();
        let first = abstract_subtasks(&canon, &phrases, g, &BTreeMap::new()).map_err(|e| e.to_string())?;
        defs += first.definitions.len();
        let texts = induced_subtask_texts(&first.definitions);
        let again = abstract_subtasks(&canon, &texts, g, &first.definitions).map_err(|e| e.to_string())?;
        if !again.new_skill_ids.is_empty() || again.definitions != first.definitions {
            violations += 1;
        }
    }
    Ok(verdict(violations == 0, format!("100 batches, {defs} definitions, {violations} batches produced new definitions")))
}

type Check<'a> = Box<dyn Fn() -> Result<Verdict, String> + 'a>;

fn main() {
    let grammar = Grammar::load();
    let criteria: Vec<(&str, Check<'_>)> = vec![
        ("data-cost reproduction", Box::new(criterion_1)),
        ("new-task coverage", Box::new(criterion_2)),
        ("gap closure", Box::new(|| criterion_3(&grammar))),
        ("relation oracle equivalence", Box::new(criterion_4)),
        ("monte carlo fidelity", Box::new(criterion_5)),
        ("determinism and persistence", Box::new(|| criterion_6(&grammar))),
        ("abstraction idempotence", Box::new(|| criterion_7(&grammar))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        failed += usize::from(!v.pass);
        println!("{} criterion {}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
