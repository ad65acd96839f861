use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use skillforge::abstraction::{Canonicalizer, Granularity, Lexicon, LexiconCanonicalizer};
use skillforge::eval::{run_batch, BatchSpec};
use skillforge::library::{DemoPolicy, MatchResult, SkillLibrary, SkillStatus};
use skillforge::planner::{Provenance, Subtask, SubtaskStatus, TaskInstruction, TaskPlan};
use skillforge::scene::{infer_relations, BoundingBox, RelationKind, SceneObject, SegmentationMask};
use skillforge::sim::{data_cost, uniform_draw, ExecutorProfile, ProfileSet, SlotSpec, Strategy as CostStrategy, TaskSpec};

const PHRASES: &[&str] = &[
    "pick up the banana",
    "place the banana onto the plate",
    "grasp the bottle",
    "pour the bottle into the mug",
    "move the red block to the tray",
    "open the drawer",
    "wipe the table",
    "lift the pen",
    "put the pen into the pen holder",
];

fn plan_of(phrases: &[&str]) -> TaskPlan {
    let canon = LexiconCanonicalizer::new(Arc::new(Lexicon::builtin()));
    TaskPlan {
        task: TaskInstruction::new("prop", phrases.join(", ")),
        scene_id: "prop".into(),
        subtasks: phrases
            .iter()
            .enumerate()
            .map(|(i, p)| Subtask {
                ordinal: i as u32 + 1,
                text: p.to_string(),
                signature: canon.canonicalize(p).unwrap(),
                status: SubtaskStatus::Pending,
                retries: 0,
            })
            .collect(),
        provenance: Provenance { backend_id: "prop".into(), prompt_hash: String::new() },
    }
}

fn granularity() -> impl Strategy<Value = Granularity> {
    prop_oneof![Just(Granularity::Coarse), Just(Granularity::Medium), Just(Granularity::Fine)]
}

fn rect() -> impl Strategy<Value = [u32; 4]> {
    (0u32..60, 0u32..60, 1u32..30, 1u32..30).prop_map(|(x, y, w, h)| [x, y, (x + w).min(64), (y + h).min(64)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn library_version_tracks_log(ops in prop::collection::vec((0usize..PHRASES.len(), 0u8..4), 1..30), g in granularity()) {
        let lexicon = Lexicon::builtin();
        let mut lib = SkillLibrary::new(g);
        for (idx, op) in ops {
            let plan = plan_of(&[PHRASES[idx]]);
            let _ = lib.update_cycle(&plan, g, &DemoPolicy::default(), &lexicon);
            let id = match lib.match_subtask(&plan.subtasks[0].signature, g) {
                MatchResult::Matched(id) => id,
                MatchResult::Missing => continue,
            };
            let before = lib.get(&id).unwrap().status;
            let result = match op {
                0 => lib.record_data(&id, 3),
                1 => lib.record_training(&id, 9, "sim_default"),
                2 => lib.deprecate(&id),
                _ => Ok(()),
            };
            if before == SkillStatus::Deprecated && op < 3 {
                prop_assert!(result.is_err());
            }
            prop_assert_eq!(lib.library_version as usize, lib.update_log.len());
            prop_assert!(lib.validate().is_ok());
        }
    }

    #[test]
    fn stage_rates_never_increase(ps in prop::collection::vec(0.0f64..=1.0, 1..5), seed in any::<u64>(), retries in 0u32..3) {
        let phrases = &PHRASES[..ps.len()];
        let plan = plan_of(phrases);
        let g = Granularity::Fine;
        let mut profiles = ProfileSet::new();
        let mut lib = SkillLibrary::new(g);
        lib.update_cycle(&plan, g, &DemoPolicy::default(), &Lexicon::builtin()).unwrap();
        for (i, (s, p)) in plan.subtasks.iter().zip(&ps).enumerate() {
            let pid = format!("p{i}");
            profiles.insert(ExecutorProfile::constant(&pid, *p)).unwrap();
            let MatchResult::Matched(id) = lib.match_subtask(&s.signature, g) else { unreachable!() };
            lib.record_training(&id, 1, &pid).unwrap();
        }
        let spec = BatchSpec { task_id: "prop".into(), method: "m".into(), condition: Default::default(), trials: 200, seed };
        let r = run_batch(&spec, &plan, &lib, &profiles, g, retries, None).unwrap();
        for w in r.stage_rates.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert_eq!(r.overall_rate, *r.stage_rates.last().unwrap());
    }

    #[test]
    fn uniform_draw_is_a_pure_unit_interval_function(seed in any::<u64>(), trial in any::<u64>(), ordinal in 1u32..50, attempt in 0u32..5) {
        let u = uniform_draw(seed, trial, ordinal, attempt);
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert_eq!(u.to_bits(), uniform_draw(seed, trial, ordinal, attempt).to_bits());
    }

    #[test]
    fn relations_are_antisymmetric_and_exclusive(boxes in prop::collection::vec(rect(), 2..6)) {
        let objects: Vec<SceneObject> = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| SceneObject::new(format!("o{i}"), "thing", BoundingBox::from(*b)))
            .collect();
        let rels = infer_relations(&objects).unwrap();
        let set: BTreeSet<(String, String, RelationKind)> =
            rels.iter().map(|r| (r.subject_id.clone(), r.object_id.clone(), r.kind)).collect();
        prop_assert_eq!(set.len(), rels.len());
        for (s, o, k) in &set {
            prop_assert!(s != o);
            prop_assert!(set.contains(&(o.clone(), s.clone(), k.converse())));
        }
        for a in &objects {
            for b in &objects {
                if a.object_id == b.object_id {
                    continue;
                }
                let exclusive = [RelationKind::Inside, RelationKind::Contains, RelationKind::Disjoint]
                    .iter()
                    .filter(|k| set.contains(&(a.object_id.clone(), b.object_id.clone(), **k)))
                    .count();
                prop_assert!(exclusive <= 1);
            }
        }
        let mut sorted = rels.clone();
        sorted.sort();
        prop_assert_eq!(sorted, rels);
    }

    #[test]
    fn mask_raster_round_trip(pixels in prop::collection::vec(any::<bool>(), 12 * 9)) {
        prop_assume!(pixels.iter().any(|p| *p));
        let mask = SegmentationMask::from_raster(12, 9, &pixels);
        prop_assert!(mask.check().is_ok());
        prop_assert_eq!(mask.to_raster(), pixels.clone());
        prop_assert_eq!(mask.pixel_count() as usize, pixels.iter().filter(|p| **p).count());
    }

    #[test]
    fn end_to_end_cost_is_multiplicative(counts in prop::collection::vec(1u32..6, 1..4), per in 1u32..10) {
        let spec = TaskSpec {
            task_id: "prop".into(),
            slots: counts.iter().enumerate().map(|(i, c)| SlotSpec { slot: format!("s{i}"), position_count: *c }).collect(),
            demos_per_setting: per,
            skill_split: Vec::new(),
        };
        let expected: u64 = counts.iter().map(|c| u64::from(*c)).product::<u64>() * u64::from(per);
        prop_assert_eq!(data_cost(&spec, CostStrategy::EndToEnd), expected);
    }
}
