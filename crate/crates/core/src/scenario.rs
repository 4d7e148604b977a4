//! Built-in scenario construction.
//!
//! The flagship scenario models a morning demand spike over a delivery
//! corridor: a weather constraint invalidates a lane of preplanned
//! routes, every affected operator replans into the same alternate lane
//! within a short window, and one airborne flight goes nonconforming in
//! the middle of the rush. Two operations near the end of the corridor
//! are pinned to a known timing relation so that latency asymmetry
//! between their service suppliers decides which one gets the airspace.
//!
//! Three smaller handwritten scenarios isolate single behaviors: a
//! two-party commit race, serialized rejection under adversarial
//! constraint churn, and the contingency deadline under slow and fast
//! registry links.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::engine::{ActionKind, Params, PreplannedOp, ScenarioScript, ScriptAction, ScriptError};
use crate::geom4d::{AltitudeRange, Footprint, TimeInterval, Volume4D};
use crate::netlink::LinkProfile;
use crate::report::LinkDecl;
use crate::rng::{self, uniform_inclusive};
use crate::uss::{OperationIntent, OperationState};

/// Knobs for the corridor scenario. Kept on the script so sweeps can
/// regenerate it with one field changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Operations preplanned in the lane the constraint closes.
    pub n_ops: u32,
    pub n_uss: u32,
    /// Replanning submissions spread over this window.
    pub window_ms: u64,
    /// Seed for the layout (submission times), independent of run seeds.
    pub seed: u64,
    /// Extra one-way latency on every `ussJ -> dss` link for J >= 2,
    /// handicapping every supplier except the first.
    pub added_latency_ms: u64,
    /// When the airborne flight goes nonconforming.
    pub nonconf_at_ms: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_ops: 40,
            n_uss: 2,
            window_ms: 30_000,
            seed: 7,
            added_latency_ms: 0,
            nonconf_at_ms: 5_000,
        }
    }
}

/// Corridor stride: one operation's slot along the x axis, in cm.
const STRIDE_CM: i64 = 10_000;
const USS_DSS_BASE_MS: u64 = 40;
const USS_DSS_JITTER_MS: u64 = 8;
const PEER_BASE_MS: u64 = 10;
const PEER_JITTER_MS: u64 = 4;

/// Shared mission day: every volume uses the same altitude band and
/// two-hour validity, so conflict comes down to footprints.
fn corridor_volume(x0: i64, y0: i64, x1: i64, y1: i64) -> Volume4D {
    Volume4D {
        footprint: Footprint::rect(x0, y0, x1, y1).expect("generator rectangles are valid"),
        altitude: AltitudeRange::new(30, 90).expect("fixed band"),
        time: TimeInterval::new(0, 7_200_000).expect("fixed window"),
    }
}

fn uss_name(j: u32) -> String {
    format!("uss{j}")
}

fn op_name(k: u32) -> String {
    format!("op{k:02}")
}

fn full_mesh_links(n_uss: u32, added_latency_ms: u64) -> Vec<LinkDecl> {
    let registry_profile = |base: u64| LinkProfile {
        base_latency_ms: base,
        jitter_ms: USS_DSS_JITTER_MS,
        failure_prob: 0.0,
    };
    let peer_profile = LinkProfile {
        base_latency_ms: PEER_BASE_MS,
        jitter_ms: PEER_JITTER_MS,
        failure_prob: 0.0,
    };
    let dss = String::from("dss");
    let mut links = Vec::new();
    for j in 1..=n_uss {
        let uss = uss_name(j);
        let up_base = if j >= 2 { USS_DSS_BASE_MS + added_latency_ms } else { USS_DSS_BASE_MS };
        links.push(LinkDecl { src: uss.clone(), dst: dss.clone(), profile: registry_profile(up_base) });
        links.push(LinkDecl { src: dss.clone(), dst: uss.clone(), profile: registry_profile(USS_DSS_BASE_MS) });
    }
    for a in 1..=n_uss {
        for b in 1..=n_uss {
            if a != b {
                links.push(LinkDecl { src: uss_name(a), dst: uss_name(b), profile: peer_profile });
            }
        }
    }
    links
}

/// Builds the corridor scenario from `spec`.
///
/// Requires at least two operations and two suppliers: the pinned pair
/// (the last two corridor slots) must exist and sit on different USSs.
pub fn make_paper_scenario(spec: &GeneratorSpec) -> Result<ScenarioScript, ScriptError> {
    if spec.n_ops < 2 {
        return Err(ScriptError(String::from("generator needs n_ops >= 2")));
    }
    if spec.n_uss < 2 {
        return Err(ScriptError(String::from("generator needs n_uss >= 2")));
    }
    if spec.n_ops > 99 {
        return Err(ScriptError(String::from("generator supports at most 99 operations")));
    }
    let n = spec.n_ops as i64;
    let s = STRIDE_CM;
    let owner_of = |k: u32| uss_name(1 + (k % spec.n_uss));

    let mut preplanned = Vec::new();
    for k in 0..spec.n_ops {
        let x = k as i64 * s;
        preplanned.push(PreplannedOp {
            uss: owner_of(k),
            intent: OperationIntent {
                op_id: op_name(k),
                extent: vec![corridor_volume(x + 500, 0, x + 9_500, 10_000)],
                area: vec![],
                priority_tag: String::from("routine"),
            },
        });
    }
    // The airborne flight, south of the corridor.
    preplanned.push(PreplannedOp {
        uss: uss_name(1),
        intent: OperationIntent {
            op_id: String::from("flt"),
            extent: vec![corridor_volume(0, -20_000, 50_000, -10_000)],
            area: vec![],
            priority_tag: String::from("inflight"),
        },
    });

    // Replanned intents all shift one lane north, overreaching half a
    // stride into each neighbor slot, so true conflicts are with adjacent
    // slots only. Most operators watch the whole alternate lane, which is
    // what turns a compressed demand window into a rejection storm: every
    // commit invalidates every cycle in flight. The measured pair at the
    // corridor's end watches only nearby slots, so its fate is decided by
    // the timing between the two of them rather than by lane-wide churn.
    let lane2 = corridor_volume(-16_000, 10_800, n * s + 16_000, 21_200);
    let pinned = [spec.n_ops - 1, spec.n_ops - 2];
    let replan_intent = move |k: u32| {
        let x = k as i64 * s;
        let area = if pinned.contains(&k) {
            corridor_volume(x - 16_000, 10_800, x + 31_000, 21_200)
        } else {
            lane2.clone()
        };
        OperationIntent {
            op_id: op_name(k),
            extent: vec![corridor_volume(x, 11_000, x + 15_000, 21_000)],
            area: vec![area],
            priority_tag: String::from("routine"),
        }
    };

    // Submission times are canonical fractions of the window, so sweeping
    // the window rescales one fixed arrival pattern instead of redrawing
    // it: cells differ in demand density and nothing else.
    let mut times = rng::stream(spec.seed, "replan-times");
    let mut submit_at: Vec<u64> = (0..spec.n_ops)
        .map(|_| uniform_inclusive(&mut times, 1_000_000) * spec.window_ms / 1_000_000)
        .collect();
    // Pin the measured pair: the competitor races off immediately, the
    // designated operation follows half a second later.
    submit_at[(spec.n_ops - 1) as usize] = 0;
    submit_at[(spec.n_ops - 2) as usize] = 500;

    let mut actions = Vec::new();
    actions.push(ScriptAction {
        at_ms: 0,
        guard: None,
        kind: ActionKind::PublishConstraint {
            uss: uss_name(2),
            constraint_id: String::from("wx"),
            extent: vec![corridor_volume(-1_000, -500, n * s + 1_000, 10_500)],
        },
    });
    actions.push(ScriptAction {
        at_ms: 0,
        guard: Some(OperationState::Planned),
        kind: ActionKind::Activate { uss: uss_name(1), op: String::from("flt") },
    });
    let mut order: Vec<u32> = (0..spec.n_ops).collect();
    order.sort_by_key(|&k| (submit_at[k as usize], k));
    for k in order {
        actions.push(ScriptAction {
            at_ms: submit_at[k as usize],
            guard: None,
            kind: ActionKind::SubmitIntent {
                uss: owner_of(k),
                intent: replan_intent(k),
                supersedes: Some(op_name(k)),
            },
        });
    }
    let mid = n * s / 2;
    actions.push(ScriptAction {
        at_ms: spec.nonconf_at_ms,
        guard: Some(OperationState::Active),
        kind: ActionKind::BeginNonconformance {
            uss: uss_name(1),
            op: String::from("flt"),
            replacement: OperationIntent {
                op_id: String::from("flt"),
                extent: vec![corridor_volume(mid - 15_000, 22_000, mid + 15_000, 32_000)],
                area: vec![corridor_volume(mid - 21_000, 10_800, mid + 21_000, 32_400)],
                priority_tag: String::from("inflight"),
            },
        },
    });
    actions.sort_by_key(|a| a.at_ms);

    // Each supplier plans one operation at a time, so a compressed demand
    // window backs submissions up behind the planner while lane-wide
    // invalidations stretch every cycle in service.
    let params = Params {
        submission_window_ms: spec.window_ms,
        max_concurrent_scd: 1,
        ..Params::default()
    };

    let script = ScenarioScript {
        schema_version: 1,
        uss_ids: (1..=spec.n_uss).map(uss_name).collect(),
        dss_id: String::from("dss"),
        links: full_mesh_links(spec.n_uss, spec.added_latency_ms),
        params,
        preplanned,
        actions,
        generator: Some(*spec),
        designated_op: Some(op_name(spec.n_ops - 2)),
    };
    Ok(script)
}

fn two_uss_links(uss1_dss_ms: u64, uss2_dss_ms: u64, peer_ms: u64) -> Vec<LinkDecl> {
    vec![
        LinkDecl { src: String::from("uss1"), dst: String::from("dss"), profile: LinkProfile::fixed(uss1_dss_ms) },
        LinkDecl { src: String::from("dss"), dst: String::from("uss1"), profile: LinkProfile::fixed(uss1_dss_ms) },
        LinkDecl { src: String::from("uss2"), dst: String::from("dss"), profile: LinkProfile::fixed(uss2_dss_ms) },
        LinkDecl { src: String::from("dss"), dst: String::from("uss2"), profile: LinkProfile::fixed(uss2_dss_ms) },
        LinkDecl { src: String::from("uss1"), dst: String::from("uss2"), profile: LinkProfile::fixed(peer_ms) },
        LinkDecl { src: String::from("uss2"), dst: String::from("uss1"), profile: LinkProfile::fixed(peer_ms) },
    ]
}

/// Two suppliers race to commit near-miss operations. The slower party
/// queries first, gets overtaken mid-flight, and must absorb exactly one
/// rejection before committing on refreshed state.
pub fn make_race_scenario() -> ScenarioScript {
    ScenarioScript {
        schema_version: 1,
        uss_ids: vec![String::from("uss1"), String::from("uss2")],
        dss_id: String::from("dss"),
        links: two_uss_links(30, 10, 10),
        params: Params::default(),
        preplanned: vec![],
        actions: vec![
            ScriptAction {
                at_ms: 0,
                guard: None,
                kind: ActionKind::SubmitIntent {
                    uss: String::from("uss1"),
                    intent: OperationIntent {
                        op_id: String::from("opA"),
                        extent: vec![corridor_volume(0, 0, 10_000, 10_000)],
                        area: vec![corridor_volume(-1_000, -1_000, 16_000, 11_000)],
                        priority_tag: String::from("routine"),
                    },
                    supersedes: None,
                },
            },
            ScriptAction {
                at_ms: 5,
                guard: None,
                kind: ActionKind::SubmitIntent {
                    uss: String::from("uss2"),
                    intent: OperationIntent {
                        op_id: String::from("opB"),
                        extent: vec![corridor_volume(12_000, 0, 14_000, 10_000)],
                        area: vec![],
                        priority_tag: String::from("routine"),
                    },
                    supersedes: None,
                },
            },
        ],
        generator: None,
        designated_op: Some(String::from("opA")),
    }
}

/// One victim replans while an adversary publishes a drumbeat of small
/// disjoint constraints inside the victim's awareness area, invalidating
/// every commit attempt until the retry budget runs out.
pub fn make_churn_scenario() -> ScenarioScript {
    let slots: [(u64, i64); 5] = [
        (87, 0),
        (126, 2_500),
        (179, 5_000),
        (234, 7_500),
        (291, 10_000),
    ];
    let mut actions = Vec::new();
    for (i, (at_ms, y0)) in slots.iter().enumerate() {
        actions.push(ScriptAction {
            at_ms: *at_ms,
            guard: None,
            kind: ActionKind::PublishConstraint {
                uss: String::from("uss2"),
                constraint_id: format!("k{}", i + 1),
                extent: vec![corridor_volume(12_000, *y0, 14_000, *y0 + 2_000)],
            },
        });
    }
    actions.push(ScriptAction {
        at_ms: 100,
        guard: None,
        kind: ActionKind::SubmitIntent {
            uss: String::from("uss1"),
            intent: OperationIntent {
                op_id: String::from("vic"),
                extent: vec![corridor_volume(0, 0, 10_000, 10_000)],
                area: vec![corridor_volume(-5_000, -5_000, 15_000, 15_000)],
                priority_tag: String::from("routine"),
            },
            supersedes: None,
        },
    });
    actions.sort_by_key(|a| a.at_ms);
    ScenarioScript {
        schema_version: 1,
        uss_ids: vec![String::from("uss1"), String::from("uss2")],
        dss_id: String::from("dss"),
        links: two_uss_links(10, 10, 10),
        params: Params::default(),
        preplanned: vec![],
        actions,
        generator: None,
        designated_op: Some(String::from("vic")),
    }
}

/// An airborne flight goes nonconforming and replans. With `slow` links
/// the replacement cannot commit inside the grace window and contingency
/// is declared exactly at the deadline; with fast links the flight is
/// restored long before it.
pub fn make_contingency_scenario(slow: bool) -> ScenarioScript {
    let base_ms = if slow { 20_000 } else { 20 };
    ScenarioScript {
        schema_version: 1,
        uss_ids: vec![String::from("uss1")],
        dss_id: String::from("dss"),
        links: vec![
            LinkDecl { src: String::from("uss1"), dst: String::from("dss"), profile: LinkProfile::fixed(base_ms) },
            LinkDecl { src: String::from("dss"), dst: String::from("uss1"), profile: LinkProfile::fixed(base_ms) },
        ],
        params: Params::default(),
        preplanned: vec![PreplannedOp {
            uss: String::from("uss1"),
            intent: OperationIntent {
                op_id: String::from("flt"),
                extent: vec![corridor_volume(0, 0, 10_000, 10_000)],
                area: vec![],
                priority_tag: String::from("inflight"),
            },
        }],
        actions: vec![
            ScriptAction {
                at_ms: 0,
                guard: Some(OperationState::Planned),
                kind: ActionKind::Activate { uss: String::from("uss1"), op: String::from("flt") },
            },
            ScriptAction {
                at_ms: 1_000,
                guard: Some(OperationState::Active),
                kind: ActionKind::BeginNonconformance {
                    uss: String::from("uss1"),
                    op: String::from("flt"),
                    replacement: OperationIntent {
                        op_id: String::from("flt"),
                        extent: vec![corridor_volume(20_000, 0, 30_000, 10_000)],
                        area: vec![],
                        priority_tag: String::from("inflight"),
                    },
                },
            },
        ],
        generator: None,
        designated_op: Some(String::from("flt")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::validate_script;
    use crate::geom4d::extents_conflict;

    #[test]
    fn generated_scenarios_validate() {
        let spec = GeneratorSpec::default();
        let script = make_paper_scenario(&spec).unwrap();
        validate_script(&script).unwrap();
        validate_script(&make_race_scenario()).unwrap();
        validate_script(&make_churn_scenario()).unwrap();
        validate_script(&make_contingency_scenario(true)).unwrap();
        validate_script(&make_contingency_scenario(false)).unwrap();
    }

    #[test]
    fn corridor_counts() {
        let spec = GeneratorSpec::default();
        let script = make_paper_scenario(&spec).unwrap();
        assert_eq!(script.preplanned.len(), 41);
        // constraint + activate + 40 replans + nonconformance
        assert_eq!(script.actions.len(), 43);
        assert_eq!(script.designated_op.as_deref(), Some("op38"));
        // 2 USSs: four registry links plus both peer directions
        assert_eq!(script.links.len(), 6);
    }

    /// Replanned slots truly conflict with adjacent slots only; farther
    /// neighbors fall inside the awareness pad but never the extent.
    #[test]
    fn replan_conflict_structure() {
        let spec = GeneratorSpec { n_ops: 8, ..GeneratorSpec::default() };
        let script = make_paper_scenario(&spec).unwrap();
        let mut intents = alloc::collections::BTreeMap::new();
        for a in &script.actions {
            if let ActionKind::SubmitIntent { intent, .. } = &a.kind {
                intents.insert(intent.op_id.clone(), intent.clone());
            }
        }
        assert_eq!(intents.len(), 8);
        for i in 0..8u32 {
            for j in 0..8u32 {
                if i == j {
                    continue;
                }
                let a = &intents[&op_name(i)];
                let b = &intents[&op_name(j)];
                let conflict = extents_conflict(&a.extent, &b.extent).unwrap();
                let adjacent = i.abs_diff(j) == 1;
                assert_eq!(conflict, adjacent, "slots {i} and {j}");
                let aware = extents_conflict(&a.area, &b.extent).unwrap();
                if i < 6 {
                    assert!(aware, "slot {i} watches the whole lane");
                } else {
                    // pinned slots watch three strides to either side
                    assert_eq!(aware, i.abs_diff(j) <= 3, "slots {i} and {j}");
                }
            }
        }
    }

    /// The weather constraint covers every old slot and no replanned one.
    #[test]
    fn constraint_covers_old_lane_only() {
        let spec = GeneratorSpec { n_ops: 6, ..GeneratorSpec::default() };
        let script = make_paper_scenario(&spec).unwrap();
        let wx = script
            .actions
            .iter()
            .find_map(|a| match &a.kind {
                ActionKind::PublishConstraint { extent, .. } => Some(extent.clone()),
                _ => None,
            })
            .unwrap();
        for p in &script.preplanned {
            if p.intent.op_id != "flt" {
                assert!(extents_conflict(&wx, &p.intent.extent).unwrap());
            } else {
                assert!(!extents_conflict(&wx, &p.intent.extent).unwrap());
            }
        }
        for a in &script.actions {
            if let ActionKind::SubmitIntent { intent, .. } = &a.kind {
                assert!(!extents_conflict(&wx, &intent.extent).unwrap());
            }
        }
    }

    #[test]
    fn pinned_pair_split_across_suppliers() {
        let spec = GeneratorSpec::default();
        let script = make_paper_scenario(&spec).unwrap();
        let mut competitor = None;
        let mut designated = None;
        for a in &script.actions {
            if let ActionKind::SubmitIntent { uss, intent, .. } = &a.kind {
                if intent.op_id == "op39" {
                    competitor = Some((a.at_ms, uss.clone()));
                }
                if intent.op_id == "op38" {
                    designated = Some((a.at_ms, uss.clone()));
                }
            }
        }
        assert_eq!(competitor, Some((0, String::from("uss2"))));
        assert_eq!(designated, Some((500, String::from("uss1"))));
    }

    #[test]
    fn added_latency_handicaps_all_but_first() {
        let spec = GeneratorSpec { n_uss: 3, added_latency_ms: 400, ..GeneratorSpec::default() };
        let script = make_paper_scenario(&spec).unwrap();
        for l in &script.links {
            if l.dst == "dss" {
                let expect = if l.src == "uss1" { 40 } else { 440 };
                assert_eq!(l.profile.base_latency_ms, expect, "{}", l.src);
            } else if l.src == "dss" {
                assert_eq!(l.profile.base_latency_ms, 40);
            } else {
                assert_eq!(l.profile.base_latency_ms, 10);
            }
        }
    }

    #[test]
    fn layout_is_seed_stable() {
        let spec = GeneratorSpec::default();
        let a = make_paper_scenario(&spec).unwrap();
        let b = make_paper_scenario(&spec).unwrap();
        assert_eq!(a, b);
        let c = make_paper_scenario(&GeneratorSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn smallest_corridor_still_generates() {
        let spec = GeneratorSpec { n_ops: 2, ..GeneratorSpec::default() };
        let script = make_paper_scenario(&spec).unwrap();
        validate_script(&script).unwrap();
        assert_eq!(script.designated_op.as_deref(), Some("op00"));
        assert!(make_paper_scenario(&GeneratorSpec { n_ops: 1, ..spec }).is_err());
        assert!(make_paper_scenario(&GeneratorSpec { n_uss: 1, ..spec }).is_err());
    }

    /// Churn constraints are pairwise disjoint and sit inside the
    /// victim's awareness area without touching its extent.
    #[test]
    fn churn_geometry() {
        let script = make_churn_scenario();
        let mut constraints = Vec::new();
        let mut victim = None;
        for a in &script.actions {
            match &a.kind {
                ActionKind::PublishConstraint { extent, .. } => constraints.push(extent.clone()),
                ActionKind::SubmitIntent { intent, .. } => victim = Some(intent.clone()),
                _ => {}
            }
        }
        let victim = victim.unwrap();
        assert_eq!(constraints.len(), 5);
        for (i, c) in constraints.iter().enumerate() {
            assert!(!extents_conflict(c, &victim.extent).unwrap(), "k{} must be a near miss", i + 1);
            assert!(extents_conflict(c, &victim.area).unwrap(), "k{} must invalidate", i + 1);
            for other in constraints.iter().skip(i + 1) {
                assert!(!extents_conflict(c, other).unwrap());
            }
        }
    }
}
