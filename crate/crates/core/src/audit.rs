//! Post-run safety audit: serially replays a DSS mutation log and proves
//! that no entity was ever committed while conflicting with a then-present
//! entity absent from its key, and that replaying the log reproduces the
//! reported final registry exactly.
//!
//! The audit re-derives conflicts from the logged volumes; it does not
//! trust any verdict recorded by the store at run time.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use core::fmt;

use crate::dss::{EntityReference, MutationOp, MutationOutcome, MutationRecord};
use crate::geom4d::extents_conflict;

#[derive(Debug, Clone, PartialEq)]
pub enum AuditError {
    /// A commit's key missed the then-current version of a conflicting
    /// entity.
    CoverageViolation { at_ms: u64, entity_id: String, conflicting_id: String },
    /// The log's own bookkeeping contradicts itself (a successful delete
    /// of something absent, a commit without an issued version, ...).
    InconsistentLog { at_ms: u64, detail: String },
    /// Timestamps went backwards.
    NonMonotonicLog { at_ms: u64, previous_ms: u64 },
    /// Replaying the log does not reproduce the reported final registry.
    FinalStateMismatch { detail: String },
}

impl fmt::Display for AuditError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditError::CoverageViolation { at_ms, entity_id, conflicting_id } => write!(
                f,
                "commit of {entity_id} at {at_ms} ms conflicted with {conflicting_id} \
                 without presenting its current version"
            ),
            AuditError::InconsistentLog { at_ms, detail } => {
                write!(f, "inconsistent log at {at_ms} ms: {detail}")
            }
            AuditError::NonMonotonicLog { at_ms, previous_ms } => {
                write!(f, "log timestamp {at_ms} ms precedes {previous_ms} ms")
            }
            AuditError::FinalStateMismatch { detail } => {
                write!(f, "final registry mismatch: {detail}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AuditStats {
    pub commits: u32,
    pub rejections: u32,
    pub deletes: u32,
}

/// Replays `log` and compares the result against `final_entities`.
pub fn replay(
    log: &[MutationRecord],
    final_entities: &[EntityReference],
) -> Result<AuditStats, AuditError> {
    let mut present: BTreeMap<String, EntityReference> = BTreeMap::new();
    let mut stats = AuditStats::default();
    let mut last_ms = 0u64;

    for rec in log {
        if rec.at_ms < last_ms {
            return Err(AuditError::NonMonotonicLog { at_ms: rec.at_ms, previous_ms: last_ms });
        }
        last_ms = rec.at_ms;

        match (rec.op, rec.outcome) {
            (MutationOp::Install | MutationOp::Put, MutationOutcome::Committed) => {
                let issued = rec.ovn_issued.ok_or_else(|| AuditError::InconsistentLog {
                    at_ms: rec.at_ms,
                    detail: format!("commit of {} without an issued version", rec.entity_id),
                })?;
                for other in present.values() {
                    if other.id == rec.entity_id {
                        continue;
                    }
                    let conflicting =
                        extents_conflict(&other.extent, &rec.extent).map_err(|e| {
                            AuditError::InconsistentLog {
                                at_ms: rec.at_ms,
                                detail: format!("bad extent in log: {e}"),
                            }
                        })?;
                    if conflicting && !rec.key.contains(&other.ovn) {
                        return Err(AuditError::CoverageViolation {
                            at_ms: rec.at_ms,
                            entity_id: rec.entity_id.clone(),
                            conflicting_id: other.id.clone(),
                        });
                    }
                }
                if let Some(replaced) = present.get(&rec.entity_id) {
                    if !rec.key.contains(&replaced.ovn) {
                        return Err(AuditError::CoverageViolation {
                            at_ms: rec.at_ms,
                            entity_id: rec.entity_id.clone(),
                            conflicting_id: replaced.id.clone(),
                        });
                    }
                }
                present.insert(
                    rec.entity_id.clone(),
                    EntityReference {
                        id: rec.entity_id.clone(),
                        kind: rec.kind,
                        owner: rec.actor.clone(),
                        ovn: issued,
                        extent: rec.extent.clone(),
                    },
                );
                stats.commits += 1;
            }
            (MutationOp::Put, MutationOutcome::AirspaceChanged | MutationOutcome::Invalid) => {
                stats.rejections += 1;
            }
            (MutationOp::Delete, MutationOutcome::Removed) => {
                let presented = rec.key.first().copied();
                match present.get(&rec.entity_id) {
                    Some(e) if Some(e.ovn) == presented => {
                        present.remove(&rec.entity_id);
                        stats.deletes += 1;
                    }
                    _ => {
                        return Err(AuditError::InconsistentLog {
                            at_ms: rec.at_ms,
                            detail: format!(
                                "removal of {} does not match replayed state",
                                rec.entity_id
                            ),
                        })
                    }
                }
            }
            (MutationOp::Delete, MutationOutcome::NotFound) => {
                let presented = rec.key.first().copied();
                if let Some(e) = present.get(&rec.entity_id) {
                    if Some(e.ovn) == presented {
                        return Err(AuditError::InconsistentLog {
                            at_ms: rec.at_ms,
                            detail: format!(
                                "{} reported missing while present with that version",
                                rec.entity_id
                            ),
                        });
                    }
                }
            }
            (op, outcome) => {
                return Err(AuditError::InconsistentLog {
                    at_ms: rec.at_ms,
                    detail: format!("impossible record: {op} with outcome {outcome}"),
                })
            }
        }
    }

    if present.len() != final_entities.len() {
        return Err(AuditError::FinalStateMismatch {
            detail: format!(
                "replay holds {} entities, report holds {}",
                present.len(),
                final_entities.len()
            ),
        });
    }
    for want in final_entities {
        match present.get(&want.id) {
            Some(got) if got == want => {}
            Some(_) => {
                return Err(AuditError::FinalStateMismatch {
                    detail: format!("entity {} differs after replay", want.id),
                })
            }
            None => {
                return Err(AuditError::FinalStateMismatch {
                    detail: format!("entity {} missing after replay", want.id),
                })
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dss::{DssStore, EntityKind, Ovn, PutOutcome};
    use crate::geom4d::{AltitudeRange, Footprint, TimeInterval, Volume4D};
    use crate::rng;
    use alloc::vec;

    fn vol(x0: i64, x1: i64) -> Vec<Volume4D> {
        vec![Volume4D {
            footprint: Footprint::rect(x0, 0, x1, 100).unwrap(),
            altitude: AltitudeRange::new(0, 100).unwrap(),
            time: TimeInterval::new(0, 1_000).unwrap(),
        }]
    }

    #[test]
    fn clean_history_replays() {
        let mut s = DssStore::new(rng::stream(1, "ovn"));
        let a = s.install(0, "uss1", "a", EntityKind::Operation, vol(0, 100));
        match s.put_entity(1, "uss2", "b", EntityKind::Operation, vol(50, 150), &[a], vec![]) {
            PutOutcome::Success { .. } => {}
            other => panic!("{other:?}"),
        }
        s.delete_entity(2, "uss1", "a", a);
        let stats = replay(s.mutation_log(), &s.snapshot()).unwrap();
        assert_eq!(stats, AuditStats { commits: 2, rejections: 0, deletes: 1 });
    }

    #[test]
    fn doctored_key_is_detected() {
        let mut s = DssStore::new(rng::stream(2, "ovn"));
        let a = s.install(0, "uss1", "a", EntityKind::Operation, vol(0, 100));
        match s.put_entity(1, "uss2", "b", EntityKind::Operation, vol(50, 150), &[a], vec![]) {
            PutOutcome::Success { .. } => {}
            other => panic!("{other:?}"),
        }
        let mut log = s.mutation_log().to_vec();
        // Pretend the second commit never presented a's version.
        log[1].key.clear();
        match replay(&log, &s.snapshot()) {
            Err(AuditError::CoverageViolation { entity_id, conflicting_id, .. }) => {
                assert_eq!(entity_id, "b");
                assert_eq!(conflicting_id, "a");
            }
            other => panic!("expected coverage violation, got {other:?}"),
        }
    }

    #[test]
    fn truncated_log_mismatches_final_state() {
        let mut s = DssStore::new(rng::stream(3, "ovn"));
        s.install(0, "uss1", "a", EntityKind::Operation, vol(0, 100));
        s.install(1, "uss1", "b", EntityKind::Operation, vol(500, 600));
        let log = &s.mutation_log()[..1];
        assert!(matches!(
            replay(log, &s.snapshot()),
            Err(AuditError::FinalStateMismatch { .. })
        ));
    }

    #[test]
    fn reordered_log_is_detected() {
        let mut s = DssStore::new(rng::stream(4, "ovn"));
        s.install(0, "uss1", "a", EntityKind::Operation, vol(0, 100));
        s.install(5, "uss1", "b", EntityKind::Operation, vol(500, 600));
        let mut log = s.mutation_log().to_vec();
        log.swap(0, 1);
        assert!(matches!(replay(&log, &s.snapshot()), Err(AuditError::NonMonotonicLog { .. })));
    }

    #[test]
    fn fabricated_delete_is_detected() {
        let mut s = DssStore::new(rng::stream(5, "ovn"));
        let a = s.install(0, "uss1", "a", EntityKind::Operation, vol(0, 100));
        s.delete_entity(1, "uss1", "a", a);
        let mut log = s.mutation_log().to_vec();
        // Claim a second successful removal of the same entity.
        let mut fake = log[1].clone();
        fake.at_ms = 2;
        log.push(fake);
        assert!(matches!(replay(&log, &s.snapshot()), Err(AuditError::InconsistentLog { .. })));
    }

    /// Random well-behaved interleavings from several writers must always
    /// replay cleanly, and the replayed registry must equal the real one.
    #[test]
    fn random_interleavings_replay() {
        for seed in 0..20u64 {
            let mut s = DssStore::new(rng::stream(seed, "ovn"));
            let mut gen = rng::stream(seed, "audit-fuzz");
            let mut live: Vec<(alloc::string::String, Ovn)> = Vec::new();
            for step in 0..120u64 {
                let actor = format!("uss{}", 1 + rng::uniform_inclusive(&mut gen, 2));
                let roll = rng::uniform_inclusive(&mut gen, 99);
                if roll < 70 || live.is_empty() {
                    let id = format!("e{}", rng::uniform_inclusive(&mut gen, 30));
                    let x0 = rng::uniform_inclusive(&mut gen, 2_000) as i64;
                    let extent = vol(x0, x0 + 300);
                    // Honest writer: present the full current picture.
                    let key: Vec<Ovn> =
                        s.snapshot().iter().map(|e| e.ovn).collect();
                    if let PutOutcome::Success { ovn } = s.put_entity(
                        step,
                        &actor,
                        &id,
                        EntityKind::Operation,
                        extent,
                        &key,
                        vec![],
                    ) {
                        live.retain(|(lid, _)| *lid != id);
                        live.push((id, ovn));
                    }
                } else {
                    let pick = rng::uniform_inclusive(&mut gen, live.len() as u64 - 1) as usize;
                    let (id, ovn) = live.swap_remove(pick);
                    s.delete_entity(step, &actor, &id, ovn);
                }
            }
            replay(s.mutation_log(), &s.snapshot())
                .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }
}
