//! Discovery and synchronization service: the shared entity registry with
//! optimistic concurrency control.
//!
//! Every stored entity carries an opaque version number (OVN), reissued on
//! each mutation. A put must present the current OVN of every stored
//! entity that conflicts with the volumes it declares relevant: its own
//! extent plus the caller's wider area of interest. A put missing any of
//! those is rejected with the refreshed picture so the caller can check
//! and retry against current state. The area term means a commit can also
//! invalidate callers whose picture merely went stale nearby, which is
//! what forces re-examination rather than blind retry.
//!
//! The store keeps an append-only mutation log; the audit module replays
//! it after a run to prove no conflicting commit ever bypassed the
//! version check.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use alloc::collections::{BTreeMap, BTreeSet};
use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geom4d::{extents_conflict, Volume4D};

/// Opaque version number. Holders can only compare and echo it back;
/// its value carries no other meaning.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ovn(u128);

impl fmt::Display for Ovn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for Ovn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ovn({:032x})", self.0)
    }
}

impl Serialize for Ovn {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&format_args!("{:032x}", self.0))
    }
}

impl<'de> Deserialize<'de> for Ovn {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <&str>::deserialize(deserializer)?;
        u128::from_str_radix(s, 16)
            .map(Ovn)
            .map_err(|_| D::Error::custom("OVN must be a hex string"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Operation,
    Constraint,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Operation => "operation",
            EntityKind::Constraint => "constraint",
        })
    }
}

/// What a query or a rejected put reveals about one stored entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityReference {
    pub id: String,
    pub kind: EntityKind,
    pub owner: String,
    pub ovn: Ovn,
    pub extent: Vec<Volume4D>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PutOutcome {
    Success { ovn: Ovn },
    /// The presented key is stale: it misses the current version of at
    /// least one relevant entity. Carries the full current picture of
    /// entities conflicting with the declared extent and area.
    AirspaceChanged { current_refs: Vec<EntityReference> },
    Invalid { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeleteOutcome {
    Removed,
    /// Unknown id, or a version that is no longer current. Either way
    /// there is nothing matching to remove.
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    Install,
    Put,
    Delete,
}

impl fmt::Display for MutationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutationOp::Install => "install",
            MutationOp::Put => "put",
            MutationOp::Delete => "delete",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOutcome {
    Committed,
    AirspaceChanged,
    Invalid,
    Removed,
    NotFound,
}

impl fmt::Display for MutationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutationOutcome::Committed => "success",
            MutationOutcome::AirspaceChanged => "airspace_changed",
            MutationOutcome::Invalid => "invalid",
            MutationOutcome::Removed => "removed",
            MutationOutcome::NotFound => "not_found",
        })
    }
}

/// One entry of the append-only mutation log. Carries everything the
/// audit replay needs to re-validate the decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub at_ms: u64,
    pub actor: String,
    pub op: MutationOp,
    pub entity_id: String,
    pub kind: EntityKind,
    pub outcome: MutationOutcome,
    /// Extent presented (puts and installs), empty for deletes.
    pub extent: Vec<Volume4D>,
    /// Extra area of interest presented alongside the extent.
    pub area: Vec<Volume4D>,
    /// OVN key presented; for deletes, the single version presented.
    pub key: Vec<Ovn>,
    /// Version issued on success, absent otherwise.
    pub ovn_issued: Option<Ovn>,
}

impl MutationRecord {
    /// One-line text form: `sim_time_ms, actor, op, entity_id, outcome,
    /// ovn_issued`.
    pub fn summary_line(&self) -> String {
        let ovn = match &self.ovn_issued {
            Some(ovn) => format!("{ovn}"),
            None => String::from("-"),
        };
        format!(
            "{}, {}, {}, {}, {}, {}",
            self.at_ms, self.actor, self.op, self.entity_id, self.outcome, ovn
        )
    }
}

/// The registry itself. Single-writer by construction: the engine executes
/// one request at a time, which is what makes the commit log a total
/// order.
#[derive(Debug, Clone)]
pub struct DssStore {
    entities: BTreeMap<String, EntityReference>,
    issued: BTreeSet<Ovn>,
    log: Vec<MutationRecord>,
    ovn_rng: ChaCha8Rng,
}

impl DssStore {
    /// `ovn_stream` should be a dedicated stream (see [`crate::rng`]) so
    /// version numbers never correlate with other draws.
    pub fn new(ovn_stream: ChaCha8Rng) -> Self {
        DssStore {
            entities: BTreeMap::new(),
            issued: BTreeSet::new(),
            log: Vec::new(),
            ovn_rng: ovn_stream,
        }
    }

    fn fresh_ovn(&mut self) -> Ovn {
        loop {
            let hi = u128::from(self.ovn_rng.next_u64());
            let lo = u128::from(self.ovn_rng.next_u64());
            let ovn = Ovn((hi << 64) | lo);
            if self.issued.insert(ovn) {
                return ovn;
            }
        }
    }

    fn push_log(&mut self, record: MutationRecord) {
        debug_assert!(
            self.log.last().is_none_or(|last| last.at_ms <= record.at_ms),
            "mutation log must be time-ordered"
        );
        self.log.push(record);
    }

    /// References to all entities conflicting with `area`, ordered by id.
    /// An empty area matches nothing.
    pub fn query_entities(&self, area: &[Volume4D]) -> Vec<EntityReference> {
        if area.is_empty() {
            return vec![];
        }
        self.entities
            .values()
            .filter(|e| extents_conflict(&e.extent, area).unwrap_or(false))
            .cloned()
            .collect()
    }

    /// Seeds an entity without concurrency checks, for state that exists
    /// before the simulated clock starts. Installs still appear in the
    /// mutation log, so the audit validates them like any other commit.
    pub fn install(
        &mut self,
        at_ms: u64,
        owner: &str,
        id: &str,
        kind: EntityKind,
        extent: Vec<Volume4D>,
    ) -> Ovn {
        let ovn = self.fresh_ovn();
        self.entities.insert(
            String::from(id),
            EntityReference {
                id: String::from(id),
                kind,
                owner: String::from(owner),
                ovn,
                extent: extent.clone(),
            },
        );
        self.push_log(MutationRecord {
            at_ms,
            actor: String::from(owner),
            op: MutationOp::Install,
            entity_id: String::from(id),
            kind,
            outcome: MutationOutcome::Committed,
            extent,
            area: vec![],
            key: vec![],
            ovn_issued: Some(ovn),
        });
        ovn
    }

    /// Creates or replaces `id`. Commits only when `key` holds the current
    /// OVN of every entity conflicting with `extent` or `area` (and of the
    /// entity being replaced); otherwise returns the refreshed picture.
    #[allow(clippy::too_many_arguments)]
    pub fn put_entity(
        &mut self,
        at_ms: u64,
        actor: &str,
        id: &str,
        kind: EntityKind,
        extent: Vec<Volume4D>,
        key: &[Ovn],
        area: Vec<Volume4D>,
    ) -> PutOutcome {
        if extent.is_empty() {
            self.push_log(MutationRecord {
                at_ms,
                actor: String::from(actor),
                op: MutationOp::Put,
                entity_id: String::from(id),
                kind,
                outcome: MutationOutcome::Invalid,
                extent,
                area,
                key: key.to_vec(),
                ovn_issued: None,
            });
            return PutOutcome::Invalid { reason: String::from("empty extent") };
        }

        let mut stale = false;
        if let Some(existing) = self.entities.get(id) {
            if !key.contains(&existing.ovn) {
                stale = true;
            }
        }
        let mut current_refs = Vec::new();
        for e in self.entities.values() {
            if e.id == id {
                continue;
            }
            let relevant = extents_conflict(&e.extent, &extent).unwrap_or(false)
                || (!area.is_empty() && extents_conflict(&e.extent, &area).unwrap_or(false));
            if relevant {
                if !key.contains(&e.ovn) {
                    stale = true;
                }
                current_refs.push(e.clone());
            }
        }

        if stale {
            self.push_log(MutationRecord {
                at_ms,
                actor: String::from(actor),
                op: MutationOp::Put,
                entity_id: String::from(id),
                kind,
                outcome: MutationOutcome::AirspaceChanged,
                extent,
                area,
                key: key.to_vec(),
                ovn_issued: None,
            });
            return PutOutcome::AirspaceChanged { current_refs };
        }

        let ovn = self.fresh_ovn();
        self.entities.insert(
            String::from(id),
            EntityReference {
                id: String::from(id),
                kind,
                owner: String::from(actor),
                ovn,
                extent: extent.clone(),
            },
        );
        self.push_log(MutationRecord {
            at_ms,
            actor: String::from(actor),
            op: MutationOp::Put,
            entity_id: String::from(id),
            kind,
            outcome: MutationOutcome::Committed,
            extent,
            area,
            key: key.to_vec(),
            ovn_issued: Some(ovn),
        });
        PutOutcome::Success { ovn }
    }

    /// Removes `id` when `ovn` is its current version.
    pub fn delete_entity(&mut self, at_ms: u64, actor: &str, id: &str, ovn: Ovn) -> DeleteOutcome {
        let matches = self.entities.get(id).is_some_and(|e| e.ovn == ovn);
        let outcome = if matches {
            self.entities.remove(id);
            DeleteOutcome::Removed
        } else {
            DeleteOutcome::NotFound
        };
        self.push_log(MutationRecord {
            at_ms,
            actor: String::from(actor),
            op: MutationOp::Delete,
            entity_id: String::from(id),
            kind: EntityKind::Operation,
            outcome: match outcome {
                DeleteOutcome::Removed => MutationOutcome::Removed,
                DeleteOutcome::NotFound => MutationOutcome::NotFound,
            },
            extent: vec![],
            area: vec![],
            key: vec![ovn],
            ovn_issued: None,
        });
        outcome
    }

    /// Current contents, ordered by id.
    pub fn snapshot(&self) -> Vec<EntityReference> {
        self.entities.values().cloned().collect()
    }

    pub fn mutation_log(&self) -> &[MutationRecord] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom4d::{AltitudeRange, Footprint, TimeInterval};
    use crate::rng;

    fn store(seed: u64) -> DssStore {
        DssStore::new(rng::stream(seed, "ovn"))
    }

    fn vol(x0: i64, x1: i64) -> Vec<Volume4D> {
        vec![Volume4D {
            footprint: Footprint::rect(x0, 0, x1, 10_000).unwrap(),
            altitude: AltitudeRange::new(0, 100).unwrap(),
            time: TimeInterval::new(0, 1_000_000).unwrap(),
        }]
    }

    #[test]
    fn put_into_empty_airspace_succeeds() {
        let mut s = store(1);
        match s.put_entity(10, "uss1", "a", EntityKind::Operation, vol(0, 100), &[], vec![]) {
            PutOutcome::Success { .. } => {}
            other => panic!("expected success, got {other:?}"),
        }
        assert_eq!(s.snapshot().len(), 1);
    }

    #[test]
    fn conflicting_put_needs_current_ovn() {
        let mut s = store(2);
        let a_ovn = match s.put_entity(0, "uss1", "a", EntityKind::Operation, vol(0, 100), &[], vec![])
        {
            PutOutcome::Success { ovn } => ovn,
            other => panic!("{other:?}"),
        };
        // Overlapping extent, empty key: rejected with the picture.
        match s.put_entity(5, "uss2", "b", EntityKind::Operation, vol(50, 150), &[], vec![]) {
            PutOutcome::AirspaceChanged { current_refs } => {
                assert_eq!(current_refs.len(), 1);
                assert_eq!(current_refs[0].id, "a");
                assert_eq!(current_refs[0].ovn, a_ovn);
            }
            other => panic!("{other:?}"),
        }
        // Same put with the current OVN commits.
        match s.put_entity(6, "uss2", "b", EntityKind::Operation, vol(50, 150), &[a_ovn], vec![]) {
            PutOutcome::Success { .. } => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn area_of_interest_extends_the_currency_check() {
        let mut s = store(3);
        // "b" does not touch the caller's extent, but sits inside the
        // declared area, so its version becomes part of the contract.
        let b_ovn = match s.put_entity(0, "uss2", "b", EntityKind::Operation, vol(200, 300), &[], vec![])
        {
            PutOutcome::Success { ovn } => ovn,
            other => panic!("{other:?}"),
        };
        match s.put_entity(1, "uss1", "a", EntityKind::Operation, vol(0, 100), &[], vol(0, 300)) {
            PutOutcome::AirspaceChanged { current_refs } => {
                assert_eq!(current_refs[0].id, "b");
            }
            other => panic!("{other:?}"),
        }
        match s.put_entity(2, "uss1", "a", EntityKind::Operation, vol(0, 100), &[b_ovn], vol(0, 300))
        {
            PutOutcome::Success { .. } => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replacement_requires_current_version_of_self() {
        let mut s = store(4);
        let ovn1 = match s.put_entity(0, "uss1", "a", EntityKind::Operation, vol(0, 100), &[], vec![])
        {
            PutOutcome::Success { ovn } => ovn,
            other => panic!("{other:?}"),
        };
        match s.put_entity(1, "uss1", "a", EntityKind::Operation, vol(0, 120), &[], vec![]) {
            PutOutcome::AirspaceChanged { .. } => {}
            other => panic!("{other:?}"),
        }
        let ovn2 = match s.put_entity(2, "uss1", "a", EntityKind::Operation, vol(0, 120), &[ovn1], vec![])
        {
            PutOutcome::Success { ovn } => ovn,
            other => panic!("{other:?}"),
        };
        assert_ne!(ovn1, ovn2, "every commit reissues the version");
        // The superseded version no longer deletes.
        assert_eq!(s.delete_entity(3, "uss1", "a", ovn1), DeleteOutcome::NotFound);
        assert_eq!(s.delete_entity(4, "uss1", "a", ovn2), DeleteOutcome::Removed);
        assert_eq!(s.delete_entity(5, "uss1", "a", ovn2), DeleteOutcome::NotFound);
    }

    #[test]
    fn stale_key_entries_for_absent_entities_are_ignored() {
        let mut s = store(5);
        let gone = match s.put_entity(0, "uss1", "x", EntityKind::Operation, vol(0, 100), &[], vec![])
        {
            PutOutcome::Success { ovn } => ovn,
            other => panic!("{other:?}"),
        };
        assert_eq!(s.delete_entity(1, "uss1", "x", gone), DeleteOutcome::Removed);
        // Key still carries the deleted entity's version: harmless.
        match s.put_entity(2, "uss2", "y", EntityKind::Operation, vol(0, 100), &[gone], vec![]) {
            PutOutcome::Success { .. } => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_extent_is_invalid() {
        let mut s = store(6);
        match s.put_entity(0, "uss1", "a", EntityKind::Operation, vec![], &[], vec![]) {
            PutOutcome::Invalid { .. } => {}
            other => panic!("{other:?}"),
        }
        assert!(s.is_empty());
    }

    #[test]
    fn query_matches_linear_scan_oracle() {
        use crate::geom4d::volumes_intersect;
        let mut s = store(7);
        let mut gen = rng::stream(7, "dss-query-test");
        for i in 0..40 {
            let extent = crate::oracle::gen_extent(&mut gen, (i % 7) * 300, (i % 5) * 200, 600, 2);
            s.install(i as u64, "uss1", &format!("e{i:02}"), EntityKind::Operation, extent);
        }
        for j in 0..60 {
            let area = crate::oracle::gen_extent(&mut gen, (j % 9) * 250, (j % 4) * 250, 700, 2);
            let got: Vec<String> =
                s.query_entities(&area).into_iter().map(|r| r.id).collect();
            let mut want: Vec<String> = s
                .snapshot()
                .into_iter()
                .filter(|e| {
                    e.extent
                        .iter()
                        .any(|ve| area.iter().any(|va| volumes_intersect(ve, va)))
                })
                .map(|e| e.id)
                .collect();
            want.sort();
            assert_eq!(got, want);
        }
        assert!(s.query_entities(&[]).is_empty());
    }

    #[test]
    fn ovns_are_unique_across_mutations() {
        let mut s = store(8);
        let mut seen = alloc::collections::BTreeSet::new();
        for i in 0..500u64 {
            let id = format!("e{}", i % 50);
            let key: Vec<Ovn> = s.query_entities(&vol(0, 10_000)).iter().map(|r| r.ovn).collect();
            match s.put_entity(i, "uss1", &id, EntityKind::Operation, vol(0, 10_000), &key, vec![])
            {
                PutOutcome::Success { ovn } => {
                    assert!(seen.insert(ovn), "OVN reuse at step {i}");
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn summary_line_format_is_stable() {
        let mut s = store(9);
        s.install(0, "uss1", "op00", EntityKind::Operation, vol(0, 100));
        let line = s.mutation_log()[0].summary_line();
        let fields: Vec<&str> = line.split(", ").collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[0], "0");
        assert_eq!(fields[1], "uss1");
        assert_eq!(fields[2], "install");
        assert_eq!(fields[3], "op00");
        assert_eq!(fields[4], "success");
        assert_eq!(fields[5].len(), 32);
    }

    #[test]
    fn ovn_serializes_as_hex_string() {
        let mut s = store(10);
        let ovn = s.install(0, "uss1", "a", EntityKind::Operation, vol(0, 100));
        let json = serde_json::to_string(&ovn).unwrap();
        assert_eq!(json.len(), 34); // 32 hex chars plus quotes
        let back: Ovn = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ovn);
    }
}
