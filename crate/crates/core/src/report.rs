//! The run report: everything a run produced, in deterministic order, so
//! equal scenarios and seeds serialize to identical bytes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dss::{EntityReference, MutationOutcome, MutationRecord};
use crate::engine::Params;
use crate::metrics::{ContingencyRecord, ScdOutcome, ScdSample};
use crate::netlink::{LinkProfile, TrafficRecord};
use crate::uss::OperationState;

/// A directed link as declared by the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDecl {
    pub src: String,
    pub dst: String,
    pub profile: LinkProfile,
}

/// One lifecycle move of one operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub at_ms: u64,
    pub uss: String,
    pub op: String,
    pub from: OperationState,
    pub to: OperationState,
}

/// Engine-level happenings in execution order. Service events carry the
/// instant the serving side executed them, which is also when their
/// response departed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventRecord {
    ScdSubmit { at_ms: u64, uss: String, op: String },
    ScdQueued { at_ms: u64, uss: String, op: String },
    DssQuery { at_ms: u64, uss: String, op: String, refs: u32 },
    DssPut { at_ms: u64, uss: String, op: String, outcome: MutationOutcome },
    DssDelete { at_ms: u64, uss: String, op: String, outcome: MutationOutcome },
    PeerFetch { at_ms: u64, uss: String, peer: String, op: String, ids: u32 },
    ScdOutcome { at_ms: u64, uss: String, op: String, outcome: ScdOutcome, attempts: u32 },
    ConstraintPublished { at_ms: u64, uss: String, id: String },
    ConstraintUnreachable { at_ms: u64, uss: String, id: String },
    LinkReconfigured { at_ms: u64, src: String, dst: String },
    ContingencyDeclared { at_ms: u64, uss: String, op: String, deadline_ms: u64 },
    ActionSkipped { at_ms: u64, index: u32, reason: String },
    TransportFailed { at_ms: u64, uss: String, op: String },
}

impl EventRecord {
    pub fn at_ms(&self) -> u64 {
        match self {
            EventRecord::ScdSubmit { at_ms, .. }
            | EventRecord::ScdQueued { at_ms, .. }
            | EventRecord::DssQuery { at_ms, .. }
            | EventRecord::DssPut { at_ms, .. }
            | EventRecord::DssDelete { at_ms, .. }
            | EventRecord::PeerFetch { at_ms, .. }
            | EventRecord::ScdOutcome { at_ms, .. }
            | EventRecord::ConstraintPublished { at_ms, .. }
            | EventRecord::ConstraintUnreachable { at_ms, .. }
            | EventRecord::LinkReconfigured { at_ms, .. }
            | EventRecord::ContingencyDeclared { at_ms, .. }
            | EventRecord::ActionSkipped { at_ms, .. }
            | EventRecord::TransportFailed { at_ms, .. } => *at_ms,
        }
    }
}

/// Final state of one operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpFinal {
    pub uss: String,
    pub op: String,
    pub state: OperationState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub seed: u64,
    pub params: Params,
    pub uss_ids: Vec<String>,
    pub dss_id: String,
    pub links: Vec<LinkDecl>,
    pub n_preplanned: u32,
    pub n_submitted_new: u32,
    pub event_log: Vec<EventRecord>,
    pub lifecycle: Vec<TransitionRecord>,
    pub scd_samples: Vec<ScdSample>,
    pub contingencies: Vec<ContingencyRecord>,
    pub dss_mutations: Vec<MutationRecord>,
    /// Traffic per directed link, keyed `src->dst`.
    pub traffic: BTreeMap<String, Vec<TrafficRecord>>,
    /// DSS contents at queue exhaustion, ordered by id.
    pub final_entities: Vec<EntityReference>,
    /// Final operation states, ordered by (uss, op).
    pub ops_final: Vec<OpFinal>,
}

/// Operation counts by final state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Census {
    pub draft: u32,
    pub planned: u32,
    pub active: u32,
    pub nonconforming: u32,
    pub contingent: u32,
    pub rejected: u32,
    pub ended: u32,
}

impl Census {
    pub fn total(&self) -> u32 {
        self.draft
            + self.planned
            + self.active
            + self.nonconforming
            + self.contingent
            + self.rejected
            + self.ended
    }
}

impl SimReport {
    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for row in &self.ops_final {
            match row.state {
                OperationState::Draft => c.draft += 1,
                OperationState::Planned => c.planned += 1,
                OperationState::Active => c.active += 1,
                OperationState::Nonconforming => c.nonconforming += 1,
                OperationState::Contingent => c.contingent += 1,
                OperationState::Rejected => c.rejected += 1,
                OperationState::Ended => c.ended += 1,
            }
        }
        c
    }

    /// Conservation over the run: every operation that entered the system
    /// is accounted for in the final census, and none is still mid-flight
    /// once the event queue has drained.
    pub fn conservation_holds(&self) -> bool {
        let census = self.census();
        census.total() == self.n_preplanned + self.n_submitted_new && census.draft == 0
    }

    /// Mutation log in its one-line text form.
    pub fn mutation_lines(&self) -> Vec<String> {
        self.dss_mutations.iter().map(|m| m.summary_line()).collect()
    }
}
