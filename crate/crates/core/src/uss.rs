//! USS-side operation state: the lifecycle state machine, the intent
//! details service peers query during deconfliction, and the local
//! constraint registry. The planning loop itself runs in the engine; this
//! module owns the rules the loop must respect.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::dss::Ovn;
use crate::geom4d::Volume4D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationState {
    Draft,
    Planned,
    Active,
    Nonconforming,
    Contingent,
    Rejected,
    Ended,
}

impl OperationState {
    pub fn name(&self) -> &'static str {
        match self {
            OperationState::Draft => "draft",
            OperationState::Planned => "planned",
            OperationState::Active => "active",
            OperationState::Nonconforming => "nonconforming",
            OperationState::Contingent => "contingent",
            OperationState::Rejected => "rejected",
            OperationState::Ended => "ended",
        }
    }

    pub fn from_name(name: &str) -> Option<OperationState> {
        Some(match name {
            "draft" => OperationState::Draft,
            "planned" => OperationState::Planned,
            "active" => OperationState::Active,
            "nonconforming" => OperationState::Nonconforming,
            "contingent" => OperationState::Contingent,
            "rejected" => OperationState::Rejected,
            "ended" => OperationState::Ended,
            _ => return None,
        })
    }
}

impl fmt::Display for OperationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Allowed lifecycle moves. `Planned -> Planned` is the successful replan
/// of a not-yet-flying operation; `Planned -> Rejected` is the failed
/// one, which grounds the flight because its old volumes were already
/// vacated. `Nonconforming -> Planned` is a replacement volume committing
/// within the grace window.
pub fn transition_allowed(from: OperationState, to: OperationState) -> bool {
    use OperationState::*;
    matches!(
        (from, to),
        (Draft, Planned)
            | (Draft, Rejected)
            | (Planned, Planned)
            | (Planned, Active)
            | (Planned, Rejected)
            | (Active, Nonconforming)
            | (Active, Ended)
            | (Nonconforming, Planned)
            | (Nonconforming, Contingent)
            | (Contingent, Ended)
    )
}

/// What an operator wants to fly: the volumes it will occupy plus the
/// wider area it wants to keep a current picture of while planning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationIntent {
    pub op_id: String,
    pub extent: Vec<Volume4D>,
    /// Extra area of interest beyond the extent; may be empty.
    pub area: Vec<Volume4D>,
    pub priority_tag: String,
}

impl OperationIntent {
    /// Volumes queried and declared on puts: extent plus area.
    pub fn query_scope(&self) -> Vec<Volume4D> {
        let mut scope = self.extent.clone();
        scope.extend(self.area.iter().cloned());
        scope
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionError {
    pub op_id: String,
    pub from: OperationState,
    pub to: OperationState,
}

impl fmt::Display for TransitionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "operation {}: illegal transition {} -> {}", self.op_id, self.from, self.to)
    }
}

/// One operation as its owning USS tracks it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagedOperation {
    pub intent: OperationIntent,
    pub state: OperationState,
    /// Version of the entity currently committed at the DSS, if any.
    pub current_ovn: Option<Ovn>,
    /// Attempts consumed by the most recent deconfliction run.
    pub scd_attempts: u32,
    /// Deadline for restoring conformance, while nonconforming.
    pub grace_deadline_ms: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct UssNode {
    pub id: String,
    pub ops: BTreeMap<String, ManagedOperation>,
    /// Constraints this USS has published, by id.
    pub constraints: BTreeMap<String, Vec<Volume4D>>,
}

impl UssNode {
    pub fn new(id: &str) -> Self {
        UssNode { id: String::from(id), ops: BTreeMap::new(), constraints: BTreeMap::new() }
    }

    /// Moves `op_id` to `to`, enforcing the lifecycle graph. Returns the
    /// previous state so callers can record the transition.
    pub fn transition(
        &mut self,
        op_id: &str,
        to: OperationState,
    ) -> Result<OperationState, TransitionError> {
        let op = self.ops.get_mut(op_id).ok_or(TransitionError {
            op_id: String::from(op_id),
            from: OperationState::Draft,
            to,
        })?;
        let from = op.state;
        if !transition_allowed(from, to) {
            return Err(TransitionError { op_id: String::from(op_id), from, to });
        }
        op.state = to;
        Ok(from)
    }

    /// Serves current planning volumes for an operation or constraint this
    /// USS owns. Ended and rejected operations are no longer shareable.
    /// During an in-flight replan this serves the new intent: the old
    /// volumes were already vacated at the DSS.
    pub fn details(&self, id: &str) -> Option<Vec<Volume4D>> {
        if let Some(op) = self.ops.get(id) {
            return match op.state {
                OperationState::Ended | OperationState::Rejected => None,
                _ => Some(op.intent.extent.clone()),
            };
        }
        self.constraints.get(id).cloned()
    }
}
