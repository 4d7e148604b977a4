//! Scripted discrete-event execution: the virtual clock, the ordered
//! event queue, request/response plumbing over links, and the strategic
//! deconfliction loop that coordinates USS and DSS state.
//!
//! The engine is single-threaded and allocation-only. Events are ordered
//! by (time, insertion sequence), so simultaneous events execute in the
//! order they were scheduled; script actions are scheduled first, which
//! puts a reconfiguration at `t` ahead of any send occurring at `t`. A run
//! ends when the queue is exhausted.
//!
//! Request handling is symmetric: each leg of a round trip crosses a
//! directed link with its own loss draws and retry budget, and a request
//! executes against the serving node's state `proc_ms` after arrival,
//! which is the instant its response departs. Responses that are lost
//! after retries surface to the requester as transport failures; any
//! mutation the request caused stands, and only a fresh query reveals it.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::cmp::Reverse;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::dss::{DeleteOutcome, DssStore, EntityKind, EntityReference, MutationOutcome, Ovn, PutOutcome};
use crate::geom4d::{extents_conflict, Volume4D};
use crate::metrics::{ContingencyRecord, ScdOutcome, ScdSample};
use crate::netlink::{size_class, Link, LinkProfile, SendOutcome};
use crate::report::{EventRecord, LinkDecl, OpFinal, SimReport, TransitionRecord};
use crate::rng;
use crate::scenario::GeneratorSpec;
use crate::uss::{ManagedOperation, OperationIntent, OperationState, UssNode};

/// Simulation parameters. All times in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    /// Grace period granted to a nonconforming flight before it must
    /// declare contingency.
    pub grace_window_ms: u64,
    /// Conflict-evaluation cost per entity in the picture.
    pub per_pair_check_ms: u64,
    /// Service time between a request's arrival and its execution.
    pub proc_ms: u64,
    /// Width of the demand spike the built-in generator spreads
    /// submissions over.
    pub submission_window_ms: u64,
    /// Send attempts per message before a transport failure surfaces.
    pub link_retry_attempts: u32,
    pub link_retry_backoff_ms: u64,
    /// Deconfliction cycles allowed before the operation gives up.
    pub max_scd_attempts: u32,
    /// Concurrent deconfliction runs per USS; 0 means unlimited.
    pub max_concurrent_scd: u32,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            grace_window_ms: 60_000,
            per_pair_check_ms: 2,
            proc_ms: 5,
            submission_window_ms: 30_000,
            link_retry_attempts: 3,
            link_retry_backoff_ms: 1_000,
            max_scd_attempts: 5,
            max_concurrent_scd: 0,
        }
    }
}

/// A preplanned operation: committed in the registry before the clock
/// starts, at no deconfliction cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreplannedOp {
    pub uss: String,
    pub intent: OperationIntent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionKind {
    /// Run strategic deconfliction for `intent`. With `supersedes` (which
    /// must name the same operation) the committed volumes are vacated
    /// first, then replanned.
    SubmitIntent { uss: String, intent: OperationIntent, supersedes: Option<String> },
    Activate { uss: String, op: String },
    PublishConstraint { uss: String, constraint_id: String, extent: Vec<Volume4D> },
    /// The flight left its volumes: vacate them, replan `replacement`
    /// immediately, and declare contingency if nothing commits within the
    /// grace window.
    BeginNonconformance { uss: String, op: String, replacement: OperationIntent },
    ReconfigureLink { src: String, dst: String, profile: LinkProfile },
    EndOperation { uss: String, op: String },
}

impl ActionKind {
    fn uss_and_op(&self) -> Option<(&str, &str)> {
        match self {
            ActionKind::SubmitIntent { uss, intent, .. } => Some((uss, &intent.op_id)),
            ActionKind::Activate { uss, op }
            | ActionKind::BeginNonconformance { uss, op, .. }
            | ActionKind::EndOperation { uss, op } => Some((uss, op)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptAction {
    pub at_ms: u64,
    /// When set, the action only fires if the operation it names is
    /// currently in this state; otherwise it is skipped and logged.
    pub guard: Option<OperationState>,
    pub kind: ActionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub schema_version: u32,
    pub uss_ids: Vec<String>,
    pub dss_id: String,
    pub links: Vec<LinkDecl>,
    pub params: Params,
    pub preplanned: Vec<PreplannedOp>,
    pub actions: Vec<ScriptAction>,
    /// Present when the scenario came from the built-in generator, so
    /// sweeps can regenerate it with altered knobs.
    pub generator: Option<GeneratorSpec>,
    /// Operation singled out for acceptance-rate reporting.
    pub designated_op: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptError(pub String);

impl fmt::Display for ScriptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario: {}", self.0)
    }
}

pub fn validate_script(script: &ScenarioScript) -> Result<(), ScriptError> {
    let err = |msg: String| Err(ScriptError(msg));
    if script.schema_version != 1 {
        return err(format!("unsupported schema_version {}", script.schema_version));
    }
    if script.dss_id.is_empty() {
        return err(String::from("dss id must not be empty"));
    }
    if script.uss_ids.is_empty() {
        return err(String::from("at least one USS is required"));
    }
    let mut uss_set = BTreeSet::new();
    for id in &script.uss_ids {
        if id.is_empty() || *id == script.dss_id {
            return err(format!("bad USS id {id:?}"));
        }
        if !uss_set.insert(id.clone()) {
            return err(format!("duplicate USS id {id:?}"));
        }
    }
    let known = |id: &str| id == script.dss_id || uss_set.contains(id);
    let mut link_set = BTreeSet::new();
    for l in &script.links {
        if !known(&l.src) || !known(&l.dst) || l.src == l.dst {
            return err(format!("link {} -> {} has unknown or equal endpoints", l.src, l.dst));
        }
        l.profile.validate().map_err(|e| ScriptError(format!("link {} -> {}: {e}", l.src, l.dst)))?;
        if !link_set.insert((l.src.clone(), l.dst.clone())) {
            return err(format!("duplicate link {} -> {}", l.src, l.dst));
        }
    }
    for uss in &script.uss_ids {
        for (a, b) in [(uss.clone(), script.dss_id.clone()), (script.dss_id.clone(), uss.clone())]
        {
            if !link_set.contains(&(a.clone(), b.clone())) {
                return err(format!("missing required link {a} -> {b}"));
            }
        }
    }
    if script.params.max_scd_attempts == 0 {
        return err(String::from("max_scd_attempts must be at least 1"));
    }
    if script.params.link_retry_attempts == 0 {
        return err(String::from("link_retry_attempts must be at least 1"));
    }
    let mut op_ids = BTreeSet::new();
    for p in &script.preplanned {
        if !uss_set.contains(&p.uss) {
            return err(format!("preplanned operation {} names unknown USS {}", p.intent.op_id, p.uss));
        }
        if p.intent.op_id.is_empty() || p.intent.extent.is_empty() {
            return err(format!("preplanned operation {:?} is incomplete", p.intent.op_id));
        }
        if !op_ids.insert(p.intent.op_id.clone()) {
            return err(format!("duplicate preplanned operation {}", p.intent.op_id));
        }
    }
    for (i, a) in script.actions.iter().enumerate() {
        let bad = |msg: &str| ScriptError(format!("action {i}: {msg}"));
        match &a.kind {
            ActionKind::SubmitIntent { uss, intent, supersedes } => {
                if !uss_set.contains(uss) {
                    return Err(bad("unknown USS"));
                }
                if intent.op_id.is_empty() || intent.extent.is_empty() {
                    return Err(bad("intent needs an id and a non-empty extent"));
                }
                if let Some(s) = supersedes {
                    if *s != intent.op_id {
                        return Err(bad("supersedes must name the submitted operation"));
                    }
                }
            }
            ActionKind::Activate { uss, op } | ActionKind::EndOperation { uss, op } => {
                if !uss_set.contains(uss) || op.is_empty() {
                    return Err(bad("unknown USS or empty operation id"));
                }
            }
            ActionKind::PublishConstraint { uss, constraint_id, extent } => {
                if !uss_set.contains(uss) || constraint_id.is_empty() || extent.is_empty() {
                    return Err(bad("constraint needs a USS, an id, and a non-empty extent"));
                }
            }
            ActionKind::BeginNonconformance { uss, op, replacement } => {
                if !uss_set.contains(uss) || op.is_empty() {
                    return Err(bad("unknown USS or empty operation id"));
                }
                if replacement.op_id != *op || replacement.extent.is_empty() {
                    return Err(bad("replacement must keep the operation id and carry volumes"));
                }
            }
            ActionKind::ReconfigureLink { src, dst, profile } => {
                if !link_set.contains(&(src.clone(), dst.clone())) {
                    return Err(bad("reconfiguration names an undeclared link"));
                }
                profile.validate().map_err(|e| bad(&format!("{e}")))?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Events and messages
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Payload {
    QueryReq { area: Vec<Volume4D> },
    QueryResp { refs: Vec<EntityReference> },
    PutReq { id: String, kind: EntityKind, extent: Vec<Volume4D>, key: Vec<Ovn>, area: Vec<Volume4D> },
    PutResp { outcome: PutOutcome },
    DeleteReq { id: String, ovn: Ovn },
    /// A plain acknowledgment: removed or already gone, the airspace is
    /// vacated either way, and the registry log records which it was.
    DeleteResp,
    DetailsReq { ids: Vec<String> },
    DetailsResp { found: Vec<(String, Vec<Volume4D>)> },
}

impl Payload {
    fn kind_name(&self) -> &'static str {
        match self {
            Payload::QueryReq { .. } => "query_req",
            Payload::QueryResp { .. } => "query_resp",
            Payload::PutReq { .. } => "put_req",
            Payload::PutResp { .. } => "put_resp",
            Payload::DeleteReq { .. } => "delete_req",
            Payload::DeleteResp => "delete_resp",
            Payload::DetailsReq { .. } => "details_req",
            Payload::DetailsResp { .. } => "details_resp",
        }
    }

    fn is_request(&self) -> bool {
        matches!(
            self,
            Payload::QueryReq { .. }
                | Payload::PutReq { .. }
                | Payload::DeleteReq { .. }
                | Payload::DetailsReq { .. }
        )
    }

    fn size_items(&self) -> usize {
        match self {
            Payload::QueryReq { area } => area.len(),
            Payload::QueryResp { refs } => refs.len(),
            Payload::PutReq { extent, .. } => extent.len(),
            Payload::PutResp { outcome } => match outcome {
                PutOutcome::AirspaceChanged { current_refs } => current_refs.len(),
                _ => 1,
            },
            Payload::DeleteReq { .. } | Payload::DeleteResp => 1,
            Payload::DetailsReq { ids } => ids.len(),
            Payload::DetailsResp { found } => found.len(),
        }
    }
}

#[derive(Debug, Clone)]
struct Msg {
    src: String,
    dst: String,
    task_id: u64,
    payload: Payload,
}

#[derive(Debug)]
enum Event {
    Action(usize),
    Arrive(Msg),
    ServerExec(Msg),
    Retry { msg: Msg, attempt: u32 },
    TransportFailed { task_id: u64 },
    ComputeDone { task_id: u64 },
    GraceDeadline { uss: String, op: String },
}

struct QueuedEvent {
    at: u64,
    seq: u64,
    ev: Event,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl Eq for QueuedEvent {}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

// ---------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SubmitOrigin {
    Fresh,
    Replan,
    Replacement,
}

#[derive(Debug, Clone)]
enum ScdPhase {
    Deleting,
    Querying,
    Fetching { pending: BTreeSet<String> },
    Computing,
    Putting,
}

#[derive(Debug, Clone)]
struct ScdTask {
    uss: String,
    intent: OperationIntent,
    /// Entity to vacate before planning, with the version to present.
    supersedes: Option<(String, Ovn)>,
    origin: SubmitOrigin,
    submit_ms: u64,
    attempts: u32,
    phase: ScdPhase,
    picture: Vec<EntityReference>,
    details: BTreeMap<String, Vec<Volume4D>>,
}

#[derive(Debug, Clone)]
struct ConstraintTask {
    uss: String,
    id: String,
    extent: Vec<Volume4D>,
}

#[derive(Debug, Clone)]
enum Task {
    Scd(ScdTask),
    Constraint(ConstraintTask),
    Cleanup { uss: String, op: String },
}

#[derive(Debug, Clone)]
struct WaitingSubmit {
    intent: OperationIntent,
    supersedes: Option<String>,
    origin: SubmitOrigin,
    submit_ms: u64,
}

// ---------------------------------------------------------------------
// The simulation
// ---------------------------------------------------------------------

struct Sim<'a> {
    script: &'a ScenarioScript,
    params: Params,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    dss: DssStore,
    uss: BTreeMap<String, UssNode>,
    links: BTreeMap<(String, String), Link>,
    tasks: BTreeMap<u64, Task>,
    next_task_id: u64,
    scd_active: BTreeMap<String, u32>,
    scd_waiting: BTreeMap<String, VecDeque<WaitingSubmit>>,
    event_log: Vec<EventRecord>,
    lifecycle: Vec<TransitionRecord>,
    samples: Vec<ScdSample>,
    contingencies: Vec<ContingencyRecord>,
    n_preplanned: u32,
    n_submitted_new: u32,
}

/// Runs `script` to event-queue exhaustion under `seed`.
pub fn run(script: &ScenarioScript, seed: u64) -> Result<SimReport, ScriptError> {
    validate_script(script)?;

    let mut links = BTreeMap::new();
    for l in &script.links {
        let label = format!("link:{}->{}", l.src, l.dst);
        links.insert(
            (l.src.clone(), l.dst.clone()),
            Link::new(l.profile, rng::stream(seed, &label)),
        );
    }
    let mut uss = BTreeMap::new();
    for id in &script.uss_ids {
        uss.insert(id.clone(), UssNode::new(id));
    }

    let mut sim = Sim {
        script,
        params: script.params,
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        dss: DssStore::new(rng::stream(seed, "ovn")),
        uss,
        links,
        tasks: BTreeMap::new(),
        next_task_id: 1,
        scd_active: BTreeMap::new(),
        scd_waiting: BTreeMap::new(),
        event_log: Vec::new(),
        lifecycle: Vec::new(),
        samples: Vec::new(),
        contingencies: Vec::new(),
        n_preplanned: 0,
        n_submitted_new: 0,
    };

    sim.install_preplanned();
    for (i, a) in script.actions.iter().enumerate() {
        sim.push(a.at_ms, Event::Action(i));
    }
    while let Some(Reverse(qe)) = sim.queue.pop() {
        debug_assert!(qe.at >= sim.now, "time went backwards");
        sim.now = qe.at;
        sim.handle(qe.ev);
    }
    Ok(sim.into_report(seed))
}

impl<'a> Sim<'a> {
    fn push(&mut self, at: u64, ev: Event) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(QueuedEvent { at, seq, ev }));
    }

    fn install_preplanned(&mut self) {
        for p in &self.script.preplanned {
            let ovn = self.dss.install(
                0,
                &p.uss,
                &p.intent.op_id,
                EntityKind::Operation,
                p.intent.extent.clone(),
            );
            let node = self.uss.get_mut(&p.uss).expect("validated");
            node.ops.insert(
                p.intent.op_id.clone(),
                ManagedOperation {
                    intent: p.intent.clone(),
                    state: OperationState::Planned,
                    current_ovn: Some(ovn),
                    scd_attempts: 0,
                    grace_deadline_ms: None,
                },
            );
            self.lifecycle.push(TransitionRecord {
                at_ms: 0,
                uss: p.uss.clone(),
                op: p.intent.op_id.clone(),
                from: OperationState::Draft,
                to: OperationState::Planned,
            });
            self.n_preplanned += 1;
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Action(i) => self.handle_action(i),
            Event::Arrive(msg) => {
                if msg.payload.is_request() {
                    let at = self.now + self.params.proc_ms;
                    self.push(at, Event::ServerExec(msg));
                } else {
                    self.dispatch_response(msg);
                }
            }
            Event::ServerExec(msg) => self.serve(msg),
            Event::Retry { msg, attempt } => self.send_msg(msg, attempt),
            Event::TransportFailed { task_id } => self.on_transport_failed(task_id),
            Event::ComputeDone { task_id } => self.on_compute_done(task_id),
            Event::GraceDeadline { uss, op } => self.on_grace_deadline(&uss, &op),
        }
    }

    // -- actions --------------------------------------------------------

    fn skip_action(&mut self, index: usize, reason: String) {
        self.event_log.push(EventRecord::ActionSkipped {
            at_ms: self.now,
            index: index as u32,
            reason,
        });
    }

    /// An operation with a deconfliction run in flight (or queued) must
    /// not be touched by further actions until it settles.
    fn op_busy(&self, op: &str) -> bool {
        let in_tasks = self.tasks.values().any(|t| match t {
            Task::Scd(s) => s.intent.op_id == op,
            Task::Cleanup { op: o, .. } => o == op,
            Task::Constraint(_) => false,
        });
        in_tasks
            || self
                .scd_waiting
                .values()
                .any(|q| q.iter().any(|w| w.intent.op_id == op))
    }

    fn guard_blocks(&self, guard: Option<OperationState>, uss: &str, op: &str) -> Option<String> {
        let guard = guard?;
        let state = self.uss.get(uss).and_then(|n| n.ops.get(op)).map(|o| o.state);
        match state {
            Some(s) if s == guard => None,
            Some(s) => Some(format!("guard {guard} does not match state {s}")),
            None => Some(format!("guard {guard} on unknown operation {op}")),
        }
    }

    fn handle_action(&mut self, index: usize) {
        let action = self.script.actions[index].clone();
        if let Some((uss, op)) = action.kind.uss_and_op() {
            if let Some(reason) = self.guard_blocks(action.guard, uss, op) {
                self.skip_action(index, reason);
                return;
            }
            if self.op_busy(op) {
                self.skip_action(index, format!("operation {op} has a deconfliction in flight"));
                return;
            }
        }
        match action.kind {
            ActionKind::SubmitIntent { uss, intent, supersedes } => {
                let node = self.uss.get(&uss).expect("validated");
                let exists = node.ops.contains_key(&intent.op_id);
                if let Some(sup) = &supersedes {
                    let ok = node.ops.get(sup).is_some_and(|o| o.state == OperationState::Planned);
                    if !ok {
                        self.skip_action(index, format!("supersedes requires {sup} to be planned"));
                        return;
                    }
                    self.submit_scd(&uss, intent, supersedes, SubmitOrigin::Replan, self.now);
                } else {
                    if exists {
                        self.skip_action(index, format!("operation {} already exists", intent.op_id));
                        return;
                    }
                    let node = self.uss.get_mut(&uss).expect("validated");
                    node.ops.insert(
                        intent.op_id.clone(),
                        ManagedOperation {
                            intent: intent.clone(),
                            state: OperationState::Draft,
                            current_ovn: None,
                            scd_attempts: 0,
                            grace_deadline_ms: None,
                        },
                    );
                    self.n_submitted_new += 1;
                    self.submit_scd(&uss, intent, None, SubmitOrigin::Fresh, self.now);
                }
            }
            ActionKind::Activate { uss, op } => match self.transition(&uss, &op, OperationState::Active) {
                Ok(()) => {}
                Err(reason) => self.skip_action(index, reason),
            },
            ActionKind::PublishConstraint { uss, constraint_id, extent } => {
                let already = self
                    .uss
                    .get(&uss)
                    .is_some_and(|n| n.constraints.contains_key(&constraint_id))
                    || self.tasks.values().any(|t| match t {
                        Task::Constraint(c) => c.id == constraint_id,
                        _ => false,
                    });
                if already {
                    self.skip_action(index, format!("constraint {constraint_id} already published"));
                    return;
                }
                let task_id = self.alloc_task_id();
                let task = ConstraintTask { uss: uss.clone(), id: constraint_id, extent };
                let msg = Msg {
                    src: uss,
                    dst: self.script.dss_id.clone(),
                    task_id,
                    payload: Payload::QueryReq { area: task.extent.clone() },
                };
                self.tasks.insert(task_id, Task::Constraint(task));
                self.send_msg(msg, 1);
            }
            ActionKind::BeginNonconformance { uss, op, replacement } => {
                match self.transition(&uss, &op, OperationState::Nonconforming) {
                    Ok(()) => {}
                    Err(reason) => {
                        self.skip_action(index, reason);
                        return;
                    }
                }
                let deadline = self.now + self.params.grace_window_ms;
                let node = self.uss.get_mut(&uss).expect("validated");
                node.ops.get_mut(&op).expect("transitioned").grace_deadline_ms = Some(deadline);
                self.push(deadline, Event::GraceDeadline { uss: uss.clone(), op: op.clone() });
                self.submit_scd(&uss, replacement, Some(op), SubmitOrigin::Replacement, self.now);
            }
            ActionKind::ReconfigureLink { src, dst, profile } => {
                self.links
                    .get_mut(&(src.clone(), dst.clone()))
                    .expect("validated")
                    .reconfigure(profile);
                self.event_log.push(EventRecord::LinkReconfigured { at_ms: self.now, src, dst });
            }
            ActionKind::EndOperation { uss, op } => {
                match self.transition(&uss, &op, OperationState::Ended) {
                    Ok(()) => {}
                    Err(reason) => {
                        self.skip_action(index, reason);
                        return;
                    }
                }
                let node = self.uss.get_mut(&uss).expect("validated");
                let managed = node.ops.get_mut(&op).expect("transitioned");
                if let Some(ovn) = managed.current_ovn.take() {
                    let task_id = self.alloc_task_id();
                    self.tasks.insert(task_id, Task::Cleanup { uss: uss.clone(), op: op.clone() });
                    let msg = Msg {
                        src: uss,
                        dst: self.script.dss_id.clone(),
                        task_id,
                        payload: Payload::DeleteReq { id: op, ovn },
                    };
                    self.send_msg(msg, 1);
                }
            }
        }
    }

    fn transition(&mut self, uss: &str, op: &str, to: OperationState) -> Result<(), String> {
        let node = self.uss.get_mut(uss).ok_or_else(|| format!("unknown USS {uss}"))?;
        match node.transition(op, to) {
            Ok(from) => {
                self.lifecycle.push(TransitionRecord {
                    at_ms: self.now,
                    uss: String::from(uss),
                    op: String::from(op),
                    from,
                    to,
                });
                Ok(())
            }
            Err(e) => Err(format!("{e}")),
        }
    }

    // -- messaging ------------------------------------------------------

    fn alloc_task_id(&mut self) -> u64 {
        let id = self.next_task_id;
        self.next_task_id += 1;
        id
    }

    fn send_msg(&mut self, msg: Msg, attempt: u32) {
        let key = (msg.src.clone(), msg.dst.clone());
        let Some(link) = self.links.get_mut(&key) else {
            // No route between these components: surfaces exactly like a
            // link that failed through its retry budget.
            let task_id = msg.task_id;
            self.push(self.now, Event::TransportFailed { task_id });
            return;
        };
        let sc = size_class(msg.payload.size_items());
        match link.send(self.now, msg.payload.kind_name(), sc) {
            SendOutcome::Delivered { at_ms } => self.push(at_ms, Event::Arrive(msg)),
            SendOutcome::Failed => {
                if attempt < self.params.link_retry_attempts {
                    let at = self.now + self.params.link_retry_backoff_ms;
                    self.push(at, Event::Retry { msg, attempt: attempt + 1 });
                } else {
                    let task_id = msg.task_id;
                    self.push(self.now, Event::TransportFailed { task_id });
                }
            }
        }
    }

    fn respond(&mut self, to: &Msg, payload: Payload) {
        let reply = Msg {
            src: to.dst.clone(),
            dst: to.src.clone(),
            task_id: to.task_id,
            payload,
        };
        self.send_msg(reply, 1);
    }

    /// Operation or constraint a task is working for, for log context.
    fn task_subject(&self, task_id: u64) -> String {
        match self.tasks.get(&task_id) {
            Some(Task::Scd(s)) => s.intent.op_id.clone(),
            Some(Task::Constraint(c)) => c.id.clone(),
            Some(Task::Cleanup { op, .. }) => op.clone(),
            None => String::from("?"),
        }
    }

    fn serve(&mut self, msg: Msg) {
        let subject = self.task_subject(msg.task_id);
        match &msg.payload {
            Payload::QueryReq { area } => {
                let refs = self.dss.query_entities(area);
                self.event_log.push(EventRecord::DssQuery {
                    at_ms: self.now,
                    uss: msg.src.clone(),
                    op: subject,
                    refs: refs.len() as u32,
                });
                self.respond(&msg, Payload::QueryResp { refs });
            }
            Payload::PutReq { id, kind, extent, key, area } => {
                let outcome = self.dss.put_entity(
                    self.now,
                    &msg.src,
                    id,
                    *kind,
                    extent.clone(),
                    key,
                    area.clone(),
                );
                let summary = match &outcome {
                    PutOutcome::Success { .. } => MutationOutcome::Committed,
                    PutOutcome::AirspaceChanged { .. } => MutationOutcome::AirspaceChanged,
                    PutOutcome::Invalid { .. } => MutationOutcome::Invalid,
                };
                self.event_log.push(EventRecord::DssPut {
                    at_ms: self.now,
                    uss: msg.src.clone(),
                    op: id.clone(),
                    outcome: summary,
                });
                self.respond(&msg, Payload::PutResp { outcome });
            }
            Payload::DeleteReq { id, ovn } => {
                let outcome = self.dss.delete_entity(self.now, &msg.src, id, *ovn);
                self.event_log.push(EventRecord::DssDelete {
                    at_ms: self.now,
                    uss: msg.src.clone(),
                    op: id.clone(),
                    outcome: match outcome {
                        DeleteOutcome::Removed => MutationOutcome::Removed,
                        DeleteOutcome::NotFound => MutationOutcome::NotFound,
                    },
                });
                self.respond(&msg, Payload::DeleteResp);
            }
            Payload::DetailsReq { ids } => {
                let node = self.uss.get(&msg.dst).expect("validated");
                let found: Vec<(String, Vec<Volume4D>)> = ids
                    .iter()
                    .filter_map(|id| node.details(id).map(|ext| (id.clone(), ext)))
                    .collect();
                self.event_log.push(EventRecord::PeerFetch {
                    at_ms: self.now,
                    uss: msg.src.clone(),
                    peer: msg.dst.clone(),
                    op: subject,
                    ids: found.len() as u32,
                });
                self.respond(&msg, Payload::DetailsResp { found });
            }
            _ => debug_assert!(false, "responses are not served"),
        }
    }

    // -- deconfliction --------------------------------------------------

    fn submit_scd(
        &mut self,
        uss: &str,
        intent: OperationIntent,
        supersedes: Option<String>,
        origin: SubmitOrigin,
        submit_ms: u64,
    ) {
        let cap = self.params.max_concurrent_scd;
        let active = self.scd_active.get(uss).copied().unwrap_or(0);
        if cap > 0 && active >= cap {
            self.event_log.push(EventRecord::ScdQueued {
                at_ms: self.now,
                uss: String::from(uss),
                op: intent.op_id.clone(),
            });
            self.scd_waiting
                .entry(String::from(uss))
                .or_default()
                .push_back(WaitingSubmit { intent, supersedes, origin, submit_ms });
            return;
        }
        self.start_scd(uss, intent, supersedes, origin, submit_ms);
    }

    fn start_scd(
        &mut self,
        uss: &str,
        intent: OperationIntent,
        supersedes: Option<String>,
        origin: SubmitOrigin,
        submit_ms: u64,
    ) {
        *self.scd_active.entry(String::from(uss)).or_insert(0) += 1;
        self.event_log.push(EventRecord::ScdSubmit {
            at_ms: self.now,
            uss: String::from(uss),
            op: intent.op_id.clone(),
        });

        let node = self.uss.get_mut(uss).expect("validated");
        let supersedes = supersedes.and_then(|id| {
            let managed = node.ops.get_mut(&id)?;
            // The current intent becomes the one being planned; peers
            // fetching details mid-run see where the operation is going.
            managed.intent = intent.clone();
            managed.current_ovn.map(|ovn| (id, ovn))
        });

        let task_id = self.alloc_task_id();
        let mut task = ScdTask {
            uss: String::from(uss),
            intent,
            supersedes,
            origin,
            submit_ms,
            attempts: 1,
            phase: ScdPhase::Querying,
            picture: Vec::new(),
            details: BTreeMap::new(),
        };

        if let Some((sup_id, ovn)) = task.supersedes.clone() {
            task.phase = ScdPhase::Deleting;
            let msg = Msg {
                src: String::from(uss),
                dst: self.script.dss_id.clone(),
                task_id,
                payload: Payload::DeleteReq { id: sup_id, ovn },
            };
            self.tasks.insert(task_id, Task::Scd(task));
            self.send_msg(msg, 1);
        } else {
            self.tasks.insert(task_id, Task::Scd(task));
            self.scd_query(task_id);
        }
    }

    fn scd_query(&mut self, task_id: u64) {
        let Some(Task::Scd(task)) = self.tasks.get_mut(&task_id) else { return };
        task.phase = ScdPhase::Querying;
        let msg = Msg {
            src: task.uss.clone(),
            dst: self.script.dss_id.clone(),
            task_id,
            payload: Payload::QueryReq { area: task.intent.query_scope() },
        };
        self.send_msg(msg, 1);
    }

    fn scd_fetch(&mut self, task_id: u64) {
        let Some(Task::Scd(task)) = self.tasks.get_mut(&task_id) else { return };
        task.details.clear();
        let mut per_peer: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &task.picture {
            if r.owner != task.uss && r.id != task.intent.op_id {
                per_peer.entry(r.owner.clone()).or_default().push(r.id.clone());
            }
        }
        if per_peer.is_empty() {
            self.scd_compute(task_id);
            return;
        }
        task.phase = ScdPhase::Fetching { pending: per_peer.keys().cloned().collect() };
        let src = task.uss.clone();
        let requests: Vec<Msg> = per_peer
            .into_iter()
            .map(|(peer, ids)| Msg {
                src: src.clone(),
                dst: peer,
                task_id,
                payload: Payload::DetailsReq { ids },
            })
            .collect();
        for msg in requests {
            self.send_msg(msg, 1);
        }
    }

    fn scd_compute(&mut self, task_id: u64) {
        let Some(Task::Scd(task)) = self.tasks.get_mut(&task_id) else { return };
        task.phase = ScdPhase::Computing;
        let pairs = task.picture.iter().filter(|r| r.id != task.intent.op_id).count() as u64;
        let at = self.now + self.params.per_pair_check_ms * pairs;
        self.push(at, Event::ComputeDone { task_id });
    }

    fn on_compute_done(&mut self, task_id: u64) {
        let Some(Task::Scd(task)) = self.tasks.get(&task_id) else { return };
        debug_assert!(matches!(task.phase, ScdPhase::Computing));
        let own = &task.intent.op_id;
        let conflict = task.picture.iter().any(|r| {
            if r.id == *own {
                return false;
            }
            let extent = task.details.get(&r.id).unwrap_or(&r.extent);
            extents_conflict(&task.intent.extent, extent).unwrap_or(false)
        });
        if conflict {
            let Some(Task::Scd(task)) = self.tasks.remove(&task_id) else { return };
            self.scd_finish(task, ScdOutcome::RejectedConflict, None);
            return;
        }
        let Some(Task::Scd(task)) = self.tasks.get_mut(&task_id) else { return };
        task.phase = ScdPhase::Putting;
        let key: Vec<Ovn> = task.picture.iter().map(|r| r.ovn).collect();
        let msg = Msg {
            src: task.uss.clone(),
            dst: self.script.dss_id.clone(),
            task_id,
            payload: Payload::PutReq {
                id: task.intent.op_id.clone(),
                kind: EntityKind::Operation,
                extent: task.intent.extent.clone(),
                key,
                area: task.intent.area.clone(),
            },
        };
        self.send_msg(msg, 1);
    }

    fn dispatch_response(&mut self, msg: Msg) {
        let Some(task) = self.tasks.remove(&msg.task_id) else { return };
        match task {
            Task::Scd(task) => self.scd_on_response(msg, task),
            Task::Constraint(task) => self.constraint_on_response(msg, task),
            Task::Cleanup { .. } => {} // outcome already logged by the DSS
        }
    }

    fn scd_on_response(&mut self, msg: Msg, mut task: ScdTask) {
        let task_id = msg.task_id;
        match (&task.phase, msg.payload) {
            (ScdPhase::Deleting, Payload::DeleteResp) => {
                task.supersedes = None;
                let node = self.uss.get_mut(&task.uss).expect("validated");
                if let Some(op) = node.ops.get_mut(&task.intent.op_id) {
                    op.current_ovn = None;
                }
                self.tasks.insert(task_id, Task::Scd(task));
                self.scd_query(task_id);
            }
            (ScdPhase::Querying, Payload::QueryResp { refs }) => {
                task.picture = refs;
                self.tasks.insert(task_id, Task::Scd(task));
                self.scd_fetch(task_id);
            }
            (ScdPhase::Fetching { .. }, Payload::DetailsResp { found }) => {
                for (id, extent) in found {
                    task.details.insert(id, extent);
                }
                let done = {
                    let ScdPhase::Fetching { pending } = &mut task.phase else { unreachable!() };
                    pending.remove(&msg.src);
                    pending.is_empty()
                };
                self.tasks.insert(task_id, Task::Scd(task));
                if done {
                    self.scd_compute(task_id);
                }
            }
            (ScdPhase::Putting, Payload::PutResp { outcome }) => match outcome {
                PutOutcome::Success { ovn } => {
                    self.scd_finish(task, ScdOutcome::Accepted, Some(ovn));
                }
                PutOutcome::AirspaceChanged { current_refs } => {
                    self.scd_cycle_failed(task_id, task, Some(current_refs), false);
                }
                PutOutcome::Invalid { .. } => {
                    debug_assert!(false, "validated intents cannot be invalid");
                    self.scd_finish(task, ScdOutcome::RejectedConflict, None);
                }
            },
            (_, payload) => {
                debug_assert!(false, "response {} in wrong phase", payload.kind_name());
                self.tasks.insert(task_id, Task::Scd(task));
            }
        }
    }

    /// One deconfliction cycle failed: either the airspace picture went
    /// stale under us, or a round trip died in transport. Consume an
    /// attempt and restart from the right phase, or give up.
    fn scd_cycle_failed(
        &mut self,
        task_id: u64,
        mut task: ScdTask,
        refreshed: Option<Vec<EntityReference>>,
        transport: bool,
    ) {
        if task.attempts >= self.params.max_scd_attempts {
            let outcome = if transport {
                ScdOutcome::PeerUnreachable
            } else {
                ScdOutcome::RetriesExhausted
            };
            self.scd_finish(task, outcome, None);
            return;
        }
        task.attempts += 1;
        if let Some(refs) = refreshed {
            // The rejection carried the current picture; skip the query.
            task.picture = refs;
            self.tasks.insert(task_id, Task::Scd(task));
            self.scd_fetch(task_id);
        } else if matches!(task.phase, ScdPhase::Deleting) {
            let (sup_id, ovn) = task.supersedes.clone().expect("deleting implies supersedes");
            let msg = Msg {
                src: task.uss.clone(),
                dst: self.script.dss_id.clone(),
                task_id,
                payload: Payload::DeleteReq { id: sup_id, ovn },
            };
            self.tasks.insert(task_id, Task::Scd(task));
            self.send_msg(msg, 1);
        } else {
            // Transport loss elsewhere: the response may have died after
            // the registry moved, so only a fresh picture is trustworthy.
            self.tasks.insert(task_id, Task::Scd(task));
            self.scd_query(task_id);
        }
    }

    fn on_transport_failed(&mut self, task_id: u64) {
        let Some(task) = self.tasks.remove(&task_id) else { return };
        match task {
            Task::Scd(task) => {
                self.event_log.push(EventRecord::TransportFailed {
                    at_ms: self.now,
                    uss: task.uss.clone(),
                    op: task.intent.op_id.clone(),
                });
                self.scd_cycle_failed(task_id, task, None, true);
            }
            Task::Constraint(task) => {
                self.event_log.push(EventRecord::ConstraintUnreachable {
                    at_ms: self.now,
                    uss: task.uss,
                    id: task.id,
                });
            }
            Task::Cleanup { uss, op } => {
                // The vacate never made it, or its ack was lost; either
                // way there is nothing to retry, only a trace to leave.
                self.event_log.push(EventRecord::TransportFailed { at_ms: self.now, uss, op });
            }
        }
    }

    fn scd_finish(&mut self, task: ScdTask, outcome: ScdOutcome, ovn: Option<Ovn>) {
        self.samples.push(ScdSample {
            uss: task.uss.clone(),
            op: task.intent.op_id.clone(),
            submit_ms: task.submit_ms,
            outcome_ms: self.now,
            attempts: task.attempts,
            outcome,
        });
        self.event_log.push(EventRecord::ScdOutcome {
            at_ms: self.now,
            uss: task.uss.clone(),
            op: task.intent.op_id.clone(),
            outcome,
            attempts: task.attempts,
        });

        let uss = task.uss.clone();
        let op_id = task.intent.op_id.clone();
        {
            let node = self.uss.get_mut(&uss).expect("validated");
            if let Some(op) = node.ops.get_mut(&op_id) {
                op.scd_attempts = task.attempts;
            }
        }
        let state = self
            .uss
            .get(&uss)
            .and_then(|n| n.ops.get(&op_id))
            .map(|o| o.state);

        match (task.origin, outcome) {
            (SubmitOrigin::Fresh, ScdOutcome::Accepted) => {
                self.set_ovn(&uss, &op_id, ovn);
                let _ = self.transition(&uss, &op_id, OperationState::Planned);
            }
            (SubmitOrigin::Fresh, _) => {
                let _ = self.transition(&uss, &op_id, OperationState::Rejected);
            }
            (SubmitOrigin::Replan, ScdOutcome::Accepted) => {
                self.set_ovn(&uss, &op_id, ovn);
                let _ = self.transition(&uss, &op_id, OperationState::Planned);
            }
            (SubmitOrigin::Replan, _) => {
                let _ = self.transition(&uss, &op_id, OperationState::Rejected);
            }
            (SubmitOrigin::Replacement, ScdOutcome::Accepted) => {
                if state == Some(OperationState::Nonconforming) {
                    self.set_ovn(&uss, &op_id, ovn);
                    let _ = self.transition(&uss, &op_id, OperationState::Planned);
                    let _ = self.transition(&uss, &op_id, OperationState::Active);
                    if let Some(op) = self.uss.get_mut(&uss).and_then(|n| n.ops.get_mut(&op_id)) {
                        op.grace_deadline_ms = None;
                    }
                }
                // Too late: contingency was already declared. The USS
                // abandons the freshly committed volumes.
            }
            (SubmitOrigin::Replacement, _) => {
                // Still nonconforming; the grace deadline decides.
            }
        }

        let active = self.scd_active.entry(uss.clone()).or_insert(0);
        *active = active.saturating_sub(1);
        if let Some(w) = self.scd_waiting.get_mut(&uss).and_then(|q| q.pop_front()) {
            self.start_scd(&uss, w.intent, w.supersedes, w.origin, w.submit_ms);
        }
    }

    fn set_ovn(&mut self, uss: &str, op: &str, ovn: Option<Ovn>) {
        if let Some(managed) = self.uss.get_mut(uss).and_then(|n| n.ops.get_mut(op)) {
            managed.current_ovn = ovn;
        }
    }

    // -- constraints ------------------------------------------------------

    fn constraint_on_response(&mut self, msg: Msg, task: ConstraintTask) {
        let task_id = msg.task_id;
        match msg.payload {
            Payload::QueryResp { refs } => {
                let key: Vec<Ovn> = refs.iter().map(|r| r.ovn).collect();
                let msg = Msg {
                    src: task.uss.clone(),
                    dst: self.script.dss_id.clone(),
                    task_id,
                    payload: Payload::PutReq {
                        id: task.id.clone(),
                        kind: EntityKind::Constraint,
                        extent: task.extent.clone(),
                        key,
                        area: vec![],
                    },
                };
                self.tasks.insert(task_id, Task::Constraint(task));
                self.send_msg(msg, 1);
            }
            Payload::PutResp { outcome } => match outcome {
                PutOutcome::Success { .. } => {
                    self.event_log.push(EventRecord::ConstraintPublished {
                        at_ms: self.now,
                        uss: task.uss.clone(),
                        id: task.id.clone(),
                    });
                    let node = self.uss.get_mut(&task.uss).expect("validated");
                    node.constraints.insert(task.id, task.extent);
                }
                PutOutcome::AirspaceChanged { current_refs } => {
                    // Refresh the key and put again; a constraint does not
                    // deconflict, it only needs a current picture.
                    let key: Vec<Ovn> = current_refs.iter().map(|r| r.ovn).collect();
                    let msg = Msg {
                        src: task.uss.clone(),
                        dst: self.script.dss_id.clone(),
                        task_id,
                        payload: Payload::PutReq {
                            id: task.id.clone(),
                            kind: EntityKind::Constraint,
                            extent: task.extent.clone(),
                            key,
                            area: vec![],
                        },
                    };
                    self.tasks.insert(task_id, Task::Constraint(task));
                    self.send_msg(msg, 1);
                }
                PutOutcome::Invalid { .. } => {
                    debug_assert!(false, "validated constraints cannot be invalid");
                }
            },
            _ => debug_assert!(false, "unexpected constraint response"),
        }
    }

    // -- timers -----------------------------------------------------------

    fn on_grace_deadline(&mut self, uss: &str, op: &str) {
        let Some(managed) = self.uss.get(uss).and_then(|n| n.ops.get(op)) else { return };
        if managed.state != OperationState::Nonconforming {
            return; // restored in time, or otherwise settled
        }
        debug_assert_eq!(managed.grace_deadline_ms, Some(self.now));
        let deadline = managed.grace_deadline_ms.unwrap_or(self.now);
        let _ = self.transition(uss, op, OperationState::Contingent);
        self.contingencies.push(ContingencyRecord {
            uss: String::from(uss),
            op: String::from(op),
            declared_ms: self.now,
            deadline_ms: deadline,
        });
        self.event_log.push(EventRecord::ContingencyDeclared {
            at_ms: self.now,
            uss: String::from(uss),
            op: String::from(op),
            deadline_ms: deadline,
        });
    }

    // -- wrap-up ----------------------------------------------------------

    fn into_report(mut self, seed: u64) -> SimReport {
        debug_assert!(self.tasks.is_empty(), "tasks must settle before exhaustion");
        let mut traffic = BTreeMap::new();
        for ((src, dst), link) in self.links.iter_mut() {
            traffic.insert(format!("{src}->{dst}"), link.take_log());
        }
        let mut ops_final = Vec::new();
        for (uss_id, node) in &self.uss {
            for (op_id, managed) in &node.ops {
                ops_final.push(OpFinal {
                    uss: uss_id.clone(),
                    op: op_id.clone(),
                    state: managed.state,
                });
            }
        }
        SimReport {
            schema_version: 1,
            seed,
            params: self.params,
            uss_ids: self.script.uss_ids.clone(),
            dss_id: self.script.dss_id.clone(),
            links: self.script.links.clone(),
            n_preplanned: self.n_preplanned,
            n_submitted_new: self.n_submitted_new,
            event_log: self.event_log,
            lifecycle: self.lifecycle,
            scd_samples: self.samples,
            contingencies: self.contingencies,
            dss_mutations: self.dss.mutation_log().to_vec(),
            traffic,
            final_entities: self.dss.snapshot(),
            ops_final,
        }
    }
}
