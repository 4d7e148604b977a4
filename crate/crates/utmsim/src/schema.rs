//! The scenario file format: a JSON document with horizontal geometry in
//! meters, checked field by field so a malformed file is rejected with
//! the path of the offending value rather than a generic parse error.
//!
//! Geometry is stored in meters for human editing and converted to the
//! core's integer centimeters on load; values that do not land on a whole
//! centimeter are rejected rather than silently rounded. Export and
//! import round-trip every scenario the core can represent.

use core::fmt;

use serde_json::{json, Map, Value};

use utmsim_core::engine::{ActionKind, Params, PreplannedOp, ScriptAction};
use utmsim_core::geom4d::{AltitudeRange, Footprint, Point, TimeInterval, Volume4D, MAX_COORD_CM};
use utmsim_core::netlink::LinkProfile;
use utmsim_core::report::LinkDecl;
use utmsim_core::scenario::GeneratorSpec;
use utmsim_core::uss::{OperationIntent, OperationState};
use utmsim_core::ScenarioScript;

/// A structural problem in a scenario document, located by a JSON path
/// rooted at `$`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for SchemaError {}

type Obj = Map<String, Value>;

fn fail<T>(path: &str, message: impl fmt::Display) -> Result<T, SchemaError> {
    Err(SchemaError { path: String::from(path), message: message.to_string() })
}

fn as_obj<'a>(path: &str, v: &'a Value) -> Result<&'a Obj, SchemaError> {
    v.as_object().map_or_else(|| fail(path, "expected an object"), Ok)
}

fn as_array<'a>(path: &str, v: &'a Value) -> Result<&'a [Value], SchemaError> {
    v.as_array().map_or_else(|| fail(path, "expected an array"), |a| Ok(a.as_slice()))
}

fn as_str<'a>(path: &str, v: &'a Value) -> Result<&'a str, SchemaError> {
    v.as_str().map_or_else(|| fail(path, "expected a string"), Ok)
}

fn as_u64(path: &str, v: &Value) -> Result<u64, SchemaError> {
    v.as_u64().map_or_else(|| fail(path, "expected an unsigned integer"), Ok)
}

fn as_u32(path: &str, v: &Value) -> Result<u32, SchemaError> {
    let n = as_u64(path, v)?;
    u32::try_from(n).map_or_else(|_| fail(path, "value does not fit in 32 bits"), Ok)
}

fn as_i64(path: &str, v: &Value) -> Result<i64, SchemaError> {
    v.as_i64().map_or_else(|| fail(path, "expected an integer"), Ok)
}

fn as_f64(path: &str, v: &Value) -> Result<f64, SchemaError> {
    v.as_f64().map_or_else(|| fail(path, "expected a number"), Ok)
}

/// Requires `key` on `obj`, returning the child path alongside the value.
fn req<'a>(path: &str, obj: &'a Obj, key: &str) -> Result<(String, &'a Value), SchemaError> {
    match obj.get(key) {
        Some(v) => Ok((format!("{path}.{key}"), v)),
        None => fail(path, format_args!("missing field {key:?}")),
    }
}

/// Rejects fields outside `allowed`, so typos surface instead of being
/// ignored.
fn check_keys(path: &str, obj: &Obj, allowed: &[&str]) -> Result<(), SchemaError> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return fail(path, format_args!("unknown field {key:?}"));
        }
    }
    Ok(())
}

fn meters_to_cm(path: &str, v: &Value) -> Result<i64, SchemaError> {
    let m = as_f64(path, v)?;
    if !m.is_finite() {
        return fail(path, "expected a finite number");
    }
    let cm = m * 100.0;
    let rounded = cm.round();
    if (cm - rounded).abs() > 1e-6 {
        return fail(path, format_args!("{m} m is not representable at centimeter precision"));
    }
    if rounded.abs() > MAX_COORD_CM as f64 {
        return fail(path, format_args!("{m} m exceeds the supported coordinate range"));
    }
    Ok(rounded as i64)
}

fn cm_to_meters(cm: i64) -> f64 {
    cm as f64 / 100.0
}

fn volume_from_json(path: &str, v: &Value) -> Result<Volume4D, SchemaError> {
    let obj = as_obj(path, v)?;
    check_keys(path, obj, &["footprint_m", "altitude_m", "time_ms"])?;

    let (fp_path, fp) = req(path, obj, "footprint_m")?;
    let mut vertices = Vec::new();
    for (i, pv) in as_array(&fp_path, fp)?.iter().enumerate() {
        let p_path = format!("{fp_path}[{i}]");
        let pair = as_array(&p_path, pv)?;
        if pair.len() != 2 {
            return fail(&p_path, "expected an [x, y] pair");
        }
        vertices.push(Point {
            x_cm: meters_to_cm(&format!("{p_path}[0]"), &pair[0])?,
            y_cm: meters_to_cm(&format!("{p_path}[1]"), &pair[1])?,
        });
    }
    let footprint = Footprint::new(vertices).or_else(|e| fail(&fp_path, e))?;

    let (alt_path, alt) = req(path, obj, "altitude_m")?;
    let alt_obj = as_obj(&alt_path, alt)?;
    check_keys(&alt_path, alt_obj, &["floor", "ceiling"])?;
    let floor = req(&alt_path, alt_obj, "floor").and_then(|(p, v)| as_i64(&p, v))?;
    let ceiling = req(&alt_path, alt_obj, "ceiling").and_then(|(p, v)| as_i64(&p, v))?;
    let altitude = AltitudeRange::new(floor, ceiling).or_else(|e| fail(&alt_path, e))?;

    let (time_path, time) = req(path, obj, "time_ms")?;
    let time_obj = as_obj(&time_path, time)?;
    check_keys(&time_path, time_obj, &["start", "end"])?;
    let start = req(&time_path, time_obj, "start").and_then(|(p, v)| as_u64(&p, v))?;
    let end = req(&time_path, time_obj, "end").and_then(|(p, v)| as_u64(&p, v))?;
    let time = TimeInterval::new(start, end).or_else(|e| fail(&time_path, e))?;

    Ok(Volume4D { footprint, altitude, time })
}

fn volume_to_json(v: &Volume4D) -> Value {
    let footprint: Vec<Value> = v
        .footprint
        .vertices()
        .iter()
        .map(|p| json!([cm_to_meters(p.x_cm), cm_to_meters(p.y_cm)]))
        .collect();
    json!({
        "footprint_m": footprint,
        "altitude_m": { "floor": v.altitude.floor_m(), "ceiling": v.altitude.ceiling_m() },
        "time_ms": { "start": v.time.start_ms(), "end": v.time.end_ms() },
    })
}

fn volumes_from_json(path: &str, v: &Value) -> Result<Vec<Volume4D>, SchemaError> {
    as_array(path, v)?
        .iter()
        .enumerate()
        .map(|(i, vol)| volume_from_json(&format!("{path}[{i}]"), vol))
        .collect()
}

fn volumes_to_json(vols: &[Volume4D]) -> Value {
    Value::Array(vols.iter().map(volume_to_json).collect())
}

fn intent_from_json(path: &str, v: &Value) -> Result<OperationIntent, SchemaError> {
    let obj = as_obj(path, v)?;
    check_keys(path, obj, &["id", "extent", "area", "priority"])?;
    let op_id = req(path, obj, "id").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))?;
    let (extent_path, extent) = req(path, obj, "extent")?;
    let extent = volumes_from_json(&extent_path, extent)?;
    if extent.is_empty() {
        return fail(&extent_path, "extent must not be empty");
    }
    let area = match obj.get("area") {
        Some(v) => volumes_from_json(&format!("{path}.area"), v)?,
        None => Vec::new(),
    };
    let priority_tag = match obj.get("priority") {
        Some(v) => String::from(as_str(&format!("{path}.priority"), v)?),
        None => String::new(),
    };
    Ok(OperationIntent { op_id, extent, area, priority_tag })
}

fn intent_to_json(intent: &OperationIntent) -> Value {
    json!({
        "id": intent.op_id,
        "extent": volumes_to_json(&intent.extent),
        "area": volumes_to_json(&intent.area),
        "priority": intent.priority_tag,
    })
}

/// Link profile fields inline on the carrying object (a link declaration
/// or a reconfiguration action). Jitter and loss default to zero.
fn profile_from_json(path: &str, obj: &Obj) -> Result<LinkProfile, SchemaError> {
    let base_latency_ms = req(path, obj, "base_latency_ms").and_then(|(p, v)| as_u64(&p, v))?;
    let jitter_ms = match obj.get("jitter_ms") {
        Some(v) => as_u64(&format!("{path}.jitter_ms"), v)?,
        None => 0,
    };
    let failure_prob = match obj.get("failure_prob") {
        Some(v) => as_f64(&format!("{path}.failure_prob"), v)?,
        None => 0.0,
    };
    let profile = LinkProfile { base_latency_ms, jitter_ms, failure_prob };
    profile.validate().or_else(|e| fail(path, e))?;
    Ok(profile)
}

fn profile_into_obj(obj: &mut Obj, profile: &LinkProfile) {
    obj.insert(String::from("base_latency_ms"), json!(profile.base_latency_ms));
    obj.insert(String::from("jitter_ms"), json!(profile.jitter_ms));
    obj.insert(String::from("failure_prob"), json!(profile.failure_prob));
}

fn action_from_json(path: &str, v: &Value) -> Result<ScriptAction, SchemaError> {
    let obj = as_obj(path, v)?;
    let at_ms = req(path, obj, "at_ms").and_then(|(p, v)| as_u64(&p, v))?;
    let guard = match obj.get("guard") {
        Some(v) => {
            let p = format!("{path}.guard");
            let name = as_str(&p, v)?;
            Some(
                OperationState::from_name(name)
                    .map_or_else(|| fail(&p, format_args!("unknown operation state {name:?}")), Ok)?,
            )
        }
        None => None,
    };
    let (kind_path, kind) = req(path, obj, "action")?;
    let kind = as_str(&kind_path, kind)?;

    let uss = |allowed: &[&str]| -> Result<String, SchemaError> {
        check_keys(path, obj, allowed)?;
        req(path, obj, "uss").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))
    };
    let op = || req(path, obj, "op").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)));

    let kind = match kind {
        "submit_intent" => {
            let uss = uss(&["at_ms", "guard", "action", "uss", "operation", "supersedes"])?;
            let (p, v) = req(path, obj, "operation")?;
            let intent = intent_from_json(&p, v)?;
            let supersedes = match obj.get("supersedes") {
                Some(v) => Some(String::from(as_str(&format!("{path}.supersedes"), v)?)),
                None => None,
            };
            ActionKind::SubmitIntent { uss, intent, supersedes }
        }
        "activate" => {
            ActionKind::Activate { uss: uss(&["at_ms", "guard", "action", "uss", "op"])?, op: op()? }
        }
        "end_operation" => {
            ActionKind::EndOperation { uss: uss(&["at_ms", "guard", "action", "uss", "op"])?, op: op()? }
        }
        "publish_constraint" => {
            let uss = uss(&["at_ms", "guard", "action", "uss", "constraint_id", "extent"])?;
            let constraint_id =
                req(path, obj, "constraint_id").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))?;
            let (p, v) = req(path, obj, "extent")?;
            ActionKind::PublishConstraint { uss, constraint_id, extent: volumes_from_json(&p, v)? }
        }
        "begin_nonconformance" => {
            let uss = uss(&["at_ms", "guard", "action", "uss", "op", "replacement"])?;
            let (p, v) = req(path, obj, "replacement")?;
            ActionKind::BeginNonconformance { uss, op: op()?, replacement: intent_from_json(&p, v)? }
        }
        "reconfigure_link" => {
            check_keys(
                path,
                obj,
                &["at_ms", "guard", "action", "src", "dst", "base_latency_ms", "jitter_ms", "failure_prob"],
            )?;
            let src = req(path, obj, "src").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))?;
            let dst = req(path, obj, "dst").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))?;
            ActionKind::ReconfigureLink { src, dst, profile: profile_from_json(path, obj)? }
        }
        other => return fail(&kind_path, format_args!("unknown action {other:?}")),
    };
    Ok(ScriptAction { at_ms, guard, kind })
}

fn action_to_json(action: &ScriptAction) -> Value {
    let mut obj = Obj::new();
    obj.insert(String::from("at_ms"), json!(action.at_ms));
    if let Some(guard) = action.guard {
        obj.insert(String::from("guard"), json!(guard.name()));
    }
    let mut put = |key: &str, v: Value| obj.insert(String::from(key), v);
    match &action.kind {
        ActionKind::SubmitIntent { uss, intent, supersedes } => {
            put("action", json!("submit_intent"));
            put("uss", json!(uss));
            put("operation", intent_to_json(intent));
            if let Some(s) = supersedes {
                put("supersedes", json!(s));
            }
        }
        ActionKind::Activate { uss, op } => {
            put("action", json!("activate"));
            put("uss", json!(uss));
            put("op", json!(op));
        }
        ActionKind::EndOperation { uss, op } => {
            put("action", json!("end_operation"));
            put("uss", json!(uss));
            put("op", json!(op));
        }
        ActionKind::PublishConstraint { uss, constraint_id, extent } => {
            put("action", json!("publish_constraint"));
            put("uss", json!(uss));
            put("constraint_id", json!(constraint_id));
            put("extent", volumes_to_json(extent));
        }
        ActionKind::BeginNonconformance { uss, op, replacement } => {
            put("action", json!("begin_nonconformance"));
            put("uss", json!(uss));
            put("op", json!(op));
            put("replacement", intent_to_json(replacement));
        }
        ActionKind::ReconfigureLink { src, dst, profile } => {
            put("action", json!("reconfigure_link"));
            put("src", json!(src));
            put("dst", json!(dst));
            profile_into_obj(&mut obj, profile);
        }
    }
    Value::Object(obj)
}

fn params_from_json(path: &str, v: &Value) -> Result<Params, SchemaError> {
    let obj = as_obj(path, v)?;
    check_keys(
        path,
        obj,
        &[
            "grace_window_ms",
            "per_pair_check_ms",
            "proc_ms",
            "submission_window_ms",
            "link_retry_attempts",
            "link_retry_backoff_ms",
            "max_scd_attempts",
            "max_concurrent_scd",
        ],
    )?;
    let u64_field = |key: &str| req(path, obj, key).and_then(|(p, v)| as_u64(&p, v));
    let u32_field = |key: &str| req(path, obj, key).and_then(|(p, v)| as_u32(&p, v));
    Ok(Params {
        grace_window_ms: u64_field("grace_window_ms")?,
        per_pair_check_ms: u64_field("per_pair_check_ms")?,
        proc_ms: u64_field("proc_ms")?,
        submission_window_ms: u64_field("submission_window_ms")?,
        link_retry_attempts: u32_field("link_retry_attempts")?,
        link_retry_backoff_ms: u64_field("link_retry_backoff_ms")?,
        max_scd_attempts: u32_field("max_scd_attempts")?,
        max_concurrent_scd: u32_field("max_concurrent_scd")?,
    })
}

fn generator_from_json(path: &str, v: &Value) -> Result<GeneratorSpec, SchemaError> {
    let obj = as_obj(path, v)?;
    check_keys(
        path,
        obj,
        &["n_ops", "n_uss", "window_ms", "seed", "added_latency_ms", "nonconf_at_ms"],
    )?;
    Ok(GeneratorSpec {
        n_ops: req(path, obj, "n_ops").and_then(|(p, v)| as_u32(&p, v))?,
        n_uss: req(path, obj, "n_uss").and_then(|(p, v)| as_u32(&p, v))?,
        window_ms: req(path, obj, "window_ms").and_then(|(p, v)| as_u64(&p, v))?,
        seed: req(path, obj, "seed").and_then(|(p, v)| as_u64(&p, v))?,
        added_latency_ms: req(path, obj, "added_latency_ms").and_then(|(p, v)| as_u64(&p, v))?,
        nonconf_at_ms: req(path, obj, "nonconf_at_ms").and_then(|(p, v)| as_u64(&p, v))?,
    })
}

/// Parses and structurally validates a scenario document. Cross-reference
/// checks (link endpoints, duplicate ids, ...) are the engine validator's
/// job and run separately.
pub fn scenario_from_json(text: &str) -> Result<ScenarioScript, SchemaError> {
    let root: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return fail("$", format_args!("not valid JSON: {e}")),
    };
    let obj = as_obj("$", &root)?;
    check_keys(
        "$",
        obj,
        &[
            "schema_version",
            "topology",
            "parameters",
            "preplanned",
            "actions",
            "generator",
            "designated_op",
        ],
    )?;

    let (ver_path, ver) = req("$", obj, "schema_version")?;
    let schema_version = as_u32(&ver_path, ver)?;
    if schema_version != 1 {
        return fail(&ver_path, format_args!("unsupported version {schema_version}"));
    }

    let (topo_path, topo) = req("$", obj, "topology")?;
    let topo_obj = as_obj(&topo_path, topo)?;
    check_keys(&topo_path, topo_obj, &["dss", "uss", "links"])?;
    let dss_id =
        req(&topo_path, topo_obj, "dss").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))?;
    let (uss_path, uss) = req(&topo_path, topo_obj, "uss")?;
    let uss_ids = as_array(&uss_path, uss)?
        .iter()
        .enumerate()
        .map(|(i, v)| Ok(String::from(as_str(&format!("{uss_path}[{i}]"), v)?)))
        .collect::<Result<Vec<_>, SchemaError>>()?;
    let (links_path, links) = req(&topo_path, topo_obj, "links")?;
    let links = as_array(&links_path, links)?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let path = format!("{links_path}[{i}]");
            let obj = as_obj(&path, v)?;
            check_keys(&path, obj, &["src", "dst", "base_latency_ms", "jitter_ms", "failure_prob"])?;
            let src = req(&path, obj, "src").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))?;
            let dst = req(&path, obj, "dst").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))?;
            Ok(LinkDecl { src, dst, profile: profile_from_json(&path, obj)? })
        })
        .collect::<Result<Vec<_>, SchemaError>>()?;

    let (params_path, params) = req("$", obj, "parameters")?;
    let params = params_from_json(&params_path, params)?;

    let (pre_path, pre) = req("$", obj, "preplanned")?;
    let preplanned = as_array(&pre_path, pre)?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let path = format!("{pre_path}[{i}]");
            let obj = as_obj(&path, v)?;
            check_keys(&path, obj, &["uss", "operation"])?;
            let uss = req(&path, obj, "uss").and_then(|(p, v)| Ok(String::from(as_str(&p, v)?)))?;
            let (p, v) = req(&path, obj, "operation")?;
            Ok(PreplannedOp { uss, intent: intent_from_json(&p, v)? })
        })
        .collect::<Result<Vec<_>, SchemaError>>()?;

    let (actions_path, acts) = req("$", obj, "actions")?;
    let actions = as_array(&actions_path, acts)?
        .iter()
        .enumerate()
        .map(|(i, v)| action_from_json(&format!("{actions_path}[{i}]"), v))
        .collect::<Result<Vec<_>, SchemaError>>()?;

    let generator = match obj.get("generator") {
        Some(v) => Some(generator_from_json("$.generator", v)?),
        None => None,
    };
    let designated_op = match obj.get("designated_op") {
        Some(v) => Some(String::from(as_str("$.designated_op", v)?)),
        None => None,
    };

    Ok(ScenarioScript {
        schema_version,
        uss_ids,
        dss_id,
        links,
        params,
        preplanned,
        actions,
        generator,
        designated_op,
    })
}

pub fn scenario_to_json(script: &ScenarioScript) -> Value {
    let links: Vec<Value> = script
        .links
        .iter()
        .map(|l| {
            let mut obj = Obj::new();
            obj.insert(String::from("src"), json!(l.src));
            obj.insert(String::from("dst"), json!(l.dst));
            profile_into_obj(&mut obj, &l.profile);
            Value::Object(obj)
        })
        .collect();
    let preplanned: Vec<Value> = script
        .preplanned
        .iter()
        .map(|p| json!({ "uss": p.uss, "operation": intent_to_json(&p.intent) }))
        .collect();
    let actions: Vec<Value> = script.actions.iter().map(action_to_json).collect();

    let mut root = Obj::new();
    root.insert(String::from("schema_version"), json!(script.schema_version));
    root.insert(
        String::from("topology"),
        json!({ "dss": script.dss_id, "uss": script.uss_ids, "links": links }),
    );
    root.insert(
        String::from("parameters"),
        json!({
            "grace_window_ms": script.params.grace_window_ms,
            "per_pair_check_ms": script.params.per_pair_check_ms,
            "proc_ms": script.params.proc_ms,
            "submission_window_ms": script.params.submission_window_ms,
            "link_retry_attempts": script.params.link_retry_attempts,
            "link_retry_backoff_ms": script.params.link_retry_backoff_ms,
            "max_scd_attempts": script.params.max_scd_attempts,
            "max_concurrent_scd": script.params.max_concurrent_scd,
        }),
    );
    root.insert(String::from("preplanned"), Value::Array(preplanned));
    root.insert(String::from("actions"), Value::Array(actions));
    if let Some(g) = &script.generator {
        root.insert(
            String::from("generator"),
            json!({
                "n_ops": g.n_ops,
                "n_uss": g.n_uss,
                "window_ms": g.window_ms,
                "seed": g.seed,
                "added_latency_ms": g.added_latency_ms,
                "nonconf_at_ms": g.nonconf_at_ms,
            }),
        );
    }
    if let Some(op) = &script.designated_op {
        root.insert(String::from("designated_op"), json!(op));
    }
    Value::Object(root)
}

/// Pretty-printed document with sorted keys and a trailing newline:
/// identical scripts always serialize to identical bytes.
pub fn scenario_to_json_string(script: &ScenarioScript) -> String {
    let mut text = serde_json::to_string_pretty(&scenario_to_json(script))
        .expect("scenario documents always serialize");
    text.push('\n');
    text
}
