//! Full-system verification suite: nine independent checks covering the
//! race replay, retry exhaustion, both parameter sweeps, contingency
//! timing, the mutation-log audit, geometry and percentile oracles, and
//! byte-level determinism. Each check prints one PASS/FAIL line; the test
//! fails if any check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use utmsim_core::audit;
use utmsim_core::dss::MutationOutcome;
use utmsim_core::metrics::{percentile_nearest_rank, ScdOutcome};
use utmsim_core::oracle;
use utmsim_core::report::EventRecord;
use utmsim_core::rng;
use utmsim_core::scenario::{
    make_churn_scenario, make_contingency_scenario, make_paper_scenario, make_race_scenario,
    GeneratorSpec,
};
use utmsim_core::sweep::{
    fig2_rows, fig3_rows, run_sweep, CellAgg, SweepAxis, SweepField, SweepSpec, SweepValue,
};
use utmsim_core::uss::OperationState;
use utmsim_core::{run, ScenarioScript, SimReport};

#[test]
fn acceptance() {
    let checks: [(&str, fn()); 9] = [
        ("race: one invalidation, then a clean retry", c1_race_replay),
        ("churn: retries exhausted exactly at the attempt cap", c2_retry_exhaustion),
        ("window sweep: p95 deconfliction grows as demand compresses", c3_window_sweep),
        ("latency sweep: acceptance rises with competitor registry latency", c4_latency_sweep),
        ("nonconformance: contingency lands exactly on the grace deadline", c5_contingency),
        ("audit: every mutation log replays cleanly", c6_audit),
        ("geometry: intersection agrees with independent oracles", c7_geometry),
        ("determinism: identical seeds give byte-identical artifacts", c8_determinism),
        ("percentile: nearest rank agrees with the sort oracle", c9_percentile),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(()) => println!("PASS {name}"),
            Err(payload) => {
                failures += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| payload.downcast_ref::<&str>().copied())
                    .unwrap_or("panic without message");
                println!("FAIL {name}: {msg}");
            }
        }
    }
    assert_eq!(failures, 0, "{failures} acceptance checks failed");
}

/// Replays the log and checks operation conservation; applied to every
/// report any check produces.
fn verify(report: &SimReport) {
    audit::replay(&report.dss_mutations, &report.final_entities)
        .unwrap_or_else(|e| panic!("audit replay failed: {e}"));
    assert!(report.conservation_holds(), "operation conservation violated");
}

fn within(start: Instant, limit: Duration, what: &str) {
    let elapsed = start.elapsed();
    assert!(elapsed <= limit, "{what} took {elapsed:?}, limit {limit:?}");
}

fn describe(e: &EventRecord) -> String {
    match e {
        EventRecord::ScdSubmit { at_ms, uss, op } => format!("{at_ms} submit {uss} {op}"),
        EventRecord::ScdQueued { at_ms, uss, op } => format!("{at_ms} queued {uss} {op}"),
        EventRecord::DssQuery { at_ms, uss, op, refs } => {
            format!("{at_ms} query {uss} {op} refs={refs}")
        }
        EventRecord::DssPut { at_ms, uss, op, outcome } => {
            format!("{at_ms} put {uss} {op} {outcome}")
        }
        EventRecord::DssDelete { at_ms, uss, op, outcome } => {
            format!("{at_ms} delete {uss} {op} {outcome}")
        }
        EventRecord::PeerFetch { at_ms, uss, peer, op, ids } => {
            format!("{at_ms} fetch {uss} {op} from {peer} ids={ids}")
        }
        EventRecord::ScdOutcome { at_ms, uss, op, outcome, attempts } => {
            format!("{at_ms} outcome {uss} {op} {outcome} attempts={attempts}")
        }
        other => format!("{} unexpected", other.at_ms()),
    }
}

/// Two suppliers contend for overlapping airspace; the slower one must be
/// invalidated exactly once, refetch the winner's plan, and commit around
/// it on the second attempt. The whole exchange is frozen step for step.
fn c1_race_replay() {
    let t0 = Instant::now();
    let report = run(&make_race_scenario(), 0).unwrap();

    let got: Vec<String> = report.event_log.iter().map(describe).collect();
    let want = [
        "0 submit uss1 opA",
        "5 submit uss2 opB",
        "20 query uss2 opB refs=0",
        "35 query uss1 opA refs=0",
        "45 put uss2 opB success",
        "55 outcome uss2 opB accepted attempts=1",
        "100 put uss1 opA airspace_changed",
        "145 fetch uss1 opA from uss2 ids=1",
        "192 put uss1 opA success",
        "222 outcome uss1 opA accepted attempts=2",
    ];
    assert_eq!(got, want, "race event log deviates from the frozen exchange");

    let invalidations = report
        .event_log
        .iter()
        .filter(|e| {
            matches!(e, EventRecord::DssPut { outcome: MutationOutcome::AirspaceChanged, .. })
        })
        .count();
    assert_eq!(invalidations, 1, "expected exactly one optimistic-concurrency rejection");

    let s = &report.scd_samples;
    assert_eq!(s.len(), 2);
    assert_eq!(
        (s[0].uss.as_str(), s[0].op.as_str(), s[0].submit_ms, s[0].outcome_ms, s[0].attempts),
        ("uss2", "opB", 5, 55, 1)
    );
    assert_eq!(s[0].outcome, ScdOutcome::Accepted);
    assert_eq!(
        (s[1].uss.as_str(), s[1].op.as_str(), s[1].submit_ms, s[1].outcome_ms, s[1].attempts),
        ("uss1", "opA", 0, 222, 2)
    );
    assert_eq!(s[1].outcome, ScdOutcome::Accepted);

    verify(&report);
    within(t0, Duration::from_secs(1), "race replay");
}

/// Under continuous interference the victim burns its full retry budget:
/// five attempts, five invalidations, zero commits, for every seed.
fn c2_retry_exhaustion() {
    let t0 = Instant::now();
    let script = make_churn_scenario();
    for seed in 0..50 {
        let report = run(&script, seed).unwrap();
        let vic: Vec<_> = report.scd_samples.iter().filter(|s| s.op == "vic").collect();
        assert_eq!(vic.len(), 1, "seed {seed}: expected one victim sample");
        assert_eq!(vic[0].attempts, 5, "seed {seed}: attempts");
        assert_eq!(vic[0].outcome, ScdOutcome::RetriesExhausted, "seed {seed}: outcome");

        let puts = |outcome: MutationOutcome| {
            report
                .event_log
                .iter()
                .filter(|e| {
                    matches!(e, EventRecord::DssPut { op, outcome: o, .. }
                        if op == "vic" && *o == outcome)
                })
                .count()
        };
        assert_eq!(puts(MutationOutcome::Committed), 0, "seed {seed}: victim must never commit");
        assert_eq!(puts(MutationOutcome::AirspaceChanged), 5, "seed {seed}: one rejection per attempt");

        if seed == 0 {
            assert_eq!((vic[0].submit_ms, vic[0].outcome_ms), (100, 370));
        }
        verify(&report);
    }
    within(t0, Duration::from_secs(5), "retry exhaustion runs");
}

fn window_sweep() -> (ScenarioScript, Vec<CellAgg>) {
    let base = make_paper_scenario(&GeneratorSpec::default()).unwrap();
    let spec = SweepSpec {
        axes: vec![SweepAxis {
            field: SweepField::Generator(String::from("window_ms")),
            values: [15_000, 30_000, 60_000, 120_000].map(SweepValue::Int).to_vec(),
        }],
        base_seed: 1000,
        reps: 20,
    };
    let cells = run_sweep(&base, &spec, |_, _, report| verify(report)).unwrap();
    (base, cells)
}

/// Compressing the demand window must drive per-supplier pooled p95
/// deconfliction duration up monotonically, with the narrowest window at
/// least 1.5x the widest.
fn c3_window_sweep() {
    let t0 = Instant::now();
    let (base, cells) = window_sweep();
    let rows = fig2_rows(&cells, &base.uss_ids);
    for uss in &base.uss_ids {
        let series: Vec<(u64, u64)> = rows
            .iter()
            .filter(|r| r.uss_id == *uss)
            .map(|r| (r.window_ms, r.p95_scd_ms))
            .collect();
        assert_eq!(
            series.iter().map(|(w, _)| *w).collect::<Vec<_>>(),
            [15_000, 30_000, 60_000, 120_000],
            "{uss}: unexpected window grid"
        );
        for pair in series.windows(2) {
            assert!(
                pair[0].1 >= pair[1].1,
                "{uss}: p95 must not rise as the window widens: {series:?}"
            );
        }
        let narrow = series[0].1 as f64;
        let wide = series[3].1 as f64;
        assert!(
            narrow >= 1.5 * wide,
            "{uss}: p95 at 15 s must be at least 1.5x p95 at 120 s: {series:?}"
        );
    }
    for r in &rows {
        assert_eq!(r.reps, 20);
        assert!(r.n_samples >= 400, "pooled sample count too small: {}", r.n_samples);
    }
    within(t0, Duration::from_secs(120), "window sweep");
}

fn latency_sweep() -> (ScenarioScript, Vec<CellAgg>) {
    let base = make_paper_scenario(&GeneratorSpec::default()).unwrap();
    let spec = SweepSpec {
        axes: vec![SweepAxis {
            field: SweepField::Generator(String::from("added_latency_ms")),
            values: [0, 50, 100, 200, 400].map(SweepValue::Int).to_vec(),
        }],
        base_seed: 2000,
        reps: 20,
    };
    let cells = run_sweep(&base, &spec, |_, _, report| verify(report)).unwrap();
    (base, cells)
}

/// Slowing the competitor's registry link must never hurt the designated
/// operation: rejected outright on a level field, accepted strictly more
/// often as the handicap grows, and winning at the largest value.
fn c4_latency_sweep() {
    let t0 = Instant::now();
    let (base, cells) = latency_sweep();
    let rows = fig3_rows(&cells);
    let designated = base.designated_op.as_deref().unwrap();
    assert_eq!(
        rows.iter().map(|r| r.added_latency_ms).collect::<Vec<_>>(),
        [0, 50, 100, 200, 400]
    );
    for r in &rows {
        assert_eq!(r.op_id, designated);
        assert_eq!(r.reps, 20);
    }
    assert_eq!(rows[0].acceptance_rate, 0.0, "must always lose on a level field");
    for pair in rows.windows(2) {
        assert!(
            pair[0].acceptance_rate <= pair[1].acceptance_rate,
            "acceptance must not fall as latency grows: {rows:?}"
        );
    }
    assert!(rows[4].acceptance_rate > 0.0, "must win at the largest handicap");
    within(t0, Duration::from_secs(180), "latency sweep");
}

/// A replan that cannot land inside the grace window forces a contingency
/// declaration exactly at the deadline; a fast replan restores the plan
/// with no contingency at all.
fn c5_contingency() {
    let t0 = Instant::now();

    let slow = run(&make_contingency_scenario(true), 0).unwrap();
    assert_eq!(slow.contingencies.len(), 1);
    let c = &slow.contingencies[0];
    assert_eq!(
        (c.uss.as_str(), c.op.as_str(), c.declared_ms, c.deadline_ms),
        ("uss1", "flt", 61_000, 61_000),
        "contingency must be declared exactly at the grace deadline"
    );
    assert!(
        slow.lifecycle.iter().any(|t| t.at_ms == 61_000
            && t.op == "flt"
            && t.from == OperationState::Nonconforming
            && t.to == OperationState::Contingent),
        "missing nonconforming -> contingent at the deadline"
    );
    let f = slow.ops_final.iter().find(|o| o.op == "flt").unwrap();
    assert_eq!(f.state, OperationState::Contingent);
    let s = slow.scd_samples.iter().find(|s| s.op == "flt").unwrap();
    assert_eq!(s.outcome, ScdOutcome::Accepted);
    assert!(s.outcome_ms > c.deadline_ms, "slow replan must land after the deadline");
    verify(&slow);

    let fast = run(&make_contingency_scenario(false), 0).unwrap();
    assert!(fast.contingencies.is_empty(), "fast replan must avoid contingency");
    assert!(!fast
        .lifecycle
        .iter()
        .any(|t| t.to == OperationState::Contingent));
    assert!(fast.lifecycle.iter().any(|t| t.at_ms == 1_135
        && t.op == "flt"
        && t.from == OperationState::Nonconforming
        && t.to == OperationState::Planned));
    assert!(fast.lifecycle.iter().any(|t| t.at_ms == 1_135
        && t.op == "flt"
        && t.from == OperationState::Planned
        && t.to == OperationState::Active));
    let f = fast.ops_final.iter().find(|o| o.op == "flt").unwrap();
    assert_eq!(f.state, OperationState::Active);
    let s = fast.scd_samples.iter().find(|s| s.op == "flt").unwrap();
    assert_eq!((s.outcome_ms, s.outcome), (1_135, ScdOutcome::Accepted));
    verify(&fast);

    within(t0, Duration::from_secs(5), "contingency runs");
}

/// Every built-in scenario replays cleanly in-process, the corridor
/// census balances, and the stored-artifact path through the binary
/// agrees.
fn c6_audit() {
    let paper = make_paper_scenario(&GeneratorSpec::default()).unwrap();
    let reports = [
        run(&make_race_scenario(), 0).unwrap(),
        run(&make_churn_scenario(), 0).unwrap(),
        run(&make_contingency_scenario(true), 0).unwrap(),
        run(&make_contingency_scenario(false), 0).unwrap(),
        run(&paper, 0).unwrap(),
    ];
    for report in &reports {
        let stats = audit::replay(&report.dss_mutations, &report.final_entities)
            .unwrap_or_else(|e| panic!("audit replay failed: {e}"));
        assert!(stats.commits >= 1);
        assert!(report.conservation_holds());
    }
    let census = reports[4].census();
    assert_eq!(census.total(), 41, "corridor census: 40 lane operations plus the flight");
    assert_eq!(census.planned + census.rejected, 40, "every lane operation settles");

    let dir = tempfile::tempdir().unwrap();
    utmsim::reportio::write_run_dir(dir.path(), &reports[0]).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_utmsim"))
        .args(["report", "audit", "--in"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stored-run audit exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

/// Ten thousand random volume pairs: the production intersection must
/// agree with the per-dimension classical oracle everywhere, and the
/// footprint test with a 0.1 m lattice wherever boundaries are at least
/// 0.2 m apart.
fn c7_geometry() {
    let t0 = Instant::now();
    let mut gen = rng::stream(424_242, "acceptance-geom");
    let mut volume_hits = 0u32;
    let mut grid_checked = 0u32;
    let mut grid_hits = 0u32;
    for i in 0..10_000u32 {
        let a = oracle::gen_volume(&mut gen, 0, 0, 700);
        // Alternate nearby small blobs with far-flung large ones so both
        // verdicts appear; near-boundary pairs are excluded from the grid
        // comparison because the lattice can miss thin slivers there.
        let b = if i % 2 == 0 {
            let cx = rng::uniform_inclusive(&mut gen, 300) as i64 - 150;
            let cy = rng::uniform_inclusive(&mut gen, 300) as i64 - 150;
            oracle::gen_volume(&mut gen, cx, cy, 120)
        } else {
            let cx = rng::uniform_inclusive(&mut gen, 4_000) as i64 - 2_000;
            let cy = rng::uniform_inclusive(&mut gen, 4_000) as i64 - 2_000;
            oracle::gen_volume(&mut gen, cx, cy, 700)
        };

        let got = utmsim_core::geom4d::volumes_intersect(&a, &b);
        assert_eq!(
            got,
            oracle::volumes_intersect_composed(&a, &b),
            "volume pair {i} disagrees with the composed oracle"
        );
        volume_hits += u32::from(got);

        if oracle::boundary_clearance_cm(&a.footprint, &b.footprint) >= 20.0 {
            grid_checked += 1;
            let fp = utmsim_core::geom4d::footprints_intersect(&a.footprint, &b.footprint);
            assert_eq!(
                fp,
                oracle::footprints_intersect_grid(&a.footprint, &b.footprint, 10),
                "footprint pair {i} disagrees with the grid oracle"
            );
            grid_hits += u32::from(fp);
        }
    }
    assert!(volume_hits >= 500, "too few intersecting volumes: {volume_hits}");
    assert!(grid_checked >= 2_000, "too few grid-checkable pairs: {grid_checked}");
    assert!(grid_hits >= 500, "too few grid-confirmed overlaps: {grid_hits}");
    assert!(
        grid_checked - grid_hits >= 500,
        "too few grid-confirmed gaps: {}",
        grid_checked - grid_hits
    );
    within(t0, Duration::from_secs(30), "geometry oracle comparison");
}

/// Rerunning every scenario and both sweeps with the same seeds must give
/// byte-identical reports and CSV tables.
fn c8_determinism() {
    let paper = make_paper_scenario(&GeneratorSpec::default()).unwrap();
    let scripts: [(&str, &ScenarioScript); 5] = [
        ("race", &make_race_scenario()),
        ("churn", &make_churn_scenario()),
        ("contingency-slow", &make_contingency_scenario(true)),
        ("contingency-fast", &make_contingency_scenario(false)),
        ("paper", &paper),
    ];
    for (name, script) in scripts {
        let a = utmsim::reportio::report_json(&run(script, 17).unwrap());
        let b = utmsim::reportio::report_json(&run(script, 17).unwrap());
        assert_eq!(a, b, "{name}: rerun changed the serialized report");
    }

    let tables = || {
        let (base, fig2_cells) = window_sweep();
        let (_, fig3_cells) = latency_sweep();
        (
            utmsim::reportio::fig2_csv(&fig2_rows(&fig2_cells, &base.uss_ids)),
            utmsim::reportio::fig3_csv(&fig3_rows(&fig3_cells)),
            utmsim::reportio::contingency_csv(&utmsim_core::sweep::contingency_rows(&fig2_cells)),
        )
    };
    let (fig2_a, fig3_a, cont_a) = tables();
    let (fig2_b, fig3_b, cont_b) = tables();
    assert_eq!(fig2_a, fig2_b, "window-sweep table changed across reruns");
    assert_eq!(fig3_a, fig3_b, "latency-sweep table changed across reruns");
    assert_eq!(cont_a, cont_b, "contingency table changed across reruns");
}

/// A thousand random lists, plus the degenerate shapes, against the
/// sort-based oracle.
fn c9_percentile() {
    let mut gen = rng::stream(7, "acceptance-pct");
    for i in 0..1_000u32 {
        let values: Vec<u64> = match i % 10 {
            0 => vec![rng::uniform_inclusive(&mut gen, 10_000)],
            1 => {
                let v = rng::uniform_inclusive(&mut gen, 10_000);
                let n = 1 + rng::uniform_inclusive(&mut gen, 199) as usize;
                vec![v; n]
            }
            _ => {
                let n = 1 + rng::uniform_inclusive(&mut gen, 199) as usize;
                (0..n).map(|_| rng::uniform_inclusive(&mut gen, 10_000)).collect()
            }
        };
        let p = 1 + rng::uniform_inclusive(&mut gen, 99) as u32;
        assert_eq!(
            percentile_nearest_rank(&values, p),
            oracle::percentile_by_sort(&values, p),
            "list {i} (n={}, p={p}) disagrees with the sort oracle",
            values.len()
        );
    }
    for p in [1, 50, 95, 100] {
        assert_eq!(percentile_nearest_rank(&[], p), None);
        assert_eq!(oracle::percentile_by_sort(&[], p), None);
    }
    for p in [0, 101] {
        assert_eq!(percentile_nearest_rank(&[5], p), None);
        assert_eq!(oracle::percentile_by_sort(&[5], p), None);
    }
}
