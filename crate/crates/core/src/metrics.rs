//! Planning metrics: deconfliction duration samples, acceptance tallies,
//! contingency records, nearest-rank percentiles, and the figure-table
//! row types exported by sweeps.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScdOutcome {
    Accepted,
    /// A true conflict with a current entity; no amount of retrying helps.
    RejectedConflict,
    /// Every allowed attempt ended in a stale-picture rejection.
    RetriesExhausted,
    /// A peer or the DSS stayed unreachable through the retry budget.
    PeerUnreachable,
}

impl ScdOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, ScdOutcome::Accepted)
    }
}

impl fmt::Display for ScdOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScdOutcome::Accepted => "accepted",
            ScdOutcome::RejectedConflict => "rejected_conflict",
            ScdOutcome::RetriesExhausted => "retries_exhausted",
            ScdOutcome::PeerUnreachable => "peer_unreachable",
        })
    }
}

/// One completed strategic deconfliction run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScdSample {
    pub uss: String,
    pub op: String,
    pub submit_ms: u64,
    pub outcome_ms: u64,
    pub attempts: u32,
    pub outcome: ScdOutcome,
}

impl ScdSample {
    pub fn duration_ms(&self) -> u64 {
        self.outcome_ms - self.submit_ms
    }
}

/// A flight that ran out of grace time while nonconforming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyRecord {
    pub uss: String,
    pub op: String,
    pub declared_ms: u64,
    pub deadline_ms: u64,
}

/// Nearest-rank percentile: the smallest element with at least `p`
/// percent of the sample at or below it. `None` for an empty sample or
/// `p` outside `1..=100`.
pub fn percentile_nearest_rank(values: &[u64], p: u32) -> Option<u64> {
    if values.is_empty() || p == 0 || p > 100 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = (p as usize * sorted.len()).div_ceil(100);
    sorted.get(rank - 1).copied()
}

/// Durations of one USS's samples, in record order.
pub fn durations_for(samples: &[ScdSample], uss: &str) -> Vec<u64> {
    samples.iter().filter(|s| s.uss == uss).map(|s| s.duration_ms()).collect()
}

/// Percentile over samples pooled across runs, per USS. Pooling means
/// concatenating the runs' samples into one population first; percentiles
/// of per-run percentiles would not be a percentile of anything.
pub fn pooled_percentile<'a, I>(runs: I, uss: &str, p: u32) -> Option<u64>
where
    I: IntoIterator<Item = &'a [ScdSample]>,
{
    let mut pool = Vec::new();
    for run in runs {
        pool.extend(durations_for(run, uss));
    }
    percentile_nearest_rank(&pool, p)
}

/// Accepted-over-total tally for one operation across repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AcceptanceTally {
    pub accepted: u32,
    pub runs: u32,
}

impl AcceptanceTally {
    pub fn rate(&self) -> f64 {
        if self.runs == 0 {
            return 0.0;
        }
        f64::from(self.accepted) / f64::from(self.runs)
    }

    pub fn merge(&self, other: &AcceptanceTally) -> AcceptanceTally {
        AcceptanceTally {
            accepted: self.accepted + other.accepted,
            runs: self.runs + other.runs,
        }
    }
}

/// Whether the operation's final deconfliction outcome in this run was an
/// acceptance; `None` when it never completed one.
pub fn final_outcome_accepted(samples: &[ScdSample], op: &str) -> Option<bool> {
    samples.iter().rev().find(|s| s.op == op).map(|s| s.outcome.is_accepted())
}

/// Tallies `op` over runs; a run without a completed deconfliction for
/// `op` counts as not accepted.
pub fn acceptance_tally<'a, I>(runs: I, op: &str) -> AcceptanceTally
where
    I: IntoIterator<Item = &'a [ScdSample]>,
{
    let mut tally = AcceptanceTally::default();
    for run in runs {
        tally.runs += 1;
        if final_outcome_accepted(run, op) == Some(true) {
            tally.accepted += 1;
        }
    }
    tally
}

/// Row of the window-sweep duration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub window_ms: u64,
    pub uss_id: String,
    pub p95_scd_ms: u64,
    pub n_samples: u32,
    pub reps: u32,
}

/// Row of the latency-sweep acceptance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub added_latency_ms: u64,
    pub op_id: String,
    pub acceptance_rate: f64,
    pub reps: u32,
}

/// Row of the per-cell contingency count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyRow {
    pub cell: String,
    pub contingency_count: u32,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::rng;
    use alloc::vec;
    use rand_core::RngCore;

    #[test]
    fn percentile_of_singleton_is_the_element() {
        assert_eq!(percentile_nearest_rank(&[10], 95), Some(10));
        assert_eq!(percentile_nearest_rank(&[10], 1), Some(10));
        assert_eq!(percentile_nearest_rank(&[10], 100), Some(10));
    }

    #[test]
    fn percentile_rejects_degenerate_input() {
        assert_eq!(percentile_nearest_rank(&[], 95), None);
        assert_eq!(percentile_nearest_rank(&[1, 2], 0), None);
        assert_eq!(percentile_nearest_rank(&[1, 2], 101), None);
    }

    #[test]
    fn percentile_on_all_equal_values() {
        let v = vec![7u64; 100];
        for p in 1..=100 {
            assert_eq!(percentile_nearest_rank(&v, p), Some(7));
        }
    }

    #[test]
    fn percentile_known_small_cases() {
        let v = [15, 20, 35, 40, 50];
        assert_eq!(percentile_nearest_rank(&v, 5), Some(15));
        assert_eq!(percentile_nearest_rank(&v, 30), Some(20));
        assert_eq!(percentile_nearest_rank(&v, 40), Some(20));
        assert_eq!(percentile_nearest_rank(&v, 50), Some(35));
        assert_eq!(percentile_nearest_rank(&v, 100), Some(50));
    }

    #[test]
    fn percentile_matches_sort_oracle_on_random_lists() {
        let mut r = rng::stream(21, "metrics-percentile-test");
        for _ in 0..1_000 {
            let n = 1 + rng::uniform_inclusive(&mut r, 400) as usize;
            let values: Vec<u64> =
                (0..n).map(|_| rng::uniform_inclusive(&mut r, 100_000)).collect();
            let p = 1 + rng::uniform_inclusive(&mut r, 99) as u32;
            assert_eq!(
                percentile_nearest_rank(&values, p),
                oracle::percentile_by_sort(&values, p),
                "n={n} p={p}"
            );
            let _ = r.next_u64();
        }
    }

    #[test]
    fn percentile_is_monotone_in_p() {
        let mut r = rng::stream(22, "metrics-monotone-test");
        for _ in 0..50 {
            let values: Vec<u64> =
                (0..60).map(|_| rng::uniform_inclusive(&mut r, 10_000)).collect();
            let mut last = 0;
            for p in 1..=100 {
                let v = percentile_nearest_rank(&values, p).unwrap();
                assert!(v >= last);
                last = v;
            }
        }
    }

    fn sample(uss: &str, op: &str, submit: u64, outcome_ms: u64, outcome: ScdOutcome) -> ScdSample {
        ScdSample {
            uss: String::from(uss),
            op: String::from(op),
            submit_ms: submit,
            outcome_ms,
            attempts: 1,
            outcome,
        }
    }

    #[test]
    fn pooling_concatenates_before_ranking() {
        let run1 = vec![sample("uss1", "a", 0, 100, ScdOutcome::Accepted)];
        let run2 = vec![
            sample("uss1", "b", 0, 300, ScdOutcome::Accepted),
            sample("uss2", "c", 0, 900, ScdOutcome::Accepted),
        ];
        let pooled = pooled_percentile([run1.as_slice(), run2.as_slice()], "uss1", 95);
        assert_eq!(pooled, Some(300));
        assert_eq!(pooled_percentile([run1.as_slice(), run2.as_slice()], "uss2", 95), Some(900));
        assert_eq!(pooled_percentile([run1.as_slice()], "uss3", 95), None);
    }

    #[test]
    fn acceptance_uses_final_outcome_per_run() {
        let run1 = vec![
            sample("uss1", "a", 0, 100, ScdOutcome::RetriesExhausted),
            sample("uss1", "a", 200, 300, ScdOutcome::Accepted),
        ];
        let run2 = vec![sample("uss1", "a", 0, 100, ScdOutcome::RejectedConflict)];
        let run3: Vec<ScdSample> = vec![];
        let tally = acceptance_tally([run1.as_slice(), run2.as_slice(), run3.as_slice()], "a");
        assert_eq!(tally, AcceptanceTally { accepted: 1, runs: 3 });
        assert!((tally.rate() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tally_merge_is_conservative() {
        let a = AcceptanceTally { accepted: 3, runs: 10 };
        let b = AcceptanceTally { accepted: 2, runs: 5 };
        assert_eq!(a.merge(&b), AcceptanceTally { accepted: 5, runs: 15 });
        assert_eq!(a.merge(&b), b.merge(&a));
    }
}
