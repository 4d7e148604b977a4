//! Directed network links: latency, uniform jitter, fault injection, and
//! FIFO delivery.
//!
//! A link decides, per send, whether the message is lost and when it
//! arrives. Delivery order is FIFO: a message never arrives before one
//! sent earlier on the same link, even when jitter would reorder them.
//! Each link draws from its own random stream, so links never perturb
//! each other and results are reproducible per seed.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{bernoulli, uniform_inclusive};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub base_latency_ms: u64,
    /// Extra delay drawn uniformly from `0..=jitter_ms` per send.
    pub jitter_ms: u64,
    /// Probability that a send is lost outright.
    pub failure_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkProfileError(pub String);

impl fmt::Display for LinkProfileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid link profile: {}", self.0)
    }
}

impl LinkProfile {
    pub fn fixed(base_latency_ms: u64) -> Self {
        LinkProfile { base_latency_ms, jitter_ms: 0, failure_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<(), LinkProfileError> {
        if !self.failure_prob.is_finite() || !(0.0..=1.0).contains(&self.failure_prob) {
            return Err(LinkProfileError(String::from("failure_prob must be within [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Delivered { at_ms: u64 },
    Failed,
}

/// One send attempt as it appears in the traffic log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub send_ms: u64,
    /// Absent when the send was lost.
    pub delivered_ms: Option<u64>,
    pub kind: String,
    /// Coarse payload size bucket, see [`size_class`].
    pub size_class: u8,
}

impl TrafficRecord {
    /// One-line text form: `send_ms, deliver_ms|FAILED, src, dst, kind`.
    pub fn summary_line(&self, src: &str, dst: &str) -> String {
        let delivered = match self.delivered_ms {
            Some(ms) => alloc::format!("{ms}"),
            None => String::from("FAILED"),
        };
        alloc::format!("{}, {}, {}, {}, {}", self.send_ms, delivered, src, dst, self.kind)
    }
}

/// Payload size bucket: 0 for at most one item, 1 for small batches,
/// 2 for large ones. Latency does not depend on it; it only annotates the
/// traffic log.
pub fn size_class(n_items: usize) -> u8 {
    match n_items {
        0 | 1 => 0,
        2..=8 => 1,
        _ => 2,
    }
}

#[derive(Debug, Clone)]
pub struct Link {
    profile: LinkProfile,
    rng: ChaCha8Rng,
    last_delivery_ms: u64,
    log: Vec<TrafficRecord>,
}

impl Link {
    /// `rng` should be this link's dedicated stream (see [`crate::rng`]).
    pub fn new(profile: LinkProfile, rng: ChaCha8Rng) -> Self {
        Link { profile, rng, last_delivery_ms: 0, log: Vec::new() }
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    /// Swaps the profile; applies to every subsequent send. The engine
    /// orders a reconfiguration before dynamic sends at the same instant.
    pub fn reconfigure(&mut self, profile: LinkProfile) {
        self.profile = profile;
    }

    pub fn send(&mut self, now_ms: u64, kind: &str, size_class: u8) -> SendOutcome {
        if bernoulli(&mut self.rng, self.profile.failure_prob) {
            self.log.push(TrafficRecord {
                send_ms: now_ms,
                delivered_ms: None,
                kind: String::from(kind),
                size_class,
            });
            return SendOutcome::Failed;
        }
        let jitter = uniform_inclusive(&mut self.rng, self.profile.jitter_ms);
        let raw = now_ms + self.profile.base_latency_ms + jitter;
        let at_ms = raw.max(self.last_delivery_ms);
        self.last_delivery_ms = at_ms;
        self.log.push(TrafficRecord {
            send_ms: now_ms,
            delivered_ms: Some(at_ms),
            kind: String::from(kind),
            size_class,
        });
        SendOutcome::Delivered { at_ms }
    }

    pub fn log(&self) -> &[TrafficRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<TrafficRecord> {
        core::mem::take(&mut self.log)
    }
}
