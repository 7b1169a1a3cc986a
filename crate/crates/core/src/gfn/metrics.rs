//! Distances to the target distribution and mode discovery.

use serde::{Deserialize, Serialize};

use crate::hypergrid::HypergridEnv;

/// One metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub step: usize,
    pub trajectories_seen: u64,
    pub loss: f64,
    pub log_z: f64,
    pub l1: f64,
    pub jsd: f64,
    pub modes_found: usize,
}

/// `Σ_x |p(x) - q(x)|`.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Jensen–Shannon divergence in nats.
pub fn jsd_distance(p: &[f64], q: &[f64]) -> f64 {
    let kl_to_mid = |a: f64, b: f64| {
        if a > 0.0 {
            a * (2.0 * a / (a + b)).ln()
        } else {
            0.0
        }
    };
    let v: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| kl_to_mid(a, b) + kl_to_mid(b, a))
        .sum();
    (0.5 * v).max(0.0)
}

/// Tracks which mode regions have been hit by sampled terminal cells.
#[derive(Debug, Clone)]
pub struct ModeTracker {
    labels: Vec<Option<usize>>,
    found: Vec<bool>,
    count: usize,
}

impl ModeTracker {
    pub fn new(env: &HypergridEnv) -> Self {
        let (labels, n) = env.mode_regions();
        Self {
            labels,
            found: vec![false; n],
            count: 0,
        }
    }

    pub fn observe(&mut self, cell: usize) {
        if let Some(r) = self.labels[cell] {
            if !self.found[r] {
                self.found[r] = true;
                self.count += 1;
            }
        }
    }

    pub fn found(&self) -> usize {
        self.count
    }

    pub fn regions(&self) -> usize {
        self.found.len()
    }

    pub fn all_found(&self) -> bool {
        self.count == self.found.len()
    }
}
