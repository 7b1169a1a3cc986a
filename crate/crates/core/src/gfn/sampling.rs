//! Trajectory sampling under on- and off-policy behavior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfn::policy::PolicyParams;
use crate::hypergrid::{Action, HypergridEnv, Trajectory};

/// Distribution the training trajectories are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BehaviorPolicy {
    #[default]
    OnPolicy,
    /// Each action is uniform over the legal actions with probability `epsilon`.
    EpsUniform { epsilon: f64 },
    /// Forward logits divided by `temperature`.
    Tempered { temperature: f64 },
}

impl BehaviorPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BehaviorPolicy::OnPolicy => Ok(()),
            BehaviorPolicy::EpsUniform { epsilon } if (0.0..=1.0).contains(&epsilon) => Ok(()),
            BehaviorPolicy::Tempered { temperature }
                if temperature.is_finite() && temperature > 0.0 =>
            {
                Ok(())
            }
            other => Err(Error::Config(format!("invalid behavior policy {other:?}"))),
        }
    }
}

/// The generator for sample `index` of training step `step`.
///
/// The key comes from the run seed and the ChaCha stream id packs
/// `(step, index)` as `step << 24 | index`, so every sample owns an
/// independent stream and batches are reproducible regardless of how the
/// sampling work is scheduled.
pub fn sample_rng(seed: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step << 24) | (index & 0xff_ffff));
    rng
}

/// Draws a complete trajectory and returns it with its log-probability under
/// the behavior policy.
pub fn sample_trajectory<R: Rng>(
    params: &PolicyParams,
    env: &HypergridEnv,
    behavior: BehaviorPolicy,
    rng: &mut R,
) -> (Trajectory, f64) {
    let d = env.d();
    let mut probs = vec![0.0; d + 1];
    let mut s = env.initial();
    let mut states = vec![s];
    let mut actions = Vec::new();
    let mut log_mu = 0.0;
    loop {
        let temperature = match behavior {
            BehaviorPolicy::Tempered { temperature } => temperature,
            _ => 1.0,
        };
        params.forward_probs(env, s, temperature, &mut probs);
        if let BehaviorPolicy::EpsUniform { epsilon } = behavior {
            let n_legal = (0..d).filter(|&i| env.can_increment(s, i)).count() + 1;
            for (i, p) in probs.iter_mut().enumerate() {
                let is_legal = i == d || env.can_increment(s, i);
                let u = if is_legal { 1.0 / n_legal as f64 } else { 0.0 };
                *p = (1.0 - epsilon) * *p + epsilon * u;
            }
        }
        let x: f64 = rng.random();
        let mut acc = 0.0;
        // if rounding leaves x above the last cumulative sum, terminate (always legal)
        let mut choice = d;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if x < acc && p > 0.0 {
                choice = i;
                break;
            }
        }
        log_mu += probs[choice].ln();
        let action = Action::from_index(choice, d);
        actions.push(action);
        if action == Action::Terminate {
            break;
        }
        s = env.child(s, choice);
        states.push(s);
    }
    (Trajectory { states, actions }, log_mu)
}
