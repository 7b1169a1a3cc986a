//! Tabular softmax forward and backward policies over the hypergrid DAG.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergrid::{Action, HypergridEnv, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardMode {
    #[default]
    Uniform,
    Learnable,
}

/// Forward logits (`S × (D+1)`, masked to legal actions), the scalar `log Z`
/// and, for a learnable backward policy, logits over parents (`S × D`, entry
/// `i` scoring the parent reached by decrementing coordinate `i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub forward_logits: Vec<f64>,
    pub log_z: f64,
    pub backward_logits: Option<Vec<f64>>,
}

impl PolicyParams {
    /// Uniform forward policy, `log Z = 0`, uniform backward logits if learnable.
    pub fn uniform(env: &HypergridEnv, backward: BackwardMode) -> Self {
        Self {
            forward_logits: vec![0.0; env.num_states() * env.num_actions()],
            log_z: 0.0,
            backward_logits: match backward {
                BackwardMode::Uniform => None,
                BackwardMode::Learnable => Some(vec![0.0; env.num_states() * env.d()]),
            },
        }
    }

    pub fn backward_mode(&self) -> BackwardMode {
        if self.backward_logits.is_some() {
            BackwardMode::Learnable
        } else {
            BackwardMode::Uniform
        }
    }

    pub fn check_shape(&self, env: &HypergridEnv) -> Result<()> {
        let ok_f = self.forward_logits.len() == env.num_states() * env.num_actions();
        let ok_b = self
            .backward_logits
            .as_ref()
            .is_none_or(|b| b.len() == env.num_states() * env.d());
        if ok_f && ok_b && self.log_z.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(
                "policy parameters do not match the environment".into(),
            ))
        }
    }

    /// Forward action probabilities at cell `s`, written into `out`
    /// (length `D+1`); illegal actions get exactly 0.
    pub fn forward_probs(&self, env: &HypergridEnv, s: usize, temperature: f64, out: &mut [f64]) {
        let a = env.num_actions();
        let logits = &self.forward_logits[s * a..(s + 1) * a];
        let d = env.d();
        let legal = |i: usize| i == d || env.can_increment(s, i);
        let max = (0..a)
            .filter(|&i| legal(i))
            .map(|i| logits[i] / temperature)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..a {
            out[i] = if legal(i) {
                (logits[i] / temperature - max).exp()
            } else {
                0.0
            };
            total += out[i];
        }
        for p in out.iter_mut() {
            *p /= total;
        }
    }

    /// Log-probability of `action` at `s` under the forward policy.
    pub fn forward_log_prob(&self, env: &HypergridEnv, s: usize, action: Action) -> f64 {
        let a = env.num_actions();
        let logits = &self.forward_logits[s * a..(s + 1) * a];
        let d = env.d();
        let legal: Vec<usize> = (0..a)
            .filter(|&i| i == d || env.can_increment(s, i))
            .collect();
        let max = legal
            .iter()
            .map(|&i| logits[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + legal
                .iter()
                .map(|&i| (logits[i] - max).exp())
                .sum::<f64>()
                .ln();
        logits[action.index(d)] - lse
    }

    /// Backward probabilities over the parents of `s` (indexed by the
    /// decremented coordinate; 0 where the coordinate is already 0).
    pub fn backward_probs(&self, env: &HypergridEnv, s: usize, out: &mut [f64]) {
        let d = env.d();
        let has = |i: usize| env.coord(s, i) > 0;
        match &self.backward_logits {
            None => {
                let n = env.num_parents(s) as f64;
                for (i, o) in out.iter_mut().enumerate().take(d) {
                    *o = if has(i) { 1.0 / n } else { 0.0 };
                }
            }
            Some(b) => {
                let logits = &b[s * d..(s + 1) * d];
                let max = (0..d)
                    .filter(|&i| has(i))
                    .map(|i| logits[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..d {
                    out[i] = if has(i) { (logits[i] - max).exp() } else { 0.0 };
                    total += out[i];
                }
                for o in out.iter_mut().take(d) {
                    *o /= total;
                }
            }
        }
    }

    /// `log π_F(τ)`: the sum of forward log-probabilities along `traj`.
    pub fn forward_trajectory_logprob(&self, env: &HypergridEnv, traj: &Trajectory) -> Result<f64> {
        env.validate(traj)?;
        Ok(traj
            .states
            .iter()
            .zip(&traj.actions)
            .map(|(&s, &a)| self.forward_log_prob(env, s, a))
            .sum())
    }

    /// `log π_B(τ | x)`: the sum over non-initial visited cells of the
    /// log-probability of stepping back to the previous cell.
    pub fn backward_trajectory_logprob(
        &self,
        env: &HypergridEnv,
        traj: &Trajectory,
    ) -> Result<f64> {
        env.validate(traj)?;
        Ok(self.backward_logprob_unchecked(env, traj))
    }

    pub(crate) fn backward_logprob_unchecked(&self, env: &HypergridEnv, traj: &Trajectory) -> f64 {
        let mut buf = vec![0.0; env.d()];
        let mut total = 0.0;
        for k in 1..traj.states.len() {
            let s = traj.states[k];
            let Action::Increment(i) = traj.actions[k - 1] else {
                unreachable!("validated trajectory")
            };
            match self.backward_logits {
                None => total -= (env.num_parents(s) as f64).ln(),
                Some(_) => {
                    self.backward_probs(env, s, &mut buf);
                    total += buf[i].ln();
                }
            }
        }
        total
    }

    /// `Δ(τ) = log Z + log π_F(τ) - log R(x) - log π_B(τ|x)`.
    pub fn trajectory_delta(&self, env: &HypergridEnv, traj: &Trajectory) -> Result<f64> {
        let f = self.forward_trajectory_logprob(env, traj)?;
        let b = self.backward_logprob_unchecked(env, traj);
        Ok(self.log_z + f - env.reward_at(traj.terminal()).ln() - b)
    }

    /// Exact terminal distribution `π_F(x) = Σ_{τ→x} π_F(τ)` by forward flow
    /// accumulation in topological order; indexed by flat cell index.
    pub fn terminal_distribution(&self, env: &HypergridEnv) -> Result<Vec<f64>> {
        env.check_exact_cap()?;
        let n = env.num_states();
        let d = env.d();
        let mut inflow = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut probs = vec![0.0; d + 1];
        inflow[0] = 1.0;
        for s in 0..n {
            if inflow[s] == 0.0 {
                continue;
            }
            self.forward_probs(env, s, 1.0, &mut probs);
            p[s] = inflow[s] * probs[d];
            for (i, &pi) in probs.iter().enumerate().take(d) {
                if pi > 0.0 {
                    inflow[env.child(s, i)] += inflow[s] * pi;
                }
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn env2() -> HypergridEnv {
        HypergridEnv::new(2, 2, 1e-3).unwrap()
    }

    fn via_10_to_11(env: &HypergridEnv) -> Trajectory {
        env.trajectory_from_actions(&[
            Action::Increment(0),
            Action::Increment(1),
            Action::Terminate,
        ])
        .unwrap()
    }

    #[test]
    fn forward_logprob_examples() {
        let env = env2();
        let p = PolicyParams::uniform(&env, BackwardMode::Uniform);
        let stop = env.trajectory_from_actions(&[Action::Terminate]).unwrap();
        assert!(
            (p.forward_trajectory_logprob(&env, &stop).unwrap() - (1.0f64 / 3.0).ln()).abs()
                < 1e-15
        );
        let t = via_10_to_11(&env);
        assert!(
            (p.forward_trajectory_logprob(&env, &t).unwrap() - (1.0f64 / 6.0).ln()).abs() < 1e-15
        );
        let empty = Trajectory {
            states: vec![0],
            actions: vec![],
        };
        assert!(p.forward_trajectory_logprob(&env, &empty).is_err());
    }

    #[test]
    fn backward_logprob_examples() {
        let env = env2();
        let t = via_10_to_11(&env);
        let u = PolicyParams::uniform(&env, BackwardMode::Uniform);
        assert!((u.backward_trajectory_logprob(&env, &t).unwrap() + LN_2).abs() < 1e-15);
        let stop = env.trajectory_from_actions(&[Action::Terminate]).unwrap();
        assert_eq!(u.backward_trajectory_logprob(&env, &stop).unwrap(), 0.0);
        let l = PolicyParams::uniform(&env, BackwardMode::Learnable);
        for t in env.enumerate_trajectories().unwrap() {
            let a = u.backward_trajectory_logprob(&env, &t).unwrap();
            let b = l.backward_trajectory_logprob(&env, &t).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_examples() {
        let env = env2();
        let mut p = PolicyParams::uniform(&env, BackwardMode::Uniform);
        p.log_z = 2.004f64.ln();
        let stop = env.trajectory_from_actions(&[Action::Terminate]).unwrap();
        let expected = (4.0f64 / 3.0).ln();
        assert!((p.trajectory_delta(&env, &stop).unwrap() - expected).abs() < 1e-12);
        assert!((p.trajectory_delta(&env, &via_10_to_11(&env)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn terminal_distribution_examples() {
        let env = env2();
        let p = PolicyParams::uniform(&env, BackwardMode::Uniform);
        let d = p.terminal_distribution(&env).unwrap();
        let want = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut stop = p.clone();
        for s in 0..env.num_states() {
            stop.forward_logits[s * 3 + 2] = 800.0;
        }
        let d = stop.terminal_distribution(&env).unwrap();
        assert_eq!(d[0], 1.0);
    }

    #[test]
    fn terminal_distribution_matches_enumeration() {
        let env = HypergridEnv::new(2, 4, 0.1).unwrap();
        let mut p = PolicyParams::uniform(&env, BackwardMode::Uniform);
        for (i, l) in p.forward_logits.iter_mut().enumerate() {
            *l = ((i * 37 % 11) as f64 - 5.0) / 3.0;
        }
        let dp = p.terminal_distribution(&env).unwrap();
        let mut en = vec![0.0; env.num_states()];
        for t in env.enumerate_trajectories().unwrap() {
            en[t.terminal()] += p.forward_trajectory_logprob(&env, &t).unwrap().exp();
        }
        for (a, b) in dp.iter().zip(&en) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((dp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
