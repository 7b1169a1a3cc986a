//! f-trajectory-balance training of a tabular policy with Adam.

use serde::{Deserialize, Serialize};

use crate::devgrad::{devgrad_batch_loss, DeltaBatch};
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::gfn::metrics::{jsd_distance, l1_distance, ModeTracker, RunMetrics};
use crate::gfn::policy::{BackwardMode, PolicyParams};
use crate::gfn::sampling::{sample_rng, sample_trajectory, BehaviorPolicy};
use crate::hypergrid::{Action, HypergridEnv, Trajectory};
use crate::loss::{loss, loss_deriv};
use crate::numeric::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `log Z` is a parameter trained by the same loss.
    #[default]
    LearnableZ,
    /// `log Z` is replaced by the batch-wise DevGrad estimate.
    Devgrad,
}

/// Linear annealing of the alpha parameter over the first `anneal_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: usize,
}

impl AlphaSchedule {
    pub fn alpha_at(&self, step: usize) -> f64 {
        if self.anneal_steps == 0 {
            return self.end;
        }
        let t = (step as f64 / self.anneal_steps as f64).min(1.0);
        self.start + (self.end - self.start) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: HypergridEnv,
    pub divergence: Divergence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_schedule: Option<AlphaSchedule>,
    #[serde(default)]
    pub behavior: BehaviorPolicy,
    #[serde(default)]
    pub backward: BackwardMode,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::log_z_lr_multiplier")]
    pub log_z_lr_multiplier: f64,
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn batch_size() -> usize {
        16
    }
    pub fn steps() -> usize {
        1000
    }
    pub fn lr() -> f64 {
        1e-2
    }
    pub fn log_z_lr_multiplier() -> f64 {
        10.0
    }
    pub fn eval_interval() -> usize {
        50
    }
}

impl TrainConfig {
    pub fn new(env: HypergridEnv, divergence: Divergence) -> Self {
        Self {
            env,
            divergence,
            alpha_schedule: None,
            behavior: BehaviorPolicy::default(),
            backward: BackwardMode::default(),
            normalization: Normalization::default(),
            batch_size: defaults::batch_size(),
            steps: defaults::steps(),
            lr: defaults::lr(),
            log_z_lr_multiplier: defaults::log_z_lr_multiplier(),
            eval_interval: defaults::eval_interval(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.behavior.validate()?;
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive")))
            }
        };
        positive("batch_size", self.batch_size > 0)?;
        positive("steps", self.steps > 0)?;
        positive("eval_interval", self.eval_interval > 0)?;
        positive("lr", self.lr.is_finite() && self.lr > 0.0)?;
        positive(
            "log_z_lr_multiplier",
            self.log_z_lr_multiplier.is_finite() && self.log_z_lr_multiplier > 0.0,
        )?;
        if self.batch_size > 1 << 24 {
            return Err(Error::Config(
                "batch_size exceeds the per-step stream budget".into(),
            ));
        }
        if let Some(s) = self.alpha_schedule {
            if !matches!(self.divergence, Divergence::Alpha(_)) {
                return Err(Error::Config(
                    "alpha_schedule requires an alpha divergence".into(),
                ));
            }
            if !(s.start.is_finite() && s.end.is_finite()) {
                return Err(Error::Config(
                    "alpha schedule endpoints must be finite".into(),
                ));
            }
        }
        if let Divergence::Alpha(a) = self.divergence {
            if !a.is_finite() {
                return Err(Error::Config("alpha must be finite".into()));
            }
        }
        Ok(())
    }

    /// Divergence in effect at `step`, following the alpha schedule if any.
    pub fn divergence_at(&self, step: usize) -> Divergence {
        match self.alpha_schedule {
            Some(s) => Divergence::alpha(s.alpha_at(step)),
            None => self.divergence,
        }
    }
}

/// The loss, deviations, weights and parameter gradient of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    /// The learned `log Z`, or the DevGrad estimate.
    pub log_z: f64,
    /// `Δ_i` including `log_z`.
    pub deltas: Vec<f64>,
    /// Per-sample coefficients `w_i`; the gradient is `(1/B) Σ w_i ∇Δ_i`.
    pub weights: Vec<f64>,
    pub forward: Vec<f64>,
    pub backward: Option<Vec<f64>>,
    pub log_z_grad: f64,
}

/// `Δ_i` without the `log Z` term.
fn raw_delta(
    params: &PolicyParams,
    env: &HypergridEnv,
    log_rewards: &[f64],
    t: &Trajectory,
) -> f64 {
    let f: f64 = t
        .states
        .iter()
        .zip(&t.actions)
        .map(|(&s, &a)| params.forward_log_prob(env, s, a))
        .sum();
    f - log_rewards[t.terminal()] - params.backward_logprob_unchecked(env, t)
}

/// Adds `coef · ∇_θ log π_F(τ)` and `-coef · ∇_φ log π_B(τ)` to the buffers.
fn accumulate(
    params: &PolicyParams,
    env: &HypergridEnv,
    t: &Trajectory,
    coef: f64,
    forward: &mut [f64],
    backward: Option<&mut Vec<f64>>,
    probs: &mut [f64],
) {
    let a = env.num_actions();
    let d = env.d();
    for (&s, &act) in t.states.iter().zip(&t.actions) {
        params.forward_probs(env, s, 1.0, probs);
        let taken = act.index(d);
        for (b, &p) in probs.iter().enumerate() {
            if p > 0.0 || b == taken {
                forward[s * a + b] += coef * ((b == taken) as u8 as f64 - p);
            }
        }
    }
    if let Some(back) = backward {
        for k in 1..t.states.len() {
            let s = t.states[k];
            let Action::Increment(i) = t.actions[k - 1] else {
                unreachable!("validated trajectory")
            };
            params.backward_probs(env, s, probs);
            for (j, &p) in probs.iter().enumerate().take(d) {
                if env.coord(s, j) > 0 {
                    back[s * d + j] -= coef * ((j == i) as u8 as f64 - p);
                }
            }
        }
    }
}

/// Batch loss and its analytic gradient.
///
/// With [`Normalization::LearnableZ`] the weights are `L_f'(Δ_i)` and `log Z`
/// receives `mean(w)`. With [`Normalization::Devgrad`] `log Z` is replaced by
/// the DevGrad estimate on the `log Z`-free deviations, held constant, and the
/// weights are the DevGrad weights.
pub fn batch_gradient(
    params: &PolicyParams,
    env: &HypergridEnv,
    log_rewards: &[f64],
    trajectories: &[Trajectory],
    div: Divergence,
    normalization: Normalization,
) -> Result<BatchGradient> {
    if trajectories.is_empty() {
        return Err(Error::InvalidBatch("no trajectories".into()));
    }
    for t in trajectories {
        env.validate(t)?;
    }
    let raw: Vec<f64> = trajectories
        .iter()
        .map(|t| raw_delta(params, env, log_rewards, t))
        .collect();
    let (loss_value, log_z, weights) = match normalization {
        Normalization::LearnableZ => {
            let deltas: Vec<f64> = raw.iter().map(|r| r + params.log_z).collect();
            let losses = deltas
                .iter()
                .map(|&d| loss(div, d))
                .collect::<Result<Vec<_>>>()?;
            let w = deltas
                .iter()
                .map(|&d| loss_deriv(div, d))
                .collect::<Result<Vec<_>>>()?;
            (mean(&losses), params.log_z, w)
        }
        Normalization::Devgrad => {
            let r = devgrad_batch_loss(div, &DeltaBatch::new(raw.clone())?)?;
            (r.loss, r.log_z_hat, r.weights)
        }
    };
    let b = trajectories.len() as f64;
    let mut forward = vec![0.0; params.forward_logits.len()];
    let mut backward = params.backward_logits.as_ref().map(|v| vec![0.0; v.len()]);
    let mut probs = vec![0.0; env.num_actions()];
    for (t, &w) in trajectories.iter().zip(&weights) {
        accumulate(
            params,
            env,
            t,
            w / b,
            &mut forward,
            backward.as_mut(),
            &mut probs,
        );
    }
    let log_z_grad = match normalization {
        Normalization::LearnableZ => mean(&weights),
        Normalization::Devgrad => 0.0,
    };
    Ok(BatchGradient {
        loss: loss_value,
        log_z,
        deltas: raw.iter().map(|r| r + log_z).collect(),
        weights,
        forward,
        backward,
        log_z_grad,
    })
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Loss, `log Z` and sampled terminal cells of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub log_z: f64,
    pub terminals: Vec<usize>,
}

/// Training state for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    params: PolicyParams,
    log_rewards: Vec<f64>,
    target: Option<Vec<f64>>,
    adam_forward: Adam,
    adam_backward: Option<Adam>,
    adam_log_z: Adam,
    modes: ModeTracker,
    step: usize,
    trajectories_seen: u64,
    trajectories_to_all_modes: Option<u64>,
    last_loss: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = &config.env;
        let params = PolicyParams::uniform(env, config.backward);
        let target = env.exact_target_distribution().ok();
        Ok(Self {
            log_rewards: env.log_rewards(),
            target,
            adam_forward: Adam::new(params.forward_logits.len()),
            adam_backward: params.backward_logits.as_ref().map(|b| Adam::new(b.len())),
            adam_log_z: Adam::new(1),
            modes: ModeTracker::new(env),
            params,
            step: 0,
            trajectories_seen: 0,
            trajectories_to_all_modes: None,
            last_loss: f64::NAN,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PolicyParams {
        &mut self.params
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn trajectories_seen(&self) -> u64 {
        self.trajectories_seen
    }

    pub fn trajectories_to_all_modes(&self) -> Option<u64> {
        self.trajectories_to_all_modes
    }

    pub fn modes_found(&self) -> usize {
        self.modes.found()
    }

    /// Draws the batch for the current step from the behavior policy.
    pub fn sample_batch(&self) -> Vec<Trajectory> {
        (0..self.config.batch_size as u64)
            .map(|i| {
                let mut rng = sample_rng(self.config.seed, self.step as u64, i);
                sample_trajectory(
                    &self.params,
                    &self.config.env,
                    self.config.behavior,
                    &mut rng,
                )
                .0
            })
            .collect()
    }

    /// Samples a batch, takes one Adam step and records mode discoveries.
    pub fn step(&mut self) -> Result<StepStats> {
        let batch = self.sample_batch();
        let div = self.config.divergence_at(self.step);
        let env = &self.config.env;
        let dump = |err: String, deltas: Option<&[f64]>| Error::NonFiniteGradient {
            step: self.step,
            dump: serde_json::json!({
                "error": err,
                "divergence": div.to_string(),
                "terminals": batch.iter().map(|t| env.coords(t.terminal())).collect::<Vec<_>>(),
                "deltas": deltas,
            })
            .to_string(),
        };
        let g = batch_gradient(
            &self.params,
            env,
            &self.log_rewards,
            &batch,
            div,
            self.config.normalization,
        )
        .map_err(|e| dump(e.to_string(), None))?;
        let finite = g.loss.is_finite()
            && g.log_z_grad.is_finite()
            && g.forward.iter().all(|x| x.is_finite())
            && g.backward
                .as_ref()
                .is_none_or(|b| b.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(dump("non-finite loss or gradient".into(), Some(&g.deltas)));
        }

        self.adam_forward
            .update(&mut self.params.forward_logits, &g.forward, self.config.lr);
        if let (Some(adam), Some(logits), Some(grad)) = (
            self.adam_backward.as_mut(),
            self.params.backward_logits.as_mut(),
            g.backward.as_ref(),
        ) {
            adam.update(logits, grad, self.config.lr);
        }
        match self.config.normalization {
            Normalization::LearnableZ => {
                let mut z = [self.params.log_z];
                self.adam_log_z.update(
                    &mut z,
                    &[g.log_z_grad],
                    self.config.lr * self.config.log_z_lr_multiplier,
                );
                self.params.log_z = z[0];
            }
            Normalization::Devgrad => self.params.log_z = g.log_z,
        }

        let terminals: Vec<usize> = batch.iter().map(|t| t.terminal()).collect();
        for &x in &terminals {
            self.trajectories_seen += 1;
            self.modes.observe(x);
            if self.trajectories_to_all_modes.is_none() && self.modes.all_found() {
                self.trajectories_to_all_modes = Some(self.trajectories_seen);
            }
        }
        self.step += 1;
        self.last_loss = g.loss;
        Ok(StepStats {
            loss: g.loss,
            log_z: g.log_z,
            terminals,
        })
    }

    /// Metrics for the current parameters. Distances are NaN when the grid is
    /// too large for exact evaluation.
    pub fn evaluate(&self) -> RunMetrics {
        let (l1, jsd) = match (
            &self.target,
            self.params.terminal_distribution(&self.config.env),
        ) {
            (Some(t), Ok(p)) => (l1_distance(&p, t), jsd_distance(&p, t)),
            _ => (f64::NAN, f64::NAN),
        };
        RunMetrics {
            step: self.step,
            trajectories_seen: self.trajectories_seen,
            loss: self.last_loss,
            log_z: self.params.log_z,
            l1,
            jsd,
            modes_found: self.modes.found(),
        }
    }

    /// Runs all configured steps, reporting metrics every `eval_interval`
    /// steps and after the last one.
    pub fn run<F: FnMut(&RunMetrics) -> Result<()>>(
        &mut self,
        mut on_eval: F,
    ) -> Result<RunMetrics> {
        let mut last = self.evaluate();
        while self.step < self.config.steps {
            self.step()?;
            if self.step % self.config.eval_interval == 0 || self.step == self.config.steps {
                last = self.evaluate();
                on_eval(&last)?;
            }
        }
        Ok(last)
    }
}
