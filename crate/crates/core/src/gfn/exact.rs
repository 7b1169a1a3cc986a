//! Exact expectations by trajectory enumeration on small grids.
//!
//! With `P(τ) = π_F(τ)` and the unnormalized `Q(τ) = R(x) π_B(τ|x) / Z`, so
//! that `Δ = log P - log Q`:
//!
//! * `∇_θ D_f(P‖Q) = Σ_τ P f'(P/Q) ∇_θ log π_F(τ)`, the target of the
//!   on-policy forward surrogate `E_P[L_f'(Δ) ∇_θ Δ]`;
//! * `∇_φ D_h(Q‖P) = Σ_τ Q h'(Q/P) ∇_φ log π_B(τ)` with the backward generator
//!   `h`, the target of `E_Q[∇_φ L_f(Δ)]`.
//!
//! The score gradients here are computed by a separate routine from the
//! trainer's, from the generator rather than the loss.

use crate::divergence::Divergence;
use crate::error::Result;
use crate::gfn::policy::PolicyParams;
use crate::gfn::sampling::{sample_rng, sample_trajectory, BehaviorPolicy};
use crate::gfn::train::{batch_gradient, Normalization};
use crate::hypergrid::{Action, HypergridEnv, Trajectory};
use crate::loss::loss_deriv;
use crate::numeric::KahanSum;

fn log_softmax_grad(
    logits: &[f64],
    legal: &[bool],
    taken: usize,
    out: &mut [f64],
    coef: f64,
) -> f64 {
    let max = logits
        .iter()
        .zip(legal)
        .filter(|(_, &l)| l)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits
        .iter()
        .zip(legal)
        .filter(|(_, &l)| l)
        .map(|(&x, _)| (x - max).exp())
        .sum();
    for i in 0..logits.len() {
        if legal[i] {
            let p = (logits[i] - max).exp() / z;
            out[i] += coef * (if i == taken { 1.0 } else { 0.0 } - p);
        }
    }
    logits[taken] - max - z.ln()
}

/// `log π_F(τ)` and `∇_θ log π_F(τ)` (dense over the forward logits).
pub fn forward_score(params: &PolicyParams, env: &HypergridEnv, t: &Trajectory) -> (f64, Vec<f64>) {
    let a = env.num_actions();
    let mut grad = vec![0.0; params.forward_logits.len()];
    let mut lp = 0.0;
    for (&s, &act) in t.states.iter().zip(&t.actions) {
        let legal: Vec<bool> = (0..a)
            .map(|i| i == env.d() || env.coord(s, i) + 1 < env.h())
            .collect();
        lp += log_softmax_grad(
            &params.forward_logits[s * a..(s + 1) * a],
            &legal,
            act.index(env.d()),
            &mut grad[s * a..(s + 1) * a],
            1.0,
        );
    }
    (lp, grad)
}

/// `log π_B(τ|x)` and `∇_φ log π_B(τ|x)`; the gradient is empty for a
/// uniform backward policy.
pub fn backward_score(
    params: &PolicyParams,
    env: &HypergridEnv,
    t: &Trajectory,
) -> (f64, Vec<f64>) {
    let d = env.d();
    let Some(logits) = &params.backward_logits else {
        let lp = t.states[1..]
            .iter()
            .map(|&s| -((0..d).filter(|&i| env.coord(s, i) > 0).count() as f64).ln())
            .sum();
        return (lp, Vec::new());
    };
    let mut grad = vec![0.0; logits.len()];
    let mut lp = 0.0;
    for k in 1..t.states.len() {
        let s = t.states[k];
        let Action::Increment(i) = t.actions[k - 1] else {
            unreachable!("increments precede the final terminate")
        };
        let legal: Vec<bool> = (0..d).map(|j| env.coord(s, j) > 0).collect();
        lp += log_softmax_grad(
            &logits[s * d..(s + 1) * d],
            &legal,
            i,
            &mut grad[s * d..(s + 1) * d],
            1.0,
        );
    }
    (lp, grad)
}

struct Term {
    log_p: f64,
    log_q: f64,
    d_log_pf: Vec<f64>,
    d_log_pb: Vec<f64>,
    traj: Trajectory,
}

fn terms(params: &PolicyParams, env: &HypergridEnv) -> Result<Vec<Term>> {
    Ok(env
        .enumerate_trajectories()?
        .into_iter()
        .map(|t| {
            let (log_p, d_log_pf) = forward_score(params, env, &t);
            let (log_b, d_log_pb) = backward_score(params, env, &t);
            let log_q = env.reward_at(t.terminal()).ln() + log_b - params.log_z;
            Term {
                log_p,
                log_q,
                d_log_pf,
                d_log_pb,
                traj: t,
            }
        })
        .collect())
}

fn add_scaled(acc: &mut [KahanSum], v: &[f64], c: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        if *x != 0.0 {
            a.add(c * x);
        }
    }
}

fn values(acc: &[KahanSum]) -> Vec<f64> {
    acc.iter().map(|k| k.value()).collect()
}

/// `D_f(P‖Q) = Σ_τ Q f(P/Q)`.
pub fn forward_divergence(
    params: &PolicyParams,
    env: &HypergridEnv,
    div: Divergence,
) -> Result<f64> {
    let mut s = KahanSum::new();
    for t in terms(params, env)? {
        let u = (t.log_p - t.log_q).exp();
        s.add(t.log_q.exp() * div.generator(u)?.f);
    }
    Ok(s.value())
}

/// Exact `∇_θ D_f(P‖Q)` over the forward logits.
pub fn forward_divergence_gradient(
    params: &PolicyParams,
    env: &HypergridEnv,
    div: Divergence,
) -> Result<Vec<f64>> {
    let mut acc = vec![KahanSum::new(); params.forward_logits.len()];
    for t in terms(params, env)? {
        let u = (t.log_p - t.log_q).exp();
        add_scaled(&mut acc, &t.d_log_pf, t.log_p.exp() * div.generator(u)?.f1);
    }
    Ok(values(&acc))
}

/// `E_P[L_f'(Δ) ∇_θ Δ]` over the forward logits, evaluating each
/// trajectory's gradient with the trainer's single-sample batch gradient.
pub fn expected_forward_surrogate(
    params: &PolicyParams,
    env: &HypergridEnv,
    div: Divergence,
) -> Result<Vec<f64>> {
    let log_rewards = env.log_rewards();
    let mut acc = vec![KahanSum::new(); params.forward_logits.len()];
    for t in terms(params, env)? {
        let g = batch_gradient(
            params,
            env,
            &log_rewards,
            std::slice::from_ref(&t.traj),
            div,
            Normalization::LearnableZ,
        )?;
        add_scaled(&mut acc, &g.forward, t.log_p.exp());
    }
    Ok(values(&acc))
}

/// `D_h(Q‖P) = Σ_τ P h(Q/P)` with the backward generator `h`.
pub fn backward_divergence(
    params: &PolicyParams,
    env: &HypergridEnv,
    div: Divergence,
) -> Result<f64> {
    let mut s = KahanSum::new();
    for t in terms(params, env)? {
        let v = (t.log_q - t.log_p).exp();
        s.add(t.log_p.exp() * div.backward_generator(v)?.h);
    }
    Ok(s.value())
}

/// Exact `∇_φ D_h(Q‖P)` over the backward logits.
pub fn backward_divergence_gradient(
    params: &PolicyParams,
    env: &HypergridEnv,
    div: Divergence,
) -> Result<Vec<f64>> {
    let n = params.backward_logits.as_ref().map_or(0, Vec::len);
    let mut acc = vec![KahanSum::new(); n];
    for t in terms(params, env)? {
        let v = (t.log_q - t.log_p).exp();
        add_scaled(
            &mut acc,
            &t.d_log_pb,
            t.log_q.exp() * div.backward_generator(v)?.h1,
        );
    }
    Ok(values(&acc))
}

/// `E_Q[∇_φ L_f(Δ)]` over the backward logits (`Q` unnormalized), using the
/// trainer's single-sample batch gradient.
pub fn expected_backward_surrogate(
    params: &PolicyParams,
    env: &HypergridEnv,
    div: Divergence,
) -> Result<Vec<f64>> {
    let log_rewards = env.log_rewards();
    let n = params.backward_logits.as_ref().map_or(0, Vec::len);
    let mut acc = vec![KahanSum::new(); n];
    for t in terms(params, env)? {
        let g = batch_gradient(
            params,
            env,
            &log_rewards,
            std::slice::from_ref(&t.traj),
            div,
            Normalization::LearnableZ,
        )?;
        if let Some(b) = &g.backward {
            add_scaled(&mut acc, b, t.log_q.exp());
        }
    }
    Ok(values(&acc))
}

/// Trace of the covariance of per-sample gradient estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComparison {
    /// Weights `f'(u) - 1 = L_f'(Δ)`.
    pub f_tb: f64,
    /// Raw score-function weights `f'(u)`.
    pub score_function: f64,
}

/// Per-sample gradient-norm variance of `w(u) ∇_θ log π_F(τ)` over `n`
/// on-policy samples, with `u = e^Δ` at the current `log Z`.
pub fn gradient_variance(
    params: &PolicyParams,
    env: &HypergridEnv,
    div: Divergence,
    n: usize,
    seed: u64,
) -> Result<VarianceComparison> {
    let dim = params.forward_logits.len();
    let mut mean_tb = vec![0.0; dim];
    let mut mean_sf = vec![0.0; dim];
    let (mut sq_tb, mut sq_sf) = (0.0, 0.0);
    for i in 0..n as u64 {
        let mut rng = sample_rng(seed, u64::MAX >> 24, i);
        let (t, _) = sample_trajectory(params, env, BehaviorPolicy::OnPolicy, &mut rng);
        let delta = params.trajectory_delta(env, &t)?;
        let w_tb = loss_deriv(div, delta)?;
        let w_sf = div.generator_deriv(delta.exp())?;
        let (_, score) = forward_score(params, env, &t);
        let norm2: f64 = score.iter().map(|x| x * x).sum();
        sq_tb += w_tb * w_tb * norm2;
        sq_sf += w_sf * w_sf * norm2;
        for (j, &x) in score.iter().enumerate() {
            if x != 0.0 {
                mean_tb[j] += w_tb * x;
                mean_sf[j] += w_sf * x;
            }
        }
    }
    let nf = n as f64;
    let trace = |sq: f64, m: &[f64]| sq / nf - m.iter().map(|x| (x / nf).powi(2)).sum::<f64>();
    Ok(VarianceComparison {
        f_tb: trace(sq_tb, &mean_tb),
        score_function: trace(sq_sf, &mean_sf),
    })
}
