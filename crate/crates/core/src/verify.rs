//! Verification suites: numeric checks of the loss family against its
//! oracles, reported as `{name, pass, max_err, tolerance}` rows.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::devgrad::{estimate_log_z, estimate_log_z_generic, gradient_weights, DeltaBatch};
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::gfn::exact::{
    backward_divergence_gradient, expected_backward_surrogate, expected_forward_surrogate,
    forward_divergence_gradient, gradient_variance,
};
use crate::gfn::{
    sample_rng, BackwardMode, BehaviorPolicy, Normalization, PolicyParams, TrainConfig, Trainer,
};
use crate::hypergrid::HypergridEnv;
use crate::llm::{llm_devgrad, CompletionBatch};
use crate::loss::{loss, loss_deriv, loss_numeric, InverseGenerator};
use crate::numeric::{bisect_increasing, mean};

pub const DELTA_GRID: [f64; 7] = [-5.0, -2.0, -0.5, 0.0, 0.5, 2.0, 5.0];
pub const CLOSED_FORM_TOL: f64 = 1e-8;
pub const FORWARD_GRADIENT_TOL: f64 = 1e-8;
pub const BACKWARD_GRADIENT_TOL: f64 = 1e-6;
pub const INVERSE_TOL: f64 = 1e-5;
pub const SQUARE_INVERSE_TOL: f64 = 1e-6;
pub const ZERO_SUM_TOL: f64 = 1e-9;
pub const LOG_Z_TOL: f64 = 1e-8;
pub const KIMI_TOL: f64 = 1e-12;
pub const CURVATURE_ROOT_TOL: f64 = 1e-6;
/// A policy counts as converged for the variance comparison below this l1.
pub const CONVERGED_L1: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub max_err: f64,
    pub tolerance: f64,
}

impl Check {
    /// Passes when `max_err <= tolerance` (a NaN error fails).
    pub fn within(name: impl Into<String>, max_err: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            pass: max_err <= tolerance,
            max_err,
            tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} max_err={:.3e} tolerance={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_err,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Losses,
    Devgrad,
    Gradients,
    Inverse,
    Variance,
    All,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Losses => "losses",
            Suite::Devgrad => "devgrad",
            Suite::Gradients => "gradients",
            Suite::Inverse => "inverse",
            Suite::Variance => "variance",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Suite::Losses,
            Suite::Devgrad,
            Suite::Gradients,
            Suite::Inverse,
            Suite::Variance,
            Suite::All,
        ]
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown suite {s:?}")))
    }
}

/// The seven named divergences followed by the alpha family at
/// `α ∈ {0, 0.5, 0.75, 1, 1.2, 2}`. The endpoints are left unsnapped so the
/// limiting branches of the alpha formulas are exercised.
pub fn catalog() -> Vec<Divergence> {
    let mut v = vec![
        Divergence::ReverseKl,
        Divergence::ForwardKl,
        Divergence::Pearson,
        Divergence::Neyman,
        Divergence::Hellinger,
        Divergence::TotalVariation,
        Divergence::Jsd,
    ];
    v.extend([0.0, 0.5, 0.75, 1.0, 1.2, 2.0].map(Divergence::Alpha));
    v
}

pub fn strictly_convex_catalog() -> Vec<Divergence> {
    catalog()
        .into_iter()
        .filter(Divergence::is_strictly_convex)
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Closed-form loss against quadrature of the generator on [`DELTA_GRID`].
pub fn check_closed_form(div: Divergence) -> Result<Check> {
    let mut err: f64 = 0.0;
    for &d in &DELTA_GRID {
        err = err.max((loss(div, d)? - loss_numeric(div, d)?).abs());
    }
    Ok(Check::within(
        format!("closed_form_vs_quadrature/{div}"),
        err,
        CLOSED_FORM_TOL,
    ))
}

fn random_batch<R: Rng>(rng: &mut R, b: usize) -> DeltaBatch {
    let offset = rng.random_range(-50.0..50.0);
    let spread = rng.random_range(0.01..5.0);
    DeltaBatch::new(
        (0..b)
            .map(|_| offset + spread * rng.random_range(-1.0..1.0))
            .collect(),
    )
    .expect("finite deltas")
}

/// Zero-sum weights and agreement of the closed-form `Ẑ` with the generic
/// minimizer over `batches` random batches of sizes 2, 4, 16 and 256.
///
/// For total variation the minimizer set is an interval when `B` is even, so
/// the objective values are compared instead of the arguments.
pub fn check_devgrad(div: Divergence, batches: usize, seed: u64) -> Result<[Check; 2]> {
    let mut rng = sample_rng(seed, 0, 0);
    let (mut sum_err, mut z_err): (f64, f64) = (0.0, 0.0);
    for i in 0..batches {
        let b = [2, 4, 16, 256][i % 4];
        let batch = random_batch(&mut rng, b);
        let w = gradient_weights(div, &batch)?;
        sum_err = sum_err.max(w.iter().sum::<f64>().abs() / b as f64);
        let z = estimate_log_z(div, &batch)?;
        let g = estimate_log_z_generic(div, &batch)?;
        let e = if div.canonical() == Divergence::TotalVariation {
            let objective = |c: f64| {
                mean(
                    &batch
                        .as_slice()
                        .iter()
                        .map(|x| (x + c).abs())
                        .collect::<Vec<_>>(),
                )
            };
            (objective(z) - objective(g)).abs()
        } else {
            (z - g).abs()
        };
        z_err = z_err.max(e);
    }
    Ok([
        Check::within(format!("devgrad_zero_sum/{div}"), sum_err, ZERO_SUM_TOL),
        Check::within(format!("devgrad_log_z_optimal/{div}"), z_err, LOG_Z_TOL),
    ])
}

fn random_completions<R: Rng>(rng: &mut R, b: usize, on_reference: bool) -> CompletionBatch {
    let log_ref: Vec<f64> = (0..b).map(|_| rng.random_range(-60.0..-1.0)).collect();
    let log_pi = if on_reference {
        log_ref.clone()
    } else {
        log_ref
            .iter()
            .map(|x| x + rng.random_range(-2.0..2.0))
            .collect()
    };
    let reward = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
    CompletionBatch::new(log_pi, log_ref, reward).expect("finite batch")
}

/// Tempered reverse-KL DevGrad loss against `Var(β log-ratio - r) / (2β)`
/// (relative error), and bitwise agreement of the mean-reward shortcut with
/// the exact path when `π_θ = π_ref`.
pub fn check_kimi(batches: usize, seed: u64) -> Result<[Check; 2]> {
    let mut rng = sample_rng(seed, 1, 0);
    let (mut var_err, mut exact_err): (f64, f64) = (0.0, 0.0);
    for i in 0..batches {
        let b = [2, 7, 64][i % 3];
        let beta = [1e-3, 0.1, 1.0, 3.0][i % 4];
        let batch = random_completions(&mut rng, b, false);
        let x: Vec<f64> = (0..b)
            .map(|j| beta * (batch.log_pi()[j] - batch.log_ref()[j]) - batch.reward()[j])
            .collect();
        let m = mean(&x);
        let var = mean(&x.iter().map(|v| (v - m).powi(2)).collect::<Vec<_>>());
        let want = var / (2.0 * beta);
        let got = llm_devgrad(&batch, Divergence::ReverseKl, beta, true, false)?.loss;
        var_err = var_err.max((got - want).abs() / want.abs().max(1.0));

        let on_ref = random_completions(&mut rng, b, true);
        for tempered in [true, false] {
            let a = llm_devgrad(&on_ref, Divergence::ReverseKl, beta, tempered, false)?;
            let k = llm_devgrad(&on_ref, Divergence::ReverseKl, beta, tempered, true)?;
            let same = a.loss.to_bits() == k.loss.to_bits()
                && a.weights
                    .iter()
                    .zip(&k.weights)
                    .all(|(p, q)| p.to_bits() == q.to_bits());
            if !same {
                exact_err = exact_err.max(
                    (a.loss - k.loss)
                        .abs()
                        .max(max_abs_diff(&a.weights, &k.weights))
                        .max(f64::MIN_POSITIVE),
                );
            }
        }
    }
    Ok([
        Check::within("kimi_variance_form", var_err, KIMI_TOL),
        Check::within("kimi_exact_on_reference", exact_err, 0.0),
    ])
}

/// Forward logits, backward logits (if learnable) and `log Z` drawn
/// uniformly from `[-1, 1]`.
pub fn random_params(env: &HypergridEnv, mode: BackwardMode, seed: u64, draw: u64) -> PolicyParams {
    let mut rng = sample_rng(seed, 2, draw);
    let mut p = PolicyParams::uniform(env, mode);
    for l in p.forward_logits.iter_mut() {
        *l = rng.random_range(-1.0..1.0);
    }
    if let Some(b) = p.backward_logits.as_mut() {
        for l in b.iter_mut() {
            *l = rng.random_range(-1.0..1.0);
        }
    }
    p.log_z = rng.random_range(-1.0..1.0);
    p
}

pub fn grid_env(h: usize) -> HypergridEnv {
    HypergridEnv::new(2, h, 1e-3).expect("valid grid")
}

/// On-policy expected surrogate gradient against the exact forward
/// divergence gradient, by enumeration over `draws` random parameters.
pub fn check_forward_gradient(div: Divergence, h: usize, draws: u64, seed: u64) -> Result<Check> {
    let env = grid_env(h);
    let mut err: f64 = 0.0;
    for k in 0..draws {
        let p = random_params(&env, BackwardMode::Uniform, seed, k);
        let a = expected_forward_surrogate(&p, &env, div)?;
        let b = forward_divergence_gradient(&p, &env, div)?;
        err = err.max(max_abs_diff(&a, &b));
    }
    Ok(Check::within(
        format!("forward_gradient/h{h}/{div}"),
        err,
        FORWARD_GRADIENT_TOL,
    ))
}

/// Expected backward-policy gradient under the tilted backward distribution
/// against the gradient of the backward-generator divergence.
pub fn check_backward_gradient(div: Divergence, h: usize, draws: u64, seed: u64) -> Result<Check> {
    let env = grid_env(h);
    let mut err: f64 = 0.0;
    for k in 0..draws {
        let p = random_params(&env, BackwardMode::Learnable, seed, k);
        let a = expected_backward_surrogate(&p, &env, div)?;
        let b = backward_divergence_gradient(&p, &env, div)?;
        err = err.max(max_abs_diff(&a, &b));
    }
    Ok(Check::within(
        format!("backward_gradient/h{h}/{div}"),
        err,
        BACKWARD_GRADIENT_TOL,
    ))
}

/// Sup-norm distance on `u ∈ [0.2, 5]` between the generator recovered from
/// the loss derivative and the generator itself.
pub fn check_inverse(div: Divergence) -> Result<Check> {
    let inv = InverseGenerator::new(|d: f64| loss_deriv(div, d).unwrap_or(f64::NAN))?;
    let mut err: f64 = 0.0;
    for i in 0..=96 {
        let u = 0.2 + 4.8 * i as f64 / 96.0;
        err = err.max((inv.eval(u)? - div.generator(u)?.f).abs());
    }
    Ok(Check::within(
        format!("inverse_round_trip/{div}"),
        err,
        INVERSE_TOL,
    ))
}

/// The squared loss `ℓ(Δ) = Δ²` maps back to `u ln u`.
pub fn check_square_loss_inverse() -> Result<Check> {
    let inv = InverseGenerator::new(|d: f64| 2.0 * d)?;
    let mut err: f64 = 0.0;
    for i in 0..=96 {
        let u = 0.2 + 4.8 * i as f64 / 96.0;
        err = err.max((inv.eval(u)? - u * u.ln()).abs());
    }
    Ok(Check::within(
        "inverse_square_loss_is_u_log_u",
        err,
        SQUARE_INVERSE_TOL,
    ))
}

/// Locates the sign change of the reverse-KL on-policy backward curvature
/// by bisection on `[0.01, 1]` and reports its distance to `e⁻²`.
pub fn check_backward_curvature_root() -> Result<Check> {
    let g = |u: f64| {
        Divergence::ReverseKl
            .onpolicy_backward_curvature(u)
            .unwrap_or(f64::NAN)
    };
    let (lo, hi) = bisect_increasing(g, 0.01, 1.0, 1e-12)?;
    let root = 0.5 * (lo + hi);
    Ok(Check::within(
        "reverse_kl_backward_curvature_root",
        (root - (-2f64).exp()).abs(),
        CURVATURE_ROOT_TOL,
    ))
}

/// Training setup shared by the off-policy checks: `H = 8`, `D = 2`,
/// `R0 = 0.001`, `ε = 0.5` uniform behavior, batch 64, 2000 Adam steps at
/// lr 0.05 with DevGrad normalization.
pub fn offpolicy_config(div: Divergence, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(grid_env(8), div);
    c.behavior = BehaviorPolicy::EpsUniform { epsilon: 0.5 };
    c.normalization = Normalization::Devgrad;
    c.batch_size = 64;
    c.steps = 2000;
    c.lr = 0.05;
    c.eval_interval = 500;
    c.seed = seed;
    c
}

/// Trains with [`offpolicy_config`] until an evaluation (every 100 steps,
/// at most 4000 steps) finds the policy within [`CONVERGED_L1`] of the
/// target, then compares the per-sample gradient variance of the f-TB
/// estimator (weights `f'(u) - 1`) with the raw score-function estimator
/// (weights `f'(u)`) on 10⁴ on-policy samples. `max_err` is the variance
/// ratio; the check needs it below 1 and a converged policy.
pub fn check_variance(div: Divergence, seed: u64) -> Result<Check> {
    let mut trainer = Trainer::new(offpolicy_config(div, seed))?;
    let mut converged = false;
    while !converged && trainer.step_index() < 4000 {
        for _ in 0..100 {
            trainer.step()?;
        }
        converged = trainer.evaluate().l1 <= CONVERGED_L1;
    }
    let v = gradient_variance(trainer.params(), &grid_env(8), div, 10_000, seed)?;
    let ratio = v.f_tb / v.score_function;
    let mut c = Check::within(format!("variance_ordering/{div}/seed{seed}"), ratio, 1.0);
    c.pass = c.pass && ratio < 1.0 && converged;
    Ok(c)
}

fn suite_checks(suite: Suite) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    match suite {
        Suite::Losses => {
            for div in catalog() {
                out.push(check_closed_form(div)?);
            }
        }
        Suite::Devgrad => {
            for div in catalog() {
                out.extend(check_devgrad(div, 100, 1)?);
            }
            out.extend(check_kimi(100, 1)?);
        }
        Suite::Gradients => {
            for h in [2, 3] {
                for div in catalog() {
                    out.push(check_forward_gradient(div, h, 20, 1)?);
                    out.push(check_backward_gradient(div, h, 20, 1)?);
                }
            }
            out.push(check_backward_curvature_root()?);
        }
        Suite::Inverse => {
            for div in strictly_convex_catalog() {
                out.push(check_inverse(div)?);
            }
            out.push(check_square_loss_inverse()?);
        }
        Suite::Variance => {
            for div in strictly_convex_catalog() {
                for seed in 1..=3 {
                    out.push(check_variance(div, seed)?);
                }
            }
        }
        Suite::All => {
            for s in [
                Suite::Losses,
                Suite::Devgrad,
                Suite::Gradients,
                Suite::Inverse,
                Suite::Variance,
            ] {
                out.extend(suite_checks(s)?);
            }
        }
    }
    Ok(out)
}

/// Runs a suite. Numerical errors inside a check become failed rows so the
/// report stays complete.
pub fn run_suite(suite: Suite) -> Report {
    let checks = match suite_checks(suite) {
        Ok(c) => c,
        Err(e) => vec![Check {
            name: format!("{suite}/error: {e}"),
            pass: false,
            max_err: f64::NAN,
            tolerance: 0.0,
        }],
    };
    Report {
        suite: suite.to_string(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in [
            "losses",
            "devgrad",
            "gradients",
            "inverse",
            "variance",
            "all",
        ] {
            assert_eq!(s.parse::<Suite>().unwrap().name(), s);
        }
        assert!(matches!("grads".parse::<Suite>(), Err(Error::Config(_))));
    }

    #[test]
    fn nan_errors_fail() {
        assert!(!Check::within("x", f64::NAN, 1.0).pass);
        assert!(Check::within("x", 0.0, 0.0).pass);
    }

    #[test]
    fn catalog_covers_every_divergence() {
        let c = catalog();
        assert_eq!(c.len(), 13);
        assert_eq!(strictly_convex_catalog().len(), 12);
    }

    #[test]
    fn losses_suite_passes() {
        let r = run_suite(Suite::Losses);
        assert!(
            r.all_pass(),
            "{:?}",
            r.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>()
        );
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["suite"], "losses");
        assert!(json["checks"][0]["max_err"].is_number());
    }

    #[test]
    fn curvature_root_is_found() {
        assert!(check_backward_curvature_root().unwrap().pass);
    }
}
