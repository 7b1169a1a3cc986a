//! DevGrad losses for KL-regularized fine-tuning towards the tilted target
//! `π_⋆(y|x) ∝ π_ref(y|x) exp(r(x, y)/β)`, on sequence-level log-probabilities.

use serde::{Deserialize, Serialize};

use crate::devgrad::{devgrad_batch_loss, DeltaBatch, DevGradResult};
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::loss::{check_beta, loss, loss_deriv};
use crate::numeric::mean;

/// Per-completion policy and reference log-probabilities with their rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionBatch {
    log_pi: Vec<f64>,
    log_ref: Vec<f64>,
    reward: Vec<f64>,
}

impl CompletionBatch {
    pub fn new(log_pi: Vec<f64>, log_ref: Vec<f64>, reward: Vec<f64>) -> Result<Self> {
        if log_pi.is_empty() {
            return Err(Error::InvalidBatch("batch is empty".into()));
        }
        if log_ref.len() != log_pi.len() || reward.len() != log_pi.len() {
            return Err(Error::InvalidBatch(format!(
                "column lengths differ: log_pi {}, log_ref {}, reward {}",
                log_pi.len(),
                log_ref.len(),
                reward.len()
            )));
        }
        for (name, col) in [
            ("log_pi", &log_pi),
            ("log_ref", &log_ref),
            ("reward", &reward),
        ] {
            if let Some(i) = col.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidBatch(format!("{name}[{i}] is not finite")));
            }
        }
        Ok(Self {
            log_pi,
            log_ref,
            reward,
        })
    }

    pub fn len(&self) -> usize {
        self.log_pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_pi.is_empty()
    }

    pub fn log_pi(&self) -> &[f64] {
        &self.log_pi
    }

    pub fn log_ref(&self) -> &[f64] {
        &self.log_ref
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }
}

/// Untempered `Δ_i = (log π_θ - log π_ref) - r/β`, or tempered
/// `Δ_i = β (log π_θ - log π_ref) - r`.
pub fn delta_from_logprobs(
    batch: &CompletionBatch,
    beta: f64,
    tempered: bool,
) -> Result<DeltaBatch> {
    check_beta(beta)?;
    let deltas = batch
        .log_pi
        .iter()
        .zip(&batch.log_ref)
        .zip(&batch.reward)
        .map(|((lp, lr), r)| {
            if tempered {
                beta * (lp - lr) - r
            } else {
                (lp - lr) - r / beta
            }
        })
        .collect();
    DeltaBatch::new(deltas)
}

/// DevGrad loss on a completion batch.
///
/// With `tempered` the loss is `(1/β) (1/B) Σ L_f(Δ̃_i + Ẑ)` on tempered
/// deviations; otherwise the plain DevGrad loss on untempered ones. In both
/// cases `weights[i]` is the coefficient of `∇ log π_θ(y_i)` in `B` times the
/// loss gradient, and `log_z_hat` is in the units of the deviations used.
///
/// `kimi` replaces `Ẑ` by the batch-mean reward (scaled by `1/β` when
/// untempered), which is exact for reverse KL when `π_θ = π_ref`. It is only
/// defined for reverse KL.
pub fn llm_devgrad(
    batch: &CompletionBatch,
    div: Divergence,
    beta: f64,
    tempered: bool,
    kimi: bool,
) -> Result<DevGradResult> {
    let deltas = delta_from_logprobs(batch, beta, tempered)?;
    let scale = if tempered { 1.0 / beta } else { 1.0 };
    if !kimi {
        let mut r = devgrad_batch_loss(div, &deltas)?;
        r.loss *= scale;
        return Ok(r);
    }
    if div.canonical() != Divergence::ReverseKl {
        return Err(Error::Config(format!(
            "the mean-reward normalization is only defined for reverse_kl, not {div}"
        )));
    }
    let z = if tempered {
        mean(&batch.reward)
    } else {
        mean(&batch.reward.iter().map(|r| r / beta).collect::<Vec<_>>())
    };
    let d = deltas.as_slice();
    let losses = d
        .iter()
        .map(|&x| loss(div, x + z))
        .collect::<Result<Vec<_>>>()?;
    let weights = d
        .iter()
        .map(|&x| loss_deriv(div, x + z))
        .collect::<Result<Vec<_>>>()?;
    Ok(DevGradResult {
        log_z_hat: z,
        loss: scale * mean(&losses),
        weights,
    })
}

/// Tempered form of [`llm_devgrad`].
pub fn tempered_devgrad_llm(
    batch: &CompletionBatch,
    beta: f64,
    div: Divergence,
    kimi: bool,
) -> Result<DevGradResult> {
    llm_devgrad(batch, div, beta, true, kimi)
}
