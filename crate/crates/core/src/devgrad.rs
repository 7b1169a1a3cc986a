//! DevGrad: batch-wise closed-form normalization of unnormalized deviations.
//!
//! Given deviations `Δ_i = log p_θ(y_i) - log R(y_i)` that miss the unknown
//! `log Z`, the estimator picks `Ẑ = argmin_C (1/B) Σ L_f(Δ_i + C)`. The loss
//! is then evaluated with `Ẑ` held constant, so its gradient is
//! `(1/B) Σ w_i ∇Δ_i` with weights `w_i = L_f'(Δ_i + Ẑ)` that sum to zero.

use serde::{Deserialize, Serialize};

use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::loss::{loss, loss_curvature, loss_deriv};
use crate::numeric::{
    bisect_increasing, compensated_sum, golden_section, log_mean_exp, mean, median,
};

/// Residual target for the Jensen–Shannon root finder.
pub const JSD_RESIDUAL: f64 = 1e-10;
const JSD_BRACKET_PAD: f64 = 40.0;
const JSD_NEWTON_STEPS: usize = 5;

/// A non-empty batch of finite deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DeltaBatch(Vec<f64>);

impl DeltaBatch {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::InvalidBatch("batch is empty".into()));
        }
        if let Some(i) = deltas.iter().position(|d| !d.is_finite()) {
            return Err(Error::InvalidBatch(format!(
                "delta[{i}] = {} is not finite",
                deltas[i]
            )));
        }
        Ok(Self(deltas))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The batch with `c` added to every deviation.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|d| d + c).collect())
    }

    fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<f64>> for DeltaBatch {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DeltaBatch> for Vec<f64> {
    fn from(b: DeltaBatch) -> Self {
        b.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevGradResult {
    pub log_z_hat: f64,
    pub loss: f64,
    pub weights: Vec<f64>,
}

/// The minimizer `Ẑ` of the mean shifted loss.
pub fn estimate_log_z(div: Divergence, batch: &DeltaBatch) -> Result<f64> {
    let d = batch.as_slice();
    Ok(match div.canonical() {
        Divergence::ReverseKl => -mean(d),
        Divergence::ForwardKl => log_mean_exp(d, -1.0),
        Divergence::Pearson => -log_mean_exp(d, 1.0),
        Divergence::Neyman => 0.5 * log_mean_exp(d, -2.0),
        Divergence::Hellinger => 2.0 * log_mean_exp(d, -0.5),
        Divergence::Alpha(a) => log_mean_exp(d, a - 1.0) / (1.0 - a),
        Divergence::TotalVariation => -median(d),
        Divergence::Jsd => jsd_log_z(batch)?,
    })
}

fn mean_deriv(div: Divergence, d: &[f64], c: f64) -> f64 {
    let s = compensated_sum(
        d.iter()
            .map(|&x| loss_deriv(div, x + c).unwrap_or(f64::NAN)),
    );
    s / d.len() as f64
}

fn jsd_log_z(batch: &DeltaBatch) -> Result<f64> {
    let d = batch.as_slice();
    let g = |c: f64| mean_deriv(Divergence::Jsd, d, c);
    let lo = -batch.max() - JSD_BRACKET_PAD;
    let hi = -batch.min() + JSD_BRACKET_PAD;
    let (lo, hi) = bisect_increasing(g, lo, hi, 1e-6)?;
    let mut c = 0.5 * (lo + hi);
    for _ in 0..JSD_NEWTON_STEPS {
        let r = g(c);
        if r.abs() <= JSD_RESIDUAL {
            return Ok(c);
        }
        let slope =
            compensated_sum(d.iter().map(|&x| 2.0 / (1.0 + (x + c).exp()))) / d.len() as f64;
        let next = c - r / slope;
        // Newton from inside a 1e-6 bracket on a smooth monotone function stays
        // inside; guard anyway in case of a flat region.
        c = if next.is_finite() && next >= lo - 1e-6 && next <= hi + 1e-6 {
            next
        } else {
            c
        };
    }
    let r = g(c);
    if r.abs() <= JSD_RESIDUAL {
        Ok(c)
    } else {
        Err(Error::Numeric {
            what: "jensen-shannon log Z root",
            residual: r.abs(),
        })
    }
}

/// Gradient weights `L_f'(Δ_i + Ẑ)`.
///
/// For total variation the deviations sitting exactly at the median have a
/// subgradient anywhere in `[-1, 1]`; they share the value that makes the
/// weights sum to zero.
pub fn gradient_weights(div: Divergence, batch: &DeltaBatch) -> Result<Vec<f64>> {
    let z = estimate_log_z(div, batch)?;
    weights_at(div, batch, z)
}

fn weights_at(div: Divergence, batch: &DeltaBatch, z: f64) -> Result<Vec<f64>> {
    let mut w = batch
        .as_slice()
        .iter()
        .map(|&d| loss_deriv(div, d + z))
        .collect::<Result<Vec<_>>>()?;
    if div == Divergence::TotalVariation {
        balance_ties(&mut w);
    }
    Ok(w)
}

fn balance_ties(w: &mut [f64]) {
    let ties = w.iter().filter(|&&x| x == 0.0).count();
    if ties == 0 {
        return;
    }
    let excess = w.iter().sum::<f64>();
    let share = -excess / ties as f64;
    for x in w.iter_mut().filter(|x| **x == 0.0) {
        *x = share;
    }
}

/// The DevGrad batch loss `(1/B) Σ L_f(Δ_i + Ẑ)` together with `Ẑ` and the
/// per-sample weights that multiply `∇Δ_i` in its gradient.
pub fn devgrad_batch_loss(div: Divergence, batch: &DeltaBatch) -> Result<DevGradResult> {
    let z = estimate_log_z(div, batch)?;
    let losses = batch
        .as_slice()
        .iter()
        .map(|&d| loss(div, d + z))
        .collect::<Result<Vec<_>>>()?;
    Ok(DevGradResult {
        log_z_hat: z,
        loss: mean(&losses).max(0.0),
        weights: weights_at(div, batch, z)?,
    })
}

/// Reference estimator: golden-section minimization of the mean loss followed
/// by bisection on the sign of its derivative. Shares no code with the closed
/// forms and is used to check them.
pub fn estimate_log_z_generic(div: Divergence, batch: &DeltaBatch) -> Result<f64> {
    let d = batch.as_slice();
    // Every term has L' <= 0 at C = -max Δ and L' >= 0 at C = -min Δ.
    let lo = -batch.max() - 1.0;
    let hi = -batch.min() + 1.0;
    let objective = |c: f64| {
        compensated_sum(d.iter().map(|&x| loss(div, x + c).unwrap_or(f64::INFINITY)))
            / d.len() as f64
    };
    let (glo, ghi) = golden_section(objective, lo, hi, 1e-3 * (1.0 + hi - lo));
    let g = |c: f64| mean_deriv(div, d, c);
    let pad = 1e-2 * (1.0 + hi - lo);
    let (blo, bhi) = bisect_increasing(g, (glo - pad).max(lo), (ghi + pad).min(hi), 1e-13)?;
    Ok(0.5 * (blo + bhi))
}

/// Second derivative of the batch loss in `C` at `Ẑ`; positive for strictly
/// convex divergences.
pub fn log_z_curvature(div: Divergence, batch: &DeltaBatch) -> Result<f64> {
    let z = estimate_log_z(div, batch)?;
    let c = batch
        .as_slice()
        .iter()
        .map(|&d| loss_curvature(div, d + z))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(v: &[f64]) -> DeltaBatch {
        DeltaBatch::new(v.to_vec()).unwrap()
    }

    fn specs() -> Vec<Divergence> {
        vec![
            Divergence::ReverseKl,
            Divergence::ForwardKl,
            Divergence::Pearson,
            Divergence::Neyman,
            Divergence::Hellinger,
            Divergence::TotalVariation,
            Divergence::Jsd,
            Divergence::alpha(0.5),
            Divergence::alpha(0.75),
            Divergence::alpha(1.5),
            Divergence::alpha(2.0),
        ]
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(DeltaBatch::new(vec![]).is_err());
        assert!(DeltaBatch::new(vec![0.0, f64::NAN]).is_err());
        assert!(DeltaBatch::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn log_z_examples() {
        assert_eq!(
            estimate_log_z(Divergence::ReverseKl, &batch(&[1.0, 2.0, 3.0])).unwrap(),
            -2.0
        );
        assert_eq!(
            estimate_log_z(Divergence::ForwardKl, &batch(&[0.0, 0.0, 0.0])).unwrap(),
            0.0
        );
        let p = estimate_log_z(Divergence::Pearson, &batch(&[0.0, 3f64.ln()])).unwrap();
        assert!(close(p, -std::f64::consts::LN_2, 1e-15));
        assert_eq!(
            estimate_log_z(Divergence::TotalVariation, &batch(&[1.0, 2.0, 10.0])).unwrap(),
            -2.0
        );
        assert_eq!(
            estimate_log_z(Divergence::TotalVariation, &batch(&[1.0, 2.0, 4.0, 10.0])).unwrap(),
            -3.0
        );
        assert!(
            estimate_log_z(Divergence::Jsd, &batch(&[0.0, 0.0]))
                .unwrap()
                .abs()
                < 1e-10
        );
    }

    #[test]
    fn batch_loss_examples() {
        let r = devgrad_batch_loss(Divergence::ReverseKl, &batch(&[1.0, 2.0, 3.0])).unwrap();
        assert!(close(r.loss, 1.0 / 3.0, 1e-15));
        assert_eq!(r.weights, vec![-1.0, 0.0, 1.0]);

        let r = devgrad_batch_loss(Divergence::TotalVariation, &batch(&[1.0, 2.0, 10.0])).unwrap();
        assert_eq!(r.weights, vec![-1.0, 0.0, 1.0]);

        let r = devgrad_batch_loss(Divergence::ForwardKl, &batch(&[0.0, 2f64.ln()])).unwrap();
        assert!(close(r.log_z_hat, 0.75f64.ln(), 1e-15));
        assert!(close(r.weights[0], -1.0 / 3.0, 1e-15));
        assert!(close(r.weights[1], 1.0 / 3.0, 1e-15));

        for div in specs() {
            let r = devgrad_batch_loss(div, &batch(&[0.7, 0.7, 0.7])).unwrap();
            assert!(r.loss.abs() < 1e-15, "{div}");
            assert!(r.weights.iter().all(|w| w.abs() < 1e-9), "{div}");
        }
    }

    #[test]
    fn weight_examples() {
        let w = gradient_weights(Divergence::Pearson, &batch(&[0.0, 3f64.ln()])).unwrap();
        assert!(close(w[0], -0.5, 1e-15) && close(w[1], 0.5, 1e-15));
        assert_eq!(
            gradient_weights(Divergence::Neyman, &batch(&[0.0, 0.0])).unwrap(),
            vec![0.0, 0.0]
        );
        let b = batch(&[-0.3, 1.2, 0.4, -2.0, 0.9]);
        let a = gradient_weights(Divergence::alpha(2.0), &b).unwrap();
        let p = gradient_weights(Divergence::Pearson, &b).unwrap();
        for (x, y) in a.iter().zip(&p) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn single_sample_is_degenerate() {
        for div in specs() {
            let r = devgrad_batch_loss(div, &batch(&[1.7])).unwrap();
            assert!(close(r.log_z_hat, -1.7, 1e-9), "{div}");
            assert!(r.loss.abs() < 1e-12);
            assert!(r.weights[0].abs() < 1e-9);
        }
    }

    #[test]
    fn tv_ties_balance() {
        for v in [
            vec![2.0, 2.0, 10.0],
            vec![2.0, 2.0, 2.0, 10.0],
            vec![-1.0, 3.0, 3.0, 3.0, 3.0],
        ] {
            let w = gradient_weights(Divergence::TotalVariation, &batch(&v)).unwrap();
            assert!(w.iter().sum::<f64>().abs() < 1e-12, "{v:?} {w:?}");
            assert!(w.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn jsd_is_robust_to_large_spreads() {
        let b = batch(&[-300.0, 0.0, 250.0, 12.0]);
        let z = estimate_log_z(Divergence::Jsd, &b).unwrap();
        assert!(mean_deriv(Divergence::Jsd, b.as_slice(), z).abs() <= JSD_RESIDUAL);
    }

    fn batch_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop_oneof![Just(2usize), Just(4), Just(16), Just(256)]
            .prop_flat_map(|n| prop::collection::vec(-3.0..3.0f64, n))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn weights_sum_to_zero(v in batch_strategy()) {
            let b = DeltaBatch::new(v).unwrap();
            for div in specs() {
                let w = gradient_weights(div, &b).unwrap();
                prop_assert!(compensated_sum(w.iter().copied()).abs() <= 1e-9 * b.len() as f64, "{}", div);
            }
        }

        #[test]
        fn estimate_is_optimal(v in batch_strategy()) {
            let b = DeltaBatch::new(v).unwrap();
            for div in specs().into_iter().filter(|d| d.is_strictly_convex()) {
                let z = estimate_log_z(div, &b).unwrap();
                prop_assert!(mean_deriv(div, b.as_slice(), z).abs() <= 1e-9, "{}", div);
                let at = |c: f64| mean(&b.as_slice().iter().map(|&d| loss(div, d + c).unwrap()).collect::<Vec<_>>());
                prop_assert!(at(z + 1e-3) > at(z) && at(z - 1e-3) > at(z), "{}", div);
            }
        }

        #[test]
        fn translation_equivariance(v in batch_strategy(), c in -50.0..50.0f64) {
            let b = DeltaBatch::new(v).unwrap();
            let s = b.shifted(c).unwrap();
            for div in specs() {
                let z0 = estimate_log_z(div, &b).unwrap();
                let z1 = estimate_log_z(div, &s).unwrap();
                prop_assert!((z1 - (z0 - c)).abs() <= 1e-10 * (1.0 + c.abs()), "{}: {} vs {}", div, z1, z0 - c);
                let l0 = devgrad_batch_loss(div, &b).unwrap().loss;
                let l1 = devgrad_batch_loss(div, &s).unwrap().loss;
                prop_assert!((l0 - l1).abs() <= 1e-9 * (1.0 + l0), "{}", div);
            }
        }

        #[test]
        fn closed_forms_match_generic_minimizer(v in prop::collection::vec(-3.0..3.0f64, 3..40)) {
            let b = DeltaBatch::new(v).unwrap();
            for div in specs() {
                let z = estimate_log_z(div, &b).unwrap();
                let g = estimate_log_z_generic(div, &b).unwrap();
                if div == Divergence::TotalVariation && b.len() % 2 == 0 {
                    // every point between the central pair is a minimizer
                    let obj = |c: f64| mean(&b.as_slice().iter().map(|&d| (d + c).abs()).collect::<Vec<_>>());
                    prop_assert!((obj(z) - obj(g)).abs() <= 1e-12);
                } else {
                    prop_assert!((z - g).abs() <= 1e-8, "{}: {} vs {}", div, z, g);
                }
            }
        }
    }
}
