//! Translation-invariant surrogate losses on log-ratio deviations.
//!
//! For a generator `f` the loss is `L_f(Δ) = ∫_0^Δ f'(e^t) - f'(1) dt` with
//! `Δ = log p_θ(y) - log p_⋆(y)`. It is convex, vanishes only at `Δ = 0`, and
//! its on-policy expected gradient is the gradient of `D_f(p_θ ‖ p_⋆)`.
//!
//! Members of the alpha family share the form `f'(u) = (u^k - 1)/k + 1`, so
//! their losses are `Δ² · exprel2(kΔ)` with derivative `Δ · exprel(kΔ)`;
//! this covers reverse KL (`k = 0`, `Δ²/2`), forward KL (`Δ + e^{-Δ} - 1`),
//! Pearson (`e^Δ - Δ - 1`), Neyman (`Δ/2 + e^{-2Δ}/4 - 1/4`) and Hellinger
//! (`2Δ + 4e^{-Δ/2} - 4`) without cancellation near zero.

use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::numeric::{exprel, exprel2, integrate, QUAD_TOL};

/// Largest exponent argument evaluated before reporting overflow.
pub const MAX_EXPONENT: f64 = 700.0;

/// Finite-difference step for `ℓ''(0)` in the inverse mapping.
pub const INVERSE_FD_STEP: f64 = 1e-5;

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("loss"))
    }
}

fn check_exponent(delta: f64, exponent: f64) -> Result<()> {
    if exponent > MAX_EXPONENT {
        Err(Error::Overflow { delta, exponent })
    } else {
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `L_f'(Δ)` for Jensen–Shannon: `2 (ln 2 - ln(1 + e^{-Δ}))`.
fn jsd_deriv(delta: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - softplus(-delta))
}

/// Closed-form loss value; Jensen–Shannon is integrated numerically.
pub fn loss(div: Divergence, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let div = div.canonical();
    if let Some(k) = div.exp_rate() {
        check_exponent(delta, k * delta)?;
        return Ok(delta * delta * exprel2(k * delta));
    }
    match div {
        Divergence::TotalVariation => Ok(delta.abs()),
        Divergence::Jsd => Ok(integrate(jsd_deriv, 0.0, delta, QUAD_TOL)?.value),
        _ => unreachable!("alpha family handled above"),
    }
}

/// `L_f'(Δ) = f'(e^Δ) - f'(1)`. Total variation uses the subgradient 0 at 0.
pub fn loss_deriv(div: Divergence, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let div = div.canonical();
    if let Some(k) = div.exp_rate() {
        check_exponent(delta, k * delta)?;
        return Ok(delta * exprel(k * delta));
    }
    match div {
        Divergence::TotalVariation => Ok(if delta > 0.0 {
            1.0
        } else if delta < 0.0 {
            -1.0
        } else {
            0.0
        }),
        Divergence::Jsd => Ok(jsd_deriv(delta)),
        _ => unreachable!("alpha family handled above"),
    }
}

/// `L_f''(Δ) = f''(e^Δ) e^Δ` (zero away from the kink for total variation).
pub fn loss_curvature(div: Divergence, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let div = div.canonical();
    if let Some(k) = div.exp_rate() {
        check_exponent(delta, k * delta)?;
        return Ok((k * delta).exp());
    }
    match div {
        Divergence::TotalVariation => Ok(0.0),
        Divergence::Jsd => Ok(2.0 / (1.0 + delta.exp())),
        _ => unreachable!("alpha family handled above"),
    }
}

/// The defining integral evaluated by adaptive quadrature from the generator's
/// derivative. Used as the reference every closed form is checked against.
pub fn loss_numeric(div: Divergence, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if delta.abs() > MAX_EXPONENT {
        return Err(Error::Overflow {
            delta,
            exponent: delta.abs(),
        });
    }
    let f1_at_one = div.generator_deriv(1.0)?;
    let integrand = |t: f64| match div.generator_deriv(t.exp()) {
        Ok(v) => v - f1_at_one,
        Err(_) => f64::NAN,
    };
    Ok(integrate(integrand, 0.0, delta, QUAD_TOL)?.value)
}

/// `(1/β) L_f(βΔ)`.
pub fn tempered_loss(div: Divergence, delta: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(loss(div, beta * delta)? / beta)
}

/// Derivative of the tempered loss in `Δ`, which is `L_f'(βΔ)`.
pub fn tempered_loss_deriv(div: Divergence, delta: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    loss_deriv(div, beta * delta)
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "beta",
            value: beta,
        })
    }
}

/// Generator induced by a translation-invariant loss through its derivative:
/// `f_ℓ(u) = λ1 ∫_1^u ℓ'(ln t) dt + λ2 (u - 1)` with `λ1 = 1/ℓ''(0)` and
/// `λ2 = 1 - ℓ'(0)/ℓ''(0)`, which pins `f_ℓ(1) = 0`, `f_ℓ'(1) = f_ℓ''(1) = 1`.
pub struct InverseGenerator<F> {
    loss_deriv: F,
    lambda1: f64,
    lambda2: f64,
}

impl<F: Fn(f64) -> f64> InverseGenerator<F> {
    pub fn new(loss_deriv: F) -> Result<Self> {
        let h = INVERSE_FD_STEP;
        let curvature = |step: f64| (loss_deriv(step) - loss_deriv(-step)) / (2.0 * step);
        let c1 = curvature(h);
        let c2 = curvature(2.0 * h);
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(Error::InvalidLoss(format!(
                "loss curvature at 0 is {c1}; the loss must be strictly convex"
            )));
        }
        // A kink at 0 makes the difference quotient scale like 1/step.
        if (c1 - c2).abs() > 1e-3 * c1 {
            return Err(Error::InvalidLoss(format!(
                "loss is not twice differentiable at 0 (curvature estimates {c1} vs {c2})"
            )));
        }
        let d0 = loss_deriv(0.0);
        Ok(Self {
            loss_deriv,
            lambda1: 1.0 / c1,
            lambda2: 1.0 - d0 / c1,
        })
    }

    pub fn lambdas(&self) -> (f64, f64) {
        (self.lambda1, self.lambda2)
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::NonFinite("inverse generator"));
        }
        if u <= 0.0 {
            return Err(Error::Domain {
                what: "inverse generator",
                value: u,
            });
        }
        let integral = integrate(|t: f64| (self.loss_deriv)(t.ln()), 1.0, u, QUAD_TOL)?;
        Ok(self.lambda1 * integral.value + self.lambda2 * (u - 1.0))
    }
}

/// One-shot form of [`InverseGenerator`].
pub fn inverse_generator<F: Fn(f64) -> f64>(loss_deriv: F, u: f64) -> Result<f64> {
    InverseGenerator::new(loss_deriv)?.eval(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    const GRID: [f64; 7] = [-5.0, -2.0, -0.5, 0.0, 0.5, 2.0, 5.0];

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
            Divergence::alpha(1.2),
            Divergence::alpha(2.0),
        ]
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(Divergence::ReverseKl, 0.0).unwrap(), 0.0);
        assert_eq!(loss(Divergence::ReverseKl, 3.0).unwrap(), 4.5);
        assert!((loss(Divergence::ForwardKl, 1.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!((loss(Divergence::Pearson, 1.0).unwrap() - (E - 2.0)).abs() < 1e-15);
        assert_eq!(loss(Divergence::TotalVariation, -2.5).unwrap(), 2.5);
    }

    #[test]
    fn literal_closed_forms() {
        for &d in &GRID {
            let e = f64::exp;
            let pairs = [
                (Divergence::ForwardKl, d + e(-d) - 1.0),
                (Divergence::Pearson, e(d) - d - 1.0),
                (Divergence::Neyman, 0.5 * d + 0.25 * e(-2.0 * d) - 0.25),
                (Divergence::Hellinger, 2.0 * d + 4.0 * e(-d / 2.0) - 4.0),
            ];
            for (div, expected) in pairs {
                let got = loss(div, d).unwrap();
                assert!(
                    (got - expected).abs() < 1e-12 * (1.0 + expected.abs()),
                    "{div} {d}"
                );
            }
            for a in [0.5, 0.75, 1.2, 2.0] {
                let c = 1.0 / (a - 1.0f64).powi(2);
                let expected = c * e((a - 1.0) * d) - d / (a - 1.0) - c;
                let got = loss(Divergence::alpha(a), d).unwrap();
                assert!(
                    (got - expected).abs() < 1e-11 * (1.0 + expected.abs()),
                    "alpha {a} {d}"
                );
            }
        }
    }

    #[test]
    fn deriv_examples() {
        for div in specs() {
            assert_eq!(loss_deriv(div, 0.0).unwrap(), 0.0, "{div}");
        }
        assert_eq!(loss_deriv(Divergence::ReverseKl, -2.0).unwrap(), -2.0);
        assert!(
            (loss_deriv(Divergence::ForwardKl, 1.0).unwrap() - 0.632_120_558_828_557_7).abs()
                < 1e-15
        );
    }

    #[test]
    fn numeric_examples() {
        assert_eq!(loss_numeric(Divergence::Hellinger, 0.0).unwrap(), 0.0);
        let v = loss_numeric(Divergence::Hellinger, 2.0).unwrap();
        assert!((v - (4.0 + 4.0 * (-1f64).exp() - 4.0)).abs() < 1e-10);
        assert!((v - 1.471_517_764_685_769).abs() < 1e-10);
        assert_eq!(loss_numeric(Divergence::Jsd, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn jsd_matches_dilogarithm_form() {
        // L(Δ) = Δ² + 2Δ ln 2 + 2 Li2(-e^Δ) + π²/6, evaluated with mpmath (50 digits).
        let frozen = [
            (-5.0, 19.700_008_999_493_728),
            (-2.0, 2.610_320_375_179_597_7),
            (-0.5, 0.135_352_326_298_518_62),
            (0.5, 0.114_647_673_701_481_38),
            (2.0, 1.389_679_624_820_402_3),
            (5.0, 5.299_991_000_506_271_5),
        ];
        for (d, expected) in frozen {
            let got = loss(Divergence::Jsd, d).unwrap();
            assert!((got - expected).abs() < 1e-10, "Δ={d}: {got} vs {expected}");
        }
    }

    #[test]
    fn closed_forms_agree_with_quadrature() {
        for div in specs() {
            for &d in &GRID {
                let a = loss(div, d).unwrap();
                let b = loss_numeric(div, d).unwrap();
                assert!((a - b).abs() <= 1e-8, "{div} Δ={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for div in specs() {
            for &d in &GRID {
                if d == 0.0 && !div.is_strictly_convex() {
                    continue;
                }
                let h = 1e-6;
                let fd = (loss(div, d + h).unwrap() - loss(div, d - h).unwrap()) / (2.0 * h);
                let an = loss_deriv(div, d).unwrap();
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "{div} Δ={d}: {fd} vs {an}"
                );
                let fd2 =
                    (loss_deriv(div, d + h).unwrap() - loss_deriv(div, d - h).unwrap()) / (2.0 * h);
                let c = loss_curvature(div, d).unwrap();
                if div.is_strictly_convex() {
                    assert!((fd2 - c).abs() <= 1e-5 * (1.0 + c.abs()), "{div} Δ={d}");
                }
            }
        }
    }

    #[test]
    fn minimizer_at_zero() {
        for div in specs() {
            for &d in &GRID {
                let v = loss(div, d).unwrap();
                let g = loss_deriv(div, d).unwrap();
                if d == 0.0 {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(v > 0.0, "{div} {d}");
                    assert_eq!(g.signum(), d.signum(), "{div} {d}");
                }
            }
        }
    }

    #[test]
    fn alpha_near_one_approaches_square_loss() {
        for a in [1.0 - 1e-3, 1.0 + 1e-3] {
            for i in 0..=60 {
                let d = -3.0 + 0.1 * i as f64;
                let v = loss(Divergence::alpha(a), d).unwrap();
                assert!((v - 0.5 * d * d).abs() <= 1e-3 * d * d * d.abs().exp());
            }
        }
    }

    #[test]
    fn tempered_examples() {
        assert_eq!(tempered_loss(Divergence::ReverseKl, 4.0, 0.5).unwrap(), 4.0);
        for div in specs() {
            assert_eq!(tempered_loss(div, 0.0, 0.3).unwrap(), 0.0);
            for &d in &GRID {
                assert_eq!(tempered_loss(div, d, 1.0).unwrap(), loss(div, d).unwrap());
            }
        }
        assert!(tempered_loss(Divergence::ReverseKl, 1.0, 0.0).is_err());
        assert!(tempered_loss(Divergence::ReverseKl, 1.0, -1.0).is_err());
    }

    #[test]
    fn overflow_is_reported_not_clamped() {
        let err = loss(Divergence::Pearson, 800.0).unwrap_err();
        assert!(matches!(err, Error::Overflow { delta, .. } if delta == 800.0));
        assert!(loss_deriv(Divergence::ForwardKl, -701.0).is_err());
        // decaying exponentials are harmless
        assert!((loss(Divergence::ForwardKl, 800.0).unwrap() - 799.0).abs() < 1e-12);
        assert!(tempered_loss(Divergence::Pearson, 800.0, 0.01).is_ok());
        assert!(matches!(
            loss(Divergence::ReverseKl, f64::NAN),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn inverse_of_square_loss_is_u_log_u() {
        let f = InverseGenerator::new(|x| x).unwrap();
        assert!((f.eval(E).unwrap() - E).abs() < 1e-6);
        assert_eq!(f.eval(1.0).unwrap(), 0.0);
        // the x² convention gives the same generator
        let g = InverseGenerator::new(|x| 2.0 * x).unwrap();
        for u in [0.2, 0.7, 3.0] {
            assert!((g.eval(u).unwrap() - u * u.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn inverse_round_trip() {
        for div in specs().into_iter().filter(|d| d.is_strictly_convex()) {
            let inv = InverseGenerator::new(|x| loss_deriv(div, x).unwrap()).unwrap();
            for i in 0..=48 {
                let u = 0.2 + 0.1 * i as f64;
                let got = inv.eval(u).unwrap();
                let want = div.generator(u).unwrap().f;
                assert!((got - want).abs() <= 1e-5, "{div} u={u}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn inverse_rejects_non_smooth_or_concave_losses() {
        assert!(matches!(
            InverseGenerator::new(|x: f64| -x),
            Err(Error::InvalidLoss(_))
        ));
        let tv = |x| loss_deriv(Divergence::TotalVariation, x).unwrap();
        assert!(matches!(
            InverseGenerator::new(tv),
            Err(Error::InvalidLoss(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nonnegative_and_monotone_derivative(d in -20.0..20.0f64, e in -20.0..20.0f64) {
                for div in specs() {
                    prop_assert!(loss(div, d).unwrap() >= 0.0);
                    let (lo, hi) = if d < e { (d, e) } else { (e, d) };
                    prop_assert!(loss_deriv(div, lo).unwrap() <= loss_deriv(div, hi).unwrap(), "{}", div);
                }
            }

            #[test]
            fn tempered_at_unit_beta_is_identity(d in -30.0..30.0f64) {
                for div in specs() {
                    prop_assert_eq!(tempered_loss(div, d, 1.0).unwrap(), loss(div, d).unwrap());
                }
            }
        }
    }
}
