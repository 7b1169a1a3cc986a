//! Catalog of f-divergence generators.
//!
//! Every generator is standardized so that `f(1) = 0`, `f'(1) = 1` and
//! `f''(1) = 1` (total variation excepted for the second derivative, which
//! is a point mass at the kink). Adding a multiple of `u - 1` to a generator
//! leaves the divergence unchanged, so the linear terms below only fix the
//! scale of the induced gradients.
//!
//! | name        | f(u)                                         |
//! |-------------|----------------------------------------------|
//! | reverse_kl  | u ln u                                       |
//! | forward_kl  | 2(u - 1) - ln u                              |
//! | pearson     | (u - 1)^2 / 2 + (u - 1)                      |
//! | neyman      | (u - 1)^2 / (2u) + (u - 1)                   |
//! | hellinger   | 2(sqrt u - 1)^2 + (u - 1)                    |
//! | tv          | abs(u - 1) + (u - 1)                         |
//! | jsd         | 2[u ln u - (u + 1) ln((u + 1) / 2)] + (u - 1) |
//! | alpha       | (u^a - u) / (a(a - 1)) + (a - 1)/a (u - 1)   |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numeric::{exprel, integrate, QUAD_TOL};

/// Alpha values closer than this to 0 or 1 are replaced by the limiting divergence.
pub const ALPHA_SNAP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    ReverseKl,
    ForwardKl,
    Pearson,
    Neyman,
    Hellinger,
    TotalVariation,
    Jsd,
    Alpha(f64),
}

/// `(f(u), f'(u), f''(u))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorValue {
    pub f: f64,
    pub f1: f64,
    pub f2: f64,
}

/// `(h(u), h'(u))` for the backward-policy generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardValue {
    pub h: f64,
    pub h1: f64,
}

impl Divergence {
    /// Alpha divergence, snapped to forward KL near 0 and reverse KL near 1.
    pub fn alpha(alpha: f64) -> Self {
        Divergence::Alpha(alpha).canonical()
    }

    pub fn canonical(self) -> Self {
        match self {
            Divergence::Alpha(a) if (a - 1.0).abs() < ALPHA_SNAP => Divergence::ReverseKl,
            Divergence::Alpha(a) if a.abs() < ALPHA_SNAP => Divergence::ForwardKl,
            other => other,
        }
    }

    /// Every divergence except total variation has a strictly convex generator.
    pub fn is_strictly_convex(&self) -> bool {
        !matches!(self, Divergence::TotalVariation)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Divergence::ReverseKl => "reverse_kl",
            Divergence::ForwardKl => "forward_kl",
            Divergence::Pearson => "pearson",
            Divergence::Neyman => "neyman",
            Divergence::Hellinger => "hellinger",
            Divergence::TotalVariation => "tv",
            Divergence::Jsd => "jsd",
            Divergence::Alpha(_) => "alpha",
        }
    }

    /// Rate `k` such that `f'(u) = (u^k - 1)/k + 1`, for the members of the
    /// alpha family (`k = alpha - 1`). Reverse KL is the `k -> 0` limit.
    pub(crate) fn exp_rate(&self) -> Option<f64> {
        match self.canonical() {
            Divergence::ReverseKl => Some(0.0),
            Divergence::ForwardKl => Some(-1.0),
            Divergence::Pearson => Some(1.0),
            Divergence::Neyman => Some(-2.0),
            Divergence::Hellinger => Some(-0.5),
            Divergence::Alpha(a) => Some(a - 1.0),
            Divergence::TotalVariation | Divergence::Jsd => None,
        }
    }

    /// `f`, `f'` and `f''` at `u > 0`.
    ///
    /// Total variation reports `f''(1) = +inf` (the kink) and `f''(u) = 0` elsewhere.
    pub fn generator(&self, u: f64) -> Result<GeneratorValue> {
        check_positive("generator", u)?;
        let ln = u.ln();
        let v = match self.canonical() {
            Divergence::ReverseKl => GeneratorValue {
                f: u * ln,
                f1: 1.0 + ln,
                f2: 1.0 / u,
            },
            Divergence::ForwardKl => GeneratorValue {
                f: 2.0 * (u - 1.0) - ln,
                f1: 2.0 - 1.0 / u,
                f2: 1.0 / (u * u),
            },
            Divergence::Pearson => GeneratorValue {
                f: 0.5 * (u - 1.0).powi(2) + (u - 1.0),
                f1: u,
                f2: 1.0,
            },
            Divergence::Neyman => GeneratorValue {
                f: (u - 1.0).powi(2) / (2.0 * u) + (u - 1.0),
                f1: 1.5 - 0.5 / (u * u),
                f2: 1.0 / (u * u * u),
            },
            Divergence::Hellinger => {
                let s = u.sqrt();
                GeneratorValue {
                    f: 2.0 * (s - 1.0).powi(2) + (u - 1.0),
                    f1: 3.0 - 2.0 / s,
                    f2: 1.0 / (u * s),
                }
            }
            Divergence::TotalVariation => GeneratorValue {
                f: (u - 1.0).abs() + (u - 1.0),
                f1: 1.0 + sign(u - 1.0),
                f2: if u == 1.0 { f64::INFINITY } else { 0.0 },
            },
            Divergence::Jsd => GeneratorValue {
                f: 2.0 * (u * ln - (u + 1.0) * ((u + 1.0) / 2.0).ln()) + (u - 1.0),
                f1: 2.0 * (2.0 * u / (u + 1.0)).ln() + 1.0,
                f2: 2.0 / (u * (u + 1.0)),
            },
            Divergence::Alpha(a) => alpha_generator(a, u),
        };
        Ok(v)
    }

    /// First derivative of the generator only.
    pub fn generator_deriv(&self, u: f64) -> Result<f64> {
        self.generator(u).map(|g| g.f1)
    }

    /// `h(u) = ∫_1^u (2 - f'(1/t)) dt` and `h'(u) = 2 - f'(1/u)`.
    ///
    /// Closed forms are used where `f'` integrates in elementary terms; the
    /// Jensen–Shannon case goes through adaptive quadrature.
    pub fn backward_generator(&self, u: f64) -> Result<BackwardValue> {
        check_positive("backward generator", u)?;
        let ln = u.ln();
        let h1 = 2.0 - self.generator_deriv(1.0 / u)?;
        let h = match self.canonical() {
            Divergence::ReverseKl => u * ln,
            Divergence::ForwardKl => 0.5 * (u * u - 1.0),
            Divergence::Pearson => 2.0 * (u - 1.0) - ln,
            Divergence::Neyman => 0.5 * (u - 1.0) + (u * u * u - 1.0) / 6.0,
            Divergence::Hellinger => (4.0 / 3.0) * (u * u.sqrt() - 1.0) - (u - 1.0),
            Divergence::TotalVariation => (u - 1.0) + (u - 1.0).abs(),
            Divergence::Alpha(a) => {
                // (u - 1) + [∫_1^u t^(1-a) dt - (u - 1)] / (1 - a)
                let power_integral = ln * exprel((2.0 - a) * ln);
                (u - 1.0) + (power_integral - (u - 1.0)) / (1.0 - a)
            }
            Divergence::Jsd => {
                let spec = *self;
                integrate(
                    move |t| 2.0 - spec.generator_deriv(1.0 / t).unwrap_or(f64::NAN),
                    1.0,
                    u,
                    QUAD_TOL,
                )?
                .value
            }
        };
        Ok(BackwardValue { h, h1 })
    }

    /// `g''(u) = f'(u)/u + f''(u)`: the curvature of the generator that on-policy
    /// backward-policy updates would have to minimize. Negative values mean no
    /// valid f-divergence reproduces those updates.
    pub fn onpolicy_backward_curvature(&self, u: f64) -> Result<f64> {
        let g = self.generator(u)?;
        Ok(g.f1 / u + g.f2)
    }
}

fn check_positive(what: &'static str, u: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if u <= 0.0 {
        return Err(Error::Domain { what, value: u });
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Alpha generator without snapping; stable for alpha near 0 and near 1.
pub(crate) fn alpha_generator(a: f64, u: f64) -> GeneratorValue {
    let ln = u.ln();
    let f = if a >= 0.5 {
        // u (u^(a-1) - 1) / (a (a-1)) + (a-1)/a (u-1)
        u * ln * exprel((a - 1.0) * ln) / a + (a - 1.0) / a * (u - 1.0)
    } else {
        // [(u^a - 1)/a + (a - 2)(u - 1)] / (a - 1)
        (ln * exprel(a * ln) + (a - 2.0) * (u - 1.0)) / (a - 1.0)
    };
    GeneratorValue {
        f,
        f1: ln * exprel((a - 1.0) * ln) + 1.0,
        f2: ((a - 2.0) * ln).exp(),
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Alpha(a) => write!(f, "alpha:{a}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Divergence {
    type Err = Error;

    /// Accepts the lowercase names; alpha carries its parameter as `alpha:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let d = match s {
            "reverse_kl" => Divergence::ReverseKl,
            "forward_kl" => Divergence::ForwardKl,
            "pearson" => Divergence::Pearson,
            "neyman" => Divergence::Neyman,
            "hellinger" => Divergence::Hellinger,
            "tv" => Divergence::TotalVariation,
            "jsd" => Divergence::Jsd,
            _ => {
                let param = s
                    .strip_prefix("alpha:")
                    .or_else(|| s.strip_prefix("alpha="))
                    .ok_or_else(|| Error::Config(format!("unknown divergence `{s}`")))?;
                let a: f64 = param
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad alpha parameter `{param}`")))?;
                if !a.is_finite() {
                    return Err(Error::Config(format!("bad alpha parameter `{param}`")));
                }
                Divergence::alpha(a)
            }
        };
        Ok(d)
    }
}

impl Serialize for Divergence {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Divergence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
