//! Scalar numerical routines: adaptive Gauss–Kronrod quadrature, compensated
//! summation, bracketed root finding and a golden-section minimizer.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Absolute tolerance used by every quadrature in the crate.
pub const QUAD_TOL: f64 = 1e-10;

const MAX_INTERVALS: usize = 4000;

// 15-point Kronrod abscissae (descending, last is the midpoint) and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// 7-point Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    xs.into_iter().collect::<KahanSum>().value()
}

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// `log(mean(exp(scale * x)))`, shifted by the maximum so it never overflows.
pub fn log_mean_exp(xs: &[f64], scale: f64) -> f64 {
    let max = xs
        .iter()
        .map(|&x| scale * x)
        .fold(f64::NEG_INFINITY, f64::max);
    let s = compensated_sum(xs.iter().map(|&x| (scale * x - max).exp()));
    max + (s / xs.len() as f64).ln()
}

/// Median with the midpoint rule for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Globally adaptive G7–K15 quadrature of `f` over `[a, b]` (either order).
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate falls below `abs_tol`. Returns the value and the error estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::NonFinite("integrate"));
    }
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            abs_error: 0.0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };

    let mut heap = BinaryHeap::new();
    heap.push(kronrod15(&f, lo, hi));
    loop {
        let total_err: f64 = compensated_sum(heap.iter().map(|s| s.error));
        let value = compensated_sum(heap.iter().map(|s| s.value));
        if !value.is_finite() {
            return Err(Error::NonFinite("integrand"));
        }
        if total_err <= abs_tol {
            return Ok(Quadrature {
                value: sign * value,
                abs_error: total_err,
            });
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Numeric {
                what: "adaptive quadrature",
                residual: total_err,
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at double precision
            return Err(Error::Numeric {
                what: "adaptive quadrature",
                residual: total_err,
            });
        }
        heap.push(kronrod15(&f, worst.a, mid));
        heap.push(kronrod15(&f, mid, worst.b));
    }
}

/// Bisection on a bracket `[lo, hi]` where `g` is increasing with
/// `g(lo) <= 0 <= g(hi)`. Stops when the bracket width is below `width_tol`.
pub fn bisect_increasing<G: Fn(f64) -> f64>(
    g: G,
    mut lo: f64,
    mut hi: f64,
    width_tol: f64,
) -> Result<(f64, f64)> {
    let (glo, ghi) = (g(lo), g(hi));
    if !(glo <= 0.0 && ghi >= 0.0) {
        return Err(Error::Numeric {
            what: "bracketing",
            residual: glo.abs().min(ghi.abs()),
        });
    }
    for _ in 0..300 {
        if hi - lo <= width_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimizer of a unimodal `h` on `[lo, hi]`,
/// shrinking the bracket to `width_tol`. Returns the final bracket.
pub fn golden_section<H: Fn(f64) -> f64>(
    h: H,
    mut lo: f64,
    mut hi: f64,
    width_tol: f64,
) -> (f64, f64) {
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut hc = h(c);
    let mut hd = h(d);
    while hi - lo > width_tol {
        if hc < hd {
            hi = d;
            d = c;
            hd = hc;
            c = hi - INV_PHI * (hi - lo);
            hc = h(c);
        } else {
            lo = c;
            c = d;
            hc = hd;
            d = lo + INV_PHI * (hi - lo);
            hd = h(d);
        }
        if c <= lo || d >= hi {
            break;
        }
    }
    (lo, hi)
}

/// `(e^x - 1) / x`, continuous at 0.
pub fn exprel(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 + x * (0.5 + x * (1.0 / 6.0 + x / 24.0))
    } else {
        x.exp_m1() / x
    }
}

/// `(e^x - 1 - x) / x^2`, continuous at 0 where it equals 1/2.
pub fn exprel2(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        // Taylor series; truncation below 1e-17 relative at |x| < 1e-3.
        0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0)))
    } else {
        (x.exp_m1() - x) / (x * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_of_polynomials_and_transcendentals() {
        let q = integrate(|x| x * x, 0.0, 1.0, 1e-12).unwrap();
        assert!((q.value - 1.0 / 3.0).abs() < 1e-14);
        let q = integrate(f64::sin, 0.0, 5.0 * std::f64::consts::PI, 1e-10).unwrap();
        assert!((q.value - 2.0).abs() < 1e-10);
        let q = integrate(f64::exp, 3.0, 0.0, 1e-10).unwrap();
        assert!((q.value + (3f64.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn quadrature_handles_endpoint_kinks() {
        let q = integrate(|t: f64| t.signum(), 0.0, -2.5, 1e-10).unwrap();
        assert!((q.value - 2.5).abs() < 1e-12);
        let q = integrate(|t: f64| t.abs(), -1.0, 2.0, 1e-10).unwrap();
        assert!((q.value - 2.5).abs() < 1e-10);
    }

    #[test]
    fn quadrature_reports_nonconvergence() {
        let err = integrate(
            |x: f64| ((x * 1e6).fract() < 0.5) as u8 as f64,
            0.0,
            1.0,
            1e-12,
        );
        assert!(matches!(err, Err(Error::Numeric { .. })), "{err:?}");
    }

    #[test]
    fn log_mean_exp_is_shift_safe() {
        let xs = [1000.0, 1000.0 + 3f64.ln()];
        assert!((log_mean_exp(&xs, 1.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_mean_exp(&[0.0, 3f64.ln()], 1.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn median_tie_rule() {
        assert_eq!(median(&[10.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 10.0]), 3.0);
    }

    #[test]
    fn bisection_and_golden_section() {
        let (lo, hi) = bisect_increasing(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((0.5 * (lo + hi) - 2f64.cbrt()).abs() < 1e-13);
        let (lo, hi) = golden_section(|x| (x - 0.3).powi(2), -1.0, 1.0, 1e-6);
        assert!((0.5 * (lo + hi) - 0.3).abs() < 1e-6);
        assert!(bisect_increasing(|x| x + 5.0, 0.0, 1.0, 1e-3).is_err());
    }

    #[test]
    fn exprel_series_matches_direct_form() {
        for &x in &[-2e-3f64, -9.9e-4, 5e-4, 1.1e-3, 0.3, -4.0] {
            let direct = (x.exp_m1() - x) / (x * x);
            assert!((exprel2(x) - direct).abs() < 1e-9, "{x}");
            assert!((exprel(x) - x.exp_m1() / x).abs() < 1e-12);
        }
        assert_eq!(exprel2(0.0), 0.5);
    }
}
