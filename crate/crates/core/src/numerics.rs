//! Quadrature and small special-function helpers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Tolerances for adaptive quadrature.
///
/// A call succeeds once the summed error estimate is below
/// `abs_tol + rel_tol * |estimate|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of subintervals per one-dimensional integral.
    pub max_intervals: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            max_intervals: 2000,
        }
    }
}

impl QuadratureConfig {
    pub fn tight() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_intervals: 4000,
        }
    }

    /// The same rule with tolerances divided by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        Self {
            abs_tol: self.abs_tol / factor,
            rel_tol: self.rel_tol / factor,
            max_intervals: (self.max_intervals as f64 * factor.max(1.0)) as usize,
        }
    }

    pub fn tolerance_for(&self, value: f64) -> f64 {
        self.abs_tol + self.rel_tol * value.abs()
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
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

fn kronrod15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resg = fc * WG[3];
    let mut resk = fc * WGK[7];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let hl = half.abs();
    let value = resk * half;
    resasc *= hl;
    resabs *= hl;
    let mut error = ((resk - resg) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (1.0_f64).min((200.0 * error / resasc).powf(1.5));
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * resabs);
    }
    if !value.is_finite() || !error.is_finite() {
        return Err(Error::Overflow(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    Ok(Segment { a, b, value, error })
}

/// Adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Interior `breaks` are honoured as forced subdivision points, which is how
/// callers deal with known kinks or jumps in the integrand.
pub fn integrate(
    f: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate(f, b, a, breaks, cfg).map(|v| -v);
    }
    let mut points = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    points.extend(inner);
    points.push(b);

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in points.windows(2) {
        let s = kronrod15(f, w[0], w[1])?;
        total += s.value;
        total_err += s.error;
        heap.push(s);
    }
    let mut previous = total;
    loop {
        if total_err <= cfg.tolerance_for(total) {
            return Ok(total);
        }
        if heap.len() >= cfg.max_intervals {
            return Err(Error::NonConvergent {
                estimate: total,
                previous,
                error: total_err,
                tolerance: cfg.tolerance_for(total),
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            return Err(Error::NonConvergent {
                estimate: total,
                previous,
                error: total_err,
                tolerance: cfg.tolerance_for(total),
            });
        }
        let left = kronrod15(f, worst.a, mid)?;
        let right = kronrod15(f, mid, worst.b)?;
        previous = total;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // Guard against drift from repeated incremental updates.
        if heap.len() % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
}

/// Surface measure of the unit sphere in R^d, `2 pi^{d/2} / Gamma(d/2)`.
///
/// Computed through log-Gamma so that large `d` does not overflow.
pub fn unit_sphere_area(d: usize) -> f64 {
    ln_unit_sphere_area(d).exp()
}

/// Natural log of [`unit_sphere_area`].
pub fn ln_unit_sphere_area(d: usize) -> f64 {
    assert!(d >= 1, "dimension must be positive");
    let half = d as f64 / 2.0;
    std::f64::consts::LN_2 + half * std::f64::consts::PI.ln() - ln_gamma(half)
}

/// Integral of `g` over the unit sphere of R^d against surface measure.
///
/// Uses the recursion `S^{d-1} = [0, pi] x S^{d-2}` with weight
/// `sin^{d-2}(theta)`; the base case S^0 is the two points {+1, -1}.
pub fn sphere_integral(
    d: usize,
    g: &dyn Fn(&[f64]) -> f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    assert!(d >= 1);
    if d == 1 {
        return Ok(g(&[1.0]) + g(&[-1.0]));
    }
    let mut failure = None;
    let inner_cfg = QuadratureConfig {
        abs_tol: cfg.abs_tol / std::f64::consts::PI,
        ..*cfg
    };
    let mut outer = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let weight = s.powi(d as i32 - 2);
        let lifted = |omega: &[f64]| {
            let mut p = Vec::with_capacity(d);
            p.push(c);
            p.extend(omega.iter().map(|w| s * w));
            g(&p)
        };
        match sphere_integral(d - 1, &lifted, &inner_cfg) {
            Ok(v) => weight * v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let value = integrate(&mut outer, 0.0, std::f64::consts::PI, &[], cfg)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
