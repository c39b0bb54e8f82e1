//! Smooth compactly supported test functions with exact derivatives.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::region::BoxRegion;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync>;

/// `f = offset + g` with `g` smooth and supported in `support`.
///
/// `offset` is the value of `f` far away and at Δ; it is zero for
/// compactly supported functions.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub dim: usize,
    value: ScalarFn,
    gradient: GradientFn,
    hessian: HessianFn,
    pub support: BoxRegion,
    /// Upper bound on the operator norm of the Hessian.
    pub hessian_bound: f64,
    pub offset: f64,
    /// Smallest length over which `f` varies appreciably.
    pub length_scale: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("support", &self.support)
            .field("offset", &self.offset)
            .finish()
    }
}

/// Profile `phi(s) = exp(1 - 1/(1 - s))` for `s < 1`, zero beyond, and its
/// first two derivatives in `s`.
fn bump_profile(s: f64) -> (f64, f64, f64) {
    if s >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let u = 1.0 - s;
    let v = (1.0 - 1.0 / u).exp();
    let u2 = u * u;
    (v, -v / u2, v * (1.0 - 2.0 * u) / (u2 * u2))
}

impl TestFunction {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        value: ScalarFn,
        gradient: GradientFn,
        hessian: HessianFn,
        support: BoxRegion,
        hessian_bound: f64,
        offset: f64,
        length_scale: f64,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            value,
            gradient,
            hessian,
            support,
            hessian_bound,
            offset,
            length_scale,
        }
    }

    /// `exp(1 - 1/(1 - s))` with `s = Σ (x_i - c_i)^2 / r_i^2`; equals 1 at the
    /// center and vanishes outside the ellipsoid with semi-axes `radii`.
    pub fn bump(center: Vec<f64>, radii: Vec<f64>) -> Result<Self> {
        if center.len() != radii.len() || center.is_empty() {
            return Err(Error::Validation("bump center and radii must share a positive dimension".into()));
        }
        if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Validation("bump radii must be positive".into()));
        }
        let dim = center.len();
        let support = BoxRegion::new(
            center.iter().zip(&radii).map(|(c, r)| c - r).collect(),
            center.iter().zip(&radii).map(|(c, r)| c + r).collect(),
        )?;
        let rmin = radii.iter().cloned().fold(f64::INFINITY, f64::min);
        // |∇s|^2 <= 4 s / rmin^2 and |∂²s| <= 2 / rmin^2.
        let hessian_bound = (0..10_000)
            .map(|k| {
                let s = k as f64 / 10_000.0;
                let (_, d1, d2) = bump_profile(s);
                4.0 * s * d2.abs() + 2.0 * d1.abs()
            })
            .fold(0.0, f64::max)
            * 1.01
            / (rmin * rmin);
        let name = format!("bump(c={center:?}, r={radii:?})");
        let (c0, r0) = (center.clone(), radii.clone());
        let s_of = move |x: &[f64], c: &[f64], r: &[f64]| -> f64 {
            x.iter().zip(c).zip(r).map(|((x, c), r)| ((x - c) / r).powi(2)).sum()
        };
        let value: ScalarFn = Arc::new(move |x: &[f64]| bump_profile(s_of(x, &c0, &r0)).0);
        let (c1, r1) = (center.clone(), radii.clone());
        let gradient: GradientFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
            let (_, d1, _) = bump_profile(s_of(x, &c1, &r1));
            for i in 0..out.len() {
                out[i] = d1 * 2.0 * (x[i] - c1[i]) / (r1[i] * r1[i]);
            }
        });
        let (c2, r2) = (center, radii);
        let hessian: HessianFn = Arc::new(move |x: &[f64], out: &mut DMatrix<f64>| {
            let (_, d1, d2) = bump_profile(s_of(x, &c2, &r2));
            let n = x.len();
            for i in 0..n {
                let gi = 2.0 * (x[i] - c2[i]) / (r2[i] * r2[i]);
                for j in 0..n {
                    let gj = 2.0 * (x[j] - c2[j]) / (r2[j] * r2[j]);
                    let mut v = d2 * gi * gj;
                    if i == j {
                        v += d1 * 2.0 / (r2[i] * r2[i]);
                    }
                    out[(i, j)] = v;
                }
            }
        });
        Ok(Self {
            name,
            dim,
            value,
            gradient,
            hessian,
            support,
            hessian_bound,
            offset: 0.0,
            length_scale: rmin,
        })
    }

    pub fn radial_bump(center: Vec<f64>, radius: f64) -> Result<Self> {
        let d = center.len();
        Self::bump(center, vec![radius; d])
    }

    /// `alpha f + beta g`.
    pub fn combine(alpha: f64, f: &TestFunction, beta: f64, g: &TestFunction) -> Result<Self> {
        if f.dim != g.dim {
            return Err(Error::Validation("cannot combine test functions of different dimension".into()));
        }
        let support = BoxRegion::new(
            f.support.lower.iter().zip(&g.support.lower).map(|(a, b)| a.min(*b)).collect(),
            f.support.upper.iter().zip(&g.support.upper).map(|(a, b)| a.max(*b)).collect(),
        )?;
        let (fv, gv) = (f.value.clone(), g.value.clone());
        let (fg, gg) = (f.gradient.clone(), g.gradient.clone());
        let (fh, gh) = (f.hessian.clone(), g.hessian.clone());
        let dim = f.dim;
        Ok(Self {
            name: format!("{alpha}*{} + {beta}*{}", f.name, g.name),
            dim,
            value: Arc::new(move |x: &[f64]| alpha * fv(x) + beta * gv(x)),
            gradient: Arc::new(move |x: &[f64], out: &mut [f64]| {
                let mut tmp = vec![0.0; out.len()];
                fg(x, out);
                gg(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o = alpha * *o + beta * t;
                }
            }),
            hessian: Arc::new(move |x: &[f64], out: &mut DMatrix<f64>| {
                let mut tmp = DMatrix::zeros(dim, dim);
                fh(x, out);
                gh(x, &mut tmp);
                *out *= alpha;
                *out += tmp * beta;
            }),
            support,
            hessian_bound: alpha.abs() * f.hessian_bound + beta.abs() * g.hessian_bound,
            offset: alpha * f.offset + beta * g.offset,
            length_scale: f.length_scale.min(g.length_scale),
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    /// `f(Δ)`.
    pub fn at_cemetery(&self) -> f64 {
        self.offset
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        (self.gradient)(x, &mut g);
        g
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    pub fn hessian_into(&self, x: &[f64], out: &mut DMatrix<f64>) {
        (self.hessian)(x, out)
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        (self.hessian)(x, &mut h);
        h
    }

    /// Largest distance from `a` to a point of the support box.
    pub fn support_reach(&self, a: &[f64]) -> f64 {
        a.iter()
            .zip(self.support.lower.iter().zip(&self.support.upper))
            .map(|(a, (l, u))| (a - l).abs().max((u - a).abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest deviation of the supplied derivatives from central finite
    /// differences at `points`; fails above `tol`.
    pub fn verify_derivatives(&self, points: &[Vec<f64>], tol: f64) -> Result<f64> {
        let h = 1e-5 * self.length_scale.max(1e-3);
        let d = self.dim;
        let mut worst = 0.0_f64;
        for x in points {
            let g = self.gradient(x);
            let hess = self.hessian(x);
            let mut xp = x.clone();
            for i in 0..d {
                xp[i] = x[i] + h;
                let fp = self.value(&xp);
                let gp = self.gradient(&xp);
                xp[i] = x[i] - h;
                let fm = self.value(&xp);
                let gm = self.gradient(&xp);
                xp[i] = x[i];
                worst = worst.max(((fp - fm) / (2.0 * h) - g[i]).abs());
                for j in 0..d {
                    worst = worst.max(((gp[j] - gm[j]) / (2.0 * h) - hess[(j, i)]).abs());
                }
            }
            if !self.support.contains(x) {
                worst = worst.max((self.value(x) - self.offset).abs());
                worst = worst.max(g.iter().fold(0.0, |m, v| m.max(v.abs())));
            }
        }
        if worst > tol {
            Err(Error::Validation(format!(
                "derivatives of {} disagree with finite differences by {worst:e}",
                self.name
            )))
        } else {
            Ok(worst)
        }
    }
}

/// Radial bumps of radius 1, 2 and 4 centered at the origin.
pub fn default_test_functions(dim: usize) -> Vec<TestFunction> {
    [1.0, 2.0, 4.0]
        .iter()
        .map(|&r| TestFunction::radial_bump(vec![0.0; dim], r).expect("valid bump"))
        .collect()
}

/// A test function for the jump condition together with the radius of the
/// neighbourhood of each base point on which it is declared to vanish.
#[derive(Debug, Clone)]
pub struct JumpTest {
    pub f: TestFunction,
    pub neighborhood: f64,
}

/// Radial bumps at dyadic scales placed off `k`, so they vanish near it.
pub fn default_jump_tests(k: &BoxRegion) -> Vec<JumpTest> {
    let d = k.dim();
    let reach = k.max_norm();
    let mut out = Vec::new();
    for j in 0..3 {
        let scale = 2f64.powi(j);
        for sign in [1.0, -1.0] {
            let mut c = vec![0.0; d];
            c[0] = sign * (reach + scale);
            out.push(JumpTest {
                f: TestFunction::radial_bump(c, 0.5 * scale).expect("valid bump"),
                neighborhood: 0.25 * scale,
            });
        }
    }
    out
}
