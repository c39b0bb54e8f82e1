//! Evaluation of Lévy-type operators and checkers for their convergence.

mod testfn;

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::QuadratureConfig;
use crate::region::BoxRegion;
use crate::rng::{self, Domain};
use crate::triplet::{norm, AtomLocation, CompensationFunction, JumpMeasure, LevyTriplet, TripletField};

pub use testfn::{default_jump_tests, default_test_functions, GradientFn, HessianFn, JumpTest, ScalarFn, TestFunction};

/// Jumps shorter than this multiple of the test function's length scale use
/// the integral form of the Taylor remainder, which avoids cancellation in
/// `f(a+h) - f(a)`.
const REMAINDER_FRACTION: f64 = 0.1;

/// 8-point Gauss-Legendre rule on [0, 1].
const GL_X: [f64; 8] = [
    0.019855071751231912,
    0.10166676129318664,
    0.2372337950418355,
    0.4082826787521751,
    0.5917173212478248,
    0.7627662049581645,
    0.8983332387068134,
    0.9801449282487681,
];
const GL_W: [f64; 8] = [
    0.050614268145188344,
    0.11119051722668717,
    0.15685332293894352,
    0.18134189168918088,
    0.18134189168918088,
    0.15685332293894352,
    0.11119051722668717,
    0.050614268145188344,
];

/// `f(a+h) - f(a) - h·∇f(a) = ∫_0^1 (1-t) hᵀ ∂²f(a+th) h dt`.
fn taylor_remainder(f: &TestFunction, a: &[f64], h: &[f64], hess: &mut DMatrix<f64>, x: &mut [f64]) -> f64 {
    let d = a.len();
    let mut total = 0.0;
    for (t, w) in GL_X.iter().zip(&GL_W) {
        for i in 0..d {
            x[i] = a[i] + t * h[i];
        }
        f.hessian_into(x, hess);
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += h[i] * hess[(i, j)] * h[j];
            }
        }
        total += w * (1.0 - t) * q;
    }
    total
}

/// `T_{χ,a}(δ, γ, ν) f` with `f(Δ) = f.offset`.
///
/// Checks H2(a) first; quadrature failures carry the last two estimates.
pub fn apply_operator(
    triplet: &LevyTriplet,
    chi: &CompensationFunction,
    f: &TestFunction,
    a: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if a.len() != triplet.dim() || f.dim != triplet.dim() {
        return Err(Error::Validation("dimension mismatch between triplet, test function and point".into()));
    }
    triplet.validate()?;
    if let JumpMeasure::Atoms(_) = &triplet.jumps {
        triplet.jumps.validate_at(a, cfg)?;
    }
    apply_operator_unchecked(triplet, chi, f, a, cfg)
}

/// [`apply_operator`] without the hypothesis checks.
pub fn apply_operator_unchecked(
    triplet: &LevyTriplet,
    chi: &CompensationFunction,
    f: &TestFunction,
    a: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let d = a.len();
    let grad = f.gradient(a);
    let hess = f.hessian(a);
    let mut value = 0.0;
    for i in 0..d {
        value += triplet.drift[i] * grad[i];
        for j in 0..d {
            value += 0.5 * triplet.gamma[(i, j)] * hess[(i, j)];
        }
    }
    Ok(value + jump_part(&triplet.jumps, chi, f, a, &grad, cfg)?)
}

fn jump_part(
    nu: &JumpMeasure,
    chi: &CompensationFunction,
    f: &TestFunction,
    a: &[f64],
    grad: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if nu.is_zero() {
        return Ok(0.0);
    }
    let d = a.len();
    let fa = f.value(a);
    if let JumpMeasure::Atoms(atoms) = nu {
        let mut total = 0.0;
        let mut c = vec![0.0; d];
        for atom in atoms {
            match &atom.location {
                AtomLocation::Point(b) => {
                    chi.eval(a, Some(b), &mut c);
                    total += atom.mass * (f.value(b) - fa - dot(&c, grad));
                }
                AtomLocation::Cemetery => {
                    chi.eval(a, None, &mut c);
                    total += atom.mass * (f.offset - fa - dot(&c, grad));
                }
            }
        }
        return Ok(total);
    }
    let r_taylor = REMAINDER_FRACTION * f.length_scale;
    let single = |h: &[f64]| -> f64 {
        let mut c = vec![0.0; d];
        chi.eval_jump(a, h, &mut c);
        if norm(h) < r_taylor {
            let mut hs = DMatrix::zeros(d, d);
            let mut x = vec![0.0; d];
            let rem = taylor_remainder(f, a, h, &mut hs, &mut x);
            let lin: f64 = h.iter().zip(&c).zip(grad).map(|((h, c), g)| (h - c) * g).sum();
            rem + lin
        } else {
            let b: Vec<f64> = a.iter().zip(h).map(|(a, h)| a + h).collect();
            f.value(&b) - fa - dot(&c, grad)
        }
    };
    let mut breaks = vec![r_taylor, f.support.distance(a), f.support_reach(a)];
    if let Some(r) = chi.discontinuity_radius() {
        breaks.push(r);
    }
    let mut at_cemetery_chi = vec![0.0; d];
    chi.eval(a, None, &mut at_cemetery_chi);
    let at_cemetery = f.offset - fa - dot(&at_cemetery_chi, grad);
    if nu.is_radial() {
        // ν is invariant under h -> -h, so only the even part of the integrand counts.
        let sym = |h: &[f64]| {
            let m: Vec<f64> = h.iter().map(|v| -v).collect();
            0.5 * (single(h) + single(&m))
        };
        nu.integrate(a, &sym, at_cemetery, &breaks, cfg)
    } else {
        nu.integrate(a, &single, at_cemetery, &breaks, cfg)
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(x, y)| x * y).sum()
}

/// `∫ (χ_to(a,b) - χ_from(a,b)) ν(db)`: adding it to δ under `χ_from` gives
/// the drift that represents the same operator under `χ_to`.
pub fn compensation_shift(
    nu: &JumpMeasure,
    a: &[f64],
    from: &CompensationFunction,
    to: &CompensationFunction,
    cfg: &QuadratureConfig,
) -> Result<Vec<f64>> {
    let d = a.len();
    let mut out = vec![0.0; d];
    if nu.is_zero() {
        return Ok(out);
    }
    let diff = |b: Option<&[f64]>, i: usize| -> f64 {
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        to.eval(a, b, &mut x);
        from.eval(a, b, &mut y);
        x[i] - y[i]
    };
    if nu.is_radial() && from.is_translation_invariant() && to.is_translation_invariant() {
        // Both compensations are odd in h and ν is symmetric.
        return Ok(out);
    }
    let mut breaks = vec![1.0];
    for chi in [from, to] {
        if let Some(r) = chi.discontinuity_radius() {
            breaks.push(r);
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = nu.integrate(
            a,
            &|h| {
                let b: Vec<f64> = a.iter().zip(h).map(|(a, h)| a + h).collect();
                diff(Some(&b), i)
            },
            diff(None, i),
            &breaks,
            cfg,
        )?;
    }
    Ok(out)
}

/// `γ_ij + ∫ χ_i χ_j ν(db)`.
pub fn carre_matrix(
    triplet: &LevyTriplet,
    chi: &CompensationFunction,
    a: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Vec<Vec<f64>>> {
    let d = a.len();
    let mut m = vec![vec![0.0; d]; d];
    let mut breaks = vec![1.0];
    if let Some(r) = chi.discontinuity_radius() {
        breaks.push(r);
    }
    let mut cem = vec![0.0; d];
    chi.eval(a, None, &mut cem);
    for i in 0..d {
        for j in i..d {
            let integral = if triplet.jumps.is_zero() {
                0.0
            } else if triplet.jumps.is_radial() && chi.is_translation_invariant() && i != j {
                // Odd in h_i for a rotation invariant ν.
                0.0
            } else {
                triplet.jumps.integrate(
                    a,
                    &|h| {
                        let mut c = vec![0.0; d];
                        chi.eval_jump(a, h, &mut c);
                        c[i] * c[j]
                    },
                    cem[i] * cem[j],
                    &breaks,
                    cfg,
                )?
            };
            m[i][j] = triplet.gamma[(i, j)] + integral;
            m[j][i] = m[i][j];
        }
    }
    Ok(m)
}

/// `∫ f(b) ν(db)` for `f` vanishing near `a`.
pub fn jump_functional(nu: &JumpMeasure, f: &TestFunction, a: &[f64], cfg: &QuadratureConfig) -> Result<f64> {
    let breaks = [f.support.distance(a), f.support_reach(a)];
    nu.integrate(
        a,
        &|h| {
            let b: Vec<f64> = a.iter().zip(h).map(|(a, h)| a + h).collect();
            f.value(&b)
        },
        f.offset,
        &breaks,
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedGap {
    pub name: String,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub index: usize,
    /// `sup_K |δ_n - δ|`.
    pub drift_gap: f64,
    /// Per test function, `sup |∫ f dν_n - ∫ f dν|` over grid points where
    /// the function vanishes nearby.
    pub jump_gap: Vec<NamedGap>,
    /// Per entry, `sup_K |(γ_n + ∫χχ dν_n) - (γ + ∫χχ dν)|`.
    pub carre_gap: Vec<Vec<f64>>,
    pub grid_points: usize,
}

#[derive(Debug, Clone)]
pub struct GapOptions {
    pub per_axis: usize,
    pub max_points: usize,
    pub quadrature: QuadratureConfig,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            per_axis: 64,
            max_points: 100_000,
            quadrature: QuadratureConfig::default(),
        }
    }
}

struct PointGaps {
    drift: f64,
    jumps: Vec<f64>,
    carre: Vec<Vec<f64>>,
}

fn check_vanishing(tests: &[JumpTest], grid: &[Vec<f64>]) -> Result<()> {
    for t in tests {
        for a in grid {
            if t.f.offset != 0.0 || t.f.support.distance(a) < t.neighborhood {
                return Err(Error::Precondition(format!(
                    "test function {} does not vanish on a {}-neighbourhood of {a:?}",
                    t.f.name, t.neighborhood
                )));
            }
        }
    }
    Ok(())
}

fn gaps_at(
    field: &TripletField,
    limit: &TripletField,
    chi: &CompensationFunction,
    tests: &[JumpTest],
    a: &[f64],
    cfg: &QuadratureConfig,
) -> Result<PointGaps> {
    let tn = field.at(a);
    let t = limit.at(a);
    let drift = norm(&tn.drift.iter().zip(&t.drift).map(|(x, y)| x - y).collect::<Vec<_>>());
    let mut jumps = Vec::with_capacity(tests.len());
    for jt in tests {
        let x = jump_functional(&tn.jumps, &jt.f, a, cfg)?;
        let y = jump_functional(&t.jumps, &jt.f, a, cfg)?;
        jumps.push((x - y).abs());
    }
    let cn = carre_matrix(&tn, chi, a, cfg)?;
    let c = carre_matrix(&t, chi, a, cfg)?;
    let carre = cn
        .iter()
        .zip(&c)
        .map(|(r1, r2)| r1.iter().zip(r2).map(|(x, y)| (x - y).abs()).collect())
        .collect();
    Ok(PointGaps { drift, jumps, carre })
}

/// One report per field in `fields`, each gap maximized over a
/// deterministic grid on `k`.
pub fn convergence_gaps(
    fields: &[TripletField],
    limit: &TripletField,
    chi: &CompensationFunction,
    k: &BoxRegion,
    tests: &[JumpTest],
    opts: &GapOptions,
) -> Result<Vec<ConvergenceReport>> {
    let grid = k.grid(opts.per_axis, opts.max_points);
    check_vanishing(tests, &grid)?;
    let d = k.dim();
    fields
        .iter()
        .enumerate()
        .map(|(index, field)| {
            let per_point: Vec<PointGaps> = grid
                .par_iter()
                .map(|a| gaps_at(field, limit, chi, tests, a, &opts.quadrature))
                .collect::<Result<_>>()?;
            let mut report = ConvergenceReport {
                index,
                drift_gap: 0.0,
                jump_gap: tests
                    .iter()
                    .map(|t| NamedGap {
                        name: t.f.name.clone(),
                        gap: 0.0,
                    })
                    .collect(),
                carre_gap: vec![vec![0.0; d]; d],
                grid_points: grid.len(),
            };
            for p in &per_point {
                report.drift_gap = report.drift_gap.max(p.drift);
                for (g, v) in report.jump_gap.iter_mut().zip(&p.jumps) {
                    g.gap = g.gap.max(*v);
                }
                for i in 0..d {
                    for j in 0..d {
                        report.carre_gap[i][j] = report.carre_gap[i][j].max(p.carre[i][j]);
                    }
                }
            }
            Ok(report)
        })
        .collect()
}

/// One-step kernel of a discrete scheme, scaled by the inverse time step:
/// `(n, a) -> ε_n^{-1} μ_n(a)` restricted to `b ≠ a`.
pub type ScaledKernel = Arc<dyn Fn(usize, &[f64]) -> JumpMeasure + Send + Sync>;

/// Gaps of a discrete scheme against `limit`. The scheme's kernel induces the
/// triplet `(∫χ dν_n, 0, ν_n)` with `ν_n = ε_n^{-1} μ_n`.
pub fn discrete_scheme_gaps(
    ns: &[usize],
    scaled_kernel: ScaledKernel,
    limit: &TripletField,
    chi: &CompensationFunction,
    k: &BoxRegion,
    tests: &[JumpTest],
    opts: &GapOptions,
) -> Result<Vec<ConvergenceReport>> {
    let d = k.dim();
    let cfg = opts.quadrature;
    let fields: Vec<TripletField> = ns
        .iter()
        .map(|&n| {
            let kernel = Arc::clone(&scaled_kernel);
            let chi = chi.clone();
            TripletField::from_fn(d, true, move |a| {
                let nu = kernel(n, a);
                let drift = first_moment(&nu, &chi, a, &cfg).unwrap_or_else(|_| vec![f64::NAN; a.len()]);
                LevyTriplet::new_unchecked(drift, DMatrix::zeros(a.len(), a.len()), nu)
            })
        })
        .collect();
    convergence_gaps(&fields, limit, chi, k, tests, opts)
}

/// `∫ χ(a, b) ν(db)`.
pub fn first_moment(nu: &JumpMeasure, chi: &CompensationFunction, a: &[f64], cfg: &QuadratureConfig) -> Result<Vec<f64>> {
    let d = a.len();
    if nu.is_zero() || (nu.is_radial() && chi.is_translation_invariant()) {
        return Ok(vec![0.0; d]);
    }
    let mut cem = vec![0.0; d];
    chi.eval(a, None, &mut cem);
    let mut breaks = vec![1.0];
    if let Some(r) = chi.discontinuity_radius() {
        breaks.push(r);
    }
    (0..d)
        .map(|i| {
            nu.integrate(
                a,
                &|h| {
                    let mut c = vec![0.0; d];
                    chi.eval_jump(a, h, &mut c);
                    c[i]
                },
                cem[i],
                &breaks,
                cfg,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmpViolation {
    pub function: String,
    pub argmax: Vec<f64>,
    pub max_value: f64,
    pub operator_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmpReport {
    pub passed: bool,
    pub checked: usize,
    pub violations: Vec<PmpViolation>,
    /// Per function: located maximizer, `f` there and the operator value.
    pub maxima: Vec<(String, Vec<f64>, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PmpOptions {
    pub starts: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub quadrature: QuadratureConfig,
}

impl Default for PmpOptions {
    fn default() -> Self {
        Self {
            starts: 32,
            seed: 0,
            tolerance: 1e-7,
            quadrature: QuadratureConfig::default(),
        }
    }
}

/// Multi-start gradient ascent with Armijo backtracking inside the support.
fn locate_max(f: &TestFunction, starts: usize, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = rng::stream(seed, Domain::Diagnostic, 1);
    let mut best = (f.support.sample(&mut rng), f64::NEG_INFINITY);
    for s in 0..starts.max(1) {
        let mut x = if s == 0 {
            f.support
                .lower
                .iter()
                .zip(&f.support.upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect()
        } else {
            f.support.sample(&mut rng)
        };
        let mut fx = f.value(&x);
        let mut step = f.length_scale;
        for _ in 0..500 {
            let g = f.gradient(&x);
            let gn2: f64 = g.iter().map(|v| v * v).sum();
            if gn2.sqrt() < 1e-13 {
                break;
            }
            let mut t = step / gn2.sqrt();
            let mut moved = false;
            for _ in 0..60 {
                let y: Vec<f64> = x.iter().zip(&g).map(|(x, g)| x + t * g).collect();
                let fy = f.value(&y);
                if fy >= fx + 1e-4 * t * gn2 {
                    x = y;
                    fx = fy;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
            step = (t * gn2.sqrt() * 2.0).min(f.length_scale);
        }
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Positive maximum principle spot check: at the located maximum `a₀` of each
/// `f` with `f(a₀) >= 0`, the operator value must not exceed the tolerance.
pub fn pmp_spot_check(
    field: &TripletField,
    chi: &CompensationFunction,
    tests: &[TestFunction],
    opts: &PmpOptions,
) -> Result<PmpReport> {
    if tests.is_empty() {
        return Err(Error::Precondition("positive maximum principle check needs test functions".into()));
    }
    let mut violations = Vec::new();
    let mut maxima = Vec::new();
    let mut checked = 0;
    for (i, f) in tests.iter().enumerate() {
        let (a0, fmax) = locate_max(f, opts.starts, opts.seed.wrapping_add(i as u64));
        if fmax < 0.0 {
            maxima.push((f.name.clone(), a0, fmax, f64::NAN));
            continue;
        }
        checked += 1;
        let value = apply_operator_unchecked(&field.at(&a0), chi, f, &a0, &opts.quadrature)?;
        if value > opts.tolerance {
            violations.push(PmpViolation {
                function: f.name.clone(),
                argmax: a0.clone(),
                max_value: fmax,
                operator_value: value,
            });
        }
        maxima.push((f.name.clone(), a0, fmax, value));
    }
    Ok(PmpReport {
        passed: violations.is_empty(),
        checked,
        violations,
        maxima,
    })
}
