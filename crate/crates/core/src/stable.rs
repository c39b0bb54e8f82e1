//! Explicit jump chain for symmetric stable-like operators
//! `c(a) ∫ (f(b) - f(a) - χ(a,b)·∇f(a)) |b - a|^{-d-α(a)} db`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::numerics::ln_unit_sphere_area;
use crate::operator::ScaledKernel;
use crate::path::PathRecord;
use crate::rng::{self, Domain, StreamRng};
use crate::sim::{run_batch, run_chain, SimConfig, Start, Step};
use crate::triplet::{JumpMeasure, LevyTriplet, TripletField};

pub type CoefficientFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Intensity `c` and index `α` of a stable-like operator as functions of the state.
#[derive(Clone)]
pub struct StableField {
    dim: usize,
    c: CoefficientFn,
    alpha: CoefficientFn,
}

impl fmt::Debug for StableField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StableField").field("dim", &self.dim).finish()
    }
}

impl StableField {
    pub fn new(
        dim: usize,
        c: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        alpha: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            c: Arc::new(c),
            alpha: Arc::new(alpha),
        })
    }

    pub fn constant(dim: usize, c: f64, alpha: f64) -> Result<Self> {
        check_coefficients(c, alpha)?;
        Self::new(dim, move |_| c, move |_| alpha)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(c(a), α(a))`, checked to lie in `[0, ∞) × (0, 2)`.
    pub fn at(&self, a: &[f64]) -> Result<(f64, f64)> {
        if a.len() != self.dim {
            return Err(Error::Validation(format!("point has dimension {}, field has {}", a.len(), self.dim)));
        }
        let (c, alpha) = ((self.c)(a), (self.alpha)(a));
        check_coefficients(c, alpha)?;
        Ok((c, alpha))
    }

    /// The limit triplet field `(0, 0, c(a)|h|^{-d-α(a)} dh)`.
    pub fn triplet_field(&self) -> TripletField {
        let this = self.clone();
        TripletField::from_fn(self.dim, true, move |a| {
            let d = a.len();
            let (c, alpha) = ((this.c)(a), (this.alpha)(a));
            LevyTriplet::new_unchecked(vec![0.0; d], DMatrix::zeros(d, d), JumpMeasure::StableLike { c, alpha })
        })
    }

    /// `(n, a) -> n μ_n(a)`, which is `c(a)|h|^{-d-α(a)}` cut at `ε_n(a)`.
    pub fn scaled_kernel(&self) -> ScaledKernel {
        let this = self.clone();
        Arc::new(move |n, a| match this.at(a) {
            Ok((c, alpha)) if c > 0.0 => JumpMeasure::TruncatedStable {
                c,
                alpha,
                cutoff: jump_magnitude(c, alpha, a.len(), n as f64, 1.0),
            },
            _ => JumpMeasure::zero(),
        })
    }
}

fn check_coefficients(c: f64, alpha: f64) -> Result<()> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::Validation(format!("intensity must be finite and nonnegative, got {c}")));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::Validation(format!("stability index must lie in (0, 2), got {alpha}")));
    }
    Ok(())
}

fn check_scale(n: f64) -> Result<()> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(Error::Validation(format!("scale must be at least 1, got {n}")));
    }
    Ok(())
}

/// `(c S_{d-1} / (n α u))^{1/α}`, evaluated in log space.
pub fn jump_magnitude(c: f64, alpha: f64, d: usize, n: f64, u: f64) -> f64 {
    ((c.ln() + ln_unit_sphere_area(d) - n.ln() - alpha.ln() - u.ln()) / alpha).exp()
}

/// `P(|jump| > r) = min(1, c S_{d-1} / (n α r^α))`.
pub fn jump_tail(c: f64, alpha: f64, d: usize, n: f64, r: f64) -> f64 {
    (c.ln() + ln_unit_sphere_area(d) - n.ln() - alpha.ln() - alpha * r.ln()).exp().min(1.0)
}

/// Smallest jump `ε_n(a)`; the truncated kernel above it has mass one.
pub fn stable_threshold(field: &StableField, a: &[f64], n: f64) -> Result<f64> {
    check_scale(n)?;
    let (c, alpha) = field.at(a)?;
    if c == 0.0 {
        return Err(Error::Degenerate(format!("intensity vanishes at {a:?}")));
    }
    Ok(jump_magnitude(c, alpha, a.len(), n, 1.0))
}

/// `a + q (c S_{d-1} / (n α u))^{1/α}` for given `u ∈ (0, 1]` and unit `q`.
pub fn stable_jump_from(field: &StableField, a: &[f64], n: f64, u: f64, q: &[f64]) -> Result<Vec<f64>> {
    check_scale(n)?;
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::Validation(format!("u must lie in (0, 1], got {u}")));
    }
    let (c, alpha) = field.at(a)?;
    if c == 0.0 {
        return Err(Error::Degenerate(format!("intensity vanishes at {a:?}")));
    }
    let r = jump_magnitude(c, alpha, a.len(), n, u);
    Ok(a.iter().zip(q).map(|(a, q)| a + q * r).collect())
}

/// One draw from `μ_n(a)`: `U` first, then the direction `Q`.
pub fn stable_jump_sample<R: RngCore + ?Sized>(field: &StableField, a: &[f64], n: f64, rng: &mut R) -> Result<Vec<f64>> {
    let u = rng::open_unit(rng);
    let mut q = vec![0.0; a.len()];
    rng::unit_sphere(rng, &mut q);
    stable_jump_from(field, a, n, u, &q)
}

fn step(field: &StableField, n: f64, x: &mut Vec<f64>, rng: &mut StreamRng) -> Result<Step> {
    let (c, alpha) = field.at(x)?;
    if c == 0.0 {
        return Ok(Step::Alive);
    }
    let u = rng::open_unit(rng);
    let mut q = vec![0.0; x.len()];
    rng::unit_sphere(rng, &mut q);
    let r = jump_magnitude(c, alpha, x.len(), n, u);
    for (x, q) in x.iter_mut().zip(&q) {
        *x += q * r;
    }
    Ok(Step::Alive)
}

/// Paths `t -> Z_{⌊nt⌋}` of the chain on the configured grid. States where
/// `c` vanishes hold; chains leaving the escape ball go to Δ.
pub fn stable_chain_simulate(field: &StableField, start: &Start, n: f64, cfg: &SimConfig) -> Result<Vec<PathRecord>> {
    check_scale(n)?;
    cfg.validate()?;
    if start.dim() != field.dim() {
        return Err(Error::Validation("start and field dimensions differ".into()));
    }
    let times = cfg.grid.resolve(cfg.horizon)?;
    run_batch(cfg.paths, |i| {
        let mut r = rng::stream(cfg.seed, Domain::Path, i);
        let x0 = start.draw(cfg.seed, i);
        run_chain(&times, 1.0 / n, x0, cfg.escape_radius, &mut r, |x, r| step(field, n, x, r))
    })
}
