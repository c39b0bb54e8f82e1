//! Jump measures ν and integrals against them.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::numerics::{integrate, sphere_integral, unit_sphere_area, QuadratureConfig};

/// Where an atom of ν sits. Atoms are stored at absolute locations.
#[derive(Debug, Clone, PartialEq)]
pub enum AtomLocation {
    Point(Vec<f64>),
    Cemetery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub location: AtomLocation,
    pub mass: f64,
}

impl Atom {
    pub fn at(point: Vec<f64>, mass: f64) -> Self {
        Self {
            location: AtomLocation::Point(point),
            mass,
        }
    }

    pub fn cemetery(mass: f64) -> Self {
        Self {
            location: AtomLocation::Cemetery,
            mass,
        }
    }

    /// The jump `b - a` this atom represents from base point `a`; `None` for Δ.
    pub fn jump_from(&self, a: &[f64]) -> Option<Vec<f64>> {
        match &self.location {
            AtomLocation::Point(b) => Some(b.iter().zip(a).map(|(b, a)| b - a).collect()),
            AtomLocation::Cemetery => None,
        }
    }

    /// Distance `|b - a|`, infinite for the cemetery.
    pub fn distance_from(&self, a: &[f64]) -> f64 {
        match &self.location {
            AtomLocation::Point(b) => norm(&b.iter().zip(a).map(|(b, a)| b - a).collect::<Vec<_>>()),
            AtomLocation::Cemetery => f64::INFINITY,
        }
    }
}

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Draws a jump `h` with `|h| > tau` from the normalized tail of ν.
pub type TailSampler = Arc<dyn Fn(f64, &mut dyn RngCore) -> Vec<f64> + Send + Sync>;
pub type TailMassFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A jump measure given by a density in the jump variable `h = b - a`.
#[derive(Clone)]
pub struct UserDensity {
    pub dim: usize,
    pub density: DensityFn,
    /// Mandatory for simulation, unused by the quadrature routines.
    pub tail_sampler: Option<TailSampler>,
    /// Closed-form `nu(|h| > r)` if known; used by the samplers as a fast path.
    pub tail_mass: Option<TailMassFn>,
}

impl fmt::Debug for UserDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserDensity")
            .field("dim", &self.dim)
            .field("tail_sampler", &self.tail_sampler.is_some())
            .field("tail_mass", &self.tail_mass.is_some())
            .finish()
    }
}

/// The jump part ν of a Lévy triplet.
///
/// `StableLike` and `UserDensity` describe the law of the jump `h = b - a`
/// and are therefore the same at every base point; `Atoms` are absolute and
/// may include mass at the cemetery.
#[derive(Debug, Clone)]
pub enum JumpMeasure {
    Atoms(Vec<Atom>),
    /// Radial density `c |h|^{-d-alpha}`.
    StableLike { c: f64, alpha: f64 },
    /// `c |h|^{-d-alpha} 1_{|h| >= cutoff}`, a finite measure.
    TruncatedStable { c: f64, alpha: f64, cutoff: f64 },
    UserDensity(UserDensity),
}

impl Default for JumpMeasure {
    fn default() -> Self {
        JumpMeasure::Atoms(Vec::new())
    }
}

pub(crate) fn norm(h: &[f64]) -> f64 {
    h.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl JumpMeasure {
    pub fn zero() -> Self {
        JumpMeasure::Atoms(Vec::new())
    }

    pub fn stable(c: f64, alpha: f64) -> Result<Self> {
        let m = JumpMeasure::StableLike { c, alpha };
        m.validate_shape()?;
        Ok(m)
    }

    /// Atoms at `a + h` for the given jumps, i.e. the absolute form of a
    /// relative atomic measure seen from `a`.
    pub fn atoms_from_jumps(a: &[f64], jumps: &[(Option<Vec<f64>>, f64)]) -> Self {
        JumpMeasure::Atoms(
            jumps
                .iter()
                .map(|(h, m)| match h {
                    Some(h) => Atom::at(a.iter().zip(h).map(|(a, h)| a + h).collect(), *m),
                    None => Atom::cemetery(*m),
                })
                .collect(),
        )
    }

    pub fn is_zero(&self) -> bool {
        match self {
            JumpMeasure::Atoms(a) => a.is_empty(),
            JumpMeasure::StableLike { c, .. } | JumpMeasure::TruncatedStable { c, .. } => *c == 0.0,
            JumpMeasure::UserDensity(_) => false,
        }
    }

    /// Invariant under `h -> -h` and rotations.
    pub fn is_radial(&self) -> bool {
        matches!(self, JumpMeasure::StableLike { .. } | JumpMeasure::TruncatedStable { .. })
    }

    /// Checks that do not depend on the base point.
    pub fn validate_shape(&self) -> Result<()> {
        match self {
            JumpMeasure::Atoms(atoms) => {
                for (i, atom) in atoms.iter().enumerate() {
                    if !(atom.mass > 0.0 && atom.mass.is_finite()) {
                        return Err(Error::Validation(format!("atom {i} has non-positive mass {}", atom.mass)));
                    }
                    if let AtomLocation::Point(p) = &atom.location {
                        if p.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Validation(format!("atom {i} has a non-finite location")));
                        }
                    }
                }
                Ok(())
            }
            JumpMeasure::TruncatedStable { c, alpha, cutoff } => {
                if !(*cutoff > 0.0 && cutoff.is_finite()) {
                    return Err(Error::Validation(format!("truncation radius must be positive, got {cutoff}")));
                }
                JumpMeasure::StableLike { c: *c, alpha: *alpha }.validate_shape()
            }
            JumpMeasure::StableLike { c, alpha } => {
                if !(*c >= 0.0 && c.is_finite()) {
                    return Err(Error::Validation(format!("stable scale must be >= 0, got {c}")));
                }
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return Err(Error::Validation(format!(
                        "stable index must lie in (0, 2), got {alpha}; alpha >= 2 has infinite compensated mass"
                    )));
                }
                Ok(())
            }
            JumpMeasure::UserDensity(u) => {
                if u.dim == 0 {
                    Err(Error::Validation("user density needs a positive dimension".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Hypothesis H2(a) for the jump part: no atom at `a` and finite
    /// `∫ (1 ∧ |b-a|^2) ν(db)`.
    pub fn validate_at(&self, a: &[f64], cfg: &QuadratureConfig) -> Result<()> {
        self.validate_shape()?;
        match self {
            JumpMeasure::Atoms(atoms) => {
                for atom in atoms {
                    if let AtomLocation::Point(p) = &atom.location {
                        if p.len() != a.len() {
                            return Err(Error::Validation("atom dimension differs from base point".into()));
                        }
                        if atom.distance_from(a) == 0.0 {
                            return Err(Error::Validation(format!("atom at the base point {a:?}")));
                        }
                    }
                }
                Ok(())
            }
            JumpMeasure::StableLike { .. } | JumpMeasure::TruncatedStable { .. } => Ok(()),
            JumpMeasure::UserDensity(u) => {
                if u.dim != a.len() {
                    return Err(Error::Validation("density dimension differs from base point".into()));
                }
                let inner = self.truncated_second_moment(a, 1.0, cfg)?;
                let outer = self.tail_mass(a, 1.0, cfg)?;
                if inner.is_finite() && outer.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Validation("compensated mass of the density is not finite".into()))
                }
            }
        }
    }

    /// Mass ν({Δ}).
    pub fn cemetery_mass(&self) -> f64 {
        match self {
            JumpMeasure::Atoms(atoms) => atoms
                .iter()
                .filter(|a| a.location == AtomLocation::Cemetery)
                .map(|a| a.mass)
                .sum(),
            _ => 0.0,
        }
    }

    /// Total mass when it is finite in closed form.
    pub fn finite_total_mass(&self, dim: usize) -> Option<f64> {
        match self {
            JumpMeasure::Atoms(atoms) => Some(atoms.iter().map(|a| a.mass).sum()),
            JumpMeasure::StableLike { c, .. } => (*c == 0.0).then_some(0.0),
            JumpMeasure::TruncatedStable { c, alpha, cutoff } => {
                Some(c * unit_sphere_area(dim) * cutoff.powf(-alpha) / alpha)
            }
            JumpMeasure::UserDensity(_) => None,
        }
    }

    /// `ν({b : |b - a| > r})`, counting any mass at Δ.
    pub fn tail_mass(&self, a: &[f64], r: f64, cfg: &QuadratureConfig) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Precondition(format!("radius must be positive, got {r}")));
        }
        match self {
            JumpMeasure::Atoms(atoms) => Ok(atoms
                .iter()
                .filter(|atom| atom.distance_from(a) > r)
                .map(|atom| atom.mass)
                .sum()),
            JumpMeasure::StableLike { c, alpha } => {
                self.validate_shape()?;
                Ok(c * unit_sphere_area(a.len()) * r.powf(-alpha) / alpha)
            }
            JumpMeasure::TruncatedStable { c, alpha, cutoff } => {
                self.validate_shape()?;
                Ok(c * unit_sphere_area(a.len()) * r.max(*cutoff).powf(-alpha) / alpha)
            }
            JumpMeasure::UserDensity(_) => self.integrate(
                a,
                &|h| if norm(h) > r { 1.0 } else { 0.0 },
                1.0,
                &[r],
                cfg,
            ),
        }
    }

    /// `∫_{0 < |b-a| <= r} |b-a|^2 ν(db)`.
    pub fn truncated_second_moment(&self, a: &[f64], r: f64, cfg: &QuadratureConfig) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Precondition(format!("radius must be positive, got {r}")));
        }
        match self {
            JumpMeasure::Atoms(atoms) => Ok(atoms
                .iter()
                .filter_map(|atom| {
                    let dist = atom.distance_from(a);
                    (dist > 0.0 && dist <= r).then(|| atom.mass * dist * dist)
                })
                .sum()),
            JumpMeasure::StableLike { c, alpha } => {
                self.validate_shape()?;
                Ok(c * unit_sphere_area(a.len()) * r.powf(2.0 - alpha) / (2.0 - alpha))
            }
            JumpMeasure::TruncatedStable { c, alpha, cutoff } => {
                self.validate_shape()?;
                if r <= *cutoff {
                    return Ok(0.0);
                }
                Ok(c * unit_sphere_area(a.len()) * (r.powf(2.0 - alpha) - cutoff.powf(2.0 - alpha)) / (2.0 - alpha))
            }
            JumpMeasure::UserDensity(_) => self.integrate(
                a,
                &|h| {
                    let n2: f64 = h.iter().map(|v| v * v).sum();
                    if n2.sqrt() <= r { n2 } else { 0.0 }
                },
                0.0,
                &[r],
                cfg,
            ),
        }
    }

    /// `∫ g(b - a) ν(db)` with `g(Δ) := at_cemetery`.
    ///
    /// The integrand must either vanish near `h = 0` or be `O(|h|^2)` there.
    /// `radial_breaks` are radii where `g` has kinks or jumps; radius 1 is
    /// always a break.
    pub fn integrate(
        &self,
        a: &[f64],
        g: &dyn Fn(&[f64]) -> f64,
        at_cemetery: f64,
        radial_breaks: &[f64],
        cfg: &QuadratureConfig,
    ) -> Result<f64> {
        let d = a.len();
        match self {
            JumpMeasure::Atoms(atoms) => {
                let mut total = 0.0;
                for atom in atoms {
                    total += atom.mass
                        * match atom.jump_from(a) {
                            Some(h) => g(&h),
                            None => at_cemetery,
                        };
                }
                Ok(total)
            }
            JumpMeasure::StableLike { c, alpha } => {
                self.validate_shape()?;
                if *c == 0.0 {
                    return Ok(0.0);
                }
                let (c, alpha) = (*c, *alpha);
                let breaks = sorted_breaks(radial_breaks);
                let shell = |r: f64| -> Result<f64> {
                    sphere_integral(
                        d,
                        &|q: &[f64]| {
                            let h: Vec<f64> = q.iter().map(|v| v * r).collect();
                            g(&h)
                        },
                        cfg,
                    )
                };
                let mut failure: Option<Error> = None;
                let mut guard = |v: Result<f64>| match v {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                };
                let mut total = 0.0;
                // (0, b0]: r = b0 w^p with p = 1/(2 - alpha) tames the O(r^{1-alpha}) singularity.
                let b0 = breaks[0];
                let p = 1.0 / (2.0 - alpha);
                let w0 = c * b0.powf(-alpha) * p;
                total += integrate(
                    &mut |w: f64| {
                        if w <= 0.0 {
                            return 0.0;
                        }
                        let r = b0 * w.powf(p);
                        let s = guard(shell(r));
                        w0 * s * w.powf(-2.0 * p)
                    },
                    0.0,
                    1.0,
                    &[],
                    cfg,
                )?;
                // Middle shells in log radius.
                for win in breaks.windows(2) {
                    total += integrate(
                        &mut |u: f64| {
                            let r = u.exp();
                            c * r.powf(-alpha) * guard(shell(r))
                        },
                        win[0].ln(),
                        win[1].ln(),
                        &[],
                        cfg,
                    )?;
                }
                // (b_last, inf): w = (b_last / r)^alpha.
                let bl = *breaks.last().unwrap();
                let wl = c / (alpha * bl.powf(alpha));
                total += integrate(
                    &mut |w: f64| {
                        if w <= 0.0 {
                            // r = inf: g is evaluated at the far field limit.
                            return 0.0;
                        }
                        let r = bl * w.powf(-1.0 / alpha);
                        wl * guard(shell(r))
                    },
                    0.0,
                    1.0,
                    &[],
                    cfg,
                )?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(total),
                }
            }
            JumpMeasure::TruncatedStable { c, alpha, cutoff } => {
                self.validate_shape()?;
                let cutoff = *cutoff;
                let mut breaks = radial_breaks.to_vec();
                breaks.push(cutoff);
                JumpMeasure::StableLike { c: *c, alpha: *alpha }.integrate(
                    a,
                    &|h| if norm(h) >= cutoff { g(h) } else { 0.0 },
                    at_cemetery,
                    &breaks,
                    cfg,
                )
            }
            JumpMeasure::UserDensity(u) => {
                if u.dim != d {
                    return Err(Error::Validation("density dimension differs from base point".into()));
                }
                let density = &u.density;
                let breaks = sorted_breaks(radial_breaks);
                let shell = |r: f64| -> Result<f64> {
                    sphere_integral(
                        d,
                        &|q: &[f64]| {
                            let h: Vec<f64> = q.iter().map(|v| v * r).collect();
                            let p = density(&h);
                            if p == 0.0 { 0.0 } else { p * g(&h) }
                        },
                        cfg,
                    )
                };
                let mut failure: Option<Error> = None;
                let mut guard = |v: Result<f64>| match v {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                };
                const K: i32 = 4;
                let jac = |r: f64| r.powi(d as i32 - 1);
                let mut total = 0.0;
                let b0 = breaks[0];
                // (0, b0]: r = b0 w^K.
                total += integrate(
                    &mut |w: f64| {
                        if w <= 0.0 {
                            return 0.0;
                        }
                        let r = b0 * w.powi(K);
                        let dr = K as f64 * b0 * w.powi(K - 1);
                        jac(r) * dr * guard(shell(r))
                    },
                    0.0,
                    1.0,
                    &[],
                    cfg,
                )?;
                for win in breaks.windows(2) {
                    total += integrate(&mut |r: f64| jac(r) * guard(shell(r)), win[0], win[1], &[], cfg)?;
                }
                // (b_last, inf): r = b_last / s^K.
                let bl = *breaks.last().unwrap();
                total += integrate(
                    &mut |s: f64| {
                        if s <= 0.0 {
                            return 0.0;
                        }
                        let r = bl / s.powi(K);
                        let dr = K as f64 * bl / s.powi(K + 1);
                        jac(r) * dr * guard(shell(r))
                    },
                    0.0,
                    1.0,
                    &[],
                    cfg,
                )?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(total),
                }
            }
        }
    }
}

fn sorted_breaks(extra: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = extra
        .iter()
        .copied()
        .filter(|r| *r > 0.0 && r.is_finite())
        .chain(std::iter::once(1.0))
        .collect();
    b.sort_by(f64::total_cmp);
    b.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * y.abs());
    b
}
