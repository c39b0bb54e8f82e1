//! Lévy triplets (δ, γ, ν), compensation functions and coefficient fields.

mod compensation;
mod hypotheses;
mod measure;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::QuadratureConfig;

pub use compensation::{CompensationFn, CompensationFunction};
pub use hypotheses::{validate_hypotheses, HypothesisCheck, HypothesisOptions, HypothesisReport, Violation};
pub use measure::{Atom, AtomLocation, DensityFn, JumpMeasure, TailMassFn, TailSampler, UserDensity};
pub(crate) use measure::norm;

/// Drift, diffusion matrix and jump measure of a Lévy-type operator at one point.
#[derive(Debug, Clone)]
pub struct LevyTriplet {
    pub drift: Vec<f64>,
    pub gamma: DMatrix<f64>,
    pub jumps: JumpMeasure,
}

/// Relative symmetry tolerance on γ.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues of γ may dip to `-PSD_TOL * |γ|` before γ is rejected.
pub const PSD_TOL: f64 = 1e-10;

impl LevyTriplet {
    /// Validated constructor: γ must be symmetric and positive semi-definite.
    pub fn new(drift: Vec<f64>, gamma: DMatrix<f64>, jumps: JumpMeasure) -> Result<Self> {
        let t = Self::new_unchecked(drift, gamma, jumps);
        t.validate()?;
        Ok(t)
    }

    /// Skips every check. Used to build deliberately invalid operators.
    pub fn new_unchecked(drift: Vec<f64>, gamma: DMatrix<f64>, jumps: JumpMeasure) -> Self {
        Self { drift, gamma, jumps }
    }

    pub fn brownian(dim: usize) -> Self {
        Self::new_unchecked(vec![0.0; dim], DMatrix::identity(dim, dim), JumpMeasure::zero())
    }

    pub fn pure_jump(dim: usize, jumps: JumpMeasure) -> Self {
        Self::new_unchecked(vec![0.0; dim], DMatrix::zeros(dim, dim), jumps)
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    /// Shape, finiteness, symmetry and positive semi-definiteness of γ, and
    /// the base-point independent checks on ν.
    pub fn validate(&self) -> Result<()> {
        let d = self.drift.len();
        if d == 0 {
            return Err(Error::Validation("triplet dimension must be positive".into()));
        }
        if self.gamma.nrows() != d || self.gamma.ncols() != d {
            return Err(Error::Validation(format!(
                "diffusion matrix is {}x{} but drift has length {d}",
                self.gamma.nrows(),
                self.gamma.ncols()
            )));
        }
        if self.drift.iter().chain(self.gamma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("triplet has non-finite entries".into()));
        }
        let scale = self.gamma.norm();
        let asym = (&self.gamma - self.gamma.transpose()).amax();
        if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Validation(format!(
                "diffusion matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        if d > 0 && scale > 0.0 {
            let min_eig = self.gamma.clone().symmetric_eigenvalues().min();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::Validation(format!(
                    "diffusion matrix is not positive semi-definite (eigenvalue {min_eig:e})"
                )));
            }
        }
        self.jumps.validate_shape()
    }

    /// Hypothesis H2(a): [`validate`](Self::validate) plus the checks on ν at `a`.
    pub fn validate_at(&self, a: &[f64], cfg: &QuadratureConfig) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::Validation(format!(
                "base point has dimension {} but triplet has {}",
                a.len(),
                self.dim()
            )));
        }
        self.validate()?;
        self.jumps.validate_at(a, cfg)
    }

    /// Symmetric square root of γ, with negative rounding noise clamped to zero.
    pub fn gamma_sqrt(&self) -> DMatrix<f64> {
        let eig = self.gamma.clone().symmetric_eigen();
        let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
        &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
    }

    pub fn is_gaussian(&self) -> bool {
        self.jumps.is_zero()
    }
}

pub type TripletFn = Arc<dyn Fn(&[f64]) -> LevyTriplet + Send + Sync>;

/// A map `a -> (δ(a), γ(a), ν(a))`.
#[derive(Clone)]
pub struct TripletField {
    dim: usize,
    kind: FieldKind,
    claimed_continuous: bool,
}

#[derive(Clone)]
enum FieldKind {
    Constant(Arc<LevyTriplet>),
    Function(TripletFn),
}

impl fmt::Debug for TripletField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("TripletField");
        s.field("dim", &self.dim).field("claimed_continuous", &self.claimed_continuous);
        if let FieldKind::Constant(t) = &self.kind {
            s.field("constant", t);
        }
        s.finish()
    }
}

impl TripletField {
    pub fn constant(triplet: LevyTriplet) -> Self {
        Self {
            dim: triplet.dim(),
            kind: FieldKind::Constant(Arc::new(triplet)),
            claimed_continuous: true,
        }
    }

    /// A state-dependent field. `claimed_continuous` records whether the
    /// caller asserts continuity of the coefficients; it is not verified.
    pub fn from_fn(dim: usize, claimed_continuous: bool, f: impl Fn(&[f64]) -> LevyTriplet + Send + Sync + 'static) -> Self {
        Self {
            dim,
            kind: FieldKind::Function(Arc::new(f)),
            claimed_continuous,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn claimed_continuous(&self) -> bool {
        self.claimed_continuous
    }

    pub fn constant_value(&self) -> Option<&LevyTriplet> {
        match &self.kind {
            FieldKind::Constant(t) => Some(t),
            FieldKind::Function(_) => None,
        }
    }

    pub fn at(&self, a: &[f64]) -> LevyTriplet {
        match &self.kind {
            FieldKind::Constant(t) => (**t).clone(),
            FieldKind::Function(f) => f(a),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_asymmetric_gamma() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        let err = LevyTriplet::new(vec![0.0; 2], g, JumpMeasure::zero()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn rejects_indefinite_gamma() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(LevyTriplet::new(vec![0.0; 2], g, JumpMeasure::zero()).is_err());
    }

    #[test]
    fn accepts_rounding_level_negative_eigenvalue() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-14]);
        assert!(LevyTriplet::new(vec![0.0; 2], g, JumpMeasure::zero()).is_ok());
    }

    #[test]
    fn gamma_sqrt_squares_back() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let t = LevyTriplet::new(vec![0.0; 2], g.clone(), JumpMeasure::zero()).unwrap();
        let r = t.gamma_sqrt();
        let back = &r * &r;
        for (x, y) in back.iter().zip(g.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn field_evaluates_pointwise() {
        let f = TripletField::from_fn(1, true, |a| {
            LevyTriplet::new_unchecked(vec![a[0]], DMatrix::zeros(1, 1), JumpMeasure::zero())
        });
        assert_eq!(f.at(&[2.5]).drift, vec![2.5]);
        assert!(f.constant_value().is_none());
        assert!(TripletField::constant(LevyTriplet::brownian(2)).constant_value().is_some());
    }
}
