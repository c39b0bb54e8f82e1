//! JSON documents describing triplet fields and operator diagnostics.
//!
//! A triplet field:
//! ```json
//! {"drift": [0.0, "-x2"], "gamma": [[1, 0], [0, "1 + abs(x1)"]],
//!  "nu": {"kind": "stable", "c": 1.0, "alpha": 1.5}}
//! ```
//! Every coefficient is a number or an expression over `x1..xd`. Measures:
//! `{"kind": "zero"}`, `{"kind": "stable", "c", "alpha"}`,
//! `{"kind": "truncated-stable", "c", "alpha", "cutoff"}` and
//! `{"kind": "atoms", "atoms": [{"jump": [h1, ...] | null, "mass"}]}` where
//! `jump` is relative to the current state and `null` is a jump to Δ.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::numerics::QuadratureConfig;
use crate::operator::{convergence_gaps, default_jump_tests, discrete_scheme_gaps, ConvergenceReport, GapOptions};
use crate::region::BoxRegion;
use crate::stable::StableField;
use crate::triplet::{CompensationFunction, JumpMeasure, LevyTriplet, TripletField};

/// A number or an expression over the state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Num(f64),
    Expr(String),
}

impl Coef {
    pub fn compile(&self, dim: usize) -> Result<Expr> {
        let e = match self {
            Coef::Num(v) => Expr::constant(*v),
            Coef::Expr(s) => Expr::parse(s)?,
        };
        e.check_dim(dim)?;
        Ok(e)
    }
}

impl From<f64> for Coef {
    fn from(v: f64) -> Self {
        Coef::Num(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomConfig {
    /// Jump relative to the current state; `None` jumps to Δ.
    pub jump: Option<Vec<f64>>,
    pub mass: Coef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeasureConfig {
    #[default]
    Zero,
    Stable {
        c: Coef,
        alpha: Coef,
    },
    TruncatedStable {
        c: Coef,
        alpha: Coef,
        cutoff: f64,
    },
    Atoms {
        atoms: Vec<AtomConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub drift: Vec<Coef>,
    /// Defaults to the zero matrix.
    #[serde(default)]
    pub gamma: Option<Vec<Vec<Coef>>>,
    #[serde(default)]
    pub nu: MeasureConfig,
}

enum CompiledMeasure {
    Zero,
    Stable(Expr, Expr),
    Truncated(Expr, Expr, f64),
    Atoms(Vec<(Option<Vec<f64>>, Expr)>),
}

struct Compiled {
    drift: Vec<Expr>,
    gamma: Vec<Expr>,
    nu: CompiledMeasure,
}

impl Compiled {
    fn triplet(&self, a: &[f64]) -> LevyTriplet {
        let d = self.drift.len();
        let drift = self.drift.iter().map(|e| e.eval(a)).collect();
        let gamma = DMatrix::from_iterator(d, d, self.gamma.iter().map(|e| e.eval(a))).transpose();
        let nu = match &self.nu {
            CompiledMeasure::Zero => JumpMeasure::zero(),
            CompiledMeasure::Stable(c, al) => JumpMeasure::StableLike {
                c: c.eval(a),
                alpha: al.eval(a),
            },
            CompiledMeasure::Truncated(c, al, cutoff) => JumpMeasure::TruncatedStable {
                c: c.eval(a),
                alpha: al.eval(a),
                cutoff: *cutoff,
            },
            CompiledMeasure::Atoms(atoms) => {
                let jumps: Vec<(Option<Vec<f64>>, f64)> = atoms.iter().map(|(h, m)| (h.clone(), m.eval(a))).collect();
                JumpMeasure::atoms_from_jumps(a, &jumps)
            }
        };
        LevyTriplet::new_unchecked(drift, gamma, nu)
    }

    fn is_constant(&self) -> bool {
        let all = |v: &[Expr]| v.iter().all(|e| e.arity() == 0);
        all(&self.drift)
            && all(&self.gamma)
            && match &self.nu {
                CompiledMeasure::Zero => true,
                CompiledMeasure::Stable(c, a) | CompiledMeasure::Truncated(c, a, _) => c.arity() == 0 && a.arity() == 0,
                CompiledMeasure::Atoms(_) => false,
            }
    }
}

impl TripletConfig {
    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    fn compile(&self) -> Result<Compiled> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Validation("drift must have at least one coordinate".into()));
        }
        let drift = self.drift.iter().map(|c| c.compile(d)).collect::<Result<Vec<_>>>()?;
        let gamma = match &self.gamma {
            None => vec![Expr::constant(0.0); d * d],
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Validation(format!("gamma must be {d}x{d}")));
                }
                rows.iter().flatten().map(|c| c.compile(d)).collect::<Result<Vec<_>>>()?
            }
        };
        let nu = match &self.nu {
            MeasureConfig::Zero => CompiledMeasure::Zero,
            MeasureConfig::Stable { c, alpha } => CompiledMeasure::Stable(c.compile(d)?, alpha.compile(d)?),
            MeasureConfig::TruncatedStable { c, alpha, cutoff } => {
                CompiledMeasure::Truncated(c.compile(d)?, alpha.compile(d)?, *cutoff)
            }
            MeasureConfig::Atoms { atoms } => {
                for a in atoms {
                    if let Some(h) = &a.jump {
                        if h.len() != d {
                            return Err(Error::Validation(format!("atom jump has dimension {} instead of {d}", h.len())));
                        }
                    }
                }
                CompiledMeasure::Atoms(
                    atoms
                        .iter()
                        .map(|a| Ok((a.jump.clone(), a.mass.compile(d)?)))
                        .collect::<Result<_>>()?,
                )
            }
        };
        Ok(Compiled { drift, gamma, nu })
    }

    /// The field described by this document. Constant documents are
    /// validated eagerly; state-dependent ones are validated where used.
    pub fn to_field(&self) -> Result<TripletField> {
        let compiled = self.compile()?;
        if compiled.is_constant() {
            let t = compiled.triplet(&vec![0.0; self.dim()]);
            return Ok(TripletField::constant(LevyTriplet::new(t.drift, t.gamma, t.jumps)?));
        }
        let compiled = Arc::new(compiled);
        Ok(TripletField::from_fn(self.dim(), true, move |a| compiled.triplet(a)))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("triplet config: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChiConfig {
    #[default]
    Chi1,
    Chi2,
}

impl ChiConfig {
    pub fn function(self) -> CompensationFunction {
        match self {
            ChiConfig::Chi1 => CompensationFunction::Chi1,
            ChiConfig::Chi2 => CompensationFunction::Chi2,
        }
    }
}

impl std::str::FromStr for ChiConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi1" => Ok(ChiConfig::Chi1),
            "chi2" => Ok(ChiConfig::Chi2),
            _ => Err(Error::Validation(format!("unknown compensation function {s:?}; use chi1 or chi2"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// The stable chain with step `1/n`, compared against its limit for each `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableSchemeConfig {
    pub c: Coef,
    pub alpha: Coef,
    pub ns: Vec<usize>,
}

/// Input of the operator diagnostic: a compact box `K`, a limit field, a
/// sequence of approximating fields and optionally the stable chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    #[serde(default)]
    pub chi: ChiConfig,
    #[serde(rename = "box")]
    pub region: BoxConfig,
    pub limit: TripletConfig,
    #[serde(default)]
    pub fields: Vec<TripletConfig>,
    #[serde(default)]
    pub stable_scheme: Option<StableSchemeConfig>,
    #[serde(default = "default_per_axis")]
    pub per_axis: usize,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    #[serde(default)]
    pub quadrature: Option<QuadratureConfig>,
}

fn default_per_axis() -> usize {
    GapOptions::default().per_axis
}

fn default_max_points() -> usize {
    GapOptions::default().max_points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub fields: Vec<ConvergenceReport>,
    pub stable_scheme: Vec<ConvergenceReport>,
}

impl OperatorConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("operator config: {e}")))
    }

    pub fn run(&self) -> Result<OperatorReport> {
        let k = BoxRegion::new(self.region.lower.clone(), self.region.upper.clone())?;
        let d = k.dim();
        let limit = self.limit.to_field()?;
        if limit.dim() != d {
            return Err(Error::Validation("limit field and box dimensions differ".into()));
        }
        let fields = self.fields.iter().map(TripletConfig::to_field).collect::<Result<Vec<_>>>()?;
        if fields.iter().any(|f| f.dim() != d) {
            return Err(Error::Validation("field and box dimensions differ".into()));
        }
        let opts = GapOptions {
            per_axis: self.per_axis,
            max_points: self.max_points,
            quadrature: self.quadrature.unwrap_or_default(),
        };
        let chi = self.chi.function();
        let tests = default_jump_tests(&k);
        let field_reports = convergence_gaps(&fields, &limit, &chi, &k, &tests, &opts)?;
        let stable_scheme = match &self.stable_scheme {
            None => Vec::new(),
            Some(s) => {
                let (c, alpha) = (s.c.compile(d)?, s.alpha.compile(d)?);
                let field = StableField::new(d, move |a| c.eval(a), move |a| alpha.eval(a))?;
                discrete_scheme_gaps(&s.ns, field.scaled_kernel(), &limit, &chi, &k, &tests, &opts)?
            }
        };
        Ok(OperatorReport {
            fields: field_reports,
            stable_scheme,
        })
    }
}
