//! One-dimensional diffusion in a potential, generator `½ e^V (e^{-V} f')'`,
//! and its birth-death approximation with state-dependent step sizes.

use std::fmt;
use std::sync::{Arc, OnceLock};

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate, QuadratureConfig};
use crate::path::PathRecord;
use crate::rng::{self, Domain};
use crate::sim::{run_batch, run_chain, SimConfig, Start, Step};

pub type PotentialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A potential `V: R -> R` on a closed domain.
#[derive(Clone)]
pub enum Potential {
    /// Constant on the cells `[jε, (j+1)ε)`, built from increments `q_k`.
    PiecewiseConstant(LatticePotential),
    /// Linear interpolation between knots.
    Grid { knots: Vec<f64>, values: Vec<f64> },
    Callable(CallablePotential),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticePotential {
    mesh: f64,
    /// Index of the first cell.
    j_lo: i64,
    /// `V` on cells `j_lo, j_lo + 1, ...`.
    levels: Vec<f64>,
}

#[derive(Clone)]
pub struct CallablePotential {
    pub f: PotentialFn,
    pub lower: f64,
    pub upper: f64,
    /// Points where `V` may be non-smooth.
    pub breaks: Vec<f64>,
    pub quadrature: QuadratureConfig,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::PiecewiseConstant(l) => f.debug_tuple("PiecewiseConstant").field(l).finish(),
            Potential::Grid { knots, .. } => f.debug_struct("Grid").field("knots", &knots.len()).finish(),
            Potential::Callable(c) => f
                .debug_struct("Callable")
                .field("lower", &c.lower)
                .field("upper", &c.upper)
                .finish(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `x / ε` rounded when it is within `1e-9` of an integer.
pub fn lattice_index(x: f64, mesh: f64) -> Option<i64> {
    let r = (x / mesh).round();
    ((x / mesh - r).abs() <= 1e-9).then_some(r as i64)
}

fn cell_of(x: f64, mesh: f64) -> i64 {
    lattice_index(x, mesh).unwrap_or_else(|| (x / mesh).floor() as i64)
}

impl LatticePotential {
    /// From increments `q_k` for `k = k_lo, ..., k_lo + q.len() - 1`:
    /// `V = Σ_{k=1}^{j} q_k` on cell `j ≥ 1`, `V = 0` on cell 0 and
    /// `V = -Σ_{k=j+1}^{0} q_k` on cell `j < 0`. The window must contain
    /// `k = 0`; the cells covered are `k_lo - 1, ..., k_hi`.
    pub fn from_increments(mesh: f64, k_lo: i64, q: &[f64]) -> Result<Self> {
        if !(mesh > 0.0 && mesh.is_finite()) {
            return Err(Error::Validation(format!("mesh must be positive, got {mesh}")));
        }
        let k_hi = k_lo + q.len() as i64 - 1;
        if !(k_lo <= 0 && k_hi >= 0) {
            return Err(Error::Validation("increment window must contain k = 0".into()));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("increments must be finite".into()));
        }
        let j_lo = k_lo - 1;
        let mut levels = vec![0.0; (k_hi - j_lo + 1) as usize];
        let q_at = |k: i64| q[(k - k_lo) as usize];
        let zero = (0 - j_lo) as usize;
        for j in 1..=k_hi {
            levels[zero + j as usize] = levels[zero + j as usize - 1] + q_at(j);
        }
        for j in (j_lo..0).rev() {
            let i = (j - j_lo) as usize;
            levels[i] = levels[i + 1] - q_at(j + 1);
        }
        Ok(Self { mesh, j_lo, levels })
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    /// Closed domain `[j_lo ε, (j_hi + 1) ε]`.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.j_lo as f64 * self.mesh,
            (self.j_lo + self.levels.len() as i64) as f64 * self.mesh,
        )
    }

    fn level(&self, j: i64) -> Option<f64> {
        let i = j - self.j_lo;
        (i >= 0 && (i as usize) < self.levels.len()).then(|| self.levels[i as usize])
    }

    /// The increment `q_k = V(kε) - V((k-1)ε)`.
    pub fn increment(&self, k: i64) -> Option<f64> {
        Some(self.level(k)? - self.level(k - 1)?)
    }
}

/// Affine piece of `V` along a direction of travel.
#[derive(Debug, Clone, Copy)]
struct Piece {
    len: f64,
    start: f64,
    slope: f64,
}

/// `(e^x - 1) / x`.
fn exprel(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

fn ln_exprel(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        x / 2.0 + x * x / 24.0
    } else if x > 0.0 {
        x + (-(-x).exp_m1() / x).ln()
    } else {
        (x.exp_m1() / x).ln()
    }
}

/// `(e^x - 1 - x) / x^2`.
fn g2(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        0.5 + x / 6.0 + x * x / 24.0
    } else {
        (x.exp_m1() - x) / (x * x)
    }
}

fn ln_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiOptions {
    /// Bisection stops when the bracket is below `tolerance * ε`.
    pub tolerance: f64,
    /// The bracket may grow to `2^max_doublings * ε`.
    pub max_doublings: u32,
}

impl Default for PsiOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_doublings: 10,
        }
    }
}

impl Potential {
    pub fn piecewise_constant(mesh: f64, k_lo: i64, q: &[f64]) -> Result<Self> {
        Ok(Potential::PiecewiseConstant(LatticePotential::from_increments(mesh, k_lo, q)?))
    }

    pub fn grid(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Validation("grid potential needs matching knots and values, at least two".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("grid knots must be strictly increasing".into()));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Validation("grid knots and values must be finite".into()));
        }
        Ok(Potential::Grid { knots, values })
    }

    /// A callable potential on the whole line.
    pub fn callable(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Potential::Callable(CallablePotential {
            f: Arc::new(f),
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            breaks: Vec::new(),
            quadrature: QuadratureConfig::default(),
        })
    }

    /// `V ≡ 0`.
    pub fn zero() -> Self {
        Potential::callable(|_| 0.0)
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            Potential::PiecewiseConstant(l) => l.domain(),
            Potential::Grid { knots, .. } => (knots[0], *knots.last().unwrap()),
            Potential::Callable(c) => (c.lower, c.upper),
        }
    }

    fn check_range(&self, lo: f64, hi: f64) -> Result<()> {
        let (a, b) = self.domain();
        if lo < a || hi > b || lo.is_nan() || hi.is_nan() {
            return Err(Error::Range(format!("[{lo}, {hi}] is outside the potential's domain [{a}, {b}]")));
        }
        Ok(())
    }

    /// `V(a)`; right-continuous for piecewise-constant potentials.
    pub fn value(&self, a: f64) -> Result<f64> {
        match self {
            Potential::PiecewiseConstant(l) => l
                .level(cell_of(a, l.mesh))
                .filter(|_| a < l.domain().1)
                .ok_or_else(|| Error::Range(format!("{a} is outside the potential window"))),
            Potential::Grid { knots, values } => {
                self.check_range(a, a)?;
                let i = knots.partition_point(|k| *k <= a).clamp(1, knots.len() - 1);
                let t = (a - knots[i - 1]) / (knots[i] - knots[i - 1]);
                Ok(values[i - 1] + t * (values[i] - values[i - 1]))
            }
            Potential::Callable(c) => {
                self.check_range(a, a)?;
                let v = (c.f)(a);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Validation(format!("potential is not finite at {a}")))
                }
            }
        }
    }

    /// Points in `(lo, hi)` where `V` may be non-smooth.
    pub fn breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self {
            Potential::PiecewiseConstant(l) => {
                let (j0, j1) = ((lo / l.mesh).floor() as i64 + 1, (hi / l.mesh).ceil() as i64);
                (j0..j1).map(|j| j as f64 * l.mesh).filter(|x| *x > lo && *x < hi).collect()
            }
            Potential::Grid { knots, .. } => knots.iter().copied().filter(|x| *x > lo && *x < hi).collect(),
            Potential::Callable(c) => c.breaks.iter().copied().filter(|x| *x > lo && *x < hi).collect(),
        }
    }

    /// Affine pieces covering `[lo, hi]` in increasing order.
    fn pieces(&self, lo: f64, hi: f64) -> Result<Option<Vec<Piece>>> {
        self.check_range(lo, hi)?;
        match self {
            Potential::PiecewiseConstant(l) => {
                let mut out = Vec::new();
                let mut j = cell_of(lo, l.mesh);
                let mut u = lo;
                while u < hi {
                    let w = ((j + 1) as f64 * l.mesh).min(hi);
                    if w > u {
                        let v = l.level(j).ok_or_else(|| Error::Range(format!("cell {j} is outside the window")))?;
                        out.push(Piece {
                            len: w - u,
                            start: v,
                            slope: 0.0,
                        });
                    }
                    u = w;
                    j += 1;
                }
                Ok(Some(out))
            }
            Potential::Grid { knots, values } => {
                let mut out = Vec::new();
                let mut i = knots.partition_point(|k| *k <= lo).clamp(1, knots.len() - 1);
                let mut u = lo;
                while u < hi && i < knots.len() {
                    let w = knots[i].min(hi);
                    let slope = (values[i] - values[i - 1]) / (knots[i] - knots[i - 1]);
                    if w > u {
                        out.push(Piece {
                            len: w - u,
                            start: values[i - 1] + slope * (u - knots[i - 1]),
                            slope,
                        });
                    }
                    u = w;
                    i += 1;
                }
                Ok(Some(out))
            }
            Potential::Callable(_) => Ok(None),
        }
    }

    /// Pieces from `a` over length `len` in the direction of `side`.
    fn directed_pieces(&self, a: f64, len: f64, side: Side) -> Result<Option<Vec<Piece>>> {
        match side {
            Side::Up => self.pieces(a, a + len),
            Side::Down => Ok(self.pieces(a - len, a)?.map(|ps| {
                ps.into_iter()
                    .rev()
                    .map(|p| Piece {
                        len: p.len,
                        start: p.start + p.slope * p.len,
                        slope: -p.slope,
                    })
                    .collect()
            })),
        }
    }

    /// `ln ∫_{a1}^{a2} e^{±V}`.
    pub fn ln_exp_integral(&self, a1: f64, a2: f64, sign: Sign) -> Result<f64> {
        if !(a1 <= a2) {
            return Err(Error::Precondition(format!("integration bounds out of order: {a1} > {a2}")));
        }
        if a1 == a2 {
            return Ok(f64::NEG_INFINITY);
        }
        let s = sign.factor();
        match self.pieces(a1, a2)? {
            Some(ps) => Ok(ps
                .iter()
                .map(|p| s * p.start + p.len.ln() + ln_exprel(s * p.slope * p.len))
                .fold(f64::NEG_INFINITY, ln_add)),
            None => {
                let Potential::Callable(c) = self else { unreachable!() };
                let shift = (0..=32)
                    .map(|i| s * (c.f)(a1 + (a2 - a1) * i as f64 / 32.0))
                    .fold(f64::NEG_INFINITY, f64::max);
                if !shift.is_finite() {
                    return Err(Error::Validation(format!("potential is not finite on [{a1}, {a2}]")));
                }
                let mut bad = false;
                let v = integrate(
                    &mut |x| {
                        let e = (s * (c.f)(x) - shift).exp();
                        bad |= !e.is_finite();
                        e
                    },
                    a1,
                    a2,
                    &self.breaks(a1, a2),
                    &c.quadrature,
                )?;
                if bad {
                    return Err(Error::Validation(format!("e^V is not integrable on [{a1}, {a2}]")));
                }
                Ok(shift + v.ln())
            }
        }
    }

    /// `∫_{a1}^{a2} e^{±V(b)} db`.
    pub fn exp_integral(&self, a1: f64, a2: f64, sign: Sign) -> Result<f64> {
        let v = self.ln_exp_integral(a1, a2, sign)?.exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Overflow(format!("∫ e^(±V) over [{a1}, {a2}] overflows")))
        }
    }

    /// `φ(a, h) = 2 ∫_a^{a+h} ∫_a^b e^{V(b) - V(c)} dc db`.
    pub fn phi(&self, a: f64, h: f64) -> Result<f64> {
        if h == 0.0 {
            return Ok(0.0);
        }
        let side = if h > 0.0 { Side::Up } else { Side::Down };
        match self.directed_pieces(a, h.abs(), side)? {
            Some(ps) => Ok(phi_walk(&ps, f64::INFINITY, 0.0).0),
            None => self.phi_quadrature(a, h),
        }
    }

    fn phi_quadrature(&self, a: f64, h: f64) -> Result<f64> {
        let Potential::Callable(c) = self else { unreachable!() };
        let (lo, hi) = if h > 0.0 { (a, a + h) } else { (a + h, a) };
        self.check_range(lo, hi)?;
        let va = self.value(a)?;
        let breaks = self.breaks(lo, hi);
        let cfg = c.quadrature.refined(10.0);
        let mut err = None;
        let outer = integrate(
            &mut |b| {
                let (u, w) = if b > a { (a, b) } else { (b, a) };
                let inner = integrate(&mut |x| (va - (c.f)(x)).exp(), u, w, &self.breaks(u, w), &cfg);
                match inner {
                    Ok(i) => ((c.f)(b) - va).exp() * i,
                    Err(e) => {
                        err.get_or_insert(e);
                        0.0
                    }
                }
            },
            lo,
            hi,
            &breaks,
            &c.quadrature,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(2.0 * outer)
    }

    /// The step `ψ > 0` with `φ(a, ±ψ) = ε²`.
    pub fn psi(&self, a: f64, eps: f64, side: Side, opts: &PsiOptions) -> Result<f64> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Validation(format!("ε must be positive, got {eps}")));
        }
        let target = eps * eps;
        let sgn = if side == Side::Up { 1.0 } else { -1.0 };
        let cap = eps * 2f64.powi(opts.max_doublings as i32);
        let (dom_lo, dom_hi) = self.domain();
        let room = if side == Side::Up { dom_hi - a } else { a - dom_lo };
        if !(room > 0.0) {
            return Err(Error::Range(format!("{a} has no room below/above it in the potential's domain")));
        }
        let mut hi = 2.0 * eps;
        loop {
            let probe = hi.min(room);
            if self.phi(a, sgn * probe)? >= target {
                hi = probe;
                break;
            }
            if probe >= room {
                return Err(Error::Range(format!("step from {a} leaves the potential's domain")));
            }
            hi *= 2.0;
            if hi > cap {
                return Err(Error::PsiSolve {
                    position: a,
                    reason: format!("φ stays below ε² up to the bracket cap {cap:e}"),
                });
            }
        }
        if let Some(ps) = self.directed_pieces(a, hi, side)? {
            return Ok(phi_walk(&ps, target, opts.tolerance * eps).1.expect("the bracket contains the root"));
        }
        let (mut lo, mut hi) = (0.0, hi);
        while hi - lo > opts.tolerance * eps {
            let mid = 0.5 * (lo + hi);
            if self.phi(a, sgn * mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `∫_{a-ψ_down}^{a} e^V / ∫_{a-ψ_down}^{a+ψ_up} e^V`.
    pub fn p(&self, a: f64, psi_up: f64, psi_down: f64) -> Result<f64> {
        if !(psi_up > 0.0 && psi_down > 0.0) {
            return Err(Error::Precondition("step sizes must be positive".into()));
        }
        let down = self.ln_exp_integral(a - psi_down, a, Sign::Plus)?;
        let up = self.ln_exp_integral(a, a + psi_up, Sign::Plus)?;
        Ok(1.0 / (1.0 + (up - down).exp()))
    }

    /// `(ψ_up, ψ_down, p)` at `a`.
    pub fn transition(&self, a: f64, eps: f64, opts: &PsiOptions) -> Result<Transition> {
        let up = self.psi(a, eps, Side::Up, opts)?;
        let down = self.psi(a, eps, Side::Down, opts)?;
        Ok(Transition {
            psi_up: up,
            psi_down: down,
            p_up: self.p(a, up, down)?,
        })
    }
}

/// Accumulates `φ` over directed pieces. Returns the total and, if `target`
/// is crossed, the distance at which `φ = target`.
fn phi_walk(pieces: &[Piece], target: f64, tol: f64) -> (f64, Option<f64>) {
    let mut phi = 0.0;
    let mut ln_i = f64::NEG_INFINITY;
    let mut dist = 0.0;
    for p in pieces {
        // On the piece, φ(t) = φ_u + 2 (A t exprel(s t) + t² g2(s t)).
        let a_coef = (p.start + ln_i).exp();
        let at = |t: f64| phi + 2.0 * (a_coef * t * exprel(p.slope * t) + t * t * g2(p.slope * t));
        let end = at(p.len);
        if end >= target {
            let rem = target - phi;
            let t = if p.slope == 0.0 {
                rem / (a_coef + (a_coef * a_coef + rem).sqrt())
            } else {
                let (mut lo, mut hi) = (0.0, p.len);
                while hi - lo > tol {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    if at(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            return (end, Some(dist + t.min(p.len)));
        }
        phi = end;
        ln_i = ln_add(ln_i, -p.start + p.len.ln() + ln_exprel(-p.slope * p.len));
        dist += p.len;
    }
    (phi, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub psi_up: f64,
    pub psi_down: f64,
    pub p_up: f64,
}

/// Transitions at lattice points `kε`, computed once each.
struct TransitionTable {
    eps: f64,
    near: Vec<OnceLock<Transition>>,
    far: DashMap<i64, Transition>,
}

const NEAR_HALF_WIDTH: i64 = 1 << 16;

impl TransitionTable {
    fn new(eps: f64) -> Self {
        Self {
            eps,
            near: (0..2 * NEAR_HALF_WIDTH + 1).map(|_| OnceLock::new()).collect(),
            far: DashMap::new(),
        }
    }

    fn get(&self, v: &Potential, k: i64, opts: &PsiOptions) -> Result<Transition> {
        let slot = k + NEAR_HALF_WIDTH;
        if (0..self.near.len() as i64).contains(&slot) {
            let cell = &self.near[slot as usize];
            if let Some(t) = cell.get() {
                return Ok(*t);
            }
            let t = v.transition(k as f64 * self.eps, self.eps, opts)?;
            return Ok(*cell.get_or_init(|| t));
        }
        if let Some(t) = self.far.get(&k) {
            return Ok(*t);
        }
        let t = v.transition(k as f64 * self.eps, self.eps, opts)?;
        self.far.insert(k, t);
        Ok(t)
    }
}

/// Paths `t -> X_{⌊t/ε²⌋}` of the chain that moves from `a` to `a + ψ_up`
/// with probability `p` and to `a - ψ_down` otherwise.
///
/// Positions within `1e-9 ε` of the lattice `εZ` are snapped onto it and
/// their transitions memoized. A step that would leave the potential's
/// domain sends the chain to Δ.
pub fn potential_chain_simulate(
    v: &Potential,
    start: &Start,
    eps: f64,
    opts: &PsiOptions,
    cfg: &SimConfig,
) -> Result<Vec<PathRecord>> {
    cfg.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Validation(format!("ε must be positive, got {eps}")));
    }
    if start.dim() != 1 {
        return Err(Error::Validation("potential diffusions are one-dimensional".into()));
    }
    let times = cfg.grid.resolve(cfg.horizon)?;
    let table = TransitionTable::new(eps);
    run_batch(cfg.paths, |i| {
        let mut r = rng::stream(cfg.seed, Domain::Path, i);
        let x0 = start.draw(cfg.seed, i);
        run_chain(&times, eps * eps, x0, cfg.escape_radius, &mut r, |x, r| {
            let a = x[0];
            let t = match lattice_index(a, eps) {
                Some(k) => table.get(v, k, opts),
                None => v.transition(a, eps, opts),
            };
            let t = match t {
                Ok(t) => t,
                Err(Error::Range(_)) => return Ok(Step::Killed),
                Err(e) => return Err(e),
            };
            let base = lattice_index(a, eps).map_or(a, |k| k as f64 * eps);
            x[0] = if rng::open_unit(r) <= t.p_up {
                base + t.psi_up
            } else {
                base - t.psi_down
            };
            if let Some(k) = lattice_index(x[0], eps) {
                x[0] = k as f64 * eps;
            }
            Ok(Step::Alive)
        })
    })
}

/// `f` with `½ e^V (e^{-V} f')' = g`, `f(0) = f0` and `(e^{-V} f')(0) = s0`:
/// `f(x) = f0 + ∫_0^x e^{V(b)} (s0 + 2 ∫_0^b e^{-V(c)} g(c) dc) db`.
#[derive(Clone)]
pub struct TransportedFunction {
    v: Potential,
    f0: f64,
    s0: f64,
    g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    lower: f64,
    upper: f64,
    cfg: QuadratureConfig,
}

pub fn transport_test_function(
    v: &Potential,
    f0: f64,
    s0: f64,
    g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    interval: (f64, f64),
    cfg: QuadratureConfig,
) -> Result<TransportedFunction> {
    let (lower, upper) = interval;
    if !(lower <= 0.0 && upper >= 0.0 && lower < upper) {
        return Err(Error::Precondition("interval must contain 0".into()));
    }
    v.check_range(lower, upper)?;
    Ok(TransportedFunction {
        v: v.clone(),
        f0,
        s0,
        g: Arc::new(g),
        lower,
        upper,
        cfg,
    })
}

impl TransportedFunction {
    pub fn value(&self, x: f64) -> Result<f64> {
        if !(x >= self.lower && x <= self.upper) {
            return Err(Error::Range(format!("{x} is outside [{}, {}]", self.lower, self.upper)));
        }
        if x == 0.0 {
            return Ok(self.f0);
        }
        let (lo, hi, orient) = if x > 0.0 { (0.0, x, 1.0) } else { (x, 0.0, -1.0) };
        let linear = self.s0 * orient * self.v.exp_integral(lo, hi, Sign::Plus)?;
        let breaks = self.v.breaks(lo, hi);
        let inner_cfg = self.cfg.refined(10.0);
        let mut err = None;
        let mut value = |b: f64| -> f64 {
            let (u, w, o) = if b > 0.0 { (0.0, b, 1.0) } else { (b, 0.0, -1.0) };
            let inner = integrate(
                &mut |c| (-self.v.value(c).unwrap_or(f64::NAN)).exp() * (self.g)(c),
                u,
                w,
                &self.v.breaks(u, w),
                &inner_cfg,
            );
            match (inner, self.v.value(b)) {
                (Ok(i), Ok(vb)) => vb.exp() * 2.0 * o * i,
                (Err(e), _) | (_, Err(e)) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        };
        let quad = integrate(&mut value, lo, hi, &breaks, &self.cfg)?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(self.f0 + linear + orient * quad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialDistance {
    pub radius: f64,
    pub value: f64,
}

/// `∫_{-M}^{M} |e^V - e^W| ∨ |e^{-V} - e^{-W}| da`.
pub fn potential_distance(v: &Potential, w: &Potential, m: f64, cfg: &QuadratureConfig) -> Result<PotentialDistance> {
    if !(m > 0.0) {
        return Err(Error::Precondition(format!("window radius must be positive, got {m}")));
    }
    v.check_range(-m, m)?;
    w.check_range(-m, m)?;
    let mut breaks = v.breaks(-m, m);
    breaks.extend(w.breaks(-m, m));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut err = None;
    let value = integrate(
        &mut |a| match (v.value(a), w.value(a)) {
            (Ok(x), Ok(y)) => (x.exp() - y.exp()).abs().max(((-x).exp() - (-y).exp()).abs()),
            (Err(e), _) | (_, Err(e)) => {
                err.get_or_insert(e);
                0.0
            }
        },
        -m,
        m,
        &breaks,
        cfg,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(PotentialDistance { radius: m, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::mean_se;
    use crate::path::marginal;
    use crate::sim::GridSpec;
    use proptest::prelude::*;

    fn lattice(mesh: f64, q: &[f64]) -> Potential {
        // q indexed from k = -(len/2).
        let k_lo = -(q.len() as i64 / 2);
        Potential::piecewise_constant(mesh, k_lo, q).unwrap()
    }

    #[test]
    fn lattice_levels() {
        let v = Potential::piecewise_constant(1.0, 0, &[3.0, 2.0]).unwrap();
        assert_eq!(v.value(1.5).unwrap(), 2.0);
        assert_eq!(v.value(0.5).unwrap(), 0.0);
        assert_eq!(v.value(-0.5).unwrap(), -3.0);
        assert_eq!(v.value(0.0).unwrap(), 0.0);
        assert!(matches!(v.value(2.0), Err(Error::Range(_))));
    }

    #[test]
    fn exp_integral_examples() {
        assert_eq!(Potential::zero().exp_integral(0.0, 1.0, Sign::Plus).unwrap(), 1.0);
        let v = Potential::piecewise_constant(1.0, 0, &[0.0, 2f64.ln()]).unwrap();
        assert!((v.exp_integral(1.0, 2.0, Sign::Plus).unwrap() - 2.0).abs() < 1e-15);
        let g = Potential::grid(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!((g.exp_integral(0.0, 1.0, Sign::Plus).unwrap() - (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!((g.exp_integral(0.0, 1.0, Sign::Minus).unwrap() - (1.0 - (-1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn exp_integral_survives_large_potentials() {
        let g = Potential::grid(vec![0.0, 1.0], vec![800.0, 801.0]).unwrap();
        let ln = g.ln_exp_integral(0.0, 1.0, Sign::Plus).unwrap();
        assert!((ln - (800.0 + (std::f64::consts::E - 1.0).ln())).abs() < 1e-12);
        assert!(matches!(g.exp_integral(0.0, 1.0, Sign::Plus), Err(Error::Overflow(_))));
        let c = Potential::callable(|x| 800.0 + x);
        let ln_c = c.ln_exp_integral(0.0, 1.0, Sign::Plus).unwrap();
        assert!((ln_c - ln).abs() < 1e-9);
    }

    #[test]
    fn phi_of_constant_potential() {
        for v in [Potential::zero(), Potential::callable(|_| 3.0), lattice(0.1, &[0.0; 40])] {
            for h in [0.3, -0.25, 0.01] {
                assert!((v.phi(0.05, h).unwrap() - h * h).abs() < 1e-12, "{v:?} {h}");
            }
            assert_eq!(v.phi(0.05, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn phi_of_affine_grid_matches_closed_form() {
        // V(b) = s b: φ(0, h) = 2 ∫_0^h ∫_0^b e^{s(b-c)} dc db = 2 h² g2(s h).
        let s = 1.7;
        let v = Potential::grid(vec![-5.0, 5.0], vec![-5.0 * s, 5.0 * s]).unwrap();
        let c = Potential::callable(move |x| s * x);
        for h in [0.4, -0.9] {
            let exact = 2.0 * h * h * ((s * h).exp_m1() - s * h) / (s * h).powi(2);
            assert!((v.phi(0.0, h).unwrap() - exact).abs() < 1e-13);
            assert!((c.phi(0.0, h).unwrap() - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn lattice_steps_are_the_mesh() {
        let q = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.0, -2.5];
        let eps = 0.05;
        let v = lattice(eps, &q);
        let opts = PsiOptions::default();
        for k in -3..=2 {
            let a = k as f64 * eps;
            let t = v.transition(a, eps, &opts).unwrap();
            assert!((t.psi_up - eps).abs() < 1e-12 * eps, "k={k}: {t:?}");
            assert!((t.psi_down - eps).abs() < 1e-12 * eps, "k={k}: {t:?}");
            let qk = match &v {
                Potential::PiecewiseConstant(l) => l.increment(k).unwrap(),
                _ => unreachable!(),
            };
            assert!((t.p_up - 1.0 / (1.0 + qk.exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn psi_examples() {
        let opts = PsiOptions::default();
        let v = Potential::callable(|_| 1.0);
        assert!((v.psi(0.3, 0.1, Side::Up, &opts).unwrap() - 0.1).abs() < 1e-12);
        assert!((v.psi(0.3, 0.1, Side::Down, &opts).unwrap() - 0.1).abs() < 1e-12);
        let w = Potential::callable(|x: f64| 2.0 * x.sin());
        let mut prev = f64::INFINITY;
        for eps in [0.4, 0.2, 0.1, 0.05, 0.01] {
            let psi = w.psi(0.7, eps, Side::Up, &opts).unwrap();
            assert!(psi < prev);
            prev = psi;
        }
    }

    #[test]
    fn psi_bracket_cap() {
        // V falls with slope 1000, so φ(0, h) ≈ h / 500 stays below ε² = 0.01.
        let v = Potential::grid(vec![0.0, 10.0], vec![0.0, -10_000.0]).unwrap();
        let err = v.psi(0.0, 0.1, Side::Up, &PsiOptions { tolerance: 1e-12, max_doublings: 3 }).unwrap_err();
        assert!(matches!(err, Error::PsiSolve { .. }));
    }

    #[test]
    fn p_examples() {
        let v = Potential::zero();
        assert_eq!(v.p(0.0, 0.2, 0.2).unwrap(), 0.5);
        let big = Potential::piecewise_constant(1.0, 0, &[0.0, 700.0]).unwrap();
        let p = big.p(1.0, 1.0, 1.0).unwrap();
        assert!(p > 0.0 && p < 1e-300);
    }

    proptest! {
        #[test]
        fn phi_is_increasing_and_psi_round_trips(q in prop::collection::vec(-3.0..3.0f64, 40), a in -0.1..0.1f64, eps in 0.01..0.08f64, grid in any::<bool>()) {
            let v = if grid {
                let knots: Vec<f64> = (0..40).map(|i| -1.0 + 2.0 * i as f64 / 39.0).collect();
                Potential::grid(knots, q.clone()).unwrap()
            } else {
                Potential::piecewise_constant(0.05, -20, &q).unwrap()
            };
            let mut prev = 0.0;
            for i in 1..20 {
                let h = 0.01 * i as f64;
                let up = v.phi(a, h).unwrap();
                prop_assert!(up > prev);
                prev = up;
            }
            let opts = PsiOptions::default();
            for side in [Side::Up, Side::Down] {
                let psi = match v.psi(a, eps, side, &opts) {
                    Err(Error::Range(_) | Error::PsiSolve { .. }) => continue,
                    r => r.unwrap(),
                };
                let h = if side == Side::Up { psi } else { -psi };
                prop_assert!((v.phi(a, h).unwrap() - eps * eps).abs() <= 1e-10 * eps * eps);
            }
        }
    }

    #[test]
    fn transport_examples() {
        let cfg = QuadratureConfig::tight();
        let z = Potential::zero();
        let line = transport_test_function(&z, 1.0, 2.0, |_| 0.0, (-2.0, 2.0), cfg).unwrap();
        let sq = transport_test_function(&z, 0.0, 0.0, |_| 1.0, (-2.0, 2.0), cfg).unwrap();
        let w = Potential::callable(|x: f64| x.sin() * 3.0);
        let flat = transport_test_function(&w, 0.7, 0.0, |_| 0.0, (-2.0, 2.0), cfg).unwrap();
        for x in [-1.5, -0.2, 0.0, 0.9] {
            assert!((line.value(x).unwrap() - (1.0 + 2.0 * x)).abs() < 1e-12);
            assert!((sq.value(x).unwrap() - x * x).abs() < 1e-12);
            assert!((flat.value(x).unwrap() - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn transported_function_solves_the_equation() {
        let v = Potential::callable(|x: f64| 0.5 * x.sin());
        let vf = |x: f64| 0.5 * x.sin();
        let g = |x: f64| x.cos();
        let f = transport_test_function(&v, 0.3, -0.2, g, (-1.0, 1.0), QuadratureConfig::tight()).unwrap();
        for (h, tol) in [(2e-2, 2e-3), (1e-2, 5e-4)] {
            for x in [-0.5, 0.1, 0.6] {
                let fd = 0.5 * vf(x).exp()
                    * ((-vf(x + h / 2.0)).exp() * (f.value(x + h).unwrap() - f.value(x).unwrap())
                        - (-vf(x - h / 2.0)).exp() * (f.value(x).unwrap() - f.value(x - h).unwrap()))
                    / (h * h);
                assert!((fd - g(x)).abs() < tol, "x={x} h={h}: {fd} vs {}", g(x));
            }
        }
    }

    #[test]
    fn distance_examples() {
        let cfg = QuadratureConfig::default();
        let z = Potential::zero();
        assert_eq!(potential_distance(&z, &z, 1.0, &cfg).unwrap().value, 0.0);
        let l2 = Potential::callable(|_| 2f64.ln());
        assert!((potential_distance(&z, &l2, 1.0, &cfg).unwrap().value - 2.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for n in [1.0, 10.0, 100.0] {
            let vn = Potential::callable(move |x: f64| x.sin() + 1.0 / n);
            let d = potential_distance(&Potential::callable(|x: f64| x.sin()), &vn, 2.0, &cfg).unwrap().value;
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 0.1);
    }

    #[test]
    fn zero_potential_chain_is_a_simple_walk() {
        // ε Y_400 with Y the simple walk: E X^2 = 1 and P(X = 0) = C(400, 200) / 2^400.
        let cfg = SimConfig::new(1.0, 40_000, 21).with_grid(GridSpec::Uniform(2));
        let paths = potential_chain_simulate(&Potential::zero(), &Start::Point(vec![0.0]), 0.05, &PsiOptions::default(), &cfg).unwrap();
        let xs = marginal(&paths, 1, 0);
        assert!(xs.iter().all(|x| lattice_index(*x, 0.1).is_some()));
        let (m2, se) = mean_se(&xs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!((m2 - 1.0).abs() < 4.0 * se, "{m2} ± {se}");
        let p0 = (statrs::function::factorial::ln_binomial(400, 200) - 400.0 * 2f64.ln()).exp();
        let (f0, se) = mean_se(&xs.iter().map(|x| if x.abs() < 1e-9 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        assert!((f0 - p0).abs() < 4.0 * se, "{f0} vs {p0}");
    }

    #[test]
    fn smooth_potential_chain_is_near_the_diffusion() {
        // V(a) = a: generator ½ f'' - ½ f', so X_1 ~ N(-1/2, 1) from 0.
        let cfg = SimConfig::new(1.0, 4_000, 24).with_grid(GridSpec::Uniform(2));
        let v = Potential::grid(vec![-20.0, 20.0], vec![-20.0, 20.0]).unwrap();
        let paths = potential_chain_simulate(&v, &Start::Point(vec![0.0]), 0.05, &PsiOptions::default(), &cfg).unwrap();
        let (m, se) = mean_se(&marginal(&paths, 1, 0));
        assert!((m + 0.5).abs() < 4.0 * se + 0.05, "{m} ± {se}");
    }

    #[test]
    fn chain_leaving_window_is_killed() {
        let v = Potential::piecewise_constant(0.1, -2, &[0.0; 5]).unwrap();
        let cfg = SimConfig::new(1.0, 50, 22).with_grid(GridSpec::Uniform(3));
        let paths = potential_chain_simulate(&v, &Start::Point(vec![0.0]), 0.1, &PsiOptions::default(), &cfg).unwrap();
        assert!(paths.iter().all(|p| p.exploded()));
        assert!(paths.iter().all(|p| p.check_absorption()));
    }

    #[test]
    fn chain_is_reproducible() {
        let v = Potential::callable(|x: f64| (3.0 * x).sin());
        let cfg = SimConfig::new(0.2, 16, 23).with_grid(GridSpec::Uniform(3));
        let a = potential_chain_simulate(&v, &Start::Point(vec![0.013]), 0.1, &PsiOptions::default(), &cfg).unwrap();
        let b = potential_chain_simulate(&v, &Start::Point(vec![0.013]), 0.1, &PsiOptions::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
