//! Euler scheme with frozen-coefficient Lévy increments.
//!
//! From state `a` the chain moves by one increment over time `dt` of the Lévy
//! process with triplet `(δ(a), γ(a), ν(a))`. Jumps larger than `τ` form a
//! compound Poisson sum; smaller jumps are replaced by their compensator in
//! the drift or by a Gaussian surrogate.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{unit_sphere_area, QuadratureConfig};
use crate::path::PathRecord;
use crate::rng::{self, Domain, StreamRng};
use crate::sim::{run_batch, run_chain, SimConfig, Start, Step};
use crate::triplet::{AtomLocation, CompensationFunction, JumpMeasure, LevyTriplet, TailSampler, TripletField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SmallJumps {
    /// Drop jumps below τ and keep their compensator in the drift.
    #[default]
    DriftCompensate,
    /// Replace jumps below τ by a centred Gaussian with the same second moment.
    GaussianSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementPlan {
    /// Truncation radius; `None` picks a default per measure.
    pub tau: Option<f64>,
    pub small_jumps: SmallJumps,
    /// Largest admissible expected number of jumps in one step.
    pub overflow_guard: f64,
    pub quadrature: QuadratureConfig,
}

impl Default for IncrementPlan {
    fn default() -> Self {
        Self {
            tau: None,
            small_jumps: SmallJumps::DriftCompensate,
            overflow_guard: 1e6,
            quadrature: QuadratureConfig::default(),
        }
    }
}

impl IncrementPlan {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn with_small_jumps(mut self, mode: SmallJumps) -> Self {
        self.small_jumps = mode;
        self
    }

    /// `τ` for measure `nu` at step `dt`: `1e-3 (c dt)^{1/α}` for stable
    /// measures with `c > 0`, otherwise `1e-3`.
    pub fn resolve_tau(&self, nu: &JumpMeasure, dt: f64) -> Result<f64> {
        let tau = match (self.tau, nu) {
            (Some(t), _) => t,
            (None, JumpMeasure::StableLike { c, alpha } | JumpMeasure::TruncatedStable { c, alpha, .. }) if *c > 0.0 => {
                1e-3 * (c * dt).powf(1.0 / alpha)
            }
            (None, _) => 1e-3,
        };
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Validation(format!("truncation radius must be positive, got {tau}")));
        }
        Ok(tau)
    }
}

#[derive(Clone)]
enum BigJumps {
    None,
    /// Jumps to `a + h` (or Δ) with cumulative masses.
    Atoms { jumps: Vec<Option<Vec<f64>>>, cumulative: Vec<f64> },
    /// Radial `c r^{-1-α}` above `floor`; magnitudes come from the series
    /// `r_k = (c S dt / (α Γ_k))^{1/α}` in decreasing order.
    Stable { c_s: f64, alpha: f64, floor: f64 },
    Sampler { sampler: TailSampler, tau: f64 },
}

/// A triplet decomposed for sampling at a fixed state and step size.
#[derive(Clone)]
pub struct PreparedIncrement {
    dim: usize,
    dt: f64,
    drift: Vec<f64>,
    gamma_root: Option<DMatrix<f64>>,
    surrogate_sd: f64,
    lambda: f64,
    big: BigJumps,
}

impl PreparedIncrement {
    /// Decomposes `triplet` at `a` for step `dt`.
    pub fn new(
        triplet: &LevyTriplet,
        chi: &CompensationFunction,
        a: &[f64],
        dt: f64,
        plan: &IncrementPlan,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!("step must be positive, got {dt}")));
        }
        let d = triplet.dim();
        if a.len() != d {
            return Err(Error::Validation("state and triplet dimensions differ".into()));
        }
        triplet.validate()?;
        let nu = &triplet.jumps;
        nu.validate_shape()?;
        let cfg = &plan.quadrature;
        let tau = plan.resolve_tau(nu, dt)?;
        let lambda = big_jump_rate(nu, a, tau, cfg)?;
        let expected = lambda * dt;
        if expected > plan.overflow_guard {
            return Err(Error::StepSize {
                expected,
                guard: plan.overflow_guard,
            });
        }
        let mut drift = triplet.drift.clone();
        for (v, s) in drift.iter_mut().zip(drift_correction(nu, chi, a, tau, cfg)?) {
            *v += s;
        }
        let surrogate_sd = match plan.small_jumps {
            SmallJumps::DriftCompensate => 0.0,
            SmallJumps::GaussianSurrogate if nu.is_zero() => 0.0,
            SmallJumps::GaussianSurrogate => (nu.truncated_second_moment(a, tau, cfg)? / d as f64).sqrt(),
        };
        let gamma_root = (triplet.gamma.iter().any(|v| *v != 0.0)).then(|| triplet.gamma_sqrt());
        let big = if lambda == 0.0 {
            BigJumps::None
        } else {
            match nu {
                JumpMeasure::Atoms(atoms) => {
                    let mut jumps = Vec::new();
                    let mut cumulative = Vec::new();
                    let mut acc = 0.0;
                    for atom in atoms.iter().filter(|atom| atom.distance_from(a) > tau) {
                        acc += atom.mass;
                        jumps.push(match &atom.location {
                            AtomLocation::Point(p) => Some(p.iter().zip(a).map(|(p, a)| p - a).collect()),
                            AtomLocation::Cemetery => None,
                        });
                        cumulative.push(acc);
                    }
                    BigJumps::Atoms { jumps, cumulative }
                }
                JumpMeasure::StableLike { c, alpha } => BigJumps::Stable {
                    c_s: c * unit_sphere_area(d),
                    alpha: *alpha,
                    floor: tau,
                },
                JumpMeasure::TruncatedStable { c, alpha, cutoff } => BigJumps::Stable {
                    c_s: c * unit_sphere_area(d),
                    alpha: *alpha,
                    floor: tau.max(*cutoff),
                },
                JumpMeasure::UserDensity(u) => match &u.tail_sampler {
                    Some(s) => BigJumps::Sampler {
                        sampler: s.clone(),
                        tau,
                    },
                    None => return Err(Error::Config("simulating a user density needs a tail sampler".into())),
                },
            }
        };
        Ok(Self {
            dim: d,
            dt,
            drift,
            gamma_root,
            surrogate_sd,
            lambda,
            big,
        })
    }

    /// Rate of jumps above τ.
    pub fn big_jump_rate(&self) -> f64 {
        self.lambda
    }

    /// Drift after the compensation adjustments.
    pub fn effective_drift(&self) -> &[f64] {
        &self.drift
    }

    /// One increment, or `None` when a jump lands at Δ.
    ///
    /// The Gaussian draws come from `rng`; the jump part uses a child stream
    /// seeded by a single draw from `rng`, so the parent advances by the same
    /// amount whatever τ is.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<Option<Vec<f64>>> {
        let d = self.dim;
        let mut inc: Vec<f64> = self.drift.iter().map(|v| v * self.dt).collect();
        if let Some(root) = &self.gamma_root {
            let z = DVector::from_iterator(d, (0..d).map(|_| rng::std_normal(rng) * self.dt.sqrt()));
            let g = root * z;
            for (v, g) in inc.iter_mut().zip(g.iter()) {
                *v += g;
            }
        }
        if self.surrogate_sd > 0.0 {
            let s = self.surrogate_sd * self.dt.sqrt();
            for v in inc.iter_mut() {
                *v += s * rng::std_normal(rng);
            }
        }
        let child_seed = rng.next_u64();
        if matches!(self.big, BigJumps::None) {
            return Ok(Some(inc));
        }
        let mut jr = StreamRng::seed_from_u64(child_seed);
        let alive = match &self.big {
            BigJumps::None => true,
            BigJumps::Stable { c_s, alpha, floor } => {
                let mut dir = vec![0.0; d];
                let ln_scale = (c_s * self.dt / alpha).ln();
                let inv_alpha = alpha.recip();
                // r_k ≤ floor exactly when Γ_k ≥ scale / floor^α.
                let stop = (ln_scale - alpha * floor.ln()).exp();
                let mut gamma = 0.0;
                loop {
                    gamma += rng::exp1(&mut jr);
                    if gamma >= stop {
                        break;
                    }
                    let r = ((ln_scale - gamma.ln()) * inv_alpha).exp();
                    if d == 1 {
                        inc[0] += if jr.next_u32() & 1 == 0 { r } else { -r };
                        continue;
                    }
                    rng::unit_sphere(&mut jr, &mut dir);
                    for (v, q) in inc.iter_mut().zip(&dir) {
                        *v += r * q;
                    }
                }
                true
            }
            BigJumps::Atoms { jumps, cumulative } => {
                let total = *cumulative.last().expect("nonempty when the rate is positive");
                let count = poisson(self.lambda * self.dt, &mut jr)?;
                let mut alive = true;
                for _ in 0..count {
                    let u = rng::open_unit(&mut jr) * total;
                    let k = cumulative.partition_point(|c| *c < u).min(jumps.len() - 1);
                    match &jumps[k] {
                        Some(h) => inc.iter_mut().zip(h).for_each(|(v, h)| *v += h),
                        None => alive = false,
                    }
                }
                alive
            }
            BigJumps::Sampler { sampler, tau } => {
                let count = poisson(self.lambda * self.dt, &mut jr)?;
                for _ in 0..count {
                    let h = sampler(*tau, &mut jr);
                    if h.len() != d {
                        return Err(Error::Validation("tail sampler returned a jump of the wrong dimension".into()));
                    }
                    inc.iter_mut().zip(&h).for_each(|(v, h)| *v += h);
                }
                true
            }
        };
        Ok(alive.then_some(inc))
    }
}

fn poisson<R: RngCore + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let p = Poisson::new(mean).map_err(|e| Error::Validation(format!("Poisson mean {mean}: {e}")))?;
    let mut r = rng::RngWrap(rng);
    Ok(p.sample(&mut r) as u64)
}

/// `ν(|h| > τ)`, including mass at Δ.
fn big_jump_rate(nu: &JumpMeasure, a: &[f64], tau: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if nu.is_zero() {
        return Ok(0.0);
    }
    match nu {
        JumpMeasure::UserDensity(u) => match &u.tail_mass {
            Some(m) => Ok(m(tau)),
            None => nu.tail_mass(a, tau, cfg),
        },
        _ => nu.tail_mass(a, tau, cfg),
    }
}

/// `∫_{|h|≤τ} (h - χ) dν - ∫_{|h|>τ} χ dν`, the drift that turns the
/// uncompensated big jumps plus dropped small jumps into the χ-convention.
fn drift_correction(
    nu: &JumpMeasure,
    chi: &CompensationFunction,
    a: &[f64],
    tau: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<f64>> {
    let d = a.len();
    let mut out = vec![0.0; d];
    if nu.is_zero() || (nu.is_radial() && chi.is_translation_invariant()) {
        // Both pieces are odd in h against a symmetric measure.
        return Ok(out);
    }
    let mut at_cemetery = vec![0.0; d];
    chi.eval(a, None, &mut at_cemetery);
    if let JumpMeasure::Atoms(atoms) = nu {
        let mut c = vec![0.0; d];
        for atom in atoms {
            let m = atom.mass;
            match atom.jump_from(a) {
                None => out.iter_mut().zip(&at_cemetery).for_each(|(o, x)| *o -= m * x),
                Some(h) => {
                    chi.eval_jump(a, &h, &mut c);
                    let small = atom.distance_from(a) <= tau;
                    for i in 0..d {
                        out[i] += m * if small { h[i] - c[i] } else { -c[i] };
                    }
                }
            }
        }
        return Ok(out);
    }
    let mut breaks = vec![tau, 1.0];
    if let Some(r) = chi.discontinuity_radius() {
        breaks.push(r);
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = nu.integrate(
            a,
            &|h| {
                let mut c = vec![0.0; d];
                chi.eval_jump(a, h, &mut c);
                let r = h.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r <= tau {
                    h[i] - c[i]
                } else {
                    -c[i]
                }
            },
            -at_cemetery[i],
            &breaks,
            cfg,
        )?;
    }
    Ok(out)
}

/// One increment of the frozen Lévy process over `dt`; `None` is Δ.
pub fn levy_increment_sample<R: RngCore + ?Sized>(
    triplet: &LevyTriplet,
    chi: &CompensationFunction,
    a: &[f64],
    dt: f64,
    plan: &IncrementPlan,
    rng: &mut R,
) -> Result<Option<Vec<f64>>> {
    PreparedIncrement::new(triplet, chi, a, dt, plan)?.sample(rng)
}

/// Whether one decomposition serves every state.
fn state_free<'a>(field: &'a TripletField, chi: &CompensationFunction) -> Option<&'a LevyTriplet> {
    let t = field.constant_value()?;
    let relative = !matches!(t.jumps, JumpMeasure::Atoms(ref a) if !a.is_empty());
    (relative && chi.is_translation_invariant()).then_some(t)
}

/// Paths `t -> X_{⌊t/ε⌋}` of the Euler chain with step `eps`.
pub fn euler_chain_simulate(
    field: &TripletField,
    chi: &CompensationFunction,
    start: &Start,
    eps: f64,
    plan: &IncrementPlan,
    cfg: &SimConfig,
) -> Result<Vec<PathRecord>> {
    cfg.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Validation(format!("step must be positive, got {eps}")));
    }
    if start.dim() != field.dim() {
        return Err(Error::Validation("start and field dimensions differ".into()));
    }
    let times = cfg.grid.resolve(cfg.horizon)?;
    let frozen = match state_free(field, chi) {
        Some(t) => Some(PreparedIncrement::new(t, chi, &vec![0.0; field.dim()], eps, plan)?),
        None => None,
    };
    run_batch(cfg.paths, |i| {
        let mut r = rng::stream(cfg.seed, Domain::Path, i);
        let x0 = start.draw(cfg.seed, i);
        run_chain(&times, eps, x0, cfg.escape_radius, &mut r, |x, r| {
            let inc = match &frozen {
                Some(p) => p.sample(r)?,
                None => PreparedIncrement::new(&field.at(x), chi, x, eps, plan)?.sample(r)?,
            };
            match inc {
                Some(h) => {
                    x.iter_mut().zip(&h).for_each(|(x, h)| *x += h);
                    Ok(Step::Alive)
                }
                None => Ok(Step::Killed),
            }
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{ks_critical_value, ks_distance, ks_one_sample, mean_se};
    use crate::operator::{apply_operator, compensation_shift, default_test_functions};
    use crate::path::marginal;
    use crate::sim::GridSpec;
    use crate::triplet::Atom;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn draws(t: &LevyTriplet, chi: &CompensationFunction, dt: f64, plan: &IncrementPlan, n: usize, seed: u64) -> Vec<Option<Vec<f64>>> {
        let p = PreparedIncrement::new(t, chi, &vec![0.0; t.dim()], dt, plan).unwrap();
        let mut r = rng::stream(seed, Domain::Diagnostic, 0);
        (0..n).map(|_| p.sample(&mut r).unwrap()).collect()
    }

    #[test]
    fn brownian_increment_variance() {
        let xs: Vec<f64> = draws(&LevyTriplet::brownian(1), &CompensationFunction::Chi1, 0.25, &IncrementPlan::default(), 100_000, 1)
            .into_iter()
            .map(|x| x.unwrap()[0])
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((0.245..=0.255).contains(&v), "{v}");
    }

    #[test]
    fn atom_beyond_one_is_uncompensated() {
        let t = LevyTriplet::new(vec![0.0], DMatrix::zeros(1, 1), JumpMeasure::Atoms(vec![Atom::at(vec![2.0], 3.0)])).unwrap();
        let plan = IncrementPlan::default().with_tau(1.0);
        let xs: Vec<f64> = draws(&t, &CompensationFunction::Chi2, 0.5, &plan, 100_000, 2)
            .into_iter()
            .map(|x| x.unwrap()[0])
            .collect();
        assert!(xs.iter().all(|x| x.rem_euclid(2.0) == 0.0));
        let zeros: Vec<f64> = xs.iter().map(|x| if *x == 0.0 { 1.0 } else { 0.0 }).collect();
        let (p0, se) = mean_se(&zeros);
        assert!((p0 - (-1.5f64).exp()).abs() < 3.0 * se, "{p0} vs {}", (-1.5f64).exp());
        let (m, se) = mean_se(&xs);
        assert!((m - 3.0).abs() < 4.0 * se);
    }

    #[test]
    fn pure_drift_is_deterministic() {
        let t = LevyTriplet::new(vec![5.0], DMatrix::zeros(1, 1), JumpMeasure::zero()).unwrap();
        for x in draws(&t, &CompensationFunction::Chi1, 0.1, &IncrementPlan::default(), 10, 3) {
            assert_eq!(x.unwrap()[0], 0.5);
        }
    }

    #[test]
    fn chi1_atoms_compensated_in_drift() {
        // One atom at h = 0.5 with mass 2 under Chi1: drift -2 * 0.5 / 1.25.
        let t = LevyTriplet::new(vec![0.0], DMatrix::zeros(1, 1), JumpMeasure::Atoms(vec![Atom::at(vec![0.5], 2.0)])).unwrap();
        let p = PreparedIncrement::new(&t, &CompensationFunction::Chi1, &[0.0], 0.1, &IncrementPlan::default()).unwrap();
        assert!((p.effective_drift()[0] + 0.8).abs() < 1e-15);
        assert_eq!(p.big_jump_rate(), 2.0);
    }

    #[test]
    fn small_atoms_fold_into_drift() {
        // An atom below τ is replaced by its mean displacement under Chi2.
        let t = LevyTriplet::new(vec![0.0], DMatrix::zeros(1, 1), JumpMeasure::Atoms(vec![Atom::at(vec![1e-4], 2.0)])).unwrap();
        let p = PreparedIncrement::new(&t, &CompensationFunction::Chi2, &[0.0], 0.1, &IncrementPlan::default()).unwrap();
        assert_eq!(p.big_jump_rate(), 0.0);
        assert_eq!(p.effective_drift()[0], 0.0);
    }

    #[test]
    fn cemetery_atom_kills() {
        let t = LevyTriplet::new(vec![0.0], DMatrix::zeros(1, 1), JumpMeasure::Atoms(vec![Atom::cemetery(1.0)])).unwrap();
        let out = draws(&t, &CompensationFunction::Chi1, 1.0, &IncrementPlan::default(), 20_000, 4);
        let dead = out.iter().filter(|x| x.is_none()).count() as f64 / out.len() as f64;
        assert!((dead - (1.0 - (-1.0f64).exp())).abs() < 0.015);
    }

    #[test]
    fn overflow_guard_trips() {
        let t = LevyTriplet::pure_jump(1, JumpMeasure::stable(1.0, 1.5).unwrap());
        let plan = IncrementPlan::default().with_tau(1e-6);
        let err = PreparedIncrement::new(&t, &CompensationFunction::Chi1, &[0.0], 1.0, &plan).err().unwrap();
        assert!(matches!(err, Error::StepSize { .. }));
    }

    #[test]
    fn user_density_needs_sampler() {
        use crate::triplet::UserDensity;
        use std::sync::Arc;
        let nu = JumpMeasure::UserDensity(UserDensity {
            dim: 1,
            density: Arc::new(|h: &[f64]| (-h[0].abs()).exp()),
            tail_sampler: None,
            tail_mass: Some(Arc::new(|r: f64| 2.0 * (-r).exp())),
        });
        let t = LevyTriplet::pure_jump(1, nu);
        let err = PreparedIncrement::new(&t, &CompensationFunction::Chi1, &[0.0], 0.1, &IncrementPlan::default()).err().unwrap();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn stable_big_jump_count_is_poisson() {
        // The series stops after Poisson(λ dt) points.
        let t = LevyTriplet::pure_jump(1, JumpMeasure::stable(1.0, 1.0).unwrap());
        let plan = IncrementPlan::default().with_tau(0.5);
        let p = PreparedIncrement::new(&t, &CompensationFunction::Chi2, &[0.0], 0.3, &plan).unwrap();
        // λ = c S / (α τ^α) = 2 / 0.5 = 4.
        assert!((p.big_jump_rate() - 4.0).abs() < 1e-12);
        let mut r = rng::stream(5, Domain::Diagnostic, 0);
        let zero: Vec<f64> = (0..50_000)
            .map(|_| if p.sample(&mut r).unwrap().unwrap()[0] == 0.0 { 1.0 } else { 0.0 })
            .collect();
        let (m, se) = mean_se(&zero);
        assert!((m - (-1.2f64).exp()).abs() < 3.0 * se);
    }

    #[test]
    fn brownian_chain_is_exact() {
        let field = TripletField::constant(LevyTriplet::brownian(1));
        let cfg = SimConfig::new(1.0, 20_000, 6).with_grid(GridSpec::Uniform(2));
        let paths = euler_chain_simulate(&field, &CompensationFunction::Chi1, &Start::Point(vec![0.0]), 0.1, &IncrementPlan::default(), &cfg).unwrap();
        let xs = marginal(&paths, 1, 0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let ks = ks_one_sample(&xs, |x| n.cdf(x)).unwrap();
        assert!(ks.statistic < ks_critical_value(xs.len(), 0, 0.01), "{ks:?}");
    }

    #[test]
    fn compound_poisson_jump_counts() {
        // Unit jumps at rate 2: X_1 counts the jumps.
        let field = TripletField::from_fn(1, true, |a| {
            LevyTriplet::new_unchecked(vec![0.0], DMatrix::zeros(1, 1), JumpMeasure::atoms_from_jumps(a, &[(Some(vec![1.0]), 2.0)]))
        });
        let cfg = SimConfig::new(1.0, 20_000, 7).with_grid(GridSpec::Uniform(2));
        let plan = IncrementPlan::default().with_tau(0.5);
        let paths = euler_chain_simulate(&field, &CompensationFunction::Chi2, &Start::Point(vec![0.0]), 0.05, &plan, &cfg).unwrap();
        let xs = marginal(&paths, 1, 0);
        for k in 0..4 {
            let ind: Vec<f64> = xs.iter().map(|x| if (*x - k as f64).abs() < 1e-9 { 1.0 } else { 0.0 }).collect();
            let (p, se) = mean_se(&ind);
            let exact = (-2.0f64).exp() * 2f64.powi(k) / (1..=k).product::<i32>() as f64;
            assert!((p - exact).abs() < 3.0 * se.max(1e-3), "k={k}: {p} vs {exact}");
        }
    }

    #[test]
    fn compensation_conventions_agree() {
        // A Gaussian part keeps the marginal continuous, so the comparison is
        // not dominated by how rounding splits ties between atoms.
        let jumps = [(Some(vec![0.5]), 2.0), (Some(vec![-1.5]), 0.7), (Some(vec![2.5]), 0.4)];
        let make = |chi: CompensationFunction| {
            let drift = compensation_shift(
                &JumpMeasure::atoms_from_jumps(&[0.0], &jumps),
                &[0.0],
                &CompensationFunction::Chi2,
                &chi,
                &QuadratureConfig::default(),
            )
            .unwrap();
            let jumps = jumps.clone();
            TripletField::from_fn(1, true, move |a| {
                LevyTriplet::new_unchecked(vec![0.3 + drift[0]], DMatrix::from_element(1, 1, 0.25), JumpMeasure::atoms_from_jumps(a, &jumps))
            })
        };
        let cfg = SimConfig::new(1.0, 20_000, 8).with_grid(GridSpec::Uniform(2));
        let run = |chi: CompensationFunction| {
            let paths = euler_chain_simulate(&make(chi.clone()), &chi, &Start::Point(vec![0.0]), 0.05, &IncrementPlan::default(), &cfg).unwrap();
            marginal(&paths, 1, 0)
        };
        let ks = ks_distance(&run(CompensationFunction::Chi1), &run(CompensationFunction::Chi2)).unwrap();
        assert!(ks.statistic < 0.01, "{ks:?}");
    }

    #[test]
    fn tau_refinement_is_small() {
        let field = TripletField::constant(LevyTriplet::pure_jump(1, JumpMeasure::stable(1.0, 0.8).unwrap()));
        let cfg = SimConfig::new(1.0, 20_000, 9).with_grid(GridSpec::Uniform(2));
        let run = |tau| {
            let plan = IncrementPlan::default().with_tau(tau);
            marginal(&euler_chain_simulate(&field, &CompensationFunction::Chi1, &Start::Point(vec![0.0]), 0.1, &plan, &cfg).unwrap(), 1, 0)
        };
        let ks = ks_distance(&run(1e-2), &run(1e-3)).unwrap();
        assert!(ks.statistic < 0.005, "{ks:?}");
    }

    #[test]
    fn surrogate_variance_matches_truncated_moment() {
        let t = LevyTriplet::pure_jump(2, JumpMeasure::stable(1.0, 1.5).unwrap());
        let plan = IncrementPlan::default().with_tau(0.1).with_small_jumps(SmallJumps::GaussianSurrogate);
        let p = PreparedIncrement::new(&t, &CompensationFunction::Chi1, &[0.0, 0.0], 0.5, &plan).unwrap();
        // ∫_{|h|<=τ} |h|^2 ν = c S τ^{2-α} / (2-α), split over two axes.
        let m2 = 2.0 * std::f64::consts::PI * 0.1f64.powf(0.5) / 0.5;
        assert!((p.surrogate_sd.powi(2) - m2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn state_dependent_generator_consistency() {
        // (E[f(X_ε)] - f(a)) / ε against the limit operator.
        let field = TripletField::from_fn(1, true, |a| {
            LevyTriplet::new_unchecked(vec![0.0], DMatrix::zeros(1, 1), JumpMeasure::StableLike { c: 1.0, alpha: 1.0 + 0.3 * a[0].sin() })
        });
        let a = [0.5];
        let eps = 1e-3;
        let plan = IncrementPlan::default().with_tau(1e-4);
        let chi = CompensationFunction::Chi1;
        let p = PreparedIncrement::new(&field.at(&a), &chi, &a, eps, &plan).unwrap();
        for (j, f) in default_test_functions(1).iter().enumerate().skip(1) {
            let exact = apply_operator(&field.at(&a), &chi, f, &a, &QuadratureConfig::default()).unwrap();
            let mut r = rng::stream(10, Domain::Diagnostic, j as u64);
            let f0 = f.value(&a);
            let est: Vec<f64> = (0..1_000_000).map(|_| (f.value(&[a[0] + p.sample(&mut r).unwrap().unwrap()[0]]) - f0) / eps).collect();
            let (m, se) = mean_se(&est);
            assert!((m - exact).abs() < 4.0 * se, "f{j}: {m} ± {se} vs {exact}");
        }
    }
}
