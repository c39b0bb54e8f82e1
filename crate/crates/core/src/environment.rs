//! Random environments `(q_{n,k})`, the potentials they induce and quenched
//! random walks on the lattice `εZ`.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{mean_se, two_sample_report, TwoSampleReport};
use crate::error::{Error, Result};
use crate::path::{marginal, PathRecord};
use crate::potential::{potential_chain_simulate, Potential, PsiOptions};
use crate::rng::{self, Domain};
use crate::sim::{run_batch, run_chain, GridSpec, SimConfig, Start, Step};

/// Draws `q_{n,k}` given `(ε, k)`.
pub type EnvironmentSampler = Arc<dyn Fn(f64, i64, &mut dyn RngCore) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseLaw {
    Gaussian,
    /// Uniform on `{-1, +1}`.
    Rademacher,
}

#[derive(Clone)]
pub enum EnvironmentSpec {
    /// `q_{n,k} = √ε σ ξ_k` with `ξ_k` i.i.d. of mean 0 and variance 1.
    IidScaled { base: BaseLaw, sigma: f64 },
    /// `q_{n,k} = q` with probability `λ ε`, otherwise 0.
    BernoulliPoisson { q: f64, lambda: f64 },
    Custom(EnvironmentSampler),
}

impl fmt::Debug for EnvironmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvironmentSpec::IidScaled { base, sigma } => f
                .debug_struct("IidScaled")
                .field("base", base)
                .field("sigma", sigma)
                .finish(),
            EnvironmentSpec::BernoulliPoisson { q, lambda } => f
                .debug_struct("BernoulliPoisson")
                .field("q", q)
                .field("lambda", lambda)
                .finish(),
            EnvironmentSpec::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl EnvironmentSpec {
    pub fn validate(&self, eps: f64) -> Result<()> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Validation(format!("ε must be positive, got {eps}")));
        }
        match self {
            EnvironmentSpec::IidScaled { sigma, .. } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::Validation(format!("σ must be finite and nonnegative, got {sigma}")))
            }
            EnvironmentSpec::BernoulliPoisson { q, lambda } => {
                if !q.is_finite() || !(*lambda >= 0.0) {
                    return Err(Error::Validation("jump height must be finite and rate nonnegative".into()));
                }
                if lambda * eps > 1.0 {
                    return Err(Error::Validation(format!("λ ε = {} exceeds 1", lambda * eps)));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `q_{n,k}` of environment `env`; a pure function of `(seed, env, k)`.
    pub fn q(&self, eps: f64, seed: u64, env: u64, k: i64) -> f64 {
        let mut r = rng::substream(seed, Domain::Environment, env, zigzag(k));
        match self {
            EnvironmentSpec::IidScaled { base, sigma } => {
                let xi = match base {
                    BaseLaw::Gaussian => rng::std_normal(&mut r),
                    BaseLaw::Rademacher => {
                        if r.next_u32() & 1 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                };
                eps.sqrt() * sigma * xi
            }
            EnvironmentSpec::BernoulliPoisson { q, lambda } => {
                if rng::open_unit(&mut r) <= lambda * eps {
                    *q
                } else {
                    0.0
                }
            }
            EnvironmentSpec::Custom(s) => s(eps, k, &mut r),
        }
    }

    /// `q_{n,k}` for `k = k_lo, ..., k_hi`.
    pub fn sample_window(&self, eps: f64, seed: u64, env: u64, k_lo: i64, k_hi: i64) -> Result<Vec<f64>> {
        self.validate(eps)?;
        let q: Vec<f64> = (k_lo..=k_hi).map(|k| self.q(eps, seed, env, k)).collect();
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("environment sampler returned a non-finite value".into()));
        }
        Ok(q)
    }
}

fn zigzag(k: i64) -> u64 {
    ((k << 1) ^ (k >> 63)) as u64
}

/// The potential `W_n` built from increments `q_k`, `k = k_lo, ...`.
pub fn potential_from_q(q: &[f64], k_lo: i64, eps: f64) -> Result<Potential> {
    Potential::piecewise_constant(eps, k_lo, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    /// Per-path exit probability the window is sized for.
    pub exit_probability: f64,
    /// Largest window, in bytes of stored increments.
    pub memory_cap: usize,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self {
            exit_probability: 1e-6,
            memory_cap: 1 << 28,
        }
    }
}

impl WindowPolicy {
    /// Half-width `m` of the lattice window for `steps` steps from 0.
    ///
    /// A symmetric walk satisfies `P(max_{j≤N} |Y_j| ≥ m) ≤ 4 e^{-m²/(2N)}`.
    pub fn half_width(&self, steps: u64) -> Result<i64> {
        let n = steps.max(1) as f64;
        let m = (2.0 * n * (4.0 / self.exit_probability).ln()).sqrt().ceil().min(n) as i64 + 1;
        let bytes = (2 * m as u128 + 1) * 8;
        if bytes > self.memory_cap as u128 {
            return Err(Error::Config(format!(
                "environment window of {} sites exceeds the memory cap; use a larger ε or shorter horizon",
                2 * m + 1
            )));
        }
        Ok(m)
    }
}

/// One environment draw and the walks run in it.
#[derive(Debug, Clone)]
pub struct QuenchedRun {
    pub env: u64,
    pub eps: f64,
    pub seed: u64,
    pub k_lo: i64,
    pub q: Vec<f64>,
    pub potential: Potential,
    pub paths: Vec<PathRecord>,
}

impl QuenchedRun {
    /// `P(Y_1 = k + 1 | Y_0 = k) = 1 / (e^{q_k} + 1)`.
    pub fn right_probability(&self, k: i64) -> Option<f64> {
        let i = k - self.k_lo;
        (i >= 0 && (i as usize) < self.q.len()).then(|| 1.0 / (self.q[i as usize].exp() + 1.0))
    }

    pub fn k_hi(&self) -> i64 {
        self.k_lo + self.q.len() as i64 - 1
    }
}

#[derive(Debug, Clone)]
pub struct RwreConfig {
    pub eps: f64,
    pub horizon: f64,
    pub environments: usize,
    pub paths_per_env: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub window: WindowPolicy,
}

/// Walks with right-probability `1 / (e^{q_Y} + 1)`, reported as
/// `t -> ε Y_{⌊t/ε²⌋}`. Starting points are rounded onto `εZ`; a walk leaving
/// the materialized window is sent to Δ.
pub fn rwre_simulate(spec: &EnvironmentSpec, start: &Start, cfg: &RwreConfig) -> Result<Vec<QuenchedRun>> {
    spec.validate(cfg.eps)?;
    if start.dim() != 1 {
        return Err(Error::Validation("walks in random environment are one-dimensional".into()));
    }
    if cfg.environments == 0 {
        return Err(Error::Validation("need at least one environment".into()));
    }
    let eps = cfg.eps;
    let sim = SimConfig::new(cfg.horizon, cfg.paths_per_env, cfg.seed).with_grid(cfg.grid.clone());
    sim.validate()?;
    let times = sim.grid.resolve(cfg.horizon)?;
    let steps = (cfg.horizon / (eps * eps)).ceil() as u64;
    let reach = cfg.window.half_width(steps)?;
    let starts: Vec<i64> = (0..cfg.paths_per_env as u64)
        .map(|i| (start.draw(cfg.seed, i)[0] / eps).round() as i64)
        .collect();
    let (lo, hi) = starts.iter().fold((0i64, 0i64), |(lo, hi), k| (lo.min(*k), hi.max(*k)));
    let (k_lo, k_hi) = (lo - reach, hi + reach);
    (0..cfg.environments as u64)
        .map(|env| {
            let q = spec.sample_window(eps, cfg.seed, env, k_lo, k_hi)?;
            let potential = potential_from_q(&q, k_lo, eps)?;
            let right: Vec<f64> = q.iter().map(|q| 1.0 / (q.exp() + 1.0)).collect();
            let paths = run_batch(cfg.paths_per_env, |i| {
                let mut r = rng::substream(cfg.seed, Domain::Path, env, i);
                let x0 = vec![starts[i as usize] as f64 * eps];
                run_chain(&times, eps * eps, x0, f64::INFINITY, &mut r, |x, r| {
                    let k = (x[0] / eps).round() as i64;
                    let p = right[(k - k_lo) as usize];
                    let next = if rng::open_unit(r) <= p { k + 1 } else { k - 1 };
                    if next < k_lo || next > k_hi {
                        return Ok(Step::Killed);
                    }
                    x[0] = next as f64 * eps;
                    Ok(Step::Alive)
                })
            })?;
            Ok(QuenchedRun {
                env,
                eps,
                seed: cfg.seed,
                k_lo,
                q,
                potential,
                paths,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub env: u64,
    pub t: f64,
    /// `max_k |p(kε) - 1/(1 + e^{q_k})|` over the checked lattice sites.
    pub kernel_p_gap: f64,
    /// `max_k |ψ(kε) - ε| / ε` over both sides.
    pub kernel_psi_gap: f64,
    pub sites_checked: usize,
    pub marginals: TwoSampleReport,
    pub walk_exploded: usize,
    pub scheme_exploded: usize,
}

/// Runs the step-size scheme in the same potential `W_n` from the walk's
/// starting points and compares transition kernels and the time-`t` marginals.
pub fn quenched_cross_validate(run: &QuenchedRun, start: &Start, t: f64, paths: usize) -> Result<CrossValidation> {
    let eps = run.eps;
    let opts = PsiOptions::default();
    let (k_lo, k_hi) = (run.k_lo, run.k_hi());
    // Interior sites, at most 10^4 of them around the origin.
    let span = 5_000i64;
    let (a, b) = ((k_lo + 1).max(-span), (k_hi - 1).min(span));
    let mut p_gap = 0.0_f64;
    let mut psi_gap = 0.0_f64;
    let mut sites = 0;
    for k in a..=b {
        let tr = run.potential.transition(k as f64 * eps, eps, &opts)?;
        let exact = run.right_probability(k).expect("site inside the window");
        p_gap = p_gap.max((tr.p_up - exact).abs());
        psi_gap = psi_gap.max(((tr.psi_up - eps).abs()).max((tr.psi_down - eps).abs()) / eps);
        sites += 1;
    }
    let grid = GridSpec::Times(vec![0.0, t]);
    let seed = rng::stream(run.seed, Domain::Reference, run.env).next_u64();
    let sim = SimConfig::new(t, paths, seed).with_grid(grid.clone());
    let scheme = potential_chain_simulate(&run.potential, start, eps, &opts, &sim)?;
    let walk_cfg = RwreConfig {
        eps,
        horizon: t,
        environments: 1,
        paths_per_env: paths,
        seed: rng::stream(run.seed, Domain::Reference, run.env).next_u64() ^ 0x5bd1_e995,
        grid,
        window: WindowPolicy::default(),
    };
    // Same environment: reuse the run's increments through a custom sampler.
    let q = Arc::new(run.q.clone());
    let k0 = run.k_lo;
    let fixed = EnvironmentSpec::Custom(Arc::new(move |_, k, _| {
        let i = k - k0;
        if i >= 0 && (i as usize) < q.len() {
            q[i as usize]
        } else {
            f64::NAN
        }
    }));
    let walks = rwre_with_window(&fixed, start, &walk_cfg, run.k_lo, run.k_hi())?;
    let alive = |ps: &[PathRecord]| -> Vec<f64> {
        ps.iter().filter_map(|p| p.state(1).as_point().map(|x| x[0])).collect()
    };
    let (xs, ys) = (alive(&walks), alive(&scheme));
    Ok(CrossValidation {
        env: run.env,
        t,
        kernel_p_gap: p_gap,
        kernel_psi_gap: psi_gap,
        sites_checked: sites,
        marginals: two_sample_report(&xs, &ys)?,
        walk_exploded: paths - xs.len(),
        scheme_exploded: paths - ys.len(),
    })
}

/// [`rwre_simulate`] for one environment on a fixed window.
fn rwre_with_window(spec: &EnvironmentSpec, start: &Start, cfg: &RwreConfig, k_lo: i64, k_hi: i64) -> Result<Vec<PathRecord>> {
    let eps = cfg.eps;
    let sim = SimConfig::new(cfg.horizon, cfg.paths_per_env, cfg.seed).with_grid(cfg.grid.clone());
    let times = sim.grid.resolve(cfg.horizon)?;
    let q = spec.sample_window(eps, cfg.seed, 0, k_lo, k_hi)?;
    let right: Vec<f64> = q.iter().map(|q| 1.0 / (q.exp() + 1.0)).collect();
    run_batch(cfg.paths_per_env, |i| {
        let mut r = rng::substream(cfg.seed, Domain::Path, 0, i);
        let k0 = (start.draw(cfg.seed, i)[0] / eps).round() as i64;
        if k0 < k_lo || k0 > k_hi {
            return Err(Error::Range(format!("start site {k0} is outside the environment window")));
        }
        run_chain(&times, eps * eps, vec![k0 as f64 * eps], f64::INFINITY, &mut r, |x, r| {
            let k = (x[0] / eps).round() as i64;
            let next = if rng::open_unit(r) <= right[(k - k_lo) as usize] { k + 1 } else { k - 1 };
            if next < k_lo || next > k_hi {
                return Ok(Step::Killed);
            }
            x[0] = next as f64 * eps;
            Ok(Step::Alive)
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedSummary {
    pub t: f64,
    /// `(mean, variance)` of the time-`t` marginal in each environment.
    pub per_env: Vec<(f64, f64)>,
    /// Average over environments of the within-environment variance.
    pub mean_quenched_variance: f64,
    /// Variance of the pooled sample.
    pub annealed_variance: f64,
}

/// Per-environment and pooled statistics of the live states at grid time `t`.
pub fn quenched_summary(runs: &[QuenchedRun], t: f64) -> Result<QuenchedSummary> {
    let first = runs.first().ok_or_else(|| Error::Validation("no runs".into()))?;
    let idx = first
        .paths
        .first()
        .ok_or_else(|| Error::Validation("run has no paths".into()))?
        .nearest_index(t);
    let var = |xs: &[f64]| {
        let (m, se) = mean_se(xs);
        (m, se * se * xs.len() as f64)
    };
    let mut pooled = Vec::new();
    let mut per_env = Vec::with_capacity(runs.len());
    for r in runs {
        let xs = marginal(&r.paths, idx, 0);
        per_env.push(var(&xs));
        pooled.extend(xs);
    }
    Ok(QuenchedSummary {
        t,
        mean_quenched_variance: per_env.iter().map(|p| p.1).sum::<f64>() / per_env.len() as f64,
        annealed_variance: var(&pooled).1,
        per_env,
    })
}
