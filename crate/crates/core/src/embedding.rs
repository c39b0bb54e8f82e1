//! Continuous-time embeddings of a discrete chain: the floor-time path
//! `t -> Y_{⌊t/ε⌋}`, the Poissonized path `Z_t = Y_{N_{t/ε}}` and the random
//! clock `Γ` linking them through `Y_{⌊t/ε⌋} = Z_{Γ_t}`.

use std::sync::Arc;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::mean_se;
use crate::error::{Error, Result};
use crate::path::{PathRecord, State};
use crate::rng::{self, Domain};
use crate::sim::floor_index;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("ε must be positive and finite, got {eps}")))
    }
}

fn chain_dim(chain: &[State]) -> Result<usize> {
    if chain.is_empty() {
        return Err(Error::Validation("empty chain".into()));
    }
    Ok(chain.iter().find_map(|s| s.as_point().map(<[f64]>::len)).unwrap_or(1))
}

/// Records `chain[index(t)]` on `times`; ξ is the continuous time at which
/// the chain first reaches Δ, or infinity.
fn record(chain: &[State], times: &[f64], index: impl Fn(f64) -> usize, xi: f64) -> Result<PathRecord> {
    let dim = chain_dim(chain)?;
    let states: Vec<State> = times.iter().map(|&t| chain[index(t)].clone()).collect();
    let first_dead = states.iter().position(State::is_cemetery);
    let xi = match first_dead {
        Some(i) => xi.min(times[i]),
        None => xi,
    };
    PathRecord::new(dim, Arc::from(times), &states, xi)
}

fn first_cemetery(chain: &[State]) -> Option<usize> {
    chain.iter().position(State::is_cemetery)
}

/// `t -> chain[⌊t/ε⌋]` on `times`.
pub fn floor_embed(chain: &[State], eps: f64, times: &[f64]) -> Result<PathRecord> {
    check_eps(eps)?;
    chain_dim(chain)?;
    if let Some(&t) = times.last() {
        if floor_index(t / eps) >= chain.len() {
            return Err(Error::Range(format!(
                "time {t} needs chain index {} but the chain has {} states",
                floor_index(t / eps),
                chain.len()
            )));
        }
    }
    let xi = first_cemetery(chain).map_or(f64::INFINITY, |j| j as f64 * eps);
    record(chain, times, |t| floor_index(t / eps), xi)
}

/// `Γ_t = ε (Σ_{k ≤ ⌊t/ε⌋} E_k + (t/ε - ⌊t/ε⌋) E_{⌊t/ε⌋+1})`.
pub fn gamma_clock(e: &[f64], eps: f64, t: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(t >= 0.0) {
        return Err(Error::Validation(format!("clock time must be nonnegative, got {t}")));
    }
    let m = floor_index(t / eps);
    if e.len() < m + 1 {
        return Err(Error::Range(format!("clock at t={t} needs {} exponential draws, got {}", m + 1, e.len())));
    }
    let frac = (t / eps - m as f64).max(0.0);
    Ok(eps * (e[..m].iter().sum::<f64>() + frac * e[m]))
}

/// The piecewise-affine clock with knots `Γ_{kε} = ε Σ_{i≤k} E_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clock {
    eps: f64,
    draws: Vec<f64>,
    knots: Vec<f64>,
}

impl Clock {
    pub fn from_draws(eps: f64, draws: Vec<f64>) -> Result<Self> {
        check_eps(eps)?;
        if draws.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Validation("exponential draws must be positive and finite".into()));
        }
        let mut knots = Vec::with_capacity(draws.len() + 1);
        knots.push(0.0);
        let mut s = 0.0;
        for e in &draws {
            s += e;
            knots.push(eps * s);
        }
        Ok(Self { eps, draws, knots })
    }

    /// Draws Exp(1) variables until both `Γ` on `[0, horizon]` and the
    /// arrival count `N_{horizon/ε}` are determined.
    pub fn draw<R: RngCore + ?Sized>(eps: f64, horizon: f64, rng: &mut R) -> Result<Self> {
        check_eps(eps)?;
        let need = floor_index(horizon / eps) + 1;
        let mut draws = Vec::with_capacity(need + 1);
        let mut s = 0.0;
        while draws.len() < need || eps * s <= horizon {
            let e = rng::exp1(rng);
            s += e;
            draws.push(e);
        }
        Self::from_draws(eps, draws)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    /// `Γ_{kε}` for `k = 0, ..., draws`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn gamma(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Validation(format!("clock time must be nonnegative, got {t}")));
        }
        let m = floor_index(t / self.eps);
        if m + 1 >= self.knots.len() {
            return Err(Error::Range(format!("clock drawn only up to {} steps", self.draws.len())));
        }
        let frac = (t / self.eps - m as f64).max(0.0);
        Ok(self.knots[m] + frac * (self.knots[m + 1] - self.knots[m]))
    }

    /// `Γ^{-1}(s)` by binary search over the knots.
    pub fn inverse(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Validation(format!("clock value must be nonnegative, got {s}")));
        }
        let last = *self.knots.last().expect("knots start at 0");
        if s >= last {
            return Err(Error::Range(format!("clock drawn only up to Γ = {last}")));
        }
        // Largest k with knots[k] <= s.
        let k = self.knots.partition_point(|&g| g <= s) - 1;
        let frac = (s - self.knots[k]) / (self.knots[k + 1] - self.knots[k]);
        Ok(self.eps * (k as f64 + frac))
    }

    /// `N_{s/ε}`: the number of arrivals `ε Σ_{i≤k} E_i ≤ s`, `k ≥ 1`.
    pub fn arrivals(&self, s: f64) -> Result<usize> {
        let last = *self.knots.last().expect("knots start at 0");
        if s >= last {
            return Err(Error::Range(format!("arrivals drawn only up to time {last}")));
        }
        Ok(self.knots.partition_point(|&g| g <= s) - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poissonized {
    /// Path on the prefix of the grid the chain covers.
    pub path: PathRecord,
    /// True when the chain ran out of states before the last grid time.
    pub truncated: bool,
}

/// `t -> chain[N_{t/ε}]` with `N` the Poisson process built from `clock`.
pub fn poissonize_with_clock(chain: &[State], clock: &Clock, times: &[f64]) -> Result<Poissonized> {
    chain_dim(chain)?;
    let mut covered = 0;
    for &t in times {
        if clock.arrivals(t)? >= chain.len() {
            break;
        }
        covered += 1;
    }
    let xi = match first_cemetery(chain) {
        Some(j) if j < clock.knots().len() => clock.knots()[j],
        _ => f64::INFINITY,
    };
    let path = record(
        chain,
        &times[..covered],
        |t| clock.arrivals(t).expect("covered times have arrivals"),
        xi,
    )?;
    Ok(Poissonized {
        path,
        truncated: covered < times.len(),
    })
}

/// [`poissonize_with_clock`] with a clock drawn from `rng` up to the last grid time.
pub fn poissonize<R: RngCore + ?Sized>(chain: &[State], eps: f64, rng: &mut R, times: &[f64]) -> Result<Poissonized> {
    let horizon = times.last().copied().unwrap_or(0.0);
    let clock = Clock::draw(eps, horizon, rng)?;
    poissonize_with_clock(chain, &clock, times)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoobReport {
    pub eps: f64,
    pub t: f64,
    pub threshold: f64,
    pub trials: usize,
    /// `4 (t + ε) ε / threshold²`.
    pub bound: f64,
    /// Fraction of trials with `max_{k ≤ ⌈t/ε⌉} |Γ_{kε} - kε| ≥ threshold`.
    pub frequency: f64,
    /// Binomial standard error at the bound.
    pub se: f64,
    pub passed: bool,
}

/// Monte Carlo estimate of `P(sup_{s≤t} |Γ_s - s| ≥ threshold)` against the
/// Doob bound `4 (t + ε) ε / threshold²`.
pub fn doob_bound_check(eps: f64, t: f64, threshold: f64, trials: usize, seed: u64) -> Result<DoobReport> {
    check_eps(eps)?;
    if trials == 0 {
        return Err(Error::Validation("need at least one trial".into()));
    }
    if !(t >= 0.0 && t.is_finite()) || !(threshold > 0.0) {
        return Err(Error::Validation("need t ≥ 0 and a positive threshold".into()));
    }
    let steps = crate::sim::ceil_index(t / eps);
    let hits: usize = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, Domain::Clock, i);
            let mut s = 0.0;
            for k in 1..=steps {
                s += rng::exp1(&mut r);
                if (eps * s - k as f64 * eps).abs() >= threshold {
                    return 1;
                }
            }
            0
        })
        .sum();
    let bound = 4.0 * (t + eps) * eps / (threshold * threshold);
    let frequency = hits as f64 / trials as f64;
    let p = bound.min(1.0);
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    Ok(DoobReport {
        eps,
        t,
        threshold,
        trials,
        bound,
        frequency,
        se,
        passed: frequency <= bound + 3.0 * se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingalePoint {
    pub k: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub second_moment: f64,
    pub second_moment_se: f64,
    /// `|mean| ≤ 4 SE` and `|E M_k² / k - 1| ≤ 5%`.
    pub passed: bool,
}

/// Checks that `M_k = Σ_{i≤k} E_i - k` is centred with `E M_k² = k`.
pub fn clock_martingale_check(ks: &[usize], trials: usize, seed: u64) -> Result<Vec<MartingalePoint>> {
    if trials < 2 {
        return Err(Error::Validation("need at least two trials".into()));
    }
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let sums: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, Domain::Diagnostic, i);
            let mut s = 0.0;
            let mut partial = Vec::with_capacity(kmax + 1);
            partial.push(0.0);
            for k in 1..=kmax {
                s += rng::exp1(&mut r);
                partial.push(s - k as f64);
            }
            partial
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let m: Vec<f64> = sums.iter().map(|p| p[k]).collect();
            let sq: Vec<f64> = m.iter().map(|v| v * v).collect();
            let (mean, m_se) = mean_se(&m);
            let (second_moment, second_moment_se) = mean_se(&sq);
            let rel = if k == 0 { second_moment } else { (second_moment / k as f64 - 1.0).abs() };
            MartingalePoint {
                k,
                mean,
                mean_se: m_se,
                second_moment,
                second_moment_se,
                passed: mean.abs() <= 4.0 * m_se && rel <= 0.05,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub pairs: usize,
    /// Pairs with `Y_{⌊t/ε⌋} ≠ Z_{Γ_t}`.
    pub mismatches: usize,
    /// Pairs with `Z_s ≠ Y_{⌊Γ^{-1}(s)/ε⌋}`.
    pub inverse_mismatches: usize,
}

/// Samples `(path, t)` pairs, each with its own simple random walk chain and
/// clock, and checks `Y_{⌊t/ε⌋} = Z_{Γ_t}` in both directions.
pub fn coupling_check(eps: f64, horizon: f64, pairs: usize, seed: u64) -> Result<CouplingReport> {
    check_eps(eps)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    let results: Vec<(bool, bool)> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| -> Result<(bool, bool)> {
            let mut r = rng::stream(seed, Domain::Diagnostic, i);
            let clock = Clock::draw(eps, horizon, &mut r)?;
            let len = clock.draws().len() + 1;
            let mut y = 0.0;
            let chain: Vec<State> = (0..len)
                .map(|_| {
                    let s = State::Point(vec![y]);
                    y += if r.next_u32() & 1 == 0 { 1.0 } else { -1.0 };
                    s
                })
                .collect();
            let t = horizon * rng::open_unit(&mut r);
            let y_t = &chain[floor_index(t / eps)];
            let z = &chain[clock.arrivals(clock.gamma(t)?)?];
            let s = horizon * rng::open_unit(&mut r);
            let z_s = &chain[clock.arrivals(s)?];
            let y_inv = &chain[floor_index(clock.inverse(s)? / eps)];
            Ok((y_t != z, z_s != y_inv))
        })
        .collect::<Result<_>>()?;
    Ok(CouplingReport {
        pairs,
        mismatches: results.iter().filter(|r| r.0).count(),
        inverse_mismatches: results.iter().filter(|r| r.1).count(),
    })
}
