//! Shared machinery for running discrete chains and recording embedded paths.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::PathRecord;
use crate::rng::{self, Domain, StreamRng};

/// Output times at which a simulated path is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridSpec {
    /// `n >= 2` equally spaced times from 0 to the horizon, inclusive.
    Uniform(usize),
    /// Explicit strictly increasing times in `[0, horizon]`.
    Times(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Uniform(11)
    }
}

impl GridSpec {
    pub fn resolve(&self, horizon: f64) -> Result<Arc<[f64]>> {
        let times: Vec<f64> = match self {
            GridSpec::Uniform(n) => {
                if *n < 2 {
                    return Err(Error::Validation("uniform grid needs at least 2 points".into()));
                }
                (0..*n)
                    .map(|i| {
                        if i + 1 == *n {
                            horizon
                        } else {
                            horizon * i as f64 / (*n - 1) as f64
                        }
                    })
                    .collect()
            }
            GridSpec::Times(t) => t.clone(),
        };
        if times.is_empty() {
            return Err(Error::Validation("empty output grid".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("output grid must be strictly increasing".into()));
        }
        if times[0] < 0.0 || *times.last().unwrap() > horizon * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "output grid must lie in [0, {horizon}]"
            )));
        }
        Ok(times.into())
    }
}

/// Run-level settings shared by every simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    /// Chains leaving the ball of this radius are sent to Δ.
    #[serde(default = "default_escape_radius")]
    pub escape_radius: f64,
}

fn default_escape_radius() -> f64 {
    1e6
}

impl SimConfig {
    pub fn new(horizon: f64, paths: usize, seed: u64) -> Self {
        Self {
            horizon,
            paths,
            seed,
            grid: GridSpec::default(),
            escape_radius: default_escape_radius(),
        }
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_escape_radius(mut self, r: f64) -> Self {
        self.escape_radius = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.paths == 0 {
            return Err(Error::Validation("path count must be at least 1".into()));
        }
        if !(self.escape_radius > 0.0) {
            return Err(Error::Validation("escape radius must be positive".into()));
        }
        Ok(())
    }
}

/// Sampler for a random initial state.
pub type StartSampler = Arc<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>;

/// Initial condition of a batch.
#[derive(Clone)]
pub enum Start {
    Point(Vec<f64>),
    Distribution { dim: usize, sampler: StartSampler },
}

impl fmt::Debug for Start {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Start::Point(p) => f.debug_tuple("Point").field(p).finish(),
            Start::Distribution { dim, .. } => f.debug_struct("Distribution").field("dim", dim).finish(),
        }
    }
}

impl Start {
    pub fn dim(&self) -> usize {
        match self {
            Start::Point(p) => p.len(),
            Start::Distribution { dim, .. } => *dim,
        }
    }

    /// Initial state of path `index`, drawn from its own stream when random.
    pub fn draw(&self, seed: u64, index: u64) -> Vec<f64> {
        match self {
            Start::Point(p) => p.clone(),
            Start::Distribution { sampler, .. } => {
                let mut r = rng::stream(seed, Domain::Start, index);
                sampler(&mut r)
            }
        }
    }
}

/// `floor(x)` that treats values within a few ulps of an integer as that integer.
pub fn floor_index(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.floor().max(0.0) as usize
    }
}

/// `ceil(x)` with the same tolerance as [`floor_index`].
pub fn ceil_index(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

/// Outcome of one chain transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Alive,
    Killed,
}

/// Runs one chain and records `t -> X_{floor(t / dt)}` on `times`.
///
/// `step` updates the state in place. The chain is sent to Δ when `step`
/// reports a kill or when the state leaves the escape ball; ξ is then the
/// continuous time of the offending step.
pub fn run_chain<F>(
    times: &Arc<[f64]>,
    dt: f64,
    start: Vec<f64>,
    escape_radius: f64,
    rng: &mut StreamRng,
    mut step: F,
) -> Result<PathRecord>
where
    F: FnMut(&mut Vec<f64>, &mut StreamRng) -> Result<Step>,
{
    let dim = start.len();
    let targets: Vec<usize> = times.iter().map(|&t| floor_index(t / dt)).collect();
    let last = *targets.last().unwrap_or(&0);
    let mut coords = Vec::with_capacity(times.len() * dim);
    let mut state = start;
    let mut next = 0;
    let mut explosion = f64::INFINITY;
    let escaped = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() > escape_radius * escape_radius
        || x.iter().any(|v| !v.is_finite());
    if escaped(&state) {
        explosion = 0.0;
    } else {
        let mut k = 0usize;
        loop {
            while next < targets.len() && targets[next] == k {
                coords.extend_from_slice(&state);
                next += 1;
            }
            if k >= last {
                break;
            }
            let outcome = step(&mut state, rng)?;
            k += 1;
            if outcome == Step::Killed || escaped(&state) {
                explosion = k as f64 * dt;
                break;
            }
        }
    }
    // A grid time within rounding of ξ floors onto the explosion step and is
    // recorded as Δ; pull ξ back onto it so absorption holds exactly.
    let alive = coords.len() / dim.max(1);
    if explosion.is_finite() && alive < times.len() {
        explosion = explosion.min(times[alive]);
    }
    PathRecord::from_parts(dim, Arc::clone(times), coords, explosion)
}

/// Runs `paths` independent jobs in parallel, preserving index order.
pub fn run_batch<F>(paths: usize, job: F) -> Result<Vec<PathRecord>>
where
    F: Fn(u64) -> Result<PathRecord> + Sync + Send,
{
    (0..paths as u64).into_par_iter().map(job).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_index_tolerates_rounding() {
        assert_eq!(floor_index(0.3 / 0.1), 3);
        assert_eq!(floor_index(1.5), 1);
        assert_eq!(floor_index(1.0 - 1e-9), 0);
        assert_eq!(ceil_index(1.0 / 0.01), 100);
        assert_eq!(ceil_index(2.5), 3);
    }

    #[test]
    fn uniform_grid_ends_at_horizon() {
        let g = GridSpec::Uniform(4).resolve(0.3).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[3], 0.3);
        assert!(GridSpec::Times(vec![0.0, 2.0]).resolve(1.0).is_err());
        assert!(GridSpec::Uniform(1).resolve(1.0).is_err());
    }

    #[test]
    fn chain_records_floor_embedding() {
        let times: Arc<[f64]> = vec![0.0, 0.5, 1.0, 1.5, 2.0].into();
        let mut r = rng::stream(0, Domain::Path, 0);
        let p = run_chain(&times, 1.0, vec![0.0], 1e6, &mut r, |x, _| {
            x[0] += 1.0;
            Ok(Step::Alive)
        })
        .unwrap();
        let xs: Vec<f64> = p.states().map(|s| s.as_point().unwrap()[0]).collect();
        assert_eq!(xs, vec![0.0, 0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn escaping_chain_is_absorbed() {
        let times: Arc<[f64]> = vec![0.0, 1.0, 2.0, 3.0].into();
        let mut r = rng::stream(0, Domain::Path, 0);
        let p = run_chain(&times, 1.0, vec![0.0], 1.5, &mut r, |x, _| {
            x[0] += 1.0;
            Ok(Step::Alive)
        })
        .unwrap();
        assert_eq!(p.alive_len(), 2);
        assert_eq!(p.explosion_time(), 2.0);
        assert!(p.check_absorption());
    }
}
