//! Sample paths on R^d with an absorbing cemetery state.

use std::sync::Arc;

use crate::error::{Error, Result};

/// A state of the one-point compactified space R^d ∪ {Δ}.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Point(Vec<f64>),
    Cemetery,
}

impl State {
    pub fn is_cemetery(&self) -> bool {
        matches!(self, State::Cemetery)
    }

    pub fn as_point(&self) -> Option<&[f64]> {
        match self {
            State::Point(p) => Some(p),
            State::Cemetery => None,
        }
    }
}

/// Borrowed view of a recorded state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateRef<'a> {
    Point(&'a [f64]),
    Cemetery,
}

impl<'a> StateRef<'a> {
    pub fn as_point(&self) -> Option<&'a [f64]> {
        match *self {
            StateRef::Point(p) => Some(p),
            StateRef::Cemetery => None,
        }
    }

    pub fn to_owned(&self) -> State {
        match self {
            StateRef::Point(p) => State::Point(p.to_vec()),
            StateRef::Cemetery => State::Cemetery,
        }
    }
}

/// A cadlag path recorded on a time grid.
///
/// Storage is a prefix of live states followed by an implicit run of Δ, so a
/// path cannot leave the cemetery once it has entered it. The explosion time
/// ξ is `f64::INFINITY` for paths that never explode.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    dim: usize,
    times: Arc<[f64]>,
    coords: Vec<f64>,
    explosion_time: f64,
}

impl PathRecord {
    /// Builds a path from explicit states, checking every invariant.
    pub fn new(dim: usize, times: Arc<[f64]>, states: &[State], explosion_time: f64) -> Result<Self> {
        if states.len() != times.len() {
            return Err(Error::Validation(format!(
                "{} states for {} times",
                states.len(),
                times.len()
            )));
        }
        let mut coords = Vec::with_capacity(states.len() * dim);
        let mut dead = false;
        for (i, s) in states.iter().enumerate() {
            match s {
                State::Point(p) => {
                    if dead {
                        return Err(Error::Validation(format!(
                            "state {i} leaves the cemetery"
                        )));
                    }
                    if p.len() != dim {
                        return Err(Error::Validation(format!(
                            "state {i} has dimension {} instead of {dim}",
                            p.len()
                        )));
                    }
                    coords.extend_from_slice(p);
                }
                State::Cemetery => dead = true,
            }
        }
        Self::from_parts(dim, times, coords, explosion_time)
    }

    /// Builds a path from the flattened coordinates of its live prefix.
    pub fn from_parts(dim: usize, times: Arc<[f64]>, coords: Vec<f64>, explosion_time: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        if coords.len() % dim != 0 || coords.len() / dim > times.len() {
            return Err(Error::Validation("coordinate buffer does not match the grid".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("time grid must be strictly increasing".into()));
        }
        if explosion_time.is_nan() || explosion_time < 0.0 {
            return Err(Error::Validation("explosion time must lie in [0, inf]".into()));
        }
        let alive = coords.len() / dim;
        // Absorption: a grid time is live exactly when it precedes ξ.
        let expected_alive = times.iter().take_while(|&&t| t < explosion_time).count();
        if alive != expected_alive {
            return Err(Error::Validation(format!(
                "absorption violated: {alive} live states but {expected_alive} grid times precede ξ={explosion_time}"
            )));
        }
        Ok(Self {
            dim,
            times,
            coords,
            explosion_time,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn shared_times(&self) -> Arc<[f64]> {
        Arc::clone(&self.times)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of grid points before absorption.
    pub fn alive_len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn explosion_time(&self) -> f64 {
        self.explosion_time
    }

    pub fn exploded(&self) -> bool {
        self.explosion_time.is_finite()
    }

    pub fn state(&self, i: usize) -> StateRef<'_> {
        assert!(i < self.times.len(), "grid index out of bounds");
        if i < self.alive_len() {
            StateRef::Point(&self.coords[i * self.dim..(i + 1) * self.dim])
        } else {
            StateRef::Cemetery
        }
    }

    pub fn states(&self) -> impl Iterator<Item = StateRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.state(i))
    }

    /// State at time `t` under right-continuous step interpolation of the grid.
    pub fn at_time(&self, t: f64) -> Option<StateRef<'_>> {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            None
        } else {
            Some(self.state(idx - 1))
        }
    }

    /// Index of the grid time closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let idx = self.times.partition_point(|&s| s < t);
        if idx == 0 {
            0
        } else if idx == self.times.len() {
            idx - 1
        } else if (self.times[idx] - t).abs() < (t - self.times[idx - 1]).abs() {
            idx
        } else {
            idx - 1
        }
    }

    /// Re-checks the absorption invariant against the stored explosion time.
    pub fn check_absorption(&self) -> bool {
        self.alive_len() == self.times.iter().take_while(|&&t| t < self.explosion_time).count()
    }
}

/// First coordinate of every live path at grid index `i`; exploded paths are skipped.
pub fn marginal(paths: &[PathRecord], i: usize, coord: usize) -> Vec<f64> {
    paths
        .iter()
        .filter_map(|p| p.state(i).as_point().map(|x| x[coord]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<[f64]> {
        (0..n).map(|i| i as f64).collect::<Vec<_>>().into()
    }

    #[test]
    fn cemetery_is_absorbing() {
        let states = vec![
            State::Point(vec![0.0]),
            State::Cemetery,
            State::Point(vec![1.0]),
        ];
        assert!(PathRecord::new(1, grid(3), &states, 0.5).is_err());
    }

    #[test]
    fn explosion_time_must_match_states() {
        let states = vec![State::Point(vec![0.0]), State::Point(vec![1.0]), State::Cemetery];
        assert!(PathRecord::new(1, grid(3), &states, 1.5).is_ok());
        assert!(PathRecord::new(1, grid(3), &states, 0.5).is_err());
        assert!(PathRecord::new(1, grid(3), &states, f64::INFINITY).is_err());
    }

    #[test]
    fn states_after_xi_are_cemetery() {
        let states = vec![State::Point(vec![0.0, 1.0]), State::Cemetery, State::Cemetery];
        let p = PathRecord::new(2, grid(3), &states, 1.0).unwrap();
        assert_eq!(p.alive_len(), 1);
        assert_eq!(p.state(0), StateRef::Point(&[0.0, 1.0]));
        assert_eq!(p.state(2), StateRef::Cemetery);
        assert!(p.exploded());
        assert!(p.check_absorption());
        assert_eq!(p.at_time(1.7), Some(StateRef::Cemetery));
        assert_eq!(p.at_time(-1.0), None);
    }

    #[test]
    fn nearest_index_picks_closest() {
        let p = PathRecord::new(1, grid(3), &[State::Point(vec![0.0]), State::Point(vec![0.0]), State::Point(vec![0.0])], f64::INFINITY)
            .unwrap();
        assert_eq!(p.nearest_index(1.4), 1);
        assert_eq!(p.nearest_index(1.6), 2);
        assert_eq!(p.nearest_index(9.0), 2);
    }
}
