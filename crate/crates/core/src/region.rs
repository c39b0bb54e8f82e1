//! Axis-aligned boxes used as compacts, supports and localizing sets.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::open_unit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Validation("box corners must have the same positive dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Validation("box needs finite corners with lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[-r, r]^d`.
    pub fn cube(dim: usize, r: f64) -> Self {
        Self {
            lower: vec![-r; dim],
            upper: vec![r; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| *l <= *x && *x <= *u)
    }

    /// Strict interior membership.
    pub fn contains_open(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| *l < *x && *x < *u)
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest distance from the origin of any point of the box.
    pub fn max_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance from `x` to the box (0 inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| {
                let d = if x < l { l - x } else if x > u { x - u } else { 0.0 };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * (1.0 - open_unit(rng)))
            .collect()
    }

    /// Tensor grid with `per_axis` points per axis, capped at `cap` points in
    /// total by thinning every axis equally.
    pub fn grid(&self, per_axis: usize, cap: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut m = per_axis.max(1);
        while m > 1 && (m as f64).powi(d as i32) > cap as f64 {
            m -= 1;
        }
        let axis = |i: usize| -> Vec<f64> {
            let (l, u) = (self.lower[i], self.upper[i]);
            if m == 1 || l == u {
                vec![0.5 * (l + u)]
            } else {
                (0..m).map(|k| l + (u - l) * k as f64 / (m - 1) as f64).collect()
            }
        };
        let axes: Vec<Vec<f64>> = (0..d).map(axis).collect();
        let mut points = vec![Vec::with_capacity(d)];
        for ax in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    ax.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        points
    }
}
