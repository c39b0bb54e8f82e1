//! Distributional and martingale diagnostics for simulated paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::kolmogorov_survival;
use crate::operator::TestFunction;
use crate::path::{PathRecord, StateRef};
use crate::region::BoxRegion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic p-value from the Kolmogorov distribution.
    pub p_value: f64,
    pub n: usize,
    pub m: usize,
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::Validation("sample must be nonempty".into()));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::Validation("sample contains NaN".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn ks_p_value(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_survival((s + 0.12 + 0.11 / s) * d)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < n && j < m {
        // Step past every copy of the smallest remaining value in both samples.
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, ne),
        n,
        m,
    })
}

/// One-sample statistic against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    let s = sorted(sample)?;
    let n = s.len();
    let mut d = 0.0_f64;
    for (i, x) in s.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i + 1) as f64 / n as f64 - f).max(f - i as f64 / n as f64);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n as f64),
        n,
        m: 0,
    })
}

/// Asymptotic two-sample critical value at level `alpha`,
/// `sqrt(-ln(alpha/2)/2) * sqrt((n+m)/(n m))`. Pass `m = 0` for one sample.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    if m == 0 {
        c / (n as f64).sqrt()
    } else {
        c * (((n + m) as f64) / (n as f64 * m as f64)).sqrt()
    }
}

/// Wasserstein-1 distance of two empirical laws on the line.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    // ∫ |F_a - F_b| dx over the merged support.
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        total += (i as f64 / n - j as f64 / m).abs() * (x - prev);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        prev = x;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub ks: f64,
    pub p_value: f64,
    pub wasserstein1: f64,
    pub n: usize,
    pub m: usize,
}

pub fn two_sample_report(a: &[f64], b: &[f64]) -> Result<TwoSampleReport> {
    let ks = ks_distance(a, b)?;
    Ok(TwoSampleReport {
        ks: ks.statistic,
        p_value: ks.p_value,
        wasserstein1: wasserstein1(a, b)?,
        n: ks.n,
        m: ks.m,
    })
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub allowance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub points: Vec<ResidualPoint>,
    pub passed: bool,
    /// Set when no path starts inside the localizing box.
    pub degenerate: bool,
    pub paths_in_box: usize,
}

#[derive(Debug, Clone)]
pub struct ResidualOptions {
    pub se_multiple: f64,
    /// Constant `C` in the discretization allowance `C Δs`. `None` uses the
    /// largest `|g|` seen along the paths.
    pub allowance_constant: Option<f64>,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            se_multiple: 3.0,
            allowance_constant: None,
        }
    }
}

/// Residuals of `M_t = f(X_{t∧τ}) - ∫_0^{t∧τ} g(X_s) ds` with τ the first
/// grid time at which the path is outside the open box `u` (or at Δ). The
/// integral uses left endpoints of the recorded grid.
pub fn martingale_residual(
    paths: &[PathRecord],
    f: &TestFunction,
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    u: &BoxRegion,
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    let Some(first) = paths.first() else {
        return Err(Error::Validation("no paths".into()));
    };
    let times = first.times().to_vec();
    if paths.iter().any(|p| p.times() != times.as_slice()) {
        return Err(Error::Validation("paths must share one time grid".into()));
    }
    let fval = |s: StateRef<'_>| match s {
        StateRef::Point(x) => f.value(x),
        StateRef::Cemetery => f.offset,
    };
    // Per path: M_{t_k} - M_{t_0} for every grid index, and sup |g| seen.
    let per_path: Vec<(Vec<f64>, f64, bool)> = paths
        .par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(times.len());
            let inside = |s: StateRef<'_>| matches!(s, StateRef::Point(x) if u.contains_open(x));
            let s0 = p.state(0);
            let m0 = fval(s0);
            let entered = inside(s0);
            let mut integral = 0.0;
            let mut stopped: Option<f64> = if entered { None } else { Some(m0) };
            let mut gmax = 0.0_f64;
            out.push(0.0);
            for k in 1..times.len() {
                if stopped.is_none() {
                    let prev = p.state(k - 1);
                    let x = prev.as_point().expect("inside the box is a live state");
                    let gv = g(x);
                    gmax = gmax.max(gv.abs());
                    integral += gv * (times[k] - times[k - 1]);
                    let s = p.state(k);
                    if !inside(s) {
                        stopped = Some(fval(s) - integral);
                    }
                }
                let m = match stopped {
                    Some(v) => v,
                    None => fval(p.state(k)) - integral,
                };
                out.push(m - m0);
            }
            (out, gmax, entered)
        })
        .collect();
    let entered = per_path.iter().filter(|p| p.2).count();
    let c = opts
        .allowance_constant
        .unwrap_or_else(|| per_path.iter().map(|p| p.1).fold(0.0, f64::max));
    let ds = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let mut points = Vec::with_capacity(times.len());
    let mut column = vec![0.0; per_path.len()];
    for (k, &t) in times.iter().enumerate() {
        for (c, p) in column.iter_mut().zip(&per_path) {
            *c = p.0[k];
        }
        let (mean, se) = mean_se(&column);
        let se = if se.is_finite() { se } else { 0.0 };
        let allowance = c * ds;
        points.push(ResidualPoint {
            t,
            mean,
            se,
            allowance,
            passed: mean.abs() <= opts.se_multiple * se + allowance,
        });
    }
    Ok(ResidualReport {
        passed: points.iter().all(|p| p.passed),
        points,
        degenerate: entered == 0,
        paths_in_box: entered,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplosionReport {
    /// `(t, fraction of paths at Δ at time t)` on the shared grid.
    pub fraction_by_time: Vec<(f64, f64)>,
    pub exploded_fraction: f64,
    /// Mean ξ over exploded paths, `None` if none exploded.
    pub mean_explosion_time: Option<f64>,
    pub absorption_ok: bool,
    pub paths: usize,
}

pub fn explosion_stats(paths: &[PathRecord]) -> Result<ExplosionReport> {
    let Some(first) = paths.first() else {
        return Err(Error::Validation("no paths".into()));
    };
    let times = first.times();
    let n = paths.len() as f64;
    let fraction_by_time = (0..times.len())
        .map(|k| {
            let dead = paths.iter().filter(|p| k < p.len() && k >= p.alive_len()).count();
            (times[k], dead as f64 / n)
        })
        .collect();
    let exploded: Vec<f64> = paths.iter().filter(|p| p.exploded()).map(|p| p.explosion_time()).collect();
    Ok(ExplosionReport {
        fraction_by_time,
        exploded_fraction: exploded.len() as f64 / n,
        mean_explosion_time: (!exploded.is_empty()).then(|| exploded.iter().sum::<f64>() / exploded.len() as f64),
        absorption_ok: paths.iter().all(|p| p.check_absorption()),
        paths: paths.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::State;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().statistic, 0.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[5.0, 6.0, 7.0]).unwrap().statistic, 1.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[0.5]).unwrap().statistic, 0.5);
        assert!(ks_distance(&[], &[1.0]).unwrap_err().is_validation());
    }

    #[test]
    fn ks_handles_ties() {
        // F_a jumps to 1 at 0, F_b to 1/2 at 0: the gap at 0 is 1/2.
        assert_eq!(ks_distance(&[0.0, 0.0], &[0.0, 1.0]).unwrap().statistic, 0.5);
    }

    #[test]
    fn critical_value_at_one_percent() {
        let c = ks_critical_value(100_000, 100_000, 0.01);
        assert!((c - 1.627_617 * (2.0 / 1e5_f64).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_eq!(wasserstein1(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        // Unequal sizes: {0} vs {0, 2} has |F_a - F_b| = 1/2 on [0, 2).
        assert_eq!(wasserstein1(&[0.0], &[0.0, 2.0]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn ks_is_symmetric(a in prop::collection::vec(-10.0..10.0f64, 1..50), b in prop::collection::vec(-10.0..10.0f64, 1..50)) {
            prop_assert_eq!(ks_distance(&a, &b).unwrap().statistic, ks_distance(&b, &a).unwrap().statistic);
        }

        #[test]
        fn ks_unchanged_by_self_merge(a in prop::collection::vec(-10.0..10.0f64, 1..50), b in prop::collection::vec(-10.0..10.0f64, 1..50)) {
            let doubled: Vec<f64> = a.iter().chain(&a).copied().collect();
            let d1 = ks_distance(&a, &b).unwrap().statistic;
            let d2 = ks_distance(&doubled, &b).unwrap().statistic;
            prop_assert!((d1 - d2).abs() < 1e-12);
        }

        #[test]
        fn wasserstein_shift(a in prop::collection::vec(-10.0..10.0f64, 1..50), c in -5.0..5.0f64) {
            let b: Vec<f64> = a.iter().map(|x| x + c).collect();
            prop_assert!((wasserstein1(&a, &b).unwrap() - c.abs()).abs() < 1e-12);
        }

        #[test]
        fn unequal_wasserstein_matches_quantile_coupling(a in prop::collection::vec(-10.0..10.0f64, 1..20)) {
            // Duplicating every point leaves the law unchanged.
            let b: Vec<f64> = a.iter().flat_map(|x| [*x, *x]).collect();
            prop_assert!(wasserstein1(&a, &b).unwrap().abs() < 1e-12);
        }
    }

    fn grid_paths(values: &[Vec<f64>]) -> Vec<PathRecord> {
        let n = values[0].len();
        let times: Arc<[f64]> = (0..n).map(|k| k as f64 * 0.5).collect::<Vec<_>>().into();
        values
            .iter()
            .map(|v| {
                let states: Vec<State> = v.iter().map(|x| State::Point(vec![*x])).collect();
                PathRecord::new(1, times.clone(), &states, f64::INFINITY).unwrap()
            })
            .collect()
    }

    #[test]
    fn constant_f_zero_g_has_zero_residual() {
        let paths = grid_paths(&[vec![0.0, 0.1, 0.3], vec![0.2, -0.1, 0.0]]);
        let bump = TestFunction::radial_bump(vec![0.0], 100.0).unwrap();
        // A zero function: 0 * bump.
        let f = TestFunction::combine(0.0, &bump, 0.0, &bump).unwrap();
        let r = martingale_residual(&paths, &f, &|_| 0.0, &BoxRegion::cube(1, 1.0), &ResidualOptions::default()).unwrap();
        assert!(r.points.iter().all(|p| p.mean == 0.0 && p.se == 0.0));
        assert!(r.passed);
    }

    #[test]
    fn residual_is_linear_in_f_and_g() {
        let paths = grid_paths(&[vec![0.0, 0.4, 0.3, 0.9], vec![0.2, -0.1, 0.6, 0.7], vec![-0.3, -0.5, -0.2, 0.1]]);
        let f1 = TestFunction::radial_bump(vec![0.0], 1.5).unwrap();
        let f2 = TestFunction::radial_bump(vec![0.3], 2.0).unwrap();
        let u = BoxRegion::cube(1, 0.8);
        let o = ResidualOptions::default();
        let g1 = |x: &[f64]| x[0].sin();
        let g2 = |x: &[f64]| x[0] * x[0];
        let r1 = martingale_residual(&paths, &f1, &g1, &u, &o).unwrap();
        let r2 = martingale_residual(&paths, &f2, &g2, &u, &o).unwrap();
        let f12 = TestFunction::combine(2.0, &f1, -0.5, &f2).unwrap();
        let g12 = |x: &[f64]| 2.0 * g1(x) - 0.5 * g2(x);
        let r12 = martingale_residual(&paths, &f12, &g12, &u, &o).unwrap();
        for k in 0..4 {
            let expect = 2.0 * r1.points[k].mean - 0.5 * r2.points[k].mean;
            assert!((r12.points[k].mean - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn path_outside_box_never_counts() {
        let paths = grid_paths(&[vec![5.0, 5.0]]);
        let f = TestFunction::radial_bump(vec![0.0], 1.0).unwrap();
        let r = martingale_residual(&paths, &f, &|_| 1.0, &BoxRegion::cube(1, 1.0), &ResidualOptions::default()).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn explosion_of_all_cemetery_paths() {
        let times: Arc<[f64]> = vec![0.0, 1.0].into();
        let p = PathRecord::new(1, times, &[State::Cemetery, State::Cemetery], 0.0).unwrap();
        let r = explosion_stats(&[p.clone(), p]).unwrap();
        assert_eq!(r.exploded_fraction, 1.0);
        assert_eq!(r.mean_explosion_time, Some(0.0));
        assert_eq!(r.fraction_by_time, vec![(0.0, 1.0), (1.0, 1.0)]);
        assert!(r.absorption_ok);
    }
}
