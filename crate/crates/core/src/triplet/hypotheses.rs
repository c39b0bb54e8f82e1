//! Sampled checks of the standing hypotheses on (χ, δ, γ, ν).
//!
//! H1 and H3 quantify over uncountable sets, so they are estimated by Monte
//! Carlo over pairs in K x K at a ladder of separations.

use serde::{Deserialize, Serialize};

use super::{norm, AtomLocation, CompensationFunction, JumpMeasure, TripletField};
use crate::numerics::QuadratureConfig;
use crate::region::BoxRegion;
use crate::rng::{self, open_unit, unit_sphere, Domain};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub hypothesis: String,
    pub point: Vec<f64>,
    pub other: Option<Vec<f64>>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1: HypothesisCheck,
    /// Largest sampled `|χ(b,c) - (c-b)| / |c-b|^2` over K x K.
    pub h1_constant: f64,
    /// Largest sampled `|χ|`, including far points and Δ.
    pub chi_bound: f64,
    pub h2: HypothesisCheck,
    pub h3: HypothesisCheck,
    /// `(ε, sup_{|c-b| <= ε} |χ(b,c) - (c-b)| / |c-b|^2)` for decreasing ε.
    pub h3_modulus: Vec<(f64, f64)>,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct HypothesisOptions {
    pub samples: usize,
    pub seed: u64,
    /// Base points at which H2 and the ν part of H3 are checked.
    pub base_points: usize,
    pub quadrature: QuadratureConfig,
    /// H3 passes when the modulus at the smallest ε is at most this.
    pub modulus_tol: f64,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            base_points: 64,
            quadrature: QuadratureConfig::default(),
            modulus_tol: 1e-2,
        }
    }
}

const H3_LADDER: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
const MAX_LISTED: usize = 32;

fn push(list: &mut Vec<Violation>, v: Violation) {
    if list.len() < MAX_LISTED {
        list.push(v);
    }
}

/// Checks H1, H2(a) and H3(a) on sampled points of `k`.
pub fn validate_hypotheses(
    field: &TripletField,
    chi: &CompensationFunction,
    k: &BoxRegion,
    opts: &HypothesisOptions,
) -> HypothesisReport {
    let d = k.dim();
    let samples = opts.samples.max(1);
    let mut rng = rng::stream(opts.seed, Domain::Diagnostic, 0);
    let diam = k.diameter().max(1e-12);
    let mut h1 = Vec::new();
    let mut h3 = Vec::new();
    let mut h2 = Vec::new();
    let mut chi_out = vec![0.0; d];
    let mut q = vec![0.0; d];

    // Pair separations: the H3 ladder plus a few coarse scales for H1.
    let mut scales: Vec<f64> = vec![diam, 0.3 * diam];
    scales.extend(H3_LADDER.iter().copied());
    let per_scale = (samples / scales.len()).max(1);
    let mut per_scale_max = vec![0.0_f64; scales.len()];
    let mut chi_bound = 0.0_f64;
    let mut nonfinite = false;

    for (si, &s) in scales.iter().enumerate() {
        let mut drawn = 0;
        let mut attempts = 0;
        while drawn < per_scale && attempts < 20 * per_scale {
            attempts += 1;
            let b = k.sample(&mut rng);
            unit_sphere(&mut rng, &mut q);
            let r = s * open_unit(&mut rng);
            let c: Vec<f64> = b.iter().zip(&q).map(|(b, q)| b + r * q).collect();
            if !k.contains(&c) || r == 0.0 {
                continue;
            }
            drawn += 1;
            chi.eval(&b, Some(&c), &mut chi_out);
            let h: Vec<f64> = c.iter().zip(&b).map(|(c, b)| c - b).collect();
            let hn = norm(&h);
            let resid: f64 = chi_out.iter().zip(&h).map(|(x, h)| (x - h).powi(2)).sum::<f64>().sqrt();
            let ratio = resid / (hn * hn);
            chi_bound = chi_bound.max(norm(&chi_out));
            if !ratio.is_finite() {
                nonfinite = true;
                push(
                    &mut h1,
                    Violation {
                        hypothesis: "H1".into(),
                        point: b.clone(),
                        other: Some(c.clone()),
                        detail: "non-finite second-order ratio".into(),
                    },
                );
                continue;
            }
            if ratio > per_scale_max[si] {
                per_scale_max[si] = ratio;
            }
        }
    }

    // Boundedness: far targets and the cemetery.
    for _ in 0..per_scale {
        let a = k.sample(&mut rng);
        unit_sphere(&mut rng, &mut q);
        let r = 10f64.powf(6.0 * open_unit(&mut rng));
        let b: Vec<f64> = a.iter().zip(&q).map(|(a, q)| a + r * q).collect();
        chi.eval(&a, Some(&b), &mut chi_out);
        chi_bound = chi_bound.max(norm(&chi_out));
        chi.eval(&a, None, &mut chi_out);
        chi_bound = chi_bound.max(norm(&chi_out));
    }
    if !chi_bound.is_finite() {
        push(
            &mut h1,
            Violation {
                hypothesis: "H1".into(),
                point: vec![],
                other: None,
                detail: "compensation function is unbounded on sampled points".into(),
            },
        );
    }

    // H1: the ratio must not blow up as the separation shrinks. A finite
    // constant shows up as the small-scale maxima staying below the coarse ones.
    let coarse = per_scale_max[..2].iter().cloned().fold(0.0, f64::max);
    let fine = per_scale_max[2..].iter().cloned().fold(0.0, f64::max);
    let h1_constant = per_scale_max.iter().cloned().fold(0.0, f64::max);
    let h1_ok = !nonfinite && chi_bound.is_finite() && fine <= 10.0 * coarse.max(1e-9) && {
        // Growth like 1/|h| shows as a factor ~10 per ladder step.
        let tail = &per_scale_max[2..];
        !(tail.windows(2).all(|w| w[1] > 5.0 * w[0].max(1e-300)) && tail[tail.len() - 1] > 1.0)
    };
    if !h1_ok && h1.is_empty() {
        push(
            &mut h1,
            Violation {
                hypothesis: "H1".into(),
                point: vec![],
                other: None,
                detail: format!("second-order ratio grows as the separation shrinks: {:?}", &per_scale_max[2..]),
            },
        );
    }

    // H3 modulus over the ladder.
    let h3_modulus: Vec<(f64, f64)> = H3_LADDER
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            // Pairs drawn at separation <= ε for every ladder rung at or below it.
            let m = per_scale_max[2 + i..].iter().cloned().fold(0.0, f64::max);
            (eps, m)
        })
        .collect();
    let nonincreasing = h3_modulus.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9) + 1e-15);
    let last = h3_modulus.last().map(|m| m.1).unwrap_or(0.0);
    if !(nonincreasing && last <= opts.modulus_tol) {
        push(
            &mut h3,
            Violation {
                hypothesis: "H3".into(),
                point: vec![],
                other: None,
                detail: format!("second-order modulus does not vanish: {h3_modulus:?}"),
            },
        );
    }

    // H2 and the ν part of H3 at base points.
    let base: Vec<Vec<f64>> = if field.constant_value().is_some() {
        vec![k.sample(&mut rng)]
    } else {
        (0..opts.base_points.max(1)).map(|_| k.sample(&mut rng)).collect()
    };
    let mut h3_nu_ok = true;
    for a in &base {
        let t = field.at(a);
        if let Err(e) = t.validate_at(a, &opts.quadrature) {
            push(
                &mut h2,
                Violation {
                    hypothesis: "H2".into(),
                    point: a.clone(),
                    other: None,
                    detail: e.to_string(),
                },
            );
        }
        if let JumpMeasure::Atoms(atoms) = &t.jumps {
            for atom in atoms {
                let AtomLocation::Point(b) = &atom.location else { continue };
                if chi_discontinuous_at(chi, a, b, &mut rng) {
                    h3_nu_ok = false;
                    push(
                        &mut h3,
                        Violation {
                            hypothesis: "H3".into(),
                            point: a.clone(),
                            other: Some(b.clone()),
                            detail: format!("atom of mass {} where χ is discontinuous", atom.mass),
                        },
                    );
                }
            }
        }
    }

    HypothesisReport {
        h1: HypothesisCheck { passed: h1_ok, violations: h1 },
        h1_constant,
        chi_bound,
        h2: HypothesisCheck { passed: h2.is_empty(), violations: h2 },
        h3: HypothesisCheck {
            passed: nonincreasing && last <= opts.modulus_tol && h3_nu_ok,
            violations: h3,
        },
        h3_modulus,
        samples,
    }
}

fn chi_discontinuous_at(chi: &CompensationFunction, a: &[f64], b: &[f64], rng: &mut rng::StreamRng) -> bool {
    let h: Vec<f64> = b.iter().zip(a).map(|(b, a)| b - a).collect();
    if let Some(r) = chi.discontinuity_radius() {
        return (norm(&h) - r).abs() <= 1e-12 * r;
    }
    if chi.is_translation_invariant() {
        return false;
    }
    let d = a.len();
    let mut base = vec![0.0; d];
    let mut moved = vec![0.0; d];
    let mut q = vec![0.0; d];
    chi.eval(a, Some(b), &mut base);
    let eta = 1e-9 * (1.0 + norm(b));
    for _ in 0..16 {
        unit_sphere(rng, &mut q);
        let c: Vec<f64> = b.iter().zip(&q).map(|(b, q)| b + eta * q).collect();
        chi.eval(a, Some(&c), &mut moved);
        let jump: f64 = base.iter().zip(&moved).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if jump > 1e-6 {
            return true;
        }
    }
    false
}
