//! Compensation functions χ(a, b).

use std::fmt;
use std::sync::Arc;

/// `χ(a, b)` written into `out`; `b = None` stands for Δ.
pub type CompensationFn = Arc<dyn Fn(&[f64], Option<&[f64]>, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum CompensationFunction {
    /// `(b - a) / (1 + |b - a|^2)`.
    Chi1,
    /// `(b - a) 1_{|b - a| < 1}`.
    Chi2,
    /// A bounded user function. The checker samples it; nothing is assumed.
    Custom(CompensationFn),
}

impl fmt::Debug for CompensationFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompensationFunction::Chi1 => f.write_str("Chi1"),
            CompensationFunction::Chi2 => f.write_str("Chi2"),
            CompensationFunction::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl CompensationFunction {
    /// Whether χ depends on `(a, b)` only through `h = b - a`.
    pub fn is_translation_invariant(&self) -> bool {
        !matches!(self, CompensationFunction::Custom(_))
    }

    /// `χ(a, b)`; `b = None` is Δ, where χ vanishes for the built-in variants.
    pub fn eval(&self, a: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
        match (self, b) {
            (CompensationFunction::Custom(g), _) => g(a, b, out),
            (_, None) => out.iter_mut().for_each(|v| *v = 0.0),
            (_, Some(b)) => {
                for ((o, b), a) in out.iter_mut().zip(b).zip(a) {
                    *o = b - a;
                }
                self.apply_to_jump(out);
            }
        }
    }

    /// `χ(a, a + h)`.
    pub fn eval_jump(&self, a: &[f64], h: &[f64], out: &mut [f64]) {
        match self {
            CompensationFunction::Custom(g) => {
                let b: Vec<f64> = a.iter().zip(h).map(|(a, h)| a + h).collect();
                g(a, Some(&b), out);
            }
            _ => {
                out.copy_from_slice(h);
                self.apply_to_jump(out);
            }
        }
    }

    /// Scalar factor `s(|h|)` with `χ(a, a + h) = s h` for the built-in variants.
    pub fn radial_factor(&self, r: f64) -> Option<f64> {
        match self {
            CompensationFunction::Chi1 => Some(1.0 / (1.0 + r * r)),
            CompensationFunction::Chi2 => Some(if r < 1.0 { 1.0 } else { 0.0 }),
            CompensationFunction::Custom(_) => None,
        }
    }

    fn apply_to_jump(&self, h: &mut [f64]) {
        let r2: f64 = h.iter().map(|v| v * v).sum();
        let s = self.radial_factor(r2.sqrt()).expect("built-in compensation");
        h.iter_mut().for_each(|v| *v *= s);
    }

    /// Radius at which χ is discontinuous in `b`, if any.
    pub fn discontinuity_radius(&self) -> Option<f64> {
        match self {
            CompensationFunction::Chi2 => Some(1.0),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CompensationFunction::Chi1 => "chi1",
            CompensationFunction::Chi2 => "chi2",
            CompensationFunction::Custom(_) => "custom",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi1_closed_form() {
        let a = [0.5, -1.0];
        let b = [1.5, 1.0];
        let mut out = [0.0; 2];
        CompensationFunction::Chi1.eval(&a, Some(&b), &mut out);
        // h = (1, 2), |h|^2 = 5
        approx::assert_relative_eq!(out[0], 1.0 / 6.0, max_relative = 1e-15);
        approx::assert_relative_eq!(out[1], 2.0 / 6.0, max_relative = 1e-15);
        CompensationFunction::Chi1.eval(&a, None, &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn chi2_closed_form() {
        let mut out = [0.0];
        CompensationFunction::Chi2.eval(&[0.0], Some(&[0.999]), &mut out);
        assert_eq!(out, [0.999]);
        CompensationFunction::Chi2.eval(&[0.0], Some(&[1.0]), &mut out);
        assert_eq!(out, [0.0]);
        CompensationFunction::Chi2.eval_jump(&[3.0], &[-0.25], &mut out);
        assert_eq!(out, [-0.25]);
    }

    #[test]
    fn custom_sees_base_point() {
        let chi = CompensationFunction::Custom(Arc::new(|a: &[f64], b: Option<&[f64]>, out: &mut [f64]| {
            out[0] = b.map_or(0.0, |b| (b[0] - a[0]).tanh());
        }));
        let mut out = [0.0];
        chi.eval_jump(&[2.0], &[0.5], &mut out);
        assert_eq!(out[0], 0.5_f64.tanh());
        assert!(!chi.is_translation_invariant());
    }
}
