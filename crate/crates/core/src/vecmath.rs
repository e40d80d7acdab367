//! Small vector helpers shared by the numeric modules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Relative tolerance used when checking that one duration divides another.
pub const DIVISIBILITY_TOL: f64 = 1e-9;

/// Number of `step`-sized intervals in `span`, or an error when `step` does
/// not divide `span` to within a relative tolerance.
pub fn exact_steps(what: &'static str, span: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) {
        return Err(Error::NotPositive {
            what: "step",
            value: step,
        });
    }
    if span < -DIVISIBILITY_TOL {
        return Err(Error::NotPositive {
            what,
            value: span,
        });
    }
    let ratio = span / step;
    let n = ratio.round();
    if (ratio - n).abs() > DIVISIBILITY_TOL * ratio.abs().max(1.0) {
        return Err(Error::StepMismatch { what, step, span });
    }
    Ok(n as usize)
}

/// Axis-aligned box, used for both state domains and control constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Rect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::Invalid {
                what: "box",
                detail: "dimension must be at least 1".into(),
            });
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NotFinite { what: "box bound" });
            }
            if lo > hi {
                return Err(Error::Invalid {
                    what: "box",
                    detail: format!("lower bound {lo} exceeds upper bound {hi}"),
                });
            }
        }
        Ok(Rect { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Componentwise clamp onto the box; exact projection for box constraints.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                if hi > lo {
                    rng.gen_range(*lo..*hi)
                } else {
                    *lo
                }
            })
            .collect()
    }

    /// Corner selected by the bits of `mask` (bit k set means upper bound on
    /// axis k).
    pub fn corner(&self, mask: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                if mask >> k & 1 == 1 {
                    self.upper[k]
                } else {
                    self.lower[k]
                }
            })
            .collect()
    }
}

/// Box typed as a control constraint set.
pub type ControlBox = Rect;

/// Deterministic 64-bit mix used to derive per-step seeds from a base seed.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform sample of `B(center, radius)` in the Euclidean norm, by rejection
/// from the bounding cube (efficient for the low dimensions used here).
pub fn sample_ball(center: &[f64], radius: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    loop {
        let candidate: Vec<f64> = center
            .iter()
            .map(|c| c + rng.gen_range(-radius..=radius))
            .collect();
        if dist2(&candidate, center) <= radius {
            return candidate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn exact_steps_accepts_clean_multiples() {
        assert_eq!(exact_steps("horizon", 1.0, 0.01).unwrap(), 100);
        assert_eq!(exact_steps("horizon", 0.0, 0.5).unwrap(), 0);
    }

    #[test]
    fn exact_steps_rejects_misaligned_spans() {
        assert!(exact_steps("horizon", 1.0, 0.3).is_err());
    }

    #[test]
    fn project_is_identity_inside_the_box() {
        let b = Rect::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let x = vec![0.5, 1.5];
        assert_eq!(b.project(&x), x);
        assert_eq!(b.project(&[3.0, -4.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn ball_samples_stay_in_the_ball() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let c = vec![1.0, -2.0];
        for _ in 0..200 {
            let x = sample_ball(&c, 0.3, &mut rng);
            assert!(dist2(&x, &c) <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn corners_enumerate_box_vertices() {
        let b = Rect::new(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.corner(0), vec![-1.0, -2.0]);
        assert_eq!(b.corner(1), vec![1.0, -2.0]);
        assert_eq!(b.corner(2), vec![-1.0, 2.0]);
        assert_eq!(b.corner(3), vec![1.0, 2.0]);
    }
}
