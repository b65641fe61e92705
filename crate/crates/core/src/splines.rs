//! Uniform extended knot grids and B-spline basis evaluation.
//!
//! A grid over `[t_min, t_max]` with `grid_size` intervals and spline order
//! `k` (polynomial degree, so cubic is `k = 3`) carries `k` extra knots on
//! each side at the same spacing. That yields `grid_size + k` basis
//! functions, all of which are full-support polynomials of degree `k`
//! inside the domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    knots: Vec<f64>,
    order: usize,
    grid_size: usize,
    t_min: f64,
    t_max: f64,
}

impl KnotVector {
    /// Builds the uniform grid with `order` mirrored extension knots per side.
    pub fn uniform(t_min: f64, t_max: f64, grid_size: usize, order: usize) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite()) || t_min >= t_max {
            return Err(Error::invalid(format!(
                "degenerate spline domain [{t_min}, {t_max}]"
            )));
        }
        if grid_size == 0 || order == 0 {
            return Err(Error::invalid("grid_size and order must be positive"));
        }
        let step = (t_max - t_min) / grid_size as f64;
        let n = grid_size + 1 + 2 * order;
        let knots = (0..n)
            .map(|i| t_min + (i as f64 - order as f64) * step)
            .collect();
        Ok(Self {
            knots,
            order,
            grid_size,
            t_min,
            t_max,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    /// N_B, the number of basis functions.
    pub fn num_basis(&self) -> usize {
        self.grid_size + self.order
    }

    /// Evaluates every basis function at `x`.
    pub fn basis(&self, x: f64) -> Result<Vec<f64>> {
        let mut values = vec![0.0; self.num_basis()];
        self.basis_into(x, &mut values, None)?;
        Ok(values)
    }

    /// Evaluates basis values and their first derivatives at `x`.
    pub fn basis_with_derivative(&self, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut values = vec![0.0; self.num_basis()];
        let mut derivs = vec![0.0; self.num_basis()];
        self.basis_into(x, &mut values, Some(&mut derivs))?;
        Ok((values, derivs))
    }

    /// Allocation-free evaluation into caller buffers of length `num_basis()`.
    ///
    /// Inputs outside the domain are evaluated on the extended span; beyond
    /// the outermost knots every basis function is zero.
    pub fn basis_into(
        &self,
        x: f64,
        values: &mut [f64],
        derivs: Option<&mut [f64]>,
    ) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("non-finite spline input {x}")));
        }
        let nb = self.num_basis();
        debug_assert_eq!(values.len(), nb);
        let t = &self.knots;
        let k = self.order;

        // Degree-0 indicators over half-open spans; the last knot closes
        // the final span so the right end of the extended grid is included.
        let mut level: Vec<f64> = (0..t.len() - 1)
            .map(|i| {
                let inside = if i + 2 == t.len() {
                    x >= t[i] && x <= t[i + 1]
                } else {
                    x >= t[i] && x < t[i + 1]
                };
                if inside {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();

        let mut lower = Vec::new();
        for p in 1..=k {
            let count = t.len() - 1 - p;
            let mut next = vec![0.0; count];
            for i in 0..count {
                let left = ratio(x - t[i], t[i + p] - t[i]) * level[i];
                let right = ratio(t[i + p + 1] - x, t[i + p + 1] - t[i + 1]) * level[i + 1];
                next[i] = left + right;
            }
            if p == k {
                lower = std::mem::replace(&mut level, next);
            } else {
                level = next;
            }
        }
        values.copy_from_slice(&level[..nb]);

        if let Some(d) = derivs {
            debug_assert_eq!(d.len(), nb);
            let kf = k as f64;
            for i in 0..nb {
                d[i] = kf * ratio(lower[i], t[i + k] - t[i])
                    - kf * ratio(lower[i + 1], t[i + k + 1] - t[i + 1]);
            }
        }
        Ok(())
    }
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_grid() -> KnotVector {
        KnotVector::uniform(-1.0, 1.0, 3, 3).unwrap()
    }

    #[test]
    fn construction_matches_rule() {
        let kv = default_grid();
        assert_eq!(kv.knots().len(), 10);
        assert_eq!(kv.num_basis(), 6);
        assert!((kv.knots()[0] + 3.0).abs() < 1e-15);
        assert!((kv.knots()[9] - 3.0).abs() < 1e-15);
        for w in kv.knots().windows(2) {
            assert!((w[1] - w[0] - 2.0 / 3.0).abs() < 1e-12);
        }
        let hat = KnotVector::uniform(0.0, 1.0, 1, 1).unwrap();
        assert_eq!(hat.num_basis(), 2);
        assert_eq!(hat.knots(), &[-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(KnotVector::uniform(-1.0, 1.0, 5, 3).unwrap().num_basis(), 8);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(KnotVector::uniform(1.0, 1.0, 3, 3).is_err());
        assert!(KnotVector::uniform(2.0, 1.0, 3, 3).is_err());
        assert!(KnotVector::uniform(-1.0, 1.0, 0, 3).is_err());
        assert!(KnotVector::uniform(-1.0, 1.0, 3, 0).is_err());
        assert!(default_grid().basis(f64::NAN).is_err());
        assert!(default_grid().basis(f64::INFINITY).is_err());
    }

    #[test]
    fn linear_hats() {
        let hat = KnotVector::uniform(0.0, 1.0, 1, 1).unwrap();
        let v = hat.basis(0.25).unwrap();
        assert!((v[0] - 0.75).abs() < 1e-15 && (v[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn outside_extended_span_is_zero() {
        let kv = default_grid();
        assert!(kv.basis(-3.5).unwrap().iter().all(|&b| b == 0.0));
        assert!(kv.basis(10.0).unwrap().iter().all(|&b| b == 0.0));
        // Just outside the domain is still covered by the extension.
        assert!(kv.basis(1.2).unwrap().iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn partition_and_local_support() {
        let kv = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let x: f64 = rng.gen_range(-1.0..=1.0);
            let (v, d) = kv.basis_with_derivative(x).unwrap();
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().sum::<f64>().abs() < 1e-10);
            assert!(v.iter().filter(|&&b| b != 0.0).count() <= kv.order() + 1);
            assert!(v.iter().all(|&b| b >= 0.0));
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let kv = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..500 {
            let x: f64 = rng.gen_range(-1.5..1.5);
            let (_, d) = kv.basis_with_derivative(x).unwrap();
            let up = kv.basis(x + h).unwrap();
            let dn = kv.basis(x - h).unwrap();
            for i in 0..kv.num_basis() {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                assert!((fd - d[i]).abs() < 1e-6, "x={x} i={i} fd={fd} an={}", d[i]);
            }
        }
    }

    #[test]
    fn cubic_is_c2_across_knots() {
        let kv = default_grid();
        let h = 1e-5;
        for &knot in &kv.knots()[2..8] {
            let f = |x: f64| kv.basis(x).unwrap();
            // One-sided second differences on each side of the knot.
            let (a0, a1, a2) = (f(knot), f(knot - h), f(knot - 2.0 * h));
            let (b1, b2) = (f(knot + h), f(knot + 2.0 * h));
            for i in 0..kv.num_basis() {
                let left = (a0[i] - 2.0 * a1[i] + a2[i]) / (h * h);
                let right = (b2[i] - 2.0 * b1[i] + a0[i]) / (h * h);
                assert!((left - right).abs() < 1e-4, "knot={knot} i={i}");
            }
        }
    }
}
