//! Uniform rectangular grids with multilinear interpolation. Shared by the
//! exposure field and the value-function solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::Rect;

/// Uniform node lattice over an axis-aligned box. Every axis has at least two
/// nodes so each cell has positive volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Rect,
    pub nodes_per_axis: Vec<usize>,
}

impl GridSpec {
    pub fn new(bounds: Rect, nodes_per_axis: Vec<usize>) -> Result<Self> {
        if nodes_per_axis.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "grid nodes per axis",
                expected: bounds.dim(),
                got: nodes_per_axis.len(),
            });
        }
        for (&n, (lo, hi)) in nodes_per_axis
            .iter()
            .zip(bounds.lower.iter().zip(&bounds.upper))
        {
            if n < 2 {
                return Err(Error::Invalid {
                    what: "grid",
                    detail: format!("need at least 2 nodes per axis, got {n}"),
                });
            }
            if hi <= lo {
                return Err(Error::Invalid {
                    what: "grid",
                    detail: "grid box must have positive width on every axis".into(),
                });
            }
        }
        Ok(GridSpec {
            bounds,
            nodes_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis.iter().product()
    }

    /// Node spacing per axis.
    pub fn spacing(&self) -> Vec<f64> {
        self.bounds
            .widths()
            .iter()
            .zip(&self.nodes_per_axis)
            .map(|(w, &n)| w / (n as f64 - 1.0))
            .collect()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Flat index of a multi-index (row-major, axis 0 slowest).
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for (k, &i) in multi.iter().enumerate() {
            idx = idx * self.nodes_per_axis[k] + i;
        }
        idx
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut multi = vec![0; self.dim()];
        self.multi_index_into(flat, &mut multi);
        multi
    }

    pub fn multi_index_into(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.nodes_per_axis[k];
            flat /= self.nodes_per_axis[k];
        }
    }

    /// Flat-index distance between neighbouring nodes along `axis`.
    pub fn axis_stride(&self, axis: usize) -> usize {
        self.nodes_per_axis[axis + 1..].iter().product()
    }

    pub fn node_point(&self, multi: &[usize]) -> Vec<f64> {
        let h = self.spacing();
        multi
            .iter()
            .enumerate()
            .map(|(k, &i)| self.bounds.lower[k] + i as f64 * h[k])
            .collect()
    }

    pub fn node_point_flat(&self, flat: usize) -> Vec<f64> {
        self.node_point(&self.multi_index(flat))
    }

    /// Allocation-free [`GridSpec::node_point_flat`] for hot loops.
    pub fn node_point_flat_into(&self, mut flat: usize, out: &mut [f64]) {
        for k in (0..self.dim()).rev() {
            let i = flat % self.nodes_per_axis[k];
            flat /= self.nodes_per_axis[k];
            let h = (self.bounds.upper[k] - self.bounds.lower[k])
                / (self.nodes_per_axis[k] as f64 - 1.0);
            out[k] = self.bounds.lower[k] + i as f64 * h;
        }
    }

    /// Per-axis inclusive node index ranges covering `rect` (clipped to the
    /// grid). Used to restrict updates to a local neighbourhood.
    pub fn index_ranges_covering(&self, rect: &Rect) -> Vec<(usize, usize)> {
        let h = self.spacing();
        (0..self.dim())
            .map(|k| {
                let lo = ((rect.lower[k] - self.bounds.lower[k]) / h[k]).floor() as i64;
                let hi = ((rect.upper[k] - self.bounds.lower[k]) / h[k]).ceil() as i64;
                let lo = lo.clamp(0, self.nodes_per_axis[k] as i64 - 1) as usize;
                let hi = hi.clamp(0, self.nodes_per_axis[k] as i64 - 1) as usize;
                (lo, hi)
            })
            .collect()
    }

    /// Calls `f` with every multi-index in the cartesian product of the
    /// inclusive per-axis `ranges`.
    pub fn for_each_in_ranges(ranges: &[(usize, usize)], mut f: impl FnMut(&[usize])) {
        let mut multi: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            f(&multi);
            let mut axis = ranges.len();
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if multi[axis] < ranges[axis].1 {
                    multi[axis] += 1;
                    break;
                }
                multi[axis] = ranges[axis].0;
            }
        }
    }

    /// Multilinear interpolation of nodal `values` at `x`, which must lie in
    /// the grid box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "interpolation point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.bounds.contains(x) {
            return Err(Error::OutOfDomain {
                time: f64::NAN,
                detail: format!("point {x:?} outside grid box"),
            });
        }
        Ok(self.interpolate_clamped(values, x))
    }

    /// Multilinear interpolation after componentwise clamping of `x` onto the
    /// grid box. Out-of-box queries therefore take the value at the nearest
    /// boundary point.
    pub fn interpolate_clamped(&self, values: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.node_count());
        let h = self.spacing();
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let xk = x[k].clamp(self.bounds.lower[k], self.bounds.upper[k]);
            let t = (xk - self.bounds.lower[k]) / h[k];
            let mut i = t.floor() as usize;
            if i >= self.nodes_per_axis[k] - 1 {
                i = self.nodes_per_axis[k] - 2;
            }
            base[k] = i;
            frac[k] = (t - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        let corners = 1usize << d;
        let mut multi = vec![0usize; d];
        for mask in 0..corners {
            let mut w = 1.0;
            for k in 0..d {
                if mask >> k & 1 == 1 {
                    multi[k] = base[k] + 1;
                    w *= frac[k];
                } else {
                    multi[k] = base[k];
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                acc += w * values[self.flat_index(&multi)];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d() -> GridSpec {
        GridSpec::new(
            Rect::new(vec![0.0], vec![1.0]).unwrap(),
            vec![11],
        )
        .unwrap()
    }

    #[test]
    fn interpolation_reproduces_nodal_values() {
        let g = grid_1d();
        let values: Vec<f64> = (0..11).map(|i| (i as f64).powi(2)).collect();
        for i in 0..11 {
            let x = [i as f64 * 0.1];
            assert!((g.interpolate(&values, &x).unwrap() - values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_exact_for_linear_fields() {
        let g = GridSpec::new(
            Rect::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(),
            vec![5, 9],
        )
        .unwrap();
        let values: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let p = g.node_point_flat(i);
                3.0 * p[0] - 0.5 * p[1] + 2.0
            })
            .collect();
        let probe = [0.123, 1.456];
        let want = 3.0 * probe[0] - 0.5 * probe[1] + 2.0;
        assert!((g.interpolate(&values, &probe).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn out_of_box_queries_are_rejected_but_clamped_variant_extends() {
        let g = grid_1d();
        let values: Vec<f64> = (0..11).map(|i| i as f64).collect();
        assert!(g.interpolate(&values, &[1.5]).is_err());
        assert_eq!(g.interpolate_clamped(&values, &[1.5]), 10.0);
        assert_eq!(g.interpolate_clamped(&values, &[-0.5]), 0.0);
    }

    #[test]
    fn flat_and_multi_indices_round_trip() {
        let g = GridSpec::new(
            Rect::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap(),
            vec![3, 4, 5],
        )
        .unwrap();
        for flat in 0..g.node_count() {
            assert_eq!(g.flat_index(&g.multi_index(flat)), flat);
        }
    }

    #[test]
    fn covering_ranges_clip_to_the_grid() {
        let g = grid_1d();
        let r = Rect::new(vec![0.34], vec![0.58]).unwrap();
        assert_eq!(g.index_ranges_covering(&r), vec![(3, 6)]);
        let outside = Rect::new(vec![-5.0], vec![5.0]).unwrap();
        assert_eq!(g.index_ranges_covering(&outside), vec![(0, 10)]);
    }
}
