//! Beliefs over candidate dynamics and the exposure-driven learning rule.
//!
//! A belief is a weighted finite ensemble of candidate dynamics together with
//! a designated truth anchor and a nonnegative exposure field on a state
//! grid. Wherever the realized trajectory has spent time, exposure grows and
//! the attenuation `alpha(x) = exp(-exposure(x))` shrinks, morphing every
//! candidate toward the anchor:
//!
//! `h_i(x, u) = truth(x, u) + alpha(x) * (g_i(x, u) - truth(x, u))`
//!
//! Candidate weights never change; learning acts only through exposure, so
//! it is monotone and localized to the support of the kernel around visited
//! states.

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{DynamicsSpec, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::vecmath::{self, Rect};

/// Kernel values are clamped to this ceiling at vanishing distance, keeping
/// exposure integrals finite while preserving the sharp near-field growth.
pub const KERNEL_CLAMP: f64 = 1e6;

/// Default exposure cap. `exp(-745)` underflows to the smallest subnormal,
/// so capped exposure already means full attenuation in double precision.
pub const EXPOSURE_CAP: f64 = 745.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// `phi(r) = (1 - r/rho) / (r/rho)` on `(0, rho)`, zero outside,
    /// clamped at vanishing distance.
    Reciprocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningKernel {
    pub shape: KernelShape,
    pub support_radius: f64,
}

impl LearningKernel {
    pub fn new(support_radius: f64) -> Result<Self> {
        if !(support_radius > 0.0 && support_radius.is_finite()) {
            return Err(Error::NotPositive {
                what: "support_radius",
                value: support_radius,
            });
        }
        Ok(LearningKernel {
            shape: KernelShape::Reciprocal,
            support_radius,
        })
    }

    /// Evaluates the kernel at distance `r >= 0`. Zero at and beyond the
    /// support radius, clamped near zero distance.
    pub fn eval(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        if r >= self.support_radius {
            return 0.0;
        }
        let z = r / self.support_radius;
        if z <= 0.0 {
            return KERNEL_CLAMP;
        }
        ((1.0 - z) / z).min(KERNEL_CLAMP)
    }
}

/// Accumulated dwell-time field on a state grid. Values are nonnegative,
/// capped, and only ever grow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub cap: f64,
}

impl ExposureField {
    pub fn new(grid: GridSpec, cap: f64) -> Result<Self> {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::NotPositive {
                what: "exposure cap",
                value: cap,
            });
        }
        let values = vec![0.0; grid.node_count()];
        Ok(ExposureField { grid, values, cap })
    }

    /// Builds a field from explicit nodal values (used by verification
    /// drivers that construct synthetic belief paths).
    pub fn from_values(grid: GridSpec, values: Vec<f64>, cap: f64) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::DimensionMismatch {
                what: "exposure values",
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::NotPositive {
                what: "exposure cap",
                value: cap,
            });
        }
        for v in &values {
            if !(*v >= 0.0 && *v <= cap) {
                return Err(Error::Invalid {
                    what: "exposure values",
                    detail: format!("value {v} outside [0, {cap}]"),
                });
            }
        }
        Ok(ExposureField { grid, values, cap })
    }

    /// Adds the trapezoid-rule integral of `kernel(|x(s) - node|)` along the
    /// trajectory to every node, clamping at the cap. The whole trajectory
    /// must stay inside the grid box.
    pub fn accumulate(&mut self, traj: &Trajectory, kernel: &LearningKernel) -> Result<()> {
        if traj.len() < 2 {
            return Ok(());
        }
        for (t, x) in traj.times.iter().zip(&traj.states) {
            if x.len() != self.grid.dim() {
                return Err(Error::DimensionMismatch {
                    what: "trajectory state",
                    expected: self.grid.dim(),
                    got: x.len(),
                });
            }
            if !self.grid.bounds.contains(x) {
                return Err(Error::OutOfDomain {
                    time: *t,
                    detail: format!("trajectory state {x:?} left the exposure grid"),
                });
            }
        }
        let rho = kernel.support_radius;
        let dim = self.grid.dim();
        // Only nodes within the kernel support of the swept tube can change.
        let mut lo = traj.states[0].clone();
        let mut hi = traj.states[0].clone();
        for x in &traj.states {
            for k in 0..dim {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        for k in 0..dim {
            lo[k] -= rho;
            hi[k] += rho;
        }
        let ranges = self
            .grid
            .index_ranges_covering(&Rect::new(lo, hi).expect("inflated tube bounds are ordered"));
        let last = traj.len() - 1;
        let grid = self.grid.clone();
        let cap = self.cap;
        GridSpec::for_each_in_ranges(&ranges, |multi| {
            let node = grid.node_point(multi);
            let mut acc = 0.0;
            for (k, x) in traj.states.iter().enumerate() {
                let d = vecmath::dist2(x, &node);
                if d < rho {
                    let w = if k == 0 || k == last {
                        0.5 * traj.step
                    } else {
                        traj.step
                    };
                    acc += w * kernel.eval(d);
                }
            }
            if acc > 0.0 {
                let idx = grid.flat_index(multi);
                self.values[idx] = (self.values[idx] + acc).min(cap);
            }
        });
        Ok(())
    }

    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        self.grid.interpolate(&self.values, x)
    }

    /// Minimum nodal exposure over all cells that intersect `rect`. This is
    /// a lower bound for the interpolated exposure anywhere in `rect`.
    pub fn min_over_rect(&self, rect: &Rect) -> f64 {
        let ranges = self.grid.index_ranges_covering(rect);
        let mut min = f64::INFINITY;
        GridSpec::for_each_in_ranges(&ranges, |multi| {
            min = min.min(self.values[self.grid.flat_index(multi)]);
        });
        min
    }

    pub fn summary(&self) -> ExposureSummary {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for v in &self.values {
            min = min.min(*v);
            max = max.max(*v);
            sum += v;
        }
        ExposureSummary {
            min,
            mean: sum / self.values.len() as f64,
            max,
        }
    }

    /// Lipschitz bound for `x -> exp(-exposure(x))` with multilinear
    /// interpolation of the nodal exposures. Per cell edge the slope of
    /// `exp(-E)` is at most `exp(-min E) * |dE| / h`; the per-axis maxima
    /// combine into a gradient bound. Enters the effective-candidate
    /// regularity bound.
    pub fn attenuation_lipschitz(&self) -> f64 {
        let spacing = self.grid.spacing();
        let mut max_slope: f64 = 0.0;
        for flat in 0..self.grid.node_count() {
            let multi = self.grid.multi_index(flat);
            for axis in 0..self.grid.dim() {
                if multi[axis] + 1 < self.grid.nodes_per_axis[axis] {
                    let mut next = multi.clone();
                    next[axis] += 1;
                    let a = self.values[flat];
                    let b = self.values[self.grid.flat_index(&next)];
                    let slope = (-a.min(b)).exp() * (a - b).abs() / spacing[axis];
                    max_slope = max_slope.max(slope);
                }
            }
        }
        max_slope * (self.grid.dim() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// One ensemble member: a sampling weight and the raw candidate dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub weight: f64,
    pub dynamics: DynamicsSpec,
}

/// Weighted candidate ensemble with a truth anchor and an exposure field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub truth_anchor: DynamicsSpec,
    pub candidates: Vec<Candidate>,
    pub exposure: ExposureField,
}

impl BeliefState {
    pub fn new(
        truth_anchor: DynamicsSpec,
        candidates: Vec<Candidate>,
        exposure: ExposureField,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Invalid {
                what: "belief",
                detail: "candidate ensemble must be nonempty".into(),
            });
        }
        let sum: f64 = candidates.iter().map(|c| c.weight).sum();
        if candidates.iter().any(|c| c.weight < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::WeightsNotNormalized { sum });
        }
        let n = truth_anchor.state_dim;
        let m = truth_anchor.control_dim;
        for c in &candidates {
            if c.dynamics.state_dim != n || c.dynamics.control_dim != m {
                return Err(Error::DimensionMismatch {
                    what: "candidate dynamics",
                    expected: n,
                    got: c.dynamics.state_dim,
                });
            }
        }
        if exposure.grid.dim() != n {
            return Err(Error::DimensionMismatch {
                what: "exposure grid",
                expected: n,
                got: exposure.grid.dim(),
            });
        }
        Ok(BeliefState {
            truth_anchor,
            candidates,
            exposure,
        })
    }

    /// Degenerate belief whose only candidate is the truth anchor itself.
    pub fn certain(truth: DynamicsSpec, exposure: ExposureField) -> Result<Self> {
        let candidate = Candidate {
            weight: 1.0,
            dynamics: truth.clone(),
        };
        Self::new(truth, vec![candidate], exposure)
    }

    pub fn state_dim(&self) -> usize {
        self.truth_anchor.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.truth_anchor.control_dim
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// `exp(-exposure(x))`; 1 where nothing has been observed, 0 (to double
    /// precision) at capped exposure.
    pub fn attenuation(&self, x: &[f64]) -> Result<f64> {
        Ok((-self.exposure.value_at(x)?).exp())
    }

    /// Evaluates the morphed candidate `i` at `(x, u)`. At the attenuation
    /// endpoints the raw candidate and the anchor are returned exactly, so
    /// unvisited regions are preserved bit for bit.
    pub fn posterior_evaluate(&self, index: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if index >= self.candidates.len() {
            return Err(Error::CandidateIndex {
                index,
                len: self.candidates.len(),
            });
        }
        let alpha = self.attenuation(x)?;
        let raw = self.candidates[index].dynamics.evaluate(x, u)?;
        if alpha == 1.0 {
            return Ok(raw);
        }
        let anchor = self.truth_anchor.evaluate(x, u)?;
        if alpha == 0.0 {
            return Ok(anchor);
        }
        Ok(anchor
            .iter()
            .zip(&raw)
            .map(|(f, g)| f + alpha * (g - f))
            .collect())
    }

    /// Borrowing view of the morphed candidate `i` as a vector field.
    pub fn effective_candidate(&self, index: usize) -> Result<EffectiveCandidate<'_>> {
        if index >= self.candidates.len() {
            return Err(Error::CandidateIndex {
                index,
                len: self.candidates.len(),
            });
        }
        Ok(EffectiveCandidate {
            belief: self,
            index,
        })
    }

    /// Velocity bound for a morphed candidate: it is a pointwise convex
    /// combination of the anchor and the raw candidate.
    pub fn effective_velocity_bound(&self, index: usize) -> f64 {
        self.truth_anchor
            .bound_c
            .max(self.candidates[index].dynamics.bound_c)
    }

    /// State Lipschitz bound for a morphed candidate. The attenuation factor
    /// contributes through its own (exposure-dependent) Lipschitz constant.
    pub fn effective_state_lipschitz(&self, index: usize) -> f64 {
        let base = self
            .truth_anchor
            .state_lipschitz()
            .max(self.candidates[index].dynamics.state_lipschitz());
        let spread = self.truth_anchor.bound_c + self.candidates[index].dynamics.bound_c;
        base + spread * self.exposure.attenuation_lipschitz()
    }

    /// Largest state Lipschitz constant over anchor and raw candidates,
    /// computed from coefficients. This is the `L` of the discount condition.
    pub fn ensemble_state_lipschitz(&self) -> f64 {
        self.candidates
            .iter()
            .map(|c| c.dynamics.state_lipschitz())
            .fold(self.truth_anchor.state_lipschitz(), f64::max)
    }

    pub fn ensemble_velocity_bound(&self) -> f64 {
        self.candidates
            .iter()
            .map(|c| c.dynamics.bound_c)
            .fold(self.truth_anchor.bound_c, f64::max)
    }

    /// Returns a copy of the belief with exposure accumulated along the
    /// realized trajectory segment.
    pub fn accumulate_exposure(
        &self,
        segment: &Trajectory,
        kernel: &LearningKernel,
    ) -> Result<BeliefState> {
        let mut next = self.clone();
        next.accumulate_exposure_in_place(segment, kernel)?;
        Ok(next)
    }

    pub fn accumulate_exposure_in_place(
        &mut self,
        segment: &Trajectory,
        kernel: &LearningKernel,
    ) -> Result<()> {
        self.exposure.accumulate(segment, kernel)
    }

    /// Samples `(x, u)` in `B(center, eps) x ubox` and reports the largest
    /// deviation of any morphed candidate from the anchor. `holds` means the
    /// deviation stayed within `tol`, i.e. the belief has effectively learned
    /// the dynamics on that ball.
    pub fn check_absolute_local_learning(
        &self,
        ubox: &Rect,
        center: &[f64],
        eps: f64,
        tol: f64,
        n_samples: usize,
        seed: u64,
    ) -> Result<LocalLearningReport> {
        if center.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "center",
                expected: self.state_dim(),
                got: center.len(),
            });
        }
        if !(eps > 0.0) {
            return Err(Error::NotPositive {
                what: "eps",
                value: eps,
            });
        }
        let bounds = &self.exposure.grid.bounds;
        for k in 0..center.len() {
            if center[k] - eps < bounds.lower[k] || center[k] + eps > bounds.upper[k] {
                return Err(Error::Precondition(format!(
                    "ball B({center:?}, {eps}) pokes outside the exposure grid box"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max_deviation: f64 = 0.0;
        for _ in 0..n_samples {
            let x = vecmath::sample_ball(center, eps, &mut rng);
            let u = ubox.sample(&mut rng);
            let anchor = self.truth_anchor.evaluate(&x, &u)?;
            for i in 0..self.candidates.len() {
                let h = self.posterior_evaluate(i, &x, &u)?;
                max_deviation = max_deviation.max(vecmath::dist2(&h, &anchor));
            }
        }
        Ok(LocalLearningReport {
            holds: max_deviation <= tol,
            max_deviation,
            tol,
            n_samples,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLearningReport {
    pub holds: bool,
    pub max_deviation: f64,
    pub tol: f64,
    pub n_samples: usize,
}

/// Morphed candidate viewed as a vector field. Outside the exposure grid the
/// attenuation lookup clamps to the nearest boundary value; rollouts enforce
/// the working domain separately.
pub struct EffectiveCandidate<'a> {
    belief: &'a BeliefState,
    index: usize,
}

impl VectorField for EffectiveCandidate<'_> {
    fn state_dim(&self) -> usize {
        self.belief.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.belief.control_dim()
    }

    fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let exposure = self
            .belief
            .exposure
            .grid
            .interpolate_clamped(&self.belief.exposure.values, x);
        let alpha = (-exposure).exp();
        let raw = &self.belief.candidates[self.index].dynamics;
        if alpha == 1.0 {
            raw.eval_into(x, u, out);
            return;
        }
        self.belief.truth_anchor.eval_into(x, u, out);
        if alpha == 0.0 {
            return;
        }
        let n = out.len();
        let mut g = vec![0.0; n];
        raw.eval_into(x, u, &mut g);
        for i in 0..n {
            out[i] += alpha * (g[i] - out[i]);
        }
    }
}

/// Time-ordered belief snapshots with nondecreasing exposure, as produced by
/// a learning run or constructed synthetically for regularity probes.
#[derive(Debug, Clone)]
pub struct BeliefPath {
    pub snapshots: Vec<(f64, BeliefState)>,
}

impl BeliefPath {
    pub fn new(snapshots: Vec<(f64, BeliefState)>) -> Result<Self> {
        if snapshots.len() < 2 {
            return Err(Error::Invalid {
                what: "belief path",
                detail: "need at least two snapshots".into(),
            });
        }
        for w in snapshots.windows(2) {
            let (t0, b0) = &w[0];
            let (t1, b1) = &w[1];
            if !(t1 > t0) {
                return Err(Error::Invalid {
                    what: "belief path",
                    detail: "snapshot times must be strictly increasing".into(),
                });
            }
            if b0.n_candidates() != b1.n_candidates() {
                return Err(Error::Invalid {
                    what: "belief path",
                    detail: "ensemble size must not change along a path".into(),
                });
            }
            if b0.exposure.values.len() != b1.exposure.values.len() {
                return Err(Error::Invalid {
                    what: "belief path",
                    detail: "exposure grids must match along a path".into(),
                });
            }
            for (a, b) in b0.exposure.values.iter().zip(&b1.exposure.values) {
                if b < a {
                    return Err(Error::Invalid {
                        what: "belief path",
                        detail: format!(
                            "exposure must be nondecreasing in time (dropped from {a} to {b})"
                        ),
                    });
                }
            }
        }
        Ok(BeliefPath { snapshots })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownwardJump {
    pub from_time: f64,
    pub to_time: f64,
    pub drop: f64,
}

/// Empirical time-regularity of `t -> sum_i w_i c(h_i(t))` along a belief
/// path: largest difference quotient and any drops exceeding `jump_tol`
/// (candidate violations of lower semicontinuity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRegularityReport {
    pub values: Vec<(f64, f64)>,
    pub max_quotient: f64,
    pub downward_jumps: Vec<DownwardJump>,
}

pub fn pi_time_regularity_probe(
    path: &BeliefPath,
    c: &dyn Fn(&EffectiveCandidate<'_>) -> f64,
    jump_tol: f64,
) -> Result<TimeRegularityReport> {
    let mut values = Vec::with_capacity(path.snapshots.len());
    for (t, belief) in &path.snapshots {
        let mut m = 0.0;
        for i in 0..belief.n_candidates() {
            let view = belief.effective_candidate(i)?;
            m += belief.candidates[i].weight * c(&view);
        }
        if !m.is_finite() {
            return Err(Error::NotFinite {
                what: "probe functional value",
            });
        }
        values.push((*t, m));
    }
    let mut max_quotient: f64 = 0.0;
    let mut downward_jumps = Vec::new();
    for w in values.windows(2) {
        let (t0, m0) = w[0];
        let (t1, m1) = w[1];
        max_quotient = max_quotient.max((m1 - m0).abs() / (t1 - t0));
        if m1 - m0 < -jump_tol {
            downward_jumps.push(DownwardJump {
                from_time: t0,
                to_time: t1,
                drop: m0 - m1,
            });
        }
    }
    Ok(TimeRegularityReport {
        values,
        max_quotient,
        downward_jumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_opt::ControlSignal;
    use crate::dynamics::integrate;

    fn unit_grid(lo: f64, hi: f64, nodes: usize) -> GridSpec {
        GridSpec::new(Rect::new(vec![lo], vec![hi]).unwrap(), vec![nodes]).unwrap()
    }

    fn sweep_trajectory(step: f64) -> Trajectory {
        // x(s) = s on [0, 1]
        let f = DynamicsSpec::scalar(0.0, 1.0, 0.0, 1.0, 1.0);
        let ctrl = ControlSignal::new(1.0, vec![vec![1.0]]).unwrap();
        integrate(&f, &[0.0], &ctrl, 1.0, step).unwrap()
    }

    #[test]
    fn kernel_matches_its_closed_form() {
        let k = LearningKernel::new(1.0).unwrap();
        assert!((k.eval(0.5) - 1.0).abs() < 1e-15);
        assert!((k.eval(0.25) - 3.0).abs() < 1e-15);
        assert_eq!(k.eval(1.0), 0.0);
        assert_eq!(k.eval(2.0), 0.0);
        assert_eq!(k.eval(0.0), KERNEL_CLAMP);
    }

    #[test]
    fn exposure_trapezoid_matches_a_fine_grid_oracle() {
        let kernel = LearningKernel::new(1.0).unwrap();
        let grid = unit_grid(0.0, 2.5, 26);
        let mut coarse = ExposureField::new(grid.clone(), EXPOSURE_CAP).unwrap();
        coarse.accumulate(&sweep_trajectory(0.02), &kernel).unwrap();
        let mut fine = ExposureField::new(grid.clone(), EXPOSURE_CAP).unwrap();
        fine.accumulate(&sweep_trajectory(0.002), &kernel).unwrap();
        for i in 0..grid.node_count() {
            let (a, b) = (coarse.values[i], fine.values[i]);
            let node = grid.node_point_flat(i)[0];
            if a >= EXPOSURE_CAP && b >= EXPOSURE_CAP {
                continue;
            }
            if node > 2.0 + 1e-9 {
                // Strictly beyond the reachable support: bitwise untouched.
                assert_eq!(a, 0.0);
                assert_eq!(b, 0.0);
            } else if node > 2.0 - 1e-9 {
                // Distance to the swept segment equals the support radius up
                // to integrator rounding, so at most a subnormal sliver.
                assert!(a.abs() <= 1e-15 && b.abs() <= 1e-15);
            } else {
                assert!(
                    (a - b).abs() <= 0.01 * b.abs().max(1e-12),
                    "node {node}: coarse {a} vs fine {b}"
                );
            }
        }
        // Nodes on the swept segment saturate, nodes beyond the support do
        // not move, nodes in between accumulate something positive.
        assert!(coarse.values[5] >= EXPOSURE_CAP);
        assert!(coarse.values[15] > 0.0 && coarse.values[15] < EXPOSURE_CAP);
        assert_eq!(coarse.values[22], 0.0);
    }

    #[test]
    fn stationary_dwell_saturates_the_node() {
        let kernel = LearningKernel::new(1.0).unwrap();
        let grid = unit_grid(-1.0, 1.0, 21);
        let mut field = ExposureField::new(grid, EXPOSURE_CAP).unwrap();
        let n = 800;
        let traj = Trajectory {
            step: 0.001,
            times: (0..=n).map(|k| k as f64 * 0.001).collect(),
            states: vec![vec![0.0]; n + 1],
        };
        field.accumulate(&traj, &kernel).unwrap();
        let center = field.value_at(&[0.0]).unwrap();
        assert_eq!(center, EXPOSURE_CAP);
        assert!((-center).exp() <= 1e-300);
    }

    #[test]
    fn exposure_never_decreases_and_respects_the_cap() {
        let kernel = LearningKernel::new(1.0).unwrap();
        let grid = unit_grid(0.0, 2.0, 21);
        let mut field = ExposureField::new(grid.clone(), EXPOSURE_CAP).unwrap();
        field.accumulate(&sweep_trajectory(0.05), &kernel).unwrap();
        let before = field.values.clone();
        field.accumulate(&sweep_trajectory(0.05), &kernel).unwrap();
        for (a, b) in before.iter().zip(&field.values) {
            assert!(b >= a);
            assert!(*b <= EXPOSURE_CAP);
        }
    }

    #[test]
    fn out_of_grid_trajectories_are_rejected() {
        let kernel = LearningKernel::new(1.0).unwrap();
        let grid = unit_grid(0.0, 0.5, 6);
        let mut field = ExposureField::new(grid, EXPOSURE_CAP).unwrap();
        let err = field.accumulate(&sweep_trajectory(0.1), &kernel).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
    }

    fn two_candidate_belief(exposure: ExposureField) -> BeliefState {
        let truth = DynamicsSpec::scalar(0.0, 1.0, 0.0, 1.0, 1.0);
        let flipped = DynamicsSpec::scalar(0.0, -1.0, 0.0, 1.0, 1.0);
        BeliefState::new(
            truth.clone(),
            vec![
                Candidate {
                    weight: 0.5,
                    dynamics: truth,
                },
                Candidate {
                    weight: 0.5,
                    dynamics: flipped,
                },
            ],
            exposure,
        )
        .unwrap()
    }

    #[test]
    fn posterior_is_exact_at_both_attenuation_endpoints() {
        let grid = unit_grid(-1.0, 1.0, 11);
        let fresh = ExposureField::new(grid.clone(), EXPOSURE_CAP).unwrap();
        let belief = two_candidate_belief(fresh);
        // Zero exposure: the raw candidate, bitwise.
        let h = belief.posterior_evaluate(1, &[0.3], &[0.7]).unwrap();
        assert_eq!(h, belief.candidates[1].dynamics.evaluate(&[0.3], &[0.7]).unwrap());
        assert_eq!(belief.attenuation(&[0.3]).unwrap(), 1.0);

        // Capped exposure: the anchor, to double-precision underflow.
        let saturated = ExposureField::from_values(
            grid.clone(),
            vec![EXPOSURE_CAP; grid.node_count()],
            EXPOSURE_CAP,
        )
        .unwrap();
        let belief = two_candidate_belief(saturated);
        let h = belief.posterior_evaluate(1, &[0.3], &[0.7]).unwrap();
        let anchor = belief.truth_anchor.evaluate(&[0.3], &[0.7]).unwrap();
        assert!((h[0] - anchor[0]).abs() <= 1e-300);
    }

    #[test]
    fn intermediate_exposure_blends_between_candidate_and_anchor() {
        let grid = unit_grid(-1.0, 1.0, 11);
        let field = ExposureField::from_values(
            grid.clone(),
            vec![2.0f64.ln(); grid.node_count()],
            EXPOSURE_CAP,
        )
        .unwrap();
        let belief = two_candidate_belief(field);
        // alpha = 1/2, candidate -u vs anchor u at u = 1: 1 + 0.5 * (-2) = 0.
        let h = belief.posterior_evaluate(1, &[0.0], &[1.0]).unwrap();
        assert!(h[0].abs() < 1e-14);
    }

    #[test]
    fn weights_are_preserved_by_exposure_accumulation() {
        let kernel = LearningKernel::new(1.0).unwrap();
        let grid = unit_grid(-1.0, 2.0, 31);
        let belief = two_candidate_belief(ExposureField::new(grid, EXPOSURE_CAP).unwrap());
        let next = belief
            .accumulate_exposure(&sweep_trajectory(0.05), &kernel)
            .unwrap();
        for (a, b) in belief.candidates.iter().zip(&next.candidates) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.dynamics, b.dynamics);
        }
        assert!(next.exposure.summary().max > 0.0);
    }

    #[test]
    fn local_learning_fails_fresh_and_holds_after_saturation() {
        let ubox = Rect::new(vec![-1.0], vec![1.0]).unwrap();
        let grid = unit_grid(-1.0, 1.0, 21);
        let fresh = two_candidate_belief(ExposureField::new(grid.clone(), EXPOSURE_CAP).unwrap());
        let report = fresh
            .check_absolute_local_learning(&ubox, &[0.0], 0.25, 0.1, 400, 3)
            .unwrap();
        assert!(!report.holds);
        assert!(report.max_deviation > 1.0);

        let saturated = two_candidate_belief(
            ExposureField::from_values(
                grid.clone(),
                vec![EXPOSURE_CAP; grid.node_count()],
                EXPOSURE_CAP,
            )
            .unwrap(),
        );
        let min_exposure = saturated.exposure.min_over_rect(
            &Rect::new(vec![-0.25], vec![0.25]).unwrap(),
        );
        let tol = 2.0 * saturated.ensemble_velocity_bound() * (-min_exposure).exp();
        let report = saturated
            .check_absolute_local_learning(&ubox, &[0.0], 0.25, tol, 400, 3)
            .unwrap();
        assert!(report.holds, "{report:?}");
    }

    #[test]
    fn learning_ball_must_stay_inside_the_grid() {
        let grid = unit_grid(-1.0, 1.0, 11);
        let belief = two_candidate_belief(ExposureField::new(grid, EXPOSURE_CAP).unwrap());
        let ubox = Rect::new(vec![-1.0], vec![1.0]).unwrap();
        let err = belief
            .check_absolute_local_learning(&ubox, &[0.9], 0.5, 0.1, 10, 1)
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn belief_paths_reject_decreasing_exposure() {
        let grid = unit_grid(-1.0, 1.0, 11);
        let high = ExposureField::from_values(grid.clone(), vec![1.0; 11], EXPOSURE_CAP).unwrap();
        let low = ExposureField::new(grid, EXPOSURE_CAP).unwrap();
        let b0 = two_candidate_belief(high);
        let b1 = two_candidate_belief(low);
        let err = BeliefPath::new(vec![(0.0, b0), (1.0, b1)]).unwrap_err();
        assert!(matches!(err, Error::Invalid { .. }));
    }

    #[test]
    fn probe_reports_no_downward_jump_for_an_upward_exposure_jump() {
        let grid = unit_grid(-1.0, 1.0, 11);
        let fresh = two_candidate_belief(ExposureField::new(grid.clone(), EXPOSURE_CAP).unwrap());
        let learned = two_candidate_belief(
            ExposureField::from_values(grid.clone(), vec![3.0; 11], EXPOSURE_CAP).unwrap(),
        );
        let path = BeliefPath::new(vec![
            (0.0, fresh.clone()),
            (0.5, fresh),
            (0.5 + 1e-6, learned.clone()),
            (1.0, learned),
        ])
        .unwrap();
        // Functional decreasing in the attenuation: 1 - |h(0.5, 1) - f(0.5, 1)|.
        let c = |h: &EffectiveCandidate<'_>| {
            let anchor = [1.0];
            let v = h.eval(&[0.5], &[1.0]);
            1.0 - (v[0] - anchor[0]).abs()
        };
        let report = pi_time_regularity_probe(&path, &c, 1e-9).unwrap();
        assert!(report.downward_jumps.is_empty(), "{report:?}");
        assert!(report.max_quotient > 0.0);
    }

    #[test]
    fn probe_is_flat_for_a_static_path() {
        let grid = unit_grid(-1.0, 1.0, 11);
        let belief = two_candidate_belief(ExposureField::new(grid, EXPOSURE_CAP).unwrap());
        let path = BeliefPath::new(vec![(0.0, belief.clone()), (1.0, belief)]).unwrap();
        let c = |h: &EffectiveCandidate<'_>| h.eval(&[0.2], &[0.4])[0];
        let report = pi_time_regularity_probe(&path, &c, 1e-9).unwrap();
        assert_eq!(report.max_quotient, 0.0);
        assert!(report.downward_jumps.is_empty());
    }

    #[test]
    fn effective_candidate_regularity_bounds_are_certifiable() {
        let kernel = LearningKernel::new(1.0).unwrap();
        let grid = unit_grid(-1.0, 2.0, 31);
        let mut belief = two_candidate_belief(ExposureField::new(grid, EXPOSURE_CAP).unwrap());
        belief
            .accumulate_exposure_in_place(&sweep_trajectory(0.05), &kernel)
            .unwrap();
        let domain = Rect::new(vec![-1.0], vec![2.0]).unwrap();
        let ubox = Rect::new(vec![-1.0], vec![1.0]).unwrap();
        let view = belief.effective_candidate(1).unwrap();
        let cert = crate::dynamics::certify_h1(
            &view,
            belief.effective_state_lipschitz(1) + 1.0,
            belief.effective_velocity_bound(1),
            &domain,
            &ubox,
            4_000,
            17,
        )
        .unwrap();
        assert!(cert.passed, "{cert:?}");
    }
}
