//! Piecewise-constant and relaxed controls, a derivative-free simplex
//! optimizer, and the open-loop planners built on the belief-averaged cost.
//!
//! Controls are step functions on a uniform segment grid. Relaxed controls
//! carry a finite atom list per segment; chattering realizes them as rapidly
//! switching ordinary controls with time shares matching the atom weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefState;
use crate::cost::{
    expected_cost, expected_cost_relaxed, truncation_horizon, CostSpec, DiscountSpec,
};
use crate::error::{Error, Result};
use crate::vecmath::{self, mix_seed, ControlBox};

const WEIGHT_TOL: f64 = 1e-9;

/// Piecewise-constant control: `values[k]` applies on
/// `[k * segment_duration, (k+1) * segment_duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub segment_duration: f64,
    pub values: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn new(segment_duration: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if !(segment_duration > 0.0 && segment_duration.is_finite()) {
            return Err(Error::NotPositive {
                what: "segment_duration",
                value: segment_duration,
            });
        }
        if values.is_empty() {
            return Err(Error::Invalid {
                what: "control signal",
                detail: "needs at least one segment".into(),
            });
        }
        let m = values[0].len();
        if m == 0 {
            return Err(Error::Invalid {
                what: "control signal",
                detail: "control dimension must be positive".into(),
            });
        }
        for (k, v) in values.iter().enumerate() {
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "control segment",
                    expected: m,
                    got: v.len(),
                });
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::Invalid {
                    what: "control signal",
                    detail: format!("segment {k} has a non-finite entry"),
                });
            }
        }
        Ok(ControlSignal {
            segment_duration,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn horizon(&self) -> f64 {
        self.segment_duration * self.values.len() as f64
    }

    /// Control in force at time `t`, clamped to the first and last segment
    /// outside the nominal horizon.
    pub fn value_at(&self, t: f64) -> &[f64] {
        let idx = if t <= 0.0 {
            0
        } else {
            ((t / self.segment_duration) as usize).min(self.values.len() - 1)
        };
        &self.values[idx]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAtom {
    pub weight: f64,
    pub point: Vec<f64>,
}

/// Relaxed control: each segment carries a probability-weighted atom list
/// over control points. Ordinary controls embed as single-atom lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedControl {
    pub segment_duration: f64,
    pub segments: Vec<Vec<ControlAtom>>,
}

impl RelaxedControl {
    pub fn new(segment_duration: f64, segments: Vec<Vec<ControlAtom>>) -> Result<Self> {
        if !(segment_duration > 0.0 && segment_duration.is_finite()) {
            return Err(Error::NotPositive {
                what: "segment_duration",
                value: segment_duration,
            });
        }
        if segments.is_empty() {
            return Err(Error::Invalid {
                what: "relaxed control",
                detail: "needs at least one segment".into(),
            });
        }
        let m = segments
            .first()
            .and_then(|s| s.first())
            .map(|a| a.point.len())
            .unwrap_or(0);
        if m == 0 {
            return Err(Error::Invalid {
                what: "relaxed control",
                detail: "first segment has no atoms or zero-dimensional points".into(),
            });
        }
        for (k, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(Error::Invalid {
                    what: "relaxed control",
                    detail: format!("segment {k} has no atoms"),
                });
            }
            let mut sum = 0.0;
            for atom in seg {
                if atom.point.len() != m {
                    return Err(Error::DimensionMismatch {
                        what: "relaxed control atom",
                        expected: m,
                        got: atom.point.len(),
                    });
                }
                if atom.point.iter().any(|c| !c.is_finite()) || !atom.weight.is_finite() {
                    return Err(Error::Invalid {
                        what: "relaxed control",
                        detail: format!("segment {k} has a non-finite atom"),
                    });
                }
                if atom.weight < 0.0 {
                    return Err(Error::Invalid {
                        what: "relaxed control",
                        detail: format!("segment {k} has a negative atom weight"),
                    });
                }
                sum += atom.weight;
            }
            if (sum - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::WeightsNotNormalized { sum });
            }
        }
        Ok(RelaxedControl {
            segment_duration,
            segments,
        })
    }

    /// Embeds an ordinary control as the relaxed control with one unit-mass
    /// atom per segment.
    pub fn from_signal(signal: &ControlSignal) -> Self {
        RelaxedControl {
            segment_duration: signal.segment_duration,
            segments: signal
                .values
                .iter()
                .map(|v| {
                    vec![ControlAtom {
                        weight: 1.0,
                        point: v.clone(),
                    }]
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.segments[0][0].point.len()
    }

    pub fn horizon(&self) -> f64 {
        self.segment_duration * self.segments.len() as f64
    }

    pub fn atoms_at(&self, t: f64) -> &[ControlAtom] {
        let idx = if t <= 0.0 {
            0
        } else {
            ((t / self.segment_duration) as usize).min(self.segments.len() - 1)
        };
        &self.segments[idx]
    }

    /// Re-grids onto `n_segments` segments of `segment_duration` each,
    /// sampling the atom list in force at every new segment midpoint. Used
    /// to align segment boundaries with a chatter period.
    pub fn resample(&self, segment_duration: f64, n_segments: usize) -> Result<RelaxedControl> {
        if n_segments == 0 {
            return Err(Error::NotPositive {
                what: "n_segments",
                value: 0.0,
            });
        }
        let segments = (0..n_segments)
            .map(|j| {
                self.atoms_at((j as f64 + 0.5) * segment_duration)
                    .to_vec()
            })
            .collect();
        RelaxedControl::new(segment_duration, segments)
    }
}

/// Realizes a relaxed control as an ordinary rapidly switching control with
/// `slots_per_period` switching slots per chatter period. Within each period
/// the atoms receive slot counts tracking their weights by error diffusion,
/// so the occupation-time mismatch per atom is at most one slot.
pub fn chatter_with_slots(
    ctrl: &RelaxedControl,
    period: f64,
    slots_per_period: usize,
) -> Result<ControlSignal> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::NotPositive {
            what: "chatter period",
            value: period,
        });
    }
    if slots_per_period == 0 {
        return Err(Error::NotPositive {
            what: "slots_per_period",
            value: 0.0,
        });
    }
    let periods_per_segment =
        vecmath::exact_steps("chatter period per segment", ctrl.segment_duration, period)?;
    let dt = period / slots_per_period as f64;
    let n_slots = periods_per_segment * slots_per_period;
    let mut values = Vec::with_capacity(ctrl.segments.len() * n_slots);
    for seg in &ctrl.segments {
        let mut credit = vec![0.0f64; seg.len()];
        for _ in 0..n_slots {
            for (c, atom) in credit.iter_mut().zip(seg) {
                *c += atom.weight;
            }
            let mut pick = 0;
            for (j, c) in credit.iter().enumerate().skip(1) {
                if *c > credit[pick] {
                    pick = j;
                }
            }
            credit[pick] -= 1.0;
            values.push(seg[pick].point.clone());
        }
    }
    ControlSignal::new(dt, values)
}

/// [`chatter_with_slots`] with ten slots per period.
pub fn chatter(ctrl: &RelaxedControl, period: f64) -> Result<ControlSignal> {
    chatter_with_slots(ctrl, period, 10)
}

pub mod nelder_mead {
    //! Downhill simplex minimization. Deterministic for a fixed starting
    //! point: no randomness, stable ordering, total float comparisons.

    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct NmOptions {
        pub max_iters: usize,
        /// Convergence threshold on the simplex diameter (max-norm).
        pub x_tol: f64,
        /// Initial simplex offset per coordinate.
        pub init_step: f64,
    }

    impl Default for NmOptions {
        fn default() -> Self {
            NmOptions {
                max_iters: 400,
                x_tol: 1e-6,
                init_step: 0.25,
            }
        }
    }

    #[derive(Debug, Clone)]
    pub struct NmResult {
        pub x: Vec<f64>,
        pub value: f64,
        pub iters: usize,
        pub converged: bool,
    }

    fn diameter(simplex: &[(f64, Vec<f64>)]) -> f64 {
        let best = &simplex[0].1;
        simplex[1..]
            .iter()
            .map(|(_, x)| {
                x.iter()
                    .zip(best)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn minimize<F: FnMut(&[f64]) -> f64>(
        mut f: F,
        x0: &[f64],
        opts: &NmOptions,
    ) -> NmResult {
        let n = x0.len();
        assert!(n > 0, "cannot minimize over an empty vector");
        let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
        simplex.push((f(x0), x0.to_vec()));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += opts.init_step;
            simplex.push((f(&x), x));
        }
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut iters = 0;
        let mut converged = false;
        while iters < opts.max_iters {
            if diameter(&simplex) < opts.x_tol {
                converged = true;
                break;
            }
            iters += 1;

            let mut centroid = vec![0.0; n];
            for (_, x) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v;
                }
            }
            for c in centroid.iter_mut() {
                *c /= n as f64;
            }
            let worst = simplex[n].1.clone();
            let f_best = simplex[0].0;
            let f_second_worst = simplex[n - 1].0;
            let f_worst = simplex[n].0;

            let point_along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let reflected = point_along(1.0);
            let f_reflected = f(&reflected);
            let replacement = if f_reflected < f_best {
                let expanded = point_along(2.0);
                let f_expanded = f(&expanded);
                if f_expanded < f_reflected {
                    Some((f_expanded, expanded))
                } else {
                    Some((f_reflected, reflected))
                }
            } else if f_reflected < f_second_worst {
                Some((f_reflected, reflected))
            } else if f_reflected < f_worst {
                let outside = point_along(0.5);
                let f_outside = f(&outside);
                if f_outside <= f_reflected {
                    Some((f_outside, outside))
                } else {
                    None
                }
            } else {
                let inside = point_along(-0.5);
                let f_inside = f(&inside);
                if f_inside < f_worst {
                    Some((f_inside, inside))
                } else {
                    None
                }
            };

            match replacement {
                Some(entry) => {
                    simplex[n] = entry;
                }
                None => {
                    let best = simplex[0].1.clone();
                    for (fv, x) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&best) {
                            *xi = bi + 0.5 * (*xi - bi);
                        }
                        *fv = f(x);
                    }
                }
            }
            simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        }

        let (value, x) = simplex.swap_remove(0);
        NmResult {
            x,
            value,
            iters,
            converged,
        }
    }

}

use nelder_mead::{minimize, NmOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSettings {
    /// Number of piecewise-constant decision segments over the truncated
    /// horizon.
    pub n_segments: usize,
    /// Minimum number of simplex restarts (structured starts may add more).
    pub restarts: usize,
    pub seed: u64,
    pub integrator_step: f64,
    pub tail_tol: f64,
    pub nm: NmOptions,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        PlannerSettings {
            n_segments: 6,
            restarts: 6,
            seed: 0,
            integrator_step: 0.01,
            tail_tol: 1e-4,
            nm: NmOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub control: ControlSignal,
    pub value: f64,
    pub tail_bound: f64,
    /// Simplex iterations spent by the winning restart.
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSettings {
    pub base: PlannerSettings,
    pub atoms_per_segment: usize,
}

impl Default for RelaxedSettings {
    fn default() -> Self {
        RelaxedSettings {
            base: PlannerSettings::default(),
            atoms_per_segment: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxedPlanResult {
    pub control: RelaxedControl,
    pub value: f64,
    pub tail_bound: f64,
    pub open_loop: PlanResult,
    pub iterations: usize,
    pub converged: bool,
}

/// Segment duration: the smallest integer number of integrator steps per
/// segment whose total horizon covers the truncation horizon.
fn planned_segment_duration(d: &DiscountSpec, cost: &CostSpec, s: &PlannerSettings) -> f64 {
    let t = truncation_horizon(d, cost.sup_bound, s.tail_tol);
    let per_seg = t / (s.n_segments as f64 * s.integrator_step);
    let steps = (per_seg - vecmath::DIVISIBILITY_TOL).ceil().max(1.0);
    steps * s.integrator_step
}

fn theta_to_signal(
    theta: &[f64],
    n_segments: usize,
    sd: f64,
    ubox: &ControlBox,
) -> ControlSignal {
    let m = ubox.dim();
    let values = (0..n_segments)
        .map(|j| ubox.project(&theta[j * m..(j + 1) * m]))
        .collect();
    ControlSignal::new(sd, values).expect("projected controls are always valid")
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let peak = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn theta_to_relaxed(
    theta: &[f64],
    n_segments: usize,
    atoms: usize,
    sd: f64,
    ubox: &ControlBox,
) -> RelaxedControl {
    let m = ubox.dim();
    let stride = atoms * (m + 1);
    let segments = (0..n_segments)
        .map(|j| {
            let chunk = &theta[j * stride..(j + 1) * stride];
            let weights = softmax(&chunk[atoms * m..]);
            (0..atoms)
                .map(|a| ControlAtom {
                    weight: weights[a],
                    point: ubox.project(&chunk[a * m..(a + 1) * m]),
                })
                .collect()
        })
        .collect();
    RelaxedControl::new(sd, segments).expect("softmax weights are always normalized")
}

/// Maps evaluation failures to finite penalties so the simplex can recover:
/// leaving the working domain is penalized above any admissible value, with
/// later exit times penalized less to pull iterates back inside.
fn penalized(result: Result<f64>, sup_over_lambda: f64, horizon: f64) -> f64 {
    match result {
        Ok(v) => v,
        Err(Error::OutOfDomain { time, .. }) => {
            sup_over_lambda * (2.0 + (horizon - time).max(0.0) / horizon.max(f64::MIN_POSITIVE))
        }
        Err(_) => f64::INFINITY,
    }
}

fn check_planner_inputs(
    belief: &BeliefState,
    x0: &[f64],
    ubox: &ControlBox,
    s: &PlannerSettings,
) -> Result<()> {
    if x0.len() != belief.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: belief.state_dim(),
            got: x0.len(),
        });
    }
    if ubox.dim() != belief.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control box",
            expected: belief.control_dim(),
            got: ubox.dim(),
        });
    }
    if s.n_segments == 0 {
        return Err(Error::NotPositive {
            what: "n_segments",
            value: 0.0,
        });
    }
    if !belief.exposure.grid.bounds.contains(x0) {
        return Err(Error::OutOfDomain {
            time: 0.0,
            detail: format!("initial state {x0:?} outside the working domain"),
        });
    }
    Ok(())
}

fn pick_best(results: Vec<(usize, nelder_mead::NmResult)>) -> Vec<(usize, nelder_mead::NmResult)> {
    let mut sorted = results;
    // Stable order: by value, then by restart index.
    sorted.sort_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)));
    sorted
}

/// Open-loop planning: minimizes the belief-averaged discounted cost over
/// piecewise-constant controls in the control box by multi-start simplex
/// search. The returned value is a fresh evaluation of the winning control,
/// not the penalized search objective.
pub fn optimize_open_loop(
    belief: &BeliefState,
    x0: &[f64],
    cost: &CostSpec,
    d: &DiscountSpec,
    ubox: &ControlBox,
    settings: &PlannerSettings,
    warm_start: Option<&ControlSignal>,
) -> Result<PlanResult> {
    check_planner_inputs(belief, x0, ubox, settings)?;
    let m = ubox.dim();
    let n_segments = settings.n_segments;
    let sd = planned_segment_duration(d, cost, settings);
    let horizon = sd * n_segments as f64;
    let min_width = ubox
        .widths()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(1e-6);
    let nm_opts = NmOptions {
        init_step: settings.nm.init_step * min_width,
        ..settings.nm.clone()
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm_start {
        if w.dim() != m {
            return Err(Error::DimensionMismatch {
                what: "warm start control",
                expected: m,
                got: w.dim(),
            });
        }
        let mut theta = Vec::with_capacity(n_segments * m);
        for j in 0..n_segments {
            let t_mid = (j as f64 + 0.5) * sd;
            theta.extend(ubox.project(w.value_at(t_mid)));
        }
        starts.push(theta);
    }
    starts.push(ubox.project(&vec![0.0; m]).repeat(n_segments));
    let corner_patterns = (1usize << m.min(2)).min(4);
    for mask in 0..corner_patterns {
        starts.push(ubox.corner(mask).repeat(n_segments));
    }
    let mut next_random = 0u64;
    while starts.len() < settings.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(settings.seed, next_random));
        next_random += 1;
        let mut theta = Vec::with_capacity(n_segments * m);
        for _ in 0..n_segments {
            theta.extend(ubox.sample(&mut rng));
        }
        starts.push(theta);
    }

    // Surface genuine construction errors before the search swallows them.
    let probe = theta_to_signal(&starts[0], n_segments, sd, ubox);
    match expected_cost(belief, x0, &probe, cost, d, settings.tail_tol, settings.integrator_step) {
        Ok(_) | Err(Error::OutOfDomain { .. }) => {}
        Err(e) => return Err(e),
    }

    let sup_over_lambda = cost.sup_bound / d.lambda;
    let results: Vec<(usize, nelder_mead::NmResult)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, start)| {
            let obj = |theta: &[f64]| {
                let ctrl = theta_to_signal(theta, n_segments, sd, ubox);
                penalized(
                    expected_cost(
                        belief,
                        x0,
                        &ctrl,
                        cost,
                        d,
                        settings.tail_tol,
                        settings.integrator_step,
                    )
                    .map(|cv| cv.value),
                    sup_over_lambda,
                    horizon,
                )
            };
            (idx, minimize(obj, start, &nm_opts))
        })
        .collect();
    let restarts_used = results.len();

    let mut last_err = None;
    for (_, nm) in pick_best(results) {
        let control = theta_to_signal(&nm.x, n_segments, sd, ubox);
        match expected_cost(
            belief,
            x0,
            &control,
            cost,
            d,
            settings.tail_tol,
            settings.integrator_step,
        ) {
            Ok(cv) => {
                return Ok(PlanResult {
                    control,
                    value: cv.value,
                    tail_bound: cv.tail_bound,
                    iterations: nm.iters,
                    restarts_used,
                    converged: nm.converged,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one restart always runs"))
}

/// Relaxed planning over weighted atom lists per segment. One restart is
/// seeded with the open-loop optimum collapsed onto identical atoms, so the
/// relaxed value never exceeds the open-loop value beyond float noise.
pub fn optimize_relaxed(
    belief: &BeliefState,
    x0: &[f64],
    cost: &CostSpec,
    d: &DiscountSpec,
    ubox: &ControlBox,
    settings: &RelaxedSettings,
) -> Result<RelaxedPlanResult> {
    check_planner_inputs(belief, x0, ubox, &settings.base)?;
    let atoms = settings.atoms_per_segment;
    if atoms == 0 {
        return Err(Error::NotPositive {
            what: "atoms_per_segment",
            value: 0.0,
        });
    }
    let open_loop = optimize_open_loop(belief, x0, cost, d, ubox, &settings.base, None)?;

    let m = ubox.dim();
    let n_segments = settings.base.n_segments;
    let sd = open_loop.control.segment_duration;
    let horizon = sd * n_segments as f64;
    let stride = atoms * (m + 1);
    let min_width = ubox
        .widths()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(1e-6);
    let nm_opts = NmOptions {
        init_step: settings.base.nm.init_step * min_width,
        ..settings.base.nm.clone()
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    // Collapsed open-loop seed: all atoms at the open-loop control, flat
    // weights.
    let mut seed_theta = Vec::with_capacity(n_segments * stride);
    for v in &open_loop.control.values {
        for _ in 0..atoms {
            seed_theta.extend_from_slice(v);
        }
        seed_theta.extend(std::iter::repeat(0.0).take(atoms));
    }
    starts.push(seed_theta);
    // Spread seed: atoms at alternating box corners, flat weights.
    let mut spread = Vec::with_capacity(n_segments * stride);
    let corner_patterns = 1usize << m.min(4);
    for _ in 0..n_segments {
        for a in 0..atoms {
            spread.extend(ubox.corner(a % corner_patterns));
        }
        spread.extend(std::iter::repeat(0.0).take(atoms));
    }
    starts.push(spread);
    let mut next_random = 0u64;
    while starts.len() < settings.base.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(settings.base.seed, 1_000 + next_random));
        next_random += 1;
        let mut theta = Vec::with_capacity(n_segments * stride);
        for _ in 0..n_segments {
            for _ in 0..atoms {
                theta.extend(ubox.sample(&mut rng));
            }
            for _ in 0..atoms {
                theta.push(rand::Rng::gen_range(&mut rng, -1.0..1.0));
            }
        }
        starts.push(theta);
    }

    let sup_over_lambda = cost.sup_bound / d.lambda;
    let results: Vec<(usize, nelder_mead::NmResult)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, start)| {
            let obj = |theta: &[f64]| {
                let ctrl = theta_to_relaxed(theta, n_segments, atoms, sd, ubox);
                penalized(
                    expected_cost_relaxed(
                        belief,
                        x0,
                        &ctrl,
                        cost,
                        d,
                        settings.base.tail_tol,
                        settings.base.integrator_step,
                    )
                    .map(|cv| cv.value),
                    sup_over_lambda,
                    horizon,
                )
            };
            (idx, minimize(obj, start, &nm_opts))
        })
        .collect();

    let mut last_err = None;
    for (_, nm) in pick_best(results) {
        let control = theta_to_relaxed(&nm.x, n_segments, atoms, sd, ubox);
        match expected_cost_relaxed(
            belief,
            x0,
            &control,
            cost,
            d,
            settings.base.tail_tol,
            settings.base.integrator_step,
        ) {
            Ok(cv) => {
                return Ok(RelaxedPlanResult {
                    control,
                    value: cv.value,
                    tail_bound: cv.tail_bound,
                    iterations: nm.iters,
                    converged: nm.converged,
                    open_loop,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one restart always runs"))
}
