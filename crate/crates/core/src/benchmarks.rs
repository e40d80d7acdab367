//! Shared fixtures: closed-form benchmarks, scenario builders, and seeded
//! generators for the randomized checks used by the verification suite and
//! the integration tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::belief::{
    BeliefPath, BeliefState, Candidate, ExposureField, LearningKernel, EXPOSURE_CAP,
};
use crate::control_opt::{ControlSignal, PlannerSettings};
use crate::cost::{CostSpec, DiscountSpec, StageCost};
use crate::dynamics::DynamicsSpec;
use crate::error::Result;
use crate::grid::GridSpec;
use crate::simulator::Scenario;
use crate::vecmath::{mix_seed, Rect};

pub fn line_grid(lo: f64, hi: f64, nodes: usize) -> GridSpec {
    GridSpec::new(Rect::new(vec![lo], vec![hi]).unwrap(), vec![nodes]).unwrap()
}

pub fn square_grid(lo: f64, hi: f64, nodes: usize) -> GridSpec {
    GridSpec::new(
        Rect::new(vec![lo, lo], vec![hi, hi]).unwrap(),
        vec![nodes, nodes],
    )
    .unwrap()
}

/// A scenario whose stationary value is known in closed form.
#[derive(Debug, Clone)]
pub struct ClosedFormBenchmark {
    pub field: DynamicsSpec,
    pub cost: CostSpec,
    pub discount: DiscountSpec,
    pub control_box: Rect,
    pub value_grid: GridSpec,
}

/// 1-D benchmark: `x' = u` on `[-1, 1]`, `J = |x|`, unit discount. The
/// optimal policy steers to the origin at full speed, giving
/// `V(x) = |x| + exp(-|x|) - 1`.
pub fn benchmark_1d(value_nodes: usize) -> ClosedFormBenchmark {
    ClosedFormBenchmark {
        field: DynamicsSpec::pure_control(1, 1.0),
        cost: CostSpec::new(StageCost::AbsState { weights: vec![1.0] }, 1.0, 2.0).unwrap(),
        discount: DiscountSpec::new(1.0).unwrap(),
        control_box: Rect::new(vec![-1.0], vec![1.0]).unwrap(),
        value_grid: line_grid(-2.0, 2.0, value_nodes),
    }
}

pub fn benchmark_value_1d(x: f64) -> f64 {
    x.abs() + (-x.abs()).exp() - 1.0
}

/// 2-D benchmark with independent axes: `x_i' = u_i`, `J = |x_1| + |x_2|`.
/// The value separates into a sum of 1-D values.
pub fn benchmark_2d(value_nodes: usize) -> ClosedFormBenchmark {
    ClosedFormBenchmark {
        field: DynamicsSpec::pure_control(2, std::f64::consts::SQRT_2),
        cost: CostSpec::new(
            StageCost::AbsState {
                weights: vec![1.0, 1.0],
            },
            std::f64::consts::SQRT_2,
            4.0,
        )
        .unwrap(),
        discount: DiscountSpec::new(1.0).unwrap(),
        control_box: Rect::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        value_grid: square_grid(-2.0, 2.0, value_nodes),
    }
}

pub fn benchmark_value_2d(x: &[f64]) -> f64 {
    x.iter().map(|&c| benchmark_value_1d(c)).sum()
}

fn drift_candidates() -> Vec<Candidate> {
    vec![
        Candidate {
            weight: 0.5,
            dynamics: DynamicsSpec::scalar(0.0, 1.0, 0.3, 1.0, 1.3),
        },
        Candidate {
            weight: 0.5,
            dynamics: DynamicsSpec::scalar(0.0, 1.0, -0.3, 1.0, 1.3),
        },
    ]
}

/// Closed-loop learning scenario with two drifted candidates around the
/// anchor `x' = u`. The stage cost `x^2 + 1` keeps the value bounded away
/// from zero so relative comparisons against the certain-dynamics value
/// stay meaningful. The planner tail tolerance keeps the truncated horizon
/// short enough that one control can hold both unlearned candidates inside
/// the working domain; they separate at rate 0.6 per time unit, so the
/// horizon must stay below 4.0 / 0.6.
pub fn two_candidate_scenario(seed: u64) -> Scenario {
    Scenario {
        belief: BeliefState::new(
            DynamicsSpec::pure_control(1, 1.0),
            drift_candidates(),
            ExposureField::new(line_grid(-2.0, 2.0, 41), EXPOSURE_CAP).unwrap(),
        )
        .unwrap(),
        cost: CostSpec::new(
            StageCost::Quadratic {
                state_weights: vec![1.0],
                control_weights: vec![0.0],
                offset: 1.0,
            },
            4.0,
            5.0,
        )
        .unwrap(),
        discount: DiscountSpec::new(1.5).unwrap(),
        control_box: Rect::new(vec![-1.0], vec![1.0]).unwrap(),
        kernel: LearningKernel::new(0.5).unwrap(),
        x0: vec![1.0],
        episode_duration: 0.5,
        n_episodes: 8,
        integrator_step: 0.01,
        planner: PlannerSettings {
            n_segments: 5,
            restarts: 5,
            seed: 0,
            integrator_step: 0.02,
            tail_tol: 1e-3,
            ..PlannerSettings::default()
        },
        seed,
    }
}

/// Certain-belief setup whose stage cost `x^2 + (1 - u^2)` rewards extreme
/// controls while penalizing displacement: the relaxed optimum mixes the
/// box endpoints and no ordinary control matches it.
#[derive(Debug, Clone)]
pub struct RelaxedBenchmark {
    pub belief: BeliefState,
    pub cost: CostSpec,
    pub discount: DiscountSpec,
    pub control_box: Rect,
}

pub fn relaxed_benchmark() -> RelaxedBenchmark {
    RelaxedBenchmark {
        belief: BeliefState::certain(
            DynamicsSpec::pure_control(1, 1.0),
            ExposureField::new(line_grid(-2.0, 2.0, 41), EXPOSURE_CAP).unwrap(),
        )
        .unwrap(),
        cost: CostSpec::new(
            StageCost::Quadratic {
                state_weights: vec![1.0],
                control_weights: vec![-1.0],
                offset: 1.0,
            },
            4.0,
            5.0,
        )
        .unwrap(),
        discount: DiscountSpec::new(1.5).unwrap(),
        control_box: Rect::new(vec![-1.0], vec![1.0]).unwrap(),
    }
}

/// Random contractive setup with a constant stage cost, whose discounted
/// total is exactly `level / lambda`.
#[derive(Debug, Clone)]
pub struct ConstantCostCase {
    pub belief: BeliefState,
    pub cost: CostSpec,
    pub discount: DiscountSpec,
    pub x0: Vec<f64>,
    pub level: f64,
}

pub fn constant_cost_case(seed: u64) -> ConstantCostCase {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5ca1e));
    let n = if rng.gen_bool(0.5) { 1 } else { 2 };
    let a = rng.gen_range(0.5..1.5);
    let b = rng.gen_range(0.5..1.0);
    let state_matrix: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { -a } else { 0.0 }).collect())
        .collect();
    let control_matrix: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { b } else { 0.0 }).collect())
        .collect();
    let sqrt_n = (n as f64).sqrt();
    // Velocity over the [-2, 2]^n box with unit controls.
    let bound_c = (2.0 * a + b) * sqrt_n + 0.1;
    let lipschitz_l = (a.max(b)) * sqrt_n + 0.1;
    let field = DynamicsSpec::affine(state_matrix, control_matrix, vec![0.0; n], lipschitz_l, bound_c)
        .unwrap();
    let grid = GridSpec::new(
        Rect::new(vec![-2.0; n], vec![2.0; n]).unwrap(),
        vec![21; n],
    )
    .unwrap();
    let level = rng.gen_range(0.5..3.0);
    let lambda = rng.gen_range(0.5..1.5);
    let x0 = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ConstantCostCase {
        belief: BeliefState::certain(field, ExposureField::new(grid, EXPOSURE_CAP).unwrap())
            .unwrap(),
        cost: CostSpec::new(StageCost::Constant { value: level }, 0.0, level).unwrap(),
        discount: DiscountSpec::new(lambda).unwrap(),
        x0,
        level,
    }
}

pub fn zero_control(dim: usize, horizon: f64) -> ControlSignal {
    ControlSignal::new(horizon, vec![vec![0.0; dim]]).unwrap()
}

/// Control built from a sampled sine pattern: bounded amplitude and bounded
/// partial sums, so trajectories of `x' = u`-like fields stay in a known
/// tube without rejection sampling.
pub fn bounded_excursion_control(
    seed: u64,
    amplitude: f64,
    n_segments: usize,
    segment_duration: f64,
) -> ControlSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x51e5));
    let period = rng.gen_range(3..6) as f64;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let scale = rng.gen_range(0.3..1.0) * amplitude;
    let values = (0..n_segments)
        .map(|j| vec![scale * (std::f64::consts::TAU * j as f64 / period + phase).sin()])
        .collect();
    ControlSignal::new(segment_duration, values).unwrap()
}

/// A pair of affine fields a uniform distance `delta` apart, with a shared
/// state Lipschitz constant, plus a control and start for comparing their
/// trajectories.
#[derive(Debug, Clone)]
pub struct DriftPair {
    pub base: DynamicsSpec,
    pub shifted: DynamicsSpec,
    pub delta: f64,
    pub state_lipschitz: f64,
    pub x0: Vec<f64>,
    pub control: ControlSignal,
    pub horizon: f64,
}

pub fn drift_pair(seed: u64) -> DriftPair {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x9a9));
    let n = if rng.gen_bool(0.5) { 1 } else { 2 };
    let state_matrix: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect())
        .collect();
    let control_matrix: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let delta = rng.gen_range(0.01..0.1);
    let mut direction: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = direction.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-9);
    for c in direction.iter_mut() {
        *c *= delta / norm;
    }
    let frob: f64 = state_matrix
        .iter()
        .flatten()
        .map(|c| c * c)
        .sum::<f64>()
        .sqrt();
    let declared_l = frob + (n as f64).sqrt() + 0.5;
    let declared_c = 10.0;
    let base = DynamicsSpec::affine(
        state_matrix.clone(),
        control_matrix.clone(),
        vec![0.0; n],
        declared_l,
        declared_c,
    )
    .unwrap();
    let shifted = DynamicsSpec::affine(
        state_matrix,
        control_matrix,
        direction,
        declared_l,
        declared_c,
    )
    .unwrap();
    let state_lipschitz = base.state_lipschitz();
    let x0 = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let n_segments = 8;
    let segment_duration = 0.125;
    let mut values = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        values.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    DriftPair {
        base,
        shifted,
        delta,
        state_lipschitz,
        x0,
        control: ControlSignal::new(segment_duration, values).unwrap(),
        horizon: 1.0,
    }
}

fn tent_exposure(grid: &GridSpec, level: f64) -> Vec<f64> {
    (0..grid.node_count())
        .map(|i| {
            let x = grid.node_point_flat(i)[0];
            (level * (1.0 - x.abs()).max(0.0)).clamp(0.0, EXPOSURE_CAP)
        })
        .collect()
}

/// Belief over the two drifted candidates whose exposure is a tent function
/// of height `level` centred at the origin. Scaling `level` moves the belief
/// smoothly, which makes cost functionals differentiable in the scale.
pub fn graded_exposure_belief(level: f64) -> BeliefState {
    let grid = line_grid(-2.0, 2.0, 41);
    let values = tent_exposure(&grid, level);
    BeliefState::new(
        DynamicsSpec::pure_control(1, 1.0),
        drift_candidates(),
        ExposureField::from_values(grid, values, EXPOSURE_CAP).unwrap(),
    )
    .unwrap()
}

/// Exposure level as a function of path time: a smooth ramp.
pub fn smooth_exposure_level(t: f64) -> f64 {
    2.0 * t
}

/// Exposure level with an upward jump at `t_jump`.
pub fn jump_exposure_level(t: f64, t_jump: f64) -> f64 {
    if t < t_jump {
        0.4
    } else {
        3.0
    }
}

/// Belief path sampling `graded_exposure_belief` along a level schedule.
pub fn exposure_path(times: &[f64], level_of: impl Fn(f64) -> f64) -> Result<BeliefPath> {
    BeliefPath::new(
        times
            .iter()
            .map(|&t| (t, graded_exposure_belief(level_of(t))))
            .collect(),
    )
}
