//! Discounted stationary value computation on a state grid, plus the
//! differential checks built on top of it: equation residuals, kink
//! detection, and the short-horizon optimality principle.
//!
//! The solver is a semi-Lagrangian fixed-point iteration: one sweep replaces
//! the value at each node by the best one-step cost `dt J + exp(-lambda dt)
//! V(foot)`, with controls drawn from a finite grid and feet interpolated
//! multilinearly (clamped at the box edge). Each sweep is a contraction with
//! factor `exp(-lambda dt)`, which also converts the final sweep residual
//! into a rigorous sup-norm error bound for the discrete fixed point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control_opt::nelder_mead::{minimize, NmOptions};
use crate::control_opt::ControlSignal;
use crate::cost::{discounted_segment_cost, CostSpec, DiscountSpec};
use crate::dynamics::{integrate, VectorField};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::vecmath::{mix_seed, Rect};

/// Finite set of control points used by the value sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    pub points: Vec<Vec<f64>>,
}

impl ControlGrid {
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid {
                what: "control grid",
                detail: "needs at least one point".into(),
            });
        }
        let m = points[0].len();
        for p in &points {
            if p.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "control grid point",
                    expected: m,
                    got: p.len(),
                });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NotFinite {
                    what: "control grid point",
                });
            }
        }
        Ok(ControlGrid { points })
    }

    /// Tensor grid over the control box with `per_axis[a]` points along axis
    /// `a`; a single point collapses to the axis midpoint.
    pub fn uniform(ubox: &Rect, per_axis: &[usize]) -> Result<Self> {
        if per_axis.len() != ubox.dim() {
            return Err(Error::DimensionMismatch {
                what: "control grid axes",
                expected: ubox.dim(),
                got: per_axis.len(),
            });
        }
        if per_axis.iter().any(|&k| k == 0) {
            return Err(Error::NotPositive {
                what: "control grid points per axis",
                value: 0.0,
            });
        }
        let dim = ubox.dim();
        let mut points = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            let p: Vec<f64> = (0..dim)
                .map(|a| {
                    let k = per_axis[a];
                    if k == 1 {
                        0.5 * (ubox.lower[a] + ubox.upper[a])
                    } else {
                        ubox.lower[a]
                            + idx[a] as f64 * (ubox.upper[a] - ubox.lower[a]) / (k - 1) as f64
                    }
                })
                .collect();
            points.push(p);
            let mut axis = dim;
            loop {
                if axis == 0 {
                    return ControlGrid::from_points(points);
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < per_axis[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbSettings {
    /// Semi-Lagrangian time step.
    pub dt: f64,
    pub max_sweeps: usize,
    /// Target sup-norm distance to the discrete fixed point.
    pub tol: f64,
    /// Hard cap on grid size; sweeps over larger grids are refused rather
    /// than ground through.
    pub node_cap: usize,
}

impl Default for HjbSettings {
    fn default() -> Self {
        HjbSettings {
            dt: 0.01,
            max_sweeps: 20_000,
            tol: 1e-8,
            node_cap: 2_000_000,
        }
    }
}

/// Grid value function produced by [`solve_hjb`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub lambda: f64,
    pub dt: f64,
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub sup_residual: f64,
    pub converged: bool,
    pub residual_history: Vec<f64>,
}

impl ValueField {
    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        self.grid.interpolate(&self.values, x)
    }

    pub fn value_at_clamped(&self, x: &[f64]) -> f64 {
        self.grid.interpolate_clamped(&self.values, x)
    }
}

fn best_one_step(
    field: &dyn VectorField,
    cost: &CostSpec,
    cgrid: &ControlGrid,
    values: &[f64],
    grid: &GridSpec,
    x: &[f64],
    dt: f64,
    kappa: f64,
    velocity: &mut [f64],
    foot: &mut [f64],
) -> f64 {
    let mut best = f64::INFINITY;
    for u in &cgrid.points {
        field.eval_into(x, u, velocity);
        for i in 0..x.len() {
            foot[i] = x[i] + dt * velocity[i];
        }
        let candidate =
            dt * cost.stage.eval(x, u) + kappa * grid.interpolate_clamped(values, foot);
        if candidate < best {
            best = candidate;
        }
    }
    best
}

/// Computes the stationary discounted value of a single (certain) vector
/// field over a state grid. `state_lipschitz` is the growth constant of the
/// field in the state argument; the discount rate must exceed it.
pub fn solve_hjb(
    field: &dyn VectorField,
    state_lipschitz: f64,
    cost: &CostSpec,
    d: &DiscountSpec,
    grid: &GridSpec,
    cgrid: &ControlGrid,
    settings: &HjbSettings,
) -> Result<ValueField> {
    d.validate_against(state_lipschitz)?;
    if grid.dim() != field.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "value grid dimension",
            expected: field.state_dim(),
            got: grid.dim(),
        });
    }
    if cgrid.dim() != field.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control grid dimension",
            expected: field.control_dim(),
            got: cgrid.dim(),
        });
    }
    if grid.node_count() > settings.node_cap {
        return Err(Error::NodeCapExceeded {
            nodes: grid.node_count(),
            cap: settings.node_cap,
        });
    }
    if !(settings.dt > 0.0 && settings.dt.is_finite()) {
        return Err(Error::NotPositive {
            what: "hjb dt",
            value: settings.dt,
        });
    }

    let n = grid.node_count();
    let dim = grid.dim();
    let kappa = (-d.lambda * settings.dt).exp();
    // Contraction converts the sweep residual into a fixed-point error bound:
    // |V_k - V*| <= kappa / (1 - kappa) * |V_k - V_{k-1}|.
    let stop_residual = settings.tol * (1.0 - kappa) / kappa;

    let mut values = vec![0.0f64; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_sweeps {
        iterations += 1;
        let new_values: Vec<f64> = (0..n)
            .into_par_iter()
            .map_init(
                || (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]),
                |(x, velocity, foot), i| {
                    grid.node_point_flat_into(i, x);
                    best_one_step(
                        field, cost, cgrid, &values, grid, x, settings.dt, kappa, velocity,
                        foot,
                    )
                },
            )
            .collect();
        let residual = new_values
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        history.push(residual);
        values = new_values;
        if residual <= stop_residual {
            converged = true;
            break;
        }
    }

    Ok(ValueField {
        grid: grid.clone(),
        values,
        lambda: d.lambda,
        dt: settings.dt,
        iterations,
        sup_residual: history.last().copied().unwrap_or(f64::INFINITY),
        converged,
        residual_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max: f64,
    pub median: f64,
    pub interior_nodes: usize,
    /// Per-node `(flat index, |residual|)` over interior nodes.
    pub residuals: Vec<(usize, f64)>,
}

/// Pointwise residual of the stationary equation
/// `lambda V = min_u [J + grad(V) . f]` at interior nodes, with gradients
/// from central differences. Boundary nodes are skipped because one-sided
/// differences there conflate discretization with boundary truncation.
pub fn hjb_residual(
    vf: &ValueField,
    field: &dyn VectorField,
    cost: &CostSpec,
    cgrid: &ControlGrid,
) -> Result<ResidualReport> {
    let grid = &vf.grid;
    let dim = grid.dim();
    let spacing = grid.spacing();
    let mut residuals = Vec::new();
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let mut velocity = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    'nodes: for flat in 0..grid.node_count() {
        grid.multi_index_into(flat, &mut idx);
        for a in 0..dim {
            if idx[a] == 0 || idx[a] + 1 == grid.nodes_per_axis[a] {
                continue 'nodes;
            }
        }
        grid.node_point_flat_into(flat, &mut x);
        for a in 0..dim {
            let stride = grid.axis_stride(a);
            grad[a] = (vf.values[flat + stride] - vf.values[flat - stride]) / (2.0 * spacing[a]);
        }
        let mut best = f64::INFINITY;
        for u in &cgrid.points {
            field.eval_into(&x, u, &mut velocity);
            let h = cost.stage.eval(&x, u)
                + grad.iter().zip(&velocity).map(|(g, v)| g * v).sum::<f64>();
            if h < best {
                best = h;
            }
        }
        residuals.push((flat, (vf.lambda * vf.values[flat] - best).abs()));
    }
    if residuals.is_empty() {
        return Err(Error::Invalid {
            what: "hjb residual",
            detail: "grid has no interior nodes".into(),
        });
    }
    let mut sorted: Vec<f64> = residuals.iter().map(|&(_, r)| r).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(ResidualReport {
        max: sorted[sorted.len() - 1],
        median: sorted[sorted.len() / 2],
        interior_nodes: residuals.len(),
        residuals,
    })
}

/// Flags interior nodes whose second difference along some axis stands far
/// above the bulk, the grid signature of a gradient discontinuity. Returns
/// flat node indices in increasing order.
pub fn kink_nodes(vf: &ValueField) -> Vec<usize> {
    let grid = &vf.grid;
    let dim = grid.dim();
    let spacing = grid.spacing();
    let mut scores = Vec::new();
    let mut idx = vec![0usize; dim];
    for flat in 0..grid.node_count() {
        grid.multi_index_into(flat, &mut idx);
        let mut score = 0.0f64;
        let mut interior = true;
        for a in 0..dim {
            if idx[a] == 0 || idx[a] + 1 == grid.nodes_per_axis[a] {
                interior = false;
                break;
            }
            let stride = grid.axis_stride(a);
            let d2 = (vf.values[flat + stride] - 2.0 * vf.values[flat]
                + vf.values[flat - stride])
                .abs()
                / (spacing[a] * spacing[a]);
            score = score.max(d2);
        }
        if interior {
            scores.push((flat, score));
        }
    }
    if scores.is_empty() {
        return Vec::new();
    }
    let mut magnitudes: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
    magnitudes.sort_by(f64::total_cmp);
    let median = magnitudes[magnitudes.len() / 2];
    let peak = magnitudes[magnitudes.len() - 1];
    let threshold = 10.0 * median + 1e-6 * peak + 1e-9;
    scores
        .into_iter()
        .filter(|(_, s)| *s > threshold)
        .map(|(flat, _)| flat)
        .collect()
}

/// Longest dwell step that keeps a trajectory with velocity bound
/// `velocity_bound` inside an `eps`-ball of its start.
pub fn max_dwell_time(eps: f64, velocity_bound: f64) -> f64 {
    eps / velocity_bound
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellCheck {
    /// Radius within which the local model is trusted.
    pub eps: f64,
    pub velocity_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppOptions {
    /// Decision segments for the short-horizon control.
    pub inner_segments: usize,
    /// Target integrator step; rounded down to divide the segment evenly.
    pub integrator_step: f64,
    pub restarts: usize,
    pub seed: u64,
    pub nm: NmOptions,
    /// When set, the dwell step is validated against `eps / velocity_bound`.
    pub dwell: Option<DwellCheck>,
}

impl Default for DppOptions {
    fn default() -> Self {
        DppOptions {
            inner_segments: 2,
            integrator_step: 2e-3,
            restarts: 5,
            seed: 0,
            nm: NmOptions::default(),
            dwell: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    pub value_here: f64,
    pub inner_optimum: f64,
    pub residual: f64,
}

/// Short-horizon optimality residual at `x`: the grid value should equal the
/// infimum over controls on `[0, h]` of running cost plus discounted
/// continuation through the grid value at the endpoint. The inner infimum is
/// approximated by multi-start simplex search over piecewise-constant
/// controls.
pub fn dpp_residual(
    vf: &ValueField,
    field: &dyn VectorField,
    cost: &CostSpec,
    d: &DiscountSpec,
    ubox: &Rect,
    x: &[f64],
    h: f64,
    opts: &DppOptions,
) -> Result<DppReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::NotPositive {
            what: "dwell step",
            value: h,
        });
    }
    if opts.inner_segments == 0 {
        return Err(Error::NotPositive {
            what: "inner_segments",
            value: 0.0,
        });
    }
    if let Some(dwell) = &opts.dwell {
        let cap = max_dwell_time(dwell.eps, dwell.velocity_bound);
        if h > cap + 1e-12 {
            return Err(Error::Precondition(format!(
                "dwell step {h} exceeds eps / velocity bound = {cap}"
            )));
        }
    }
    let value_here = vf.value_at(x)?;

    let m = ubox.dim();
    let k = opts.inner_segments;
    let seg_len = h / k as f64;
    let steps_per_seg = (seg_len / opts.integrator_step).ceil().max(1.0);
    let step = seg_len / steps_per_seg;
    let kappa_h = (-d.lambda * h).exp();

    let objective = |theta: &[f64]| -> f64 {
        let values: Vec<Vec<f64>> = (0..k)
            .map(|j| ubox.project(&theta[j * m..(j + 1) * m]))
            .collect();
        let ctrl = ControlSignal::new(seg_len, values).expect("projected controls are valid");
        match integrate(field, x, &ctrl, h, step) {
            Ok(traj) => {
                discounted_segment_cost(&traj, &ctrl, cost, d, 0.0)
                    + kappa_h * vf.value_at_clamped(traj.last_state())
            }
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push(ubox.project(&vec![0.0; m]).repeat(k));
    for mask in 0..(1usize << m.min(2)) {
        starts.push(ubox.corner(mask).repeat(k));
    }
    let mut extra = 0u64;
    while starts.len() < opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, extra));
        extra += 1;
        let mut theta = Vec::with_capacity(k * m);
        for _ in 0..k {
            theta.extend(ubox.sample(&mut rng));
        }
        starts.push(theta);
    }
    let min_width = ubox
        .widths()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(1e-6);
    let nm_opts = NmOptions {
        init_step: opts.nm.init_step * min_width,
        ..opts.nm.clone()
    };
    let inner_optimum = starts
        .par_iter()
        .map(|s| minimize(objective, s, &nm_opts).value)
        .reduce(|| f64::INFINITY, f64::min);

    Ok(DppReport {
        value_here,
        inner_optimum,
        residual: (value_here - inner_optimum).abs(),
    })
}
