//! Parametric dynamics families, trajectory integration, and hypothesis
//! certification.
//!
//! A dynamics spec describes a velocity field `f(x, u)` that is affine in the
//! state and control, optionally perturbed by radial Gaussian bumps. The
//! family is expressive enough for every bundled scenario while keeping
//! Lipschitz and boundedness constants computable from the coefficients.

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control_opt::{ControlSignal, RelaxedControl};
use crate::error::{Error, Result};
use crate::vecmath::{self, Rect};

/// Anything that can serve as a velocity field. Implemented by
/// [`DynamicsSpec`] and by belief-weighted effective candidates.
pub trait VectorField: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Writes `f(x, u)` into `out`. Callers guarantee the slice lengths.
    fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.eval_into(x, u, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsKind {
    Affine,
    AffineBumps,
}

/// Radial perturbation `gain * exp(-|x - center|^2 / width^2) * direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialBump {
    pub gain: f64,
    pub center: Vec<f64>,
    pub width: f64,
    pub direction: Vec<f64>,
}

/// Velocity field `f(x, u) = A x + B u + c + sum of radial bumps`, together
/// with its declared regularity constants: `lipschitz_l` bounds the joint
/// difference quotient `|f(x,u) - f(x',u')| / (|x-x'| + |u-u'|)` and
/// `bound_c` bounds `|f|` on the working domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub kind: DynamicsKind,
    pub state_dim: usize,
    pub control_dim: usize,
    /// Row-major `state_dim x state_dim` matrix applied to the state.
    pub state_matrix: Vec<Vec<f64>>,
    /// Row-major `state_dim x control_dim` matrix applied to the control.
    pub control_matrix: Vec<Vec<f64>>,
    /// Constant drift term.
    pub drift: Vec<f64>,
    #[serde(default)]
    pub bumps: Vec<RadialBump>,
    pub lipschitz_l: f64,
    pub bound_c: f64,
}

impl DynamicsSpec {
    pub fn new(
        kind: DynamicsKind,
        state_matrix: Vec<Vec<f64>>,
        control_matrix: Vec<Vec<f64>>,
        drift: Vec<f64>,
        bumps: Vec<RadialBump>,
        lipschitz_l: f64,
        bound_c: f64,
    ) -> Result<Self> {
        let n = drift.len();
        if n == 0 {
            return Err(Error::Invalid {
                what: "dynamics",
                detail: "state dimension must be at least 1".into(),
            });
        }
        if state_matrix.len() != n {
            return Err(Error::DimensionMismatch {
                what: "state matrix rows",
                expected: n,
                got: state_matrix.len(),
            });
        }
        for row in &state_matrix {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "state matrix columns",
                    expected: n,
                    got: row.len(),
                });
            }
        }
        if control_matrix.len() != n {
            return Err(Error::DimensionMismatch {
                what: "control matrix rows",
                expected: n,
                got: control_matrix.len(),
            });
        }
        let m = control_matrix[0].len();
        if m == 0 {
            return Err(Error::Invalid {
                what: "dynamics",
                detail: "control dimension must be at least 1".into(),
            });
        }
        for row in &control_matrix {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "control matrix columns",
                    expected: m,
                    got: row.len(),
                });
            }
        }
        for bump in &bumps {
            if bump.center.len() != n || bump.direction.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "bump vectors",
                    expected: n,
                    got: bump.center.len().max(bump.direction.len()),
                });
            }
            if !(bump.width > 0.0) {
                return Err(Error::NotPositive {
                    what: "bump width",
                    value: bump.width,
                });
            }
        }
        if kind == DynamicsKind::Affine && !bumps.is_empty() {
            return Err(Error::Invalid {
                what: "dynamics",
                detail: "affine kind must not carry bumps".into(),
            });
        }
        if !(lipschitz_l >= 0.0 && lipschitz_l.is_finite()) {
            return Err(Error::NotFinite {
                what: "lipschitz_l",
            });
        }
        if !(bound_c > 0.0 && bound_c.is_finite()) {
            return Err(Error::NotPositive {
                what: "bound_c",
                value: bound_c,
            });
        }
        Ok(DynamicsSpec {
            kind,
            state_dim: n,
            control_dim: m,
            state_matrix,
            control_matrix,
            drift,
            bumps,
            lipschitz_l,
            bound_c,
        })
    }

    pub fn affine(
        state_matrix: Vec<Vec<f64>>,
        control_matrix: Vec<Vec<f64>>,
        drift: Vec<f64>,
        lipschitz_l: f64,
        bound_c: f64,
    ) -> Result<Self> {
        Self::new(
            DynamicsKind::Affine,
            state_matrix,
            control_matrix,
            drift,
            Vec::new(),
            lipschitz_l,
            bound_c,
        )
    }

    /// 1-D convenience: `f(x, u) = a x + b u + c`.
    pub fn scalar(a: f64, b: f64, c: f64, lipschitz_l: f64, bound_c: f64) -> Self {
        Self::affine(vec![vec![a]], vec![vec![b]], vec![c], lipschitz_l, bound_c)
            .expect("scalar spec is well formed")
    }

    /// `f(x, u) = u` in `n` dimensions.
    pub fn pure_control(n: usize, bound_c: f64) -> Self {
        let eye: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::affine(vec![vec![0.0; n]; n], eye, vec![0.0; n], 1.0, bound_c)
            .expect("pure control spec is well formed")
    }

    /// Checked evaluation with dimension diagnostics.
    pub fn evaluate(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim,
                got: x.len(),
            });
        }
        if u.len() != self.control_dim {
            return Err(Error::DimensionMismatch {
                what: "control",
                expected: self.control_dim,
                got: u.len(),
            });
        }
        Ok(self.eval(x, u))
    }

    /// Upper bound on the Lipschitz constant of `x -> f(x, u)`, computed from
    /// the coefficients: Frobenius norm of the state matrix plus the peak
    /// gradient of each bump. This is the constant that enters trajectory
    /// comparison bounds and the discount-rate condition.
    pub fn state_lipschitz(&self) -> f64 {
        let frob: f64 = self
            .state_matrix
            .iter()
            .flatten()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt();
        let bump_part: f64 = self
            .bumps
            .iter()
            .map(|b| {
                // sup_r |d/dr exp(-r^2/w^2)| = sqrt(2/e) / w
                b.gain.abs() * vecmath::norm2(&b.direction) * (2.0f64 / 1.0f64.exp()).sqrt()
                    / b.width
            })
            .sum();
        frob + bump_part
    }
}

impl VectorField for DynamicsSpec {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.state_dim);
        debug_assert_eq!(u.len(), self.control_dim);
        for i in 0..self.state_dim {
            let mut v = self.drift[i];
            let row = &self.state_matrix[i];
            for j in 0..self.state_dim {
                v += row[j] * x[j];
            }
            let row = &self.control_matrix[i];
            for j in 0..self.control_dim {
                v += row[j] * u[j];
            }
            out[i] = v;
        }
        for bump in &self.bumps {
            let r2: f64 = x
                .iter()
                .zip(&bump.center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let scale = bump.gain * (-r2 / (bump.width * bump.width)).exp();
            if scale != 0.0 {
                for i in 0..self.state_dim {
                    out[i] += scale * bump.direction[i];
                }
            }
        }
    }
}

/// Uniformly sampled solution path: `states[k]` is the state at
/// `times[k] = k * step` (plus the starting offset, if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0)
    }
}

fn rk4_step<V>(velocity: &mut V, x: &mut Vec<f64>, h: f64, buffers: &mut Rk4Buffers)
where
    V: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let Rk4Buffers { k1, k2, k3, k4, tmp } = buffers;
    velocity(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    velocity(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    velocity(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    velocity(tmp, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

struct Rk4Buffers {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Buffers {
    fn new(n: usize) -> Self {
        Rk4Buffers {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn check_integration_inputs(
    f: &dyn VectorField,
    x0: &[f64],
    ctrl_dim: usize,
    ctrl_horizon: f64,
    segment_duration: f64,
    horizon: f64,
    step: f64,
) -> Result<usize> {
    if x0.len() != f.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: f.state_dim(),
            got: x0.len(),
        });
    }
    if ctrl_dim != f.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control values",
            expected: f.control_dim(),
            got: ctrl_dim,
        });
    }
    let n_steps = vecmath::exact_steps("horizon", horizon, step)?;
    vecmath::exact_steps("control segment length", segment_duration, step)?;
    if ctrl_horizon < horizon - vecmath::DIVISIBILITY_TOL * horizon.max(1.0) {
        return Err(Error::ControlTooShort {
            have: ctrl_horizon,
            need: horizon,
        });
    }
    Ok(n_steps)
}

/// Integrates `dx/dt = f(x, u(t))` with fixed-step RK4 under a
/// piecewise-constant control. The step must divide both the horizon and the
/// control segment length so that no step straddles a control discontinuity.
pub fn integrate(
    f: &dyn VectorField,
    x0: &[f64],
    ctrl: &ControlSignal,
    horizon: f64,
    step: f64,
) -> Result<Trajectory> {
    let n_steps = check_integration_inputs(
        f,
        x0,
        ctrl.dim(),
        ctrl.horizon(),
        ctrl.segment_duration,
        horizon,
        step,
    )?;
    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(x.clone());
    let mut buffers = Rk4Buffers::new(x.len());
    for k in 0..n_steps {
        let t = k as f64 * step;
        // Sampling at the interval midpoint keeps the segment lookup robust
        // to rounding at aligned boundaries.
        let u = ctrl.value_at(t + 0.5 * step);
        rk4_step(&mut |x, out| f.eval_into(x, u, out), &mut x, step, &mut buffers);
        times.push((k + 1) as f64 * step);
        states.push(x.clone());
    }
    Ok(Trajectory { step, times, states })
}

/// Integrates the relaxed dynamics `dx/dt = sum_j w_j f(x, u_j(t))` for a
/// measure-valued control with finitely many atoms per segment.
pub fn integrate_relaxed(
    f: &dyn VectorField,
    x0: &[f64],
    ctrl: &RelaxedControl,
    horizon: f64,
    step: f64,
) -> Result<Trajectory> {
    let n_steps = check_integration_inputs(
        f,
        x0,
        ctrl.dim(),
        ctrl.horizon(),
        ctrl.segment_duration,
        horizon,
        step,
    )?;
    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(x.clone());
    let n = x.len();
    let mut buffers = Rk4Buffers::new(n);
    let mut atom_out = vec![0.0; n];
    for k in 0..n_steps {
        let t = k as f64 * step;
        let atoms = ctrl.atoms_at(t + 0.5 * step);
        let mut velocity = |x: &[f64], out: &mut [f64]| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for atom in atoms {
                f.eval_into(x, &atom.point, &mut atom_out);
                for i in 0..n {
                    out[i] += atom.weight * atom_out[i];
                }
            }
        };
        rk4_step(&mut velocity, &mut x, step, &mut buffers);
        times.push((k + 1) as f64 * step);
        states.push(x.clone());
    }
    Ok(Trajectory { step, times, states })
}

/// Worst-case divergence `delta * t * exp(l * t)` between trajectories of two
/// fields whose pointwise distance is at most `delta`, both `l`-Lipschitz in
/// the state.
pub fn gronwall_gap_bound(l: f64, delta: f64, t: f64) -> f64 {
    debug_assert!(l >= 0.0 && delta >= 0.0 && t >= 0.0);
    delta * t * (l * t).exp()
}

/// Sampling certificate for the regularity hypotheses: velocity bound and
/// joint Lipschitz quotient over a working domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Certificate {
    pub declared_l: f64,
    pub declared_c: f64,
    pub max_velocity: f64,
    pub max_quotient: f64,
    pub n_samples: usize,
    pub passed: bool,
}

/// Samples velocity magnitudes and difference quotients of `f` over
/// `domain x ubox` and checks them against the declared constants. Half of
/// the quotient pairs are local perturbations, which sharpens the estimate
/// near the supremum.
pub fn certify_h1(
    f: &dyn VectorField,
    declared_l: f64,
    declared_c: f64,
    domain: &Rect,
    ubox: &Rect,
    n_samples: usize,
    seed: u64,
) -> Result<H1Certificate> {
    if domain.dim() != f.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "domain",
            expected: f.state_dim(),
            got: domain.dim(),
        });
    }
    if ubox.dim() != f.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control box",
            expected: f.control_dim(),
            got: ubox.dim(),
        });
    }
    if n_samples == 0 {
        return Err(Error::NotPositive {
            what: "n_samples",
            value: 0.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_velocity: f64 = 0.0;
    let mut max_quotient: f64 = 0.0;
    let local_scale = 1e-3;
    let dom_widths = domain.widths();
    let u_widths = ubox.widths();
    for i in 0..n_samples {
        let x = domain.sample(&mut rng);
        let u = ubox.sample(&mut rng);
        let v = f.eval(&x, &u);
        max_velocity = max_velocity.max(vecmath::norm2(&v));

        let (x2, u2) = if i % 2 == 0 {
            (domain.sample(&mut rng), ubox.sample(&mut rng))
        } else {
            let x2: Vec<f64> = x
                .iter()
                .zip(&dom_widths)
                .map(|(xi, w)| xi + rng.gen_range(-1.0..=1.0) * local_scale * w)
                .collect();
            let u2: Vec<f64> = u
                .iter()
                .zip(&u_widths)
                .map(|(ui, w)| ui + rng.gen_range(-1.0..=1.0) * local_scale * w)
                .collect();
            (domain.project(&x2), ubox.project(&u2))
        };
        let denom = vecmath::dist2(&x, &x2) + vecmath::dist2(&u, &u2);
        if denom > 1e-12 {
            let v2 = f.eval(&x2, &u2);
            let num = vecmath::dist2(&v, &v2);
            max_quotient = max_quotient.max(num / denom);
        }
    }
    let passed = max_velocity <= declared_c && max_quotient <= declared_l;
    Ok(H1Certificate {
        declared_l,
        declared_c,
        max_velocity,
        max_quotient,
        n_samples,
        passed,
    })
}
