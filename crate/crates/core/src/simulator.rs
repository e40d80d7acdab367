//! Closed learning loop: plan with the current belief, execute the plan
//! under the anchor dynamics for one episode, accumulate exposure along the
//! realized path, and replan. Exposure sharpens the belief near visited
//! states, so later plans trust candidate predictions less where the system
//! has already been observed.

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefState, ExposureSummary, LearningKernel};
use crate::control_opt::{optimize_open_loop, ControlSignal, PlannerSettings};
use crate::cost::{discounted_segment_cost, CostSpec, CostValue, DiscountSpec};
use crate::dynamics::{certify_h1, integrate, H1Certificate};
use crate::error::{Error, Result};
use crate::vecmath::{self, mix_seed, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Initial belief; its anchor field is also the executed dynamics.
    pub belief: BeliefState,
    pub cost: CostSpec,
    pub discount: DiscountSpec,
    pub control_box: Rect,
    pub kernel: LearningKernel,
    pub x0: Vec<f64>,
    /// Executed duration per episode before replanning.
    pub episode_duration: f64,
    pub n_episodes: usize,
    pub integrator_step: f64,
    pub planner: PlannerSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioCheck {
    /// Sampled regularity certificates: anchor first, then candidates.
    pub certificates: Vec<H1Certificate>,
    pub ensemble_state_lipschitz: f64,
}

impl Scenario {
    /// Structural and numerical validation: dimensions line up, the episode
    /// tiles the integrator step, the discount dominates the ensemble state
    /// Lipschitz constant, and every declared regularity constant survives a
    /// sampling certification.
    pub fn validate(&self, h1_samples: usize) -> Result<ScenarioCheck> {
        if self.x0.len() != self.belief.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "x0",
                expected: self.belief.state_dim(),
                got: self.x0.len(),
            });
        }
        if self.control_box.dim() != self.belief.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "control box",
                expected: self.belief.control_dim(),
                got: self.control_box.dim(),
            });
        }
        if !self.belief.exposure.grid.bounds.contains(&self.x0) {
            return Err(Error::OutOfDomain {
                time: 0.0,
                detail: format!("x0 {:?} outside the working domain", self.x0),
            });
        }
        if self.n_episodes == 0 {
            return Err(Error::NotPositive {
                what: "n_episodes",
                value: 0.0,
            });
        }
        vecmath::exact_steps(
            "episode duration over integrator step",
            self.episode_duration,
            self.integrator_step,
        )?;
        let ensemble_l = self.belief.ensemble_state_lipschitz();
        self.discount.validate_against(ensemble_l)?;

        let domain = &self.belief.exposure.grid.bounds;
        let mut certificates = Vec::new();
        let fields: Vec<(&str, &crate::dynamics::DynamicsSpec)> =
            std::iter::once(("anchor", &self.belief.truth_anchor))
                .chain(
                    self.belief
                        .candidates
                        .iter()
                        .map(|c| ("candidate", &c.dynamics)),
                )
                .collect();
        for (i, (label, field)) in fields.into_iter().enumerate() {
            let cert = certify_h1(
                field,
                field.lipschitz_l,
                field.bound_c,
                domain,
                &self.control_box,
                h1_samples,
                mix_seed(self.seed, 0xC0FFEE + i as u64),
            )?;
            if !cert.passed {
                return Err(Error::Invalid {
                    what: "regularity certification",
                    detail: format!(
                        "{label} {i} violates its declared constants: observed velocity {:.6} \
                         (declared {:.6}), observed quotient {:.6} (declared {:.6})",
                        cert.max_velocity, cert.declared_c, cert.max_quotient, cert.declared_l
                    ),
                });
            }
            certificates.push(cert);
        }
        Ok(ScenarioCheck {
            certificates,
            ensemble_state_lipschitz: ensemble_l,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub episode: usize,
    pub t_start: f64,
    pub planned_value: f64,
    pub planned_tail: f64,
    pub planner_converged: bool,
    pub control: ControlSignal,
    /// Realized states at integrator nodes, episode-local, both endpoints
    /// included.
    pub states: Vec<Vec<f64>>,
    /// Discounted cost of this episode with the discount anchored at global
    /// time zero.
    pub realized_segment_cost: f64,
    pub exposure: ExposureSummary,
    pub attenuation_at_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningTrace {
    pub steps: Vec<TraceStep>,
    /// Populated when the loop stopped early because the realized state (or
    /// every planner restart) left the working domain.
    pub halted: Option<String>,
    pub final_state: Vec<f64>,
    pub final_belief: BeliefState,
}

/// Runs the learning loop, invoking `on_step` after each completed episode
/// with the step record and the belief as of that episode's end.
pub fn run_learning_loop_with(
    s: &Scenario,
    mut on_step: impl FnMut(&TraceStep, &BeliefState) -> Result<()>,
) -> Result<LearningTrace> {
    let mut belief = s.belief.clone();
    let mut x = s.x0.clone();
    let mut warm: Option<ControlSignal> = None;
    let mut steps = Vec::new();
    let mut halted = None;

    for k in 0..s.n_episodes {
        let planner = PlannerSettings {
            seed: mix_seed(s.seed, k as u64),
            ..s.planner.clone()
        };
        let plan = match optimize_open_loop(
            &belief,
            &x,
            &s.cost,
            &s.discount,
            &s.control_box,
            &planner,
            warm.as_ref(),
        ) {
            Ok(plan) => plan,
            Err(Error::OutOfDomain { time, detail }) => {
                halted = Some(format!(
                    "episode {k}: planning found no control that stays in the working domain \
                     (first exit near t = {time:.6}): {detail}"
                ));
                break;
            }
            Err(e) => return Err(e),
        };

        let traj = integrate(
            &belief.truth_anchor,
            &x,
            &plan.control,
            s.episode_duration,
            s.integrator_step,
        )?;
        if let Err(e) = belief.accumulate_exposure_in_place(&traj, &s.kernel) {
            match e {
                Error::OutOfDomain { time, detail } => {
                    halted = Some(format!(
                        "episode {k}: executed path left the working domain at episode time \
                         {time:.6}: {detail}"
                    ));
                    break;
                }
                other => return Err(other),
            }
        }

        let t_start = k as f64 * s.episode_duration;
        let realized =
            discounted_segment_cost(&traj, &plan.control, &s.cost, &s.discount, t_start);
        x = traj.last_state().to_vec();
        let step = TraceStep {
            episode: k,
            t_start,
            planned_value: plan.value,
            planned_tail: plan.tail_bound,
            planner_converged: plan.converged,
            control: plan.control.clone(),
            states: traj.states,
            realized_segment_cost: realized,
            exposure: belief.exposure.summary(),
            attenuation_at_end: belief.attenuation(&x)?,
        };
        on_step(&step, &belief)?;
        steps.push(step);

        // Warm start for the next episode: the remainder of this plan,
        // shifted by the executed duration.
        let sd = plan.control.segment_duration;
        let shifted: Vec<Vec<f64>> = (0..plan.control.values.len())
            .map(|j| {
                plan.control
                    .value_at((j as f64 + 0.5) * sd + s.episode_duration)
                    .to_vec()
            })
            .collect();
        warm = Some(ControlSignal::new(sd, shifted)?);
    }

    Ok(LearningTrace {
        steps,
        halted,
        final_state: x,
        final_belief: belief,
    })
}

pub fn run_learning_loop(s: &Scenario) -> Result<LearningTrace> {
    run_learning_loop_with(s, |_, _| Ok(()))
}

/// Total discounted cost actually paid along the trace, with a tail bound
/// covering everything after the last completed episode.
pub fn realized_cost(trace: &LearningTrace, s: &Scenario) -> CostValue {
    let value: f64 = trace.steps.iter().map(|st| st.realized_segment_cost).sum();
    let t_end = trace.steps.len() as f64 * s.episode_duration;
    CostValue {
        value,
        tail_bound: s.cost.sup_bound * (-s.discount.lambda * t_end).exp() / s.discount.lambda,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub episode: usize,
    pub what: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub matches: bool,
    pub episodes_compared: usize,
    pub tolerance: f64,
    pub first_divergence: Option<Divergence>,
}

const REPLAY_TOL: f64 = 1e-9;

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Re-runs the scenario from scratch and compares the fresh trace against
/// the recorded one, reporting the first divergence beyond a small float
/// budget. A clean replay certifies that the recorded run is reproducible
/// from the scenario alone.
pub fn replay(trace: &LearningTrace, s: &Scenario) -> Result<ReplayReport> {
    let fresh = run_learning_loop(s)?;
    let mut divergence: Option<Divergence> = None;

    if fresh.halted != trace.halted {
        divergence = Some(Divergence {
            episode: fresh.steps.len().min(trace.steps.len()),
            what: format!(
                "halt status differs: recorded {:?}, replayed {:?}",
                trace.halted, fresh.halted
            ),
            magnitude: f64::INFINITY,
        });
    }
    if divergence.is_none() && fresh.steps.len() != trace.steps.len() {
        divergence = Some(Divergence {
            episode: fresh.steps.len().min(trace.steps.len()),
            what: format!(
                "episode count differs: recorded {}, replayed {}",
                trace.steps.len(),
                fresh.steps.len()
            ),
            magnitude: (fresh.steps.len() as f64 - trace.steps.len() as f64).abs(),
        });
    }

    let compared = fresh.steps.len().min(trace.steps.len());
    if divergence.is_none() {
        'steps: for (a, b) in trace.steps.iter().zip(&fresh.steps) {
            let checks: [(&str, f64); 5] = [
                (
                    "planned value",
                    (a.planned_value - b.planned_value).abs(),
                ),
                (
                    "realized segment cost",
                    (a.realized_segment_cost - b.realized_segment_cost).abs(),
                ),
                ("exposure min", (a.exposure.min - b.exposure.min).abs()),
                ("exposure mean", (a.exposure.mean - b.exposure.mean).abs()),
                ("exposure max", (a.exposure.max - b.exposure.max).abs()),
            ];
            for (what, magnitude) in checks {
                if magnitude > REPLAY_TOL {
                    divergence = Some(Divergence {
                        episode: a.episode,
                        what: what.into(),
                        magnitude,
                    });
                    break 'steps;
                }
            }
            if a.states.len() != b.states.len() {
                divergence = Some(Divergence {
                    episode: a.episode,
                    what: "state count".into(),
                    magnitude: (a.states.len() as f64 - b.states.len() as f64).abs(),
                });
                break;
            }
            for (sa, sb) in a.states.iter().zip(&b.states) {
                let d = sup_diff(sa, sb);
                if d > REPLAY_TOL {
                    divergence = Some(Divergence {
                        episode: a.episode,
                        what: "realized state".into(),
                        magnitude: d,
                    });
                    break 'steps;
                }
            }
        }
    }

    Ok(ReplayReport {
        matches: divergence.is_none(),
        episodes_compared: compared,
        tolerance: REPLAY_TOL,
        first_divergence: divergence,
    })
}
