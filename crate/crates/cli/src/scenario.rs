//! Scenario documents: structured text describing dynamics, belief, cost,
//! and solver settings, converted into library objects at load time. Syntax
//! and schema problems exit with the parse code; semantically invalid
//! scenarios (bad constants, dimension clashes) exit with the check code.

use std::path::Path;

use serde::Deserialize;
use ucsim_core::belief::{BeliefState, Candidate, ExposureField, LearningKernel, EXPOSURE_CAP};
use ucsim_core::control_opt::nelder_mead::NmOptions;
use ucsim_core::dynamics::{DynamicsKind, RadialBump};
use ucsim_core::hjb::{ControlGrid, HjbSettings};
use ucsim_core::simulator::Scenario;
use ucsim_core::{
    CostSpec, DiscountSpec, DynamicsSpec, GridSpec, PlannerSettings, Rect, StageCost,
};

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: u64,
    pub dynamics: DynamicsSection,
    pub belief: BeliefSection,
    pub cost: CostSection,
    pub discount: DiscountSection,
    pub control: BoxSection,
    pub planner: Option<PlannerSection>,
    pub hjb: Option<HjbSection>,
    pub simulator: Option<SimulatorSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub truth: FieldSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `x' = u`, scaled to `state_dim` axes.
    PureControl { state_dim: usize, bound_c: f64 },
    /// `x' = a x + b u + drift` in one dimension.
    Scalar {
        a: f64,
        b: f64,
        drift: f64,
        lipschitz_l: f64,
        bound_c: f64,
    },
    /// `x' = A x + B u + drift`, optionally perturbed by radial bumps.
    Affine {
        state_matrix: Vec<Vec<f64>>,
        control_matrix: Vec<Vec<f64>>,
        drift: Vec<f64>,
        #[serde(default)]
        bumps: Vec<BumpSection>,
        lipschitz_l: f64,
        bound_c: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSection {
    pub gain: f64,
    pub center: Vec<f64>,
    pub width: f64,
    pub direction: Vec<f64>,
}

impl FieldSpec {
    // Everything funnels through the checked affine constructor so a bad
    // document reports an error instead of panicking.
    pub fn build(&self) -> Result<DynamicsSpec, Failure> {
        match self {
            FieldSpec::PureControl { state_dim, bound_c } => {
                let n = *state_dim;
                let eye = (0..n)
                    .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                    .collect();
                DynamicsSpec::affine(vec![vec![0.0; n]; n], eye, vec![0.0; n], 1.0, *bound_c)
                    .map_err(Failure::check)
            }
            FieldSpec::Scalar {
                a,
                b,
                drift,
                lipschitz_l,
                bound_c,
            } => DynamicsSpec::affine(
                vec![vec![*a]],
                vec![vec![*b]],
                vec![*drift],
                *lipschitz_l,
                *bound_c,
            )
            .map_err(Failure::check),
            FieldSpec::Affine {
                state_matrix,
                control_matrix,
                drift,
                bumps,
                lipschitz_l,
                bound_c,
            } => {
                let bumps: Vec<RadialBump> = bumps
                    .iter()
                    .map(|b| RadialBump {
                        gain: b.gain,
                        center: b.center.clone(),
                        width: b.width,
                        direction: b.direction.clone(),
                    })
                    .collect();
                let kind = if bumps.is_empty() {
                    DynamicsKind::Affine
                } else {
                    DynamicsKind::AffineBumps
                };
                DynamicsSpec::new(
                    kind,
                    state_matrix.clone(),
                    control_matrix.clone(),
                    drift.clone(),
                    bumps,
                    *lipschitz_l,
                    *bound_c,
                )
                .map_err(Failure::check)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefSection {
    pub exposure_grid: GridSection,
    pub kernel_radius: f64,
    #[serde(default)]
    pub candidates: Vec<CandidateSection>,
}

#[derive(Debug, Deserialize)]
pub struct CandidateSection {
    pub weight: f64,
    #[serde(flatten)]
    pub field: FieldSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl GridSection {
    pub fn build(&self) -> Result<GridSpec, Failure> {
        let rect = Rect::new(self.lower.clone(), self.upper.clone()).map_err(Failure::check)?;
        GridSpec::new(rect, self.nodes.clone()).map_err(Failure::check)
    }
}

// No deny_unknown_fields here: serde cannot combine it with flatten.
#[derive(Debug, Deserialize)]
pub struct CostSection {
    #[serde(flatten)]
    pub stage: StageSection,
    pub lipschitz_lj: f64,
    pub sup_bound: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageSection {
    Constant {
        value: f64,
    },
    Quadratic {
        state_weights: Vec<f64>,
        control_weights: Vec<f64>,
        offset: f64,
    },
    AbsState {
        weights: Vec<f64>,
    },
}

impl CostSection {
    pub fn build(&self) -> Result<CostSpec, Failure> {
        let stage = match &self.stage {
            StageSection::Constant { value } => StageCost::Constant { value: *value },
            StageSection::Quadratic {
                state_weights,
                control_weights,
                offset,
            } => StageCost::Quadratic {
                state_weights: state_weights.clone(),
                control_weights: control_weights.clone(),
                offset: *offset,
            },
            StageSection::AbsState { weights } => StageCost::AbsState {
                weights: weights.clone(),
            },
        };
        CostSpec::new(stage, self.lipschitz_lj, self.sup_bound).map_err(Failure::check)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountSection {
    pub lambda: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSection {
    pub fn build(&self) -> Result<Rect, Failure> {
        Rect::new(self.lower.clone(), self.upper.clone()).map_err(Failure::check)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub n_segments: usize,
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    pub integrator_step: f64,
    pub tail_tol: f64,
    pub max_iters: Option<usize>,
}

impl PlannerSection {
    pub fn build(&self) -> PlannerSettings {
        let defaults = NmOptions::default();
        PlannerSettings {
            n_segments: self.n_segments,
            restarts: self.restarts,
            seed: self.seed,
            integrator_step: self.integrator_step,
            tail_tol: self.tail_tol,
            nm: NmOptions {
                max_iters: self.max_iters.unwrap_or(defaults.max_iters),
                ..defaults
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbSection {
    pub grid: GridSection,
    pub dt: f64,
    pub control_points_per_axis: Vec<usize>,
    pub max_sweeps: Option<usize>,
    pub tol: Option<f64>,
    pub node_cap: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSection {
    pub x0: Vec<f64>,
    pub episode_duration: f64,
    pub n_episodes: usize,
    pub integrator_step: f64,
}

/// Everything `solve-hjb` needs, extracted from one document.
pub struct HjbInputs {
    pub field: DynamicsSpec,
    pub cost: CostSpec,
    pub discount: DiscountSpec,
    pub grid: GridSpec,
    pub cgrid: ControlGrid,
    pub settings: HjbSettings,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<(ScenarioFile, Vec<u8>), Failure> {
        let bytes = std::fs::read(path)
            .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Failure::io(format!("{} is not valid UTF-8: {e}", path.display())))?;
        let file: ScenarioFile = toml::from_str(text)
            .map_err(|e| Failure::io(format!("cannot parse {}: {e}", path.display())))?;
        Ok((file, bytes))
    }

    pub fn build_belief(&self) -> Result<BeliefState, Failure> {
        let truth = self.dynamics.truth.build()?;
        let grid = self.belief.exposure_grid.build()?;
        let exposure = ExposureField::new(grid, EXPOSURE_CAP).map_err(Failure::check)?;
        if self.belief.candidates.is_empty() {
            return BeliefState::certain(truth, exposure).map_err(Failure::check);
        }
        let candidates = self
            .belief
            .candidates
            .iter()
            .map(|c| {
                Ok(Candidate {
                    weight: c.weight,
                    dynamics: c.field.build()?,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        BeliefState::new(truth, candidates, exposure).map_err(Failure::check)
    }

    /// Assembles the closed-loop scenario; requires the planner and
    /// simulator sections.
    pub fn to_scenario(&self, seed_override: Option<u64>) -> Result<Scenario, Failure> {
        let planner = self.planner.as_ref().ok_or_else(|| {
            Failure::io("scenario document lacks the [planner] section".to_string())
        })?;
        let sim = self.simulator.as_ref().ok_or_else(|| {
            Failure::io("scenario document lacks the [simulator] section".to_string())
        })?;
        Ok(Scenario {
            belief: self.build_belief()?,
            cost: self.cost.build()?,
            discount: DiscountSpec::new(self.discount.lambda).map_err(Failure::check)?,
            control_box: self.control.build()?,
            kernel: LearningKernel::new(self.belief.kernel_radius).map_err(Failure::check)?,
            x0: sim.x0.clone(),
            episode_duration: sim.episode_duration,
            n_episodes: sim.n_episodes,
            integrator_step: sim.integrator_step,
            planner: planner.build(),
            seed: seed_override.unwrap_or(self.seed),
        })
    }

    /// Extracts the grid-solver inputs; requires the [hjb] section. The
    /// value function is solved for the anchor dynamics alone.
    pub fn hjb_inputs(&self) -> Result<HjbInputs, Failure> {
        let section = self
            .hjb
            .as_ref()
            .ok_or_else(|| Failure::io("scenario document lacks the [hjb] section".to_string()))?;
        let defaults = HjbSettings::default();
        let ubox = self.control.build()?;
        Ok(HjbInputs {
            field: self.dynamics.truth.build()?,
            cost: self.cost.build()?,
            discount: DiscountSpec::new(self.discount.lambda).map_err(Failure::check)?,
            grid: section.grid.build()?,
            cgrid: ControlGrid::uniform(&ubox, &section.control_points_per_axis)
                .map_err(Failure::check)?,
            settings: HjbSettings {
                dt: section.dt,
                max_sweeps: section.max_sweeps.unwrap_or(defaults.max_sweeps),
                tol: section.tol.unwrap_or(defaults.tol),
                node_cap: section.node_cap.unwrap_or(defaults.node_cap),
            },
        })
    }
}
