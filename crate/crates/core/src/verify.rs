//! Numerical certification suite. Each check restates one mathematical claim
//! about the model, measures it on bundled constructions, and reports the
//! observed statistic against a documented threshold. For every check there
//! is a deliberately broken fixture (a [`Fault`]) that makes exactly that
//! check fail, so the suite demonstrates its own detection power.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::belief::{pi_time_regularity_probe, BeliefState, EffectiveCandidate, ExposureField, EXPOSURE_CAP};
use crate::benchmarks::{
    benchmark_1d, bounded_excursion_control, constant_cost_case, exposure_path,
    graded_exposure_belief, line_grid, relaxed_benchmark, square_grid, zero_control,
};
use crate::control_opt::{
    chatter, nelder_mead::NmOptions, optimize_open_loop, optimize_relaxed, ControlSignal,
    PlannerSettings, RelaxedControl, RelaxedSettings,
};
use crate::cost::{
    expected_cost, expected_cost_relaxed, scaling_identity_residual_impl, CostSpec, DiscountSpec,
    StageCost,
};
use crate::dynamics::{DynamicsSpec, VectorField};
use crate::error::Result;
use crate::hjb::{
    dpp_residual, hjb_residual, kink_nodes, max_dwell_time, solve_hjb, ControlGrid, DppOptions,
    DwellCheck, HjbSettings, ValueField,
};
use crate::vecmath::{dist2, mix_seed, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    ScalingIdentity,
    ValueLipschitzX,
    ValueTimeRegularity,
    DppResidual,
    HjbResidual,
    SubdifferentialInclusion,
    RelaxedEquivalence,
}

impl CheckKind {
    pub fn all() -> [CheckKind; 7] {
        [
            CheckKind::ScalingIdentity,
            CheckKind::ValueLipschitzX,
            CheckKind::ValueTimeRegularity,
            CheckKind::DppResidual,
            CheckKind::HjbResidual,
            CheckKind::SubdifferentialInclusion,
            CheckKind::RelaxedEquivalence,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::ScalingIdentity => "scaling-identity",
            CheckKind::ValueLipschitzX => "value-lipschitz-x",
            CheckKind::ValueTimeRegularity => "value-time-regularity",
            CheckKind::DppResidual => "dpp-residual",
            CheckKind::HjbResidual => "hjb-residual",
            CheckKind::SubdifferentialInclusion => "subdifferential-inclusion",
            CheckKind::RelaxedEquivalence => "relaxed-equivalence",
        }
    }
}

/// Planted defects. Each fault is consumed inside exactly one check, so a
/// faulted run must fail that check and no other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// The shifted side of the scaling identity decays at half the rate.
    ScalingWeightHalved,
    /// The slope bound is computed with a quarter of the true cost constant.
    CostLipschitzUnderdeclared,
    /// A varying belief path is treated as static when deriving the bound.
    RegularityPathMislabeled,
    /// The grid values are scaled by ten before the short-horizon comparison.
    DppValueFieldScaled,
    /// The stationary residual is evaluated with half the true discount rate.
    FieldLambdaHalved,
    /// The frozen control in the inclusion test is not the planner optimum.
    SigmaStarBiased,
    /// Chattering keeps only the heaviest atom instead of time-slicing.
    ChatterWeightsIgnored,
}

impl Fault {
    pub fn target(&self) -> CheckKind {
        match self {
            Fault::ScalingWeightHalved => CheckKind::ScalingIdentity,
            Fault::CostLipschitzUnderdeclared => CheckKind::ValueLipschitzX,
            Fault::RegularityPathMislabeled => CheckKind::ValueTimeRegularity,
            Fault::DppValueFieldScaled => CheckKind::DppResidual,
            Fault::FieldLambdaHalved => CheckKind::HjbResidual,
            Fault::SigmaStarBiased => CheckKind::SubdifferentialInclusion,
            Fault::ChatterWeightsIgnored => CheckKind::RelaxedEquivalence,
        }
    }

    pub fn all() -> [Fault; 7] {
        [
            Fault::ScalingWeightHalved,
            Fault::CostLipschitzUnderdeclared,
            Fault::RegularityPathMislabeled,
            Fault::DppValueFieldScaled,
            Fault::FieldLambdaHalved,
            Fault::SigmaStarBiased,
            Fault::ChatterWeightsIgnored,
        ]
    }
}

/// Every threshold used by the suite. Each default is documented where it
/// is declared; checks never hardcode a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Truncation tail target for cost quadratures inside the checks.
    pub tail_tol: f64,
    /// Integrator step for the scaling-identity quadratures.
    pub quadrature_step: f64,
    /// Additive floor of the scaling residual threshold.
    pub scaling_base: f64,
    /// Absolute slack added to slope bounds for planner suboptimality.
    pub planner_tol: f64,
    /// Relative margin on the spatial Lipschitz constant.
    pub lipschitz_slack: f64,
    /// Additive floor of the time-slope bound, covering the deterministic
    /// bias of independently planned values.
    pub regularity_floor: f64,
    /// Allowed upward value step where the belief jumps toward the anchor.
    pub lsc_slack: f64,
    /// Residual thresholds are this factor times the discretization scale.
    pub residual_factor: f64,
    /// Allowed band for the coarse/fine improvement ratio under refinement.
    pub refine_lo: f64,
    pub refine_hi: f64,
    /// Ensemble spread allowed by the local learning gate of the dpp check.
    pub learning_tol: f64,
    /// Slope acceptance slack and agreement tolerance for subdifferentials.
    pub subdiff_tol: f64,
    /// Monotonicity slack for the chattering gap sequence.
    pub chatter_band: f64,
    /// Multiplier on the fitted linear constant of the chattering gap.
    pub chatter_fit_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tail_tol: 1e-4,
            quadrature_step: 1e-3,
            scaling_base: 1e-5,
            planner_tol: 0.1,
            lipschitz_slack: 0.05,
            regularity_floor: 2e-3,
            lsc_slack: 5e-3,
            residual_factor: 10.0,
            refine_lo: 1.0,
            refine_hi: 4.0,
            learning_tol: 1e-3,
            subdiff_tol: 1e-3,
            chatter_band: 2e-4,
            chatter_fit_slack: 1.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub tolerances: Tolerances,
    /// Planted defects to activate. Empty for a healthy run.
    pub faults: Vec<Fault>,
    /// Restrict the run to these checks; `None` runs all of them.
    pub checks: Option<Vec<CheckKind>>,
    /// Swap the dpp check's belief for one with untested candidates, which
    /// trips the local learning gate and demonstrates the not-applicable
    /// outcome.
    pub dpp_fresh_belief: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            tolerances: Tolerances::default(),
            faults: Vec::new(),
            checks: None,
            dpp_fresh_belief: false,
        }
    }
}

impl SuiteConfig {
    fn has(&self, fault: Fault) -> bool {
        self.faults.contains(&fault)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    /// The mathematical statement the check certifies.
    pub claim: String,
    /// Digest over the serialized inputs that produced this outcome.
    pub inputs_digest: String,
    /// Headline statistic, normalized so that the threshold is meaningful.
    pub observed: f64,
    pub threshold: f64,
    pub status: CheckStatus,
    pub runtime_secs: f64,
    pub notes: Vec<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub outcomes: Vec<CheckOutcome>,
}

impl VerificationReport {
    /// Not-applicable outcomes do not count as failures.
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.status != CheckStatus::Fail)
    }

    pub fn failed_names(&self) -> Vec<&str> {
        self.outcomes
            .iter()
            .filter(|o| o.status == CheckStatus::Fail)
            .map(|o| o.name.as_str())
            .collect()
    }
}

fn digest_inputs<T: Serialize>(inputs: &T) -> String {
    let json = serde_json::to_string(inputs).expect("check inputs serialize");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn status_of(passed: bool) -> CheckStatus {
    if passed {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

/// Shifting the time origin of the discounted integral rescales it by the
/// matching exponential weight. Checked on random contractive setups with a
/// constant stage cost and on excursion controls under the 1-D benchmark
/// dynamics.
pub fn check_scaling_identity(cfg: &SuiteConfig) -> CheckOutcome {
    let start = Instant::now();
    let tol = &cfg.tolerances;
    let faulted = cfg.has(Fault::ScalingWeightHalved);
    let rate_factor = if faulted { 0.5 } else { 1.0 };
    let threshold = tol.scaling_base + 2.0 * tol.tail_tol;
    let mut notes = Vec::new();
    let mut worst: f64 = 0.0;
    let mut pairs = 0usize;
    let mut failure: Option<String> = None;

    let mut run = |belief: &BeliefState,
                   x0: &[f64],
                   cost: &CostSpec,
                   d: &DiscountSpec,
                   s_shift: f64,
                   ctrl: &ControlSignal| {
        match scaling_identity_residual_impl(
            belief,
            x0,
            cost,
            d,
            s_shift,
            ctrl,
            tol.tail_tol,
            tol.quadrature_step,
            rate_factor,
        ) {
            Ok(r) => {
                worst = worst.max(r);
                pairs += 1;
            }
            Err(e) => failure = Some(format!("residual evaluation failed: {e}")),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5c01));
    for i in 0..5 {
        let case = constant_cost_case(mix_seed(cfg.seed, i));
        let horizon = 2.0
            + (case.level / (case.discount.lambda * tol.tail_tol)).ln() / case.discount.lambda;
        let ctrl = zero_control(case.belief.control_dim(), horizon.max(1.0));
        let s = rng.gen_range(0.3..2.0);
        run(&case.belief, &case.x0, &case.cost, &case.discount, s, &ctrl);
    }

    let b = benchmark_1d(41);
    let belief = BeliefState::certain(
        b.field.clone(),
        ExposureField::new(line_grid(-2.0, 2.0, 41), EXPOSURE_CAP).unwrap(),
    )
    .unwrap();
    for i in 0..5 {
        let ctrl = bounded_excursion_control(mix_seed(cfg.seed, 100 + i), 0.5, 26, 0.5);
        let x0 = vec![rng.gen_range(-0.3..0.3)];
        let s = rng.gen_range(0.3..2.0);
        run(&belief, &x0, &b.cost, &b.discount, s, &ctrl);
    }

    notes.push(format!("max residual {worst:.3e} over {pairs} (state, shift) pairs"));
    if faulted {
        notes.push("fault active: shifted-side decay rate halved".into());
    }
    let status = match failure {
        Some(reason) => CheckStatus::NotApplicable { reason },
        None => status_of(worst <= threshold),
    };
    CheckOutcome {
        name: CheckKind::ScalingIdentity.name().into(),
        claim: "shifting the time origin rescales the discounted cost by the matching \
                exponential weight"
            .into(),
        inputs_digest: digest_inputs(&(cfg.seed, &tol.tail_tol, &tol.quadrature_step, rate_factor)),
        observed: worst,
        threshold,
        status,
        runtime_secs: start.elapsed().as_secs_f64(),
        notes,
    }
}

fn certain_belief_1d() -> BeliefState {
    BeliefState::certain(
        DynamicsSpec::pure_control(1, 1.0),
        ExposureField::new(line_grid(-2.0, 2.0, 41), EXPOSURE_CAP).unwrap(),
    )
    .unwrap()
}

/// The planned value is Lipschitz in the state with constant at most
/// `L_J / (lambda - L)`. Sampled on the 1-D benchmark and one 2-D scenario.
pub fn check_value_lipschitz(cfg: &SuiteConfig) -> CheckOutcome {
    let start = Instant::now();
    let tol = &cfg.tolerances;
    let faulted = cfg.has(Fault::CostLipschitzUnderdeclared);
    let lj_shrink = if faulted { 0.25 } else { 1.0 };
    let mut notes = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    let mut excluded = 0usize;
    let mut failure: Option<String> = None;

    let mut scenario = |belief: &BeliefState,
                        cost: &CostSpec,
                        d: &DiscountSpec,
                        ubox: &Rect,
                        pairs: &[(Vec<f64>, Vec<f64>)],
                        settings: &PlannerSettings,
                        label: &str| {
        let l = belief.ensemble_state_lipschitz();
        let bound = cost.lipschitz_lj * lj_shrink / (d.lambda - l) * (1.0 + tol.lipschitz_slack)
            + tol.planner_tol;
        let mut used = 0usize;
        let mut steepest: f64 = 0.0;
        for (x, y) in pairs {
            let vx = optimize_open_loop(belief, x, cost, d, ubox, settings, None);
            let vy = optimize_open_loop(belief, y, cost, d, ubox, settings, None);
            match (vx, vy) {
                (Ok(a), Ok(b)) => {
                    if !(a.converged && b.converged) {
                        excluded += 1;
                        continue;
                    }
                    let slope = (a.value - b.value).abs() / dist2(x, y);
                    steepest = steepest.max(slope);
                    worst_ratio = worst_ratio.max(slope / bound);
                    used += 1;
                }
                (Err(e), _) | (_, Err(e)) => {
                    failure = Some(format!("{label}: planner failed: {e}"))
                }
            }
        }
        notes.push(format!(
            "{label}: steepest slope {steepest:.4} vs bound {bound:.4} on {used} pairs"
        ));
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x11b));
    let mut pairs_1d = Vec::new();
    while pairs_1d.len() < 8 {
        let x: f64 = rng.gen_range(-1.2..1.2);
        let y: f64 = rng.gen_range(-1.2..1.2);
        if (x - y).abs() >= 0.5 {
            pairs_1d.push((vec![x], vec![y]));
        }
    }
    let b1 = benchmark_1d(41);
    let s1 = PlannerSettings {
        n_segments: 4,
        restarts: 4,
        seed: mix_seed(cfg.seed, 0x11c),
        integrator_step: 0.02,
        tail_tol: 1e-3,
        nm: NmOptions {
            max_iters: 800,
            ..NmOptions::default()
        },
    };
    scenario(
        &certain_belief_1d(),
        &b1.cost,
        &b1.discount,
        &b1.control_box,
        &pairs_1d,
        &s1,
        "line benchmark",
    );

    let mut pairs_2d = Vec::new();
    while pairs_2d.len() < 4 {
        let x = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let y = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        if dist2(&x, &y) >= 0.5 {
            pairs_2d.push((x, y));
        }
    }
    let b2 = crate::benchmarks::benchmark_2d(21);
    let belief_2d = BeliefState::certain(
        b2.field.clone(),
        ExposureField::new(square_grid(-2.0, 2.0, 21), EXPOSURE_CAP).unwrap(),
    )
    .unwrap();
    let s2 = PlannerSettings {
        n_segments: 3,
        ..s1.clone()
    };
    scenario(
        &belief_2d,
        &b2.cost,
        &b2.discount,
        &b2.control_box,
        &pairs_2d,
        &s2,
        "plane benchmark",
    );

    if excluded > 0 {
        notes.push(format!("{excluded} pairs excluded for non-convergence"));
    }
    if faulted {
        notes.push("fault active: cost constant underdeclared by 4x".into());
    }
    let status = match failure {
        Some(reason) => CheckStatus::NotApplicable { reason },
        None => status_of(worst_ratio <= 1.0),
    };
    CheckOutcome {
        name: CheckKind::ValueLipschitzX.name().into(),
        claim: "the planned value is Lipschitz in the state with constant at most \
                L_J / (lambda - L)"
            .into(),
        inputs_digest: digest_inputs(&(cfg.seed, tol.planner_tol, tol.lipschitz_slack, lj_shrink)),
        observed: worst_ratio,
        threshold: 1.0,
        status,
        runtime_secs: start.elapsed().as_secs_f64(),
        notes,
    }
}

fn uncertain_cost() -> (CostSpec, DiscountSpec, Rect) {
    (
        CostSpec::new(
            StageCost::Quadratic {
                state_weights: vec![1.0],
                control_weights: vec![0.0],
                offset: 1.0,
            },
            4.0,
            5.0,
        )
        .unwrap(),
        DiscountSpec::new(1.5).unwrap(),
        Rect::new(vec![-1.0], vec![1.0]).unwrap(),
    )
}

fn regularity_planner(seed: u64) -> PlannerSettings {
    PlannerSettings {
        n_segments: 4,
        restarts: 4,
        seed,
        integrator_step: 0.02,
        tail_tol: 1e-3,
        nm: NmOptions {
            max_iters: 800,
            ..NmOptions::default()
        },
    }
}

/// The planned value varies continuously along a belief path: Lipschitz in
/// time while exposure grows smoothly, and with no upward step where the
/// belief jumps toward the anchor.
pub fn check_time_regularity(cfg: &SuiteConfig) -> CheckOutcome {
    let start = Instant::now();
    let tol = &cfg.tolerances;
    let faulted = cfg.has(Fault::RegularityPathMislabeled);
    let (cost, d, ubox) = uncertain_cost();
    let x0 = vec![0.0];
    let settings = regularity_planner(mix_seed(cfg.seed, 0x7e9));
    let mut notes = Vec::new();

    let inner = || -> Result<(f64, f64, bool, bool, bool, Vec<String>)> {
        let mut local_notes = Vec::new();
        let times = [0.0, 0.25, 0.5, 0.75, 1.0];
        let level = |t: f64| 0.1 + 0.4 * t;
        let path = exposure_path(&times, level)?;

        let probe_x = [0.0];
        let probe_u = [0.0];
        let anchor_vel = path.snapshots[0].1.truth_anchor.evaluate(&probe_x, &probe_u)?;
        let gap_at_probe =
            |eff: &EffectiveCandidate<'_>| dist2(&eff.eval(&probe_x, &probe_u), &anchor_vel);
        let probe = pi_time_regularity_probe(&path, &gap_at_probe, 1e-6)?;
        let quotient = if faulted { 0.0 } else { probe.max_quotient };

        let l_ens = path
            .snapshots
            .iter()
            .map(|(_, b)| b.ensemble_state_lipschitz())
            .fold(0.0, f64::max);
        let eps = d.lambda - l_ens;
        if eps <= 0.0 {
            return Err(crate::error::Error::DiscountTooSmall {
                lambda: d.lambda,
                l: l_ens,
            });
        }
        // Integral factor of the reserved discount slice times the peak of
        // the growth envelope it must absorb.
        let factor = (2.0 / eps) * (2.0 / (std::f64::consts::E * eps));
        let bound = quotient * cost.lipschitz_lj * factor + tol.regularity_floor;

        let mut values = Vec::new();
        for (_, belief) in &path.snapshots {
            values.push(optimize_open_loop(belief, &x0, &cost, &d, &ubox, &settings, None)?.value);
        }
        let mut slope: f64 = 0.0;
        for w in values.windows(2) {
            slope = slope.max((w[1] - w[0]).abs() / 0.25);
        }
        local_notes.push(format!(
            "smooth path: slope {slope:.4} vs bound {bound:.4} (probe quotient {:.4}, margin {eps:.2})",
            probe.max_quotient
        ));

        let jump_at = 0.5;
        let jtimes = [0.0, 0.45, jump_at, 0.55, 1.0];
        let jlevel = |t: f64| if t < jump_at { 0.4 } else { 3.0 };
        let jpath = exposure_path(&jtimes, jlevel)?;
        let mut memo: HashMap<u64, f64> = HashMap::new();
        let mut value_at_level = |lvl: f64| -> Result<f64> {
            if let Some(&v) = memo.get(&lvl.to_bits()) {
                return Ok(v);
            }
            let belief = graded_exposure_belief(lvl);
            let v = optimize_open_loop(&belief, &x0, &cost, &d, &ubox, &settings, None)?.value;
            memo.insert(lvl.to_bits(), v);
            Ok(v)
        };
        let v_left = value_at_level(0.4)?;
        let v_jump = value_at_level(3.0)?;
        let lsc_ok = v_jump <= v_left + tol.lsc_slack;
        local_notes.push(format!(
            "jump path: value steps {v_left:.4} -> {v_jump:.4} at the learning jump"
        ));

        let jprobe_gap = pi_time_regularity_probe(&jpath, &gap_at_probe, 1e-6)?;
        let base_gap = {
            let fresh = graded_exposure_belief(0.0);
            let mut g: f64 = 0.0;
            for i in 0..fresh.n_candidates() {
                g = g.max(gap_at_probe(&fresh.effective_candidate(i)?));
            }
            g
        };
        let learned_share =
            |eff: &EffectiveCandidate<'_>| base_gap - gap_at_probe(eff);
        let jprobe_learned = pi_time_regularity_probe(&jpath, &learned_share, 1e-6)?;
        let jump_detected = !jprobe_gap.downward_jumps.is_empty();
        let monotone_clean = jprobe_learned.downward_jumps.is_empty();
        local_notes.push(format!(
            "probe flags {} drop(s) for the raw gap functional, {} for the learned share",
            jprobe_gap.downward_jumps.len(),
            jprobe_learned.downward_jumps.len()
        ));

        Ok((slope / bound, slope, lsc_ok, jump_detected, monotone_clean, local_notes))
    };

    let (observed, status) = match inner() {
        Ok((ratio, _slope, lsc_ok, jump_detected, monotone_clean, local_notes)) => {
            notes.extend(local_notes);
            if !lsc_ok {
                notes.push("value increased at the learning jump".into());
            }
            if !jump_detected {
                notes.push("probe missed the constructed exposure jump".into());
            }
            if !monotone_clean {
                notes.push("probe reported a spurious drop for a monotone functional".into());
            }
            (
                ratio,
                status_of(ratio <= 1.0 && lsc_ok && jump_detected && monotone_clean),
            )
        }
        Err(e) => (
            f64::NAN,
            CheckStatus::NotApplicable {
                reason: format!("path construction or planning failed: {e}"),
            },
        ),
    };
    if faulted {
        notes.push("fault active: path treated as static when deriving the bound".into());
    }
    CheckOutcome {
        name: CheckKind::ValueTimeRegularity.name().into(),
        claim: "the planned value is Lipschitz in time along smoothly learning belief paths \
                and does not step upward at a learning jump"
            .into(),
        inputs_digest: digest_inputs(&(cfg.seed, tol.regularity_floor, tol.lsc_slack, faulted)),
        observed,
        threshold: 1.0,
        status,
        runtime_secs: start.elapsed().as_secs_f64(),
        notes,
    }
}

fn benchmark_value_field(nodes: usize, dt: f64) -> Result<(ValueField, CostSpec, DiscountSpec, Rect)> {
    let b = benchmark_1d(nodes);
    let cgrid = ControlGrid::uniform(&b.control_box, &[41])?;
    let settings = HjbSettings {
        dt,
        ..HjbSettings::default()
    };
    let vf = solve_hjb(
        &b.field,
        b.field.state_lipschitz(),
        &b.cost,
        &b.discount,
        &b.value_grid,
        &cgrid,
        &settings,
    )?;
    Ok((vf, b.cost, b.discount, b.control_box))
}

/// The grid value satisfies the short-horizon programming identity at a
/// point with verified local learning, with residuals shrinking as the
/// horizon does.
pub fn check_dpp(cfg: &SuiteConfig) -> CheckOutcome {
    let start = Instant::now();
    let tol = &cfg.tolerances;
    let faulted = cfg.has(Fault::DppValueFieldScaled);
    let mut notes = Vec::new();

    let inner = || -> Result<std::result::Result<(f64, Vec<f64>, f64), String>> {
        let center = [0.5];
        let eps = 0.2;
        let belief = if cfg.dpp_fresh_belief {
            BeliefState::new(
                DynamicsSpec::pure_control(1, 1.0),
                vec![
                    crate::belief::Candidate {
                        weight: 0.5,
                        dynamics: DynamicsSpec::scalar(0.0, 1.0, 0.3, 1.0, 1.3),
                    },
                    crate::belief::Candidate {
                        weight: 0.5,
                        dynamics: DynamicsSpec::scalar(0.0, 1.0, -0.3, 1.0, 1.3),
                    },
                ],
                ExposureField::new(line_grid(-2.0, 2.0, 41), EXPOSURE_CAP).unwrap(),
            )?
        } else {
            certain_belief_1d()
        };
        let (vf, cost, d, ubox) = benchmark_value_field(201, 0.01)?;
        let learning = belief.check_absolute_local_learning(
            &ubox,
            &center,
            eps,
            tol.learning_tol,
            200,
            mix_seed(cfg.seed, 0xd1),
        )?;
        if !learning.holds {
            return Ok(Err(format!(
                "local learning gate open: ensemble spread {:.3} exceeds {:.0e} near {:?}",
                learning.max_deviation, learning.tol, center
            )));
        }

        let vf = if faulted {
            let mut scaled = vf.clone();
            for v in scaled.values.iter_mut() {
                *v *= 10.0;
            }
            scaled
        } else {
            vf
        };

        let velocity_bound = belief.ensemble_velocity_bound();
        let h_max = max_dwell_time(eps, velocity_bound);
        let hs = [h_max / 4.0, h_max / 2.0, h_max];
        let spacing = vf.grid.spacing()[0];
        let threshold = tol.residual_factor * (spacing + vf.dt);
        let opts = DppOptions {
            inner_segments: 2,
            integrator_step: 2e-3,
            restarts: 5,
            seed: mix_seed(cfg.seed, 0xd2),
            nm: NmOptions::default(),
            dwell: Some(DwellCheck {
                eps,
                velocity_bound,
            }),
        };
        let mut residuals = Vec::new();
        for &h in &hs {
            let report = dpp_residual(&vf, &belief.truth_anchor, &cost, &d, &ubox, &center, h, &opts)?;
            residuals.push(report.residual);
        }
        Ok(Ok((threshold, residuals, h_max)))
    };

    let (observed, threshold, status) = match inner() {
        Ok(Ok((threshold, residuals, h_max))) => {
            notes.push(format!(
                "residuals {:.4?} at horizons [h/4, h/2, h], h = {h_max}",
                residuals
            ));
            let within = residuals.iter().all(|&r| r <= threshold);
            let shrinking = residuals[0] <= 2.0 * residuals[1] + 1e-9
                && residuals[1] <= 2.0 * residuals[2] + 1e-9;
            if !shrinking {
                notes.push("residuals grew as the horizon shrank".into());
            }
            let worst = residuals.iter().cloned().fold(0.0, f64::max);
            (worst, threshold, status_of(within && shrinking))
        }
        Ok(Err(reason)) => (f64::NAN, f64::NAN, CheckStatus::NotApplicable { reason }),
        Err(e) => (
            f64::NAN,
            f64::NAN,
            CheckStatus::NotApplicable {
                reason: format!("setup failed: {e}"),
            },
        ),
    };
    if faulted {
        notes.push("fault active: grid values scaled by 10".into());
    }
    CheckOutcome {
        name: CheckKind::DppResidual.name().into(),
        claim: "the grid value equals the optimal short-horizon cost plus the discounted \
                continuation, locally where learning is verified"
            .into(),
        inputs_digest: digest_inputs(&(cfg.seed, tol.residual_factor, tol.learning_tol, faulted, cfg.dpp_fresh_belief)),
        observed,
        threshold,
        status,
        runtime_secs: start.elapsed().as_secs_f64(),
        notes,
    }
}

fn p95_excluding_kinks(vf: &ValueField, residuals: &[(usize, f64)], kinks: &[usize]) -> (f64, usize) {
    let kink_multis: Vec<Vec<usize>> = kinks.iter().map(|&k| vf.grid.multi_index(k)).collect();
    let mut kept = Vec::with_capacity(residuals.len());
    let mut excluded = 0usize;
    for &(flat, r) in residuals {
        let mi = vf.grid.multi_index(flat);
        let near_kink = kink_multis
            .iter()
            .any(|k| k.iter().zip(&mi).all(|(a, b)| a.abs_diff(*b) <= 1));
        if near_kink {
            excluded += 1;
        } else {
            kept.push(r);
        }
    }
    kept.sort_by(f64::total_cmp);
    let idx = ((kept.len() - 1) as f64 * 0.95).round() as usize;
    (kept[idx], excluded)
}

/// The computed value field satisfies the stationary equation at interior
/// nodes away from gradient creases, and the residual improves under grid
/// refinement.
pub fn check_hjb(cfg: &SuiteConfig) -> CheckOutcome {
    let start = Instant::now();
    let tol = &cfg.tolerances;
    let faulted = cfg.has(Fault::FieldLambdaHalved);
    let mut notes = Vec::new();

    let mut inner = || -> Result<std::result::Result<(f64, f64, f64), String>> {
        let mut p95s = Vec::new();
        let mut ratios = Vec::new();
        for &(nodes, dt) in &[(201usize, 0.01), (401usize, 0.005)] {
            let b = benchmark_1d(nodes);
            let cgrid = ControlGrid::uniform(&b.control_box, &[41])?;
            let vf = solve_hjb(
                &b.field,
                b.field.state_lipschitz(),
                &b.cost,
                &b.discount,
                &b.value_grid,
                &cgrid,
                &HjbSettings {
                    dt,
                    ..HjbSettings::default()
                },
            )?;
            if !vf.converged {
                return Ok(Err(format!(
                    "value iteration did not converge at {nodes} nodes"
                )));
            }
            let measured = if faulted {
                let mut wrong = vf.clone();
                wrong.lambda *= 0.5;
                wrong
            } else {
                vf
            };
            let report = hjb_residual(&measured, &b.field, &b.cost, &cgrid)?;
            let kinks = kink_nodes(&measured);
            let (p95, excluded) = p95_excluding_kinks(&measured, &report.residuals, &kinks);
            let spacing = measured.grid.spacing()[0];
            p95s.push(p95);
            ratios.push(p95 / (tol.residual_factor * spacing));
            notes.push(format!(
                "{nodes} nodes: p95 residual {p95:.4} (threshold {:.2}), {} crease-adjacent nodes excluded",
                tol.residual_factor * spacing,
                excluded
            ));
        }
        let improvement = p95s[0] / p95s[1];
        notes.push(format!("refinement improvement ratio {improvement:.2}"));
        Ok(Ok((ratios[0].max(ratios[1]), improvement, p95s[1])))
    };

    let (observed, status) = match inner() {
        Ok(Ok((ratio, improvement, _))) => {
            let band_ok = improvement >= tol.refine_lo && improvement <= tol.refine_hi;
            if !band_ok {
                notes.push("refinement ratio outside the allowed band".into());
            }
            (ratio, status_of(ratio <= 1.0 && band_ok))
        }
        Ok(Err(reason)) => (f64::NAN, CheckStatus::NotApplicable { reason }),
        Err(e) => (
            f64::NAN,
            CheckStatus::NotApplicable {
                reason: format!("setup failed: {e}"),
            },
        ),
    };
    if faulted {
        notes.push("fault active: residual evaluated with half the discount rate".into());
    }
    CheckOutcome {
        name: CheckKind::HjbResidual.name().into(),
        claim: "the computed value field satisfies the stationary equation at interior nodes \
                away from gradient creases, improving under refinement"
            .into(),
        inputs_digest: digest_inputs(&(cfg.seed, tol.residual_factor, tol.refine_lo, tol.refine_hi, faulted)),
        observed,
        threshold: 1.0,
        status,
        runtime_secs: start.elapsed().as_secs_f64(),
        notes,
    }
}

struct SlopeNet {
    /// `(delta, left slope, right slope)` per net level, increasing in
    /// resolution.
    rows: Vec<(f64, f64, f64)>,
}

impl SlopeNet {
    /// Largest left slope and smallest right slope over the finest half of
    /// the net, the finite surrogate for the one-sided limits.
    fn tail_extremes(&self) -> (f64, f64) {
        let tail = self.rows.len() / 2;
        let mut max_left = f64::NEG_INFINITY;
        let mut min_right = f64::INFINITY;
        for &(_, l, r) in &self.rows[tail.min(self.rows.len() - 1)..] {
            max_left = max_left.max(l);
            min_right = min_right.min(r);
        }
        (max_left, min_right)
    }

    fn accepts(&self, xi: f64, tol: f64) -> bool {
        let (max_left, min_right) = self.tail_extremes();
        xi >= max_left - tol && xi <= min_right + tol
    }

    fn interval(&self, tol: f64) -> (f64, f64) {
        let (max_left, min_right) = self.tail_extremes();
        (max_left - tol, min_right + tol)
    }
}

fn slope_net(
    deltas: &[f64],
    value_at: &mut dyn FnMut(f64) -> Result<f64>,
    t0: f64,
    v0: f64,
) -> Result<SlopeNet> {
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let left = (v0 - value_at(t0 - delta)?) / delta;
        let right = (value_at(t0 + delta)? - v0) / delta;
        rows.push((delta, left, right));
    }
    Ok(SlopeNet { rows })
}

/// Every accepted time-slope of the planned value is an accepted time-slope
/// of the cost functional with the control frozen at the anchor optimum. On
/// a smoothly learning path both slope sets collapse to the same derivative;
/// across a learning jump the inclusion is checked slope by slope.
pub fn check_subdifferential(cfg: &SuiteConfig) -> CheckOutcome {
    let start = Instant::now();
    let tol = &cfg.tolerances;
    let faulted = cfg.has(Fault::SigmaStarBiased);
    let (cost, d, ubox) = uncertain_cost();
    let x0 = vec![0.3];
    let settings = regularity_planner(mix_seed(cfg.seed, 0x5d1));
    let deltas = [0.08, 0.04, 0.02, 0.01, 0.005];
    let mut notes = Vec::new();

    let inner = |level_of: &dyn Fn(f64) -> f64,
                     t0: f64,
                     label: &str,
                     notes: &mut Vec<String>|
     -> Result<(usize, f64, f64, (f64, f64), (f64, f64))> {
        let mut plan_memo: HashMap<u64, f64> = HashMap::new();
        let anchor_plan = optimize_open_loop(
            &graded_exposure_belief(level_of(t0)),
            &x0,
            &cost,
            &d,
            &ubox,
            &settings,
            None,
        )?;
        plan_memo.insert(level_of(t0).to_bits(), anchor_plan.value);
        let sigma = if faulted {
            ControlSignal::new(
                anchor_plan.control.segment_duration,
                vec![vec![0.0]; anchor_plan.control.values.len()],
            )?
        } else {
            anchor_plan.control.clone()
        };

        let warm = anchor_plan.control.clone();
        let mut phi = |t: f64| -> Result<f64> {
            let lvl = level_of(t);
            if let Some(&v) = plan_memo.get(&lvl.to_bits()) {
                return Ok(v);
            }
            let v = optimize_open_loop(
                &graded_exposure_belief(lvl),
                &x0,
                &cost,
                &d,
                &ubox,
                &settings,
                Some(&warm),
            )?
            .value;
            plan_memo.insert(lvl.to_bits(), v);
            Ok(v)
        };
        let phi0 = anchor_plan.value;
        let net_phi = slope_net(&deltas, &mut phi, t0, phi0)?;

        let mut g2_memo: HashMap<u64, f64> = HashMap::new();
        let mut g2 = |t: f64| -> Result<f64> {
            let lvl = level_of(t);
            if let Some(&v) = g2_memo.get(&lvl.to_bits()) {
                return Ok(v);
            }
            let v = expected_cost(
                &graded_exposure_belief(lvl),
                &x0,
                &sigma,
                &cost,
                &d,
                settings.tail_tol,
                settings.integrator_step,
            )?
            .value;
            g2_memo.insert(lvl.to_bits(), v);
            Ok(v)
        };
        let g2_0 = g2(t0)?;
        let net_g2 = slope_net(&deltas, &mut g2, t0, g2_0)?;

        notes.push(format!(
            "{label}: value {phi0:.6} vs frozen-control cost {g2_0:.6} at the anchor"
        ));
        let (a_phi, b_phi) = net_phi.interval(tol.subdiff_tol);
        let (a_g2, b_g2) = net_g2.interval(tol.subdiff_tol);
        notes.push(format!(
            "{label}: accepted slopes [{a_phi:.4}, {b_phi:.4}] for the value, \
             [{a_g2:.4}, {b_g2:.4}] for the frozen control"
        ));

        let span_lo = a_phi - 2.0 * tol.subdiff_tol;
        let span_hi = b_phi + 2.0 * tol.subdiff_tol;
        let mut counterexamples = 0usize;
        for i in 0..=12 {
            let xi = span_lo + (span_hi - span_lo) * i as f64 / 12.0;
            if net_phi.accepts(xi, tol.subdiff_tol) && !net_g2.accepts(xi, tol.subdiff_tol) {
                counterexamples += 1;
            }
        }
        let center_phi = 0.5 * (a_phi + b_phi);
        let center_g2 = 0.5 * (a_g2 + b_g2);
        Ok((
            counterexamples,
            (center_phi - center_g2).abs(),
            (b_phi - a_phi) - 2.0 * tol.subdiff_tol,
            (a_phi, b_phi),
            (a_g2, b_g2),
        ))
    };

    let smooth_level = |t: f64| 0.1 + 0.4 * t;
    let jump_level = |t: f64| if t < 0.5 { 0.4 } else { 3.0 };
    let result = (|| -> Result<(f64, bool)> {
        let (cx_smooth, agreement, raw_width, _, _) =
            inner(&smooth_level, 0.5, "smooth path", &mut notes)?;
        // Singleton: the raw spread between one-sided tail slopes stays
        // within the curvature budget of one extra tolerance.
        let singleton = raw_width <= 2.0 * tol.subdiff_tol;
        let (cx_jump, _, _, iv_phi, iv_g2) = inner(&jump_level, 0.5, "jump path", &mut notes)?;
        let nested = iv_g2.0 <= iv_phi.0 + 1e-12 && iv_phi.1 <= iv_g2.1 + 1e-12;
        if !nested {
            notes.push("jump path: value slope set is not contained in the frozen-control set".into());
        }
        let pass = cx_smooth == 0
            && cx_jump == 0
            && singleton
            && agreement <= tol.subdiff_tol
            && nested;
        if cx_smooth + cx_jump > 0 {
            notes.push(format!(
                "{} accepted slope(s) of the value rejected for the frozen control",
                cx_smooth + cx_jump
            ));
        }
        if !singleton {
            notes.push("smooth path: slope set did not collapse to a point".into());
        }
        Ok((agreement, pass))
    })();

    let (observed, status) = match result {
        Ok((agreement, pass)) => (agreement, status_of(pass)),
        Err(e) => (
            f64::NAN,
            CheckStatus::NotApplicable {
                reason: format!("planning failed along the path: {e}"),
            },
        ),
    };
    if faulted {
        notes.push("fault active: frozen control replaced by a rest control".into());
    }
    CheckOutcome {
        name: CheckKind::SubdifferentialInclusion.name().into(),
        claim: "every accepted time-slope of the planned value is an accepted time-slope of \
                the cost with the control frozen at the anchor optimum"
            .into(),
        inputs_digest: digest_inputs(&(cfg.seed, tol.subdiff_tol, faulted)),
        observed,
        threshold: tol.subdiff_tol,
        status,
        runtime_secs: start.elapsed().as_secs_f64(),
        notes,
    }
}

fn heaviest_atom_signal(ctrl: &RelaxedControl, slot: f64) -> ControlSignal {
    let n = (ctrl.horizon() / slot).round() as usize;
    let values = (0..n)
        .map(|s| {
            let atoms = ctrl.atoms_at((s as f64 + 0.5) * slot);
            atoms
                .iter()
                .max_by(|a, b| a.weight.total_cmp(&b.weight))
                .expect("segments are never empty")
                .point
                .clone()
        })
        .collect();
    ControlSignal::new(slot, values).expect("slot duration is positive")
}

/// Chattering a relaxed control on a shrinking period approaches its relaxed
/// cost, with the gap shrinking linearly in the period.
pub fn check_relaxed_equivalence(cfg: &SuiteConfig) -> CheckOutcome {
    let start = Instant::now();
    let tol = &cfg.tolerances;
    let faulted = cfg.has(Fault::ChatterWeightsIgnored);
    let mut notes = Vec::new();

    let mut inner = || -> Result<(Vec<f64>, f64, f64)> {
        let rb = relaxed_benchmark();
        let x0 = vec![0.0];
        let rset = RelaxedSettings {
            base: PlannerSettings {
                n_segments: 5,
                restarts: 6,
                seed: mix_seed(cfg.seed, 0xe1a),
                integrator_step: 0.02,
                tail_tol: 1e-3,
                nm: NmOptions {
                    max_iters: 800,
                    ..NmOptions::default()
                },
            },
            atoms_per_segment: 2,
        };
        let rel = optimize_relaxed(&rb.belief, &x0, &rb.cost, &rb.discount, &rb.control_box, &rset)?;
        notes.push(format!(
            "relaxed value {:.4} vs best ordinary value {:.4}",
            rel.value, rel.open_loop.value
        ));
        let tilde = rel.control.resample(1.2, 5)?;
        let reference = expected_cost_relaxed(
            &rb.belief,
            &x0,
            &tilde,
            &rb.cost,
            &rb.discount,
            1e-3,
            0.005,
        )?
        .value;

        let periods = [0.2, 0.1, 0.05];
        let mut gaps = Vec::new();
        for &p in &periods {
            let slot = p / 10.0;
            let sig = if faulted {
                heaviest_atom_signal(&tilde, slot)
            } else {
                chatter(&tilde, p)?
            };
            match expected_cost(&rb.belief, &x0, &sig, &rb.cost, &rb.discount, 1e-3, slot) {
                Ok(cv) => gaps.push(cv.value - reference),
                Err(crate::error::Error::OutOfDomain { .. }) => {
                    notes.push(format!(
                        "sliced control at period {p} left the working domain"
                    ));
                    gaps.push(f64::INFINITY);
                }
                Err(e) => return Err(e),
            }
        }
        let k = (gaps[0] / periods[0]).max(gaps[1] / periods[1]).max(1e-3);
        let limit = k * periods[2] * tol.chatter_fit_slack + tol.chatter_band;
        notes.push(format!(
            "gaps {:.5?} at periods {:?}, fitted rate {k:.4}",
            gaps, periods
        ));
        Ok((gaps, k, limit))
    };

    let (observed, threshold, status) = match inner() {
        Ok((gaps, _k, limit)) => {
            let finite = gaps.iter().all(|g| g.is_finite());
            let monotone = finite
                && gaps[1] <= gaps[0] + tol.chatter_band
                && gaps[2] <= gaps[1] + tol.chatter_band;
            if finite && !monotone {
                notes.push("gap sequence is not decreasing".into());
            }
            (
                gaps[2],
                limit,
                status_of(finite && monotone && gaps[2] <= limit),
            )
        }
        Err(e) => (
            f64::NAN,
            f64::NAN,
            CheckStatus::NotApplicable {
                reason: format!("relaxed planning failed: {e}"),
            },
        ),
    };
    if faulted {
        notes.push("fault active: chattering collapsed onto the heaviest atom".into());
    }
    CheckOutcome {
        name: CheckKind::RelaxedEquivalence.name().into(),
        claim: "time-slicing a relaxed control realizes its relaxed cost up to an error \
                linear in the switching period"
            .into(),
        inputs_digest: digest_inputs(&(cfg.seed, tol.chatter_band, tol.chatter_fit_slack, faulted)),
        observed,
        threshold,
        status,
        runtime_secs: start.elapsed().as_secs_f64(),
        notes,
    }
}

pub fn run_check(kind: CheckKind, cfg: &SuiteConfig) -> CheckOutcome {
    match kind {
        CheckKind::ScalingIdentity => check_scaling_identity(cfg),
        CheckKind::ValueLipschitzX => check_value_lipschitz(cfg),
        CheckKind::ValueTimeRegularity => check_time_regularity(cfg),
        CheckKind::DppResidual => check_dpp(cfg),
        CheckKind::HjbResidual => check_hjb(cfg),
        CheckKind::SubdifferentialInclusion => check_subdifferential(cfg),
        CheckKind::RelaxedEquivalence => check_relaxed_equivalence(cfg),
    }
}

/// Runs the selected checks in declaration order and assembles the report.
/// Failures are report contents, not errors.
pub fn run_all(cfg: &SuiteConfig) -> VerificationReport {
    let kinds: Vec<CheckKind> = match &cfg.checks {
        Some(list) => list.clone(),
        None => CheckKind::all().to_vec(),
    };
    VerificationReport {
        seed: cfg.seed,
        outcomes: kinds.into_iter().map(|k| run_check(k, cfg)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_check_passes_and_its_fault_breaks_it() {
        let cfg = SuiteConfig::default();
        let healthy = check_scaling_identity(&cfg);
        assert_eq!(healthy.status, CheckStatus::Pass, "{:?}", healthy.notes);
        assert!(healthy.observed < healthy.threshold);

        let broken = SuiteConfig {
            faults: vec![Fault::ScalingWeightHalved],
            ..SuiteConfig::default()
        };
        let outcome = check_scaling_identity(&broken);
        assert_eq!(outcome.status, CheckStatus::Fail, "{:?}", outcome.notes);
    }

    #[test]
    fn dpp_check_is_not_applicable_without_local_learning() {
        let cfg = SuiteConfig {
            dpp_fresh_belief: true,
            ..SuiteConfig::default()
        };
        let outcome = check_dpp(&cfg);
        match outcome.status {
            CheckStatus::NotApplicable { ref reason } => {
                assert!(reason.contains("learning gate"), "{reason}");
            }
            ref other => panic!("expected not-applicable, got {other:?}"),
        }
    }

    #[test]
    fn reports_serialize_and_digests_are_stable() {
        let cfg = SuiteConfig::default();
        let a = check_scaling_identity(&cfg);
        let b = check_scaling_identity(&cfg);
        assert_eq!(a.inputs_digest, b.inputs_digest);
        assert_eq!(a.observed, b.observed);

        let report = VerificationReport {
            seed: 7,
            outcomes: vec![a],
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: VerificationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        assert!(report.all_passed());
    }

    #[test]
    fn fault_targets_cover_every_check_exactly_once() {
        let mut targets: Vec<&str> = Fault::all().iter().map(|f| f.target().name()).collect();
        targets.sort_unstable();
        let mut names: Vec<&str> = CheckKind::all().iter().map(|k| k.name()).collect();
        names.sort_unstable();
        assert_eq!(targets, names);
    }
}
