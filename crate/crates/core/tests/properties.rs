//! Randomized invariants. Each property restates a structural guarantee of
//! the library (conservation, monotonicity, dominance, determinism) and
//! hammers it with generated inputs; fixed-scenario consequences that are too
//! heavy for generation run once as plain tests below.

use proptest::prelude::*;

use ucsim_core::belief::{BeliefState, Candidate, ExposureField, LearningKernel, EXPOSURE_CAP};
use ucsim_core::benchmarks::{
    benchmark_1d, bounded_excursion_control, constant_cost_case, drift_pair,
    graded_exposure_belief, line_grid, two_candidate_scenario, zero_control,
};
use ucsim_core::control_opt::{
    nelder_mead::NmOptions, optimize_open_loop, optimize_relaxed, RelaxedControl, RelaxedSettings,
};
use ucsim_core::cost::{expected_cost, CostSpec, DiscountSpec, StageCost};
use ucsim_core::dynamics::{integrate, integrate_relaxed, DynamicsSpec};
use ucsim_core::hjb::{solve_hjb, ControlGrid, HjbSettings};
use ucsim_core::simulator::run_learning_loop_with;
use ucsim_core::vecmath::dist2;
use ucsim_core::verify::{run_all, CheckKind, SuiteConfig};
use ucsim_core::PlannerSettings;

fn uncertain_cost() -> (CostSpec, DiscountSpec) {
    let cost = CostSpec::new(
        StageCost::Quadratic {
            state_weights: vec![1.0],
            control_weights: vec![0.0],
            offset: 1.0,
        },
        4.0,
        5.0,
    )
    .unwrap();
    (cost, DiscountSpec::new(1.5).unwrap())
}

fn singleton_belief(c: &Candidate, exposure: ExposureField) -> BeliefState {
    BeliefState::new(
        DynamicsSpec::pure_control(1, 1.0),
        vec![Candidate {
            weight: 1.0,
            dynamics: c.dynamics.clone(),
        }],
        exposure,
    )
    .unwrap()
}

fn fresh_exposure_1d() -> ExposureField {
    ExposureField::new(line_grid(-2.0, 2.0, 41), EXPOSURE_CAP).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    // Realized displacement never outruns the declared velocity bound.
    #[test]
    fn trajectory_speed_is_bounded(seed in 0u64..1_000) {
        let case = constant_cost_case(seed);
        let dim = case.belief.state_dim();
        let ctrl = zero_control(dim, 4.0);
        let traj = integrate(&case.belief.truth_anchor, &case.x0, &ctrl, 4.0, 0.01).unwrap();
        let c = case.belief.truth_anchor.bound_c;
        for (k, t) in traj.times.iter().enumerate() {
            prop_assert!(dist2(&traj.states[k], &case.x0) <= c * t + 1e-9);
        }
    }

    // A relaxed control whose slots all carry a single atom integrates to the
    // same path as the ordinary signal it came from.
    #[test]
    fn single_atom_relaxed_integration_matches_ordinary(seed in 0u64..1_000) {
        let dp = drift_pair(seed);
        let relaxed = RelaxedControl::from_signal(&dp.control);
        let a = integrate(&dp.base, &dp.x0, &dp.control, dp.horizon, 0.005).unwrap();
        let b = integrate_relaxed(&dp.base, &dp.x0, &relaxed, dp.horizon, 0.005).unwrap();
        for (xa, xb) in a.states.iter().zip(&b.states) {
            prop_assert!(dist2(xa, xb) <= 1e-12);
        }
    }

    // Morphed candidates sit exactly on the attenuation-weighted segment
    // between the anchor and the raw candidate, and revert to the raw
    // candidate wherever exposure is zero.
    #[test]
    fn morphed_candidate_interpolates_anchor_and_raw(
        level in 0.2f64..3.0,
        x in -0.95f64..0.95,
        u in -1.0f64..1.0,
    ) {
        let belief = graded_exposure_belief(level);
        let alpha = belief.attenuation(&[x]).unwrap();
        prop_assert!((0.0..=1.0).contains(&alpha));
        for i in 0..belief.n_candidates() {
            let h = belief.posterior_evaluate(i, &[x], &[u]).unwrap();
            let g = belief.candidates[i].dynamics.evaluate(&[x], &[u]).unwrap();
            let f = belief.truth_anchor.evaluate(&[x], &[u]).unwrap();
            let blended = f[0] + alpha * (g[0] - f[0]);
            prop_assert!((h[0] - blended).abs() <= 1e-12);
            prop_assert!(h[0] >= f[0].min(g[0]) - 1e-12 && h[0] <= f[0].max(g[0]) + 1e-12);

            // outside the tent the raw candidate comes back bitwise
            let far = belief.posterior_evaluate(i, &[1.6], &[u]).unwrap();
            let raw = belief.candidates[i].dynamics.evaluate(&[1.6], &[u]).unwrap();
            prop_assert_eq!(far[0].to_bits(), raw[0].to_bits());
        }
    }

    // Learning only adds exposure, never removes it; nodes beyond the kernel
    // support of every visited state are untouched, and candidate weights are
    // never rescaled by learning.
    #[test]
    fn exposure_accumulation_is_monotone_and_local(
        seed in 0u64..1_000,
        x0 in -0.5f64..0.5,
    ) {
        let belief = graded_exposure_belief(0.7);
        let ctrl = bounded_excursion_control(seed, 0.6, 4, 0.25);
        let traj = integrate(&belief.truth_anchor, &[x0], &ctrl, 1.0, 0.01).unwrap();
        let radius = 0.3;
        let kernel = LearningKernel::new(radius).unwrap();
        let next = belief.accumulate_exposure(&traj, &kernel).unwrap();

        for (i, (before, after)) in belief
            .exposure
            .values
            .iter()
            .zip(&next.exposure.values)
            .enumerate()
        {
            prop_assert!(after >= before);
            let node = belief.exposure.grid.node_point_flat(i);
            let min_dist = traj
                .states
                .iter()
                .map(|x| dist2(x, &node))
                .fold(f64::INFINITY, f64::min);
            if min_dist > radius + 1e-9 {
                prop_assert_eq!(after.to_bits(), before.to_bits());
            }
        }
        for (a, b) in belief.candidates.iter().zip(&next.candidates) {
            prop_assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    // The belief-averaged cost is affine in the candidate weights.
    #[test]
    fn expected_cost_is_affine_in_weights(w in 0.05f64..0.95) {
        let (cost, d) = uncertain_cost();
        let plus = Candidate {
            weight: w,
            dynamics: DynamicsSpec::scalar(0.0, 1.0, 0.3, 1.0, 1.3),
        };
        let minus = Candidate {
            weight: 1.0 - w,
            dynamics: DynamicsSpec::scalar(0.0, 1.0, -0.3, 1.0, 1.3),
        };
        let mixed = BeliefState::new(
            DynamicsSpec::pure_control(1, 1.0),
            vec![plus.clone(), minus.clone()],
            fresh_exposure_1d(),
        )
        .unwrap();
        let ctrl = zero_control(1, 6.0);
        let ev = |b: &BeliefState| expected_cost(b, &[0.0], &ctrl, &cost, &d, 1e-3, 0.01).unwrap().value;
        let v_mixed = ev(&mixed);
        let v_plus = ev(&singleton_belief(&plus, fresh_exposure_1d()));
        let v_minus = ev(&singleton_belief(&minus, fresh_exposure_1d()));
        prop_assert!((v_mixed - (w * v_plus + (1.0 - w) * v_minus)).abs() <= 1e-13);
    }

    // A pointwise-larger stage cost never produces a smaller total.
    #[test]
    fn expected_cost_is_monotone_in_stage_cost(seed in 0u64..1_000, bump in 0.1f64..2.0) {
        let case = constant_cost_case(seed);
        let ctrl = zero_control(case.belief.state_dim(), 40.0);
        let lo = expected_cost(&case.belief, &case.x0, &ctrl, &case.cost, &case.discount, 1e-3, 0.01)
            .unwrap();
        let higher = CostSpec::new(
            StageCost::Constant { value: case.level + bump },
            0.0,
            case.level + bump,
        )
        .unwrap();
        let hi = expected_cost(&case.belief, &case.x0, &ctrl, &higher, &case.discount, 1e-3, 0.01)
            .unwrap();
        prop_assert!(hi.value >= lo.value);
    }

    // Doubling the truncation horizon moves the value by at most the
    // reported tail bound.
    #[test]
    fn tail_bound_is_sound(seed in 0u64..1_000) {
        let case = constant_cost_case(seed);
        let ctrl = zero_control(case.belief.state_dim(), 72.0);
        let t1 = 1e-3;
        let short = expected_cost(&case.belief, &case.x0, &ctrl, &case.cost, &case.discount, t1, 0.01)
            .unwrap();
        let t2 = case.discount.lambda * t1 * t1 / case.cost.sup_bound;
        let long = expected_cost(&case.belief, &case.x0, &ctrl, &case.cost, &case.discount, t2, 0.01)
            .unwrap();
        prop_assert!((long.value - short.value).abs() <= short.tail_bound + 1e-12);
    }

    // Open-loop cost inherits the value function's Lipschitz constant in the
    // initial state.
    #[test]
    fn expected_cost_is_lipschitz_in_x0(
        seed in 0u64..1_000,
        x in -0.3f64..0.3,
        y in -0.3f64..0.3,
    ) {
        let b = benchmark_1d(41);
        let belief = BeliefState::certain(b.field.clone(), fresh_exposure_1d()).unwrap();
        let ctrl = bounded_excursion_control(seed, 0.5, 26, 0.5);
        let ex = |x0: f64| {
            expected_cost(&belief, &[x0], &ctrl, &b.cost, &b.discount, 1e-4, 1e-3)
                .unwrap()
                .value
        };
        // L_J / (lambda - L) = 1 / (1 - 0) for this benchmark
        prop_assert!((ex(x) - ex(y)).abs() <= (x - y).abs() + 2e-6);
    }
}

#[test]
fn planner_is_deterministic_and_feasible() {
    let b = benchmark_1d(41);
    let belief = BeliefState::certain(b.field.clone(), fresh_exposure_1d()).unwrap();
    for seed in 0..3 {
        let settings = PlannerSettings {
            n_segments: 3,
            restarts: 2,
            seed,
            integrator_step: 0.05,
            tail_tol: 1e-3,
            nm: NmOptions {
                max_iters: 150,
                ..NmOptions::default()
            },
        };
        let run = || {
            optimize_open_loop(
                &belief,
                &[0.4],
                &b.cost,
                &b.discount,
                &b.control_box,
                &settings,
                None,
            )
            .unwrap()
        };
        let p1 = run();
        let p2 = run();
        assert_eq!(p1.value.to_bits(), p2.value.to_bits());
        assert_eq!(p1.control.values, p2.control.values);
        for seg in &p1.control.values {
            for (k, u) in seg.iter().enumerate() {
                assert!(
                    *u >= b.control_box.lower[k] && *u <= b.control_box.upper[k],
                    "control {u} escapes the box on axis {k}"
                );
            }
        }
    }
}

#[test]
fn relaxed_plan_never_loses_to_ordinary() {
    let rb = ucsim_core::benchmarks::relaxed_benchmark();
    let settings = RelaxedSettings {
        base: PlannerSettings {
            n_segments: 3,
            restarts: 3,
            seed: 5,
            integrator_step: 0.05,
            tail_tol: 1e-3,
            nm: NmOptions {
                max_iters: 250,
                ..NmOptions::default()
            },
        },
        atoms_per_segment: 2,
    };
    let rel = optimize_relaxed(
        &rb.belief,
        &[0.0],
        &rb.cost,
        &rb.discount,
        &rb.control_box,
        &settings,
    )
    .unwrap();
    assert!(
        rel.value <= rel.open_loop.value + 1e-9,
        "relaxed value {} exceeds ordinary value {}",
        rel.value,
        rel.open_loop.value
    );
}

#[test]
fn value_iteration_contracts_and_respects_cost_order() {
    let b = benchmark_1d(81);
    let cgrid = ControlGrid::uniform(&b.control_box, &[21]).unwrap();
    let settings = HjbSettings {
        dt: 0.02,
        ..HjbSettings::default()
    };
    let solve = |cost: &CostSpec| {
        solve_hjb(
            &b.field,
            b.field.state_lipschitz(),
            cost,
            &b.discount,
            &b.value_grid,
            &cgrid,
            &settings,
        )
        .unwrap()
    };
    let vf = solve(&b.cost);
    assert!(vf.converged);
    let kappa = (-b.discount.lambda * settings.dt).exp();
    for pair in vf.residual_history.windows(2) {
        if pair[0] > 1e-12 {
            assert!(
                pair[1] <= pair[0] * kappa + 1e-11,
                "sweep change grew: {} -> {} (modulus {kappa})",
                pair[0],
                pair[1]
            );
        }
    }

    let bumped = CostSpec::new(
        StageCost::Quadratic {
            state_weights: vec![1.0],
            control_weights: vec![0.0],
            offset: 0.5,
        },
        4.0,
        4.5,
    )
    .unwrap();
    let base = CostSpec::new(
        StageCost::Quadratic {
            state_weights: vec![1.0],
            control_weights: vec![0.0],
            offset: 0.0,
        },
        4.0,
        4.0,
    )
    .unwrap();
    let v_lo = solve(&base);
    let v_hi = solve(&bumped);
    for (lo, hi) in v_lo.values.iter().zip(&v_hi.values) {
        assert!(hi >= &(lo - 1e-12), "larger stage cost produced smaller value");
    }
}

#[test]
fn learning_loop_reports_greedy_values_and_monotone_exposure() {
    let mut s = two_candidate_scenario(3);
    s.n_episodes = 6;
    let mut current = s.belief.clone();
    let mut last_min = f64::NEG_INFINITY;
    let mut last_mean = f64::NEG_INFINITY;
    let trace = run_learning_loop_with(&s, |step, after| {
        let fresh = expected_cost(
            &current,
            &step.states[0],
            &step.control,
            &s.cost,
            &s.discount,
            s.planner.tail_tol,
            s.planner.integrator_step,
        )?;
        assert_eq!(
            fresh.value.to_bits(),
            step.planned_value.to_bits(),
            "recorded planned value is not the greedy evaluation at episode {}",
            step.episode
        );
        assert!(step.exposure.min >= last_min && step.exposure.mean >= last_mean);
        last_min = step.exposure.min;
        last_mean = step.exposure.mean;
        current = after.clone();
        Ok(())
    })
    .unwrap();
    assert!(trace.halted.is_none());
    for (a, b) in s.belief.candidates.iter().zip(&trace.final_belief.candidates) {
        assert_eq!(a.weight.to_bits(), b.weight.to_bits());
    }
}

#[test]
fn certification_checks_are_deterministic_under_seed() {
    let cfg = SuiteConfig {
        checks: Some(vec![CheckKind::ScalingIdentity, CheckKind::DppResidual]),
        ..SuiteConfig::default()
    };
    let a = run_all(&cfg);
    let b = run_all(&cfg);
    assert_eq!(a.outcomes.len(), b.outcomes.len());
    for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.observed.to_bits(), y.observed.to_bits());
        assert_eq!(x.inputs_digest, y.inputs_digest);
        assert_eq!(x.status, y.status);
        assert_eq!(x.notes, y.notes);
    }
}
