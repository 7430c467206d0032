use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermocover::controller::{control_step, Controller, LoopConfig};
use thermocover::model::discretize_fopdt;
use thermocover::mpc::{build_prediction, mpc_cost, solve_mpc, MpcConfig, PenaltyForm};
use thermocover::scenario::{builtin_scenarios, ScenarioSpec};
use thermocover::sim::simulate;
use thermocover::{AmbientConfig, ControlTarget, Error, Mode, PlantParams};

fn exact_model_loop() -> LoopConfig {
    LoopConfig {
        feedforward: false,
        offset_tau: 0.0,
        ..LoopConfig::default()
    }
}

#[test]
fn constant_measurement_at_setpoint_settles_with_pump_off() {
    let mut c = Controller::new(
        MpcConfig::default(),
        LoopConfig::default(),
        ControlTarget::CoverTemp,
        Mode::Heat,
        &AmbientConfig::default(),
    )
    .unwrap();
    let preview = vec![24.0; c.horizon() + 1];
    let mut last = Vec::new();
    for _ in 0..600 {
        let (cmd, pump) = control_step(&mut c, 24.0, 24.0, &preview).unwrap();
        assert!(!pump);
        last.push(cmd);
    }
    let tail = &last[last.len() - 50..];
    let spread = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - tail.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 1e-9, "command still moving by {spread}");
}

#[test]
fn receding_horizon_converges_on_its_own_model() {
    let mode = Mode::Heat;
    let mut c = Controller::new(
        MpcConfig::default(),
        exact_model_loop(),
        ControlTarget::CoverTemp,
        mode,
        &AmbientConfig { q_a: 0.0, ..AmbientConfig::default() },
    )
    .unwrap();
    let m = discretize_fopdt(&PlantParams::preset_for(mode, ControlTarget::CoverTemp), 1.0).unwrap();
    let r = 25.0;
    let preview = vec![r; c.horizon() + 1];
    let mut y = 21.0;
    let mut applied: Vec<f64> = vec![21.0; m.d + 1];
    let mut last_solution = None;
    for _ in 0..6000 {
        let out = c.step(y, r, &preview).unwrap();
        applied.push(out.command);
        y = m.next(y, applied[applied.len() - 2 - m.d], 0.0);
        last_solution = Some(out.solution);
    }
    assert!((y - r).abs() < 1e-3, "output {y}");
    let tail = &applied[applied.len() - 100..];
    assert!(tail.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-6));
    let s = last_solution.unwrap();
    assert!(s.inputs.iter().all(|u| (u - tail[99]).abs() < 1e-3));
}

#[test]
fn step_of_two_kelvin_overshoots_less_than_three_tenths() {
    let mut spec = ScenarioSpec::new("step", ControlTarget::CoverTemp, Mode::Heat, &[(23.0, 2400.0)]);
    spec.initial_temp = 21.0;
    let trace = simulate(&spec).unwrap();
    let peak = trace.rows.iter().map(|r| r.t_c).fold(f64::NEG_INFINITY, f64::max);
    assert!(peak - 23.0 < 0.3, "overshoot {}", peak - 23.0);
    let first = trace.rows.iter().position(|r| r.t_c >= 22.7).expect("never approached the setpoint");
    assert!(trace.rows[..=first].windows(2).all(|w| w[1].t_c >= w[0].t_c - 1e-9), "approach is not monotone");
}

#[test]
fn commands_respect_bounds_in_every_builtin() {
    for spec in builtin_scenarios() {
        let trace = simulate(&spec).unwrap();
        assert!(
            trace
                .rows
                .iter()
                .all(|r| r.t_p_cmd >= spec.controller.t_min && r.t_p_cmd <= spec.controller.t_max),
            "{}",
            spec.name
        );
    }
}

#[test]
fn solver_matches_grid_search_up_to_five_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let h = 1 + trial % 5;
        let mut p = PlantParams::preset(Mode::Cool);
        p.tau = rng.gen_range(1.0..10.0);
        p.dead_time = 0.0;
        let model = discretize_fopdt(&p, 1.0).unwrap();
        let t_min = rng.gen_range(10.0..30.0_f64).round();
        let cfg = MpcConfig {
            horizon: h,
            w2: rng.gen_range(0.01..0.5),
            t_min,
            t_max: t_min + 1.0,
            penalty: if trial % 2 == 0 { PenaltyForm::Magnitude } else { PenaltyForm::Increment },
            ..MpcConfig::default()
        };
        let setpoints: Vec<f64> = (0..h).map(|_| rng.gen_range(t_min - 1.0..t_min + 2.0)).collect();
        let mut qp = build_prediction(&model, rng.gen_range(t_min - 3.0..t_min + 3.0), &[], &setpoints).unwrap();
        qp.input_reference = t_min + 0.5;
        qp.last_input = rng.gen_range(t_min..t_min + 1.0);
        let sol = solve_mpc(&qp, &cfg).unwrap();
        let step = 0.1;
        let levels: Vec<f64> = (0..=10).map(|i| t_min + step * f64::from(i)).collect();
        let mut best = (f64::INFINITY, vec![0.0; h]);
        let mut idx = vec![0usize; h];
        loop {
            let u: Vec<f64> = idx.iter().map(|&i| levels[i]).collect();
            let j = mpc_cost(&qp, &cfg, &u);
            if j < best.0 {
                best = (j, u);
            }
            let mut k = 0;
            while k < h {
                idx[k] += 1;
                if idx[k] < levels.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == h {
                break;
            }
        }
        assert!(sol.cost <= best.0 + 1e-12, "trial {trial}");
        let dist = sol.inputs.iter().zip(&best.1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dist <= step + 1e-9, "trial {trial}: distance {dist}");
    }
}

#[test]
fn invalid_loop_config_is_rejected() {
    let bad = LoopConfig {
        on_band: 0.05,
        off_band: 0.1,
        ..LoopConfig::default()
    };
    let err = Controller::new(
        MpcConfig::default(),
        bad,
        ControlTarget::CoverTemp,
        Mode::Heat,
        &AmbientConfig::default(),
    )
    .err()
    .unwrap();
    assert!(matches!(err, Error::InvalidArgument(_) | Error::Config(_)), "{err}");
}

#[test]
fn empty_preview_is_rejected() {
    let mut c = Controller::new(
        MpcConfig::default(),
        LoopConfig::default(),
        ControlTarget::PipeTemp,
        Mode::Cool,
        &AmbientConfig::default(),
    )
    .unwrap();
    assert!(c.step(22.0, 22.0, &[]).is_err());
}
