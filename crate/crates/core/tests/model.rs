use nalgebra::Vector2;
use proptest::prelude::*;
use thermocover::model::{discretize_fopdt, fopdt_step_response, two_node_model};
use thermocover::{Mode, PlantParams};

fn heat() -> PlantParams {
    PlantParams::preset(Mode::Heat)
}

#[test]
fn heat_discretization_examples() {
    let m = discretize_fopdt(&heat(), 1.0).unwrap();
    assert_eq!(m.a, 500.0 / 501.0);
    assert!((m.b - 1.0 / 501.0).abs() < 1e-15);
    assert_eq!(m.d, 45);
}

#[test]
fn step_response_examples() {
    let p = heat();
    assert_eq!(fopdt_step_response(&p, 7.0, 0.3, p.dead_time / 2.0), 0.0);
    assert!((fopdt_step_response(&p, 7.0, 0.3, 1e6) - 6.7).abs() < 1e-12);
    let v = fopdt_step_response(&p, 1.0, 0.0, p.dead_time + p.tau);
    assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    assert!((v - 0.6321).abs() < 1e-4);
}

/// Fixed-step RK4 of the two-node network.
fn integrate(p: &PlantParams, x0: Vector2<f64>, u: f64, seconds: f64, dt: f64) -> Vector2<f64> {
    let m = two_node_model(p);
    let input = Vector2::new(u, 0.0);
    let mut x = x0;
    for _ in 0..(seconds / dt).round() as usize {
        let k1 = m.derivative(x, input);
        let k2 = m.derivative(x + k1 * (dt / 2.0), input);
        let k3 = m.derivative(x + k2 * (dt / 2.0), input);
        let k4 = m.derivative(x + k3 * dt, input);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    x
}

#[test]
fn constant_input_ramps_at_total_capacitance_rate() {
    let p = heat();
    let expected = 1.0 / (p.c_w + p.c_c);
    assert!((expected - 0.0050557).abs() < 5e-6);
    let a = integrate(&p, Vector2::zeros(), 1.0, 1000.0, 0.1);
    let b = integrate(&p, a, 1.0, 1.0, 0.1);
    assert!(((b[0] - a[0]) - expected).abs() < 1e-9);
}

#[test]
fn equilibrium_is_stationary() {
    let x = integrate(&heat(), Vector2::new(24.0, 24.0), 0.0, 500.0, 0.1);
    assert!((x[0] - 24.0).abs() < 1e-12 && (x[1] - 24.0).abs() < 1e-12);
}

#[test]
fn isolated_network_reaches_weighted_mean_and_conserves_heat() {
    for mode in [Mode::Heat, Mode::Cool] {
        let p = PlantParams::preset(mode);
        let x0 = Vector2::new(25.0, 30.0);
        let heat = |x: Vector2<f64>| p.c_w * x[0] + p.c_c * x[1];
        let mean = heat(x0) / (p.c_w + p.c_c);
        let x = integrate(&p, x0, 0.0, 2000.0, 0.1);
        assert!((x[0] - mean).abs() < 1e-9 && (x[1] - mean).abs() < 1e-9);
        assert!((heat(x) - heat(x0)).abs() < 1e-9 * heat(x0));
    }
}

#[test]
fn two_node_eigenvalues_match_time_constants() {
    let p = heat();
    let [fast, slow] = two_node_model(&p).eigenvalues();
    let expected = -(1.0 / (p.r_c * p.c_w) + 1.0 / (p.r_c * p.c_c));
    assert!((fast - expected).abs() < 1e-12 && slow.abs() < 1e-12);
}

#[test]
fn discretization_error_converges_at_first_order() {
    let p = heat();
    let err = |t_s: f64| {
        let m = discretize_fopdt(&p, t_s).unwrap();
        let mut y = 0.0;
        let mut worst: f64 = 0.0;
        for k in 1..=(3000.0 / t_s) as usize {
            y = m.next(y, if k > m.d { 1.0 } else { 0.0 }, 0.0);
            worst = worst.max((y - fopdt_step_response(&p, 1.0, 0.0, k as f64 * t_s)).abs());
        }
        worst
    };
    let (e1, e2, e3) = (err(1.0), err(0.5), err(0.25));
    let order = ((e1 / e2).log2() + (e2 / e3).log2()) / 2.0;
    assert!(order >= 0.95, "observed order {order}");
}

proptest! {
    #[test]
    fn coefficients_sum_to_one(tau in 1e-3f64..1e5, t_s in 1e-3f64..10.0) {
        let mut p = heat();
        p.tau = tau;
        p.dead_time = 0.0;
        let m = discretize_fopdt(&p, t_s).unwrap();
        prop_assert_eq!(m.a + m.b, 1.0);
        prop_assert!(m.a > 0.0 && m.b > 0.0);
    }
}
