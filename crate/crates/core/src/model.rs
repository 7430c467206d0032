//! Plant models shared by the controller, observer and simulator: the
//! first-order-plus-dead-time display model and the two-node water/cover
//! network.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::lti::{Poly, TransferFunction, C64};
use crate::params::PlantParams;

/// Sampled first-order-plus-dead-time model
/// `T(k) = a T(k-1) + b T_p(k-1-d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteFopdt {
    pub a: f64,
    pub b: f64,
    /// Dead time in whole samples.
    pub d: usize,
    pub t_s: f64,
}

impl DiscreteFopdt {
    /// One step of the recursion with a temperature-equivalent loss offset.
    pub fn next(&self, current: f64, delayed_input: f64, offset: f64) -> f64 {
        self.a * current + self.b * (delayed_input - offset)
    }
}

/// Converts the continuous display model to its sampled recursion. The dead
/// time is rounded to whole samples.
pub fn discretize_fopdt(params: &PlantParams, t_s: f64) -> Result<DiscreteFopdt> {
    if !(t_s.is_finite() && t_s > 0.0) {
        return Err(Error::invalid(format!("sampling time must be > 0, got {t_s}")));
    }
    if params.dead_time > 0.0 && t_s > params.dead_time {
        return Err(Error::invalid(format!(
            "sampling time {t_s} s exceeds the dead time {} s",
            params.dead_time
        )));
    }
    if !(params.tau.is_finite() && params.tau > 0.0) {
        return Err(Error::invalid(format!("time constant must be > 0, got {}", params.tau)));
    }
    let denom = params.tau + t_s;
    // Derive the smaller coefficient from the larger one so that a + b == 1
    // holds exactly in floating point.
    let (a, b) = if params.tau >= t_s {
        let a = params.tau / denom;
        (a, 1.0 - a)
    } else {
        let b = t_s / denom;
        (1.0 - b, b)
    };
    let d = (params.dead_time / t_s).round() as usize;
    Ok(DiscreteFopdt { a, b, d, t_s })
}

/// Closed-form response at time `t` to a step of size `step` in the Peltier
/// temperature at `t = 0`, from zero initial condition.
pub fn fopdt_step_response(params: &PlantParams, step: f64, q_a: f64, t: f64) -> f64 {
    if t < params.dead_time {
        return 0.0;
    }
    (step - q_a) * (1.0 - (-(t - params.dead_time) / params.tau).exp())
}

/// `T_w / (q_w + q_aw)` of the two-node network.
pub fn pipe_input_tf(params: &PlantParams) -> TransferFunction {
    TransferFunction::new(Poly::new(vec![1.0, params.r_c * params.c_c]), two_node_denominator(params))
}

/// Contact channel `T_w / q_i` used by the heat-flow observer design. Its
/// numerator carries the extra `(R_c C_w s + 1)` factor of the observer
/// derivation, which differs from injecting `q_i` at the cover node.
pub fn contact_design_tf(params: &PlantParams) -> TransferFunction {
    let (rc, cw, cc) = (params.r_c, params.c_w, params.c_c);
    let num = Poly::new(vec![1.0, rc * cw]).mul(&Poly::new(vec![1.0, rc * cc]));
    TransferFunction::new(num, two_node_denominator(params))
}

/// `R_c C_w C_c s^2 + (C_w + C_c) s`.
pub fn two_node_denominator(params: &PlantParams) -> Poly {
    Poly::new(vec![
        0.0,
        params.c_w + params.c_c,
        params.r_c * params.c_w * params.c_c,
    ])
}

/// State-space form of the water-pipe/cover network with state `[T_w, T_c]`
/// and inputs `[q_w + q_aw, q_i]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoNodeModel {
    pub a: Matrix2<f64>,
    pub b: Matrix2<f64>,
}

pub fn two_node_model(params: &PlantParams) -> TwoNodeModel {
    let gw = 1.0 / (params.r_c * params.c_w);
    let gc = 1.0 / (params.r_c * params.c_c);
    TwoNodeModel {
        a: Matrix2::new(-gw, gw, gc, -gc),
        b: Matrix2::new(1.0 / params.c_w, 0.0, 0.0, 1.0 / params.c_c),
    }
}

impl TwoNodeModel {
    pub fn derivative(&self, x: Vector2<f64>, u: Vector2<f64>) -> Vector2<f64> {
        self.a * x + self.b * u
    }

    /// Frequency response from `q_w + q_aw` to `T_w`.
    pub fn pipe_response(&self, s: C64) -> C64 {
        let a = self.a.map(|v| C64::new(v, 0.0));
        let si_a = Matrix2::<C64>::identity() * s - a;
        let col = Vector2::new(C64::new(self.b[(0, 0)], 0.0), C64::new(self.b[(1, 0)], 0.0));
        match si_a.lu().solve(&col) {
            Some(x) => x[0],
            None => C64::new(f64::NAN, f64::NAN),
        }
    }

    /// Real eigenvalues of the state matrix, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let tr = self.a.trace();
        let det = self.a.determinant();
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        [tr / 2.0 - disc, tr / 2.0 + disc]
    }
}
