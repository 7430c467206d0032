//! Heat-flow observer: reconstructs contact heat flow from the water-pipe and
//! tank temperatures, without sensing the cover surface.
//!
//! The estimate is
//!
//! ```text
//! q̂_i = [ (R_c C_w C_c s² + (C_w + C_c) s) T_w − (R_c C_c s + 1)(q_w + q_aw) ]
//!        / [ (R_c C_w s + 1)(R_c C_c s + 1) ]
//! ```
//!
//! realized as one two-state filter with inputs `[T_w, q_w + q_aw]` and
//! discretized with the trapezoidal rule, which keeps the DC gain exact.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{DiscreteStateSpace, Poly, StateSpace};
use crate::params::{AmbientConfig, PlantParams};

/// Heat exchanged with the room through the pipe wall (W, positive into the water).
pub fn estimate_q_aw(t_w: f64, t_amb: f64, r_aw: f64) -> f64 {
    (t_amb - t_w) / r_aw
}

/// Convective heat carried from the tank to the pipe (W).
pub fn estimate_q_w(t_co: f64, t_w: f64, pump_on: bool, r_w: f64) -> f64 {
    if pump_on {
        (t_co - t_w) / r_w
    } else {
        0.0
    }
}

/// Continuous-time observer filter with inputs `[T_w, q_w + q_aw]`.
pub fn observer_filter(params: &PlantParams) -> Result<StateSpace> {
    let (rc, cw, cc) = (params.r_c, params.c_w, params.c_c);
    let pipe_channel = Poly::new(vec![0.0, cw + cc, rc * cw * cc]);
    let input_channel = Poly::new(vec![-1.0, -rc * cc]);
    let den = Poly::new(vec![1.0, rc * cw]).mul(&Poly::new(vec![1.0, rc * cc]));
    StateSpace::from_common_denominator(&[pipe_channel, input_channel], &den)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatObserver {
    filter: DiscreteStateSpace,
    state: DVector<f64>,
    q_hat: f64,
    params: PlantParams,
}

pub fn build_observer(params: &PlantParams, t_s: f64) -> Result<HeatObserver> {
    params.validate()?;
    let filter = observer_filter(params)?.bilinear(t_s)?;
    let n = filter.n_states();
    Ok(HeatObserver {
        filter,
        state: DVector::zeros(n),
        q_hat: 0.0,
        params: *params,
    })
}

impl HeatObserver {
    pub fn t_s(&self) -> f64 {
        self.filter.t_s
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn q_hat(&self) -> f64 {
        self.q_hat
    }

    pub fn filter(&self) -> &DiscreteStateSpace {
        &self.filter
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
        self.q_hat = 0.0;
    }

    /// Sets the filter to steady state for a pipe held at `t_w` with no net
    /// heat input, so that a run starting away from 0 °C has no start-up
    /// transient.
    pub fn prime(&mut self, t_w: f64) -> Result<()> {
        self.prime_with_input(t_w, 0.0)
    }

    /// Sets the filter onto the trajectory of a contact-free pipe at `t_w`
    /// receiving a constant net input: the pipe then drifts at
    /// `net_input / (C_w + C_c)` and the estimate starts at zero.
    pub fn prime_with_input(&mut self, t_w: f64, net_input: f64) -> Result<()> {
        let n = self.filter.n_states();
        let lu = (DMatrix::<f64>::identity(n, n) - &self.filter.a).lu();
        let rate = net_input / (self.params.c_w + self.params.c_c);
        let slope_in = DVector::from_column_slice(&[rate * self.filter.t_s, 0.0]);
        let slope = lu
            .solve(&(&self.filter.b * slope_in))
            .ok_or_else(|| Error::invalid("observer filter has a pole at z = 1"))?;
        let level_in = DVector::from_column_slice(&[t_w, net_input]);
        self.state = lu
            .solve(&(&self.filter.b * level_in - slope))
            .ok_or_else(|| Error::invalid("observer filter has a pole at z = 1"))?;
        self.q_hat = 0.0;
        Ok(())
    }

    /// Advances the filter with a precomputed net water heat input `q_w + q_aw`.
    pub fn step_with_input(&mut self, t_w: f64, net_input: f64) -> f64 {
        self.q_hat = self.filter.step(&mut self.state, &[t_w, net_input]);
        self.q_hat
    }

    /// Advances one sample from the measured pipe and tank temperatures.
    pub fn step(&mut self, t_w: f64, t_co: f64, pump_on: bool, ambient: &AmbientConfig) -> f64 {
        let q_w = estimate_q_w(t_co, t_w, pump_on, self.params.r_w);
        let q_aw = estimate_q_aw(t_w, ambient.t_amb, self.params.r_aw);
        self.step_with_input(t_w, q_w + q_aw)
    }
}

/// Value-style step: returns the advanced observer and its estimate.
pub fn observer_step(
    obs: &HeatObserver,
    t_w: f64,
    t_co: f64,
    pump_on: bool,
    ambient: &AmbientConfig,
) -> (HeatObserver, f64) {
    let mut next = obs.clone();
    let q = next.step(t_w, t_co, pump_on, ambient);
    (next, q)
}

/// First-order low-pass used to smooth the estimate before thresholding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smoother {
    alpha: f64,
    beta: f64,
    prev_in: f64,
    out: f64,
    primed: bool,
}

impl Smoother {
    /// `cutoff` in rad/s; 0 passes the signal through unchanged.
    pub fn new(cutoff: f64, t_s: f64) -> Self {
        let (alpha, beta) = if cutoff > 0.0 {
            let wt = cutoff * t_s;
            ((2.0 - wt) / (2.0 + wt), wt / (2.0 + wt))
        } else {
            (0.0, f64::NAN)
        };
        Smoother {
            alpha,
            beta,
            prev_in: 0.0,
            out: 0.0,
            primed: false,
        }
    }

    pub fn update(&mut self, x: f64) -> f64 {
        if self.beta.is_nan() {
            self.out = x;
            return x;
        }
        if !self.primed {
            self.prev_in = x;
            self.out = x;
            self.primed = true;
            return x;
        }
        self.out = self.alpha * self.out + self.beta * (x + self.prev_in);
        self.prev_in = x;
        self.out
    }
}
