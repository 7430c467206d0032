//! Receding-horizon Peltier command from the dead-time display model.
//!
//! The predicted temperature is affine in the future commands. The cost is a
//! weighted tracking error plus a weighted input penalty, minimized over a
//! box on the commands by projected gradient descent with exact line search.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvReader};
use crate::model::DiscreteFopdt;

const MAX_ITERATIONS: usize = 10_000;
const KKT_TOLERANCE: f64 = 1e-8;

/// What the second cost term penalizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyForm {
    /// `(T_p - reference)^2` for every command in the horizon.
    Magnitude,
    /// `(T_p(k+i) - T_p(k+i-1))^2`, starting from the last applied command.
    Increment,
}

impl fmt::Display for PenaltyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyForm::Magnitude => "magnitude",
            PenaltyForm::Increment => "increment",
        })
    }
}

impl FromStr for PenaltyForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "magnitude" => Ok(PenaltyForm::Magnitude),
            "increment" => Ok(PenaltyForm::Increment),
            other => Err(Error::Config(format!("unknown penalty form `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon in samples, counted after the dead time.
    pub horizon: usize,
    pub w1: f64,
    pub w2: f64,
    /// Lower bound on the Peltier command (°C).
    pub t_min: f64,
    /// Upper bound on the Peltier command (°C).
    pub t_max: f64,
    pub t_s: f64,
    pub penalty: PenaltyForm,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 20,
            w1: 1.0,
            w2: 0.01,
            t_min: 5.0,
            t_max: 60.0,
            t_s: 1.0,
            penalty: PenaltyForm::Magnitude,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        if !(self.w1.is_finite() && self.w1 > 0.0) {
            return Err(Error::invalid(format!("w1 must be > 0, got {}", self.w1)));
        }
        if !(self.w2.is_finite() && self.w2 >= 0.0) {
            return Err(Error::invalid(format!("w2 must be >= 0, got {}", self.w2)));
        }
        if !(self.t_min.is_finite() && self.t_max.is_finite() && self.t_min < self.t_max) {
            return Err(Error::invalid(format!(
                "command bounds must satisfy t_min < t_max, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if !(self.t_s.is_finite() && self.t_s > 0.0) {
            return Err(Error::invalid(format!("t_s must be > 0, got {}", self.t_s)));
        }
        Ok(())
    }

    /// Samples actually predicted for a model with `dead_time` samples of
    /// delay: once the delay reaches 20 samples the configured horizon is
    /// counted from the end of the delay, so commands keep `horizon` samples
    /// of influence inside the window.
    pub fn effective_horizon(&self, dead_time: usize) -> usize {
        if dead_time >= 20 {
            self.horizon.max(dead_time + self.horizon)
        } else {
            self.horizon
        }
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.t_min, self.t_max)
    }

    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        doc.set(format!("{prefix}.horizon"), self.horizon);
        doc.set_f64(format!("{prefix}.w1"), self.w1);
        doc.set_f64(format!("{prefix}.w2"), self.w2);
        doc.set_f64(format!("{prefix}.t_min"), self.t_min);
        doc.set_f64(format!("{prefix}.t_max"), self.t_max);
        doc.set(format!("{prefix}.penalty"), self.penalty);
    }

    /// Reads `prefix.*` keys over `self`; `t_s` is owned by the caller.
    pub fn read_kv(mut self, r: &mut KvReader, prefix: &str) -> Result<Self> {
        self.horizon = r.take_or(&format!("{prefix}.horizon"), self.horizon)?;
        self.w1 = r.take_or(&format!("{prefix}.w1"), self.w1)?;
        self.w2 = r.take_or(&format!("{prefix}.w2"), self.w2)?;
        self.t_min = r.take_or(&format!("{prefix}.t_min"), self.t_min)?;
        self.t_max = r.take_or(&format!("{prefix}.t_max"), self.t_max)?;
        self.penalty = r.take_or(&format!("{prefix}.penalty"), self.penalty)?;
        Ok(self)
    }
}

/// Affine prediction `T̂ = free + gain * u` over the horizon, plus what the
/// input penalty needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Predicted temperatures with every future command at zero.
    pub free: DVector<f64>,
    /// Sensitivity of each prediction to each future command.
    pub gain: DMatrix<f64>,
    pub setpoints: DVector<f64>,
    /// Reference level for the magnitude penalty.
    pub input_reference: f64,
    /// Most recently applied command, the origin of the increment penalty.
    pub last_input: f64,
    pub dead_time: usize,
}

impl Prediction {
    pub fn horizon(&self) -> usize {
        self.setpoints.len()
    }

    pub fn predict(&self, inputs: &[f64]) -> DVector<f64> {
        &self.free + &self.gain * DVector::from_column_slice(inputs)
    }
}

/// Builds the prediction for the recursion `T(k) = a T(k-1) + b (T_p(k-1-d) - offset)`.
///
/// `past_inputs` holds the last `d` applied commands, oldest first.
pub fn build_prediction(
    model: &DiscreteFopdt,
    t_now: f64,
    past_inputs: &[f64],
    setpoints: &[f64],
) -> Result<Prediction> {
    build_prediction_with_offset(model, t_now, past_inputs, setpoints, 0.0)
}

pub fn build_prediction_with_offset(
    model: &DiscreteFopdt,
    t_now: f64,
    past_inputs: &[f64],
    setpoints: &[f64],
    offset: f64,
) -> Result<Prediction> {
    let h = setpoints.len();
    let d = model.d;
    if h == 0 {
        return Err(Error::invalid("setpoint sequence is empty"));
    }
    if past_inputs.len() != d {
        return Err(Error::invalid(format!(
            "expected {d} past inputs for the dead time, got {}",
            past_inputs.len()
        )));
    }
    let mut free = DVector::zeros(h);
    let mut gain = DMatrix::zeros(h, h);
    let mut level = t_now;
    for i in 0..h {
        // Prediction i is T̂(k+i+1), driven by the command issued at k+i-d.
        let delayed = if i < d { past_inputs[i] } else { 0.0 };
        level = model.a * level + model.b * (delayed - offset);
        free[i] = level;
    }
    for i in 0..h {
        // Column j: command u(k+j) first acts on prediction index j + d.
        for j in 0..h {
            if j + d > i {
                break;
            }
            gain[(i, j)] = model.b * model.a.powi((i - j - d) as i32);
        }
    }
    let last_input = past_inputs.last().copied().unwrap_or(t_now);
    Ok(Prediction {
        free,
        gain,
        setpoints: DVector::from_column_slice(setpoints),
        input_reference: 0.0,
        last_input,
        dead_time: d,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    /// Optimal commands over the horizon; the first one is applied.
    pub inputs: Vec<f64>,
    pub cost: f64,
    /// Whether each command sits on a bound.
    pub active: Vec<bool>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl MpcSolution {
    pub fn first(&self) -> f64 {
        self.inputs[0]
    }
}

struct Quadratic {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
}

fn penalty_operator(qp: &Prediction, cfg: &MpcConfig) -> (DMatrix<f64>, DVector<f64>) {
    let h = qp.horizon();
    match cfg.penalty {
        PenaltyForm::Magnitude => (DMatrix::identity(h, h), DVector::from_element(h, qp.input_reference)),
        PenaltyForm::Increment => {
            let mut s = DMatrix::identity(h, h);
            for i in 1..h {
                s[(i, i - 1)] = -1.0;
            }
            let mut target = DVector::zeros(h);
            target[0] = qp.last_input;
            (s, target)
        }
    }
}

fn quadratic(qp: &Prediction, cfg: &MpcConfig) -> Quadratic {
    let (s, target) = penalty_operator(qp, cfg);
    let g = &qp.gain;
    let hessian = (g.transpose() * g * cfg.w1 + s.transpose() * &s * cfg.w2) * 2.0;
    let linear = (g.transpose() * (&qp.free - &qp.setpoints) * cfg.w1 - s.transpose() * target * cfg.w2) * 2.0;
    Quadratic { hessian, linear }
}

/// Cost of a command sequence: tracking plus weighted input penalty.
pub fn mpc_cost(qp: &Prediction, cfg: &MpcConfig, inputs: &[f64]) -> f64 {
    let tracking = (qp.predict(inputs) - &qp.setpoints).norm_squared();
    let (s, target) = penalty_operator(qp, cfg);
    let penalty = (s * DVector::from_column_slice(inputs) - target).norm_squared();
    cfg.w1 * tracking + cfg.w2 * penalty
}

pub fn solve_mpc(qp: &Prediction, cfg: &MpcConfig) -> Result<MpcSolution> {
    solve_mpc_from(qp, cfg, None)
}

/// Solves from an optional warm start (typically the previous solution
/// shifted by one sample).
pub fn solve_mpc_from(qp: &Prediction, cfg: &MpcConfig, warm: Option<&[f64]>) -> Result<MpcSolution> {
    solve_capped(qp, cfg, warm, MAX_ITERATIONS)
}

fn solve_capped(qp: &Prediction, cfg: &MpcConfig, warm: Option<&[f64]>, cap: usize) -> Result<MpcSolution> {
    cfg.validate()?;
    let h = qp.horizon();
    if qp.free.len() != h || qp.gain.nrows() != h || qp.gain.ncols() != h {
        return Err(Error::invalid("prediction matrices do not match the horizon"));
    }
    let quad = quadratic(qp, cfg);
    let (lo, hi) = (cfg.t_min, cfg.t_max);
    let project = |v: f64| v.clamp(lo, hi);

    let mut x = DVector::from_fn(h, |i, _| {
        let start = warm.and_then(|w| w.get(i).copied()).unwrap_or(match cfg.penalty {
            PenaltyForm::Magnitude => qp.input_reference,
            PenaltyForm::Increment => qp.last_input,
        });
        project(start)
    });

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cap {
        let grad = &quad.hessian * &x + &quad.linear;
        residual = x
            .iter()
            .zip(grad.iter())
            .map(|(&xi, &gi)| (xi - project(xi - gi)).abs())
            .fold(0.0, f64::max);
        if residual < KKT_TOLERANCE {
            break;
        }
        // Cauchy step length on the components free to move.
        let free_grad = DVector::from_fn(h, |i, _| {
            let g = grad[i];
            if (x[i] <= lo && g > 0.0) || (x[i] >= hi && g < 0.0) {
                0.0
            } else {
                g
            }
        });
        let curv = free_grad.dot(&(&quad.hessian * &free_grad));
        let scale = if curv > 0.0 {
            free_grad.norm_squared() / curv
        } else {
            1.0
        };
        let dir = DVector::from_fn(h, |i, _| project(x[i] - scale * grad[i]) - x[i]);
        let slope = grad.dot(&dir);
        if slope >= 0.0 {
            // Stalled at working precision without meeting the tolerance.
            return Err(Error::Convergence { iterations, residual });
        }
        let dir_curv = dir.dot(&(&quad.hessian * &dir));
        let alpha = if dir_curv > 0.0 {
            (-slope / dir_curv).min(1.0)
        } else {
            1.0
        };
        x += dir * alpha;
        x.apply(|v| *v = project(*v));
        iterations += 1;
    }
    if residual >= KKT_TOLERANCE {
        return Err(Error::Convergence { iterations, residual });
    }
    let inputs: Vec<f64> = x.iter().copied().collect();
    let active = inputs.iter().map(|&u| u <= lo || u >= hi).collect();
    let cost = mpc_cost(qp, cfg, &inputs).max(0.0);
    Ok(MpcSolution {
        inputs,
        cost,
        active,
        iterations,
        kkt_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(a: f64, d: usize) -> DiscreteFopdt {
        DiscreteFopdt { a, b: 1.0 - a, d, t_s: 1.0 }
    }

    #[test]
    fn one_step_prediction_without_delay() {
        let m = model(0.9, 0);
        let qp = build_prediction(&m, 20.0, &[], &[25.0]).unwrap();
        let p = qp.predict(&[30.0]);
        assert!((p[0] - (0.9 * 20.0 + 0.1 * 30.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_inputs_hold_constant_predictions() {
        let m = model(0.95, 3);
        let qp = build_prediction(&m, 24.0, &[24.0; 3], &[24.0; 8]).unwrap();
        for v in qp.predict(&[24.0; 8]).iter() {
            assert!((v - 24.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_time_rows_ignore_future_commands() {
        let m = model(0.9, 4);
        let qp = build_prediction(&m, 20.0, &[21.0, 22.0, 23.0, 24.0], &[25.0; 6]).unwrap();
        for i in 0..4 {
            for j in 0..6 {
                assert_eq!(qp.gain[(i, j)], 0.0);
            }
        }
        assert!(qp.gain[(4, 0)] > 0.0);
    }

    #[test]
    fn wrong_lengths_rejected() {
        let m = model(0.9, 2);
        assert!(build_prediction(&m, 20.0, &[20.0], &[21.0; 3]).is_err());
        assert!(build_prediction(&m, 20.0, &[20.0; 2], &[]).is_err());
    }

    #[test]
    fn equilibrium_without_penalty_is_free() {
        let m = model(0.9, 0);
        let cfg = MpcConfig {
            horizon: 5,
            w2: 0.0,
            ..MpcConfig::default()
        };
        let qp = build_prediction(&m, 22.0, &[], &[22.0; 5]).unwrap();
        let sol = solve_mpc(&qp, &cfg).unwrap();
        assert!((sol.first() - 22.0).abs() < 1e-6);
        assert!(sol.cost < 1e-12);
        assert!(sol.active.iter().all(|a| !a));
    }

    #[test]
    fn command_clamps_at_upper_bound() {
        let m = model(0.99, 0);
        let cfg = MpcConfig {
            horizon: 5,
            w2: 0.0,
            ..MpcConfig::default()
        };
        let qp = build_prediction(&m, 20.0, &[], &[40.0; 5]).unwrap();
        let sol = solve_mpc(&qp, &cfg).unwrap();
        assert_eq!(sol.first(), cfg.t_max);
        assert!(sol.active[0]);
    }

    #[test]
    fn delay_beyond_horizon_minimizes_penalty_only() {
        let m = model(0.9, 6);
        let cfg = MpcConfig {
            horizon: 4,
            w2: 0.5,
            ..MpcConfig::default()
        };
        let mut qp = build_prediction(&m, 20.0, &[30.0; 6], &[25.0; 4]).unwrap();
        qp.input_reference = 2.0;
        let sol = solve_mpc(&qp, &cfg).unwrap();
        // Reference lies below t_min, so the penalty minimizer is the bound.
        assert!(sol.inputs.iter().all(|&u| u == cfg.t_min));
    }

    #[test]
    fn heavy_increment_penalty_freezes_command() {
        let m = model(0.95, 2);
        let cfg = MpcConfig {
            horizon: 6,
            w2: 1e6,
            penalty: PenaltyForm::Increment,
            ..MpcConfig::default()
        };
        let qp = build_prediction(&m, 20.0, &[27.0, 27.0], &[30.0; 6]).unwrap();
        let sol = solve_mpc(&qp, &cfg).unwrap();
        for u in &sol.inputs {
            assert!((u - 27.0).abs() < 1e-3, "{u}");
        }
    }

    #[test]
    fn iteration_cap_reports_convergence_error() {
        let m = model(0.999, 0);
        let cfg = MpcConfig {
            horizon: 30,
            w2: 1e-6,
            ..MpcConfig::default()
        };
        let sp: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 30.0 } else { 10.0 }).collect();
        let qp = build_prediction(&m, 20.0, &[], &sp).unwrap();
        match solve_capped(&qp, &cfg, None, 3) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual >= KKT_TOLERANCE);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn effective_horizon_rule() {
        let cfg = MpcConfig::default();
        assert_eq!(cfg.effective_horizon(0), 20);
        assert_eq!(cfg.effective_horizon(19), 20);
        assert_eq!(cfg.effective_horizon(30), 50);
        assert_eq!(cfg.effective_horizon(45), 65);
    }
}
