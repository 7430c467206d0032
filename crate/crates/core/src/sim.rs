//! Lockstep simulation of plant, controller and observer.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::observer::build_observer;
use crate::params::{select_mode, ControlTarget, Mode};
use crate::plant::{contact_heat_flow, HeatLoad};
use crate::scenario::ScenarioSpec;

pub const CSV_HEADER: &str = "t,T_p_cmd,T_p,T_co,T_w,T_c,pump_on,q_w,q_i_true,q_i_hat,contact_flag";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub t_p_cmd: f64,
    pub t_p: f64,
    pub t_co: f64,
    pub t_w: f64,
    pub t_c: f64,
    pub pump_on: bool,
    pub q_w: f64,
    pub q_i_true: f64,
    pub q_i_hat: f64,
    pub contact_flag: bool,
}

impl TraceRow {
    /// The regulated temperature for `target`.
    pub fn measured(&self, target: ControlTarget) -> f64 {
        match target {
            ControlTarget::CoverTemp => self.t_c,
            ControlTarget::PipeTemp => self.t_w,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SimTrace {
    pub t_s: f64,
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.6},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.t_p_cmd,
                r.t_p,
                r.t_co,
                r.t_w,
                r.t_c,
                u8::from(r.pump_on),
                r.q_w,
                r.q_i_true,
                r.q_i_hat,
                u8::from(r.contact_flag)
            );
        }
        out
    }

    /// Parses a trace. Columns are located by header name, so extra columns
    /// are ignored and missing ones are a format error.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("trace is empty".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        let names = CSV_HEADER.split(',').collect::<Vec<_>>();
        let mut idx = [0usize; 11];
        for (slot, name) in idx.iter_mut().zip(&names) {
            *slot = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Format(format!("missing column `{name}`")))?;
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let mut v = [0.0f64; 11];
            for (k, &col) in idx.iter().enumerate() {
                let cell = cells
                    .get(col)
                    .ok_or_else(|| Error::Format(format!("row {}: too few columns", n + 2)))?;
                v[k] = cell
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: bad number `{cell}` in `{}`", n + 2, names[k])))?;
            }
            rows.push(TraceRow {
                t: v[0],
                t_p_cmd: v[1],
                t_p: v[2],
                t_co: v[3],
                t_w: v[4],
                t_c: v[5],
                pump_on: v[6] != 0.0,
                q_w: v[7],
                q_i_true: v[8],
                q_i_hat: v[9],
                contact_flag: v[10] != 0.0,
            });
        }
        let t_s = if rows.len() >= 2 { rows[1].t - rows[0].t } else { 0.0 };
        Ok(SimTrace { t_s, rows })
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }
}

/// Runs a scenario to completion. Identical specs give bit-identical traces.
pub fn simulate(spec: &ScenarioSpec) -> Result<SimTrace> {
    spec.validate()?;
    let n = spec.n_samples();
    let sub = spec.substeps();
    let dt = spec.t_s / sub as f64;
    let plant = spec.plant();
    let mut state = spec.initial_state();

    let first_sp = spec.setpoint_at(0.0);
    let mode = select_mode(Mode::Heat, first_sp, spec.initial_temp, 0.0);
    let mut cfg = spec.controller;
    cfg.t_s = spec.t_s;
    let mut ctrl = Controller::new(cfg, spec.loop_cfg, spec.target, mode, &spec.ambient)?;
    if spec.settled_start {
        ctrl.assume_steady(state.t_p, spec.initial_temp);
    }
    let mut observer = build_observer(&spec.plant, spec.t_s)?;
    let net0 = plant.flows(&state);
    observer.prime_with_input(state.t_w, net0.q_w + net0.q_aw)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let sample = |rng: &mut ChaCha8Rng| {
        if spec.noise_sigma > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        }
    };

    let mut rows = Vec::with_capacity(n);
    let mut preview = Vec::new();
    for k in 0..n {
        let t = k as f64 * spec.t_s;
        let t_w_meas = state.t_w + sample(&mut rng);
        let t_c_meas = state.t_c + sample(&mut rng);
        let t_co_meas = state.t_co + sample(&mut rng);
        let y = match spec.target {
            ControlTarget::CoverTemp => t_c_meas,
            ControlTarget::PipeTemp => t_w_meas,
        };

        preview.clear();
        preview.extend((0..=ctrl.horizon()).map(|i| spec.setpoint_at(t + i as f64 * spec.t_s)));
        let out = ctrl.step(y, t_w_meas, &preview).map_err(|e| e.at_time(t))?;
        let q_hat = observer.step(t_w_meas, t_co_meas, out.pump_on, &spec.ambient);

        let q_true: f64 = spec.contacts.iter().map(|c| contact_heat_flow(c, state.t_c, t)).sum();
        let in_contact = spec.contacts.iter().any(|c| c.is_active(t));
        let mut now = state;
        now.pump_on = out.pump_on;
        rows.push(TraceRow {
            t,
            t_p_cmd: out.command,
            t_p: if spec.peltier_lag > 0.0 { state.t_p } else { out.command },
            t_co: state.t_co,
            t_w: state.t_w,
            t_c: state.t_c,
            pump_on: out.pump_on,
            q_w: plant.flows(&now).q_w,
            q_i_true: q_true,
            q_i_hat: q_hat,
            contact_flag: in_contact,
        });

        for j in 0..sub {
            let ts = t + j as f64 * dt;
            let load = spec
                .contacts
                .iter()
                .find(|c| c.covers_step(ts, dt))
                .map_or(HeatLoad::Fixed(0.0), |c| HeatLoad::Contact {
                    conductance: c.conductance,
                    t_skin: c.t_skin,
                });
            state = plant
                .step(&state, out.command, out.pump_on, load, dt)
                .map_err(|e| e.at_time(ts))?;
        }
        state.t = (k + 1) as f64 * spec.t_s;
    }
    Ok(SimTrace { t_s: spec.t_s, rows })
}
