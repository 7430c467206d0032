//! Closed-loop display controller: MPC command plus pump hysteresis.

use std::collections::VecDeque;

use crate::error::Result;
use crate::kv::{KvDoc, KvReader};
use crate::model::{discretize_fopdt, DiscreteFopdt};
use crate::mpc::{build_prediction_with_offset, solve_mpc_from, MpcConfig, MpcSolution, PenaltyForm};
use crate::params::{select_mode, AmbientConfig, ControlTarget, Mode, PlantParams};
use crate::pump::PumpHysteresis;

/// Tuning of the parts of the loop outside the optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopConfig {
    /// Pump on threshold on |measurement - setpoint| (K).
    pub on_band: f64,
    /// Pump off threshold (K).
    pub off_band: f64,
    /// Deadband of the heat/cool parameter switch (K).
    pub mode_deadband: f64,
    /// Time constant of the loss-offset estimator (s); 0 disables it.
    pub offset_tau: f64,
    /// Add the steady-state loss of the pumped network to the display
    /// model's offset.
    pub feedforward: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            on_band: 0.3,
            off_band: 0.1,
            mode_deadband: 0.1,
            offset_tau: 60.0,
            feedforward: true,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(self.off_band >= 0.0 && self.off_band <= self.on_band && self.on_band.is_finite()) {
            return Err(Error::invalid(format!(
                "pump bands must satisfy 0 <= off_band <= on_band, got on {} off {}",
                self.on_band, self.off_band
            )));
        }
        if !(self.mode_deadband >= 0.0 && self.mode_deadband.is_finite()) {
            return Err(Error::invalid("mode deadband must be >= 0"));
        }
        if !(self.offset_tau >= 0.0 && self.offset_tau.is_finite()) {
            return Err(Error::invalid("offset_tau must be >= 0"));
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc) {
        doc.set_f64("pump.on_band", self.on_band);
        doc.set_f64("pump.off_band", self.off_band);
        doc.set_f64("controller.mode_deadband", self.mode_deadband);
        doc.set_f64("controller.offset_tau", self.offset_tau);
        doc.set("controller.feedforward", self.feedforward);
    }

    pub fn read_kv(mut self, r: &mut KvReader) -> Result<Self> {
        self.on_band = r.take_or("pump.on_band", self.on_band)?;
        self.off_band = r.take_or("pump.off_band", self.off_band)?;
        self.mode_deadband = r.take_or("controller.mode_deadband", self.mode_deadband)?;
        self.offset_tau = r.take_or("controller.offset_tau", self.offset_tau)?;
        self.feedforward = r.take_or("controller.feedforward", self.feedforward)?;
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput {
    pub command: f64,
    pub pump_on: bool,
    pub mode: Mode,
    pub solution: MpcSolution,
}

/// Controller state carried between samples.
#[derive(Clone, Debug)]
pub struct Controller {
    cfg: MpcConfig,
    loop_cfg: LoopConfig,
    target: ControlTarget,
    mode: Mode,
    params: PlantParams,
    model: DiscreteFopdt,
    /// Applied commands, most recent last.
    history: VecDeque<f64>,
    history_len: usize,
    pump: PumpHysteresis,
    /// Estimated part of the display model's loss term (K).
    offset: f64,
    t_amb: f64,
    last_measurement: Option<f64>,
    warm: Vec<f64>,
}

impl Controller {
    /// `ambient.q_a` is the nominal surface loss (W), scaled by the mode's
    /// `r_a` into the initial offset estimate.
    pub fn new(
        cfg: MpcConfig,
        loop_cfg: LoopConfig,
        target: ControlTarget,
        mode: Mode,
        ambient: &AmbientConfig,
    ) -> Result<Self> {
        let q_a = ambient.q_a;
        cfg.validate()?;
        loop_cfg.validate()?;
        let params = PlantParams::preset_for(mode, target);
        let model = discretize_fopdt(&params, cfg.t_s)?;
        let history_len = [Mode::Heat, Mode::Cool]
            .iter()
            .map(|&m| discretize_fopdt(&PlantParams::preset_for(m, target), cfg.t_s).map(|f| f.d))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max()
            .unwrap_or(0)
            + 1;
        Ok(Controller {
            cfg,
            loop_cfg,
            target,
            mode,
            params,
            model,
            history: VecDeque::with_capacity(history_len + 1),
            history_len,
            pump: PumpHysteresis::new(loop_cfg.on_band, loop_cfg.off_band),
            offset: params.r_a * q_a,
            t_amb: ambient.t_amb,
            last_measurement: None,
            warm: Vec::new(),
        })
    }

    /// Starts from a settled loop: `command` has been applied long enough
    /// to hold the output at `output`.
    pub fn assume_steady(&mut self, command: f64, output: f64) {
        self.offset = command - output - self.feedforward(output);
        self.history.clear();
        self.history.extend(std::iter::repeat_n(self.cfg.clamp(command), self.history_len));
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn target(&self) -> ControlTarget {
        self.target
    }

    /// Loss term of the display model at output level `level` (K).
    pub fn offset_at(&self, level: f64) -> f64 {
        self.feedforward(level) + self.offset
    }

    /// Pumped steady state of the network: holding `level` against the
    /// ambient loss needs the Peltier surface `k` times further from ambient,
    /// `k = (R_w + R_co + R_aw) / R_aw`.
    fn feedforward(&self, level: f64) -> f64 {
        if !self.loop_cfg.feedforward {
            return 0.0;
        }
        let p = &self.params;
        (p.r_w + p.r_co) / p.r_aw * (level - self.t_amb)
    }

    pub fn pump_on(&self) -> bool {
        self.pump.state
    }

    pub fn model(&self) -> &DiscreteFopdt {
        &self.model
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    /// Samples of setpoint preview the next step will read.
    pub fn horizon(&self) -> usize {
        self.cfg.effective_horizon(self.model.d)
    }

    fn delayed_input(&self, lag: usize) -> Option<f64> {
        let n = self.history.len();
        (lag < n).then(|| self.history[n - 1 - lag])
    }

    fn update_offset(&mut self, y: f64) {
        let Some(prev) = self.last_measurement else {
            return;
        };
        if self.loop_cfg.offset_tau <= 0.0 || !self.pump.state {
            return;
        }
        // The command that drove the last interval was issued d samples earlier.
        let Some(u) = self.delayed_input(self.model.d) else {
            return;
        };
        let m = &self.model;
        let observed = u - (y - m.a * prev) / m.b - self.feedforward(y);
        let beta = self.cfg.t_s / (self.loop_cfg.offset_tau + self.cfg.t_s);
        self.offset += beta * (observed - self.offset);
    }

    fn switch_mode(&mut self, mode: Mode) -> Result<()> {
        if mode == self.mode {
            return Ok(());
        }
        let params = PlantParams::preset_for(mode, self.target);
        self.model = discretize_fopdt(&params, self.cfg.t_s)?;
        self.params = params;
        self.mode = mode;
        self.warm.clear();
        Ok(())
    }

    /// One control period. `setpoints[0]` is the current setpoint; later
    /// entries preview the schedule and the last one is repeated as needed.
    /// `t_w` drives the heat/cool parameter switch.
    pub fn step(&mut self, measurement: f64, t_w: f64, setpoints: &[f64]) -> Result<ControlOutput> {
        use crate::error::Error;
        let r_now = *setpoints
            .first()
            .ok_or_else(|| Error::invalid("setpoint preview is empty"))?;
        if !measurement.is_finite() {
            return Err(Error::invalid(format!("measurement is not finite: {measurement}")));
        }

        self.update_offset(measurement);
        self.last_measurement = Some(measurement);
        let pump_on = self.pump.update(measurement, r_now);
        self.switch_mode(select_mode(self.mode, r_now, t_w, self.loop_cfg.mode_deadband))?;

        if self.history.is_empty() {
            let hold = self.cfg.clamp(measurement + self.offset_at(measurement));
            self.history.extend(std::iter::repeat_n(hold, self.history_len));
        }
        let d = self.model.d;
        let past: Vec<f64> = self.history.iter().skip(self.history.len() - d).copied().collect();
        let h = self.horizon();
        let preview: Vec<f64> = (1..=h)
            .map(|i| setpoints.get(i).or(setpoints.last()).copied().unwrap_or(r_now))
            .collect();
        let target = preview[h - 1];
        let offset = self.offset_at(target);
        let mut qp = build_prediction_with_offset(&self.model, measurement, &past, &preview, offset)?;
        qp.input_reference = target + offset;
        if self.cfg.penalty == PenaltyForm::Increment {
            qp.last_input = *self.history.back().unwrap_or(&qp.last_input);
        }

        let warm = (self.warm.len() == h).then(|| {
            let mut w = self.warm[1..].to_vec();
            w.push(self.warm[h - 1]);
            w
        });
        let solution = solve_mpc_from(&qp, &self.cfg, warm.as_deref())?;
        let command = self.cfg.clamp(solution.first());
        self.warm = solution.inputs.clone();

        self.history.push_back(command);
        while self.history.len() > self.history_len {
            self.history.pop_front();
        }
        Ok(ControlOutput {
            command,
            pump_on,
            mode: self.mode,
            solution,
        })
    }
}

/// Functional form of [`Controller::step`].
pub fn control_step(
    ctrl: &mut Controller,
    measurement: f64,
    t_w: f64,
    setpoints: &[f64],
) -> Result<(f64, bool)> {
    let out = ctrl.step(measurement, t_w, setpoints)?;
    Ok((out.command, out.pump_on))
}
