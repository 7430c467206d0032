//! Declarative experiment descriptions and the built-in protocols.

use crate::controller::LoopConfig;
use crate::detect::DetectionConfig;
use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvReader};
use crate::mpc::MpcConfig;
use crate::params::{AmbientConfig, ControlTarget, Mode, PlantParams};
use crate::plant::{ContactEvent, ContactKind, HeatLoad, Plant, PlantState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetpointStep {
    /// Desired temperature (°C).
    pub value: f64,
    /// Hold duration (s).
    pub hold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub setpoints: Vec<SetpointStep>,
    pub target: ControlTarget,
    pub contacts: Vec<ContactEvent>,
    pub ambient: AmbientConfig,
    pub controller: MpcConfig,
    pub loop_cfg: LoopConfig,
    pub detection: DetectionConfig,
    /// Physical constants of the simulated plant.
    pub plant: PlantParams,
    /// Starting temperature of the pipe and cover (°C).
    pub initial_temp: f64,
    /// Start from the state that the pumped loop holds at `initial_temp`
    /// instead of every node at `initial_temp`.
    pub settled_start: bool,
    /// Peltier surface lag (s).
    pub peltier_lag: f64,
    /// Control and observer sample time (s).
    pub t_s: f64,
    /// Plant integration step (s).
    pub dt: f64,
    pub duration: f64,
    /// Standard deviation of additive measurement noise (K).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// A scenario with default settings for the given schedule.
    pub fn new(name: &str, target: ControlTarget, plant_mode: Mode, setpoints: &[(f64, f64)]) -> Self {
        let ambient = AmbientConfig::default();
        let setpoints: Vec<SetpointStep> = setpoints
            .iter()
            .map(|&(value, hold)| SetpointStep { value, hold })
            .collect();
        let duration = setpoints.iter().map(|s| s.hold).sum();
        ScenarioSpec {
            name: name.to_string(),
            setpoints,
            target,
            contacts: Vec::new(),
            ambient,
            controller: MpcConfig::default(),
            loop_cfg: LoopConfig::default(),
            detection: DetectionConfig::default(),
            plant: PlantParams::preset(plant_mode),
            initial_temp: ambient.t_amb,
            settled_start: false,
            peltier_lag: 2.0,
            t_s: 1.0,
            dt: 0.1,
            duration,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_contact(mut self, kind: ContactKind, start: f64, duration: f64) -> Self {
        self.contacts
            .push(ContactEvent::new(kind, start, duration, self.ambient.t_skin));
        self
    }

    /// Setpoint in force at time `t`; the last value holds past the schedule.
    pub fn setpoint_at(&self, t: f64) -> f64 {
        let mut end = 0.0;
        for s in &self.setpoints {
            end += s.hold;
            if t < end - 1e-9 {
                return s.value;
            }
        }
        self.setpoints.last().map_or(self.initial_temp, |s| s.value)
    }

    /// Start times of each setpoint segment.
    pub fn segment_bounds(&self) -> Vec<(f64, f64)> {
        let mut start = 0.0;
        self.setpoints
            .iter()
            .map(|s| {
                let b = (start, start + s.hold);
                start += s.hold;
                b
            })
            .collect()
    }

    pub fn n_samples(&self) -> usize {
        (self.duration / self.t_s).round() as usize
    }

    pub fn substeps(&self) -> usize {
        (self.t_s / self.dt).round() as usize
    }

    /// Plant state at `t = 0`.
    pub fn initial_state(&self) -> PlantState {
        if !self.settled_start {
            return PlantState::uniform(self.initial_temp);
        }
        let p = &self.plant;
        let q_w = (self.initial_temp - self.ambient.t_amb) / p.r_aw;
        let t_co = self.initial_temp + p.r_w * q_w;
        PlantState {
            t_p: t_co + p.r_co * q_w,
            t_co,
            t_w: self.initial_temp,
            t_c: self.initial_temp,
            // The loop sits at its setpoint, so the pump has just stopped.
            pump_on: false,
            t: 0.0,
        }
    }

    pub fn plant(&self) -> Plant {
        Plant::new(self.plant, self.ambient).with_peltier_lag(self.peltier_lag)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() || self.name.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("scenario name `{}` must be a non-empty word", self.name)));
        }
        if self.setpoints.is_empty() {
            return Err(Error::invalid("setpoint schedule is empty"));
        }
        for (i, s) in self.setpoints.iter().enumerate() {
            if !(s.hold.is_finite() && s.hold > 0.0) {
                return Err(Error::invalid(format!("setpoint {i}: hold must be > 0, got {}", s.hold)));
            }
            if !s.value.is_finite() {
                return Err(Error::invalid(format!("setpoint {i}: value must be finite")));
            }
        }
        if !(self.t_s.is_finite() && self.t_s > 0.0) {
            return Err(Error::invalid(format!("t_s must be > 0, got {}", self.t_s)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        let ratio = self.t_s / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(format!("dt = {} does not divide t_s = {}", self.dt, self.t_s)));
        }
        if ratio.round() < 10.0 {
            return Err(Error::invalid(format!("dt = {} must be at most t_s / 10", self.dt)));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::invalid(format!("duration must be >= 0, got {}", self.duration)));
        }
        if !(self.initial_temp.is_finite()) {
            return Err(Error::invalid("initial temperature must be finite"));
        }
        if !(self.peltier_lag.is_finite() && self.peltier_lag >= 0.0) {
            return Err(Error::invalid("peltier lag must be >= 0"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        self.ambient.validate()?;
        self.plant.validate()?;
        self.controller.validate()?;
        self.loop_cfg.validate()?;
        self.detection.validate()?;
        if (self.controller.t_s - self.t_s).abs() > 0.0 {
            return Err(Error::invalid("controller t_s must equal the scenario t_s"));
        }
        let plant = self.plant();
        for (i, c) in self.contacts.iter().enumerate() {
            c.validate()?;
            if c.end() > self.duration + 1e-9 {
                return Err(Error::invalid(format!(
                    "contact {i} ends at {} s, after the scenario ({} s)",
                    c.end(),
                    self.duration
                )));
            }
            let load = HeatLoad::Contact {
                conductance: c.conductance,
                t_skin: c.t_skin,
            };
            if self.dt > plant.max_stable_dt(&load) {
                return Err(Error::invalid(format!(
                    "dt = {} exceeds the stability limit {:.4} s during contact {i}",
                    self.dt,
                    plant.max_stable_dt(&load)
                )));
            }
        }
        if self.dt > plant.max_stable_dt(&HeatLoad::Fixed(0.0)) {
            return Err(Error::invalid(format!(
                "dt = {} exceeds the plant stability limit {:.4} s",
                self.dt,
                plant.max_stable_dt(&HeatLoad::Fixed(0.0))
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("name", &self.name);
        doc.set("target", self.target);
        doc.set_f64("t_s", self.t_s);
        doc.set_f64("dt", self.dt);
        doc.set_f64("duration", self.duration);
        for (i, s) in self.setpoints.iter().enumerate() {
            doc.set_f64(format!("setpoint.{i}.value"), s.value);
            doc.set_f64(format!("setpoint.{i}.hold"), s.hold);
        }
        for (i, c) in self.contacts.iter().enumerate() {
            doc.set(format!("contact.{i}.kind"), c.kind);
            doc.set_f64(format!("contact.{i}.start"), c.start);
            doc.set_f64(format!("contact.{i}.duration"), c.duration);
            doc.set_f64(format!("contact.{i}.conductance"), c.conductance);
            doc.set_f64(format!("contact.{i}.t_skin"), c.t_skin);
        }
        doc.set_f64("ambient.t_amb", self.ambient.t_amb);
        doc.set_f64("ambient.q_a", self.ambient.q_a);
        doc.set_f64("ambient.t_skin", self.ambient.t_skin);
        self.controller.write_kv(&mut doc, "controller");
        self.loop_cfg.write_kv(&mut doc);
        self.detection.write_kv(&mut doc);
        for (k, v) in self.plant.to_kv().entries() {
            doc.set(format!("plant.{k}"), v);
        }
        doc.set_f64("plant.initial_temp", self.initial_temp);
        doc.set("plant.settled_start", self.settled_start);
        doc.set_f64("plant.peltier_lag", self.peltier_lag);
        doc.set_f64("noise.sigma", self.noise_sigma);
        doc.set("noise.seed", self.seed);
        doc
    }

    /// Reads a scenario. Missing keys take the defaults of
    /// [`ScenarioSpec::new`]; unknown keys are an error.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut r = KvReader::new(doc.clone());
        let name: String = r.require("name")?;
        let target: ControlTarget = r.take_or("target", ControlTarget::CoverTemp)?;

        let mut setpoints = Vec::new();
        for i in 0.. {
            let Some(value) = r.take_parsed::<f64>(&format!("setpoint.{i}.value"))? else {
                break;
            };
            let hold = r.require(&format!("setpoint.{i}.hold"))?;
            setpoints.push((value, hold));
        }

        let initial_temp: Option<f64> = r.take_parsed("plant.initial_temp")?;
        let peltier_lag: Option<f64> = r.take_parsed("plant.peltier_lag")?;
        let settled_start: Option<bool> = r.take_parsed("plant.settled_start")?;
        let mut plant_doc = KvDoc::new();
        for key in r.keys_with_prefix("plant") {
            let value = r.take(&key).unwrap_or_default();
            plant_doc.set(&key["plant.".len()..], value);
        }
        let mode: Mode = match plant_doc.get("mode") {
            Some(m) => m.parse()?,
            None => Mode::Heat,
        };
        let mut spec = ScenarioSpec::new(&name, target, mode, &setpoints);
        // A bare mode selects the preset; anything more must be a full set.
        if plant_doc.entries().any(|(k, _)| k != "mode") {
            spec.plant = PlantParams::from_kv(&plant_doc)?;
        }
        spec.peltier_lag = peltier_lag.unwrap_or(spec.peltier_lag);
        spec.settled_start = settled_start.unwrap_or(spec.settled_start);

        spec.t_s = r.take_or("t_s", spec.t_s)?;
        spec.dt = r.take_or("dt", spec.dt)?;
        spec.duration = r.take_or("duration", spec.duration)?;

        spec.ambient.t_amb = r.take_or("ambient.t_amb", spec.ambient.t_amb)?;
        spec.ambient.q_a = r.take_or("ambient.q_a", spec.ambient.q_a)?;
        spec.ambient.t_skin = r.take_or("ambient.t_skin", spec.ambient.t_skin)?;
        spec.initial_temp = initial_temp.unwrap_or(spec.ambient.t_amb);

        for i in 0.. {
            let Some(kind) = r.take_parsed::<ContactKind>(&format!("contact.{i}.kind"))? else {
                break;
            };
            let start = r.require(&format!("contact.{i}.start"))?;
            let duration = r.require(&format!("contact.{i}.duration"))?;
            let mut ev = ContactEvent::new(kind, start, duration, spec.ambient.t_skin);
            ev.conductance = r.take_or(&format!("contact.{i}.conductance"), ev.conductance)?;
            ev.t_skin = r.take_or(&format!("contact.{i}.t_skin"), ev.t_skin)?;
            spec.contacts.push(ev);
        }

        spec.controller = spec.controller.read_kv(&mut r, "controller")?;
        spec.controller.t_s = spec.t_s;
        spec.loop_cfg = spec.loop_cfg.read_kv(&mut r)?;
        spec.detection = spec.detection.read_kv(&mut r)?;
        spec.noise_sigma = r.take_or("noise.sigma", spec.noise_sigma)?;
        spec.seed = r.take_or("noise.seed", spec.seed)?;

        let stray: Vec<String> = r
            .keys_with_prefix("setpoint")
            .into_iter()
            .chain(r.keys_with_prefix("contact"))
            .collect();
        if let Some(k) = stray.first() {
            return Err(Error::Config(format!("`{k}` is not part of a contiguous 0-based list")));
        }
        r.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text)?)
    }
}

/// Experiment protocols: the cover-temperature staircases and the
/// pipe-temperature contact trials.
pub fn builtin_scenarios() -> Vec<ScenarioSpec> {
    let exp1_heat = ScenarioSpec::new(
        "exp1_heat",
        ControlTarget::CoverTemp,
        Mode::Heat,
        &[(23.0, 900.0), (25.0, 900.0), (27.0, 900.0)],
    );
    let exp1_cool = ScenarioSpec::new(
        "exp1_cool",
        ControlTarget::CoverTemp,
        Mode::Cool,
        &[(21.5, 900.0), (21.0, 900.0), (20.0, 900.0)],
    );
    let mut exp1_heat_after_cool = ScenarioSpec::new(
        "exp1_heat_after_cool",
        ControlTarget::CoverTemp,
        Mode::Heat,
        &[(21.5, 300.0), (23.0, 900.0), (24.0, 900.0)],
    );
    exp1_heat_after_cool.initial_temp = 25.0;

    let exp2 = |name: &str| {
        let mut s = ScenarioSpec::new(
            name,
            ControlTarget::PipeTemp,
            Mode::Heat,
            &[(23.0, 90.0), (24.0, 90.0), (25.0, 90.0)],
        );
        s.initial_temp = 23.0;
        s.settled_start = true;
        s
    };
    let exp2_grasp = exp2("exp2_grasp").with_contact(ContactKind::Grasp, 130.0, 5.0);
    let exp2_softtouch = exp2("exp2_softtouch").with_contact(ContactKind::SoftTouch, 130.0, 5.0);
    let exp2_nocontact = exp2("exp2_nocontact");

    vec![
        exp1_heat,
        exp1_cool,
        exp1_heat_after_cool,
        exp2_grasp,
        exp2_softtouch,
        exp2_nocontact,
    ]
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioSpec> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
}
