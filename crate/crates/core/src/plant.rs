//! Fixed-step simulation of the closed water circuit: Peltier surface,
//! copper tank, water pipe and cover, with ambient loss and contact heat.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{AmbientConfig, PlantParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantState {
    /// Peltier surface temperature (°C).
    pub t_p: f64,
    /// Copper tank temperature (°C).
    pub t_co: f64,
    /// Water-pipe temperature (°C).
    pub t_w: f64,
    /// Cover temperature (°C).
    pub t_c: f64,
    pub pump_on: bool,
    /// Simulation clock (s).
    pub t: f64,
}

impl PlantState {
    /// Every node at `temp`, pump off, clock at zero.
    pub fn uniform(temp: f64) -> Self {
        PlantState {
            t_p: temp,
            t_co: temp,
            t_w: temp,
            t_c: temp,
            pump_on: false,
            t: 0.0,
        }
    }

    fn is_finite(&self) -> bool {
        self.t_p.is_finite() && self.t_co.is_finite() && self.t_w.is_finite() && self.t_c.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContactKind {
    Grasp,
    SoftTouch,
}

impl ContactKind {
    /// Default skin-to-cover conductance (W/K). A grasp covers a wider area
    /// than a soft touch.
    pub fn default_conductance(self) -> f64 {
        match self {
            ContactKind::Grasp => 0.8,
            ContactKind::SoftTouch => 0.2,
        }
    }
}

impl fmt::Display for ContactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContactKind::Grasp => "grasp",
            ContactKind::SoftTouch => "soft_touch",
        })
    }
}

impl FromStr for ContactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grasp" => Ok(ContactKind::Grasp),
            "soft_touch" | "softtouch" | "touch" => Ok(ContactKind::SoftTouch),
            other => Err(Error::Config(format!("unknown contact kind `{other}`"))),
        }
    }
}

/// A hand resting on the cover for a fixed window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactEvent {
    pub start: f64,
    pub duration: f64,
    pub kind: ContactKind,
    /// Skin-to-cover conductance (W/K).
    pub conductance: f64,
    /// Skin temperature (°C).
    pub t_skin: f64,
}

impl ContactEvent {
    pub fn new(kind: ContactKind, start: f64, duration: f64, t_skin: f64) -> Self {
        ContactEvent {
            start,
            duration,
            kind,
            conductance: kind.default_conductance(),
            t_skin,
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start && t <= self.end()
    }

    /// Whether the integration step `[t, t + dt)` lies inside the contact, so
    /// that a window aligned to the step grid delivers exactly its duration.
    pub fn covers_step(&self, t: f64, dt: f64) -> bool {
        let eps = 1e-9 * dt;
        t >= self.start - eps && t + dt <= self.end() + eps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid(format!("contact duration must be > 0, got {}", self.duration)));
        }
        if !(self.conductance.is_finite() && self.conductance > 0.0) {
            return Err(Error::invalid(format!(
                "contact conductance must be > 0, got {}",
                self.conductance
            )));
        }
        if !(self.start.is_finite() && self.t_skin.is_finite()) {
            return Err(Error::invalid("contact start and skin temperature must be finite"));
        }
        Ok(())
    }
}

/// Heat flowing from the skin into the cover at time `t` (W).
pub fn contact_heat_flow(event: &ContactEvent, t_c: f64, t: f64) -> f64 {
    if event.is_active(t) {
        event.conductance * (event.t_skin - t_c)
    } else {
        0.0
    }
}

/// External heat applied to the cover node over one integration step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeatLoad {
    /// Prescribed heat flow (W), held over the step.
    Fixed(f64),
    /// Conductive contact evaluated against the evolving cover temperature.
    Contact { conductance: f64, t_skin: f64 },
}

impl HeatLoad {
    fn flow(&self, t_c: f64) -> f64 {
        match *self {
            HeatLoad::Fixed(q) => q,
            HeatLoad::Contact { conductance, t_skin } => conductance * (t_skin - t_c),
        }
    }

    fn conductance(&self) -> f64 {
        match *self {
            HeatLoad::Fixed(_) => 0.0,
            HeatLoad::Contact { conductance, .. } => conductance,
        }
    }
}

/// Plant constants plus the Peltier actuator lag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plant {
    pub params: PlantParams,
    pub ambient: AmbientConfig,
    /// First-order lag of the Peltier surface behind its command (s); 0
    /// applies the command directly.
    pub peltier_lag: f64,
}

/// Instantaneous heat flows for a plant state (W).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatFlows {
    pub q_w: f64,
    pub q_aw: f64,
    pub q_peltier: f64,
    pub q_cover: f64,
}

impl Plant {
    pub fn new(params: PlantParams, ambient: AmbientConfig) -> Self {
        Plant {
            params,
            ambient,
            peltier_lag: 0.0,
        }
    }

    pub fn with_peltier_lag(mut self, lag: f64) -> Self {
        self.peltier_lag = lag;
        self
    }

    pub fn flows(&self, s: &PlantState) -> HeatFlows {
        let p = &self.params;
        HeatFlows {
            q_w: if s.pump_on { (s.t_co - s.t_w) / p.r_w } else { 0.0 },
            q_aw: (self.ambient.t_amb - s.t_w) / p.r_aw,
            q_peltier: (s.t_p - s.t_co) / p.r_co,
            q_cover: (s.t_w - s.t_c) / p.r_c,
        }
    }

    /// Largest step accepted by [`Plant::step`] for `load`: half the fastest
    /// node time constant.
    pub fn max_stable_dt(&self, load: &HeatLoad) -> f64 {
        let p = &self.params;
        let mut fastest = (p.r_c * p.c_c).min(p.r_co * p.c_co);
        let g = load.conductance();
        if g > 0.0 {
            fastest = fastest.min(p.c_c / (1.0 / p.r_c + g));
        }
        if self.peltier_lag > 0.0 {
            fastest = fastest.min(self.peltier_lag);
        }
        0.5 * fastest
    }

    fn derivative(&self, x: &[f64; 4], cmd: f64, pump_on: bool, load: &HeatLoad) -> [f64; 4] {
        let p = &self.params;
        let [t_p, t_co, t_w, t_c] = *x;
        let dt_p = if self.peltier_lag > 0.0 {
            (cmd - t_p) / self.peltier_lag
        } else {
            0.0
        };
        let q_w = if pump_on { (t_co - t_w) / p.r_w } else { 0.0 };
        let q_aw = (self.ambient.t_amb - t_w) / p.r_aw;
        let q_cover = (t_w - t_c) / p.r_c;
        [
            dt_p,
            ((t_p - t_co) / p.r_co - q_w) / p.c_co,
            (q_w + q_aw - q_cover) / p.c_w,
            (q_cover + load.flow(t_c)) / p.c_c,
        ]
    }

    /// Advances the plant by `dt` with classical fourth-order Runge–Kutta.
    /// Command, pump state and load are held over the step. A stiff load is
    /// integrated in substeps of at most a tenth of the fastest time constant.
    pub fn step(&self, state: &PlantState, cmd: f64, pump_on: bool, load: HeatLoad, dt: f64) -> Result<PlantState> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("step must be > 0, got {dt}")));
        }
        let limit = self.max_stable_dt(&load);
        if dt > limit {
            return Err(Error::invalid(format!("step {dt} s exceeds stability limit {limit:.4} s")));
        }
        if !cmd.is_finite() {
            return Err(Error::NumericFailure {
                t: state.t,
                msg: format!("non-finite Peltier command {cmd}"),
            });
        }
        let t_p0 = if self.peltier_lag > 0.0 { state.t_p } else { cmd };
        let mut x = [t_p0, state.t_co, state.t_w, state.t_c];
        let n = (dt / (0.2 * limit)).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        for _ in 0..n {
            let k1 = self.derivative(&x, cmd, pump_on, &load);
            let k2 = self.derivative(&axpy(&x, 0.5 * h, &k1), cmd, pump_on, &load);
            let k3 = self.derivative(&axpy(&x, 0.5 * h, &k2), cmd, pump_on, &load);
            let k4 = self.derivative(&axpy(&x, h, &k3), cmd, pump_on, &load);
            for i in 0..4 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let next = PlantState {
            t_p: x[0],
            t_co: x[1],
            t_w: x[2],
            t_c: x[3],
            pump_on,
            t: state.t + dt,
        };
        if !next.is_finite() {
            return Err(Error::NumericFailure {
                t: next.t,
                msg: "plant state became non-finite".into(),
            });
        }
        Ok(next)
    }
}

fn axpy(x: &[f64; 4], h: f64, k: &[f64; 4]) -> [f64; 4] {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2], x[3] + h * k[3]]
}

/// One integration step with the Peltier surface following its command
/// directly and a prescribed contact heat flow `q_i`.
pub fn step_plant(
    state: &PlantState,
    t_p_cmd: f64,
    pump_on: bool,
    q_i: f64,
    params: &PlantParams,
    ambient: &AmbientConfig,
    dt: f64,
) -> Result<PlantState> {
    Plant::new(*params, *ambient).step(state, t_p_cmd, pump_on, HeatLoad::Fixed(q_i), dt)
}
