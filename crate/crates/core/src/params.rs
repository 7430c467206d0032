//! Identified thermal constants of the cover system and ambient conditions.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvReader};

/// Which identified parameter set applies: the heating and cooling step tests
/// produced different constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Heat,
    Cool,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Heat => "heat",
            Mode::Cool => "cool",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "heat" => Ok(Mode::Heat),
            "cool" => Ok(Mode::Cool),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected heat|cool)"))),
        }
    }
}

/// Which temperature the display loop regulates. The first-order model
/// constants were identified separately for each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControlTarget {
    /// Cover surface temperature `T_c` is measured and regulated.
    CoverTemp,
    /// Water-pipe temperature `T_w` is regulated; the cover is not sensed.
    PipeTemp,
}

impl fmt::Display for ControlTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlTarget::CoverTemp => "cover",
            ControlTarget::PipeTemp => "pipe",
        })
    }
}

impl FromStr for ControlTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cover" | "covertemp" => Ok(ControlTarget::CoverTemp),
            "pipe" | "pipetemp" => Ok(ControlTarget::PipeTemp),
            other => Err(Error::Config(format!("unknown control target `{other}` (expected cover|pipe)"))),
        }
    }
}

/// Lumped thermal constants. Resistances in K/W, capacitances in J/K, times
/// in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantParams {
    /// Tank to water-pipe convective resistance (pump running).
    pub r_w: f64,
    /// Water pipe to cover resistance.
    pub r_c: f64,
    /// Peltier surface to copper tank resistance.
    pub r_co: f64,
    /// Water pipe to ambient resistance.
    pub r_aw: f64,
    /// Surface-loss resistance of the first-order display model; scales the
    /// loss heat flow into an equivalent temperature offset.
    pub r_a: f64,
    pub c_w: f64,
    pub c_c: f64,
    pub c_co: f64,
    /// Combined time constant `R_com * C_com` of the first-order display model.
    pub tau: f64,
    /// Dead time `L_d` of the first-order display model.
    pub dead_time: f64,
    pub mode: Mode,
}

impl PlantParams {
    /// Identified constants for `mode`, with the first-order rows taken from
    /// the cover-temperature display experiment.
    pub fn preset(mode: Mode) -> Self {
        Self::preset_for(mode, ControlTarget::CoverTemp)
    }

    /// Identified constants for `mode`, with the first-order rows
    /// (`tau`, `dead_time`, `r_a`) matching the regulated temperature.
    pub fn preset_for(mode: Mode, target: ControlTarget) -> Self {
        let (tau, dead_time, r_a) = match (mode, target) {
            (Mode::Heat, ControlTarget::CoverTemp) => (500.0, 45.0, 0.2),
            (Mode::Cool, ControlTarget::CoverTemp) => (450.0, 30.0, 0.3),
            (Mode::Heat, ControlTarget::PipeTemp) => (500.0, 45.0, 0.3),
            (Mode::Cool, ControlTarget::PipeTemp) => (410.0, 30.0, 0.7),
        };
        let (c_w, c_c, r_w, r_c) = match mode {
            Mode::Heat => (197.41, 0.40, 6.00, 120.12),
            Mode::Cool => (182.79, 0.10, 5.56, 30.03),
        };
        PlantParams {
            r_w,
            r_c,
            r_co: 0.09,
            r_aw: 2.1,
            r_a,
            c_w,
            c_c,
            c_co: 1152.57,
            tau,
            dead_time,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_w", self.r_w),
            ("r_c", self.r_c),
            ("r_co", self.r_co),
            ("r_aw", self.r_aw),
            ("r_a", self.r_a),
            ("c_w", self.c_w),
            ("c_c", self.c_c),
            ("c_co", self.c_co),
            ("r_com_c_com", self.tau),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {value}")));
            }
        }
        if !(self.dead_time.is_finite() && self.dead_time >= 0.0) {
            return Err(Error::invalid(format!("l_d must be finite and >= 0, got {}", self.dead_time)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("mode", self.mode);
        for (key, value) in self.named_values() {
            doc.set_f64(key, value);
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut r = KvReader::new(doc.clone());
        let params = Self::read(&mut r)?;
        r.finish()?;
        Ok(params)
    }

    /// Reads the parameter keys from `r`, leaving unrelated keys in place.
    pub(crate) fn read(r: &mut KvReader) -> Result<Self> {
        let p = PlantParams {
            mode: r.require("mode")?,
            r_w: r.require("r_w")?,
            r_c: r.require("r_c")?,
            r_co: r.require("r_co")?,
            r_aw: r.require("r_aw")?,
            r_a: r.require("r_a")?,
            c_w: r.require("c_w")?,
            c_c: r.require("c_c")?,
            c_co: r.require("c_co")?,
            tau: r.require("r_com_c_com")?,
            dead_time: r.require("l_d")?,
        };
        p.validate()?;
        Ok(p)
    }

    fn named_values(&self) -> [(&'static str, f64); 10] {
        [
            ("r_w", self.r_w),
            ("r_c", self.r_c),
            ("r_co", self.r_co),
            ("r_aw", self.r_aw),
            ("r_a", self.r_a),
            ("c_w", self.c_w),
            ("c_c", self.c_c),
            ("c_co", self.c_co),
            ("r_com_c_com", self.tau),
            ("l_d", self.dead_time),
        ]
    }
}

pub fn preset_params(mode: Mode) -> PlantParams {
    PlantParams::preset(mode)
}

/// Unmodelled surroundings. None of these are given by the identified model,
/// so each is an explicit setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbientConfig {
    /// Room temperature (°C).
    pub t_amb: f64,
    /// Nominal heat loss at the cover surface (W); initial value of the
    /// controller's loss estimate.
    pub q_a: f64,
    /// Skin temperature of a touching hand (°C).
    pub t_skin: f64,
}

impl Default for AmbientConfig {
    fn default() -> Self {
        AmbientConfig {
            t_amb: 21.0,
            q_a: 0.0,
            t_skin: 33.0,
        }
    }
}

impl AmbientConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t_amb", self.t_amb), ("q_a", self.q_a), ("t_skin", self.t_skin)] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("ambient.{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Picks the parameter set from the sign of `setpoint - t_w`; inside the
/// deadband the current mode is kept.
pub fn select_mode(current: Mode, setpoint: f64, t_w: f64, deadband: f64) -> Mode {
    let err = setpoint - t_w;
    if err > deadband {
        Mode::Heat
    } else if err < -deadband {
        Mode::Cool
    } else {
        current
    }
}
