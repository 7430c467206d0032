//! Parameter identification from step-response traces.

mod fopdt;
mod network;

use std::fmt;

use crate::kv::KvDoc;
use crate::params::PlantParams;

pub use fopdt::{fit_fopdt, fopdt_fit_curve, StepTrace};
pub use network::{fit_two_node, identification_traces, simulate_network, NetworkTrace, KNOWN_TANK};

/// Fitted values with their uncertainty.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    /// 95% confidence half-widths from the curvature of the residual.
    pub half_widths: Vec<f64>,
    /// RMS of data minus model at the returned values (K).
    pub residual_rms: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn half_width(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.half_widths[i])
    }

    /// `base` with every fitted field that is also a parameter key replaced.
    pub fn apply_to(&self, base: &PlantParams) -> PlantParams {
        let mut p = *base;
        for (name, &v) in self.names.iter().zip(&self.values) {
            match *name {
                "r_w" => p.r_w = v,
                "r_c" => p.r_c = v,
                "r_aw" => p.r_aw = v,
                "c_w" => p.c_w = v,
                "c_c" => p.c_c = v,
                "r_com_c_com" => p.tau = v,
                "l_d" => p.dead_time = v,
                _ => {}
            }
        }
        p
    }

    /// Fitted values and diagnostics as key-value text. Parameter keys match
    /// the plant parameter format.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        for (name, &v) in self.names.iter().zip(&self.values) {
            doc.set_f64(*name, v);
        }
        for (name, &h) in self.names.iter().zip(&self.half_widths) {
            doc.set_f64(format!("fit.half_width.{name}"), h);
        }
        doc.set_f64("fit.residual_rms", self.residual_rms);
        doc.set("fit.iterations", self.iterations);
        doc
    }
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ((name, v), h) in self.names.iter().zip(&self.values).zip(&self.half_widths) {
            writeln!(f, "{name}: {v} +/- {h}")?;
        }
        writeln!(f, "residual_rms: {}", self.residual_rms)?;
        writeln!(f, "iterations: {}", self.iterations)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}
