//! Per-segment tracking statistics and the plain-text run report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::detect::{detect_contacts, DetectionReport};
use crate::error::Result;
use crate::scenario::ScenarioSpec;
use crate::sim::{SimTrace, TraceRow};

/// Tracking statistics for one setpoint hold.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentStats {
    pub setpoint: f64,
    /// Level the step starts from: the previous setpoint, or the initial
    /// temperature for the first segment.
    pub previous: f64,
    pub start: f64,
    pub end: f64,
    /// Mean of measurement minus setpoint over the last quarter of the hold.
    pub steady_state_error: f64,
    /// Largest |measurement - setpoint| over the last quarter of the hold.
    pub max_tail_error: f64,
    /// Time from the step until the error stays within the pump's on band.
    pub settling_time: Option<f64>,
    /// Time from the step until the measurement first covers 90% of the
    /// change from `previous` to `setpoint`.
    pub rise_time: Option<f64>,
    /// Fraction of the last quarter of the hold with the pump running.
    pub pump_on_fraction: f64,
    pub command_min: f64,
    pub command_max: f64,
}

impl SegmentStats {
    /// Circulation mostly stopped once the hold has settled.
    pub fn pump_off_at_settle(&self) -> bool {
        self.pump_on_fraction < 0.5
    }
}

/// Rows of the trace with `start <= t < end`.
fn rows_between(trace: &SimTrace, start: f64, end: f64) -> Vec<&TraceRow> {
    let eps = 1e-9 * trace.t_s;
    trace.rows.iter().filter(|r| r.t >= start - eps && r.t < end - eps).collect()
}

pub fn segment_stats(spec: &ScenarioSpec, trace: &SimTrace) -> Vec<SegmentStats> {
    let mut previous = spec.initial_temp;
    let mut out = Vec::new();
    for (start, end) in spec.segment_bounds() {
        let setpoint = spec.setpoint_at(start);
        let seg = rows_between(trace, start, end);
        if seg.is_empty() {
            continue;
        }
        let y = |r: &TraceRow| r.measured(spec.target);
        let tail = &seg[seg.len() * 3 / 4..];
        let steady_state_error = tail.iter().map(|r| y(r) - setpoint).sum::<f64>() / tail.len() as f64;
        let max_tail_error = tail.iter().map(|r| (y(r) - setpoint).abs()).fold(0.0, f64::max);
        let band = spec.loop_cfg.on_band;
        let settling_time = match seg.iter().rposition(|r| (y(r) - setpoint).abs() > band) {
            None => Some(0.0),
            Some(i) if i + 1 < seg.len() => Some(seg[i + 1].t - start),
            Some(_) => None,
        };
        let threshold = previous + 0.9 * (setpoint - previous);
        let dir = (setpoint - previous).signum();
        let rise_time = if dir == 0.0 {
            None
        } else {
            seg.iter().find(|r| (y(r) - threshold) * dir >= 0.0).map(|r| r.t - start)
        };
        let pump_on_fraction = tail.iter().filter(|r| r.pump_on).count() as f64 / tail.len() as f64;
        out.push(SegmentStats {
            setpoint,
            previous,
            start,
            end,
            steady_state_error,
            max_tail_error,
            settling_time,
            rise_time,
            pump_on_fraction,
            command_min: seg.iter().map(|r| r.t_p_cmd).fold(f64::INFINITY, f64::min),
            command_max: seg.iter().map(|r| r.t_p_cmd).fold(f64::NEG_INFINITY, f64::max),
        });
        previous = setpoint;
    }
    out
}

/// Everything written to `<name>_report.txt`.
#[derive(Debug)]
pub struct RunReport {
    pub scenario: String,
    pub overrides: Vec<String>,
    pub config: Vec<(String, String)>,
    pub segments: Vec<SegmentStats>,
    pub commands_within_bounds: bool,
    pub detection: DetectionReport,
}

impl RunReport {
    pub fn new(spec: &ScenarioSpec, trace: &SimTrace, overrides: &[String]) -> Result<Self> {
        let (lo, hi) = (spec.controller.t_min, spec.controller.t_max);
        Ok(RunReport {
            scenario: spec.name.clone(),
            overrides: overrides.to_vec(),
            config: spec.to_kv().entries().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            segments: segment_stats(spec, trace),
            commands_within_bounds: trace.rows.iter().all(|r| r.t_p_cmd >= lo && r.t_p_cmd <= hi),
            detection: detect_contacts(trace, &spec.detection)?,
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let _ = writeln!(s, "scenario: {}", self.scenario);
        for o in &self.overrides {
            let _ = writeln!(s, "override: {o}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}: {v}");
        }
        let _ = writeln!(s, "segments: {}", self.segments.len());
        for (i, g) in self.segments.iter().enumerate() {
            let _ = writeln!(s, "segment.{i}.setpoint: {}", g.setpoint);
            let _ = writeln!(s, "segment.{i}.start: {}", g.start);
            let _ = writeln!(s, "segment.{i}.end: {}", g.end);
            let _ = writeln!(s, "segment.{i}.steady_state_error: {}", g.steady_state_error);
            let _ = writeln!(s, "segment.{i}.max_tail_error: {}", g.max_tail_error);
            let _ = writeln!(s, "segment.{i}.settling_time: {}", opt(g.settling_time));
            let _ = writeln!(s, "segment.{i}.rise_time: {}", opt(g.rise_time));
            let _ = writeln!(s, "segment.{i}.pump_on_fraction: {}", g.pump_on_fraction);
            let _ = writeln!(s, "segment.{i}.pump_off_at_settle: {}", g.pump_off_at_settle());
            let _ = writeln!(s, "segment.{i}.command_min: {}", g.command_min);
            let _ = writeln!(s, "segment.{i}.command_max: {}", g.command_max);
        }
        let _ = writeln!(s, "commands_within_bounds: {}", self.commands_within_bounds);
        s.push_str(&self.detection.to_string());
        s
    }
}

/// `key: value` lines of a report as a map. Lines without `: ` are skipped.
pub fn parse_report(text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(": ") {
            map.entry(k.trim().to_string()).or_insert_with(|| v.trim().to_string());
        }
    }
    map
}
