//! Contact detection by thresholding the heat-flow estimate.

use std::fmt;

use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvReader};
use crate::observer::Smoother;
use crate::sim::SimTrace;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionConfig {
    /// Threshold θ on the smoothed |q̂_i| (W).
    pub threshold: f64,
    /// Minimum continuous time above threshold (s).
    pub min_hold: f64,
    /// Samples within this time after a pump toggle are ignored (s).
    pub switch_gate: f64,
    /// Low-pass cutoff applied before thresholding (rad/s); 0 disables.
    pub smoothing: f64,
    /// A detection starting up to this long after a contact ends is still
    /// attributed to it (s).
    pub latency: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold: 1e-4,
            min_hold: 2.0,
            switch_gate: 10.0,
            smoothing: 0.1,
            latency: 120.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::invalid(format!("detection.threshold must be > 0, got {}", self.threshold)));
        }
        for (name, v) in [
            ("min_hold", self.min_hold),
            ("switch_gate", self.switch_gate),
            ("smoothing", self.smoothing),
            ("latency", self.latency),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("detection.{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc) {
        doc.set_f64("detection.threshold", self.threshold);
        doc.set_f64("detection.min_hold", self.min_hold);
        doc.set_f64("detection.switch_gate", self.switch_gate);
        doc.set_f64("detection.smoothing", self.smoothing);
        doc.set_f64("detection.latency", self.latency);
    }

    pub fn read_kv(mut self, r: &mut KvReader) -> Result<Self> {
        self.threshold = r.take_or("detection.threshold", self.threshold)?;
        self.min_hold = r.take_or("detection.min_hold", self.min_hold)?;
        self.switch_gate = r.take_or("detection.switch_gate", self.switch_gate)?;
        self.smoothing = r.take_or("detection.smoothing", self.smoothing)?;
        self.latency = r.take_or("detection.latency", self.latency)?;
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Per-contact outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventMatch {
    pub window: Interval,
    pub detected: bool,
    /// Peak |q̂_i| from the contact start until the next contact (or the end
    /// of the trace) (W).
    pub peak_q_hat: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport {
    pub detections: Vec<Interval>,
    pub events: Vec<EventMatch>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
    /// Peak |q̂_i| over the whole trace (W).
    pub peak_q_hat: f64,
}

impl fmt::Display for DetectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "detections: {}", self.detections.len())?;
        writeln!(f, "true_positives: {}", self.true_positives)?;
        writeln!(f, "false_positives: {}", self.false_positives)?;
        writeln!(f, "misses: {}", self.misses)?;
        writeln!(f, "peak_q_hat: {:e}", self.peak_q_hat)?;
        for (i, d) in self.detections.iter().enumerate() {
            writeln!(f, "detection.{i}: {} {}", d.start, d.end)?;
        }
        for (i, e) in self.events.iter().enumerate() {
            writeln!(
                f,
                "event.{i}: start {} end {} detected {} peak_q_hat {:e}",
                e.window.start, e.window.end, e.detected, e.peak_q_hat
            )?;
        }
        Ok(())
    }
}

/// Contact windows recovered from the trace's ground-truth flag.
pub fn contact_windows(trace: &SimTrace) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    let mut last_t = 0.0;
    for row in &trace.rows {
        match (open, row.contact_flag) {
            (None, true) => open = Some(row.t),
            (Some(s), false) => {
                out.push(Interval { start: s, end: last_t });
                open = None;
            }
            _ => {}
        }
        last_t = row.t;
    }
    if let Some(s) = open {
        out.push(Interval { start: s, end: last_t });
    }
    out
}

/// Smoothed |q̂_i| series that detection thresholds.
pub fn detection_signal(trace: &SimTrace, cfg: &DetectionConfig) -> Vec<f64> {
    let mut smoother = Smoother::new(cfg.smoothing, trace.t_s);
    trace.rows.iter().map(|r| smoother.update(r.q_i_hat).abs()).collect()
}

pub fn detect_contacts(trace: &SimTrace, cfg: &DetectionConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let signal = detection_signal(trace, cfg);

    let mut gated = vec![false; trace.rows.len()];
    let mut last_toggle: Option<f64> = None;
    for (i, row) in trace.rows.iter().enumerate() {
        if i > 0 && row.pump_on != trace.rows[i - 1].pump_on {
            last_toggle = Some(row.t);
        }
        if let Some(t0) = last_toggle {
            gated[i] = cfg.switch_gate > 0.0 && row.t - t0 < cfg.switch_gate;
        }
    }

    // A run is a sequence of above-threshold samples; gated samples neither
    // extend nor break it.
    let mut detections = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    let close = |run: &mut Option<(f64, f64)>, out: &mut Vec<Interval>| {
        if let Some((s, e)) = run.take() {
            if e - s >= cfg.min_hold - 1e-9 {
                out.push(Interval { start: s, end: e });
            }
        }
    };
    for (i, row) in trace.rows.iter().enumerate() {
        if gated[i] {
            continue;
        }
        if signal[i] > cfg.threshold {
            run = Some(match run {
                Some((s, _)) => (s, row.t),
                None => (row.t, row.t),
            });
        } else {
            close(&mut run, &mut detections);
        }
    }
    close(&mut run, &mut detections);

    let windows = contact_windows(trace);
    let reach: Vec<Interval> = windows
        .iter()
        .map(|w| Interval {
            start: w.start,
            end: w.end + cfg.latency,
        })
        .collect();
    let mut events = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        let until = windows.get(k + 1).map_or(f64::INFINITY, |n| n.start);
        let peak = trace
            .rows
            .iter()
            .zip(&signal)
            .filter(|(r, _)| r.t >= w.start && r.t < until)
            .map(|(_, &s)| s)
            .fold(0.0, f64::max);
        events.push(EventMatch {
            window: *w,
            detected: detections.iter().any(|d| d.overlaps(&reach[k])),
            peak_q_hat: peak,
        });
    }
    let false_positives = detections
        .iter()
        .filter(|d| !reach.iter().any(|r| d.overlaps(r)))
        .count();
    let true_positives = events.iter().filter(|e| e.detected).count();
    Ok(DetectionReport {
        misses: events.len() - true_positives,
        detections,
        events,
        true_positives,
        false_positives,
        peak_q_hat: signal.iter().copied().fold(0.0, f64::max),
    })
}
