use nalgebra::{DMatrix, DVector};

use super::FitReport;
use crate::error::{Error, Result};
use crate::params::Mode;
use crate::sim::SimTrace;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Uniformly sampled response to a single input step at `step_time`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub mode: Mode,
    pub step_time: f64,
    /// Input level before the step.
    pub initial_input: f64,
    pub t: Vec<f64>,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl StepTrace {
    pub fn new(
        mode: Mode,
        step_time: f64,
        initial_input: f64,
        t: Vec<f64>,
        input: Vec<f64>,
        output: Vec<f64>,
    ) -> Result<Self> {
        if t.len() != input.len() || t.len() != output.len() {
            return Err(Error::invalid("step trace columns differ in length"));
        }
        if t.len() < 8 {
            return Err(Error::invalid("step trace needs at least 8 samples"));
        }
        let h = t[1] - t[0];
        if h.is_nan() || h <= 0.0 || t.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-6 * h.max(1.0)) {
            return Err(Error::invalid("step trace is not uniformly sampled"));
        }
        if t.iter().chain(&input).chain(&output).any(|v| !v.is_finite()) {
            return Err(Error::invalid("step trace contains non-finite values"));
        }
        Ok(StepTrace {
            mode,
            step_time,
            initial_input,
            t,
            input,
            output,
        })
    }

    /// Step test from a simulation trace: the input is the Peltier command,
    /// the output is `column` (`T_c` or `T_w`), and the step is the first
    /// change of the command.
    pub fn from_sim(trace: &SimTrace, mode: Mode, column: &str) -> Result<Self> {
        let pick = |r: &crate::sim::TraceRow| match column {
            "T_w" => Ok(r.t_w),
            "T_c" => Ok(r.t_c),
            other => Err(Error::Format(format!("cannot fit column `{other}` (expected T_w or T_c)"))),
        };
        let rows = &trace.rows;
        let first = rows.first().ok_or_else(|| Error::Format("trace has no rows".into()))?;
        let step = rows
            .iter()
            .position(|r| r.t_p_cmd != first.t_p_cmd)
            .unwrap_or(0);
        let initial_input = if step == 0 { first.t_p } else { first.t_p_cmd };
        StepTrace::new(
            mode,
            rows[step].t,
            initial_input,
            rows.iter().map(|r| r.t).collect(),
            rows.iter().map(|r| r.t_p_cmd).collect(),
            rows.iter().map(pick).collect::<Result<_>>()?,
        )
    }

    fn amplitude(&self) -> f64 {
        let tail = self.input.len() / 20 + 1;
        let last: f64 = self.input[self.input.len() - tail..].iter().sum::<f64>() / tail as f64;
        last - self.initial_input
    }

    fn sample_time(&self) -> f64 {
        self.t[1] - self.t[0]
    }
}

/// Unit-gain shape of the delayed first-order step response.
fn shape(t_rel: f64, tau: f64, delay: f64) -> f64 {
    if t_rel < delay {
        0.0
    } else {
        1.0 - (-(t_rel - delay) / tau).exp()
    }
}

struct Problem<'a> {
    t_rel: Vec<f64>,
    y: &'a [f64],
}

impl Problem<'_> {
    /// Best baseline and gain for fixed `(tau, delay)` and the resulting
    /// sum of squares.
    fn project(&self, tau: f64, delay: f64) -> (f64, f64, f64) {
        let n = self.y.len() as f64;
        let (mut sp, mut spp, mut sy, mut spy) = (0.0, 0.0, 0.0, 0.0);
        for (&tr, &y) in self.t_rel.iter().zip(self.y) {
            let p = shape(tr, tau, delay);
            sp += p;
            spp += p * p;
            sy += y;
            spy += p * y;
        }
        let det = n * spp - sp * sp;
        let (y0, c) = if det.abs() > 1e-12 * n * n.max(spp) {
            ((spp * sy - sp * spy) / det, (n * spy - sp * sy) / det)
        } else {
            (sy / n, 0.0)
        };
        let ssr = self.ssr(y0, c, tau, delay);
        (y0, c, ssr)
    }

    fn ssr(&self, y0: f64, c: f64, tau: f64, delay: f64) -> f64 {
        self.t_rel
            .iter()
            .zip(self.y)
            .map(|(&tr, &y)| {
                let r = y - y0 - c * shape(tr, tau, delay);
                r * r
            })
            .sum()
    }

    fn best_tau(&self, delay: f64, lo: f64, hi: f64) -> (f64, f64) {
        let f = |ln_tau: f64| self.project(ln_tau.exp(), delay).2;
        let x = golden_min(f, lo.ln(), hi.ln(), 1e-7);
        let tau = x.exp();
        (tau, self.project(tau, delay).2)
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// First time (relative to the step) the normalized response reaches
/// `level`, linearly interpolated.
fn crossing(t_rel: &[f64], y: &[f64], y_start: f64, y_end: f64, level: f64) -> Option<f64> {
    let span = y_end - y_start;
    let norm = |v: f64| (v - y_start) / span;
    for i in 1..y.len() {
        if t_rel[i] < 0.0 {
            continue;
        }
        let (a, b) = (norm(y[i - 1]), norm(y[i]));
        if b >= level {
            if a >= level || t_rel[i - 1] < 0.0 {
                return Some(t_rel[i].max(0.0));
            }
            let frac = (level - a) / (b - a);
            return Some(t_rel[i - 1] + frac * (t_rel[i] - t_rel[i - 1]));
        }
    }
    None
}

/// Fits `y = y0 + (A - q_a) (1 - exp(-(t - t_step - L_d) / tau))` after the
/// delay, where `A` is the input step. Reports `r_com_c_com`, `l_d`, `q_a`
/// (the static offset in K) and the nuisance `baseline`.
pub fn fit_fopdt(trace: &StepTrace) -> Result<FitReport> {
    let t_rel: Vec<f64> = trace.t.iter().map(|t| t - trace.step_time).collect();
    let y = &trace.output;
    let n = y.len();
    let pre: Vec<f64> = t_rel
        .iter()
        .zip(y)
        .filter(|(t, _)| **t <= 0.0)
        .map(|(_, v)| *v)
        .collect();
    let y_start = if pre.is_empty() { y[0] } else { pre.iter().sum::<f64>() / pre.len() as f64 };
    let tail = (n / 20).max(3);
    let y_end = y[n - tail..].iter().sum::<f64>() / tail as f64;
    let noise = {
        let m = y_end;
        (y[n - tail..].iter().map(|v| (v - m).powi(2)).sum::<f64>() / tail as f64).sqrt()
    };
    if (y_end - y_start).abs() <= 10.0 * noise.max(1e-12) {
        return Err(Error::IllConditioned {
            msg: format!(
                "response change {:.3e} K is not above the noise level {:.3e} K",
                y_end - y_start,
                noise
            ),
            unidentifiable: vec!["r_com_c_com".into(), "l_d".into()],
        });
    }
    let t28 = crossing(&t_rel, y, y_start, y_end, 0.283);
    let t63 = crossing(&t_rel, y, y_start, y_end, 0.632);
    let (Some(t28), Some(t63)) = (t28, t63) else {
        return Err(Error::IllConditioned {
            msg: "response never reaches 63.2% of its final change".into(),
            unidentifiable: vec!["r_com_c_com".into(), "l_d".into()],
        });
    };
    let h = trace.sample_time();
    let tau0 = (1.5 * (t63 - t28)).max(h);
    let delay0 = (t63 - tau0).max(0.0);

    let prob = Problem { t_rel: t_rel.clone(), y };
    let (tau_lo, tau_hi) = (tau0 / 5.0, tau0 * 5.0);
    let span = t_rel[n - 1];
    let delay_hi = (delay0 + tau0).min(span);
    let delay = golden_min(|l| prob.best_tau(l.max(0.0), tau_lo, tau_hi).1, 0.0, delay_hi, 1e-9).max(0.0);
    let (tau, _) = prob.best_tau(delay, tau_lo, tau_hi);
    let (y0, c, _) = prob.project(tau, delay);

    // Gauss-Newton polish on (y0, c, tau, L) with L kept non-negative.
    let mut theta = [y0, c, tau, delay];
    let mut ssr = prob.ssr(y0, c, tau, delay);
    let mut iterations = 0;
    let mut lambda = 1e-6;
    let jacobian = |th: &[f64; 4]| {
        let [_, c, tau, delay] = *th;
        DMatrix::from_fn(n, 4, |i, j| {
            let tr = t_rel[i];
            let active = tr >= delay;
            let e = if active { (-(tr - delay) / tau).exp() } else { 0.0 };
            match j {
                0 => 1.0,
                1 => shape(tr, tau, delay),
                2 => -c * (tr - delay) / (tau * tau) * e,
                _ => -c / tau * e,
            }
        })
    };
    for _ in 0..200 {
        iterations += 1;
        let j = jacobian(&theta);
        let r = DVector::from_fn(n, |i, _| y[i] - theta[0] - theta[1] * shape(t_rel[i], theta[2], theta[3]));
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * r;
        let mut improved = false;
        for _ in 0..20 {
            let mut a = jtj.clone();
            for k in 0..4 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [
                theta[0] + step[0],
                theta[1] + step[1],
                (theta[2] + step[2]).max(1e-9),
                (theta[3] + step[3]).max(0.0),
            ];
            let s = prob.ssr(cand[0], cand[1], cand[2], cand[3]);
            if s <= ssr {
                let rel = (ssr - s) / ssr.max(1e-300);
                theta = cand;
                ssr = s;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    // Snap a vanishing delay onto its bound when that fits as well.
    if theta[3] > 0.0 && theta[3] < 1e-6 * h {
        let s = prob.ssr(theta[0], theta[1], theta[2], 0.0);
        if s <= ssr * (1.0 + 1e-9) + f64::MIN_POSITIVE {
            theta[3] = 0.0;
            ssr = s;
        }
    }
    let [y0, c, tau, delay] = theta;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::IllConditioned {
            msg: format!("fitted time constant {tau} is not positive"),
            unidentifiable: vec!["r_com_c_com".into()],
        });
    }
    let covered = (span - delay) / tau;
    if covered < 3.0 {
        return Err(Error::IllConditioned {
            msg: format!(
                "trace covers {covered:.2} time constants after the delay (tau = {tau:.1} s); at least 3 are needed"
            ),
            unidentifiable: vec!["r_com_c_com".into(), "q_a".into()],
        });
    }

    let dof = (n as f64 - 4.0).max(1.0);
    let sigma2 = ssr / dof;
    let j = jacobian(&theta);
    let cov = (j.transpose() * &j).try_inverse().map(|m| m * sigma2);
    let hw = |k: usize| cov.as_ref().map_or(f64::INFINITY, |m| 1.96 * m[(k, k)].max(0.0).sqrt());
    let amplitude = trace.amplitude();
    Ok(FitReport {
        names: vec!["r_com_c_com", "l_d", "q_a", "baseline"],
        values: vec![tau, delay, amplitude - c, y0],
        half_widths: vec![hw(2), hw(3), hw(1), hw(0)],
        residual_rms: (ssr / n as f64).sqrt(),
        iterations,
        warnings: Vec::new(),
    })
}

/// Model response of a FOPDT fit at the trace's sample times.
pub fn fopdt_fit_curve(report: &FitReport, trace: &StepTrace) -> Vec<f64> {
    let get = |k| report.get(k).unwrap_or(f64::NAN);
    let (tau, delay, q_a, y0) = (get("r_com_c_com"), get("l_d"), get("q_a"), get("baseline"));
    let gain = trace.amplitude() - q_a;
    trace
        .t
        .iter()
        .map(|t| y0 + gain * shape(t - trace.step_time, tau, delay))
        .collect()
}
