use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FitReport;
use crate::error::{Error, Result};
use crate::params::{AmbientConfig, Mode, PlantParams};
use crate::plant::{HeatLoad, Plant, PlantState};
use crate::sim::SimTrace;

const NAMES: [&str; 5] = ["r_w", "c_w", "r_c", "c_c", "r_aw"];

/// Tank constants treated as known during the network fit: `(c_co, r_co)`.
pub const KNOWN_TANK: (f64, f64) = (1152.57, 0.09);

/// Measured network response: Peltier surface input, pump schedule and the
/// three node temperatures, uniformly sampled. Input and pump state are held
/// from each sample to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTrace {
    pub mode: Mode,
    pub t_amb: f64,
    pub t: Vec<f64>,
    pub t_p: Vec<f64>,
    pub pump_on: Vec<bool>,
    pub t_co: Vec<f64>,
    pub t_w: Vec<f64>,
    pub t_c: Vec<f64>,
}

impl NetworkTrace {
    pub fn from_sim(trace: &SimTrace, mode: Mode, t_amb: f64) -> Result<Self> {
        let r = &trace.rows;
        let out = NetworkTrace {
            mode,
            t_amb,
            t: r.iter().map(|x| x.t).collect(),
            t_p: r.iter().map(|x| x.t_p).collect(),
            pump_on: r.iter().map(|x| x.pump_on).collect(),
            t_co: r.iter().map(|x| x.t_co).collect(),
            t_w: r.iter().map(|x| x.t_w).collect(),
            t_c: r.iter().map(|x| x.t_c).collect(),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if n < 8 {
            return Err(Error::invalid("network trace needs at least 8 samples"));
        }
        if [self.t_p.len(), self.pump_on.len(), self.t_co.len(), self.t_w.len(), self.t_c.len()]
            .iter()
            .any(|&m| m != n)
        {
            return Err(Error::invalid("network trace columns differ in length"));
        }
        let h = self.t[1] - self.t[0];
        if h.is_nan() || h <= 0.0 || self.t.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-6 * h.max(1.0)) {
            return Err(Error::invalid("network trace is not uniformly sampled"));
        }
        let values = self.t.iter().chain(&self.t_p).chain(&self.t_co).chain(&self.t_w).chain(&self.t_c);
        if values.chain([&self.t_amb]).any(|v| !v.is_finite()) {
            return Err(Error::invalid("network trace contains non-finite values"));
        }
        Ok(())
    }

    fn len(&self) -> usize {
        self.t.len()
    }

    fn sample_time(&self) -> f64 {
        self.t[1] - self.t[0]
    }
}

/// Open-loop step experiment on the plant: pump-on heat injection at a fixed
/// Peltier surface temperature, then free cooling with the pump off. Returns
/// the two segments as separate traces, sampled every `sample` seconds, with
/// Gaussian noise of `sigma` K on the node temperatures.
pub fn identification_traces(
    params: &PlantParams,
    t_amb: f64,
    t_p: f64,
    segment: f64,
    sample: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<NetworkTrace>> {
    let ambient = AmbientConfig {
        t_amb,
        ..AmbientConfig::default()
    };
    let plant = Plant::new(*params, ambient);
    let sub = substeps(params, sample);
    let dt = sample / sub as f64;
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(Error::invalid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = PlantState::uniform(t_amb);
    let n = (segment / sample).round() as usize;
    let mut traces = Vec::new();
    for pump in [true, false] {
        let mut tr = NetworkTrace {
            mode: params.mode,
            t_amb,
            t: Vec::with_capacity(n),
            t_p: Vec::with_capacity(n),
            pump_on: Vec::with_capacity(n),
            t_co: Vec::with_capacity(n),
            t_w: Vec::with_capacity(n),
            t_c: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let mut jitter = || if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            tr.t.push(state.t);
            tr.t_p.push(t_p);
            tr.pump_on.push(pump);
            tr.t_co.push(state.t_co + jitter());
            tr.t_w.push(state.t_w + jitter());
            tr.t_c.push(state.t_c + jitter());
            for _ in 0..sub {
                state = plant.step(&state, t_p, pump, HeatLoad::Fixed(0.0), dt)?;
            }
        }
        traces.push(tr);
    }
    Ok(traces)
}

fn substeps(p: &PlantParams, sample: f64) -> usize {
    let fastest = (p.r_c * p.c_c).min(p.r_co * p.c_co);
    ((sample / (0.2 * fastest)).ceil() as usize).max(1)
}

fn network_params(x: &[f64; 5], c_co: f64, r_co: f64, mode: Mode) -> PlantParams {
    let mut p = PlantParams::preset(mode);
    p.r_w = x[0];
    p.c_w = x[1];
    p.r_c = x[2];
    p.c_c = x[3];
    p.r_aw = x[4];
    p.c_co = c_co;
    p.r_co = r_co;
    p
}

/// Node temperatures `(T_co, T_w, T_c)` of `params` driven by the trace's
/// input and pump schedule from `initial`.
pub fn simulate_network(params: &PlantParams, trace: &NetworkTrace, initial: [f64; 3]) -> Result<Vec<[f64; 3]>> {
    let ambient = AmbientConfig {
        t_amb: trace.t_amb,
        ..AmbientConfig::default()
    };
    let plant = Plant::new(*params, ambient);
    let h = trace.sample_time();
    let sub = substeps(params, h);
    let dt = h / sub as f64;
    let mut state = PlantState {
        t_p: trace.t_p[0],
        t_co: initial[0],
        t_w: initial[1],
        t_c: initial[2],
        pump_on: trace.pump_on[0],
        t: trace.t[0],
    };
    let mut out = Vec::with_capacity(trace.len());
    for k in 0..trace.len() {
        out.push([state.t_co, state.t_w, state.t_c]);
        if k + 1 < trace.len() {
            for _ in 0..sub {
                state = plant.step(&state, trace.t_p[k], trace.pump_on[k], HeatLoad::Fixed(0.0), dt)?;
            }
        }
    }
    Ok(out)
}

/// Trapezoidal integral of `f` over samples `a..=b`.
fn integral(h: f64, a: usize, b: usize, f: impl Fn(usize) -> f64) -> f64 {
    (a..b).map(|k| 0.5 * h * (f(k) + f(k + 1))).sum()
}

/// Least-squares initial guess from integrated energy balances over short
/// windows.
fn initial_guess(traces: &[NetworkTrace], c_co: f64, r_co: f64) -> [f64; 5] {
    let (mut num_w, mut den_w) = (0.0, 0.0);
    let mut rows_w: Vec<([f64; 2], f64)> = Vec::new();
    let (mut num_c, mut den_c) = (0.0, 0.0);
    for tr in traces {
        let h = tr.sample_time();
        let n = tr.len();
        let win = (n / 30).max(2);
        let mut a = 0;
        while a + win < n {
            let b = a + win;
            let pumped = (a..b).all(|k| tr.pump_on[k]);
            let idle = (a..b).all(|k| !tr.pump_on[k]);
            let q_w = if pumped {
                integral(h, a, b, |k| (tr.t_p[k] - tr.t_co[k]) / r_co) - c_co * (tr.t_co[b] - tr.t_co[a])
            } else {
                0.0
            };
            if pumped {
                let drive = integral(h, a, b, |k| tr.t_co[k] - tr.t_w[k]);
                num_w += q_w * drive;
                den_w += drive * drive;
            }
            if pumped || idle {
                let amb = integral(h, a, b, |k| tr.t_amb - tr.t_w[k]);
                let stored = tr.t_w[b] - tr.t_w[a];
                rows_w.push(([stored, -amb], q_w));
            }
            let drive_c = integral(h, a, b, |k| tr.t_w[k] - tr.t_c[k]);
            num_c += (tr.t_c[b] - tr.t_c[a]) * drive_c;
            den_c += drive_c * drive_c;
            a = b;
        }
    }
    let r_w = if num_w > 0.0 && den_w > 0.0 { den_w / num_w } else { 5.0 };
    // C_tot * dT_w - g_aw * int(T_amb - T_w) = int q_w
    let (mut c_tot, mut g_aw) = (200.0, 0.5);
    if rows_w.len() >= 2 {
        let m = DMatrix::from_fn(rows_w.len(), 2, |i, j| rows_w[i].0[j]);
        let rhs = DVector::from_fn(rows_w.len(), |i, _| rows_w[i].1);
        if let Ok(sol) = m.clone().svd(true, true).solve(&rhs, 1e-12) {
            if sol[0] > 0.0 && sol[1] > 0.0 {
                c_tot = sol[0];
                g_aw = sol[1];
            }
        }
    }
    let tau_c = if num_c > 0.0 { (den_c / num_c).max(1.0) } else { 50.0 };
    let c_c = 0.005 * c_tot;
    [r_w, c_tot - c_c, tau_c / c_c, c_c, 1.0 / g_aw]
}

struct Fit<'a> {
    traces: &'a [NetworkTrace],
    c_co: f64,
    r_co: f64,
    mode: Mode,
    n_res: usize,
}

impl Fit<'_> {
    /// Parameter vector: log of the five network constants followed by the
    /// initial node temperatures of each trace.
    fn residuals(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let x = [theta[0].exp(), theta[1].exp(), theta[2].exp(), theta[3].exp(), theta[4].exp()];
        let p = network_params(&x, self.c_co, self.r_co, self.mode);
        let mut r = Vec::with_capacity(self.n_res);
        for (i, tr) in self.traces.iter().enumerate() {
            let init = [theta[5 + 3 * i], theta[6 + 3 * i], theta[7 + 3 * i]];
            let sim = simulate_network(&p, tr, init)?;
            for (k, s) in sim.iter().enumerate() {
                r.push(tr.t_co[k] - s[0]);
                r.push(tr.t_w[k] - s[1]);
                r.push(tr.t_c[k] - s[2]);
            }
        }
        Ok(DVector::from_vec(r))
    }

    fn jacobian(&self, theta: &[f64], r0: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(r0.len(), theta.len());
        for c in 0..theta.len() {
            let step = if c < 5 { 1e-6 } else { 1e-6 * (1.0 + theta[c].abs()) };
            let mut th = theta.to_vec();
            th[c] += step;
            let r = self.residuals(&th)?;
            // Residual is data minus model, so the model sensitivity is the negated difference.
            j.set_column(c, &((r0 - r) / step));
        }
        Ok(j)
    }
}

/// Output-error least squares for `R_w, C_w, R_c, C_c, R_aw` against the
/// plant equations, with the tank constants known.
pub fn fit_two_node(traces: &[NetworkTrace], c_co: f64, r_co: f64) -> Result<FitReport> {
    if traces.is_empty() {
        return Err(Error::invalid("no traces to fit"));
    }
    for tr in traces {
        tr.validate()?;
    }
    if !(c_co > 0.0 && r_co > 0.0) {
        return Err(Error::invalid("known tank constants must be positive"));
    }
    let mode = traces[0].mode;
    let x0 = initial_guess(traces, c_co, r_co);
    let mut theta: Vec<f64> = x0.iter().map(|v| v.ln()).collect();
    for tr in traces {
        theta.extend([tr.t_co[0], tr.t_w[0], tr.t_c[0]]);
    }
    let fit = Fit {
        traces,
        c_co,
        r_co,
        mode,
        n_res: 3 * traces.iter().map(NetworkTrace::len).sum::<usize>(),
    };
    let n = fit.n_res;
    let m = theta.len();

    let mut r = fit.residuals(&theta)?;
    let mut j = fit.jacobian(&theta, &r)?;
    check_identifiable(&j)?;

    let mut ssr = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let mut accepted = false;
        let mut converged = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..m {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let step: Vec<f64> = step.iter().enumerate().map(|(k, s)| if k < 5 { s.clamp(-1.0, 1.0) } else { *s }).collect();
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
            let Ok(rc) = fit.residuals(&cand) else {
                lambda *= 10.0;
                continue;
            };
            let s = rc.norm_squared();
            if s <= ssr {
                let rel = (ssr - s) / ssr.max(1e-300);
                let small = step[..5].iter().all(|v| v.abs() < 1e-10);
                theta = cand;
                r = rc;
                ssr = s;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = rel < 1e-12 || small;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            break;
        }
        j = fit.jacobian(&theta, &r)?;
    }

    let values: Vec<f64> = theta[..5].iter().map(|v| v.exp()).collect();
    let residual_rms = (ssr / n as f64).sqrt();
    let sigma2 = ssr / (n as f64 - m as f64).max(1.0);
    let jtj = j.transpose() * &j;
    let cov = jtj.clone().try_inverse().map(|c| c * sigma2);
    let half_widths = (0..5)
        .map(|k| {
            cov.as_ref()
                .map_or(f64::INFINITY, |c| 1.96 * values[k] * c[(k, k)].max(0.0).sqrt())
        })
        .collect();

    // A 10% change in C_c that moves the outputs less than the residual
    // cannot be told apart from noise.
    let mut warnings = Vec::new();
    let c_c_effect = 0.1 * j.column(3).norm() / (n as f64).sqrt();
    if c_c_effect < residual_rms {
        warnings.push(format!(
            "c_c is below the noise floor: a 10% change moves the outputs by {c_c_effect:.2e} K RMS against a residual of {residual_rms:.2e} K"
        ));
    }
    Ok(FitReport {
        names: NAMES.to_vec(),
        values,
        half_widths,
        residual_rms,
        iterations,
        warnings,
    })
}

/// Fails when the output sensitivities of some parameter combination vanish.
fn check_identifiable(j: &DMatrix<f64>) -> Result<()> {
    let norms: Vec<f64> = (0..5).map(|c| j.column(c).norm()).collect();
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::IllConditioned {
            msg: "outputs do not depend on any network parameter".into(),
            unidentifiable: NAMES.iter().map(|s| s.to_string()).collect(),
        });
    }
    let mut flagged: Vec<String> = NAMES
        .iter()
        .zip(&norms)
        .filter(|(_, &v)| v <= 1e-9 * scale)
        .map(|(s, _)| s.to_string())
        .collect();
    if flagged.is_empty() {
        let cols: Vec<usize> = (0..5).collect();
        let sub = DMatrix::from_fn(j.nrows(), 5, |i, c| j[(i, cols[c])] / norms[c]);
        let svd = sub.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
        let smax = svd.singular_values.max();
        for (k, s) in svd.singular_values.iter().enumerate() {
            if *s <= 1e-8 * smax {
                for c in 0..5 {
                    if v_t[(k, c)].abs() > 0.3 && !flagged.contains(&NAMES[c].to_string()) {
                        flagged.push(NAMES[c].to_string());
                    }
                }
            }
        }
    }
    if flagged.is_empty() {
        Ok(())
    } else {
        Err(Error::IllConditioned {
            msg: format!("insufficient excitation for {}", flagged.join(", ")),
            unidentifiable: flagged,
        })
    }
}
