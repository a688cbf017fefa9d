//! Continuous-time evaluation of solved policies under activation
//! signals: the independent verification oracle.
//!
//! The activation signal is sampled every `T_C` and linearly interpolated
//! in between; state propagation uses the exact closed form of the buffer
//! dynamics on each affine segment, so no discretization error enters the
//! check.

use std::fmt::Write as _;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::AffinePolicy;
use crate::resource::{ResourceParams, HOUR_S};
use crate::timegrid::{TimeGrid, Timescale};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimError {
    #[error("time {t} s outside the horizon [0, {horizon} s]")]
    TimeOutOfRange { t: f64, horizon: u64 },
    #[error("signal has {got} samples, expected {expected}")]
    SampleCount { got: usize, expected: usize },
    #[error("signal parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace length mismatch: {got} samples, expected {expected}")]
    TraceLength { got: usize, expected: usize },
}

/// Activation samples `w_l` at times `l * T_C` for `l = 1..=N_C`, with
/// `w(t)` the linear interpolation (and `w(0) := w_1`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActivationSignal {
    pub samples: Vec<f64>,
    pub source: String,
}

/// How to synthesize an activation signal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SignalKind {
    Constant { value: f64 },
    Square { period_s: u64, amplitude: f64 },
    /// `w_{l+1} = clip(w_l + uniform(-step, step) + bias, -1, 1)`.
    BoundedWalk { step: f64, bias: f64, seed: u64 },
}

impl ActivationSignal {
    pub fn validate(&self, grid: &TimeGrid) -> Result<(), SimError> {
        if self.samples.len() != grid.n_c() {
            return Err(SimError::SampleCount {
                got: self.samples.len(),
                expected: grid.n_c(),
            });
        }
        Ok(())
    }

    /// Sample `l` (1-based); `l = 0` aliases the first sample.
    fn sample(&self, l: usize) -> f64 {
        if l == 0 {
            self.samples[0]
        } else {
            self.samples[l - 1]
        }
    }

    /// Interpolated value at time `t` seconds.
    pub fn value_at(&self, t: f64, grid: &TimeGrid) -> Result<f64, SimError> {
        let horizon = grid.horizon_s();
        if !(0.0..=horizon as f64).contains(&t) {
            return Err(SimError::TimeOutOfRange { t, horizon });
        }
        let t_c = grid.t_c() as f64;
        let l = ((t / t_c).floor() as usize).min(grid.n_c() - 1); // segment l+1
        let frac = (t - l as f64 * t_c) / t_c;
        Ok(self.sample(l) * (1.0 - frac) + self.sample(l + 1) * frac)
    }

    /// One float per line; out-of-range values are clipped.  Returns the
    /// signal and the number of clipped samples.
    pub fn from_lines(text: &str, grid: &TimeGrid) -> Result<(Self, usize), SimError> {
        let mut samples = Vec::new();
        let mut clipped = 0;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|e| SimError::Parse {
                line: i + 1,
                reason: format!("{e}"),
            })?;
            if !(-1.0..=1.0).contains(&v) {
                clipped += 1;
            }
            samples.push(v.clamp(-1.0, 1.0));
        }
        let s = ActivationSignal {
            samples,
            source: "csv".into(),
        };
        s.validate(grid)?;
        Ok((s, clipped))
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for v in &self.samples {
            writeln!(out, "{v}").unwrap();
        }
        out
    }
}

/// Deterministic signal synthesis (fixed seed => fixed samples).
pub fn gen_signal(grid: &TimeGrid, kind: &SignalKind) -> ActivationSignal {
    let n_c = grid.n_c();
    let t_c = grid.t_c();
    let samples = match kind {
        SignalKind::Constant { value } => vec![value.clamp(-1.0, 1.0); n_c],
        SignalKind::Square { period_s, amplitude } => (1..=n_c)
            .map(|l| {
                let t = (l as u64 - 1) * t_c;
                let phase = t % period_s;
                if phase < period_s / 2 {
                    *amplitude
                } else {
                    -amplitude
                }
            })
            .collect(),
        SignalKind::BoundedWalk { step, bias, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut w = 0.0f64;
            (0..n_c)
                .map(|_| {
                    w = (w + rng.gen_range(-step..=*step) + bias).clamp(-1.0, 1.0);
                    w
                })
                .collect()
        }
    };
    let source = match kind {
        SignalKind::Constant { value } => format!("constant({value})"),
        SignalKind::Square { period_s, amplitude } => format!("square({period_s},{amplitude})"),
        SignalKind::BoundedWalk { step, bias, seed } => format!("walk({step},{bias},{seed})"),
    };
    ActivationSignal { samples, source }
}

/// Exact interval averages of the interpolated signal over each system
/// interval: the mean of the per-segment trapezoids.
pub fn interval_averages(signal: &ActivationSignal, grid: &TimeGrid) -> Vec<f64> {
    let per = (grid.t_s() / grid.t_c()) as usize;
    (0..grid.n_s())
        .map(|s| {
            let mut acc = 0.0;
            for l in s * per..(s + 1) * per {
                acc += (signal.sample(l) + signal.sample(l + 1)) / 2.0;
            }
            (acc / per as f64).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Reference and target power at time `t` (seconds).
pub fn eval_power(
    policy: &AffinePolicy,
    w_avg: &[f64],
    signal: &ActivationSignal,
    grid: &TimeGrid,
    t: f64,
) -> Result<(f64, f64), SimError> {
    let horizon = grid.horizon_s();
    if !(0.0..=horizon as f64).contains(&t) {
        return Err(SimError::TimeOutOfRange { t, horizon });
    }
    let bp = policy.breakpoints(w_avg);
    let t_s = grid.t_s() as f64;
    let k = ((t / t_s).floor() as usize).min(grid.n_s() - 1);
    let frac = (t - k as f64 * t_s) / t_s;
    let p_ref = bp[k] * (1.0 - frac) + bp[k + 1] * frac;
    let w = signal.value_at(t, grid)?;
    Ok((p_ref, p_ref + policy.gamma_at(k) * w))
}

/// Exact closed-form propagation of `dx/dt = a x + (b u + c p)/3600` over
/// one segment of `dt_s` seconds with affine power `p0 -> p1`.
pub fn step_state(phi: &ResourceParams, x0: f64, u: f64, p0: f64, p1: f64, dt_s: f64) -> f64 {
    let t_h = dt_s / HOUR_S;
    let a_h = phi.a * HOUR_S; // 1/h
    let f0 = phi.b * u + phi.c * p0; // kW at segment start
    let f1 = phi.c * (p1 - p0) / t_h; // kW per hour slope
    if a_h == 0.0 {
        x0 + f0 * t_h + f1 * t_h * t_h / 2.0
    } else {
        let e = (a_h * t_h).exp();
        let alpha = (e - 1.0) / a_h;
        let beta = (e - 1.0 - a_h * t_h) / (a_h * a_h);
        e * x0 + f0 * alpha + f1 * beta
    }
}

/// State trace at `T_C` resolution from a `p_tgt` trace with `N_C + 1`
/// samples; `u` is per system interval.
pub fn integrate_state(
    phi: &ResourceParams,
    p_tgt: &[f64],
    x0: f64,
    grid: &TimeGrid,
) -> Result<Vec<f64>, SimError> {
    if p_tgt.len() != grid.n_c() + 1 {
        return Err(SimError::TraceLength {
            got: p_tgt.len(),
            expected: grid.n_c() + 1,
        });
    }
    let dt = grid.t_c() as f64;
    let per = (grid.t_s() / grid.t_c()) as usize;
    let mut x = Vec::with_capacity(grid.n_c() + 1);
    x.push(x0);
    let mut cur = x0;
    for l in 0..grid.n_c() {
        let s = l / per;
        cur = step_state(phi, cur, phi.u[s], p_tgt[l], p_tgt[l + 1], dt);
        x.push(cur);
    }
    Ok(x)
}

/// Per-resource sampled trajectories.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResourceTrace {
    pub label: String,
    /// `N_C + 1` samples at `T_C`.
    pub p_ref: Vec<f64>,
    pub p_tgt: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub resources: Vec<ResourceTrace>,
    /// Aggregate reference and target, `N_C + 1` samples.
    pub agg_p_ref: Vec<f64>,
    pub agg_p_tgt: Vec<f64>,
    /// Aggregate capacity per system interval.
    pub gamma_agg: Vec<f64>,
    pub w_avg: Vec<f64>,
    pub signal: ActivationSignal,
    /// Delivered regulation energy per intra-day interval, kWh.
    pub e_up: Vec<f64>,
    pub e_dn: Vec<f64>,
}

/// Runs the full simulation: reference and target power at every sample,
/// exact state integration, and rectified regulation energy.  Initial
/// state defaults to the midpoint of the admissible initial interval.
pub fn simulate(
    items: &[(ResourceParams, AffinePolicy)],
    signal: &ActivationSignal,
    grid: &TimeGrid,
) -> Result<SimulationTrace, SimError> {
    signal.validate(grid)?;
    let w_avg = interval_averages(signal, grid);
    let n_c = grid.n_c();
    let per = (grid.t_s() / grid.t_c()) as usize;
    let mut resources = Vec::with_capacity(items.len());
    let mut agg_p_ref = vec![0.0; n_c + 1];
    let mut agg_p_tgt = vec![0.0; n_c + 1];
    let n_s = grid.n_s();
    let mut gamma_agg = vec![0.0; n_s];
    for (phi, policy) in items {
        for k in 0..n_s {
            gamma_agg[k] += policy.gamma_at(k);
        }
        let bp = policy.breakpoints(&w_avg);
        let mut p_ref = Vec::with_capacity(n_c + 1);
        let mut p_tgt = Vec::with_capacity(n_c + 1);
        for l in 0..=n_c {
            let s = (l / per).min(n_s - 1);
            let frac = (l % per) as f64 / per as f64;
            let (s, frac) = if l == n_c { (n_s - 1, 1.0) } else { (s, frac) };
            let pr = bp[s] * (1.0 - frac) + bp[s + 1] * frac;
            let w = signal.sample(l);
            p_ref.push(pr);
            p_tgt.push(pr + policy.gamma_at(s) * w);
        }
        let x0 = if phi.x0_min.is_finite() && phi.x0_max.is_finite() {
            (phi.x0_min + phi.x0_max) / 2.0
        } else {
            0.0
        };
        let x = integrate_state(phi, &p_tgt, x0, grid)?;
        for l in 0..=n_c {
            agg_p_ref[l] += p_ref[l];
            agg_p_tgt[l] += p_tgt[l];
        }
        resources.push(ResourceTrace {
            label: phi.label.clone(),
            p_ref,
            p_tgt,
            x,
        });
    }
    let (e_up, e_dn) = regulation_energy(&gamma_agg, signal, grid);
    Ok(SimulationTrace {
        resources,
        agg_p_ref,
        agg_p_tgt,
        gamma_agg,
        w_avg,
        signal: signal.clone(),
        e_up,
        e_dn,
    })
}

/// Rectified regulation energy per intra-day interval, exact for the
/// piecewise-linear signal (zero crossings are split analytically).
pub fn regulation_energy(
    gamma: &[f64],
    signal: &ActivationSignal,
    grid: &TimeGrid,
) -> (Vec<f64>, Vec<f64>) {
    let n_id = grid.count(Timescale::IntraDay);
    let per_s = (grid.t_s() / grid.t_c()) as usize;
    let per_id = grid.system_per(Timescale::IntraDay) * per_s;
    let t_c_h = grid.t_c() as f64 / HOUR_S;
    let mut e_up = vec![0.0; n_id];
    let mut e_dn = vec![0.0; n_id];
    for l in 0..grid.n_c() {
        let m = l / per_id;
        let s = l / per_s;
        let g = gamma[s];
        let (w0, w1) = (signal.sample(l), signal.sample(l + 1));
        let (a, b) = (g * w0, g * w1);
        // integral of max(.., 0) and max(-.., 0) of the linear segment
        let (up, dn) = if a >= 0.0 && b >= 0.0 {
            ((a + b) / 2.0 * t_c_h, 0.0)
        } else if a <= 0.0 && b <= 0.0 {
            (0.0, -(a + b) / 2.0 * t_c_h)
        } else {
            let frac = a / (a - b); // zero crossing within the segment
            let tri_a = a.abs() * frac / 2.0 * t_c_h;
            let tri_b = b.abs() * (1.0 - frac) / 2.0 * t_c_h;
            if a > 0.0 {
                (tri_a, tri_b)
            } else {
                (tri_b, tri_a)
            }
        };
        e_up[m] += up;
        e_dn[m] += dn;
    }
    (e_up, e_dn)
}

#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Family {
    Power,
    Ramp,
    State,
}

/// Worst constraint violation of one family for one resource.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceViolation {
    pub family: Family,
    pub resource: String,
    pub time_s: f64,
    pub amount: f64,
}

/// Checks power bounds at samples, ramp rates by one-sided differences
/// over `T_C`, and state bounds at samples.  Reports the worst violation
/// per family and resource exceeding `tol`.
pub fn verify_trace(
    trace: &SimulationTrace,
    phis: &[ResourceParams],
    grid: &TimeGrid,
    tol: f64,
) -> Vec<TraceViolation> {
    let mut report = Vec::new();
    let per = (grid.t_s() / grid.t_c()) as usize;
    let t_c = grid.t_c() as f64;
    let n_s = grid.n_s();
    for (rt, phi) in trace.resources.iter().zip(phis) {
        let mut worst: [Option<TraceViolation>; 3] = [None, None, None];
        let mut note = |slot: usize, family: Family, time_s: f64, amount: f64| {
            if amount > tol {
                let better = worst[slot]
                    .as_ref()
                    .map(|w| amount > w.amount)
                    .unwrap_or(true);
                if better {
                    worst[slot] = Some(TraceViolation {
                        family,
                        resource: rt.label.clone(),
                        time_s,
                        amount,
                    });
                }
            }
        };
        for l in 0..rt.p_tgt.len() {
            let s = (l / per).min(n_s - 1);
            let t = l as f64 * t_c;
            let p = rt.p_tgt[l];
            note(0, Family::Power, t, (p - phi.p_max[s]).max(phi.p_min[s] - p));
            if l > 0 {
                let rate = (p - rt.p_tgt[l - 1]) / t_c;
                note(
                    1,
                    Family::Ramp,
                    t,
                    (rate - phi.r_max[s]).max(phi.r_min[s] - rate),
                );
            }
            let x = rt.x[l];
            note(2, Family::State, t, (x - phi.x_max[s]).max(phi.x_min[s] - x));
        }
        report.extend(worst.into_iter().flatten());
    }
    report
}

/// Wide CSV: time plus per-resource reference, target, and state columns,
/// then the aggregate columns and the signal.
pub fn trace_to_csv(trace: &SimulationTrace, grid: &TimeGrid) -> String {
    let mut out = String::from("time_s");
    for rt in &trace.resources {
        write!(out, ",p_ref_{0},p_tgt_{0},x_{0}", rt.label).unwrap();
    }
    out.push_str(",agg_p_ref,agg_p_tgt,w\n");
    let t_c = grid.t_c() as f64;
    for l in 0..=grid.n_c() {
        write!(out, "{}", l as f64 * t_c).unwrap();
        for rt in &trace.resources {
            write!(out, ",{},{},{}", rt.p_ref[l], rt.p_tgt[l], rt.x[l]).unwrap();
        }
        writeln!(
            out,
            ",{},{},{}",
            trace.agg_p_ref[l],
            trace.agg_p_tgt[l],
            trace.signal.sample(l)
        )
        .unwrap();
    }
    out
}
