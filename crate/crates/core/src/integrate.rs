//! Time integration of either dynamics with a fixed-step classical
//! Runge–Kutta scheme or an adaptive Dormand–Prince 5(4) pair.
//!
//! Every accepted step is recorded together with a set of monitors:
//!
//! * vakonomic runs: `H` and `dp_<dep>` (the multiplier rates);
//! * nonholonomic runs: `E_L` and `lambda_<dep>` (the Chetaev multipliers);
//! * both: `G_<candidate>` for each candidate function (numbered
//!   `G_<candidate>_<i>` when a candidate has several). On nonholonomic
//!   runs the `p_<dep>` variables bind to the Legendre lift.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::comparison::{candidate_series, validate_candidates, Candidate};
use crate::error::{Error, Result};
use crate::nonholonomic::{energy, nh_multipliers, nh_rhs};
use crate::reduced;
use crate::system::{NhState, SystemDef, VakState};
use crate::vakonomic::{hamiltonian, vak_rhs};

pub const DEFAULT_RTOL: f64 = 1e-9;
pub const DEFAULT_ATOL: f64 = 1e-11;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_MAX_STEPS: usize = 2_000_000;
const MAX_REJECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Vak,
    Nh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Rk4 { dt: f64 },
    Rk45 { rtol: f64, atol: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Rk45 {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub t_end: f64,
    pub method: Method,
    pub max_steps: usize,
    pub candidates: Vec<Candidate>,
}

impl Options {
    pub fn new(t_end: f64, method: Method) -> Self {
        Options {
            t_end,
            method,
            max_steps: DEFAULT_MAX_STEPS,
            candidates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum State {
    Vak(VakState),
    Nh(NhState),
}

impl State {
    pub fn q(&self) -> &[f64] {
        match self {
            State::Vak(s) => &s.q,
            State::Nh(s) => &s.q,
        }
    }
    pub fn v(&self) -> &[f64] {
        match self {
            State::Vak(s) => &s.v,
            State::Nh(s) => &s.v,
        }
    }
    /// Multipliers of a vakonomic state; empty for nonholonomic ones.
    pub fn p(&self) -> &[f64] {
        match self {
            State::Vak(s) => &s.p,
            State::Nh(_) => &[],
        }
    }
    pub fn dynamics(&self) -> Dynamics {
        match self {
            State::Vak(_) => Dynamics::Vak,
            State::Nh(_) => Dynamics::Nh,
        }
    }

    fn flatten(&self) -> Vec<f64> {
        [self.q(), self.v(), self.p()].concat()
    }

    fn unflatten(sys: &SystemDef, dynamics: Dynamics, y: &[f64]) -> State {
        let (n, k) = (sys.n(), sys.k());
        let q = y[..n].to_vec();
        let v = y[n..n + k].to_vec();
        match dynamics {
            Dynamics::Vak => State::Vak(VakState::new(q, v, y[n + k..].to_vec())),
            Dynamics::Nh => State::Nh(NhState::new(q, v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dynamics: Dynamics,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Named series aligned with `times`, in output column order.
    pub monitors: Vec<(String, Vec<f64>)>,
}

impl Trajectory {
    pub fn monitor(&self, name: &str) -> Option<&[f64]> {
        self.monitors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("a trajectory holds its initial state")
    }
}

fn rhs(sys: &SystemDef, dynamics: Dynamics, y: &[f64]) -> Result<Vec<f64>> {
    Ok(match State::unflatten(sys, dynamics, y) {
        State::Vak(s) => {
            let d = vak_rhs(sys, &s)?;
            [d.dq, d.dv, d.dp_dep].concat()
        }
        State::Nh(s) => {
            let d = nh_rhs(sys, &s)?;
            [d.dq, d.dv].concat()
        }
    })
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let mut inc = 0.0;
            for (c, k) in terms {
                inc += c * k[i];
            }
            y[i] + h * inc
        })
        .collect()
}

fn rk4_step(f: &dyn Fn(&[f64]) -> Result<Vec<f64>>, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = f(y)?;
    let k2 = f(&axpy(y, h, &[(0.5, &k1)]))?;
    let k3 = f(&axpy(y, h, &[(0.5, &k2)]))?;
    let k4 = f(&axpy(y, h, &[(1.0, &k3)]))?;
    Ok(axpy(
        y,
        h,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
    ))
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince attempt. Returns the fifth-order solution, the
/// derivative there (first-same-as-last) and the scaled error norm.
fn dopri_step(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    y: &[f64],
    k1: &[f64],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let _ = C;
    let mut ks: Vec<Vec<f64>> = vec![k1.to_vec()];
    for row in A.iter().skip(1) {
        let terms: Vec<(f64, &[f64])> = row.iter().zip(&ks).map(|(&a, k)| (a, k.as_slice())).collect();
        let yi = axpy(y, h, &terms);
        ks.push(f(&yi)?);
    }
    // Stage 7 was evaluated at the fifth-order solution itself.
    let terms: Vec<(f64, &[f64])> = B5.iter().zip(&ks).map(|(&b, k)| (b, k.as_slice())).collect();
    let y5 = axpy(y, h, &terms);
    let mut err = 0.0_f64;
    for i in 0..y.len() {
        let mut e = 0.0;
        for (s, k) in ks.iter().enumerate() {
            e += (B5[s] - B4[s]) * k[i];
        }
        let scale = atol + rtol * y[i].abs().max(y5[i].abs());
        err = err.max((h * e).abs() / scale);
    }
    Ok((y5, ks.pop().unwrap_or_default(), err))
}

fn initial_step(f0: &[f64], y0: &[f64], rtol: f64, atol: f64, span: f64) -> f64 {
    let norm = |x: &[f64]| {
        x.iter()
            .zip(y0)
            .map(|(a, y)| (a / (atol + rtol * y.abs())).abs())
            .fold(0.0_f64, f64::max)
    };
    let (d0, d1) = (norm(y0), norm(f0));
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(span).min(0.1 * span.max(1e-12)).max(1e-12)
}

fn check_state(sys: &SystemDef, s0: &State) -> Result<()> {
    match s0 {
        State::Vak(s) => sys.check_vak(s),
        State::Nh(s) => sys.check_nh(s),
    }
}

pub fn integrate(sys: &SystemDef, s0: &State, opts: &Options) -> Result<Trajectory> {
    check_state(sys, s0)?;
    validate_candidates(sys, &opts.candidates)?;
    if !(opts.t_end >= 0.0) || !opts.t_end.is_finite() {
        return Err(Error::Invalid(format!("t_end must be finite and >= 0, got {}", opts.t_end)));
    }
    let dynamics = s0.dynamics();
    let f = |y: &[f64]| rhs(sys, dynamics, y);
    let at = |t: f64, e: Error| Error::AtTime { t, source: Box::new(e) };

    let mut y = s0.flatten();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![s0.clone()];
    let mut fy = f(&y).map_err(|e| at(0.0, e))?;
    let t_end = opts.t_end;

    match opts.method {
        Method::Rk4 { dt } => {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
            }
            let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
            if steps > opts.max_steps {
                return Err(Error::StepFailure {
                    reason: format!("{steps} steps needed, max_steps is {}", opts.max_steps),
                });
            }
            for i in 1..=steps {
                let t_next = if i == steps { t_end } else { i as f64 * dt };
                y = rk4_step(&f, &y, t_next - t).map_err(|e| at(t, e))?;
                t = t_next;
                times.push(t);
                states.push(State::unflatten(sys, dynamics, &y));
            }
        }
        Method::Rk45 { rtol, atol } => {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(Error::Invalid("rtol and atol must be positive".into()));
            }
            let mut h = initial_step(&fy, &y, rtol, atol, t_end);
            let mut accepted = 0usize;
            while t < t_end {
                let mut rejections = 0;
                loop {
                    let last = t + h >= t_end * (1.0 - 1e-14);
                    let step = if last { t_end - t } else { h };
                    let (y_new, f_new, err) = dopri_step(&f, &y, &fy, step, rtol, atol).map_err(|e| at(t, e))?;
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    if err <= 1.0 && err.is_finite() {
                        t = if last { t_end } else { t + step };
                        y = y_new;
                        fy = f_new;
                        h = step * factor;
                        break;
                    }
                    rejections += 1;
                    h = step * if err.is_finite() { factor } else { 0.2 };
                    if rejections >= MAX_REJECTIONS || h <= 1e-14 * t.abs().max(1.0) {
                        return Err(at(
                            t,
                            Error::StepFailure {
                                reason: format!("{rejections} rejections, step size {h:e}, error norm {err:e}"),
                            },
                        ));
                    }
                }
                accepted += 1;
                if accepted > opts.max_steps {
                    return Err(at(
                        t,
                        Error::StepFailure {
                            reason: format!("more than {} steps", opts.max_steps),
                        },
                    ));
                }
                times.push(t);
                states.push(State::unflatten(sys, dynamics, &y));
            }
        }
    }

    let monitors = monitor_series(sys, &states, &times, &opts.candidates)?;
    Ok(Trajectory {
        dynamics,
        times,
        states,
        monitors,
    })
}

fn monitor_series(
    sys: &SystemDef,
    states: &[State],
    times: &[f64],
    candidates: &[Candidate],
) -> Result<Vec<(String, Vec<f64>)>> {
    let dep = sys.dependent_names();
    let mut names: Vec<String> = Vec::new();
    match states.first().map(State::dynamics) {
        Some(Dynamics::Vak) | None => {
            names.push("H".into());
            names.extend(dep.iter().map(|d| format!("dp_{d}")));
        }
        Some(Dynamics::Nh) => {
            names.push("E_L".into());
            names.extend(dep.iter().map(|d| format!("lambda_{d}")));
        }
    }
    for c in candidates {
        if c.functions.len() == 1 {
            names.push(format!("G_{}", c.name));
        } else {
            names.extend((1..=c.functions.len()).map(|i| format!("G_{}_{i}", c.name)));
        }
    }
    let mut series = vec![Vec::with_capacity(states.len()); names.len()];
    for (state, &t) in states.iter().zip(times) {
        let row = monitor_row(sys, state, candidates).map_err(|e| Error::AtTime { t, source: Box::new(e) })?;
        for (col, x) in series.iter_mut().zip(row) {
            col.push(x);
        }
    }
    Ok(names.into_iter().zip(series).collect())
}

fn monitor_row(sys: &SystemDef, state: &State, candidates: &[Candidate]) -> Result<Vec<f64>> {
    let mut row = Vec::new();
    let lifted = match state {
        State::Vak(s) => {
            row.push(hamiltonian(sys, s)?);
            row.extend(vak_rhs(sys, s)?.dp_dep);
            s.clone()
        }
        State::Nh(s) => {
            row.push(energy(sys, s)?);
            let d = nh_rhs(sys, s)?;
            row.extend(nh_multipliers(sys, s, &d)?);
            let pi = reduced::ambient_momenta(sys, &s.q, &s.v)?;
            let p = sys.dependent().iter().map(|&i| pi[i]).collect();
            VakState::new(s.q.clone(), s.v.clone(), p)
        }
    };
    for c in candidates {
        row.extend(candidate_series(sys, c, &lifted)?);
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `|X(t) − X(0)|` per monitored quantity.
    pub series: Vec<(String, Vec<f64>)>,
    pub maxima: Vec<(String, f64)>,
}

impl DriftReport {
    pub fn max(&self, name: &str) -> Option<f64> {
        self.maxima.iter().find(|(n, _)| n == name).map(|(_, x)| *x)
    }
}

/// Drift of the conserved quantity (`H` or `E_L`) and of every candidate
/// function along the trajectory.
pub fn drift_report(_sys: &SystemDef, traj: &Trajectory) -> DriftReport {
    let mut series = Vec::new();
    let mut maxima = Vec::new();
    for (name, values) in &traj.monitors {
        if !(name == "H" || name == "E_L" || name.starts_with("G_")) {
            continue;
        }
        let x0 = values.first().copied().unwrap_or(0.0);
        let drift: Vec<f64> = values.iter().map(|x| (x - x0).abs()).collect();
        maxima.push((name.clone(), drift.iter().copied().fold(0.0, f64::max)));
        series.push((name.clone(), drift));
    }
    DriftReport { series, maxima }
}

// -- CSV ----------------------------------------------------------------------

fn header(sys: &SystemDef, traj: &Trajectory) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(sys.coords().iter().cloned());
    h.extend(sys.base().iter().map(|&i| sys.velocity_name(i)));
    if traj.dynamics == Dynamics::Vak {
        h.extend(sys.dependent_names().iter().map(|d| format!("p_{d}")));
    }
    h.extend(traj.monitors.iter().map(|(n, _)| n.clone()));
    h
}

/// Writes one row per recorded step with 17 significant digits.
pub fn write_csv(sys: &SystemDef, traj: &Trajectory, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(sys, traj))?;
    for (i, (t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut row = vec![*t];
        row.extend_from_slice(s.q());
        row.extend_from_slice(s.v());
        row.extend_from_slice(s.p());
        row.extend(traj.monitors.iter().map(|(_, m)| m[i]));
        w.write_record(row.iter().map(|x| format!("{x:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file produced by [`write_csv`] for the same system.
pub fn read_csv(sys: &SystemDef, input: impl Read) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let head: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let (n, k, m) = (sys.n(), sys.k(), sys.m());
    let fixed = 1 + n + k;
    if head.len() < fixed || head[0] != "t" || head[1..1 + n] != *sys.coords() {
        return Err(Error::Format {
            line: 1,
            message: "header does not match the system".into(),
        });
    }
    let expected_p: Vec<String> = sys.dependent_names().iter().map(|d| format!("p_{d}")).collect();
    let dynamics = if head.len() >= fixed + m && head[fixed..fixed + m] == *expected_p {
        Dynamics::Vak
    } else {
        Dynamics::Nh
    };
    let first_monitor = fixed + if dynamics == Dynamics::Vak { m } else { 0 };
    let mut monitors: Vec<(String, Vec<f64>)> =
        head[first_monitor..].iter().map(|n| (n.clone(), Vec::new())).collect();
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format {
                line: i + 2,
                message: e.to_string(),
            })?;
        if row.len() != head.len() {
            return Err(Error::Format {
                line: i + 2,
                message: format!("expected {} fields, got {}", head.len(), row.len()),
            });
        }
        times.push(row[0]);
        states.push(State::unflatten(sys, dynamics, &row[1..first_monitor]));
        for (col, x) in monitors.iter_mut().zip(&row[first_monitor..]) {
            col.1.push(*x);
        }
    }
    Ok(Trajectory {
        dynamics,
        times,
        states,
        monitors,
    })
}
