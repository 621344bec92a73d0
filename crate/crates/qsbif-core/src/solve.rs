//! Dormand-Prince 5(4) integration with dense output, forced step
//! boundaries, and time-dependent parameter drivers.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64, state: Vec<f64> },
    #[error("trajectory left the field domain at t = {t}: {source}")]
    Domain {
        t: f64,
        state: Vec<f64>,
        source: ModelError,
    },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxSteps {
        t: f64,
        state: Vec<f64>,
        max_steps: usize,
    },
    #[error("invalid integrator setting: {0}")]
    Setting(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Autonomous or time-dependent first-order system.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError>;
    /// Times the integrator must land on exactly.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Drivers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverInfo {
    pub kind: String,
    pub target: String,
    pub settings: Vec<(String, f64)>,
}

/// Time law for one parameter.
pub trait Driver: Send + Sync {
    fn kind(&self) -> &'static str;
    fn target(&self) -> &str;
    fn value(&self, t: f64) -> f64;
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    fn settings(&self) -> Vec<(String, f64)>;
    /// Smallest value taken over all t.
    fn min_value(&self) -> f64;

    fn info(&self) -> DriverInfo {
        DriverInfo {
            kind: self.kind().to_string(),
            target: self.target().to_string(),
            settings: self.settings(),
        }
    }
}

impl fmt::Debug for dyn Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Driver({} on {})", self.kind(), self.target())
    }
}

#[derive(Debug, Clone)]
pub struct ConstantDriver {
    pub target: String,
    pub value: f64,
}

impl Driver for ConstantDriver {
    fn kind(&self) -> &'static str {
        "constant"
    }
    fn target(&self) -> &str {
        &self.target
    }
    fn value(&self, _t: f64) -> f64 {
        self.value
    }
    fn settings(&self) -> Vec<(String, f64)> {
        vec![("value".into(), self.value)]
    }
    fn min_value(&self) -> f64 {
        self.value
    }
}

/// Linear interpolation from `start` to `end` over [t_start, t_end], held
/// constant outside. A ramp with `end < start` reports itself as a reverse
/// ramp.
#[derive(Debug, Clone)]
pub struct RampDriver {
    pub target: String,
    pub start: f64,
    pub end: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl Driver for RampDriver {
    fn kind(&self) -> &'static str {
        if self.end < self.start {
            "reverse-ramp"
        } else {
            "linear-ramp"
        }
    }
    fn target(&self) -> &str {
        &self.target
    }
    fn value(&self, t: f64) -> f64 {
        if t <= self.t_start {
            self.start
        } else if t >= self.t_end {
            self.end
        } else {
            let th = (t - self.t_start) / (self.t_end - self.t_start);
            self.start + th * (self.end - self.start)
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.t_start, self.t_end]
    }
    fn settings(&self) -> Vec<(String, f64)> {
        vec![
            ("start".into(), self.start),
            ("end".into(), self.end),
            ("t_start".into(), self.t_start),
            ("t_end".into(), self.t_end),
        ]
    }
    fn min_value(&self) -> f64 {
        self.start.min(self.end)
    }
}

/// A + B sin(omega t + phi).
#[derive(Debug, Clone)]
pub struct SinusoidalDriver {
    pub target: String,
    pub offset: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Driver for SinusoidalDriver {
    fn kind(&self) -> &'static str {
        "sinusoidal"
    }
    fn target(&self) -> &str {
        &self.target
    }
    fn value(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.omega * t + self.phase).sin()
    }
    fn settings(&self) -> Vec<(String, f64)> {
        vec![
            ("A".into(), self.offset),
            ("B".into(), self.amplitude),
            ("omega".into(), self.omega),
            ("phi".into(), self.phase),
        ]
    }
    fn min_value(&self) -> f64 {
        self.offset - self.amplitude.abs()
    }
}

// ---------------------------------------------------------------------------
// Adapters

/// A vector field at fixed or driven parameters.
pub struct FieldSystem<'a> {
    field: &'a dyn VectorField,
    params: Vec<f64>,
    driver: Option<(&'a dyn Driver, usize)>,
}

impl<'a> FieldSystem<'a> {
    pub fn new(field: &'a dyn VectorField, params: &[f64]) -> Self {
        FieldSystem {
            field,
            params: params.to_vec(),
            driver: None,
        }
    }

    pub fn driven(
        field: &'a dyn VectorField,
        params: &[f64],
        driver: &'a dyn Driver,
    ) -> Result<Self, ModelError> {
        let idx = field.param_index(driver.target())?;
        Ok(FieldSystem {
            field,
            params: params.to_vec(),
            driver: Some((driver, idx)),
        })
    }
}

impl OdeSystem for FieldSystem<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        match self.driver {
            None => self.field.eval(x, &self.params, out),
            Some((d, idx)) => {
                let mut p = [0.0; 16];
                let p = &mut p[..self.params.len()];
                p.copy_from_slice(&self.params);
                p[idx] = d.value(t);
                self.field.eval(x, p, out)
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.driver.map(|(d, _)| d.breakpoints()).unwrap_or_default()
    }
}

/// State plus `cols` tangent columns, optionally a parameter-sensitivity
/// column and the running integral of the field divergence.
///
/// Layout: x (n) | tangent columns (n each) | sensitivity (n) | divergence (1).
pub struct Variational<'a> {
    field: &'a dyn VectorField,
    params: Vec<f64>,
    cols: usize,
    sensitivity: Option<usize>,
    divergence: bool,
}

impl<'a> Variational<'a> {
    pub fn new(field: &'a dyn VectorField, params: &[f64], cols: usize) -> Self {
        Variational {
            field,
            params: params.to_vec(),
            cols,
            sensitivity: None,
            divergence: false,
        }
    }

    pub fn with_sensitivity(mut self, param: usize) -> Self {
        self.sensitivity = Some(param);
        self
    }

    pub fn with_divergence(mut self) -> Self {
        self.divergence = true;
        self
    }

    /// Initial extended state with identity tangent columns and zero
    /// sensitivity and divergence.
    pub fn initial(&self, x0: &[f64]) -> Vec<f64> {
        let n = self.field.dim();
        let mut y = vec![0.0; self.dim()];
        y[..n].copy_from_slice(x0);
        for c in 0..self.cols.min(n) {
            y[n + c * n + c] = 1.0;
        }
        y
    }
}

impl OdeSystem for Variational<'_> {
    fn dim(&self) -> usize {
        let n = self.field.dim();
        n + n * self.cols + if self.sensitivity.is_some() { n } else { 0 } + self.divergence as usize
    }

    fn rhs(&self, _t: f64, y: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        let n = self.field.dim();
        let x = &y[..n];
        self.field.eval(x, &self.params, &mut out[..n])?;
        let mut j = [0.0; 16];
        let j = &mut j[..n * n];
        self.field.jacobian(x, &self.params, j)?;
        let mut blocks = self.cols;
        if self.sensitivity.is_some() {
            blocks += 1;
        }
        for c in 0..blocks {
            let col = &y[n + c * n..n + (c + 1) * n];
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += j[i * n + k] * col[k];
                }
                out[n + c * n + i] = acc;
            }
        }
        if let Some(pi) = self.sensitivity {
            let mut fp = [0.0; 4];
            self.field
                .param_derivative(x, &self.params, pi, &mut fp[..n])?;
            let base = n + self.cols * n;
            for i in 0..n {
                out[base + i] += fp[i];
            }
        }
        if self.divergence {
            let tr: f64 = (0..n).map(|i| j[i * n + i]).sum();
            let last = out.len() - 1;
            out[last] = tr;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Integrator

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
    pub hmax: Option<f64>,
    pub hmin: f64,
    pub max_steps: usize,
    /// Keep every accepted step (and its dense coefficients). When false only
    /// the endpoints are kept.
    pub record: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-8,
            atol: 1e-10,
            h0: None,
            hmax: None,
            hmin: 1e-14,
            max_steps: 5_000_000,
            record: true,
        }
    }
}

impl IntegratorOptions {
    pub fn tolerances(rtol: f64, atol: f64) -> Self {
        IntegratorOptions {
            rtol,
            atol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub steps: usize,
    pub rejects: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    t0: f64,
    h: f64,
    coef: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub driver: Option<DriverInfo>,
    pub stats: Stats,
    /// Set when an observer asked to stop before the end of the span.
    pub stopped_early: bool,
    segments: Vec<Segment>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.x.last().expect("trajectory has at least one sample")
    }

    pub fn last_time(&self) -> f64 {
        *self.t.last().expect("trajectory has at least one sample")
    }

    pub fn t_span(&self) -> (f64, f64) {
        (self.t[0], self.last_time())
    }

    pub fn has_dense(&self) -> bool {
        !self.segments.is_empty()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.x.iter().map(|x| x[i]).collect()
    }

    /// Dense output. Returns the stored state exactly at step endpoints.
    pub fn dense(&self, t: f64) -> Option<Vec<f64>> {
        let (t0, t1) = self.t_span();
        if t < t0 || t > t1 || self.segments.is_empty() {
            return None;
        }
        let i = match self.t.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return Some(self.x[i].clone()),
            Err(i) => i - 1,
        };
        let seg = &self.segments[i];
        let n = self.dim;
        let th = (t - seg.t0) / seg.h;
        let th1 = 1.0 - th;
        let c = &seg.coef;
        Some(
            (0..n)
                .map(|k| {
                    c[k] + th
                        * (c[n + k] + th1 * (c[2 * n + k] + th * (c[3 * n + k] + th1 * c[4 * n + k])))
                })
                .collect(),
        )
    }

    /// Dense output at each time in `ts` (times outside the span are skipped).
    pub fn sample(&self, ts: &[f64]) -> Vec<(f64, Vec<f64>)> {
        ts.iter()
            .filter_map(|&t| self.dense(t).map(|x| (t, x)))
            .collect()
    }

    /// Index of the step whose interval contains `t`.
    pub fn step_index(&self, t: f64) -> Option<usize> {
        if self.segments.is_empty() || t < self.t[0] || t > self.last_time() {
            return None;
        }
        let i = self.t.partition_point(|v| *v <= t);
        Some(i.saturating_sub(1).min(self.segments.len() - 1))
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI controller constants.
const BETA: f64 = 0.04;
const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Integrate `sys` from (t0, x0) to t1. The observer sees every accepted
/// step and may return `false` to stop.
pub fn dopri5(
    sys: &dyn OdeSystem,
    t0: f64,
    x0: &[f64],
    t1: f64,
    opts: &IntegratorOptions,
    observer: Option<&mut dyn FnMut(f64, &[f64]) -> bool>,
) -> Result<Trajectory, SolveError> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(SolveError::Setting(format!(
            "initial state has {} entries, system has {n}",
            x0.len()
        )));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(SolveError::Setting("tolerances must be positive".into()));
    }
    if !(t1 > t0) {
        return Err(SolveError::Setting(format!("empty time span [{t0}, {t1}]")));
    }
    let mut observer = observer;
    let mut stats = Stats::default();
    let mut bps: Vec<f64> = sys
        .breakpoints()
        .into_iter()
        .filter(|b| *b > t0 && *b < t1)
        .collect();
    bps.push(t1);
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut next_bp = 0;

    let mut traj = Trajectory {
        dim: n,
        t: vec![t0],
        x: vec![x0.to_vec()],
        driver: None,
        stats,
        stopped_early: false,
        segments: Vec::new(),
    };

    let mut x = x0.to_vec();
    let mut t = t0;
    let mut k1 = vec![0.0; n];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut y1 = vec![0.0; n];
    let mut ys = vec![0.0; n];
    sys.rhs(t, &x, &mut k1).map_err(|source| SolveError::Domain {
        t,
        state: x.clone(),
        source,
    })?;
    stats.rhs_evals += 1;

    let hmax = opts.hmax.unwrap_or(t1 - t0).min(t1 - t0);
    let mut h = match opts.h0 {
        Some(h) => h,
        None => initial_step(sys, t, &x, &k1, opts, hmax, &mut stats),
    }
    .min(hmax);
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        if stats.steps + stats.rejects >= opts.max_steps {
            return Err(SolveError::MaxSteps {
                t,
                state: x,
                max_steps: opts.max_steps,
            });
        }
        let target = bps[next_bp];
        let mut hit_bp = false;
        if t + h >= target - 1e-13 * target.abs().max(1.0) {
            h = target - t;
            hit_bp = true;
        }
        if h < opts.hmin * t.abs().max(1.0) {
            return Err(SolveError::StepUnderflow { t, state: x });
        }

        let stage = (|| -> Result<(), ModelError> {
            for i in 0..n {
                ys[i] = x[i] + h * A21 * k1[i];
            }
            sys.rhs(t + C2 * h, &ys, &mut k2)?;
            for i in 0..n {
                ys[i] = x[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            sys.rhs(t + C3 * h, &ys, &mut k3)?;
            for i in 0..n {
                ys[i] = x[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            sys.rhs(t + C4 * h, &ys, &mut k4)?;
            for i in 0..n {
                ys[i] = x[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            sys.rhs(t + C5 * h, &ys, &mut k5)?;
            for i in 0..n {
                ys[i] = x[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            sys.rhs(t + h, &ys, &mut k6)?;
            for i in 0..n {
                y1[i] = x[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            sys.rhs(t + h, &y1, &mut k7)?;
            Ok(())
        })();
        stats.rhs_evals += 6;

        let err = match stage {
            Ok(()) => {
                let mut acc = 0.0;
                for i in 0..n {
                    let e = h
                        * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                            + E7 * k7[i]);
                    let sk = opts.atol + opts.rtol * x[i].abs().max(y1[i].abs());
                    acc += (e / sk) * (e / sk);
                }
                (acc / n as f64).sqrt()
            }
            Err(source) => {
                if h * 0.5 < opts.hmin * t.abs().max(1.0) {
                    return Err(SolveError::Domain {
                        t,
                        state: x,
                        source,
                    });
                }
                f64::INFINITY
            }
        };

        if !err.is_finite() {
            stats.rejects += 1;
            h *= 0.25;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(0.2 - BETA * 0.75);
        if err <= 1.0 {
            let mut fac = fac11 / facold.powf(BETA);
            fac = (1.0 / FAC_MAX).max((1.0 / FAC_MIN).min(fac / SAFE));
            let mut hnew = h / fac;
            facold = err.max(1e-4);
            stats.steps += 1;

            if opts.record {
                let mut coef = vec![0.0; 5 * n];
                for i in 0..n {
                    let ydiff = y1[i] - x[i];
                    let bspl = h * k1[i] - ydiff;
                    coef[i] = x[i];
                    coef[n + i] = ydiff;
                    coef[2 * n + i] = bspl;
                    coef[3 * n + i] = ydiff - h * k7[i] - bspl;
                    coef[4 * n + i] = h
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                }
                traj.segments.push(Segment { t0: t, h, coef });
            }

            t = if hit_bp { target } else { t + h };
            std::mem::swap(&mut x, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            if opts.record {
                traj.t.push(t);
                traj.x.push(x.clone());
            }

            let keep_going = match observer.as_mut() {
                Some(obs) => obs(t, &x),
                None => true,
            };
            if hit_bp {
                next_bp += 1;
            }
            if !keep_going || next_bp >= bps.len() {
                traj.stopped_early = !keep_going && next_bp < bps.len();
                break;
            }
            if last_rejected {
                hnew = hnew.min(h);
            }
            last_rejected = false;
            h = hnew.min(hmax);
        } else {
            stats.rejects += 1;
            h /= (1.0 / FAC_MIN).min(fac11 / SAFE);
            last_rejected = true;
        }
    }

    if !opts.record {
        traj.t.push(t);
        traj.x.push(x);
    }
    traj.stats = stats;
    Ok(traj)
}

fn initial_step(
    sys: &dyn OdeSystem,
    t: f64,
    x: &[f64],
    f0: &[f64],
    opts: &IntegratorOptions,
    hmax: f64,
    stats: &mut Stats,
) -> f64 {
    let n = x.len();
    let sk: Vec<f64> = x.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let norm = |v: &[f64]| -> f64 {
        (v.iter().zip(&sk).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let dnf = norm(f0);
    let dny = norm(x);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        0.01 * dny / dnf
    };
    h = h.min(hmax);
    let y1: Vec<f64> = x.iter().zip(f0).map(|(a, b)| a + h * b).collect();
    let mut f1 = vec![0.0; n];
    stats.rhs_evals += 1;
    if sys.rhs(t + h, &y1, &mut f1).is_err() {
        return h * 1e-2;
    }
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let der2 = norm(&diff) / h;
    let der12 = der2.max(dnf);
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(hmax)
}

/// Integrate a vector field at fixed parameters.
pub fn integrate(
    field: &dyn VectorField,
    x0: &[f64],
    p: &[f64],
    t_span: (f64, f64),
    rtol: f64,
    atol: f64,
) -> Result<Trajectory, SolveError> {
    let sys = FieldSystem::new(field, p);
    dopri5(
        &sys,
        t_span.0,
        x0,
        t_span.1,
        &IntegratorOptions::tolerances(rtol, atol),
        None,
    )
}

/// Integrate with one parameter following `driver`.
pub fn integrate_driven(
    field: &dyn VectorField,
    x0: &[f64],
    p: &[f64],
    driver: &dyn Driver,
    t_span: (f64, f64),
    rtol: f64,
    atol: f64,
) -> Result<Trajectory, SolveError> {
    let sys = FieldSystem::driven(field, p, driver)?;
    let mut traj = dopri5(
        &sys,
        t_span.0,
        x0,
        t_span.1,
        &IntegratorOptions::tolerances(rtol, atol),
        None,
    )?;
    traj.driver = Some(driver.info());
    Ok(traj)
}

impl RampDriver {
    /// Time at which the ramp passes through `value`, if it does.
    pub fn time_at(&self, value: f64) -> Option<f64> {
        let (lo, hi) = (self.start.min(self.end), self.start.max(self.end));
        if value < lo || value > hi || self.start == self.end {
            return None;
        }
        let th = (value - self.start) / (self.end - self.start);
        Some(self.t_start + th * (self.t_end - self.t_start))
    }
}

/// Sup-norm distance between component `i` of two ramped runs compared at
/// equal driver values, on `n` values spanning the common ramp range.
pub fn hysteresis_witness(
    a: &Trajectory,
    ramp_a: &RampDriver,
    b: &Trajectory,
    ramp_b: &RampDriver,
    i: usize,
    n: usize,
) -> Result<f64, SolveError> {
    let lo = ramp_a.min_value().max(ramp_b.min_value());
    let hi = ramp_a.start.max(ramp_a.end).min(ramp_b.start.max(ramp_b.end));
    if !(hi > lo) || n < 2 {
        return Err(SolveError::Setting("ramps share no parameter range".into()));
    }
    let mut sup = 0.0f64;
    for k in 0..n {
        let v = lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let at = |traj: &Trajectory, r: &RampDriver| {
            r.time_at(v)
                .and_then(|t| traj.dense(t))
                .map(|x| x[i])
                .ok_or_else(|| SolveError::Setting(format!("trajectory does not cover parameter value {v}")))
        };
        sup = sup.max((at(a, ramp_a)? - at(b, ramp_b)?).abs());
    }
    Ok(sup)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub oscillatory: bool,
}

/// Splits the span into blocks of length `block`, measures the peak-to-peak
/// range of component `i` in each, and merges consecutive blocks on the same
/// side of `threshold * (largest range)` into windows.
pub fn envelope_windows(traj: &Trajectory, i: usize, block: f64, samples: usize, threshold: f64) -> Vec<EnvelopeWindow> {
    let (t0, t1) = traj.t_span();
    if block <= 0.0 || samples < 2 || t1 <= t0 {
        return Vec::new();
    }
    let nb = ((t1 - t0) / block).floor() as usize;
    let ranges: Vec<(f64, f64, f64)> = (0..nb)
        .map(|k| {
            let a = t0 + k as f64 * block;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for j in 0..samples {
                if let Some(x) = traj.dense(a + block * j as f64 / (samples - 1) as f64) {
                    lo = lo.min(x[i]);
                    hi = hi.max(x[i]);
                }
            }
            (a, a + block, hi - lo)
        })
        .collect();
    let peak = ranges.iter().fold(0.0f64, |m, r| m.max(r.2));
    let mut out: Vec<EnvelopeWindow> = Vec::new();
    for (a, b, r) in ranges {
        let osc = peak > 0.0 && r > threshold * peak;
        match out.last_mut() {
            Some(w) if w.oscillatory == osc => w.t_end = b,
            _ => out.push(EnvelopeWindow { t_start: a, t_end: b, oscillatory: osc }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{boundary_line_m, Field2D, Field3DDesing, ParameterSet2D, ParameterSet3D};

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
            out[0] = -x[0];
            Ok(())
        }
    }

    struct Rotation;
    impl OdeSystem for Rotation {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
            out[0] = -x[1];
            out[1] = x[0];
            Ok(())
        }
    }

    #[test]
    fn exponential_decay() {
        let rtol = 1e-8;
        let tr = dopri5(&Decay, 0.0, &[1.0], 1.0, &IntegratorOptions::tolerances(rtol, 1e-12), None)
            .unwrap();
        assert_eq!(tr.last_time(), 1.0);
        assert!((tr.last_state()[0] - (-1.0f64).exp()).abs() < 10.0 * rtol);
    }

    #[test]
    fn error_shrinks_with_tolerance() {
        let mut errs = Vec::new();
        for rtol in [1e-5, 1e-7, 1e-9] {
            let tr = dopri5(
                &Rotation,
                0.0,
                &[1.0, 0.0],
                10.0,
                &IntegratorOptions::tolerances(rtol, rtol * 1e-3),
                None,
            )
            .unwrap();
            let x = tr.last_state();
            errs.push(((x[0] - 10f64.cos()).powi(2) + (x[1] - 10f64.sin()).powi(2)).sqrt());
        }
        // Each factor-100 tightening should buy at least a factor 10.
        assert!(errs[1] < errs[0] / 10.0 && errs[2] < errs[1] / 10.0, "{errs:?}");
    }

    #[test]
    fn dense_output_exact_at_nodes_and_accurate_between() {
        let tr = dopri5(&Rotation, 0.0, &[1.0, 0.0], 6.0, &IntegratorOptions::default(), None).unwrap();
        for (t, x) in tr.t.iter().zip(&tr.x) {
            assert_eq!(&tr.dense(*t).unwrap(), x);
        }
        for k in 0..60 {
            let t = 0.0993 * k as f64;
            let x = tr.dense(t).unwrap();
            assert!((x[0] - t.cos()).abs() < 1e-7 && (x[1] - t.sin()).abs() < 1e-7);
        }
        assert!(tr.dense(6.5).is_none());
    }

    #[test]
    fn boundary_line_closed_form() {
        let mut p = ParameterSet3D::default_scan();
        p.k1 = 1.0;
        p.gamma = 1.0;
        let rtol = 1e-8;
        let tr = integrate(&Field3DDesing, &[1.0, 1.0, 0.0], &p.to_vec(), (0.0, 5.0), rtol, 1e-10)
            .unwrap();
        let x = tr.last_state();
        let m = boundary_line_m(1.0, 1.0, 1.0, 1.0, 5.0);
        assert!((x[1] - m).abs() < 10.0 * rtol * m);
        assert_eq!(x[0], 1.0);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn constant_driver_matches_fixed_parameters() {
        let p = ParameterSet2D::reference(3.0).to_vec();
        let fixed = integrate(&Field2D, &[0.5, 0.5], &p, (0.0, 50.0), 1e-8, 1e-10).unwrap();
        let d = ConstantDriver {
            target: "b".into(),
            value: p[1],
        };
        let driven =
            integrate_driven(&Field2D, &[0.5, 0.5], &p, &d, (0.0, 50.0), 1e-8, 1e-10).unwrap();
        assert_eq!(fixed.t, driven.t);
        assert_eq!(fixed.x, driven.x);
        assert_eq!(driven.driver.unwrap().kind, "constant");
    }

    #[test]
    fn ramp_breakpoints_are_step_boundaries() {
        let p = ParameterSet2D::reference(1.0).to_vec();
        let d = RampDriver {
            target: "b".into(),
            start: 1.0,
            end: 3.0,
            t_start: 10.0,
            t_end: 37.3,
        };
        let tr = integrate_driven(&Field2D, &[0.5, 0.5], &p, &d, (0.0, 60.0), 1e-8, 1e-10).unwrap();
        assert!(tr.t.contains(&10.0));
        assert!(tr.t.contains(&37.3));
        assert_eq!(d.kind(), "linear-ramp");
        let r = RampDriver {
            start: 3.0,
            end: 1.0,
            ..d.clone()
        };
        assert_eq!(r.kind(), "reverse-ramp");
        assert_eq!(r.value(0.0), 3.0);
        assert_eq!(r.value(100.0), 1.0);
        assert!((d.value(23.65) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_values() {
        let d = SinusoidalDriver {
            target: "b".into(),
            offset: 2.0,
            amplitude: 1.0,
            omega: 0.01,
            phase: 3.0 * std::f64::consts::FRAC_PI_2,
        };
        assert!((d.value(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(d.min_value(), 1.0);
    }

    #[test]
    fn raw_field_domain_error_is_reported() {
        let p = ParameterSet2D::reference(3.0).to_vec();
        let err = integrate(&Field2D, &[0.5, 0.0], &p, (0.0, 1.0), 1e-8, 1e-10).unwrap_err();
        assert!(matches!(err, SolveError::Domain { .. }));
    }

    #[test]
    fn observer_can_stop() {
        let mut count = 0;
        let mut obs = |_t: f64, _x: &[f64]| {
            count += 1;
            count < 5
        };
        let tr = dopri5(&Rotation, 0.0, &[1.0, 0.0], 100.0, &IntegratorOptions::default(), Some(&mut obs))
            .unwrap();
        assert!(tr.stopped_early);
        assert_eq!(tr.len(), 6);
    }

    #[test]
    fn variational_identity_start() {
        let p = ParameterSet2D::reference(3.0).to_vec();
        let v = Variational::new(&Field2D, &p, 2).with_sensitivity(1).with_divergence();
        assert_eq!(v.dim(), 2 + 4 + 2 + 1);
        let y = v.initial(&[0.5, 0.5]);
        assert_eq!(y, vec![0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }
}
