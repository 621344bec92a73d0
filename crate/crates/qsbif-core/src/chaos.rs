//! Lyapunov spectra, Poincare sections and Shilnikov classification of
//! saddle equilibria.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::equilibria::{find_equilibria, Eigen, EquilibriumRecord};
use crate::models::VectorField;
use crate::solve::{dopri5, IntegratorOptions, SolveError, Trajectory, Variational};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChaosError {
    #[error("not a saddle with one unstable direction: {0}")]
    NotShilnikovSaddle(String),
    #[error("invalid setting: {0}")]
    Setting(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaddleType {
    RealSaddle,
    SaddleFocus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShilnikovVerdict {
    Simple,
    Chaotic,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShilnikovReport {
    pub state: Vec<f64>,
    pub eigenvalues: Vec<Eigen>,
    pub kind: SaddleType,
    /// |Re lambda_s| / lambda_u for a saddle-focus.
    pub saddle_index: Option<f64>,
    pub verdict: Option<ShilnikovVerdict>,
}

/// Saddle index within this distance of 1 is reported as marginal.
pub const MARGINAL_BAND: f64 = 1e-6;

pub fn shilnikov_from_eigenvalues(state: &[f64], ev: &[Eigen]) -> Result<ShilnikovReport, ChaosError> {
    if ev.len() != 3 {
        return Err(ChaosError::NotShilnikovSaddle(format!(
            "{} eigenvalues, need 3",
            ev.len()
        )));
    }
    let tol = 1e-12;
    let unstable: Vec<&Eigen> = ev.iter().filter(|e| e.re > tol).collect();
    let stable: Vec<&Eigen> = ev.iter().filter(|e| e.re < -tol).collect();
    if unstable.len() != 1 || stable.len() != 2 || unstable[0].im.abs() > tol {
        return Err(ChaosError::NotShilnikovSaddle(format!(
            "{} unstable, {} stable eigenvalues",
            unstable.len(),
            stable.len()
        )));
    }
    let lu = unstable[0].re;
    let complex = stable[0].im.abs() > tol * (1.0 + stable[0].norm());
    if !complex {
        return Ok(ShilnikovReport {
            state: state.to_vec(),
            eigenvalues: ev.to_vec(),
            kind: SaddleType::RealSaddle,
            saddle_index: None,
            verdict: None,
        });
    }
    let delta = stable[0].re.abs() / lu;
    let verdict = if (delta - 1.0).abs() < MARGINAL_BAND {
        ShilnikovVerdict::Marginal
    } else if delta < 1.0 {
        ShilnikovVerdict::Chaotic
    } else {
        ShilnikovVerdict::Simple
    };
    Ok(ShilnikovReport {
        state: state.to_vec(),
        eigenvalues: ev.to_vec(),
        kind: SaddleType::SaddleFocus,
        saddle_index: Some(delta),
        verdict: Some(verdict),
    })
}

pub fn shilnikov_classify(eq: &EquilibriumRecord) -> Result<ShilnikovReport, ChaosError> {
    shilnikov_from_eigenvalues(&eq.state, &eq.eigenvalues)
}

// ---------------------------------------------------------------------------
// Lyapunov spectrum

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOptions {
    pub horizon: f64,
    pub renorm_interval: f64,
    /// Fraction of the horizon discarded before averaging.
    pub transient_fraction: f64,
    pub rtol: f64,
    pub atol: f64,
    /// The orbit counts as escaped once any |component| exceeds this.
    pub escape_bound: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        LyapunovOptions {
            horizon: 2000.0,
            renorm_interval: 1.0,
            transient_fraction: 0.2,
            rtol: 1e-8,
            atol: 1e-10,
            escape_bound: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Sorted descending.
    pub exponents: Vec<f64>,
    pub horizon: f64,
    pub transient: f64,
    pub renorm_interval: f64,
    /// Running estimates of the largest exponent at the last few
    /// renormalisations.
    pub history_tail: Vec<f64>,
    /// Time average of the field divergence over the averaging window.
    pub mean_divergence: f64,
    pub escaped: bool,
    pub final_state: Vec<f64>,
}

impl LyapunovEstimate {
    pub fn max_exponent(&self) -> f64 {
        self.exponents[0]
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }

    /// Relative mismatch between the exponent sum and the mean divergence.
    pub fn sum_identity_error(&self) -> f64 {
        (self.sum() - self.mean_divergence).abs() / self.mean_divergence.abs().max(1e-300)
    }
}

/// Benettin-style spectrum: tangent vectors ride along the flow and are
/// re-orthonormalised by QR every `renorm_interval`.
pub fn lyapunov_spectrum(
    field: &dyn VectorField,
    p: &[f64],
    x0: &[f64],
    opts: &LyapunovOptions,
) -> Result<LyapunovEstimate, ChaosError> {
    if !(opts.horizon > 0.0 && opts.renorm_interval > 0.0) {
        return Err(ChaosError::Setting("horizon and renorm interval must be positive".into()));
    }
    if !(0.0..1.0).contains(&opts.transient_fraction) {
        return Err(ChaosError::Setting("transient fraction must lie in [0, 1)".into()));
    }
    let n = field.dim();
    let var = Variational::new(field, p, n).with_divergence();
    let iopts = IntegratorOptions {
        record: false,
        ..IntegratorOptions::tolerances(opts.rtol, opts.atol)
    };
    let transient = opts.transient_fraction * opts.horizon;
    let mut y = var.initial(x0);
    let mut t = 0.0;
    let mut sums = vec![0.0; n];
    let mut div_sum = 0.0;
    let mut averaged = 0.0;
    let mut history = Vec::new();
    let mut escaped = false;
    let bound = opts.escape_bound;
    let last = y.len() - 1;
    let mut h0: Option<f64> = None;

    while t < opts.horizon - 1e-12 {
        let t1 = (t + opts.renorm_interval).min(opts.horizon);
        y[last] = 0.0;
        let mut esc = false;
        let mut obs = |_t: f64, s: &[f64]| {
            if s[..n].iter().any(|v| !v.is_finite() || v.abs() > bound) {
                esc = true;
                false
            } else {
                true
            }
        };
        let step_opts = IntegratorOptions { h0, ..iopts };
        let tr = dopri5(&var, t, &y, t1, &step_opts, Some(&mut obs))?;
        if esc {
            escaped = true;
            y = tr.last_state().to_vec();
            break;
        }
        let tb = tr.t_span().1;
        h0 = Some(((tb - t) / (tr.stats.steps.max(1) as f64)).max(1e-6));
        y = tr.last_state().to_vec();
        let dt = t1 - t;
        // QR of the tangent block (column-major columns).
        let q = DMatrix::from_column_slice(n, n, &y[n..n + n * n]);
        let qr = q.qr();
        let r = qr.r();
        let mut qm = qr.q();
        for j in 0..n {
            let rjj = r[(j, j)];
            if rjj < 0.0 {
                for i in 0..n {
                    qm[(i, j)] = -qm[(i, j)];
                }
            }
            if t1 > transient + 1e-12 {
                sums[j] += rjj.abs().ln();
            }
        }
        if t1 > transient + 1e-12 {
            div_sum += y[last];
            averaged += dt;
            history.push(sums[0] / averaged);
            if history.len() > 20 {
                history.remove(0);
            }
        }
        y[n..n + n * n].copy_from_slice(qm.as_slice());
        t = t1;
    }

    let mut exponents: Vec<f64> = if averaged > 0.0 {
        sums.iter().map(|s| s / averaged).collect()
    } else {
        vec![f64::NAN; n]
    };
    exponents.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(LyapunovEstimate {
        exponents,
        horizon: opts.horizon,
        transient,
        renorm_interval: opts.renorm_interval,
        history_tail: history,
        mean_divergence: if averaged > 0.0 { div_sum / averaged } else { f64::NAN },
        escaped,
        final_state: y[..n].to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Parameter-grid scans

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanAxis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl ScanAxis {
    pub fn new(name: &str, lo: f64, hi: f64, count: usize) -> Self {
        ScanAxis { name: name.to_string(), lo, hi, count }
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.count < 2 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64
        }
    }

    pub fn spacing(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.hi - self.lo) / (self.count - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub i: usize,
    pub j: usize,
    pub params: [f64; 2],
    pub x0: Vec<f64>,
    pub exponents: Vec<f64>,
    pub mean_divergence: f64,
    pub escaped: bool,
    pub error: Option<String>,
}

impl ScanCell {
    pub fn max_exponent(&self) -> f64 {
        self.exponents.first().copied().unwrap_or(f64::NAN)
    }
}

fn cell_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One scan cell. The orbit starts from a seeded perturbation (up to 5% per
/// component) of the interior saddle with a one-dimensional unstable
/// manifold, falling back to the last interior equilibrium and then to a
/// random point of the unit box.
pub fn lyapunov_cell(
    field: &dyn VectorField,
    base: &[f64],
    axes: (&ScanAxis, &ScanAxis),
    (i, j): (usize, usize),
    seed: u64,
    opts: &LyapunovOptions,
) -> ScanCell {
    let params = [axes.0.value(i), axes.1.value(j)];
    let mut cell = ScanCell {
        i,
        j,
        params,
        x0: Vec::new(),
        exponents: Vec::new(),
        mean_divergence: f64::NAN,
        escaped: false,
        error: None,
    };
    let run = || -> Result<(Vec<f64>, LyapunovEstimate), String> {
        let mut p = base.to_vec();
        p[field.param_index(&axes.0.name).map_err(|e| e.to_string())?] = params[0];
        p[field.param_index(&axes.1.name).map_err(|e| e.to_string())?] = params[1];
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(seed, (i * axes.1.count + j) as u64));
        let set = find_equilibria(field, &p).map_err(|e| e.to_string())?;
        let saddle = set
            .interior()
            .find(|r| r.eigenvalues.iter().filter(|e| e.re > 0.0).count() == 1)
            .or_else(|| set.interior().last());
        let x0: Vec<f64> = match saddle {
            Some(r) => r.state.iter().map(|v| v * (1.0 + rng.random_range(-0.05..0.05))).collect(),
            None => (0..field.dim()).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let est = lyapunov_spectrum(field, &p, &x0, opts).map_err(|e| e.to_string())?;
        Ok((x0, est))
    };
    match run() {
        Ok((x0, est)) => {
            cell.x0 = x0;
            cell.exponents = est.exponents;
            cell.mean_divergence = est.mean_divergence;
            cell.escaped = est.escaped;
        }
        Err(e) => cell.error = Some(e),
    }
    cell
}

/// Lyapunov spectra over a two-parameter grid, row-major in (first, second)
/// axis. Cells are independent and are spread over `threads` workers; the
/// result does not depend on the thread count.
pub fn lyapunov_scan(
    field: &dyn VectorField,
    base: &[f64],
    axes: (&ScanAxis, &ScanAxis),
    seed: u64,
    opts: &LyapunovOptions,
    threads: usize,
) -> Result<Vec<ScanCell>, ChaosError> {
    if axes.0.count == 0 || axes.1.count == 0 {
        return Err(ChaosError::Setting("scan axes need at least one value".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ChaosError::Setting(e.to_string()))?;
    let idx: Vec<(usize, usize)> = (0..axes.0.count)
        .flat_map(|i| (0..axes.1.count).map(move |j| (i, j)))
        .collect();
    Ok(pool.install(|| {
        idx.par_iter()
            .map(|&ij| lyapunov_cell(field, base, axes, ij, seed, opts))
            .collect()
    }))
}

// ---------------------------------------------------------------------------
// Poincare sections

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub anchor: Vec<f64>,
    pub normal: Vec<f64>,
}

impl Plane {
    fn signed(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.anchor)
            .zip(&self.normal)
            .map(|((xi, ai), ni)| (xi - ai) * ni)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub crossings: Vec<Crossing>,
    /// Crossings dropped because the flow was (nearly) tangent to the plane.
    pub tangential_skipped: usize,
}

/// |normal . flow| below this at a crossing counts as tangential.
pub const TANGENTIAL_TOL: f64 = 1e-8;

/// Crossings of `plane` in the direction of its normal, located on the dense
/// output to a time accuracy of 1e-10.
pub fn poincare_section(traj: &Trajectory, plane: &Plane) -> Result<Section, ChaosError> {
    if !traj.has_dense() {
        return Err(ChaosError::Setting("trajectory has no dense output".into()));
    }
    if plane.anchor.len() != traj.dim || plane.normal.len() != traj.dim {
        return Err(ChaosError::Setting("plane dimension mismatch".into()));
    }
    let mut out = Section {
        crossings: Vec::new(),
        tangential_skipped: 0,
    };
    for w in 0..traj.len() - 1 {
        let (ta, tb) = (traj.t[w], traj.t[w + 1]);
        let ga = plane.signed(&traj.x[w]);
        let gb = plane.signed(&traj.x[w + 1]);
        if !(ga < 0.0 && gb >= 0.0) {
            continue;
        }
        let g = |t: f64| plane.signed(&traj.dense(t).expect("inside span"));
        let (mut lo, mut hi) = (ta, tb);
        let (mut glo, mut ghi) = (ga, gb);
        let mut side = 0i8;
        let mut tc = hi;
        for _ in 0..200 {
            // Illinois variant of regula falsi.
            tc = (lo * ghi - hi * glo) / (ghi - glo);
            if !(tc > lo && tc < hi) {
                tc = 0.5 * (lo + hi);
            }
            let gc = g(tc);
            if gc == 0.0 || hi - lo < 1e-10 {
                break;
            }
            if gc < 0.0 {
                lo = tc;
                glo = gc;
                if side == -1 {
                    ghi *= 0.5;
                }
                side = -1;
            } else {
                hi = tc;
                ghi = gc;
                if side == 1 {
                    glo *= 0.5;
                }
                side = 1;
            }
            if (hi - lo).abs() < 1e-10 {
                tc = 0.5 * (lo + hi);
                break;
            }
        }
        let x = traj.dense(tc).expect("inside span");
        let hd = 1e-7 * (tb - ta).max(1e-9);
        let t_lo = (tc - hd).max(ta);
        let t_hi = (tc + hd).min(tb);
        let rate = (g(t_hi) - g(t_lo)) / (t_hi - t_lo);
        if rate.abs() < TANGENTIAL_TOL {
            out.tangential_skipped += 1;
            continue;
        }
        out.crossings.push(Crossing { t: tc, state: x });
    }
    Ok(out)
}
