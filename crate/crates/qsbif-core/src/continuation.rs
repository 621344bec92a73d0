//! Pseudo-arclength continuation of equilibria, codimension-one curves and
//! limit cycles, with test functions for special points.
//!
//! Every curve is a `CurveSystem`: N unknowns, N-1 equations, a list of
//! scalar test functions. The driver predicts along the tangent, corrects
//! with Newton on the hyperplane orthogonal to it and refines sign changes
//! of the test functions by bisection in arclength.

use std::cell::RefCell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaos::{shilnikov_from_eigenvalues, SaddleType};
use crate::equilibria::{eigenvalues, find_equilibria, Eigen, Stability};
use crate::models::{ModelError, ParameterSet2D, VectorField};
use crate::normalform::first_lyapunov;
use crate::solve::{dopri5, IntegratorOptions, SolveError, Variational};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContinuationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("Newton did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("cannot start continuation: {0}")]
    Start(String),
    #[error("invalid setting: {0}")]
    Setting(String),
}

type Result<T> = std::result::Result<T, ContinuationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpecialKind {
    LP,
    H,
    CP,
    BT,
    GH,
    ZH,
    LPC,
    PD,
    #[serde(rename = "HOM-proxy")]
    HomProxy,
    #[serde(rename = "Belyakov-candidate")]
    BelyakovCandidate,
}

impl SpecialKind {
    pub fn label(self) -> &'static str {
        match self {
            SpecialKind::LP => "LP",
            SpecialKind::H => "H",
            SpecialKind::CP => "CP",
            SpecialKind::BT => "BT",
            SpecialKind::GH => "GH",
            SpecialKind::ZH => "ZH",
            SpecialKind::LPC => "LPC",
            SpecialKind::PD => "PD",
            SpecialKind::HomProxy => "HOM-proxy",
            SpecialKind::BelyakovCandidate => "Belyakov-candidate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSpec {
    pub name: &'static str,
    pub kind: SpecialKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub grow: f64,
    pub shrink: f64,
    /// Newton stops when both the update and the residual are below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Converging in at most this many iterations grows the step.
    pub fast_iter: usize,
    /// Needing at least this many iterations shrinks the next step.
    pub slow_iter: usize,
    pub max_points: usize,
    /// Minimum cosine between consecutive tangents.
    pub min_cos: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            initial: 1e-2,
            min: 1e-8,
            max: 0.1,
            grow: 1.3,
            shrink: 0.5,
            tol: 1e-10,
            max_iter: 10,
            fast_iter: 3,
            slow_iter: 6,
            max_points: 5000,
            min_cos: 0.9,
        }
    }
}

/// Box constraint on one unknown; leaving it ends the branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
}

pub trait CurveSystem {
    /// Number of unknowns; there is one equation fewer.
    fn dim(&self) -> usize;
    fn residual(&self, y: &[f64]) -> Result<DVector<f64>>;
    /// (dim-1) x dim.
    fn jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>>;
    fn tests(&self) -> Vec<TestSpec>;
    fn eval_tests(&self, y: &[f64], tangent: &[f64]) -> Result<Vec<f64>>;

    /// Called once a point is accepted; systems with bordering vectors or
    /// phase references update them here. Returns true when the update
    /// moves the solution curve itself (a new phase hyperplane), so the
    /// tangent has to be recomputed.
    fn accept(&mut self, _y: &[f64]) -> Result<bool> {
        Ok(false)
    }

    fn eigenvalues(&self, _y: &[f64]) -> Vec<Eigen> {
        Vec::new()
    }

    /// `None` rejects a sign change as spurious.
    fn confirm(&self, _kind: SpecialKind, _y: &[f64]) -> Option<Diagnostics> {
        Some(Diagnostics::default())
    }

    fn state_of(&self, y: &[f64]) -> Vec<f64>;
    fn params_of(&self, y: &[f64]) -> Vec<f64>;

    /// Extra per-point quantities (period, amplitude, ...).
    fn point_data(&self, _y: &[f64]) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Diagnostics {
    fn with(mut self, k: &str, v: f64) -> Self {
        self.values.insert(k.to_string(), v);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub arclength: f64,
    pub y: Vec<f64>,
    pub tangent: Vec<f64>,
    pub state: Vec<f64>,
    pub params: Vec<f64>,
    pub tests: Vec<f64>,
    pub eigenvalues: Vec<Eigen>,
    pub data: BTreeMap<String, f64>,
    pub step: f64,
    pub iterations: usize,
}

impl BranchPoint {
    pub fn stability(&self) -> Stability {
        crate::equilibria::classify_eigenvalues(&self.eigenvalues)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialPoint {
    pub kind: SpecialKind,
    pub test: String,
    pub y: Vec<f64>,
    pub state: Vec<f64>,
    pub params: Vec<f64>,
    pub arclength: f64,
    /// Index of the branch point just before the special point.
    pub after: usize,
    pub refined: bool,
    pub eigenvalues: Vec<Eigen>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    RangeExit { index: usize, value: f64 },
    MaxPoints,
    StepUnderflow { step: f64 },
    Stopped { kind: SpecialKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub kind: String,
    pub field: String,
    pub state_names: Vec<String>,
    pub param_names: Vec<String>,
    pub test_names: Vec<String>,
    pub points: Vec<BranchPoint>,
    pub special: Vec<SpecialPoint>,
    pub termination: Termination,
}

impl Branch {
    pub fn special_of(&self, kind: SpecialKind) -> impl Iterator<Item = &SpecialPoint> {
        self.special.iter().filter(move |s| s.kind == kind)
    }
}

// ---------------------------------------------------------------------------
// Linear algebra helpers

/// sigma[k] is the sum of the principal k x k minors (sigma[0] = 1), from
/// the Faddeev-LeVerrier recursion.
pub fn principal_minor_sums(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + &eye * c[n - k + 1];
        c[n - k] = -(a * &m).trace() / k as f64;
    }
    (0..=n)
        .map(|k| if k % 2 == 0 { c[n - k] } else { -c[n - k] })
        .collect()
}

/// Bialternate product 2A (.) I, of size n(n-1)/2. It is singular exactly
/// when A has two eigenvalues summing to zero.
pub fn bialternate(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let pairs: Vec<(usize, usize)> = (1..n).flat_map(|p| (0..p).map(move |q| (p, q))).collect();
    let m = pairs.len();
    DMatrix::from_fn(m, m, |i, j| {
        let (p, q) = pairs[i];
        let (r, s) = pairs[j];
        if r == q {
            -a[(p, s)]
        } else if r != p && s == q {
            a[(p, r)]
        } else if r == p && s == q {
            a[(p, p)] + a[(q, q)]
        } else if r == p && s != q {
            a[(q, s)]
        } else if s == p {
            -a[(q, r)]
        } else {
            0.0
        }
    })
}

/// Hopf test function: det(2A (.) I). Trace for n = 2.
pub fn hopf_test(a: &DMatrix<f64>) -> f64 {
    match a.nrows() {
        0 | 1 => 1.0,
        2 => a.trace(),
        3 => {
            let s = principal_minor_sums(a);
            s[1] * s[2] - s[3]
        }
        _ => bialternate(a).determinant(),
    }
}

fn imaginary_pair(ev: &[Eigen]) -> Option<f64> {
    let scale = ev.iter().fold(1e-12f64, |m, e| m.max(e.norm()));
    ev.iter()
        .filter(|e| e.im > 1e-6 * scale && e.re.abs() < 1e-5 * scale)
        .map(|e| e.im)
        .next()
}

fn corrector(
    sys: &dyn CurveSystem,
    y_pred: &DVector<f64>,
    t: &DVector<f64>,
    policy: &StepPolicy,
) -> Result<(DVector<f64>, usize)> {
    let n = sys.dim();
    let mut y = y_pred.clone();
    let mut last_dy = f64::INFINITY;
    for it in 0..=policy.max_iter {
        let f = sys.residual(y.as_slice())?;
        let fres = f.amax();
        if !fres.is_finite() {
            return Err(ContinuationError::NoConvergence(it));
        }
        let scale = 1.0 + y.amax();
        if it > 0 && fres < policy.tol * 10.0 && last_dy < policy.tol * scale {
            return Ok((y, it));
        }
        if it == policy.max_iter {
            break;
        }
        let j = sys.jacobian(y.as_slice())?;
        let mut a = DMatrix::<f64>::zeros(n, n);
        a.rows_mut(0, n - 1).copy_from(&j);
        a.row_mut(n - 1).copy_from(&t.transpose());
        let mut rhs = DVector::<f64>::zeros(n);
        rhs.rows_mut(0, n - 1).copy_from(&f);
        rhs[n - 1] = t.dot(&(&y - y_pred));
        let dy = a.lu().solve(&rhs).ok_or(ContinuationError::Singular("corrector"))?;
        y -= &dy;
        last_dy = dy.amax();
        if !y.iter().all(|v| v.is_finite()) {
            return Err(ContinuationError::NoConvergence(it));
        }
    }
    Err(ContinuationError::NoConvergence(policy.max_iter))
}

fn tangent_at(sys: &dyn CurveSystem, y: &[f64], reference: &DVector<f64>) -> Result<DVector<f64>> {
    let n = sys.dim();
    let j = sys.jacobian(y)?;
    let mut a = DMatrix::<f64>::zeros(n, n);
    a.rows_mut(0, n - 1).copy_from(&j);
    a.row_mut(n - 1).copy_from(&reference.transpose());
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let t = a.lu().solve(&rhs).ok_or(ContinuationError::Singular("tangent"))?;
    let norm = t.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(ContinuationError::Singular("tangent"));
    }
    Ok(t / norm)
}

fn make_point(sys: &dyn CurveSystem, y: &DVector<f64>, t: &DVector<f64>, s: f64, h: f64, it: usize) -> Result<BranchPoint> {
    let tests = sys.eval_tests(y.as_slice(), t.as_slice())?;
    Ok(BranchPoint {
        arclength: s,
        y: y.as_slice().to_vec(),
        tangent: t.as_slice().to_vec(),
        state: sys.state_of(y.as_slice()),
        params: sys.params_of(y.as_slice()),
        tests,
        eigenvalues: sys.eigenvalues(y.as_slice()),
        data: sys.point_data(y.as_slice()),
        step: h,
        iterations: it,
    })
}

fn sign_change(a: f64, b: f64) -> bool {
    a.is_finite() && b.is_finite() && ((a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0))
}

/// Illinois iteration on the arclength offset within one step.
fn refine(
    sys: &dyn CurveSystem,
    a: &BranchPoint,
    h: f64,
    idx: usize,
    gb: f64,
    policy: &StepPolicy,
) -> Option<(DVector<f64>, f64)> {
    let ya = DVector::from_column_slice(&a.y);
    let ta = DVector::from_column_slice(&a.tangent);
    let eval = |s: f64| -> Option<(DVector<f64>, f64)> {
        let pred = &ya + &ta * s;
        let (y, _) = corrector(sys, &pred, &ta, policy).ok()?;
        let t = tangent_at(sys, y.as_slice(), &ta).ok()?;
        let g = sys.eval_tests(y.as_slice(), t.as_slice()).ok()?[idx];
        g.is_finite().then_some((y, g))
    };
    let (mut lo, mut hi) = (0.0, h);
    let (mut glo, mut ghi) = (a.tests[idx], gb);
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut side = 0i8;
    for _ in 0..100 {
        let mut s = (lo * ghi - hi * glo) / (ghi - glo);
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let (y, g) = eval(s)?;
        best = Some((y, s));
        if g == 0.0 || (hi - lo) < 1e-12 * h.max(1e-3) {
            break;
        }
        if (g < 0.0) == (glo < 0.0) {
            lo = s;
            glo = g;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            ghi = g;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
        if (hi - lo) < 1e-12 * h.max(1e-3) {
            let mid = 0.5 * (lo + hi);
            if let Some((y, _)) = eval(mid) {
                best = Some((y, mid));
            }
            break;
        }
    }
    best
}

/// Radius within which two special points of the same kind are merged.
pub const SPECIAL_DEDUP: f64 = 1e-7;

fn push_special(list: &mut Vec<SpecialPoint>, sp: SpecialPoint) {
    let dup = list.iter().any(|o| {
        o.kind == sp.kind
            && o.y.len() == sp.y.len()
            && o.y.iter().zip(&sp.y).all(|(a, b)| (a - b).abs() < SPECIAL_DEDUP * (1.0 + a.abs()))
    });
    if !dup {
        list.push(sp);
    }
}

fn scan_interval(
    sys: &dyn CurveSystem,
    specs: &[TestSpec],
    a: &BranchPoint,
    b: &BranchPoint,
    after: usize,
    policy: &StepPolicy,
    out: &mut Vec<SpecialPoint>,
) {
    let h = b.arclength - a.arclength;
    for (i, spec) in specs.iter().enumerate() {
        if !sign_change(a.tests[i], b.tests[i]) {
            continue;
        }
        let refined = refine(sys, a, h, i, b.tests[i], policy);
        let (y, s, ok) = match refined {
            Some((y, s)) => (y.as_slice().to_vec(), s, true),
            None => {
                let w = a.tests[i] / (a.tests[i] - b.tests[i]);
                let y = a.y.iter().zip(&b.y).map(|(p, q)| p + w * (q - p)).collect();
                (y, w * h, false)
            }
        };
        let diag = match sys.confirm(spec.kind, &y) {
            Some(d) => d,
            None => continue,
        };
        push_special(
            out,
            SpecialPoint {
                kind: spec.kind,
                test: spec.name.to_string(),
                state: sys.state_of(&y),
                params: sys.params_of(&y),
                eigenvalues: sys.eigenvalues(&y),
                y,
                arclength: a.arclength + s,
                after,
                refined: ok,
                diagnostics: diag,
            },
        );
    }
}

/// Scan a finished branch for sign changes of its test functions. With a
/// system the zeros are refined in arclength; without one they are placed
/// by linear interpolation and flagged unrefined.
pub fn detect_special(branch: &Branch, sys: Option<&dyn CurveSystem>) -> Vec<SpecialPoint> {
    let mut out = Vec::new();
    let policy = StepPolicy::default();
    for (k, w) in branch.points.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        match sys {
            Some(sys) => {
                let specs = sys.tests();
                scan_interval(sys, &specs, a, b, k, &policy, &mut out);
            }
            None => {
                for (i, name) in branch.test_names.iter().enumerate() {
                    if !sign_change(a.tests[i], b.tests[i]) {
                        continue;
                    }
                    let wgt = a.tests[i] / (a.tests[i] - b.tests[i]);
                    let lerp = |p: &[f64], q: &[f64]| -> Vec<f64> {
                        p.iter().zip(q).map(|(x, y)| x + wgt * (y - x)).collect()
                    };
                    push_special(
                        &mut out,
                        SpecialPoint {
                            kind: kind_for_test(name),
                            test: name.clone(),
                            y: lerp(&a.y, &b.y),
                            state: lerp(&a.state, &b.state),
                            params: lerp(&a.params, &b.params),
                            arclength: a.arclength + wgt * (b.arclength - a.arclength),
                            after: k,
                            refined: false,
                            eigenvalues: Vec::new(),
                            diagnostics: Diagnostics::default(),
                        },
                    );
                }
            }
        }
    }
    out
}

fn kind_for_test(name: &str) -> SpecialKind {
    match name {
        "fold" => SpecialKind::LP,
        "hopf" => SpecialKind::H,
        "cusp" => SpecialKind::CP,
        "bt" => SpecialKind::BT,
        "gh" => SpecialKind::GH,
        "zh" => SpecialKind::ZH,
        "lpc" => SpecialKind::LPC,
        "pd" => SpecialKind::PD,
        "hom" => SpecialKind::HomProxy,
        _ => SpecialKind::BelyakovCandidate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub policy: StepPolicy,
    pub bounds: Vec<Bound>,
    pub stop_on: Vec<SpecialKind>,
}

/// Generic driver. `direction` fixes the orientation of the first tangent.
pub fn continue_curve(
    sys: &mut dyn CurveSystem,
    y0: &[f64],
    direction: &[f64],
    settings: &RunSettings,
    meta: (&str, &str, Vec<String>, Vec<String>),
) -> Result<Branch> {
    let policy = &settings.policy;
    let n = sys.dim();
    if y0.len() != n || direction.len() != n {
        return Err(ContinuationError::Setting(format!("start vector must have length {n}")));
    }
    let specs = sys.tests();
    let d = DVector::from_column_slice(direction);
    let d = &d / d.norm();
    let start = DVector::from_column_slice(y0);
    let t_guess = tangent_at(sys, y0, &d)?;
    let (y, _) = corrector(sys, &start, &t_guess, policy)
        .map_err(|e| ContinuationError::Start(format!("initial correction failed: {e}")))?;
    let mut t = tangent_at(sys, y.as_slice(), &d)?;
    if sys.accept(y.as_slice())? {
        t = tangent_at(sys, y.as_slice(), &t)?;
    }
    let mut points = vec![make_point(sys, &y, &t, 0.0, 0.0, 0)?];
    let mut special = Vec::new();
    let mut h = policy.initial;
    let mut y = y;
    let mut s = 0.0;
    let termination;

    'outer: loop {
        if points.len() >= policy.max_points {
            termination = Termination::MaxPoints;
            break;
        }
        let pred = &y + &t * h;
        let attempt = corrector(sys, &pred, &t, policy).and_then(|(y1, it)| {
            let t1 = tangent_at(sys, y1.as_slice(), &t)?;
            Ok((y1, t1, it))
        });
        let (y1, t1, it) = match attempt {
            Ok(v) if v.1.dot(&t) >= policy.min_cos || h <= policy.min => v,
            _ => {
                h *= policy.shrink;
                if h < policy.min {
                    termination = Termination::StepUnderflow { step: h };
                    break;
                }
                continue;
            }
        };
        for b in &settings.bounds {
            let v = y1[b.index];
            if v < b.lo || v > b.hi {
                termination = Termination::RangeExit { index: b.index, value: v };
                break 'outer;
            }
        }
        let pt = match make_point(sys, &y1, &t1, s + h, h, it) {
            Ok(p) => p,
            Err(_) => {
                h *= policy.shrink;
                if h < policy.min {
                    termination = Termination::StepUnderflow { step: h };
                    break;
                }
                continue;
            }
        };
        let before = special.len();
        let after = points.len() - 1;
        scan_interval(sys, &specs, &points[after], &pt, after, policy, &mut special);
        points.push(pt);
        s += h;
        t = if sys.accept(y1.as_slice())? { tangent_at(sys, y1.as_slice(), &t1)? } else { t1 };
        y = y1;
        if let Some(sp) = special[before..].iter().find(|sp| settings.stop_on.contains(&sp.kind)) {
            termination = Termination::Stopped { kind: sp.kind };
            break;
        }
        if it <= policy.fast_iter {
            h = (h * policy.grow).min(policy.max);
        } else if it >= policy.slow_iter {
            h = (h * policy.shrink).max(policy.min);
        }
    }
    let (kind, field, state_names, param_names) = meta;
    Ok(Branch {
        kind: kind.to_string(),
        field: field.to_string(),
        state_names,
        param_names,
        test_names: specs.iter().map(|s| s.name.to_string()).collect(),
        points,
        special,
        termination,
    })
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn param_column(field: &dyn VectorField, x: &[f64], p: &[f64], idx: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; field.dim()];
    field.param_derivative(x, p, idx, &mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Equilibria

pub struct EquilibriumCurve<'a> {
    field: &'a dyn VectorField,
    params: Vec<f64>,
    active: usize,
}

impl<'a> EquilibriumCurve<'a> {
    pub fn new(field: &'a dyn VectorField, params: &[f64], active: usize) -> Self {
        EquilibriumCurve {
            field,
            params: params.to_vec(),
            active,
        }
    }

    fn split(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.field.dim();
        let mut p = self.params.clone();
        p[self.active] = y[n];
        (y[..n].to_vec(), p)
    }
}

impl CurveSystem for EquilibriumCurve<'_> {
    fn dim(&self) -> usize {
        self.field.dim() + 1
    }

    fn residual(&self, y: &[f64]) -> Result<DVector<f64>> {
        let (x, p) = self.split(y);
        Ok(DVector::from_vec(self.field.eval_vec(&x, &p)?))
    }

    fn jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.field.dim();
        let (x, p) = self.split(y);
        let j = self.field.jacobian_matrix(&x, &p)?;
        let fp = param_column(self.field, &x, &p, self.active)?;
        let mut out = DMatrix::zeros(n, n + 1);
        out.view_mut((0, 0), (n, n)).copy_from(&j);
        for i in 0..n {
            out[(i, n)] = fp[i];
        }
        Ok(out)
    }

    fn tests(&self) -> Vec<TestSpec> {
        vec![
            TestSpec { name: "fold", kind: SpecialKind::LP },
            TestSpec { name: "hopf", kind: SpecialKind::H },
        ]
    }

    fn eval_tests(&self, y: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        let n = self.field.dim();
        let (x, p) = self.split(y);
        let j = self.field.jacobian_matrix(&x, &p)?;
        Ok(vec![t[n], hopf_test(&j)])
    }

    fn eigenvalues(&self, y: &[f64]) -> Vec<Eigen> {
        let (x, p) = self.split(y);
        self.field
            .jacobian_matrix(&x, &p)
            .map(|j| eigenvalues(&j))
            .unwrap_or_default()
    }

    fn confirm(&self, kind: SpecialKind, y: &[f64]) -> Option<Diagnostics> {
        let (x, p) = self.split(y);
        let j = self.field.jacobian_matrix(&x, &p).ok()?;
        match kind {
            SpecialKind::H => {
                let ev = eigenvalues(&j);
                imaginary_pair(&ev)?;
                let (l1, omega) = first_lyapunov(self.field, &x, &p).ok()?;
                Some(Diagnostics::default().with("omega", omega).with("l1", l1))
            }
            SpecialKind::LP => Some(Diagnostics::default().with("det", j.determinant())),
            _ => Some(Diagnostics::default()),
        }
    }

    fn state_of(&self, y: &[f64]) -> Vec<f64> {
        y[..self.field.dim()].to_vec()
    }

    fn params_of(&self, y: &[f64]) -> Vec<f64> {
        vec![y[self.field.dim()]]
    }
}

fn settings_1d(n: usize, range: (f64, f64), policy: StepPolicy, stop_on: Vec<SpecialKind>) -> RunSettings {
    RunSettings {
        policy,
        bounds: vec![Bound {
            index: n,
            lo: range.0,
            hi: range.1,
        }],
        stop_on,
    }
}

/// Equilibrium branch in one parameter, starting near `x0` at the value in
/// `params` and heading in the direction of `sign` (+1 or -1).
pub fn continue_equilibrium(
    field: &dyn VectorField,
    params: &[f64],
    active: &str,
    x0: &[f64],
    sign: f64,
    range: (f64, f64),
    policy: StepPolicy,
) -> Result<Branch> {
    let idx = field.param_index(active)?;
    let n = field.dim();
    let mut sys = EquilibriumCurve::new(field, params, idx);
    let mut y0 = x0.to_vec();
    y0.push(params[idx]);
    let mut dir = vec![0.0; n + 1];
    dir[n] = sign.signum();
    let settings = settings_1d(n, range, policy, Vec::new());
    continue_curve(
        &mut sys,
        &y0,
        &dir,
        &settings,
        ("equilibrium", field.name(), names(field.state_names()), vec![active.to_string()]),
    )
}

// ---------------------------------------------------------------------------
// Two-parameter curves

fn two_params(field: &dyn VectorField, params: &[f64], y: &[f64], i1: usize, i2: usize) -> (Vec<f64>, Vec<f64>) {
    let n = field.dim();
    let mut p = params.to_vec();
    p[i1] = y[n];
    p[i2] = y[n + 1];
    (y[..n].to_vec(), p)
}

fn fd_row<F: Fn(&[f64]) -> Result<f64>>(y: &[f64], g: F) -> Result<Vec<f64>> {
    let mut row = vec![0.0; y.len()];
    let mut yy = y.to_vec();
    for k in 0..y.len() {
        let h = 1e-7 * (1.0 + y[k].abs());
        yy[k] = y[k] + h;
        let gp = g(&yy)?;
        yy[k] = y[k] - h;
        let gm = g(&yy)?;
        yy[k] = y[k];
        row[k] = (gp - gm) / (2.0 * h);
    }
    Ok(row)
}

fn base_jacobian(field: &dyn VectorField, x: &[f64], p: &[f64], i1: usize, i2: usize, rows: usize) -> Result<DMatrix<f64>> {
    let n = field.dim();
    let j = field.jacobian_matrix(x, p)?;
    let f1 = param_column(field, x, p, i1)?;
    let f2 = param_column(field, x, p, i2)?;
    let mut out = DMatrix::zeros(rows, n + 2);
    out.view_mut((0, 0), (n, n)).copy_from(&j);
    for i in 0..n {
        out[(i, n)] = f1[i];
        out[(i, n + 1)] = f2[i];
    }
    Ok(out)
}

/// Fold curve: F = 0 plus the bordered scalar g with [[J, b], [c^T, 0]]
/// [w; g] = [0; 1].
pub struct FoldCurve<'a> {
    field: &'a dyn VectorField,
    params: Vec<f64>,
    i1: usize,
    i2: usize,
    b: DVector<f64>,
    c: DVector<f64>,
}

impl<'a> FoldCurve<'a> {
    pub fn new(field: &'a dyn VectorField, params: &[f64], i1: usize, i2: usize, x: &[f64]) -> Result<Self> {
        let j = field.jacobian_matrix(x, params)?;
        let svd = j.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let k = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        Ok(FoldCurve {
            field,
            params: params.to_vec(),
            i1,
            i2,
            b: u.column(k).into_owned(),
            c: vt.row(k).transpose(),
        })
    }

    fn bordered(&self, j: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let n = j.nrows();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(j);
        for i in 0..n {
            m[(i, n)] = self.b[i];
            m[(n, i)] = self.c[i];
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        let lu = m.clone().lu();
        let wg = lu.solve(&rhs).ok_or(ContinuationError::Singular("fold bordering"))?;
        let mut mt = DMatrix::zeros(n + 1, n + 1);
        mt.view_mut((0, 0), (n, n)).copy_from(&j.transpose());
        for i in 0..n {
            mt[(i, n)] = self.c[i];
            mt[(n, i)] = self.b[i];
        }
        let vh = mt.lu().solve(&rhs).ok_or(ContinuationError::Singular("fold bordering"))?;
        Ok((wg.rows(0, n).into_owned(), vh.rows(0, n).into_owned(), wg[n]))
    }

    fn g(&self, y: &[f64]) -> Result<f64> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let j = self.field.jacobian_matrix(&x, &p)?;
        Ok(self.bordered(&j)?.2)
    }
}

impl CurveSystem for FoldCurve<'_> {
    fn dim(&self) -> usize {
        self.field.dim() + 2
    }

    fn residual(&self, y: &[f64]) -> Result<DVector<f64>> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let mut f = self.field.eval_vec(&x, &p)?;
        f.push(self.g(y)?);
        Ok(DVector::from_vec(f))
    }

    fn jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.field.dim();
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let mut out = base_jacobian(self.field, &x, &p, self.i1, self.i2, n + 1)?;
        let row = fd_row(y, |z| self.g(z))?;
        for (k, v) in row.into_iter().enumerate() {
            out[(n, k)] = v;
        }
        Ok(out)
    }

    fn accept(&mut self, y: &[f64]) -> Result<bool> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let j = self.field.jacobian_matrix(&x, &p)?;
        let (w, v, _) = self.bordered(&j)?;
        self.c = &w / w.norm();
        self.b = &v / v.norm();
        Ok(false)
    }

    fn tests(&self) -> Vec<TestSpec> {
        let mut t = vec![
            TestSpec { name: "cusp", kind: SpecialKind::CP },
            TestSpec { name: "bt", kind: SpecialKind::BT },
        ];
        if self.field.dim() >= 3 {
            t.push(TestSpec { name: "zh", kind: SpecialKind::ZH });
        }
        t
    }

    fn eval_tests(&self, y: &[f64], _t: &[f64]) -> Result<Vec<f64>> {
        let n = self.field.dim();
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let j = self.field.jacobian_matrix(&x, &p)?;
        let (w, v, _) = self.bordered(&j)?;
        // B(w, w) = d/dh [J(x + h w) w] at h = 0.
        let scale = x.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(1e-3);
        let h = 1e-5 * scale / w.norm();
        let shifted = |sgn: f64| -> Result<DVector<f64>> {
            let xs: Vec<f64> = x.iter().zip(w.iter()).map(|(a, b)| a + sgn * h * b).collect();
            Ok(self.field.jacobian_matrix(&xs, &p)? * &w)
        };
        let bww = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
        let sig = principal_minor_sums(&j);
        let mut out = vec![v.dot(&bww), sig[n - 1]];
        if n >= 3 {
            out.push(if sig[2] > 0.0 { sig[1] } else { f64::NAN });
        }
        Ok(out)
    }

    fn eigenvalues(&self, y: &[f64]) -> Vec<Eigen> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        self.field
            .jacobian_matrix(&x, &p)
            .map(|j| eigenvalues(&j))
            .unwrap_or_default()
    }

    fn confirm(&self, kind: SpecialKind, y: &[f64]) -> Option<Diagnostics> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let j = self.field.jacobian_matrix(&x, &p).ok()?;
        let sig = principal_minor_sums(&j);
        match kind {
            SpecialKind::ZH if sig[2] <= 0.0 => None,
            _ => Some(Diagnostics::default().with("det", j.determinant()).with("trace", sig[1])),
        }
    }

    fn state_of(&self, y: &[f64]) -> Vec<f64> {
        y[..self.field.dim()].to_vec()
    }

    fn params_of(&self, y: &[f64]) -> Vec<f64> {
        let n = self.field.dim();
        vec![y[n], y[n + 1]]
    }
}

/// Hopf curve: F = 0 plus det(2J (.) I) = 0. Past a BT point the same
/// equations describe neutral saddles, so the "bt" test is usually a stop
/// condition.
pub struct HopfCurve<'a> {
    field: &'a dyn VectorField,
    params: Vec<f64>,
    i1: usize,
    i2: usize,
}

impl<'a> HopfCurve<'a> {
    pub fn new(field: &'a dyn VectorField, params: &[f64], i1: usize, i2: usize) -> Self {
        HopfCurve {
            field,
            params: params.to_vec(),
            i1,
            i2,
        }
    }

    fn h(&self, y: &[f64]) -> Result<f64> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        Ok(hopf_test(&self.field.jacobian_matrix(&x, &p)?))
    }
}

impl CurveSystem for HopfCurve<'_> {
    fn dim(&self) -> usize {
        self.field.dim() + 2
    }

    fn residual(&self, y: &[f64]) -> Result<DVector<f64>> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let mut f = self.field.eval_vec(&x, &p)?;
        f.push(hopf_test(&self.field.jacobian_matrix(&x, &p)?));
        Ok(DVector::from_vec(f))
    }

    fn jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.field.dim();
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let mut out = base_jacobian(self.field, &x, &p, self.i1, self.i2, n + 1)?;
        let row = fd_row(y, |z| self.h(z))?;
        for (k, v) in row.into_iter().enumerate() {
            out[(n, k)] = v;
        }
        Ok(out)
    }

    fn tests(&self) -> Vec<TestSpec> {
        let mut t = vec![
            TestSpec { name: "bt", kind: SpecialKind::BT },
            TestSpec { name: "gh", kind: SpecialKind::GH },
        ];
        if self.field.dim() >= 3 {
            t.push(TestSpec { name: "zh", kind: SpecialKind::ZH });
        }
        t
    }

    fn eval_tests(&self, y: &[f64], _t: &[f64]) -> Result<Vec<f64>> {
        let n = self.field.dim();
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let j = self.field.jacobian_matrix(&x, &p)?;
        let sig = principal_minor_sums(&j);
        // At a Hopf point with n <= 3, sigma_2 is omega^2.
        let omega2 = if n <= 3 { sig[2] } else { f64::NAN };
        let gh = if omega2 > 0.0 {
            first_lyapunov(self.field, &x, &p).map(|v| v.0).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let mut out = vec![omega2, gh];
        if n >= 3 {
            out.push(if omega2 > 0.0 { sig[1] } else { f64::NAN });
        }
        Ok(out)
    }

    fn eigenvalues(&self, y: &[f64]) -> Vec<Eigen> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        self.field
            .jacobian_matrix(&x, &p)
            .map(|j| eigenvalues(&j))
            .unwrap_or_default()
    }

    fn confirm(&self, kind: SpecialKind, y: &[f64]) -> Option<Diagnostics> {
        let (x, p) = two_params(self.field, &self.params, y, self.i1, self.i2);
        let j = self.field.jacobian_matrix(&x, &p).ok()?;
        let sig = principal_minor_sums(&j);
        let d = Diagnostics::default().with("det", j.determinant()).with("trace", sig[1]);
        match kind {
            SpecialKind::GH | SpecialKind::ZH if sig[2] <= 0.0 => None,
            _ => Some(d),
        }
    }

    fn state_of(&self, y: &[f64]) -> Vec<f64> {
        y[..self.field.dim()].to_vec()
    }

    fn params_of(&self, y: &[f64]) -> Vec<f64> {
        let n = self.field.dim();
        vec![y[n], y[n + 1]]
    }
}

fn settings_2d(n: usize, ranges: [(f64, f64); 2], policy: StepPolicy, stop_on: Vec<SpecialKind>) -> RunSettings {
    RunSettings {
        policy,
        bounds: vec![
            Bound { index: n, lo: ranges[0].0, hi: ranges[0].1 },
            Bound { index: n + 1, lo: ranges[1].0, hi: ranges[1].1 },
        ],
        stop_on,
    }
}

/// Continue a fold (LP) point in two parameters. `sign` orients the first
/// step along the second parameter.
#[allow(clippy::too_many_arguments)]
pub fn continue_fold(
    field: &dyn VectorField,
    params: &[f64],
    active: [&str; 2],
    x0: &[f64],
    sign: f64,
    ranges: [(f64, f64); 2],
    policy: StepPolicy,
    stop_on: Vec<SpecialKind>,
) -> Result<Branch> {
    let i1 = field.param_index(active[0])?;
    let i2 = field.param_index(active[1])?;
    let n = field.dim();
    let mut sys = FoldCurve::new(field, params, i1, i2, x0)?;
    let mut y0 = x0.to_vec();
    y0.push(params[i1]);
    y0.push(params[i2]);
    let mut dir = vec![0.0; n + 2];
    dir[n + 1] = sign.signum();
    continue_curve(
        &mut sys,
        &y0,
        &dir,
        &settings_2d(n, ranges, policy, stop_on),
        ("fold", field.name(), names(field.state_names()), active.iter().map(|s| s.to_string()).collect()),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn continue_hopf(
    field: &dyn VectorField,
    params: &[f64],
    active: [&str; 2],
    x0: &[f64],
    sign: f64,
    ranges: [(f64, f64); 2],
    policy: StepPolicy,
    stop_on: Vec<SpecialKind>,
) -> Result<Branch> {
    let i1 = field.param_index(active[0])?;
    let i2 = field.param_index(active[1])?;
    let n = field.dim();
    let mut sys = HopfCurve::new(field, params, i1, i2);
    let mut y0 = x0.to_vec();
    y0.push(params[i1]);
    y0.push(params[i2]);
    let mut dir = vec![0.0; n + 2];
    dir[n + 1] = sign.signum();
    continue_curve(
        &mut sys,
        &y0,
        &dir,
        &settings_2d(n, ranges, policy, stop_on),
        ("hopf", field.name(), names(field.state_names()), active.iter().map(|s| s.to_string()).collect()),
    )
}

/// Parameter vector with the special point's active values substituted.
pub fn params_at(field: &dyn VectorField, base: &[f64], active: &[&str], sp: &SpecialPoint) -> Result<Vec<f64>> {
    let mut p = base.to_vec();
    for (name, v) in active.iter().zip(&sp.params) {
        p[field.param_index(name)?] = *v;
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Limit cycles by multiple shooting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleOptions {
    pub segments: usize,
    /// Relative size of the starting ellipse near a Hopf point.
    pub start_amplitude: f64,
    /// Period above which a bounded cycle is reported as HOM-proxy.
    pub t_hom: f64,
    pub amplitude_bound: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            segments: 40,
            start_amplitude: 1e-2,
            t_hom: 500.0,
            amplitude_bound: 1e3,
            rtol: 1e-11,
            atol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
struct ShotEval {
    y: Vec<f64>,
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
    /// Per-segment state transition matrices.
    segments: Vec<DMatrix<f64>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// A fold or flip of cycles must have a nontrivial multiplier this close
/// to +1 or -1.
pub const MULTIPLIER_GUARD: f64 = 0.05;

/// Unknowns: base points X_0..X_{N-1}, ln T, parameter. Equations: segment
/// matching and a phase hyperplane through the last accepted X_0.
pub struct CycleCurve<'a> {
    field: &'a dyn VectorField,
    params: Vec<f64>,
    active: usize,
    opts: CycleOptions,
    x_ref: Vec<f64>,
    f_ref: Vec<f64>,
    cache: RefCell<Option<ShotEval>>,
}

impl<'a> CycleCurve<'a> {
    pub fn new(field: &'a dyn VectorField, params: &[f64], active: usize, opts: CycleOptions, y: &[f64]) -> Result<Self> {
        let mut c = CycleCurve {
            field,
            params: params.to_vec(),
            active,
            opts,
            x_ref: Vec::new(),
            f_ref: Vec::new(),
            cache: RefCell::new(None),
        };
        c.set_phase(y)?;
        Ok(c)
    }

    fn set_phase(&mut self, y: &[f64]) -> Result<()> {
        let n = self.field.dim();
        let p = self.p_of(y);
        self.x_ref = y[..n].to_vec();
        let f = self.field.eval_vec(&self.x_ref, &p)?;
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        self.f_ref = f.iter().map(|v| v / norm).collect();
        *self.cache.borrow_mut() = None;
        Ok(())
    }

    fn p_of(&self, y: &[f64]) -> Vec<f64> {
        let mut p = self.params.clone();
        p[self.active] = y[y.len() - 1];
        p
    }

    pub fn period(&self, y: &[f64]) -> f64 {
        y[y.len() - 2].exp()
    }

    fn eval(&self, y: &[f64]) -> Result<ShotEval> {
        if let Some(c) = self.cache.borrow().as_ref() {
            if c.y == y {
                return Ok(c.clone());
            }
        }
        let n = self.field.dim();
        let ns = self.opts.segments;
        let p = self.p_of(y);
        let period = self.period(y);
        let tau = period / ns as f64;
        let var = Variational::new(self.field, &p, n).with_sensitivity(self.active);
        let iopts = IntegratorOptions {
            record: false,
            ..IntegratorOptions::tolerances(self.opts.rtol, self.opts.atol)
        };
        let m = ns * n;
        let mut res = DVector::zeros(m + 1);
        let mut jac = DMatrix::zeros(m + 1, m + 2);
        let mut segs = Vec::with_capacity(ns);
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        let bound = self.opts.amplitude_bound;
        for s in 0..ns {
            let xs = &y[s * n..(s + 1) * n];
            let y0 = var.initial(xs);
            let mut escaped = false;
            let mut obs = |_t: f64, st: &[f64]| {
                for i in 0..n {
                    lo[i] = lo[i].min(st[i]);
                    hi[i] = hi[i].max(st[i]);
                }
                if st[..n].iter().any(|v| !v.is_finite() || v.abs() > bound) {
                    escaped = true;
                    return false;
                }
                true
            };
            let tr = dopri5(&var, 0.0, &y0, tau, &iopts, Some(&mut obs))?;
            if escaped || tr.stopped_early {
                return Err(ContinuationError::Start("cycle segment left the bounded region".into()));
            }
            let end = tr.last_state();
            let next = (s + 1) % ns;
            let mi = DMatrix::from_column_slice(n, n, &end[n..n + n * n]);
            let fend = self.field.eval_vec(&end[..n], &p)?;
            for i in 0..n {
                res[s * n + i] = end[i] - y[next * n + i];
                for k in 0..n {
                    jac[(s * n + i, s * n + k)] = mi[(i, k)];
                }
                jac[(s * n + i, next * n + i)] -= 1.0;
                jac[(s * n + i, m)] = fend[i] * tau;
                jac[(s * n + i, m + 1)] = end[n + n * n + i];
            }
            segs.push(mi);
        }
        let phase: f64 = (0..n).map(|i| self.f_ref[i] * (y[i] - self.x_ref[i])).sum();
        res[m] = phase;
        for i in 0..n {
            jac[(m, i)] = self.f_ref[i];
        }
        let ev = ShotEval {
            y: y.to_vec(),
            residual: res,
            jacobian: jac,
            segments: segs,
            lo,
            hi,
        };
        *self.cache.borrow_mut() = Some(ev.clone());
        Ok(ev)
    }

    /// Floquet multipliers, the trivial one first. Each segment matrix is
    /// written in orthonormal bases whose first vector is the flow
    /// direction at the base points; this makes it block upper triangular,
    /// so the trivial multiplier is a product of scalars and the nontrivial
    /// ones are eigenvalues of the product of the (n-1)-blocks. Forming the
    /// full monodromy instead loses everything below |M| * eps near a
    /// homoclinic orbit.
    pub fn multipliers(&self, y: &[f64]) -> Result<Vec<Eigen>> {
        let n = self.field.dim();
        let ns = self.opts.segments;
        let ev = self.eval(y)?;
        let p = self.p_of(y);
        let mut bases = Vec::with_capacity(ns);
        for k in 0..ns {
            let f = DVector::from_vec(self.field.eval_vec(&y[k * n..(k + 1) * n], &p)?);
            let mut b = DMatrix::<f64>::identity(n, n);
            b.set_column(0, &f);
            bases.push(b.qr().q());
        }
        let mut triv = 1.0;
        let mut reduced = DMatrix::<f64>::identity(n - 1, n - 1);
        for k in 0..ns {
            let a = bases[(k + 1) % ns].transpose() * &ev.segments[k] * &bases[k];
            triv *= a[(0, 0)];
            reduced = a.view((1, 1), (n - 1, n - 1)) * reduced;
        }
        if !triv.is_finite() || reduced.iter().any(|v| !v.is_finite()) {
            return Err(ContinuationError::Singular("monodromy"));
        }
        let mut out = vec![Eigen { re: triv, im: 0.0 }];
        out.extend(eigenvalues(&reduced));
        Ok(out)
    }
}

impl CurveSystem for CycleCurve<'_> {
    fn dim(&self) -> usize {
        self.opts.segments * self.field.dim() + 2
    }

    fn residual(&self, y: &[f64]) -> Result<DVector<f64>> {
        Ok(self.eval(y)?.residual)
    }

    fn jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.eval(y)?.jacobian)
    }

    fn accept(&mut self, y: &[f64]) -> Result<bool> {
        self.set_phase(y)?;
        Ok(true)
    }

    fn tests(&self) -> Vec<TestSpec> {
        vec![
            TestSpec { name: "lpc", kind: SpecialKind::LPC },
            TestSpec { name: "pd", kind: SpecialKind::PD },
            TestSpec { name: "hom", kind: SpecialKind::HomProxy },
        ]
    }

    fn eval_tests(&self, y: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        let mu = self.multipliers(y)?;
        let pd: f64 = mu[1..]
            .iter()
            .map(|e| nalgebra::Complex::new(e.re + 1.0, e.im))
            .product::<nalgebra::Complex<f64>>()
            .re;
        Ok(vec![t[t.len() - 1], pd, self.period(y) - self.opts.t_hom])
    }

    fn eigenvalues(&self, y: &[f64]) -> Vec<Eigen> {
        self.multipliers(y).unwrap_or_default()
    }

    fn confirm(&self, kind: SpecialKind, y: &[f64]) -> Option<Diagnostics> {
        let ev = self.eval(y).ok()?;
        let amp = ev.hi.iter().zip(&ev.lo).fold(0.0f64, |m, (h, l)| m.max(h - l));
        let mut d = Diagnostics::default().with("period", self.period(y)).with("amplitude", amp);
        let mu = self.multipliers(y).ok()?;
        let near = |target: f64| {
            mu[1..]
                .iter()
                .any(|e| ((e.re - target).powi(2) + e.im * e.im).sqrt() < MULTIPLIER_GUARD)
        };
        match kind {
            SpecialKind::LPC if !near(1.0) => return None,
            SpecialKind::PD if !near(-1.0) => return None,
            SpecialKind::HomProxy => {}
            _ => return Some(d),
        }
        if !(amp.is_finite() && amp < self.opts.amplitude_bound) {
            return None;
        }
        // The saddle the cycle lingers at: most base points sit near it, so
        // rank saddles by the median distance to the base points.
        let n = self.field.dim();
        let p = self.p_of(y);
        let set = find_equilibria(self.field, &p).ok()?;
        let ns = self.opts.segments;
        let nearest = set
            .interior()
            .filter(|r| r.class == Stability::Saddle)
            .map(|r| {
                let mut ds: Vec<f64> = (0..ns)
                    .map(|s| {
                        (0..n)
                            .map(|i| (y[s * n + i] - r.state[i]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
                (ds[ns / 2], r)
            })
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if let Some((dist, r)) = nearest {
            d = d.with("saddle_median_distance", dist);
            for (i, e) in r.eigenvalues.iter().enumerate() {
                d = d.with(&format!("saddle_re{i}"), e.re).with(&format!("saddle_im{i}"), e.im);
            }
            for (i, v) in r.state.iter().enumerate() {
                d = d.with(&format!("saddle_x{i}"), *v);
            }
            if n == 3 {
                if let Ok(rep) = shilnikov_from_eigenvalues(&r.state, &r.eigenvalues) {
                    d.notes.push(match rep.kind {
                        SaddleType::RealSaddle => "real-saddle".to_string(),
                        SaddleType::SaddleFocus => "saddle-focus".to_string(),
                    });
                    if let Some(delta) = rep.saddle_index {
                        d = d.with("saddle_index", delta);
                        d.notes.push(format!("{:?}", rep.verdict.unwrap()).to_lowercase());
                    }
                }
            }
        }
        Some(d)
    }

    fn state_of(&self, y: &[f64]) -> Vec<f64> {
        y[..self.field.dim()].to_vec()
    }

    fn params_of(&self, y: &[f64]) -> Vec<f64> {
        vec![y[y.len() - 1]]
    }

    fn point_data(&self, y: &[f64]) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("period".to_string(), self.period(y));
        if let Ok(ev) = self.eval(y) {
            for (i, name) in self.field.state_names().iter().enumerate() {
                m.insert(format!("{name}_min"), ev.lo[i]);
                m.insert(format!("{name}_max"), ev.hi[i]);
            }
        }
        m
    }
}

/// Newton for a cycle near a Hopf point with the amplitude pinned:
/// <X_0 - x_H, q_r> = eps |q_r|^2 replaces the arclength condition.
pub fn hopf_cycle_start(
    field: &dyn VectorField,
    params: &[f64],
    active: usize,
    hopf_state: &[f64],
    eps: f64,
    opts: &CycleOptions,
) -> Result<Vec<f64>> {
    let n = field.dim();
    let ns = opts.segments;
    let j = field.jacobian_matrix(hopf_state, params)?;
    let jc = j.map(|v| nalgebra::Complex::new(v, 0.0));
    let ev = j.clone().complex_eigenvalues();
    let lam = ev
        .iter()
        .filter(|z| z.im > 0.0)
        .min_by(|a, b| a.re.abs().partial_cmp(&b.re.abs()).unwrap())
        .copied()
        .ok_or_else(|| ContinuationError::Start("no complex pair at Hopf point".into()))?;
    let omega = lam.im;
    let shifted = jc - DMatrix::<nalgebra::Complex<f64>>::identity(n, n) * lam;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.unwrap();
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let q: Vec<nalgebra::Complex<f64>> = vt.row(k).iter().map(|z| z.conj()).collect();
    let scale = hopf_state.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let qn = q.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let qr: Vec<f64> = q.iter().map(|z| z.re / qn * scale).collect();
    let qi: Vec<f64> = q.iter().map(|z| z.im / qn * scale).collect();
    let qr2: f64 = qr.iter().map(|v| v * v).sum();

    let period = 2.0 * std::f64::consts::PI / omega;
    let mut y = vec![0.0; ns * n + 2];
    for s in 0..ns {
        let th = 2.0 * std::f64::consts::PI * s as f64 / ns as f64;
        for i in 0..n {
            y[s * n + i] = hopf_state[i] + eps * (th.cos() * qr[i] - th.sin() * qi[i]);
        }
    }
    y[ns * n] = period.ln();
    y[ns * n + 1] = params[active];
    let sys = CycleCurve::new(field, params, active, *opts, &y)?;
    let dim = ns * n + 2;
    for it in 0..30 {
        let ev = sys.eval(&y)?;
        let amp: f64 = (0..n).map(|i| (y[i] - hopf_state[i]) * qr[i]).sum::<f64>() - eps * qr2;
        let mut a = DMatrix::zeros(dim, dim);
        a.rows_mut(0, dim - 1).copy_from(&ev.jacobian);
        for i in 0..n {
            a[(dim - 1, i)] = qr[i];
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, dim - 1).copy_from(&ev.residual);
        rhs[dim - 1] = amp;
        let err = rhs.amax();
        if err < 1e-10 && it > 0 {
            return Ok(y);
        }
        let dy = a.lu().solve(&rhs).ok_or(ContinuationError::Singular("Hopf cycle start"))?;
        for (v, d) in y.iter_mut().zip(dy.iter()) {
            *v -= d;
        }
        if !y.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(ContinuationError::Start("cycle near Hopf point did not converge".into()))
}

/// Cycle branch emanating from a Hopf point, oriented towards growing
/// amplitude.
pub fn continue_cycle(
    field: &dyn VectorField,
    params: &[f64],
    active: &str,
    hopf_state: &[f64],
    range: (f64, f64),
    opts: CycleOptions,
    policy: StepPolicy,
    stop_on: Vec<SpecialKind>,
) -> Result<Branch> {
    let idx = field.param_index(active)?;
    let eps = opts.start_amplitude;
    let y1 = hopf_cycle_start(field, params, idx, hopf_state, eps, &opts)?;
    let y2 = hopf_cycle_start(field, params, idx, hopf_state, 2.0 * eps, &opts)?;
    let dir: Vec<f64> = y2.iter().zip(&y1).map(|(b, a)| b - a).collect();
    let mut p = params.to_vec();
    p[idx] = y1[y1.len() - 1];
    let mut sys = CycleCurve::new(field, &p, idx, opts, &y1)?;
    let settings = RunSettings {
        policy,
        bounds: vec![Bound {
            index: y1.len() - 1,
            lo: range.0,
            hi: range.1,
        }],
        stop_on,
    };
    continue_curve(
        &mut sys,
        &y1,
        &dir,
        &settings,
        ("cycle", field.name(), names(field.state_names()), vec![active.to_string()]),
    )
}

/// Policy suited to cycle branches: the unknown vector is long and the
/// period enters through its logarithm.
pub fn cycle_policy() -> StepPolicy {
    StepPolicy {
        initial: 1e-2,
        max: 0.2,
        tol: 1e-8,
        max_iter: 8,
        max_points: 2000,
        min_cos: 0.8,
        ..StepPolicy::default()
    }
}

/// Period of a cycle branch point.
pub fn cycle_period(point: &BranchPoint) -> f64 {
    point.data.get("period").copied().unwrap_or(f64::NAN)
}

/// Hopf points on all equilibrium branches through the interior
/// equilibria at `params`, deduplicated.
pub fn hopf_points(field: &dyn VectorField, params: &[f64], active: &str, range: (f64, f64)) -> Result<Vec<SpecialPoint>> {
    let set = find_equilibria(field, params)?;
    let mut out: Vec<SpecialPoint> = Vec::new();
    for r in set.interior() {
        for sign in [1.0, -1.0] {
            let br = match continue_equilibrium(field, params, active, &r.state, sign, range, StepPolicy { max: 0.5, ..StepPolicy::default() }) {
                Ok(b) => b,
                Err(_) => continue,
            };
            for h in br.special_of(SpecialKind::H) {
                if !out.iter().any(|o| (o.params[0] - h.params[0]).abs() < 1e-6 * (1.0 + h.params[0].abs())) {
                    out.push(h.clone());
                }
            }
        }
    }
    out.sort_by(|a, b| a.params[0].partial_cmp(&b.params[0]).unwrap());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Homoclinic locus by repeated cycle continuation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomEntry {
    /// (primary, secondary) parameter values.
    pub params: [f64; 2],
    pub period: f64,
    pub saddle_kind: Option<SaddleType>,
    pub saddle_index: Option<f64>,
    pub special: SpecialPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomSweep {
    pub entries: Vec<HomEntry>,
    /// Midpoints between consecutive entries whose saddle type switches
    /// between real saddle and saddle-focus.
    pub belyakov: Vec<[f64; 2]>,
}

/// For each secondary value, find Hopf points on the equilibrium branches
/// through every interior equilibrium, follow the cycles born there until
/// the period passes `t_hom` and record where. A HOM-proxy locus in two
/// parameters.
pub fn hom_proxy_sweep(
    field: &dyn VectorField,
    params: &[f64],
    active: [&str; 2],
    range: (f64, f64),
    secondary: &[f64],
    opts: CycleOptions,
) -> Result<HomSweep> {
    let i2 = field.param_index(active[1])?;
    let mut entries = Vec::new();
    for &v in secondary {
        let mut p = params.to_vec();
        p[i2] = v;
        for h in hopf_points(field, &p, active[0], range)? {
            let ph = params_at(field, &p, &active[..1], &h)?;
            let br = match continue_cycle(
                field,
                &ph,
                active[0],
                &h.state,
                range,
                opts,
                cycle_policy(),
                vec![SpecialKind::HomProxy],
            ) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let hit = br.special_of(SpecialKind::HomProxy).next().cloned();
            if let Some(sp) = hit {
                let kind = sp.diagnostics.notes.first().map(|s| {
                    if s == "saddle-focus" {
                        SaddleType::SaddleFocus
                    } else {
                        SaddleType::RealSaddle
                    }
                });
                entries.push(HomEntry {
                    params: [sp.params[0], v],
                    period: sp.diagnostics.values.get("period").copied().unwrap_or(f64::NAN),
                    saddle_kind: kind,
                    saddle_index: sp.diagnostics.values.get("saddle_index").copied(),
                    special: sp,
                });
            }
        }
    }
    let mut belyakov = Vec::new();
    for w in entries.windows(2) {
        if let (Some(a), Some(b)) = (w[0].saddle_kind, w[1].saddle_kind) {
            if a != b {
                belyakov.push([
                    0.5 * (w[0].params[0] + w[1].params[0]),
                    0.5 * (w[0].params[1] + w[1].params[1]),
                ]);
            }
        }
    }
    Ok(HomSweep { entries, belyakov })
}

// ---------------------------------------------------------------------------
// Regions of the (b, e) plane of the reduced model

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// One interior equilibrium, stable.
    I,
    /// One interior equilibrium, unstable.
    II,
    /// Three interior equilibria, one of them stable.
    III,
    /// Three interior equilibria, two of them stable.
    IV,
    /// On or numerically too close to a bifurcation curve.
    Boundary,
}

/// Region of the reduced model from its interior equilibria.
pub fn classify_region(p: &ParameterSet2D) -> Region {
    let set = crate::equilibria::find_equilibria_2d(p);
    if set.tangency {
        return Region::Boundary;
    }
    let interior: Vec<_> = set.interior().collect();
    if interior.iter().any(|r| r.class == Stability::NonHyperbolic) {
        return Region::Boundary;
    }
    let stable = interior.iter().filter(|r| r.class.is_stable()).count();
    match (interior.len(), stable) {
        (1, 1) => Region::I,
        (1, 0) => Region::II,
        (3, 1) => Region::III,
        (3, 2) => Region::IV,
        _ => Region::Boundary,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Field2D;

    #[test]
    fn bialternate_matches_minor_sums() {
        let a = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.5, 2.0, -0.7, 0.1, -0.4, 0.9, -1.5]);
        let s = principal_minor_sums(&a);
        assert!((s[1] - a.trace()).abs() < 1e-14);
        assert!((s[3] - a.determinant()).abs() < 1e-12);
        let direct = bialternate(&a).determinant();
        assert!((direct - (s[1] * s[2] - s[3])).abs() < 1e-12);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -4.0]);
        assert!((bialternate(&b)[(0, 0)] - b.trace()).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_branch_in_e_has_two_folds() {
        let p = ParameterSet2D::reference(5.0).to_vec();
        let f = Field2D;
        let set = find_equilibria(&f, &p).unwrap();
        let x0 = set.interior().next().unwrap().state.clone();
        let br = continue_equilibrium(&f, &p, "e", &x0, -1.0, (0.5, 5.0), StepPolicy::default()).unwrap();
        let lps: Vec<f64> = br.special_of(SpecialKind::LP).map(|s| s.params[0]).collect();
        assert_eq!(lps.len(), 2, "{lps:?}");
    }

    #[test]
    fn synthetic_sign_change_by_interpolation() {
        let mk = |s: f64| BranchPoint {
            arclength: s,
            y: vec![s, 2.0 * s],
            tangent: vec![1.0, 0.0],
            state: vec![s],
            params: vec![2.0 * s],
            tests: vec![s - 0.123456789],
            eigenvalues: vec![],
            data: BTreeMap::new(),
            step: 0.1,
            iterations: 1,
        };
        let br = Branch {
            kind: "synthetic".into(),
            field: "none".into(),
            state_names: vec![],
            param_names: vec![],
            test_names: vec!["fold".into()],
            points: (0..5).map(|k| mk(0.1 * k as f64)).collect(),
            special: vec![],
            termination: Termination::MaxPoints,
        };
        let sp = detect_special(&br, None);
        assert_eq!(sp.len(), 1);
        assert!((sp[0].y[0] - 0.123456789).abs() < 1e-12);
        assert!(!sp[0].refined);
    }
}
