//! Equilibria of the 2D and 3D systems and their linear stability.
//!
//! Both searches reduce to one polynomial in a single coordinate (u for the
//! 2D field, m for the 3D field). Real roots come from companion-matrix
//! eigenvalues and are then polished by Newton on the full field.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::models::{
    Field2D, Field3D, JacobianMatrix, ParameterSet2D, ParameterSet3D, VectorField,
};

/// Real part deadband below which an eigenvalue counts as non-hyperbolic,
/// scaled by 1 + |lambda|.
pub const HYPERBOLIC_TOL: f64 = 1e-8;
/// Roots closer than this in state space are merged.
pub const DEDUP_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigen {
    pub re: f64,
    pub im: f64,
}

impl Eigen {
    pub fn norm(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    StableNode,
    StableFocus,
    UnstableNode,
    UnstableFocus,
    Saddle,
    NonHyperbolic,
    /// Boundary equilibrium whose instability is decided by a centre
    /// manifold rather than by linearisation.
    Repeller,
}

impl Stability {
    pub fn is_stable(self) -> bool {
        matches!(self, Stability::StableNode | Stability::StableFocus)
    }

    pub fn is_unstable_source(self) -> bool {
        matches!(
            self,
            Stability::UnstableNode | Stability::UnstableFocus | Stability::Repeller
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            Stability::StableNode => "stable-node",
            Stability::StableFocus => "stable-focus",
            Stability::UnstableNode => "unstable-node",
            Stability::UnstableFocus => "unstable-focus",
            Stability::Saddle => "saddle",
            Stability::NonHyperbolic => "non-hyperbolic",
            Stability::Repeller => "repeller",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    pub state: Vec<f64>,
    pub eigenvalues: Vec<Eigen>,
    pub class: Stability,
    /// 2u/(v(1+Ku^2)^2) for interior 2D equilibria.
    pub j_quantity: Option<f64>,
    pub boundary: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSet {
    pub records: Vec<EquilibriumRecord>,
    /// Two roots nearly merged: the count may change under tiny perturbations.
    pub tangency: bool,
    /// Some admissible roots may lie beyond the configured scan window.
    pub truncated: bool,
}

impl EquilibriumSet {
    pub fn interior(&self) -> impl Iterator<Item = &EquilibriumRecord> {
        self.records.iter().filter(|r| !r.boundary)
    }

    pub fn interior_count(&self) -> usize {
        self.interior().count()
    }
}

pub fn eigenvalues(j: &DMatrix<f64>) -> Vec<Eigen> {
    let n = j.nrows();
    let mut ev: Vec<Eigen> = if n == 2 {
        // Closed form keeps conjugate pairs exact.
        let tr = j[(0, 0)] + j[(1, 1)];
        let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
        let disc = tr * tr / 4.0 - det;
        if disc >= 0.0 {
            let r = disc.sqrt();
            let big = tr / 2.0 + if tr >= 0.0 { r } else { -r };
            let small = if big != 0.0 { det / big } else { tr / 2.0 - r };
            vec![Eigen { re: big, im: 0.0 }, Eigen { re: small, im: 0.0 }]
        } else {
            let w = (-disc).sqrt();
            vec![
                Eigen { re: tr / 2.0, im: w },
                Eigen { re: tr / 2.0, im: -w },
            ]
        }
    } else {
        j.clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| Eigen { re: z.re, im: z.im })
            .collect()
    };
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    ev
}

pub fn classify_eigenvalues(ev: &[Eigen]) -> Stability {
    if ev
        .iter()
        .any(|e| e.re.abs() < HYPERBOLIC_TOL * (1.0 + e.norm()))
    {
        return Stability::NonHyperbolic;
    }
    let complex = ev.iter().any(|e| e.im.abs() > HYPERBOLIC_TOL * (1.0 + e.norm()));
    let pos = ev.iter().filter(|e| e.re > 0.0).count();
    if pos == 0 {
        if complex {
            Stability::StableFocus
        } else {
            Stability::StableNode
        }
    } else if pos == ev.len() {
        if complex {
            Stability::UnstableFocus
        } else {
            Stability::UnstableNode
        }
    } else {
        Stability::Saddle
    }
}

/// Eigenvalue-based stability class.
pub fn classify(j: &JacobianMatrix) -> Stability {
    classify_eigenvalues(&eigenvalues(&j.to_dmatrix()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropositionClass {
    Stable,
    Repeller,
    Saddle,
    /// One of the inequalities holds with equality (within tolerance).
    Degenerate,
}

/// Stability of an interior 2D equilibrium from the trace and determinant
/// written through J = 2u/(v(1+Ku^2)^2):
/// trace = J - b - 1 and det = b - (1 - u^2(1+Ku^2)/v) J.
pub fn proposition_class(u: f64, v: f64, p: &ParameterSet2D) -> PropositionClass {
    let w = 1.0 + p.k * u * u;
    let jq = 2.0 * u / (v * w * w);
    let det_threshold = (1.0 - u * u * w / v) * jq;
    let scale = 1.0 + p.b + jq.abs();
    let tol = 1e-10 * scale;
    if (p.b - det_threshold).abs() < tol || (jq - (p.b + 1.0)).abs() < tol {
        return PropositionClass::Degenerate;
    }
    if p.b < det_threshold {
        PropositionClass::Saddle
    } else if jq < p.b + 1.0 {
        PropositionClass::Stable
    } else {
        PropositionClass::Repeller
    }
}

/// Whether an eigenvalue class and a proposition class describe the same
/// local behaviour.
pub fn proposition_agrees(eig: Stability, prop: PropositionClass) -> bool {
    match prop {
        PropositionClass::Stable => eig.is_stable(),
        PropositionClass::Repeller => {
            matches!(eig, Stability::UnstableNode | Stability::UnstableFocus)
        }
        PropositionClass::Saddle => eig == Stability::Saddle,
        PropositionClass::Degenerate => eig == Stability::NonHyperbolic,
    }
}

// ---------------------------------------------------------------------------
// Polynomial helpers (coefficients in ascending powers)

pub(crate) fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub(crate) fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

fn poly_eval(c: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &ci in c.iter().rev() {
        dp = dp * x + p;
        p = p * x + ci;
    }
    (p, dp)
}

/// Real roots in the open interval (lo, hi), plus a flag for nearly double
/// roots.
pub(crate) fn real_roots(coeffs: &[f64], lo: f64, hi: f64) -> (Vec<f64>, bool) {
    let mut c = coeffs.to_vec();
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return (Vec::new(), false);
    }
    let lead = c[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    let ev = comp.complex_eigenvalues();
    let mut roots = Vec::new();
    let mut tangency = false;
    for z in ev.iter() {
        let scale = 1.0 + z.re.abs();
        if z.im.abs() > 1e-6 * scale {
            if z.im.abs() < 1e-4 * scale && z.re > lo && z.re < hi {
                tangency = true;
            }
            continue;
        }
        let mut x = z.re;
        for _ in 0..50 {
            let (p, dp) = poly_eval(&c, x);
            if dp == 0.0 {
                break;
            }
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if x > lo && x < hi && x.is_finite() {
            roots.push(x);
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<f64> = Vec::new();
    for r in roots {
        match out.last() {
            Some(prev) if (r - prev).abs() < DEDUP_RADIUS => tangency = true,
            Some(prev) if (r - prev).abs() < 1e-4 => {
                tangency = true;
                out.push(r)
            }
            _ => out.push(r),
        }
    }
    (out, tangency)
}

/// Newton on the full field. Returns the polished point and the final
/// residual max-norm.
pub fn newton_polish(
    field: &dyn VectorField,
    x0: &[f64],
    p: &[f64],
    tol: f64,
) -> Option<(Vec<f64>, f64)> {
    let mut x = DVector::from_column_slice(x0);
    let mut res = f64::INFINITY;
    for _ in 0..40 {
        let f = DVector::from_vec(field.eval_vec(x.as_slice(), p).ok()?);
        res = f.amax();
        if res < tol * 1e-3 {
            break;
        }
        let j = field.jacobian_matrix(x.as_slice(), p).ok()?;
        let dx = j.lu().solve(&f)?;
        x -= dx;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    let f = DVector::from_vec(field.eval_vec(x.as_slice(), p).ok()?);
    res = res.min(f.amax());
    if res < tol {
        Some((x.as_slice().to_vec(), f.amax()))
    } else {
        None
    }
}

fn record(field: &dyn VectorField, x: Vec<f64>, p: &[f64], residual: f64) -> EquilibriumRecord {
    let j = field
        .jacobian_matrix(&x, p)
        .expect("jacobian defined at interior equilibrium");
    let ev = eigenvalues(&j);
    let class = classify_eigenvalues(&ev);
    EquilibriumRecord {
        state: x,
        eigenvalues: ev,
        class,
        j_quantity: None,
        boundary: false,
        residual,
    }
}

/// Coefficients (ascending) of (u^2+ae)(1+Ku^2)(bu-a) - u^2.
pub fn equilibrium_polynomial_2d(p: &ParameterSet2D) -> Vec<f64> {
    let ae = p.a * p.e;
    let left = poly_mul(&[ae, 0.0, 1.0], &[1.0, 0.0, p.k]);
    let prod = poly_mul(&left, &[-p.a, p.b]);
    poly_add(&prod, &[0.0, 0.0, -1.0])
}

/// Interior equilibria of the 2D field (u > a/b) plus the origin of the
/// desingularised field as a boundary repeller.
pub fn find_equilibria_2d(p: &ParameterSet2D) -> EquilibriumSet {
    find_equilibria_2d_with(&Field2D, p)
}

fn find_equilibria_2d_with(field: &dyn VectorField, p: &ParameterSet2D) -> EquilibriumSet {
    let coeffs = equilibrium_polynomial_2d(p);
    let lo = p.a / p.b;
    let (roots, tangency) = real_roots(&coeffs, lo, f64::INFINITY);
    let pv = p.to_vec();
    let mut records: Vec<EquilibriumRecord> = Vec::new();
    for u in roots {
        let v = u * u + p.a * p.e;
        if let Some((x, res)) = newton_polish(&Field2D, &[u, v], &pv, 1e-12) {
            if x[0] <= lo || x[1] <= 0.0 {
                continue;
            }
            if records
                .iter()
                .any(|r| dist(&r.state, &x) < DEDUP_RADIUS)
            {
                continue;
            }
            let w = 1.0 + p.k * x[0] * x[0];
            let mut rec = record(field, x, &pv, res);
            rec.j_quantity = Some(2.0 * rec.state[0] / (rec.state[1] * w * w));
            records.push(rec);
        }
    }
    records.push(origin_record(p));
    EquilibriumSet {
        records,
        tangency,
        truncated: false,
    }
}

/// The origin of the desingularised 2D field: eigenvalues {0, ae}, repelling
/// through its centre manifold.
pub fn origin_record(p: &ParameterSet2D) -> EquilibriumRecord {
    EquilibriumRecord {
        state: vec![0.0, 0.0],
        eigenvalues: vec![
            Eigen {
                re: p.a * p.e,
                im: 0.0,
            },
            Eigen { re: 0.0, im: 0.0 },
        ],
        class: Stability::Repeller,
        j_quantity: None,
        boundary: true,
        residual: 0.0,
    }
}

/// Positive roots of b(u - Ku^3) - 2a = 0, where the first nullcline
/// v = u^2/((1+Ku^2)(bu-a)) turns.
pub fn nullcline_turning_points(p: &ParameterSet2D) -> Vec<f64> {
    real_roots(&[-2.0 * p.a, p.b, 0.0, -p.b * p.k], 0.0, f64::INFINITY).0
}

/// Default upper bound of the m window for 3D equilibria.
pub const DEFAULT_M_MAX: f64 = 1e3;

/// Coefficients (ascending in m) whose positive roots below
/// sqrt(mu1 mu3/(k2 r)) are the m-coordinates of 3D equilibria.
pub fn equilibrium_polynomial_3d(p: &ParameterSet3D) -> Vec<f64> {
    let a = poly_mul(&[0.0, 0.0, p.k1 * p.r], &[p.epsilon * p.alpha, p.mu3]);
    let n = [p.epsilon * p.alpha * p.mu1, 0.0, 0.0, p.k2 * p.r];
    let b = poly_mul(&poly_mul(&n, &[1.0, 0.0, p.gamma]), &[p.alpha, -p.mu2]);
    poly_add(&a, &b)
}

/// (q, s) on the q- and s-nullclines for a given m, if admissible.
pub fn nullcline_qs(p: &ParameterSet3D, m: f64) -> Option<(f64, f64)> {
    let d = p.mu1 * p.mu3 - p.k2 * p.r * m * m;
    if d <= 0.0 {
        return None;
    }
    let s = (p.k2 * p.r * m * m * m + p.epsilon * p.alpha * p.mu1) / d;
    let q = p.r * (m + s) / p.mu1;
    Some((q, s))
}

pub fn find_equilibria_3d(p: &ParameterSet3D) -> EquilibriumSet {
    find_equilibria_3d_with(&Field3D, p, DEFAULT_M_MAX)
}

pub fn find_equilibria_3d_window(p: &ParameterSet3D, m_max: f64) -> EquilibriumSet {
    find_equilibria_3d_with(&Field3D, p, m_max)
}

fn find_equilibria_3d_with(field: &dyn VectorField, p: &ParameterSet3D, m_max: f64) -> EquilibriumSet {
    let coeffs = equilibrium_polynomial_3d(p);
    let m_crit = (p.mu1 * p.mu3 / (p.k2 * p.r)).sqrt();
    let hi = m_crit.min(m_max);
    let (roots, tangency) = real_roots(&coeffs, 0.0, hi);
    let truncated = m_max < m_crit && !real_roots(&coeffs, m_max, m_crit).0.is_empty();
    let pv = p.to_vec();
    let mut records: Vec<EquilibriumRecord> = Vec::new();
    for m in roots {
        let Some((q, s)) = nullcline_qs(p, m) else {
            continue;
        };
        if let Some((x, res)) = newton_polish(&Field3D, &[q, m, s], &pv, 1e-10) {
            if x.iter().any(|v| *v <= 0.0) {
                continue;
            }
            if records.iter().any(|r| dist(&r.state, &x) < DEDUP_RADIUS) {
                continue;
            }
            records.push(record(field, x, &pv, res));
        }
    }
    EquilibriumSet {
        records,
        tangency,
        truncated,
    }
}

/// Equilibria of any registered field, classified with that field's
/// Jacobian. For desingularised fields only the interior equilibria (plus
/// the 2D origin) are reported.
pub fn find_equilibria(field: &dyn VectorField, p: &[f64]) -> Result<EquilibriumSet, crate::models::ModelError> {
    match field.dim() {
        2 => {
            let ps = ParameterSet2D::from_slice(p)?;
            let mut set = find_equilibria_2d_with(field, &ps);
            if !field.desingularized() {
                set.records.retain(|r| !r.boundary);
            }
            Ok(set)
        }
        3 => {
            let ps = ParameterSet3D::from_slice(p)?;
            Ok(find_equilibria_3d_with(field, &ps, DEFAULT_M_MAX))
        }
        d => Err(crate::models::ModelError::Length { expected: 3, got: d }),
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{eval_field_2d, eval_field_3d, jacobian_2d, State2, State3};

    fn ev(pairs: &[(f64, f64)]) -> Vec<Eigen> {
        pairs.iter().map(|&(re, im)| Eigen { re, im }).collect()
    }

    #[test]
    fn classification_by_eigenvalues() {
        assert_eq!(classify_eigenvalues(&ev(&[(-1.0, 0.0), (-2.0, 0.0)])), Stability::StableNode);
        assert_eq!(
            classify_eigenvalues(&ev(&[(0.1, 2.0), (0.1, -2.0)])),
            Stability::UnstableFocus
        );
        assert_eq!(classify_eigenvalues(&ev(&[(1.0, 0.0), (-2.0, 0.0)])), Stability::Saddle);
        assert_eq!(
            classify_eigenvalues(&ev(&[(1e-12, 1.0), (1e-12, -1.0)])),
            Stability::NonHyperbolic
        );
        let j = JacobianMatrix::from_row_major(2, vec![-1.0, 0.0, 0.0, -2.0]);
        assert_eq!(classify(&j), Stability::StableNode);
    }

    #[test]
    fn three_equilibria_in_window() {
        let mut p = ParameterSet2D::reference(3.0);
        p.b = 1.3;
        let set = find_equilibria_2d(&p);
        assert_eq!(set.interior_count(), 3);
        assert!(!set.tangency);
        for r in set.interior() {
            let f = eval_field_2d(&State2::new(r.state[0], r.state[1]), &p).unwrap();
            assert!(f[0].abs().max(f[1].abs()) < 1e-12);
            assert!(r.state[0] > p.a / p.b);
        }
        let classes: Vec<Stability> = set.interior().map(|r| r.class).collect();
        assert_eq!(classes[1], Stability::Saddle);
        let mid = &set.records[1];
        assert_eq!(
            proposition_class(mid.state[0], mid.state[1], &p),
            PropositionClass::Saddle
        );
        let origin = set.records.last().unwrap();
        assert!(origin.boundary);
        assert_eq!(origin.class, Stability::Repeller);
    }

    #[test]
    fn single_stable_equilibrium_for_large_e() {
        let set = find_equilibria_2d(&ParameterSet2D::reference(5.0));
        assert_eq!(set.interior_count(), 1);
        assert!(set.records[0].class.is_stable());
    }

    #[test]
    fn proposition_matches_eigenvalues_on_grid() {
        for i in 0..30 {
            for j in 0..30 {
                let mut p = ParameterSet2D::reference(0.2 + 0.16 * i as f64);
                p.b = 0.5 + 0.08 * j as f64;
                for r in find_equilibria_2d(&p).interior() {
                    let pc = proposition_class(r.state[0], r.state[1], &p);
                    assert!(proposition_agrees(r.class, pc), "{p:?} {r:?} {pc:?}");
                }
            }
        }
    }

    #[test]
    fn jacobian_trace_is_j_minus_b_minus_one() {
        let mut p = ParameterSet2D::reference(3.0);
        p.b = 1.3;
        for r in find_equilibria_2d(&p).interior() {
            let j = jacobian_2d(&State2::new(r.state[0], r.state[1]), &p).unwrap();
            assert!((j.trace() - (r.j_quantity.unwrap() - p.b - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_turning_points_with_three_roots() {
        let mut p = ParameterSet2D::reference(3.0);
        p.b = 1.3;
        let tp = nullcline_turning_points(&p);
        assert_eq!(tp.len(), 2);
        assert!(p.a / p.b < tp[0] && tp[0] < tp[1]);
    }

    #[test]
    fn equilibria_3d_have_small_residual() {
        let p = ParameterSet3D::default_scan();
        let set = find_equilibria_3d(&p);
        assert!(!set.records.is_empty());
        assert!(!set.truncated);
        for r in &set.records {
            let f = eval_field_3d(&State3::new(r.state[0], r.state[1], r.state[2]), &p).unwrap();
            assert!(f.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn polynomial_roots_simple() {
        // (x-1)(x-2)(x-3)
        let (r, t) = real_roots(&[-6.0, 11.0, -6.0, 1.0], 0.0, 10.0);
        assert!(!t);
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-13);
        }
        assert_eq!(real_roots(&[-6.0, 11.0, -6.0, 1.0], 1.5, 2.5).0.len(), 1);
    }
}
