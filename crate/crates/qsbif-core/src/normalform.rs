//! Hopf and Bogdanov-Takens quantities of the 2D field in closed form, plus a
//! numerical first Lyapunov coefficient for any registered field.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{psi_map, Field2D, ModelError, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormalFormError {
    #[error("no Hopf point: D_H = {0:e} is not positive")]
    NoHopf(f64),
    #[error("point outside the BT domain: {condition} fails (value {value:e})")]
    OutsideBtDomain { condition: &'static str, value: f64 },
    #[error("Jacobian has no simple imaginary pair")]
    NoImaginaryPair,
    #[error("linear solve failed: {0}")]
    Singular(&'static str),
    #[error("Newton did not converge: {0}")]
    NoConvergence(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, NormalFormError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criticality {
    Supercritical,
    Subcritical,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfDiagnostics {
    pub u: f64,
    pub v: f64,
    pub k: f64,
    /// b at which the trace vanishes.
    pub b: f64,
    /// a and e placing the equilibrium at (u, v).
    pub a: f64,
    pub e: f64,
    pub trace: f64,
    pub d_h: f64,
    pub omega: f64,
    pub l1: f64,
    /// Sum of absolute values of the terms of l1.
    pub l1_scale: f64,
    pub big_l1: f64,
    pub verdict: Criticality,
}

/// l1 is called degenerate below this fraction of its term scale.
pub const L1_DEGENERACY: f64 = 1e-10;

/// b that puts the trace of the 2D Jacobian at (u, v) to zero.
pub fn hopf_b(u: f64, v: f64, k: f64) -> f64 {
    let w = 1.0 + k * u * u;
    -1.0 + 2.0 * u / (w * w * v)
}

/// Trace of the 2D Jacobian at (u, v).
pub fn trace_2d(u: f64, v: f64, b: f64, k: f64) -> f64 {
    let w = 1.0 + k * u * u;
    2.0 * u / (v * w * w) - b - 1.0
}

/// Determinant of the 2D Jacobian at (u, v) once the trace vanishes.
pub fn hopf_determinant(u: f64, v: f64, k: f64) -> f64 {
    (2.0 * u.powi(3) - v * v - k * u * u * v * v) / ((1.0 + k * u * u) * v * v)
}

/// The closed-form l1 polynomial and the sum of its terms' magnitudes.
pub fn l1_polynomial(u: f64, v: f64, k: f64, w: f64) -> (f64, f64) {
    let (u2, u3, u4, u5, u6) = (u * u, u.powi(3), u.powi(4), u.powi(5), u.powi(6));
    let (v2, v3, v4, v5) = (v * v, v.powi(3), v.powi(4), v.powi(5));
    let (k2, k3, k4) = (k * k, k.powi(3), k.powi(4));
    let w2 = w * w;
    let w4 = w2 * w2;
    let cyc = w * (-1.0 + w - w2 + w * w2);
    let terms = [
        -32.0 * k3 * u.powi(14),
        16.0 * k4 * u.powi(13) * v2 * w2,
        2.0 * u2 * v3 * (2.0 + 3.0 * k * v2 * (w - 1.0) * w) * (1.0 + w2),
        -2.0 * u * v4 * (1.0 + w2).powi(2),
        v5 * cyc,
        -4.0 * u3 * v3 * (-1.0 + (1.0 + 6.0 * k * v) * w2 + 6.0 * k * v * w4),
        4.0 * k3 * u.powi(11) * v2 * (16.0 * w2 + k * (v + 7.0 * v * w2)),
        u4 * v2
            * (-24.0 * k * v * (1.0 + w2) - 8.0 * (3.0 + w2) + 15.0 * k2 * v3 * cyc),
        4.0 * u6
            * v
            * (12.0 + 9.0 * k2 * v2 * (1.0 + w2) + 4.0 * k * v * (3.0 + w2) + 5.0 * k3 * v4 * cyc),
        k2 * u.powi(12) * (-96.0 - 48.0 * k * v + k4 * v5 * cyc),
        6.0 * k * u.powi(10) * (-16.0 - 8.0 * k * v + k4 * v5 * cyc),
        u.powi(8) * (-32.0 + 48.0 * k * v + 24.0 * k2 * v2 * (3.0 + w2) + 15.0 * k4 * v5 * cyc),
        -4.0 * u5 * v2 * (-4.0 * w2 - 4.0 * k * v * (1.0 + w2) + 3.0 * k2 * v2 * (-1.0 + w4)),
        2.0 * k2
            * u.powi(9)
            * v2
            * (48.0 * w2 + 8.0 * k * (v + 5.0 * v * w2) + 3.0 * k2 * v2 * (1.0 + 6.0 * w2 + 5.0 * w4)),
        8.0 * k
            * u.powi(7)
            * v2
            * (8.0 * w2 + 3.0 * k * (v + 3.0 * v * w2) + k2 * v2 * (2.0 + 7.0 * w2 + 5.0 * w4)),
    ];
    (terms.iter().sum(), terms.iter().map(|t| t.abs()).sum())
}

/// Hopf data at an equilibrium (u, v) of the 2D field with saturation k.
pub fn hopf_quantities(u: f64, v: f64, k: f64) -> Result<HopfDiagnostics> {
    let d_h = hopf_determinant(u, v, k);
    if !(d_h > 0.0) {
        return Err(NormalFormError::NoHopf(d_h));
    }
    let b = hopf_b(u, v, k);
    let (a, e, _, _) = psi_map(u, v, b, k)?;
    let omega = d_h.sqrt();
    let (l1, l1_scale) = l1_polynomial(u, v, k, omega);
    let w = 1.0 + k * u * u;
    let big_l1 = l1 / (64.0 * omega * omega * w.powi(6) * u.powi(4) * v.powi(5));
    let verdict = if l1.abs() < L1_DEGENERACY * l1_scale {
        Criticality::Degenerate
    } else if l1 < 0.0 {
        Criticality::Supercritical
    } else {
        Criticality::Subcritical
    };
    Ok(HopfDiagnostics {
        u,
        v,
        k,
        b,
        a,
        e,
        trace: trace_2d(u, v, b, k),
        d_h,
        omega,
        l1,
        l1_scale,
        big_l1,
        verdict,
    })
}

/// Derivative of the trace with respect to b along a Hopf point. The trace
/// is affine in b with slope -1.
pub fn hopf_transversality(u: f64, v: f64, k: f64) -> Result<f64> {
    hopf_quantities(u, v, k)?;
    Ok(-1.0)
}

/// Central difference of the trace in b, for cross-checking.
pub fn hopf_transversality_fd(u: f64, v: f64, k: f64, h: f64) -> f64 {
    let b = hopf_b(u, v, k);
    (trace_2d(u, v, b + h, k) - trace_2d(u, v, b - h, k)) / (2.0 * h)
}

// ---------------------------------------------------------------------------
// Numerical first Lyapunov coefficient

/// Field derivatives along real directions by central differences.
struct Derivs<'a> {
    field: &'a dyn VectorField,
    x: Vec<f64>,
    p: &'a [f64],
    h: f64,
}

impl Derivs<'_> {
    fn at(&self, d: &[f64], t: f64) -> Result<DVector<f64>> {
        let y: Vec<f64> = self.x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        Ok(DVector::from_vec(self.field.eval_vec(&y, self.p)?))
    }

    fn second(&self, d: &[f64]) -> Result<DVector<f64>> {
        let h = self.h;
        Ok((self.at(d, h)? - self.at(d, 0.0)? * 2.0 + self.at(d, -h)?) / (h * h))
    }

    fn third(&self, d: &[f64]) -> Result<DVector<f64>> {
        let h = self.h;
        Ok((self.at(d, 2.0 * h)? - self.at(d, h)? * 2.0 + self.at(d, -h)? * 2.0
            - self.at(d, -2.0 * h)?)
            / (2.0 * h * h * h))
    }

    fn bilinear(&self, a: &[f64], b: &[f64]) -> Result<DVector<f64>> {
        let s: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        let m: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Ok((self.second(&s)? - self.second(&m)?) / 4.0)
    }

    fn trilinear(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(a.len());
        for (sb, sc) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let d: Vec<f64> = (0..a.len()).map(|i| a[i] + sb * b[i] + sc * c[i]).collect();
            acc += self.third(&d)? * (sb * sc);
        }
        Ok(acc / 24.0)
    }
}

type CVec = nalgebra::DVector<Complex64>;

fn split(v: &CVec) -> [(Complex64, Vec<f64>); 2] {
    [
        (Complex64::new(1.0, 0.0), v.iter().map(|z| z.re).collect()),
        (Complex64::new(0.0, 1.0), v.iter().map(|z| z.im).collect()),
    ]
}

fn complexify(v: &DVector<f64>, c: Complex64) -> CVec {
    v.map(|x| c * x)
}

fn cbilinear(d: &Derivs, a: &CVec, b: &CVec) -> Result<CVec> {
    let mut out = CVec::zeros(a.len());
    for (ca, ra) in split(a) {
        for (cb, rb) in split(b) {
            out += complexify(&d.bilinear(&ra, &rb)?, ca * cb);
        }
    }
    Ok(out)
}

fn ctrilinear(d: &Derivs, a: &CVec, b: &CVec, c: &CVec) -> Result<CVec> {
    let mut out = CVec::zeros(a.len());
    for (ca, ra) in split(a) {
        for (cb, rb) in split(b) {
            for (cc, rc) in split(c) {
                out += complexify(&d.trilinear(&ra, &rb, &rc)?, ca * cb * cc);
            }
        }
    }
    Ok(out)
}

fn null_vector(m: &DMatrix<Complex64>) -> Result<CVec> {
    // Smallest right singular vector of a (numerically) singular matrix.
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.ok_or(NormalFormError::Singular("svd"))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    Ok(vt.row(idx).transpose().map(|z| z.conj()))
}

/// First Lyapunov coefficient at an equilibrium whose Jacobian has an
/// imaginary pair +-i omega, from the projection formula with multilinear
/// forms taken by finite differences. Negative means supercritical. Also
/// returns omega.
pub fn first_lyapunov(field: &dyn VectorField, x: &[f64], p: &[f64]) -> Result<(f64, f64)> {
    let n = field.dim();
    let a = field.jacobian_matrix(x, p)?;
    let ev = a.clone().complex_eigenvalues();
    let (omega, _) = ev
        .iter()
        .filter(|z| z.im > 0.0)
        .map(|z| (z.im, z.re.abs()))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .ok_or(NormalFormError::NoImaginaryPair)?;
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let iw = Complex64::new(0.0, omega);
    let eye = DMatrix::<Complex64>::identity(n, n);
    let mut q = null_vector(&(&ac - eye.clone() * iw))?;
    let mut pv = null_vector(&(ac.transpose() + eye.clone() * iw))?;
    let qn = q.norm();
    q /= Complex64::new(qn, 0.0);
    // <p, q> = conj(p) . q = 1
    let pq: Complex64 = pv.iter().zip(q.iter()).map(|(a, b)| a.conj() * b).sum();
    pv /= pq.conj();

    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let d = Derivs {
        field,
        x: x.to_vec(),
        p,
        h: 1e-3 * scale,
    };
    let qb = q.map(|z| z.conj());
    let inner = |u: &CVec, v: &CVec| -> Complex64 { u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum() };

    let c_qqqb = ctrilinear(&d, &q, &q, &qb)?;
    let b_qqb = cbilinear(&d, &q, &qb)?;
    let s1 = ac
        .clone()
        .lu()
        .solve(&b_qqb)
        .ok_or(NormalFormError::Singular("A"))?;
    let b_q_s1 = cbilinear(&d, &q, &s1)?;
    let b_qq = cbilinear(&d, &q, &q)?;
    let m2 = eye * Complex64::new(0.0, 2.0 * omega) - &ac;
    let s2 = m2.lu().solve(&b_qq).ok_or(NormalFormError::Singular("2iw - A"))?;
    let b_qb_s2 = cbilinear(&d, &qb, &s2)?;
    let val = inner(&pv, &c_qqqb) - inner(&pv, &b_q_s1) * 2.0 + inner(&pv, &b_qb_s2);
    Ok((val.re / (2.0 * omega), omega))
}

// ---------------------------------------------------------------------------
// Bogdanov-Takens

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtDiagnostics {
    pub u: f64,
    pub v: f64,
    pub b_star: f64,
    pub k_star: f64,
    /// The a and e values of the BT point.
    pub alpha: f64,
    pub epsilon: f64,
    pub g1: f64,
    pub g2: f64,
    pub a20: f64,
    pub b20: f64,
    pub b11: f64,
    /// Sign of (a20 + b11) b20.
    pub nf_sign: i8,
}

/// Checks the five defining conditions of the BT domain, naming the first
/// that fails.
pub fn check_bt_domain(x: f64, y: f64) -> Result<()> {
    let x2 = x * x;
    let x3 = x2 * x;
    let x5 = x3 * x2;
    let y2 = y * y;
    let y3 = y2 * y;
    let conds: [(&'static str, f64, bool); 7] = [
        ("x > 0", x, true),
        ("y > 0", y, true),
        ("y^3 - 2x^5 > 0", y3 - 2.0 * x5, true),
        ("2x^3 - y^2 > 0", 2.0 * x3 - y2, true),
        ("y^3 - 2x^5 - x^3 y > 0", y3 - 2.0 * x5 - x3 * y, true),
        (
            "(x^2 - y)(2x^5 + x^3 y - y^3) > 0",
            (x2 - y) * (2.0 * x5 + x3 * y - y3),
            true,
        ),
        (
            "4x^5 - x^3 y - 6x^2 y^2 + 4y^3 != 0",
            4.0 * x5 - x3 * y - 6.0 * x2 * y2 + 4.0 * y3,
            false,
        ),
    ];
    for (condition, value, strict_positive) in conds {
        let ok = if strict_positive {
            value > 0.0
        } else {
            value.abs() > 1e-12 * (x5 + y3)
        };
        if !ok {
            return Err(NormalFormError::OutsideBtDomain { condition, value });
        }
    }
    Ok(())
}

pub fn bt_quantities(u: f64, v: f64) -> Result<BtDiagnostics> {
    check_bt_domain(u, v)?;
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    let u8 = u4 * u4;
    let u9 = u8 * u;
    let u10 = u9 * u;
    let u11 = u10 * u;
    let v2 = v * v;
    let v3 = v2 * v;
    let v4 = v3 * v;
    let v6 = v3 * v3;
    let b_star = (v3 - 2.0 * u5) / (2.0 * u5);
    let k_star = (2.0 * u3 - v2) / (u2 * v2);
    let alpha = (-2.0 * u5 + v3 - u3 * v) / (2.0 * u4);
    let epsilon = 2.0 * u4 * (u2 - v) / (2.0 * u5 + u3 * v - v3);
    let g1 = 8.0 * u10 - 2.0 * u8 * v - 4.0 * u5 * v3 - 3.0 * u3 * v4 + 2.0 * v6;
    let g2 = 2.0 * u5 + 3.0 * u3 * v - 2.0 * v3;
    let a20 = (8.0 * u10 - 16.0 * u11 + 4.0 * u9 * v - 4.0 * u5 * v3 + 8.0 * u.powi(6) * v3
        - 3.0 * u3 * v4
        + 6.0 * u4 * v4
        + 2.0 * v6
        - 4.0 * u * v6)
        / (4.0 * u10 * v);
    let b20 = g1 / (4.0 * u10 * v);
    let b11 = (-4.0 * u9 + 8.0 * u10 - 2.0 * u8 * v + u4 * v3) / (2.0 * u9 * v)
        - (4.0 * u5 * v3 + 3.0 * u3 * v4 - 2.0 * v6) / (2.0 * u9 * v);
    let prod = (a20 + b11) * b20;
    Ok(BtDiagnostics {
        u,
        v,
        b_star,
        k_star,
        alpha,
        epsilon,
        g1,
        g2,
        a20,
        b20,
        b11,
        nf_sign: sign(prod),
    })
}

impl BtDiagnostics {
    /// a20 + b11 through its factored form -V^2 G2 / (4 U^10).
    pub fn a20_b11_factored(&self) -> f64 {
        -self.v * self.v * self.g2 / (4.0 * self.u.powi(10))
    }

    /// Normal-form sign from the factored product -V G1 G2 / (16 U^20).
    pub fn nf_sign_factored(&self) -> i8 {
        sign(-self.v * self.g1 * self.g2)
    }

    /// Jacobian of the 2D field at the BT point.
    pub fn jacobian(&self) -> [[f64; 2]; 2] {
        [[1.0, -1.0 / (2.0 * self.u)], [2.0 * self.u, -1.0]]
    }

    /// Generalised eigenvectors v1 (kernel) and v2 (J v2 = v1).
    pub fn generalized_eigenvectors(&self) -> ([f64; 2], [f64; 2]) {
        ([1.0 / (2.0 * self.u), 1.0], [1.0, -1.0 + 2.0 * self.u])
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// The factor F in det DPsi = 2x^5/(y + K x^2 y)^4 F.
pub fn regularity_f(x: f64, y: f64, b: f64, k: f64) -> f64 {
    let x2 = x * x;
    let y2 = y * y;
    -2.0 * k * x.powi(5) - 9.0 * x * y + b * y2 + 2.0 * b * k * x2 * y2 + b * k * k * x2 * x2 * y2
        + x.powi(3) * (10.0 + k * y)
}

/// F at the BT point, in closed form.
pub fn regularity_f_bt(u: f64, v: f64) -> f64 {
    -(2.0 * u / (v * v))
        * (4.0 * u.powi(5) - u.powi(3) * v - 6.0 * u * u * v * v + 4.0 * v.powi(3))
}

/// det DPsi of (x, y, b, K) -> (f, g, trace, det) at (U, V, b, K).
pub fn bt_regularity(u: f64, v: f64, b: f64, k: f64) -> Result<f64> {
    check_bt_domain(u, v)?;
    Ok(2.0 * u.powi(5) / (v + k * u * u * v).powi(4) * regularity_f(u, v, b, k))
}

/// (f, g, trace, det) of the 2D field at state (x, y) with parameters
/// (b, K) and fixed (a, e).
pub fn bt_map(x: f64, y: f64, b: f64, k: f64, a: f64, e: f64) -> [f64; 4] {
    let p = [k, b, a, e];
    let mut f = [0.0; 2];
    let mut j = [0.0; 4];
    // The raw field is only undefined for y <= 0, which callers avoid.
    let _ = Field2D.eval(&[x, y], &p, &mut f);
    let _ = Field2D.jacobian(&[x, y], &p, &mut j);
    [f[0], f[1], j[0] + j[3], j[0] * j[3] - j[1] * j[2]]
}

/// Recover (U, V) with psi_map(U, V, b, K) = (a, e, b, K) by Newton on the
/// 2D equilibrium equations, starting from `guess`.
pub fn psi_inverse(a: f64, e: f64, b: f64, k: f64, guess: (f64, f64)) -> Result<(f64, f64)> {
    let p = [k, b, a, e];
    let mut x = [guess.0, guess.1];
    for _ in 0..60 {
        let f = Field2D.eval_vec(&x, &p)?;
        let r = f[0].abs().max(f[1].abs());
        if r < 1e-14 {
            return Ok((x[0], x[1]));
        }
        let j = Field2D.jacobian_matrix(&x, &p)?;
        let dx = j
            .lu()
            .solve(&DVector::from_vec(f))
            .ok_or(NormalFormError::Singular("psi inverse"))?;
        x[0] -= dx[0];
        x[1] -= dx[1];
    }
    let f = Field2D.eval_vec(&x, &p)?;
    if f[0].abs().max(f[1].abs()) < 1e-11 {
        Ok((x[0], x[1]))
    } else {
        Err(NormalFormError::NoConvergence(format!("residual {:e}", f[0].abs().max(f[1].abs()))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelError;

    /// x' = -w y + s x r^2, y' = w x + s y r^2: first Lyapunov coefficient s/w.
    struct Normal {
        w: f64,
        s: f64,
    }
    impl VectorField for Normal {
        fn name(&self) -> &'static str {
            "normal"
        }
        fn dim(&self) -> usize {
            2
        }
        fn state_names(&self) -> &'static [&'static str] {
            &["x", "y"]
        }
        fn param_names(&self) -> &'static [&'static str] {
            &[]
        }
        fn desingularized(&self) -> bool {
            true
        }
        fn eval(&self, x: &[f64], _p: &[f64], out: &mut [f64]) -> std::result::Result<(), ModelError> {
            let r2 = x[0] * x[0] + x[1] * x[1];
            out[0] = -self.w * x[1] + self.s * x[0] * r2 + 0.3 * x[0] * x[0];
            out[1] = self.w * x[0] + self.s * x[1] * r2;
            Ok(())
        }
        fn jacobian(&self, x: &[f64], _p: &[f64], out: &mut [f64]) -> std::result::Result<(), ModelError> {
            let (a, b) = (x[0], x[1]);
            let s = self.s;
            out.copy_from_slice(&[
                0.6 * a + s * (3.0 * a * a + b * b),
                -self.w + 2.0 * s * a * b,
                self.w + 2.0 * s * a * b,
                s * (a * a + 3.0 * b * b),
            ]);
            Ok(())
        }
    }

    #[test]
    fn numeric_l1_on_cubic_normal_form() {
        // With q of unit length the coefficient is 2s/w; the quadratic term
        // only enters through products of second derivatives, all zero here.
        let (w, s) = (1.3, -0.4);
        let f = Normal { w, s };
        let (l1, om) = first_lyapunov(&f, &[0.0, 0.0], &[]).unwrap();
        assert!((om - w).abs() < 1e-12);
        assert!((l1 - 2.0 * s / w).abs() < 1e-5, "{l1}");
    }

    #[test]
    fn hopf_trace_vanishes() {
        for (u, v, k) in [(0.72, 0.646, 0.043), (0.5, 0.3, 0.0), (1.1, 1.4, 0.1)] {
            if let Ok(h) = hopf_quantities(u, v, k) {
                assert!(h.trace.abs() < 1e-14);
                assert_eq!(hopf_transversality(u, v, k).unwrap(), -1.0);
                assert!((hopf_transversality_fd(u, v, k, 1e-6) + 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn hopf_requires_positive_dh() {
        assert!(matches!(hopf_quantities(0.3, 1.0, 0.043), Err(NormalFormError::NoHopf(_))));
    }

    #[test]
    fn prefactor_sign_follows_l1() {
        let h = hopf_quantities(0.72, 0.646, 0.043).unwrap();
        assert_eq!(h.l1.signum(), h.big_l1.signum());
    }

    #[test]
    fn bt_identities() {
        let (u, v) = (0.3, 0.23);
        check_bt_domain(u, v).unwrap();
        let bt = bt_quantities(u, v).unwrap();
        assert!(((bt.a20 + bt.b11) - bt.a20_b11_factored()).abs() < 1e-10 * bt.a20_b11_factored().abs());
        assert_eq!(bt.nf_sign, bt.nf_sign_factored());
        let f = regularity_f(u, v, bt.b_star, bt.k_star);
        assert!((f - regularity_f_bt(u, v)).abs() < 1e-10 * f.abs());
        let j = bt.jacobian();
        let (v1, v2) = bt.generalized_eigenvectors();
        for i in 0..2 {
            let jv1 = j[i][0] * v1[0] + j[i][1] * v1[1];
            let jv2 = j[i][0] * v2[0] + j[i][1] * v2[1];
            assert!(jv1.abs() < 1e-12);
            assert!((jv2 - v1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bt_domain_names_failure() {
        match bt_quantities(0.6, 0.1) {
            Err(NormalFormError::OutsideBtDomain { condition, .. }) => {
                assert_eq!(condition, "y^3 - 2x^5 > 0")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn psi_inverse_round_trip() {
        let (u, v, b, k) = (0.55, 0.5, 1.4, 0.043);
        let (a, e, _, _) = psi_map(u, v, b, k).unwrap();
        let (uu, vv) = psi_inverse(a, e, b, k, (0.5, 0.45)).unwrap();
        assert!((uu - u).abs() < 1e-12 && (vv - v).abs() < 1e-12);
    }
}
