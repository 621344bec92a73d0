//! The four quorum-sensing vector fields, their Jacobians, and the maps
//! between the 3D and 2D parameterisations.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("state outside the domain of the {field} field: {reason}")]
    Domain { field: &'static str, reason: String },
    #[error("parameter {name} = {value} is invalid: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: &'static str,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub const PARAM_NAMES_3D: [&str; 9] = [
    "r", "k1", "k2", "gamma", "alpha", "epsilon", "mu1", "mu2", "mu3",
];
pub const PARAM_NAMES_2D: [&str; 4] = ["K", "b", "a", "e"];
pub const STATE_NAMES_3D: [&str; 3] = ["q", "m", "s"];
pub const STATE_NAMES_2D: [&str; 2] = ["u", "v"];

fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name: name.to_string(),
            value,
            reason: "must be finite and strictly positive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet3D {
    pub r: f64,
    pub k1: f64,
    pub k2: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

impl ParameterSet3D {
    /// Shipped default for the (k2, gamma) experiments. Not a published
    /// parameter set: chosen so that the fold and Hopf loci, a
    /// Bogdanov-Takens point and a saddle-focus homoclinic proxy all sit
    /// inside the scan window `default_scan_window`.
    pub fn default_scan() -> Self {
        ParameterSet3D {
            r: 1.0,
            k1: 1.0,
            k2: 2.3,
            gamma: 15.0,
            alpha: 0.01,
            epsilon: 0.8,
            mu1: 0.2,
            mu2: 0.7,
            mu3: 0.2,
        }
    }

    /// (k2 range, gamma range) used together with `default_scan`.
    pub fn default_scan_window() -> ((f64, f64), (f64, f64)) {
        ((1.8, 2.6), (5.0, 35.0))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in PARAM_NAMES_3D.iter().zip(self.to_vec()) {
            positive(name, v)?;
        }
        if self.epsilon >= 1.0 {
            return Err(ModelError::InvalidParameter {
                name: "epsilon".into(),
                value: self.epsilon,
                reason: "must be below 1",
            });
        }
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.r,
            self.k1,
            self.k2,
            self.gamma,
            self.alpha,
            self.epsilon,
            self.mu1,
            self.mu2,
            self.mu3,
        ]
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        if p.len() != 9 {
            return Err(ModelError::Length {
                expected: 9,
                got: p.len(),
            });
        }
        let out = ParameterSet3D {
            r: p[0],
            k1: p[1],
            k2: p[2],
            gamma: p[3],
            alpha: p[4],
            epsilon: p[5],
            mu1: p[6],
            mu2: p[7],
            mu3: p[8],
        };
        out.validate()?;
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        let i = index_of(&PARAM_NAMES_3D, name)?;
        Ok(self.to_vec()[i])
    }

    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let i = index_of(&PARAM_NAMES_3D, name)?;
        let mut v = self.to_vec();
        v[i] = value;
        Self::from_slice(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet2D {
    #[serde(rename = "K")]
    pub k: f64,
    pub b: f64,
    pub a: f64,
    pub e: f64,
    /// Autoinducer level the set was reduced at, when it came from a 3D set.
    pub q0: Option<f64>,
}

impl ParameterSet2D {
    pub fn new(k: f64, b: f64, a: f64, e: f64) -> Result<Self> {
        let p = ParameterSet2D {
            k,
            b,
            a,
            e,
            q0: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Reference values a = 0.042, b = 1.4, K = 0.043 with the given e.
    pub fn reference(e: f64) -> Self {
        ParameterSet2D {
            k: 0.043,
            b: 1.4,
            a: 0.042,
            e,
            q0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in PARAM_NAMES_2D.iter().zip(self.to_vec()) {
            positive(name, v)?;
        }
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.k, self.b, self.a, self.e]
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        if p.len() != 4 {
            return Err(ModelError::Length {
                expected: 4,
                got: p.len(),
            });
        }
        ParameterSet2D::new(p[0], p[1], p[2], p[3])
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        let i = index_of(&PARAM_NAMES_2D, name)?;
        Ok(self.to_vec()[i])
    }

    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let i = index_of(&PARAM_NAMES_2D, name)?;
        let mut v = self.to_vec();
        v[i] = value;
        let mut out = Self::from_slice(&v)?;
        out.q0 = self.q0;
        Ok(out)
    }
}

fn index_of(names: &[&str], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State3 {
    pub q: f64,
    pub m: f64,
    pub s: f64,
}

impl State3 {
    pub fn new(q: f64, m: f64, s: f64) -> Self {
        State3 { q, m, s }
    }
    pub fn to_array(self) -> [f64; 3] {
        [self.q, self.m, self.s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State2 {
    pub u: f64,
    pub v: f64,
}

impl State2 {
    pub fn new(u: f64, v: f64) -> Self {
        State2 { u, v }
    }
    pub fn to_array(self) -> [f64; 2] {
        [self.u, self.v]
    }
}

/// Square Jacobian, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianMatrix {
    pub dim: usize,
    pub entries: Vec<f64>,
}

impl JacobianMatrix {
    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), dim * dim, "Jacobian entry count");
        JacobianMatrix { dim, entries }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn determinant(&self) -> f64 {
        self.to_dmatrix().determinant()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Form {
    Raw,
    Desingularized,
}

// ---------------------------------------------------------------------------
// Typed entry points

pub fn eval_field_3d(x: &State3, p: &ParameterSet3D) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    Field3D.eval(&x.to_array(), &p.to_vec(), &mut out)?;
    Ok(out)
}

pub fn eval_field_3d_desing(x: &State3, p: &ParameterSet3D) -> Result<[f64; 3]> {
    closed_orthant("3d-desing", &x.to_array())?;
    let mut out = [0.0; 3];
    Field3DDesing.eval(&x.to_array(), &p.to_vec(), &mut out)?;
    Ok(out)
}

pub fn eval_field_2d(x: &State2, p: &ParameterSet2D) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    Field2D.eval(&x.to_array(), &p.to_vec(), &mut out)?;
    Ok(out)
}

pub fn eval_field_2d_desing(x: &State2, p: &ParameterSet2D) -> Result<[f64; 2]> {
    closed_orthant("2d-desing", &x.to_array())?;
    let mut out = [0.0; 2];
    Field2DDesing.eval(&x.to_array(), &p.to_vec(), &mut out)?;
    Ok(out)
}

pub fn jacobian_2d(x: &State2, p: &ParameterSet2D) -> Result<JacobianMatrix> {
    let mut out = vec![0.0; 4];
    Field2D.jacobian(&x.to_array(), &p.to_vec(), &mut out)?;
    Ok(JacobianMatrix::from_row_major(2, out))
}

pub fn jacobian_3d(x: &State3, p: &ParameterSet3D, form: Form) -> Result<JacobianMatrix> {
    let mut out = vec![0.0; 9];
    match form {
        Form::Raw => Field3D.jacobian(&x.to_array(), &p.to_vec(), &mut out)?,
        Form::Desingularized => {
            closed_orthant("3d-desing", &x.to_array())?;
            Field3DDesing.jacobian(&x.to_array(), &p.to_vec(), &mut out)?
        }
    }
    Ok(JacobianMatrix::from_row_major(3, out))
}

fn closed_orthant(field: &'static str, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| *v >= 0.0) {
        Ok(())
    } else {
        Err(ModelError::Domain {
            field,
            reason: "negative component".into(),
        })
    }
}

/// Reduce a 3D parameter set at a frozen autoinducer level `q0`.
pub fn reduce_params(p: &ParameterSet3D, q0: f64) -> Result<ParameterSet2D> {
    p.validate()?;
    positive("q0", q0)?;
    let eta1 = p.k1 * q0;
    let eta2 = p.k2 * q0;
    let mut out = ParameterSet2D::new(
        p.gamma * (eta1 / eta2).powi(2),
        p.mu2 / p.mu3,
        eta2 * p.alpha / (eta1 * p.mu3),
        p.mu3 * p.epsilon / eta1,
    )?;
    out.q0 = Some(q0);
    Ok(out)
}

/// Parameters (a, e, b, K) that make (u, v) = (U, V) an equilibrium of the
/// 2D field.
pub fn psi_map(u: f64, v: f64, b: f64, k: f64) -> Result<(f64, f64, f64, f64)> {
    for (name, val) in [("U", u), ("V", v), ("b", b), ("K", k)] {
        positive(name, val)?;
    }
    let w = 1.0 + k * u * u;
    let c1 = b * w * v - u;
    let c2 = v - u * u;
    if c1 <= 0.0 {
        return Err(ModelError::Domain {
            field: "psi",
            reason: format!("b(1+KU^2)V - U = {c1:e} is not positive"),
        });
    }
    if c2 <= 0.0 {
        return Err(ModelError::Domain {
            field: "psi",
            reason: format!("V - U^2 = {c2:e} is not positive"),
        });
    }
    let a = u * c1 / (v * w);
    let e = c2 * v * w / (u * c1);
    Ok((a, e, b, k))
}

// ---------------------------------------------------------------------------
// Vector-field strategy

/// A parameterised autonomous vector field. States and parameters are plain
/// slices ordered as `state_names()` and `param_names()`.
///
/// Desingularised fields accept any real state; raw fields report a domain
/// error where the time rescaling vanishes.
pub trait VectorField: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn state_names(&self) -> &'static [&'static str];
    fn param_names(&self) -> &'static [&'static str];
    fn desingularized(&self) -> bool;

    fn eval(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()>;

    /// Row-major `dim x dim`.
    fn jacobian(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()>;

    fn param_index(&self, name: &str) -> Result<usize> {
        index_of(self.param_names(), name)
    }

    /// Derivative of the field with respect to parameter `idx`.
    fn param_derivative(&self, x: &[f64], p: &[f64], idx: usize, out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let h = 1e-6 * (1.0 + p[idx].abs());
        let mut pp = p.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        pp[idx] = p[idx] + h;
        self.eval(x, &pp, &mut fp)?;
        pp[idx] = p[idx] - h;
        self.eval(x, &pp, &mut fm)?;
        for i in 0..n {
            out[i] = (fp[i] - fm[i]) / (2.0 * h);
        }
        Ok(())
    }

    fn eval_vec(&self, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, p, &mut out)?;
        Ok(out)
    }

    fn jacobian_matrix(&self, x: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        self.jacobian(x, p, &mut out)?;
        Ok(DMatrix::from_row_slice(n, n, &out))
    }
}

impl fmt::Debug for dyn VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField({})", self.name())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Field3D;
#[derive(Debug, Clone, Copy, Default)]
pub struct Field3DDesing;
#[derive(Debug, Clone, Copy, Default)]
pub struct Field2D;
#[derive(Debug, Clone, Copy, Default)]
pub struct Field2DDesing;

impl VectorField for Field3D {
    fn name(&self) -> &'static str {
        "3d"
    }
    fn dim(&self) -> usize {
        3
    }
    fn state_names(&self) -> &'static [&'static str] {
        &STATE_NAMES_3D
    }
    fn param_names(&self) -> &'static [&'static str] {
        &PARAM_NAMES_3D
    }
    fn desingularized(&self) -> bool {
        false
    }

    fn eval(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let (q, m, s) = (x[0], x[1], x[2]);
        if !(s > 0.0) {
            return Err(ModelError::Domain {
                field: "3d",
                reason: format!("s = {s:e} must be positive"),
            });
        }
        let [r, k1, k2, g, al, ep, mu1, mu2, mu3] = params9(p);
        let mm = m * m;
        out[0] = r * (m + s) - mu1 * q;
        out[1] = k1 * q * mm / (s * (1.0 + g * mm)) + al - mu2 * m;
        out[2] = k2 * q * mm + ep * al - mu3 * s;
        Ok(())
    }

    fn jacobian(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let (q, m, s) = (x[0], x[1], x[2]);
        if !(s > 0.0) {
            return Err(ModelError::Domain {
                field: "3d",
                reason: format!("s = {s:e} must be positive"),
            });
        }
        let [r, k1, k2, g, _al, _ep, mu1, mu2, mu3] = params9(p);
        let mm = m * m;
        let d = 1.0 + g * mm;
        out[0] = -mu1;
        out[1] = r;
        out[2] = r;
        out[3] = k1 * mm / (s * d);
        out[4] = 2.0 * k1 * q * m / (s * d * d) - mu2;
        out[5] = -k1 * q * mm / (s * s * d);
        out[6] = k2 * mm;
        out[7] = 2.0 * k2 * q * m;
        out[8] = -mu3;
        Ok(())
    }
}

impl VectorField for Field3DDesing {
    fn name(&self) -> &'static str {
        "3d-desing"
    }
    fn dim(&self) -> usize {
        3
    }
    fn state_names(&self) -> &'static [&'static str] {
        &STATE_NAMES_3D
    }
    fn param_names(&self) -> &'static [&'static str] {
        &PARAM_NAMES_3D
    }
    fn desingularized(&self) -> bool {
        true
    }

    fn eval(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let (q, m, s) = (x[0], x[1], x[2]);
        let [r, k1, k2, g, al, ep, mu1, mu2, mu3] = params9(p);
        let mm = m * m;
        out[0] = (r * (m + s) - mu1 * q) * s;
        out[1] = k1 * q * mm / (1.0 + g * mm) + (al - mu2 * m) * s;
        out[2] = (k2 * q * mm + ep * al - mu3 * s) * s;
        Ok(())
    }

    fn jacobian(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let (q, m, s) = (x[0], x[1], x[2]);
        let [r, k1, k2, g, al, ep, mu1, mu2, mu3] = params9(p);
        let mm = m * m;
        let d = 1.0 + g * mm;
        out[0] = -mu1 * s;
        out[1] = r * s;
        out[2] = r * (m + s) - mu1 * q + r * s;
        out[3] = k1 * mm / d;
        out[4] = 2.0 * k1 * q * m / (d * d) - mu2 * s;
        out[5] = al - mu2 * m;
        out[6] = k2 * mm * s;
        out[7] = 2.0 * k2 * q * m * s;
        out[8] = k2 * q * mm + ep * al - 2.0 * mu3 * s;
        Ok(())
    }
}

impl VectorField for Field2D {
    fn name(&self) -> &'static str {
        "2d"
    }
    fn dim(&self) -> usize {
        2
    }
    fn state_names(&self) -> &'static [&'static str] {
        &STATE_NAMES_2D
    }
    fn param_names(&self) -> &'static [&'static str] {
        &PARAM_NAMES_2D
    }
    fn desingularized(&self) -> bool {
        false
    }

    fn eval(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let (u, v) = (x[0], x[1]);
        if !(v > 0.0) {
            return Err(ModelError::Domain {
                field: "2d",
                reason: format!("v = {v:e} must be positive"),
            });
        }
        let [k, b, a, e] = params4(p);
        let uu = u * u;
        out[0] = uu / (v * (1.0 + k * uu)) + a - b * u;
        out[1] = uu + a * e - v;
        Ok(())
    }

    fn jacobian(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let (u, v) = (x[0], x[1]);
        if !(v > 0.0) {
            return Err(ModelError::Domain {
                field: "2d",
                reason: format!("v = {v:e} must be positive"),
            });
        }
        let [k, b, _a, _e] = params4(p);
        let w = 1.0 + k * u * u;
        out[0] = 2.0 * u / (v * w * w) - b;
        out[1] = -u * u / (w * v * v);
        out[2] = 2.0 * u;
        out[3] = -1.0;
        Ok(())
    }
}

impl VectorField for Field2DDesing {
    fn name(&self) -> &'static str {
        "2d-desing"
    }
    fn dim(&self) -> usize {
        2
    }
    fn state_names(&self) -> &'static [&'static str] {
        &STATE_NAMES_2D
    }
    fn param_names(&self) -> &'static [&'static str] {
        &PARAM_NAMES_2D
    }
    fn desingularized(&self) -> bool {
        true
    }

    fn eval(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let (u, v) = (x[0], x[1]);
        let [k, b, a, e] = params4(p);
        let uu = u * u;
        out[0] = uu / (1.0 + k * uu) + a * v - b * u * v;
        out[1] = uu * v + a * e * v - v * v;
        Ok(())
    }

    fn jacobian(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let (u, v) = (x[0], x[1]);
        let [k, b, a, e] = params4(p);
        let w = 1.0 + k * u * u;
        out[0] = 2.0 * u / (w * w) - b * v;
        out[1] = a - b * u;
        out[2] = 2.0 * u * v;
        out[3] = u * u + a * e - 2.0 * v;
        Ok(())
    }
}

fn params9(p: &[f64]) -> [f64; 9] {
    p[..9].try_into().expect("3D parameter slice has 9 entries")
}

fn params4(p: &[f64]) -> [f64; 4] {
    p[..4].try_into().expect("2D parameter slice has 4 entries")
}

/// Name-keyed collection of vector fields.
#[derive(Clone, Default)]
pub struct FieldRegistry {
    fields: BTreeMap<String, Arc<dyn VectorField>>,
}

impl FieldRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut reg = Self::new();
        reg.register(Arc::new(Field3D));
        reg.register(Arc::new(Field3DDesing));
        reg.register(Arc::new(Field2D));
        reg.register(Arc::new(Field2DDesing));
        reg
    }

    /// Replaces any field already registered under the same name.
    pub fn register(&mut self, field: Arc<dyn VectorField>) {
        self.fields.insert(field.name().to_string(), field);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn VectorField>> {
        self.fields
            .get(name)
            .cloned()
            .ok_or_else(|| ModelError::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.fields.keys().map(String::as_str).collect()
    }
}

/// Look up one of the built-in fields by name.
pub fn field(name: &str) -> Result<Arc<dyn VectorField>> {
    match name {
        "3d" => Ok(Arc::new(Field3D)),
        "3d-desing" => Ok(Arc::new(Field3DDesing)),
        "2d" => Ok(Arc::new(Field2D)),
        "2d-desing" => Ok(Arc::new(Field2DDesing)),
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

/// Closed-form m(t) on the invariant line s = 0 of the desingularised 3D
/// field started at (q0, m0, 0). q and s stay frozen.
pub fn boundary_line_m(q0: f64, m0: f64, k1: f64, gamma: f64, t: f64) -> f64 {
    let c = k1 * q0 * m0 * t + gamma * m0 * m0 - 1.0;
    (c + (4.0 * gamma * m0 * m0 + c * c).sqrt()) / (2.0 * gamma * m0)
}
