//! Line-based `key = value` configuration with `[section]` headers.
//!
//! Every key is known up front; anything else is rejected with its line
//! number. Values are validated for every section, whatever the command,
//! and the command-specific requirements are checked afterwards.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use qsbif_core::continuation::SpecialKind;
use qsbif_core::models::{field, ParameterSet2D, ParameterSet3D};

use crate::error::ConfigError;

pub const COMMANDS: [&str; 9] = [
    "simulate",
    "equilibria",
    "continue",
    "fold-curve",
    "hopf-curve",
    "cycles",
    "lyap",
    "scan",
    "sweep",
];

pub const MODELS: [&str; 4] = ["3d", "3d-desing", "2d", "2d-desing"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    All,
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    Forward,
    Backward,
    Both,
}

impl Direction {
    pub fn signs(self) -> Vec<f64> {
        match self {
            Direction::Forward => vec![1.0],
            Direction::Backward => vec![-1.0],
            Direction::Both => vec![1.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub newton: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub t_start: f64,
    pub t_end: f64,
    /// Uniform output samples; 0 writes the accepted integrator steps.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriverConfig {
    Constant { target: String, value: f64 },
    Ramp { target: String, start: f64, end: f64, t_start: f64, t_end: f64 },
    Sinusoidal { target: String, offset: f64, amplitude: f64, omega: f64, phase: f64 },
}

impl DriverConfig {
    pub fn target(&self) -> &str {
        match self {
            DriverConfig::Constant { target, .. }
            | DriverConfig::Ramp { target, .. }
            | DriverConfig::Sinusoidal { target, .. } => target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationConfig {
    pub parameter: Option<String>,
    pub range: Option<(f64, f64)>,
    pub second: Option<String>,
    pub second_range: Option<(f64, f64)>,
    pub direction: Direction,
    pub start: Start,
    /// Picks the special point whose first parameter is nearest this value.
    pub start_value: Option<f64>,
    pub step_initial: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub max_points: usize,
    pub stop_on: Vec<SpecialKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CyclesConfig {
    pub segments: usize,
    pub t_hom: f64,
    pub start_amplitude: f64,
    pub max_points: usize,
    pub hopf: Start,
    /// Secondary-parameter values for a HOM-proxy sweep.
    pub secondary: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovConfig {
    pub horizon: f64,
    pub renorm_interval: f64,
    pub transient_fraction: f64,
    pub escape_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub x: Option<Axis>,
    pub y: Option<Axis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Hysteresis,
    Forcing,
    Regions,
}

impl SweepKind {
    pub fn label(self) -> &'static str {
        match self {
            SweepKind::Hysteresis => "hysteresis",
            SweepKind::Forcing => "forcing",
            SweepKind::Regions => "regions",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: Option<SweepKind>,
    pub parameter: Option<String>,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub t_end: f64,
    pub samples: usize,
    pub witness_samples: usize,
    pub component: Option<String>,
    pub offset: Option<f64>,
    pub amplitude: Option<f64>,
    pub omega: Option<f64>,
    pub phase: Option<f64>,
    pub block: f64,
    pub threshold: f64,
    pub envelope_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: String,
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub model: String,
    pub seed: Option<u64>,
    pub threads: usize,
    /// In the model's parameter order.
    pub params: Vec<f64>,
    pub initial: Option<Vec<f64>>,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
    pub simulate: SimulateConfig,
    pub driver: Option<DriverConfig>,
    pub continuation: ContinuationConfig,
    pub cycles: CyclesConfig,
    pub lyapunov: LyapunovConfig,
    pub grid: GridConfig,
    pub sweep: SweepConfig,
}

// ---------------------------------------------------------------------------
// Raw layer

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

const SECTIONS: [&str; 12] = [
    "run",
    "params",
    "initial",
    "tolerances",
    "output",
    "simulate",
    "driver",
    "continuation",
    "cycles",
    "lyapunov",
    "scan",
    "sweep",
];

#[derive(Debug, Default)]
struct Raw {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

fn strip_comment(line: &str) -> &str {
    let t = line.trim_start();
    if t.starts_with('#') || t.starts_with(';') {
        return "";
    }
    match line.find(" #") {
        Some(i) => &line[..i],
        None => line,
    }
}

impl Raw {
    fn parse(text: &str) -> Result<Raw, ConfigError> {
        let mut raw = Raw::default();
        let mut section: Option<String> = None;
        for (k, line) in text.lines().enumerate() {
            let n = k + 1;
            let s = strip_comment(line).trim();
            if s.is_empty() {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: n, message: "unterminated section header".into() })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownSection { section: name.to_string(), line: n });
                }
                raw.sections.entry(name.to_string()).or_default();
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = s.split_once('=') else {
                return Err(ConfigError::Syntax { line: n, message: format!("expected 'key = value', found '{s}'") });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: n, message: "empty key".into() });
            }
            let sec = section
                .clone()
                .ok_or_else(|| ConfigError::Syntax { line: n, message: format!("'{key}' appears before any [section]") })?;
            let map = raw.sections.get_mut(&sec).expect("section registered");
            if let Some(prev) = map.get(key) {
                return Err(ConfigError::Duplicate { section: sec, key: key.to_string(), first: prev.line, second: n });
            }
            map.insert(key.to_string(), Entry { value: value.to_string(), line: n, used: false });
        }
        Ok(raw)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.sections.get_mut(section)?.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Value {
                key: key.to_string(),
                value: v.clone(),
                line,
                reason: e.to_string(),
            }),
        }
    }

    fn or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Strictly positive float with a default.
    fn positive(&mut self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        let line = self.line(section, key);
        let v: f64 = self.or(section, key, default)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(match line {
                Some(line) => ConfigError::Value { key: key.into(), value: v.to_string(), line, reason: "must be positive".into() },
                None => ConfigError::invalid(key, "must be positive"),
            });
        }
        Ok(v)
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.sections.get(section)?.get(key).map(|e| e.line)
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(section, key) {
            None => Ok(Vec::new()),
            Some((v, line)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>().map_err(|e| ConfigError::Value {
                        key: key.to_string(),
                        value: s.to_string(),
                        line,
                        reason: e.to_string(),
                    })
                })
                .collect(),
        }
    }

    fn keys(&self, section: &str) -> Vec<(String, usize)> {
        self.sections
            .get(section)
            .map(|m| m.iter().map(|(k, e)| (k.clone(), e.line)).collect())
            .unwrap_or_default()
    }

    fn finish(&self) -> Result<(), ConfigError> {
        let mut unused: Vec<(usize, &str, &str)> = Vec::new();
        for (sec, map) in &self.sections {
            for (k, e) in map {
                if !e.used {
                    unused.push((e.line, sec, k));
                }
            }
        }
        unused.sort();
        match unused.first() {
            Some((line, sec, key)) => Err(ConfigError::UnknownKey { section: sec.to_string(), key: key.to_string(), line: *line }),
            None => Ok(()),
        }
    }
}

fn parse_kind(s: &str) -> Result<SpecialKind, String> {
    Ok(match s {
        "LP" => SpecialKind::LP,
        "H" => SpecialKind::H,
        "CP" => SpecialKind::CP,
        "BT" => SpecialKind::BT,
        "GH" => SpecialKind::GH,
        "ZH" => SpecialKind::ZH,
        "LPC" => SpecialKind::LPC,
        "PD" => SpecialKind::PD,
        "HOM-proxy" => SpecialKind::HomProxy,
        other => return Err(format!("unknown special point kind '{other}'")),
    })
}

struct KindList(Vec<SpecialKind>);

impl FromStr for KindList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(parse_kind).collect::<Result<_, _>>().map(KindList)
    }
}

impl FromStr for Start {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(Start::All);
        }
        s.parse::<usize>().map(Start::Index).map_err(|_| "expected 'all' or an index".to_string())
    }
}

impl FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "1" | "+1" | "forward" => Ok(Direction::Forward),
            "-1" | "backward" => Ok(Direction::Backward),
            "both" => Ok(Direction::Both),
            _ => Err("expected 1, -1 or both".into()),
        }
    }
}

impl FromStr for SweepKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hysteresis" => Ok(SweepKind::Hysteresis),
            "forcing" => Ok(SweepKind::Forcing),
            "regions" => Ok(SweepKind::Regions),
            _ => Err("expected hysteresis, forcing or regions".into()),
        }
    }
}

fn range(raw: &mut Raw, section: &str, lo: &str, hi: &str) -> Result<Option<(f64, f64)>, ConfigError> {
    match (raw.get::<f64>(section, lo)?, raw.get::<f64>(section, hi)?) {
        (None, None) => Ok(None),
        (Some(a), Some(b)) if a < b => Ok(Some((a, b))),
        (Some(_), Some(_)) => Err(ConfigError::invalid(hi, format!("must exceed '{lo}'"))),
        (None, Some(_)) => Err(ConfigError::invalid(lo, "missing")),
        (Some(_), None) => Err(ConfigError::invalid(hi, "missing")),
    }
}

fn axis(raw: &mut Raw, p: &str) -> Result<Option<Axis>, ConfigError> {
    let name: Option<String> = raw.get("scan", p)?;
    let r = range(raw, "scan", &format!("{p}_min"), &format!("{p}_max"))?;
    let count: Option<usize> = raw.get("scan", &format!("{p}_count"))?;
    match (name, r, count) {
        (None, None, None) => Ok(None),
        (Some(name), Some((lo, hi)), Some(count)) if count >= 1 => Ok(Some(Axis { name, lo, hi, count })),
        (Some(_), Some(_), Some(_)) => Err(ConfigError::invalid(&format!("{p}_count"), "must be at least 1")),
        _ => Err(ConfigError::invalid(p, format!("axis needs {p}, {p}_min, {p}_max and {p}_count"))),
    }
}

fn base_params(model: &str, base: &str) -> Option<Vec<f64>> {
    match (model.starts_with("2d"), base) {
        (true, "reference") => Some(ParameterSet2D::reference(3.0).to_vec()),
        (false, "default") => Some(ParameterSet3D::default_scan().to_vec()),
        _ => None,
    }
}

/// Parse and fully validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, None)
}

/// As `parse_config`, with a seed that replaces the configured one before
/// validation.
pub fn parse_config_with(text: &str, seed: Option<u64>) -> Result<RunConfig, ConfigError> {
    let mut cfg = build(text)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build(text: &str) -> Result<RunConfig, ConfigError> {
    let mut raw = Raw::parse(text)?;

    let command: String = raw.get("run", "command")?.ok_or_else(|| ConfigError::invalid("command", "missing in [run]"))?;
    if !COMMANDS.contains(&command.as_str()) {
        return Err(ConfigError::invalid("command", format!("unknown command '{command}'")));
    }
    let model: String = raw.get("run", "model")?.ok_or_else(|| ConfigError::invalid("model", "missing in [run]"))?;
    let f = field(&model).map_err(|e| ConfigError::invalid("model", e.to_string()))?;
    let seed: Option<u64> = raw.get("run", "seed")?;
    let threads: usize = raw.or("run", "threads", 1)?;
    if threads == 0 {
        return Err(ConfigError::invalid("threads", "must be at least 1"));
    }

    // Parameters: optional base set, then explicit values.
    let names = f.param_names();
    let mut params: Vec<Option<f64>> = vec![None; names.len()];
    if let Some(base) = raw.get::<String>("params", "base")? {
        let v = base_params(&model, &base)
            .ok_or_else(|| ConfigError::invalid("base", format!("no base set '{base}' for model {model}")))?;
        params = v.into_iter().map(Some).collect();
    }
    for (key, line) in raw.keys("params") {
        if key == "base" {
            continue;
        }
        let Some(i) = names.iter().position(|n| *n == key) else {
            return Err(ConfigError::UnknownKey { section: "params".into(), key, line });
        };
        params[i] = raw.get("params", &key)?;
    }
    let params: Vec<f64> = params
        .into_iter()
        .zip(names)
        .map(|(v, n)| v.ok_or_else(|| ConfigError::invalid(n, "parameter not defined")))
        .collect::<Result<_, _>>()?;
    let check = if model.starts_with("2d") {
        ParameterSet2D::from_slice(&params).and_then(|p| p.validate())
    } else {
        ParameterSet3D::from_slice(&params).and_then(|p| p.validate())
    };
    check.map_err(|e| ConfigError::invalid("params", e.to_string()))?;

    let states = f.state_names();
    let initial = if raw.keys("initial").is_empty() {
        None
    } else {
        for (key, line) in raw.keys("initial") {
            if !states.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { section: "initial".into(), key, line });
            }
        }
        let mut x = Vec::new();
        for s in states {
            x.push(raw.get::<f64>("initial", s)?.ok_or_else(|| ConfigError::invalid(s, "initial state incomplete"))?);
        }
        Some(x)
    };

    let tolerances = Tolerances {
        rtol: raw.positive("tolerances", "rtol", 1e-8)?,
        atol: raw.positive("tolerances", "atol", 1e-10)?,
        newton: raw.positive("tolerances", "newton", 1e-10)?,
    };
    let output = OutputConfig { dir: raw.or("output", "dir", "out".to_string())?, prefix: raw.get("output", "prefix")? };

    let simulate = SimulateConfig {
        t_start: raw.or("simulate", "t_start", 0.0)?,
        t_end: raw.or("simulate", "t_end", 100.0)?,
        samples: raw.or("simulate", "samples", 1001)?,
    };
    if simulate.t_end <= simulate.t_start {
        return Err(ConfigError::invalid("t_end", "must exceed t_start"));
    }

    let driver = parse_driver(&mut raw)?;
    if let Some(d) = &driver {
        if !names.contains(&d.target()) {
            return Err(ConfigError::invalid("target", format!("'{}' is not a parameter of {model}", d.target())));
        }
    }

    let dflt = qsbif_core::continuation::StepPolicy::default();
    let continuation = ContinuationConfig {
        parameter: raw.get("continuation", "parameter")?,
        range: range(&mut raw, "continuation", "min", "max")?,
        second: raw.get("continuation", "second")?,
        second_range: range(&mut raw, "continuation", "second_min", "second_max")?,
        direction: raw.or("continuation", "direction", Direction::Forward)?,
        start: raw.or("continuation", "start", Start::Index(0))?,
        start_value: raw.get("continuation", "start_value")?,
        step_initial: raw.positive("continuation", "step_initial", dflt.initial)?,
        step_min: raw.positive("continuation", "step_min", dflt.min)?,
        step_max: raw.positive("continuation", "step_max", dflt.max)?,
        max_points: raw.or("continuation", "max_points", dflt.max_points)?,
        stop_on: raw.get::<KindList>("continuation", "stop_on")?.map(|k| k.0).unwrap_or_default(),
    };
    for key in ["parameter", "second"] {
        let v = if key == "parameter" { &continuation.parameter } else { &continuation.second };
        if let Some(name) = v {
            if !names.contains(&name.as_str()) {
                return Err(ConfigError::invalid(key, format!("'{name}' is not a parameter of {model}")));
            }
        }
    }
    if continuation.step_min > continuation.step_max {
        return Err(ConfigError::invalid("step_min", "exceeds step_max"));
    }

    let cyc = qsbif_core::continuation::CycleOptions::default();
    let cycles = CyclesConfig {
        segments: raw.or("cycles", "segments", cyc.segments)?,
        t_hom: raw.positive("cycles", "t_hom", cyc.t_hom)?,
        start_amplitude: raw.positive("cycles", "start_amplitude", cyc.start_amplitude)?,
        max_points: raw.or("cycles", "max_points", qsbif_core::continuation::cycle_policy().max_points)?,
        hopf: raw.or("cycles", "hopf", Start::All)?,
        secondary: raw.list("cycles", "secondary")?,
    };
    if cycles.segments < 2 {
        return Err(ConfigError::invalid("segments", "must be at least 2"));
    }

    let ly = qsbif_core::chaos::LyapunovOptions::default();
    let lyapunov = LyapunovConfig {
        horizon: raw.positive("lyapunov", "horizon", ly.horizon)?,
        renorm_interval: raw.positive("lyapunov", "renorm_interval", ly.renorm_interval)?,
        transient_fraction: raw.or("lyapunov", "transient_fraction", ly.transient_fraction)?,
        escape_bound: raw.positive("lyapunov", "escape_bound", ly.escape_bound)?,
    };
    if !(0.0..1.0).contains(&lyapunov.transient_fraction) {
        return Err(ConfigError::invalid("transient_fraction", "must lie in [0, 1)"));
    }

    let grid = GridConfig { x: axis(&mut raw, "x")?, y: axis(&mut raw, "y")? };
    for a in [&grid.x, &grid.y].into_iter().flatten() {
        if !names.contains(&a.name.as_str()) {
            return Err(ConfigError::invalid("scan", format!("'{}' is not a parameter of {model}", a.name)));
        }
    }

    let sweep = SweepConfig {
        kind: raw.get("sweep", "kind")?,
        parameter: raw.get("sweep", "parameter")?,
        low: raw.get("sweep", "low")?,
        high: raw.get("sweep", "high")?,
        t_end: raw.positive("sweep", "t_end", 2000.0)?,
        samples: raw.or("sweep", "samples", 2001)?,
        witness_samples: raw.or("sweep", "witness_samples", 2001)?,
        component: raw.get("sweep", "component")?,
        offset: raw.get("sweep", "offset")?,
        amplitude: raw.get("sweep", "amplitude")?,
        omega: raw.get("sweep", "omega")?,
        phase: raw.get("sweep", "phase")?,
        block: raw.positive("sweep", "block", 20.0)?,
        threshold: raw.positive("sweep", "threshold", 0.25)?,
        envelope_samples: raw.or("sweep", "envelope_samples", 41)?,
    };

    raw.finish()?;

    Ok(RunConfig {
        command,
        model,
        seed,
        threads,
        params,
        initial,
        tolerances,
        output,
        simulate,
        driver,
        continuation,
        cycles,
        lyapunov,
        grid,
        sweep,
    })
}

fn parse_driver(raw: &mut Raw) -> Result<Option<DriverConfig>, ConfigError> {
    let Some(kind) = raw.get::<String>("driver", "kind")? else {
        return Ok(None);
    };
    let target: String = raw.get("driver", "target")?.ok_or_else(|| ConfigError::invalid("target", "driver needs a target"))?;
    let mut req = |key: &str| -> Result<f64, ConfigError> {
        raw.get::<f64>("driver", key)?.ok_or_else(|| ConfigError::invalid(key, format!("required by a {kind} driver")))
    };
    Ok(Some(match kind.as_str() {
        "constant" => DriverConfig::Constant { target, value: req("value")? },
        "ramp" => {
            let d = DriverConfig::Ramp { target, start: req("start")?, end: req("end")?, t_start: req("t_start")?, t_end: req("t_end")? };
            if let DriverConfig::Ramp { t_start, t_end, .. } = d {
                if t_end <= t_start {
                    return Err(ConfigError::invalid("t_end", "must exceed t_start"));
                }
            }
            d
        }
        "sinusoidal" => DriverConfig::Sinusoidal {
            target,
            offset: req("offset")?,
            amplitude: req("amplitude")?,
            omega: req("omega")?,
            phase: req("phase")?,
        },
        other => return Err(ConfigError::invalid("kind", format!("unknown driver '{other}'"))),
    }))
}

impl RunConfig {
    pub fn param_names(&self) -> &'static [&'static str] {
        field(&self.model).expect("validated model").param_names()
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        field(&self.model).expect("validated model").state_names()
    }

    /// Command-specific requirements.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.continuation;
        let need = |ok: bool, key: &str, why: &str| if ok { Ok(()) } else { Err(ConfigError::invalid(key, why.to_string())) };
        match self.command.as_str() {
            "simulate" => need(self.initial.is_some(), "initial", "simulate needs an [initial] state")?,
            "continue" | "cycles" => {
                need(c.parameter.is_some(), "parameter", "missing in [continuation]")?;
                need(c.range.is_some(), "min", "continuation range (min, max) missing")?;
                if self.command == "cycles" && !self.cycles.secondary.is_empty() {
                    need(c.second.is_some(), "second", "a HOM-proxy sweep needs [continuation] second")?;
                }
            }
            "fold-curve" | "hopf-curve" => {
                need(c.parameter.is_some(), "parameter", "missing in [continuation]")?;
                need(c.second.is_some(), "second", "missing in [continuation]")?;
                need(c.range.is_some(), "min", "continuation range (min, max) missing")?;
                need(c.second_range.is_some(), "second_min", "second range (second_min, second_max) missing")?;
                need(c.parameter != c.second, "second", "must differ from parameter")?;
            }
            "lyap" => need(self.initial.is_some() || self.seed.is_some(), "seed", "lyap without an [initial] state is randomized and needs a seed")?,
            "scan" => {
                need(self.seed.is_some(), "seed", "scan is randomized and needs a seed")?;
                need(self.grid.x.is_some() && self.grid.y.is_some(), "scan", "scan needs x and y axes")?;
            }
            "sweep" => self.validate_sweep()?,
            _ => {}
        }
        Ok(())
    }

    fn validate_sweep(&self) -> Result<(), ConfigError> {
        let s = &self.sweep;
        let kind = s.kind.ok_or_else(|| ConfigError::invalid("kind", "missing in [sweep]"))?;
        let names = self.param_names();
        let need = |ok: bool, key: &str, why: &str| if ok { Ok(()) } else { Err(ConfigError::invalid(key, why.to_string())) };
        match kind {
            SweepKind::Hysteresis | SweepKind::Forcing => {
                need(self.initial.is_some(), "initial", "sweep needs an [initial] state")?;
                let p = s.parameter.as_deref().ok_or_else(|| ConfigError::invalid("parameter", "missing in [sweep]"))?;
                need(names.contains(&p), "parameter", "not a parameter of the model")?;
                if let Some(c) = &s.component {
                    need(self.state_names().contains(&c.as_str()), "component", "not a state of the model")?;
                }
                need(s.samples >= 2, "samples", "must be at least 2")?;
                if kind == SweepKind::Hysteresis {
                    need(matches!((s.low, s.high), (Some(a), Some(b)) if a < b), "high", "hysteresis needs low < high")?;
                    need(s.witness_samples >= 2, "witness_samples", "must be at least 2")?;
                } else {
                    for (k, v) in [("offset", s.offset), ("amplitude", s.amplitude), ("omega", s.omega), ("phase", s.phase)] {
                        need(v.is_some(), k, "required by a forcing sweep")?;
                    }
                    need(s.envelope_samples >= 2, "envelope_samples", "must be at least 2")?;
                }
            }
            SweepKind::Regions => {
                need(self.model.starts_with("2d"), "model", "region maps are defined for the reduced model")?;
                need(self.grid.x.is_some() && self.grid.y.is_some(), "scan", "regions need x and y axes")?;
            }
        }
        Ok(())
    }

    /// Canonical text: every value spelled out, so it parses back to an
    /// equal configuration and hashes stably.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "[run]\ncommand = {}\nmodel = {}", self.command, self.model);
        if let Some(seed) = self.seed {
            let _ = writeln!(w, "seed = {seed}");
        }
        let _ = writeln!(w, "threads = {}", self.threads);
        let _ = writeln!(w, "\n[params]");
        for (n, v) in self.param_names().iter().zip(&self.params) {
            let _ = writeln!(w, "{n} = {v}");
        }
        if let Some(x) = &self.initial {
            let _ = writeln!(w, "\n[initial]");
            for (n, v) in self.state_names().iter().zip(x) {
                let _ = writeln!(w, "{n} = {v}");
            }
        }
        let t = &self.tolerances;
        let _ = writeln!(w, "\n[tolerances]\nrtol = {}\natol = {}\nnewton = {}", t.rtol, t.atol, t.newton);
        let _ = writeln!(w, "\n[output]\ndir = {}", self.output.dir);
        if let Some(p) = &self.output.prefix {
            let _ = writeln!(w, "prefix = {p}");
        }
        let sm = &self.simulate;
        let _ = writeln!(w, "\n[simulate]\nt_start = {}\nt_end = {}\nsamples = {}", sm.t_start, sm.t_end, sm.samples);
        if let Some(d) = &self.driver {
            let _ = writeln!(w, "\n[driver]");
            match d {
                DriverConfig::Constant { target, value } => {
                    let _ = writeln!(w, "kind = constant\ntarget = {target}\nvalue = {value}");
                }
                DriverConfig::Ramp { target, start, end, t_start, t_end } => {
                    let _ = writeln!(w, "kind = ramp\ntarget = {target}\nstart = {start}\nend = {end}\nt_start = {t_start}\nt_end = {t_end}");
                }
                DriverConfig::Sinusoidal { target, offset, amplitude, omega, phase } => {
                    let _ = writeln!(
                        w,
                        "kind = sinusoidal\ntarget = {target}\noffset = {offset}\namplitude = {amplitude}\nomega = {omega}\nphase = {phase}"
                    );
                }
            }
        }
        let c = &self.continuation;
        let _ = writeln!(w, "\n[continuation]");
        if let Some(p) = &c.parameter {
            let _ = writeln!(w, "parameter = {p}");
        }
        if let Some((a, b)) = c.range {
            let _ = writeln!(w, "min = {a}\nmax = {b}");
        }
        if let Some(p) = &c.second {
            let _ = writeln!(w, "second = {p}");
        }
        if let Some((a, b)) = c.second_range {
            let _ = writeln!(w, "second_min = {a}\nsecond_max = {b}");
        }
        let dir = match c.direction {
            Direction::Forward => "1",
            Direction::Backward => "-1",
            Direction::Both => "both",
        };
        let _ = writeln!(w, "direction = {dir}\nstart = {}", start_text(c.start));
        if let Some(v) = c.start_value {
            let _ = writeln!(w, "start_value = {v}");
        }
        let _ = writeln!(
            w,
            "step_initial = {}\nstep_min = {}\nstep_max = {}\nmax_points = {}",
            c.step_initial, c.step_min, c.step_max, c.max_points
        );
        if !c.stop_on.is_empty() {
            let kinds: Vec<&str> = c.stop_on.iter().map(|k| k.label()).collect();
            let _ = writeln!(w, "stop_on = {}", kinds.join(", "));
        }
        let cy = &self.cycles;
        let _ = writeln!(
            w,
            "\n[cycles]\nsegments = {}\nt_hom = {}\nstart_amplitude = {}\nmax_points = {}\nhopf = {}",
            cy.segments,
            cy.t_hom,
            cy.start_amplitude,
            cy.max_points,
            start_text(cy.hopf)
        );
        if !cy.secondary.is_empty() {
            let v: Vec<String> = cy.secondary.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(w, "secondary = {}", v.join(", "));
        }
        let l = &self.lyapunov;
        let _ = writeln!(
            w,
            "\n[lyapunov]\nhorizon = {}\nrenorm_interval = {}\ntransient_fraction = {}\nescape_bound = {}",
            l.horizon, l.renorm_interval, l.transient_fraction, l.escape_bound
        );
        if self.grid.x.is_some() || self.grid.y.is_some() {
            let _ = writeln!(w, "\n[scan]");
            for (p, a) in [("x", &self.grid.x), ("y", &self.grid.y)] {
                if let Some(a) = a {
                    let _ = writeln!(w, "{p} = {}\n{p}_min = {}\n{p}_max = {}\n{p}_count = {}", a.name, a.lo, a.hi, a.count);
                }
            }
        }
        let sw = &self.sweep;
        let _ = writeln!(w, "\n[sweep]");
        if let Some(k) = sw.kind {
            let _ = writeln!(w, "kind = {}", k.label());
        }
        if let Some(p) = &sw.parameter {
            let _ = writeln!(w, "parameter = {p}");
        }
        if let Some(c) = &sw.component {
            let _ = writeln!(w, "component = {c}");
        }
        for (k, v) in [
            ("low", sw.low),
            ("high", sw.high),
            ("offset", sw.offset),
            ("amplitude", sw.amplitude),
            ("omega", sw.omega),
            ("phase", sw.phase),
        ] {
            if let Some(v) = v {
                let _ = writeln!(w, "{k} = {v}");
            }
        }
        let _ = writeln!(
            w,
            "t_end = {}\nsamples = {}\nwitness_samples = {}\nblock = {}\nthreshold = {}\nenvelope_samples = {}",
            sw.t_end, sw.samples, sw.witness_samples, sw.block, sw.threshold, sw.envelope_samples
        );
        s
    }
}

fn start_text(s: Start) -> String {
    match s {
        Start::All => "all".into(),
        Start::Index(i) => i.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[run]\ncommand = simulate\nmodel = 2d\n\n[params]\nK = 0.043\nb = 1.4\na = 0.042\ne = 3\n\n[initial]\nu = 0.5\nv = 0.5\n";

    #[test]
    fn minimal_simulate_config() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.params, vec![0.043, 1.4, 0.042, 3.0]);
        assert_eq!(c.initial, Some(vec![0.5, 0.5]));
        assert_eq!(c.tolerances.rtol, 1e-8);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let text = format!("{MINIMAL}\n[simulate]\nt_end = 10\nbogus = 1\n");
        let e = parse_config(&text).unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { ref key, line: 17, .. } if key == "bogus"), "{e}");
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let text = MINIMAL.replace("b = 1.4\n", "b = 1.4\nb = 1.5\n");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e, ConfigError::Duplicate { section: "params".into(), key: "b".into(), first: 7, second: 8 });
        assert!(e.to_string().contains("'b'") && e.to_string().contains("7") && e.to_string().contains("8"));
    }

    #[test]
    fn scan_without_seed_is_rejected() {
        let text = "[run]\ncommand = scan\nmodel = 3d-desing\n[params]\nbase = default\n[scan]\nx = k2\nx_min = 1.8\nx_max = 2.6\nx_count = 4\ny = gamma\ny_min = 5\ny_max = 35\ny_count = 4\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.key(), Some("seed"));
        assert!(parse_config(&text.replace("model = 3d-desing", "model = 3d-desing\nseed = 1")).is_ok());
    }

    #[test]
    fn missing_parameter_and_bad_tolerance() {
        let e = parse_config(&MINIMAL.replace("e = 3\n", "")).unwrap_err();
        assert_eq!(e.key(), Some("e"));
        let e = parse_config(&format!("{MINIMAL}[tolerances]\nrtol = -1\n")).unwrap_err();
        assert_eq!(e.key(), Some("rtol"));
    }

    #[test]
    fn comments_and_unknown_sections() {
        let c = parse_config(&format!("# header\n{MINIMAL}; trailing\n")).unwrap();
        assert_eq!(c.command, "simulate");
        let e = parse_config(&format!("{MINIMAL}[plots]\n")).unwrap_err();
        assert!(matches!(e, ConfigError::UnknownSection { line: 14, .. }), "{e:?}");
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = parse_config(MINIMAL).unwrap();
        let again = parse_config(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_text(), again.to_text());
    }
}
