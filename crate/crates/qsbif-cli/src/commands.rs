//! Command strategies, looked up by name in a registry.

use std::collections::BTreeMap;
use std::sync::Arc;

use qsbif_core::chaos::{
    lyapunov_cell, lyapunov_scan, lyapunov_spectrum, shilnikov_classify, LyapunovEstimate, LyapunovOptions,
    ScanAxis, ShilnikovReport,
};
use qsbif_core::continuation::{
    classify_region, continue_cycle, continue_equilibrium, continue_fold, continue_hopf, cycle_policy,
    hom_proxy_sweep, hopf_points, params_at, Branch, CycleOptions, HomSweep, Region, SpecialKind, SpecialPoint,
    StepPolicy,
};
use qsbif_core::equilibria::{find_equilibria, EquilibriumRecord};
use qsbif_core::models::{field, ParameterSet2D, VectorField};
use qsbif_core::solve::{
    envelope_windows, hysteresis_witness, integrate, integrate_driven, ConstantDriver, Driver, DriverInfo,
    EnvelopeWindow, RampDriver, SinusoidalDriver, Stats, Trajectory,
};
use serde::{Deserialize, Serialize};

use crate::config::{Axis, DriverConfig, RunConfig, Start, SweepKind};
use crate::error::CliError;
use crate::output::{Artifacts, BranchTable, Table, TrajectoryTable};

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub field: Arc<dyn VectorField>,
    pub verbose: bool,
    /// Worker count for `scan`, already capped by QSBIF_THREADS.
    pub threads: usize,
}

impl Context<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("qsbif: {}", msg.as_ref());
        }
    }

    fn prefix(&self) -> String {
        self.cfg.output.prefix.clone().unwrap_or_else(|| self.cfg.command.clone())
    }

    fn param(&self, name: &str) -> Result<usize, CliError> {
        self.field.param_index(name).map_err(|e| CliError::Config(crate::error::ConfigError::invalid(name, e.to_string())))
    }

    fn policy(&self) -> StepPolicy {
        let c = &self.cfg.continuation;
        StepPolicy {
            initial: c.step_initial,
            min: c.step_min,
            max: c.step_max,
            max_points: c.max_points,
            tol: self.cfg.tolerances.newton,
            ..StepPolicy::default()
        }
    }

    fn cycle_options(&self) -> CycleOptions {
        let c = &self.cfg.cycles;
        CycleOptions {
            segments: c.segments,
            t_hom: c.t_hom,
            start_amplitude: c.start_amplitude,
            ..CycleOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Complete,
    /// Some results were produced, others failed.
    Partial(Vec<String>),
}

pub trait Command: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError>;
}

#[derive(Default)]
pub struct Registry {
    commands: BTreeMap<&'static str, Box<dyn Command>>,
}

impl Registry {
    pub fn builtin() -> Self {
        let mut r = Registry::default();
        r.register(Box::new(Simulate));
        r.register(Box::new(Equilibria));
        r.register(Box::new(Continue));
        r.register(Box::new(CodimTwo { kind: SpecialKind::LP }));
        r.register(Box::new(CodimTwo { kind: SpecialKind::H }));
        r.register(Box::new(Cycles));
        r.register(Box::new(Lyap));
        r.register(Box::new(Scan));
        r.register(Box::new(Sweep));
        r
    }

    pub fn register(&mut self, c: Box<dyn Command>) {
        self.commands.insert(c.name(), c);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Command> {
        self.commands.get(name).map(|c| c.as_ref())
    }

    pub fn list(&self) -> Vec<(&'static str, &'static str)> {
        self.commands.values().map(|c| (c.name(), c.about())).collect()
    }
}

// ---------------------------------------------------------------------------
// Shared pieces

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialSummary {
    pub kind: SpecialKind,
    pub params: Vec<f64>,
    pub state: Vec<f64>,
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl From<&SpecialPoint> for SpecialSummary {
    fn from(s: &SpecialPoint) -> Self {
        SpecialSummary {
            kind: s.kind,
            params: s.params.clone(),
            state: s.state.clone(),
            values: s.diagnostics.values.clone(),
            notes: s.diagnostics.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub file: String,
    pub kind: String,
    pub parameters: Vec<String>,
    pub points: usize,
    pub termination: String,
    pub special: Vec<SpecialSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub branches: Vec<BranchSummary>,
    pub failures: Vec<String>,
}

fn emit_branch(out: &mut Artifacts, file: String, br: &Branch, report: &mut BranchReport) {
    let table = BranchTable::from_branch(br);
    report.branches.push(BranchSummary {
        file: file.clone(),
        kind: br.kind.clone(),
        parameters: br.param_names.clone(),
        points: br.points.len(),
        termination: table.termination.clone(),
        special: br.special.iter().map(SpecialSummary::from).collect(),
    });
    out.csv(&file, "branch", table.body());
}

fn finish(report: &BranchReport, out: &mut Artifacts, name: &str) -> Result<Status, CliError> {
    out.json(name, "summary", report)?;
    if report.branches.is_empty() {
        return Err(CliError::Numerical(format!("no branch could be computed: {}", report.failures.join("; "))));
    }
    Ok(if report.failures.is_empty() { Status::Complete } else { Status::Partial(report.failures.clone()) })
}

fn pick<T>(items: Vec<T>, start: Start, what: &str) -> Result<Vec<T>, CliError> {
    match start {
        Start::All => Ok(items),
        Start::Index(i) => {
            let n = items.len();
            items
                .into_iter()
                .nth(i)
                .map(|x| vec![x])
                .ok_or_else(|| CliError::Numerical(format!("{what} #{i} requested but only {n} found")))
        }
    }
}

/// Starting states: the configured initial state, or the interior
/// equilibria at the configured parameters.
fn starts(ctx: &Context) -> Result<Vec<Vec<f64>>, CliError> {
    if let Some(x) = &ctx.cfg.initial {
        return Ok(vec![x.clone()]);
    }
    let set = find_equilibria(ctx.field.as_ref(), &ctx.cfg.params).map_err(CliError::numerical)?;
    let xs: Vec<Vec<f64>> = set.interior().map(|r| r.state.clone()).collect();
    if xs.is_empty() {
        return Err(CliError::Numerical("no interior equilibrium to start from".into()));
    }
    pick(xs, ctx.cfg.continuation.start, "equilibrium")
}

fn dir_label(sign: f64) -> &'static str {
    if sign > 0.0 {
        "fwd"
    } else {
        "bwd"
    }
}

fn make_driver(d: &DriverConfig) -> Box<dyn Driver> {
    match d.clone() {
        DriverConfig::Constant { target, value } => Box::new(ConstantDriver { target, value }),
        DriverConfig::Ramp { target, start, end, t_start, t_end } => Box::new(RampDriver { target, start, end, t_start, t_end }),
        DriverConfig::Sinusoidal { target, offset, amplitude, omega, phase } => {
            Box::new(SinusoidalDriver { target, offset, amplitude, omega, phase })
        }
    }
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub file: String,
    pub t_span: (f64, f64),
    pub final_state: Vec<f64>,
    pub stats: Stats,
    pub driver: Option<DriverInfo>,
}

struct Simulate;

impl Command for Simulate {
    fn name(&self) -> &'static str {
        "simulate"
    }
    fn about(&self) -> &'static str {
        "integrate one trajectory, optionally with a driven parameter"
    }
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let c = ctx.cfg;
        let x0 = c.initial.clone().expect("validated");
        let span = (c.simulate.t_start, c.simulate.t_end);
        let (rtol, atol) = (c.tolerances.rtol, c.tolerances.atol);
        let tr = match &c.driver {
            Some(d) => integrate_driven(ctx.field.as_ref(), &x0, &c.params, make_driver(d).as_ref(), span, rtol, atol),
            None => integrate(ctx.field.as_ref(), &x0, &c.params, span, rtol, atol),
        }
        .map_err(CliError::numerical)?;
        let file = format!("{}_trajectory.csv", ctx.prefix());
        let table = TrajectoryTable::from_trajectory(&tr, ctx.field.state_names(), c.simulate.samples);
        out.csv(&file, "trajectory", table.body());
        let summary = SimulateSummary {
            file,
            t_span: tr.t_span(),
            final_state: tr.last_state().to_vec(),
            stats: tr.stats,
            driver: tr.driver.clone(),
        };
        out.json(&format!("{}_summary.json", ctx.prefix()), "summary", &summary)?;
        Ok(Status::Complete)
    }
}

// ---------------------------------------------------------------------------
// equilibria

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumEntry {
    pub record: EquilibriumRecord,
    pub shilnikov: Option<ShilnikovReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub params: Vec<f64>,
    pub equilibria: Vec<EquilibriumEntry>,
    pub tangency: bool,
    pub truncated: bool,
    pub region: Option<Region>,
}

struct Equilibria;

impl Command for Equilibria {
    fn name(&self) -> &'static str {
        "equilibria"
    }
    fn about(&self) -> &'static str {
        "all equilibria with eigenvalues, stability and saddle type"
    }
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let p = &ctx.cfg.params;
        let set = find_equilibria(ctx.field.as_ref(), p).map_err(CliError::numerical)?;
        let region = if ctx.field.dim() == 2 { ParameterSet2D::from_slice(p).ok().map(|q| classify_region(&q)) } else { None };
        let report = EquilibriumReport {
            params: p.clone(),
            equilibria: set
                .records
                .iter()
                .map(|r| EquilibriumEntry { record: r.clone(), shilnikov: shilnikov_classify(r).ok() })
                .collect(),
            tangency: set.tangency,
            truncated: set.truncated,
            region,
        };
        out.json(&format!("{}.json", ctx.prefix()), "equilibria", &report)?;
        Ok(if set.truncated { Status::Partial(vec!["root window may truncate equilibria".into()]) } else { Status::Complete })
    }
}

// ---------------------------------------------------------------------------
// continue

struct Continue;

impl Command for Continue {
    fn name(&self) -> &'static str {
        "continue"
    }
    fn about(&self) -> &'static str {
        "equilibrium branches in one parameter with LP and H detection"
    }
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let c = &ctx.cfg.continuation;
        let name = c.parameter.as_deref().expect("validated");
        ctx.param(name)?;
        let mut report = BranchReport { branches: Vec::new(), failures: Vec::new() };
        for (k, x0) in starts(ctx)?.into_iter().enumerate() {
            for sign in c.direction.signs() {
                ctx.log(format!("equilibrium branch {k} ({})", dir_label(sign)));
                match continue_equilibrium(ctx.field.as_ref(), &ctx.cfg.params, name, &x0, sign, c.range.expect("validated"), ctx.policy()) {
                    Ok(br) => emit_branch(out, format!("{}_{k}_{}.csv", ctx.prefix(), dir_label(sign)), &br, &mut report),
                    Err(e) => report.failures.push(format!("start {k} {}: {e}", dir_label(sign))),
                }
            }
        }
        finish(&report, out, &format!("{}_summary.json", ctx.prefix()))
    }
}

// ---------------------------------------------------------------------------
// fold-curve / hopf-curve

struct CodimTwo {
    kind: SpecialKind,
}

/// LP or H points on the one-parameter branches through the start states,
/// deduplicated and ordered by parameter value.
fn seed_points(ctx: &Context, kind: SpecialKind) -> Result<(Vec<SpecialPoint>, Vec<String>), CliError> {
    let c = &ctx.cfg.continuation;
    let name = c.parameter.as_deref().expect("validated");
    let mut found: Vec<SpecialPoint> = Vec::new();
    let mut failures = Vec::new();
    for x0 in starts(ctx)? {
        for sign in [1.0, -1.0] {
            match continue_equilibrium(ctx.field.as_ref(), &ctx.cfg.params, name, &x0, sign, c.range.expect("validated"), ctx.policy()) {
                Ok(br) => {
                    for s in br.special_of(kind) {
                        if !found.iter().any(|f| (f.params[0] - s.params[0]).abs() < 1e-6 * (1.0 + s.params[0].abs())) {
                            found.push(s.clone());
                        }
                    }
                }
                Err(e) => failures.push(e.to_string()),
            }
        }
    }
    found.sort_by(|a, b| a.params[0].total_cmp(&b.params[0]));
    Ok((found, failures))
}

impl Command for CodimTwo {
    fn name(&self) -> &'static str {
        if self.kind == SpecialKind::LP {
            "fold-curve"
        } else {
            "hopf-curve"
        }
    }
    fn about(&self) -> &'static str {
        if self.kind == SpecialKind::LP {
            "fold locus in two parameters from an LP point, with CP and BT detection"
        } else {
            "Hopf locus in two parameters from an H point, with BT, GH and ZH detection"
        }
    }
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let c = &ctx.cfg.continuation;
        let active = [c.parameter.as_deref().expect("validated"), c.second.as_deref().expect("validated")];
        for a in active {
            ctx.param(a)?;
        }
        let (mut seeds, mut failures) = seed_points(ctx, self.kind)?;
        if seeds.is_empty() {
            let (lo, hi) = c.range.expect("validated");
            return Err(CliError::Numerical(format!("no {} point found in {} over [{lo}, {hi}]", self.kind.label(), active[0])));
        }
        if let Some(v) = c.start_value {
            seeds.sort_by(|a, b| (a.params[0] - v).abs().total_cmp(&(b.params[0] - v).abs()));
            seeds.truncate(1);
        } else {
            seeds = pick(seeds, c.start, self.kind.label())?;
        }
        let ranges = [c.range.expect("validated"), c.second_range.expect("validated")];
        let mut report = BranchReport { branches: Vec::new(), failures: Vec::new() };
        report.failures.append(&mut failures);
        for (k, sp) in seeds.iter().enumerate() {
            let p = params_at(ctx.field.as_ref(), &ctx.cfg.params, &active[..1], sp).map_err(CliError::numerical)?;
            for sign in c.direction.signs() {
                ctx.log(format!("{} curve from {} = {} ({})", self.kind.label(), active[0], sp.params[0], dir_label(sign)));
                let f = ctx.field.as_ref();
                let res = if self.kind == SpecialKind::LP {
                    continue_fold(f, &p, active, &sp.state, sign, ranges, ctx.policy(), c.stop_on.clone())
                } else {
                    continue_hopf(f, &p, active, &sp.state, sign, ranges, ctx.policy(), c.stop_on.clone())
                };
                match res {
                    Ok(br) => emit_branch(out, format!("{}_{k}_{}.csv", ctx.prefix(), dir_label(sign)), &br, &mut report),
                    Err(e) => report.failures.push(format!("seed {k} {}: {e}", dir_label(sign))),
                }
            }
        }
        finish(&report, out, &format!("{}_summary.json", ctx.prefix()))
    }
}

// ---------------------------------------------------------------------------
// cycles

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomReport {
    pub parameters: [String; 2],
    pub sweep: HomSweep,
    /// Secondary values at which no HOM-proxy point was reached.
    pub missing: Vec<f64>,
}

struct Cycles;

impl Command for Cycles {
    fn name(&self) -> &'static str {
        "cycles"
    }
    fn about(&self) -> &'static str {
        "limit cycles from Hopf points by shooting; HOM-proxy loci over a second parameter"
    }
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let c = &ctx.cfg.continuation;
        let name = c.parameter.as_deref().expect("validated");
        ctx.param(name)?;
        let range = c.range.expect("validated");
        let f = ctx.field.as_ref();
        let mut policy = cycle_policy();
        policy.max_points = ctx.cfg.cycles.max_points;

        if !ctx.cfg.cycles.secondary.is_empty() {
            let second = c.second.as_deref().expect("validated");
            ctx.param(second)?;
            ctx.log(format!("HOM-proxy sweep over {} values of {second}", ctx.cfg.cycles.secondary.len()));
            let sweep = hom_proxy_sweep(f, &ctx.cfg.params, [name, second], range, &ctx.cfg.cycles.secondary, ctx.cycle_options())
                .map_err(CliError::numerical)?;
            let missing: Vec<f64> =
                ctx.cfg.cycles.secondary.iter().copied().filter(|v| !sweep.entries.iter().any(|e| e.params[1] == *v)).collect();
            let table = Table {
                columns: vec![name.into(), second.into(), "period".into(), "saddle_kind".into(), "saddle_index".into()],
                rows: sweep
                    .entries
                    .iter()
                    .map(|e| {
                        vec![
                            Table::cell(e.params[0]),
                            Table::cell(e.params[1]),
                            Table::cell(e.period),
                            e.saddle_kind.map(|k| serde_json::to_value(k).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()).unwrap_or_default(),
                            Table::cell(e.saddle_index.unwrap_or(f64::NAN)),
                        ]
                    })
                    .collect(),
            };
            out.csv(&format!("{}_hom.csv", ctx.prefix()), "hom-locus", table.body());
            let report = HomReport { parameters: [name.into(), second.into()], sweep, missing: missing.clone() };
            out.json(&format!("{}_hom.json", ctx.prefix()), "hom-locus", &report)?;
            if report.sweep.entries.is_empty() {
                return Err(CliError::Numerical("no HOM-proxy point found at any secondary value".into()));
            }
            return Ok(if missing.is_empty() {
                Status::Complete
            } else {
                Status::Partial(missing.iter().map(|v| format!("no HOM-proxy at {second} = {v}")).collect())
            });
        }

        let hs = hopf_points(f, &ctx.cfg.params, name, range).map_err(CliError::numerical)?;
        if hs.is_empty() {
            return Err(CliError::Numerical(format!("no Hopf point in {name} over [{}, {}]", range.0, range.1)));
        }
        let hs = pick(hs, ctx.cfg.cycles.hopf, "Hopf point")?;
        let mut report = BranchReport { branches: Vec::new(), failures: Vec::new() };
        let mut stop = c.stop_on.clone();
        if stop.is_empty() {
            stop.push(SpecialKind::HomProxy);
        }
        for (k, h) in hs.iter().enumerate() {
            ctx.log(format!("cycles from H at {name} = {}", h.params[0]));
            let p = params_at(f, &ctx.cfg.params, &[name], h).map_err(CliError::numerical)?;
            match continue_cycle(f, &p, name, &h.state, range, ctx.cycle_options(), policy, stop.clone()) {
                Ok(br) => emit_branch(out, format!("{}_{k}.csv", ctx.prefix()), &br, &mut report),
                Err(e) => report.failures.push(format!("Hopf {k}: {e}")),
            }
        }
        finish(&report, out, &format!("{}_summary.json", ctx.prefix()))
    }
}

// ---------------------------------------------------------------------------
// lyap

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapReport {
    pub params: Vec<f64>,
    pub x0: Vec<f64>,
    pub estimate: LyapunovEstimate,
    pub sum_identity_error: f64,
}

fn lyap_options(cfg: &RunConfig) -> LyapunovOptions {
    let l = &cfg.lyapunov;
    LyapunovOptions {
        horizon: l.horizon,
        renorm_interval: l.renorm_interval,
        transient_fraction: l.transient_fraction,
        escape_bound: l.escape_bound,
        rtol: cfg.tolerances.rtol,
        atol: cfg.tolerances.atol,
    }
}

struct Lyap;

impl Command for Lyap {
    fn name(&self) -> &'static str {
        "lyap"
    }
    fn about(&self) -> &'static str {
        "Lyapunov spectrum of one orbit"
    }
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let cfg = ctx.cfg;
        let opts = lyap_options(cfg);
        let f = ctx.field.as_ref();
        let x0 = match &cfg.initial {
            Some(x) => x.clone(),
            None => {
                // A one-cell scan at the configured values picks the seeded
                // start near the saddle.
                let names = f.param_names();
                let ax = ScanAxis::new(names[0], cfg.params[0], cfg.params[0], 1);
                let ay = ScanAxis::new(names[1], cfg.params[1], cfg.params[1], 1);
                let cell = lyapunov_cell(f, &cfg.params, (&ax, &ay), (0, 0), cfg.seed.expect("validated"), &opts);
                cell.x0
            }
        };
        let est = lyapunov_spectrum(f, &cfg.params, &x0, &opts).map_err(CliError::numerical)?;
        let report = LyapReport { params: cfg.params.clone(), x0, sum_identity_error: est.sum_identity_error(), estimate: est };
        out.json(&format!("{}.json", ctx.prefix()), "lyapunov", &report)?;
        Ok(if report.estimate.escaped { Status::Partial(vec!["orbit escaped".into()]) } else { Status::Complete })
    }
}

// ---------------------------------------------------------------------------
// scan

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub file: String,
    pub axes: [String; 2],
    pub cells: usize,
    pub escaped: usize,
    pub failed: usize,
    /// (i, j, exponent) of the largest exponent among bounded cells.
    pub max_exponent: Option<(usize, usize, f64)>,
    pub threads: usize,
}

fn scan_axis(a: &Axis) -> ScanAxis {
    ScanAxis::new(&a.name, a.lo, a.hi, a.count)
}

struct Scan;

impl Command for Scan {
    fn name(&self) -> &'static str {
        "scan"
    }
    fn about(&self) -> &'static str {
        "largest Lyapunov exponents over a two-parameter grid"
    }
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let cfg = ctx.cfg;
        let (ax, ay) = (scan_axis(cfg.grid.x.as_ref().expect("validated")), scan_axis(cfg.grid.y.as_ref().expect("validated")));
        ctx.log(format!("scan {}x{} on {} threads", ax.count, ay.count, ctx.threads));
        let cells = lyapunov_scan(ctx.field.as_ref(), &cfg.params, (&ax, &ay), cfg.seed.expect("validated"), &lyap_options(cfg), ctx.threads)
            .map_err(CliError::numerical)?;
        let n = ctx.field.dim();
        let mut columns = vec!["i".to_string(), "j".to_string(), ax.name.clone(), ay.name.clone()];
        columns.extend(ctx.field.state_names().iter().map(|s| format!("{s}0")));
        columns.extend((1..=n).map(|k| format!("lambda{k}")));
        columns.extend(["mean_divergence".to_string(), "escaped".to_string(), "error".to_string()]);
        let rows = cells
            .iter()
            .map(|c| {
                let mut r = vec![c.i.to_string(), c.j.to_string(), Table::cell(c.params[0]), Table::cell(c.params[1])];
                r.extend((0..n).map(|k| Table::cell(c.x0.get(k).copied().unwrap_or(f64::NAN))));
                r.extend((0..n).map(|k| Table::cell(c.exponents.get(k).copied().unwrap_or(f64::NAN))));
                r.push(Table::cell(c.mean_divergence));
                r.push(c.escaped.to_string());
                r.push(c.error.clone().unwrap_or_default());
                r
            })
            .collect();
        let file = format!("{}.csv", ctx.prefix());
        out.csv(&file, "scan", Table { columns, rows }.body());
        let failed: Vec<String> = cells.iter().filter_map(|c| c.error.as_ref().map(|e| format!("cell ({}, {}): {e}", c.i, c.j))).collect();
        let summary = ScanSummary {
            file,
            axes: [ax.name.clone(), ay.name.clone()],
            cells: cells.len(),
            escaped: cells.iter().filter(|c| c.escaped).count(),
            failed: failed.len(),
            max_exponent: cells
                .iter()
                .filter(|c| c.error.is_none() && !c.escaped && c.max_exponent().is_finite())
                .max_by(|a, b| a.max_exponent().total_cmp(&b.max_exponent()))
                .map(|c| (c.i, c.j, c.max_exponent())),
            threads: ctx.threads,
        };
        out.json(&format!("{}_summary.json", ctx.prefix()), "summary", &summary)?;
        if failed.len() == cells.len() {
            return Err(CliError::Numerical("every scan cell failed".into()));
        }
        Ok(if failed.is_empty() { Status::Complete } else { Status::Partial(failed) })
    }
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HysteresisSummary {
    pub parameter: String,
    pub component: String,
    pub low: f64,
    pub high: f64,
    pub t_end: f64,
    pub forward: String,
    pub reverse: String,
    /// Sup-norm distance of the two runs at equal parameter values.
    pub witness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSummary {
    pub parameter: String,
    pub component: String,
    pub file: String,
    pub windows: Vec<EnvelopeWindow>,
    pub alternations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub file: String,
    pub axes: [String; 2],
    pub counts: BTreeMap<String, usize>,
}

struct Sweep;

impl Sweep {
    fn component(ctx: &Context) -> (usize, String) {
        let names = ctx.field.state_names();
        match &ctx.cfg.sweep.component {
            Some(c) => (names.iter().position(|n| n == c).expect("validated"), c.clone()),
            None => (0, names[0].to_string()),
        }
    }

    fn driven(ctx: &Context, d: &dyn Driver) -> Result<Trajectory, CliError> {
        let c = ctx.cfg;
        integrate_driven(
            ctx.field.as_ref(),
            c.initial.as_ref().expect("validated"),
            &c.params,
            d,
            (0.0, c.sweep.t_end),
            c.tolerances.rtol,
            c.tolerances.atol,
        )
        .map_err(CliError::numerical)
    }

    fn hysteresis(ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let s = &ctx.cfg.sweep;
        let target = s.parameter.clone().expect("validated");
        let (low, high) = (s.low.expect("validated"), s.high.expect("validated"));
        let ramp = |start, end| RampDriver { target: target.clone(), start, end, t_start: 0.0, t_end: s.t_end };
        let (fwd, bwd) = (ramp(low, high), ramp(high, low));
        ctx.log("forward ramp");
        let a = Self::driven(ctx, &fwd)?;
        ctx.log("reverse ramp");
        let b = Self::driven(ctx, &bwd)?;
        let (ci, cname) = Self::component(ctx);
        let witness = hysteresis_witness(&a, &fwd, &b, &bwd, ci, s.witness_samples).map_err(CliError::numerical)?;
        let names = ctx.field.state_names();
        let (ff, fr) = (format!("{}_forward.csv", ctx.prefix()), format!("{}_reverse.csv", ctx.prefix()));
        out.csv(&ff, "trajectory", TrajectoryTable::from_trajectory(&a, names, s.samples).body());
        out.csv(&fr, "trajectory", TrajectoryTable::from_trajectory(&b, names, s.samples).body());
        let summary = HysteresisSummary { parameter: target, component: cname, low, high, t_end: s.t_end, forward: ff, reverse: fr, witness };
        out.json(&format!("{}_summary.json", ctx.prefix()), "summary", &summary)?;
        Ok(Status::Complete)
    }

    fn forcing(ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let s = &ctx.cfg.sweep;
        let target = s.parameter.clone().expect("validated");
        let d = SinusoidalDriver {
            target: target.clone(),
            offset: s.offset.expect("validated"),
            amplitude: s.amplitude.expect("validated"),
            omega: s.omega.expect("validated"),
            phase: s.phase.expect("validated"),
        };
        let tr = Self::driven(ctx, &d)?;
        let (ci, cname) = Self::component(ctx);
        let windows = envelope_windows(&tr, ci, s.block, s.envelope_samples, s.threshold);
        let file = format!("{}_trajectory.csv", ctx.prefix());
        out.csv(&file, "trajectory", TrajectoryTable::from_trajectory(&tr, ctx.field.state_names(), s.samples).body());
        let summary = ForcingSummary { parameter: target, component: cname, file, alternations: windows.len().saturating_sub(1), windows };
        out.json(&format!("{}_summary.json", ctx.prefix()), "summary", &summary)?;
        Ok(Status::Complete)
    }

    fn regions(ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        let g = &ctx.cfg.grid;
        let (ax, ay) = (scan_axis(g.x.as_ref().expect("validated")), scan_axis(g.y.as_ref().expect("validated")));
        let (ix, iy) = (ctx.param(&ax.name)?, ctx.param(&ay.name)?);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut rows = Vec::new();
        for i in 0..ax.count {
            for j in 0..ay.count {
                let mut p = ctx.cfg.params.clone();
                p[ix] = ax.value(i);
                p[iy] = ay.value(j);
                let r = ParameterSet2D::from_slice(&p).map(|q| classify_region(&q)).map_err(CliError::numerical)?;
                let label = format!("{r:?}");
                *counts.entry(label.clone()).or_default() += 1;
                rows.push(vec![i.to_string(), j.to_string(), Table::cell(p[ix]), Table::cell(p[iy]), label]);
            }
        }
        let file = format!("{}.csv", ctx.prefix());
        let columns = vec!["i".into(), "j".into(), ax.name.clone(), ay.name.clone(), "region".into()];
        out.csv(&file, "regions", Table { columns, rows }.body());
        out.json(&format!("{}_summary.json", ctx.prefix()), "summary", &RegionSummary { file, axes: [ax.name, ay.name], counts })?;
        Ok(Status::Complete)
    }
}

impl Command for Sweep {
    fn name(&self) -> &'static str {
        "sweep"
    }
    fn about(&self) -> &'static str {
        "hysteresis ramps, periodic forcing, or a region map of the reduced model"
    }
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Status, CliError> {
        match ctx.cfg.sweep.kind.expect("validated") {
            SweepKind::Hysteresis => Self::hysteresis(ctx, out),
            SweepKind::Forcing => Self::forcing(ctx, out),
            SweepKind::Regions => Self::regions(ctx, out),
        }
    }
}

/// Resolve the model named in the configuration.
pub fn model(cfg: &RunConfig) -> Result<Arc<dyn VectorField>, CliError> {
    field(&cfg.model).map_err(|e| CliError::Config(crate::error::ConfigError::invalid("model", e.to_string())))
}
