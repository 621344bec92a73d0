//! Acceptance criteria, one PASS/FAIL line each. Reproduction criteria run
//! through the shipped presets; the others check the library against
//! independent oracles.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use qsbif_cli::commands::{ForcingSummary, HysteresisSummary};
use qsbif_cli::output::{split_csv, BranchTable, JsonArtifact};
use qsbif_cli::{parse_config, presets, run, RunOptions};
use qsbif_core::chaos::{lyapunov_scan, lyapunov_spectrum, LyapunovOptions, SaddleType, ScanAxis};
use qsbif_core::continuation::{
    continue_equilibrium, continue_fold, continue_hopf, hom_proxy_sweep, hopf_cycle_start, params_at,
    CycleOptions, SpecialKind, SpecialPoint, StepPolicy,
};
use qsbif_core::equilibria::{
    find_equilibria, find_equilibria_2d, proposition_agrees, proposition_class, EquilibriumRecord, Stability,
};
use qsbif_core::models::{
    boundary_line_m, Field2D, Field2DDesing, Field3D, Field3DDesing, ParameterSet2D, ParameterSet3D, VectorField,
};
use qsbif_core::normalform::{
    bt_map, bt_quantities, bt_regularity, check_bt_domain, hopf_quantities, hopf_transversality, regularity_f,
    regularity_f_bt, trace_2d, HopfDiagnostics,
};
use qsbif_core::solve::integrate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// Preset runs

fn run_preset(name: &str, dir: &Path) -> Result<(Vec<PathBuf>, Duration), String> {
    let cfg = parse_config(presets::preset(name).ok_or("missing preset")?).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let report = run(&cfg, &RunOptions { out_dir: dir.join(name), verbose: false }).map_err(|e| e.to_json())?;
    Ok((report.files, t0.elapsed()))
}

fn branch_tables(files: &[PathBuf]) -> Vec<BranchTable> {
    files
        .iter()
        .filter(|f| f.extension().is_some_and(|e| e == "csv"))
        .map(|f| {
            let text = fs::read_to_string(f).unwrap();
            BranchTable::parse(split_csv(&text).unwrap().1).unwrap()
        })
        .collect()
}

fn summary<T: serde::de::DeserializeOwned>(files: &[PathBuf]) -> T {
    let f = files.iter().find(|f| f.to_string_lossy().ends_with("_summary.json")).expect("summary");
    serde_json::from_str::<JsonArtifact<T>>(&fs::read_to_string(f).unwrap()).unwrap().data
}

/// Parameter values of the special rows of one kind, in `column`.
fn specials(tables: &[BranchTable], kind: &str, column: &str) -> Vec<f64> {
    tables
        .iter()
        .flat_map(|t| t.special.iter().filter(|s| s.kind == kind).map(move |s| t.special_value(s, column).unwrap()))
        .collect()
}

fn match_each(kind: &str, found: &[f64], want: &[f64], tol: f64) -> Check {
    for w in want {
        let best = found.iter().map(|f| (f - w).abs()).fold(f64::INFINITY, f64::min);
        ensure!(best <= tol, "{kind} at {w}: nearest detected {found:?} (|d| = {best:.3e})");
    }
    Ok(())
}

fn criterion_1(dir: &Path) -> Check {
    let (files, dt) = run_preset("fig3a", dir)?;
    let tables = branch_tables(&files);
    let lps = specials(&tables, "LP", "e");
    ensure!(lps.len() == 2, "expected exactly two LP points, found {lps:?}");
    match_each("LP", &lps, &[1.948551, 3.497398], 1e-3)?;
    ensure!(dt < Duration::from_secs(10), "runtime {dt:?}");
    Ok(())
}

fn criterion_2(dir: &Path) -> Check {
    let (files, dt) = run_preset("fig3b", dir)?;
    let tables = branch_tables(&files);
    let hs = specials(&tables, "H", "b");
    let l1 = specials(&tables, "H", "l1");
    ensure!(!l1.is_empty() && l1.iter().all(|v| *v < 0.0), "l1 at H: {l1:?}");
    match_each("LP", &specials(&tables, "LP", "b"), &[1.128239, 1.512641], 1e-3)?;
    match_each("H", &hs, &[1.168852], 1e-3)?;
    ensure!(dt < Duration::from_secs(10), "runtime {dt:?}");
    Ok(())
}

fn criterion_3(dir: &Path) -> Check {
    let (files, dt) = run_preset("fig4", dir)?;
    let tables = branch_tables(&files);
    for (kind, want) in [("CP", (1.723644, 0.123118)), ("BT", (2.490826, 0.066303))] {
        let es = specials(&tables, kind, "e");
        let as_ = specials(&tables, kind, "a");
        let best = es
            .iter()
            .zip(&as_)
            .map(|(e, a)| (e - want.0).abs().max((a - want.1).abs()))
            .fold(f64::INFINITY, f64::min);
        ensure!(best <= 2e-3, "{kind} near {want:?}: found e {es:?} a {as_:?}");
    }
    ensure!(dt < Duration::from_secs(30), "runtime {dt:?}");
    Ok(())
}

// ---------------------------------------------------------------------------
// BT algebra

fn bt_points(seed: u64, n: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let u = rng.random_range(0.05..2.0);
        let v = rng.random_range(0.05..3.0);
        if check_bt_domain(u, v).is_ok() {
            out.push((u, v));
        }
    }
    out
}

fn criterion_4() -> Check {
    for (u, v) in bt_points(11, 10) {
        let bt = bt_quantities(u, v).map_err(|e| e.to_string())?;
        let p = [bt.k_star, bt.b_star, bt.alpha, bt.epsilon];
        let j = Field2D.jacobian_matrix(&[u, v], &p).unwrap();
        let quoted = [[1.0, -1.0 / (2.0 * u)], [2.0 * u, -1.0]];
        for r in 0..2 {
            for c in 0..2 {
                ensure!((j[(r, c)] - quoted[r][c]).abs() < 1e-10, "J at ({u}, {v}): {j}");
            }
        }
        let j2 = &j * &j;
        ensure!(j2.iter().all(|x| x.abs() < 1e-10), "J^2 = {j2}");

        // a20 + b11 = -V^2 G2 / (4 U^10).
        let g2 = 2.0 * u.powi(5) + 3.0 * u.powi(3) * v - 2.0 * v.powi(3);
        let closed = -v * v * g2 / (4.0 * u.powi(10));
        ensure!(rel(bt.a20 + bt.b11, closed) < 1e-10, "a20+b11 {} vs {closed}", bt.a20 + bt.b11);
        let fv = regularity_f(u, v, bt.b_star, bt.k_star);
        ensure!(rel(fv, regularity_f_bt(u, v)) < 1e-10, "F {fv} vs closed form");

        let map = |z: &[f64]| bt_map(z[0], z[1], z[2], z[3], bt.alpha, bt.epsilon);
        let z0 = [u, v, bt.b_star, bt.k_star];
        let mut d = DMatrix::<f64>::zeros(4, 4);
        for c in 0..4 {
            let h = 1e-5 * z0[c].abs().max(1e-2);
            let (mut zp, mut zm) = (z0, z0);
            zp[c] += h;
            zm[c] -= h;
            let (fp, fm) = (map(&zp), map(&zm));
            for r in 0..4 {
                d[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let det = bt_regularity(u, v, bt.b_star, bt.k_star).map_err(|e| e.to_string())?;
        ensure!(rel(d.determinant(), det) < 1e-6, "det DPsi fd {} vs {det}", d.determinant());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Hopf algebra

fn hopf_draws(seed: u64, n: usize) -> Vec<HopfDiagnostics> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let u = rng.random_range(0.1..1.5);
        let v = rng.random_range(0.05..2.0);
        let k = rng.random_range(0.0..0.1);
        if let Ok(h) = hopf_quantities(u, v, k) {
            if h.b > 0.0 && h.a > 0.0 && h.e > 0.0 && h.l1.abs() > 1e-3 * h.l1_scale {
                out.push(h);
            }
        }
    }
    out
}

/// First Lyapunov coefficient of the reduced field at a trace-zero
/// equilibrium, Guckenheimer-Holmes formula in the real Jordan basis, with
/// every derivative a finite difference of the field.
fn gh_coefficient(p: &[f64], x0: [f64; 2]) -> f64 {
    let j = Field2D.jacobian_matrix(&x0, p).unwrap();
    let w = (j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)]).sqrt();
    let pm = DMatrix::from_row_slice(2, 2, &[j[(0, 1)], 0.0, -j[(0, 0)], -w]);
    let pinv = pm.clone().try_inverse().unwrap();
    let g = |y: [f64; 2]| -> [f64; 2] {
        let x = [x0[0] + pm[(0, 0)] * y[0] + pm[(0, 1)] * y[1], x0[1] + pm[(1, 0)] * y[0] + pm[(1, 1)] * y[1]];
        let f = Field2D.eval_vec(&x, p).unwrap();
        [pinv[(0, 0)] * f[0] + pinv[(0, 1)] * f[1], pinv[(1, 0)] * f[0] + pinv[(1, 1)] * f[1]]
    };
    let h = 1e-3;
    let d = |i: usize, a: i32, b: i32| g([a as f64 * h, b as f64 * h])[i];
    let dxx = |i| (d(i, 1, 0) - 2.0 * d(i, 0, 0) + d(i, -1, 0)) / (h * h);
    let dyy = |i| (d(i, 0, 1) - 2.0 * d(i, 0, 0) + d(i, 0, -1)) / (h * h);
    let dxy = |i| (d(i, 1, 1) - d(i, 1, -1) - d(i, -1, 1) + d(i, -1, -1)) / (4.0 * h * h);
    let dxxx = |i| (d(i, 2, 0) - 2.0 * d(i, 1, 0) + 2.0 * d(i, -1, 0) - d(i, -2, 0)) / (2.0 * h * h * h);
    let dyyy = |i| (d(i, 0, 2) - 2.0 * d(i, 0, 1) + 2.0 * d(i, 0, -1) - d(i, 0, -2)) / (2.0 * h * h * h);
    let dxyy = |i| {
        (d(i, 1, 1) - 2.0 * d(i, 1, 0) + d(i, 1, -1) - d(i, -1, 1) + 2.0 * d(i, -1, 0) - d(i, -1, -1))
            / (2.0 * h * h * h)
    };
    let dxxy = |i| {
        (d(i, 1, 1) - 2.0 * d(i, 0, 1) + d(i, -1, 1) - d(i, 1, -1) + 2.0 * d(i, 0, -1) - d(i, -1, -1))
            / (2.0 * h * h * h)
    };
    (dxxx(0) + dxyy(0) + dxxy(1) + dyyy(1)) / 16.0
        + (dxy(0) * (dxx(0) + dyy(0)) - dxy(1) * (dxx(1) + dyy(1)) - dxx(0) * dxx(1) + dyy(0) * dyy(1))
            / (16.0 * w)
}

/// Slope of log amplitude against log |b - b_H| for cycles started near the
/// Hopf point of the reference b-diagram.
fn amplitude_exponent() -> Result<f64, String> {
    let mut p = ParameterSet2D::reference(3.0);
    let set = find_equilibria_2d(&ParameterSet2D { b: 1.165, ..p });
    let r = set
        .interior()
        .min_by(|a, b| a.eigenvalues[0].re.abs().total_cmp(&b.eigenvalues[0].re.abs()))
        .ok_or("no equilibrium near the Hopf point")?;
    let (a, e, k) = (p.a, p.e, p.k);
    let (mut x, mut bh) = (r.state.clone(), 1.165);
    let resid = |z: [f64; 3]| {
        let fv = Field2D.eval_vec(&[z[0], z[1]], &[k, z[2], a, e]).unwrap();
        [fv[0], fv[1], trace_2d(z[0], z[1], z[2], k)]
    };
    for _ in 0..50 {
        let z = [x[0], x[1], bh];
        let r0 = resid(z);
        if r0.iter().all(|v| v.abs() < 1e-14) {
            break;
        }
        let mut jm = DMatrix::<f64>::zeros(3, 3);
        for c in 0..3 {
            let mut zp = z;
            zp[c] += 1e-7;
            let rp = resid(zp);
            for rr in 0..3 {
                jm[(rr, c)] = (rp[rr] - r0[rr]) / 1e-7;
            }
        }
        let dz = jm.lu().solve(&DVector::from_row_slice(&r0)).ok_or("singular Hopf system")?;
        x[0] -= dz[0];
        x[1] -= dz[1];
        bh -= dz[2];
    }
    p.b = bh;
    let f = Field2DDesing;
    let idx = f.param_index("b").unwrap();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut pts = Vec::new();
    for eps in [0.003, 0.006, 0.012, 0.024, 0.048] {
        let y = hopf_cycle_start(&f, &p.to_vec(), idx, &x, eps, &CycleOptions::default()).map_err(|e| e.to_string())?;
        pts.push(((y[y.len() - 1] - bh).abs().ln(), (eps * scale).ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|q| q.0).sum::<f64>() / n;
    let my = pts.iter().map(|q| q.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    let den: f64 = pts.iter().map(|q| (q.0 - mx).powi(2)).sum();
    Ok(num / den)
}

fn criterion_5() -> Check {
    for h in hopf_draws(5, 5) {
        let t = trace_2d(h.u, h.v, h.b, h.k);
        ensure!(t.abs() <= 1e-14 * (1.0 + h.b), "T = {t} at {:?}", (h.u, h.v, h.k));
        let dtdb = hopf_transversality(h.u, h.v, h.k).map_err(|e| e.to_string())?;
        ensure!(dtdb == -1.0, "dT/db = {dtdb}");
        let gh = gh_coefficient(&[h.k, h.b, h.a, h.e], [h.u, h.v]);
        ensure!(gh.signum() == h.l1.signum(), "oracle {gh} vs l1 {} at {:?}", h.l1, (h.u, h.v, h.k));
    }
    let slope = amplitude_exponent()?;
    ensure!((slope - 0.5).abs() <= 0.05, "amplitude exponent {slope}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Invariance

fn criterion_6() -> Check {
    let p = ParameterSet3D::default_scan().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ts: Vec<f64> = (0..=1000).map(|k| 0.1 * k as f64).collect();
    for _ in 0..200 {
        let x0: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-6.0..0.5))).collect();
        let tr = integrate(&Field3DDesing, &x0, &p, (0.0, 100.0), 1e-8, 1e-10).map_err(|e| e.to_string())?;
        for x in tr.x.iter().chain(tr.sample(&ts).iter().map(|s| &s.1)) {
            ensure!(x.iter().all(|v| *v >= -1e-9), "{x:?} from {x0:?}");
        }
    }
    let rtol = 1e-8;
    for (q0, m0, k1, gamma) in [(1.0, 1.0, 1.0, 1.0), (0.4, 2.0, 0.7, 3.0), (2.5, 0.3, 1.3, 0.5)] {
        let ps = ParameterSet3D { k1, gamma, ..ParameterSet3D::default_scan() };
        let tr = integrate(&Field3DDesing, &[q0, m0, 0.0], &ps.to_vec(), (0.0, 5.0), rtol, 1e-12).map_err(|e| e.to_string())?;
        for (t, x) in tr.t.iter().zip(&tr.x) {
            let m = boundary_line_m(q0, m0, k1, gamma, *t);
            ensure!((x[1] - m).abs() <= 10.0 * rtol * m.abs().max(1e-12), "t = {t}: m {} vs {m}", x[1]);
            ensure!(x[2] == 0.0, "left the boundary line at t = {t}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Equilibrium oracle

/// Interior equilibria by brute force: substitute v = u^2 + a e into the
/// u-equation and bisect each sign change on a 1e5-point grid over
/// a/b < u <= (1+a)/b.
fn grid_oracle(p: &ParameterSet2D) -> Vec<(f64, f64)> {
    let (k, b, a, e) = (p.k, p.b, p.a, p.e);
    let h = |u: f64| {
        let v = u * u + a * e;
        u * u / (v * (1.0 + k * u * u)) + a - b * u
    };
    let (lo, hi) = (a / b, (1.0 + a) / b);
    let n = 100_000;
    let mut roots = Vec::new();
    let mut u0 = lo + 1e-12;
    let mut h0 = h(u0);
    for i in 1..=n {
        let u1 = lo + (hi - lo) * i as f64 / n as f64;
        let h1 = h(u1);
        if h0 == 0.0 {
            roots.push(u0);
        } else if h0 * h1 < 0.0 {
            let (mut x0, mut x1, mut f0) = (u0, u1, h0);
            for _ in 0..200 {
                let m = 0.5 * (x0 + x1);
                let fm = h(m);
                if fm == 0.0 || x1 - x0 < 1e-15 {
                    x0 = m;
                    x1 = m;
                    break;
                }
                if f0 * fm < 0.0 {
                    x1 = m;
                } else {
                    x0 = m;
                    f0 = fm;
                }
            }
            roots.push(0.5 * (x0 + x1));
        }
        u0 = u1;
        h0 = h1;
    }
    roots.into_iter().map(|u| (u, u * u + a * e)).collect()
}

fn draw(rng: &mut ChaCha8Rng) -> ParameterSet2D {
    ParameterSet2D::new(
        rng.random_range(0.0..0.1),
        rng.random_range(1.0..1.8),
        rng.random_range(0.02..0.08),
        rng.random_range(0.5..5.0),
    )
    .unwrap()
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    for _ in 0..20 {
        let p = draw(&mut rng);
        let oracle = grid_oracle(&p);
        let set = find_equilibria_2d(&p);
        let mut got: Vec<&EquilibriumRecord> = set.interior().collect();
        got.sort_by(|x, y| x.state[0].total_cmp(&y.state[0]));
        ensure!(got.len() == oracle.len(), "count {} vs oracle {} at {p:?}", got.len(), oracle.len());
        for (r, (u, v)) in got.iter().zip(&oracle) {
            ensure!((r.state[0] - u).abs() <= 1e-8 && (r.state[1] - v).abs() <= 1e-8, "{:?} vs ({u}, {v})", r.state);
            let prop = proposition_class(r.state[0], r.state[1], &p);
            ensure!(proposition_agrees(r.class, prop), "{:?} vs {prop:?} at {p:?}", r.class);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Hysteresis and forcing

fn criterion_8(dir: &Path) -> Check {
    let (files, _) = run_preset("fig5-sweeps", dir)?;
    let h: HysteresisSummary = summary(&files);
    ensure!(h.witness > 0.1, "hysteresis witness {}", h.witness);
    let (files, _) = run_preset("fig6", dir)?;
    let f: ForcingSummary = summary(&files);
    ensure!(f.alternations >= 3, "only {} alternations", f.alternations);
    Ok(())
}

// ---------------------------------------------------------------------------
// Topology of the default 3D set

fn default_3d_points() -> Result<(Vec<f64>, SpecialPoint, SpecialPoint), String> {
    let p = ParameterSet3D::default_scan().to_vec();
    let (mut lp, mut h) = (None, None);
    for r in find_equilibria(&Field3D, &p).map_err(|e| e.to_string())?.interior() {
        for sign in [1.0, -1.0] {
            let pol = StepPolicy { max: 0.05, ..StepPolicy::default() };
            let br = continue_equilibrium(&Field3D, &p, "k2", &r.state, sign, (1.8, 3.0), pol).map_err(|e| e.to_string())?;
            lp = lp.or_else(|| br.special_of(SpecialKind::LP).next().cloned());
            h = h.or_else(|| br.special_of(SpecialKind::H).next().cloned());
        }
    }
    Ok((p, lp.ok_or("no LP in k2")?, h.ok_or("no H in k2")?))
}

fn bt_gap() -> Result<f64, String> {
    let (p, lp, h) = default_3d_points()?;
    let f = Field3D;
    let ranges = [(1.5, 3.5), (1.0, 40.0)];
    let pol = StepPolicy { max: 0.5, ..StepPolicy::default() };
    let pl = params_at(&f, &p, &["k2"], &lp).map_err(|e| e.to_string())?;
    let ph = params_at(&f, &p, &["k2"], &h).map_err(|e| e.to_string())?;
    let fold = continue_fold(&f, &pl, ["k2", "gamma"], &lp.state, 1.0, ranges, pol, vec![SpecialKind::BT]).map_err(|e| e.to_string())?;
    let hopf = continue_hopf(&f, &ph, ["k2", "gamma"], &h.state, 1.0, ranges, pol, vec![SpecialKind::BT]).map_err(|e| e.to_string())?;
    let a = fold.special_of(SpecialKind::BT).next().ok_or("no BT on the fold curve")?;
    let b = hopf.special_of(SpecialKind::BT).next().ok_or("no BT on the Hopf curve")?;
    Ok(((a.params[0] - b.params[0]).powi(2) + (a.params[1] - b.params[1]).powi(2)).sqrt())
}

fn criterion_9() -> Check {
    let mut fails = Vec::new();
    let base = ParameterSet3D::default_scan();
    let (kx, gy) = (ScanAxis::new("k2", 1.8, 2.6, 40), ScanAxis::new("gamma", 5.0, 35.0, 40));

    match bt_gap() {
        Ok(g) if g < 1e-4 => println!("  9a fold/Hopf BT gap {g:.2e}"),
        Ok(g) => fails.push(format!("BT gap {g:.2e}")),
        Err(e) => fails.push(e),
    }

    // HOM-proxy entries on each scan row.
    let gammas: Vec<f64> = (0..gy.count).map(|j| gy.value(j)).collect();
    let sweep = hom_proxy_sweep(&Field3DDesing, &base.to_vec(), ["k2", "gamma"], (kx.lo, kx.hi), &gammas, CycleOptions::default())
        .map_err(|e| e.to_string())?;
    let proxies: Vec<_> = sweep.entries.iter().filter(|h| h.period > 500.0).collect();
    println!("  9b {} HOM-proxy entries over {} rows", proxies.len(), gammas.len());
    if proxies.is_empty() {
        fails.push("no cycle branch reached T > 500".into());
    }
    let sf = proxies.iter().filter(|h| h.saddle_kind == Some(SaddleType::SaddleFocus)).count();
    println!("  9c {sf} saddle-focus verdicts on the proxy locus");
    if sf == 0 {
        fails.push("no saddle-focus along the proxy locus".into());
    }

    let opts = LyapunovOptions { horizon: 10_000.0, ..LyapunovOptions::default() };
    let t0 = Instant::now();
    let cells = lyapunov_scan(&Field3D, &base.to_vec(), (&kx, &gy), 42, &opts, 1).map_err(|e| e.to_string())?;
    let dt = t0.elapsed();
    let adjacent = |i: usize, j: usize| {
        let (k2, g) = (kx.value(i), gy.value(j));
        proxies.iter().any(|h| (h.params[1] - g).abs() < 1e-9 && (h.params[0] - k2).abs() <= kx.spacing())
    };
    let ok = |c: &&qsbif_core::chaos::ScanCell| c.error.is_none() && !c.escaped && c.max_exponent().is_finite();
    let best = cells.iter().filter(ok).map(|c| c.max_exponent()).fold(f64::NEG_INFINITY, f64::max);
    let hits = cells.iter().filter(ok).filter(|c| c.max_exponent() > 1e-3 && adjacent(c.i, c.j)).count();
    println!("  9d 40x40 scan in {:.0} s, largest exponent {best:.3e}, {hits} chaotic cells next to the locus", dt.as_secs_f64());
    if hits == 0 {
        fails.push(format!("no scan cell with exponent > 1e-3 next to the proxy locus (largest {best:.3e})"));
    }
    if dt >= Duration::from_secs(600) {
        fails.push(format!("scan runtime {dt:?}"));
    }
    if fails.is_empty() {
        Ok(())
    } else {
        Err(fails.join("; "))
    }
}

// ---------------------------------------------------------------------------
// Chaos sanity

fn near_equilibrium(p: &[f64], pick: impl Fn(&EquilibriumRecord) -> bool) -> Result<Vec<f64>, String> {
    let set = find_equilibria(&Field3DDesing, p).map_err(|e| e.to_string())?;
    let r = set.interior().find(|r| pick(r)).ok_or("no matching equilibrium")?;
    Ok(r.state.iter().map(|v| v * 1.02).collect())
}

fn criterion_10() -> Check {
    let at = |k2: f64| ParameterSet3D { k2, gamma: 15.0, ..ParameterSet3D::default_scan() }.to_vec();

    let p = at(2.6);
    let x0 = near_equilibrium(&p, |r| r.class.is_stable())?;
    let sink = lyapunov_spectrum(&Field3DDesing, &p, &x0, &LyapunovOptions::default()).map_err(|e| e.to_string())?;
    ensure!(!sink.escaped && sink.exponents.iter().all(|l| *l < 0.0), "sink spectrum {:?}", sink.exponents);

    let p = at(2.30);
    let x0 = near_equilibrium(&p, |r| r.class == Stability::UnstableFocus || r.class == Stability::Saddle)?;
    let opts = LyapunovOptions { horizon: 20_000.0, ..LyapunovOptions::default() };
    let cycle = lyapunov_spectrum(&Field3DDesing, &p, &x0, &opts).map_err(|e| e.to_string())?;
    ensure!(!cycle.escaped && cycle.max_exponent().abs() <= 2e-3, "cycle spectrum {:?}", cycle.exponents);

    for (name, est) in [("sink", &sink), ("cycle", &cycle)] {
        let err = est.sum_identity_error();
        ensure!(err <= 0.05, "{name}: exponent sum off by {:.1}%", 100.0 * err);
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("continuation in e finds the two folds", Box::new(|| criterion_1(dir))),
        ("continuation in b finds fold, Hopf, fold", Box::new(|| criterion_2(dir))),
        ("fold curve in (e, a) finds CP and BT", Box::new(|| criterion_3(dir))),
        ("BT algebra suite", Box::new(criterion_4)),
        ("Hopf algebra suite", Box::new(criterion_5)),
        ("orthant invariance and boundary flow", Box::new(criterion_6)),
        ("equilibria match the grid oracle", Box::new(criterion_7)),
        ("hysteresis and forcing windows", Box::new(|| criterion_8(dir))),
        ("topology of the default 3D set", Box::new(criterion_9)),
        ("Lyapunov spectrum sanity", Box::new(criterion_10)),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS {} {name} ({secs:.1} s)", k + 1),
            Err(why) => {
                println!("FAIL {} {name} ({secs:.1} s): {why}", k + 1);
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
