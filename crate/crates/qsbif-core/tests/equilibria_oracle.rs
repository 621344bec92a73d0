use qsbif_core::equilibria::*;
use qsbif_core::models::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Interior equilibria of the reduced model by brute force: substitute the
/// v-nullcline v = u^2 + a e into the u-equation and bisect every sign change
/// on a uniform grid of 1e5 points over a/b < u <= (1+a)/b.
fn grid_oracle(p: &ParameterSet2D) -> Vec<(f64, f64)> {
    let (k, b, a, e) = (p.k, p.b, p.a, p.e);
    let h = |u: f64| {
        let v = u * u + a * e;
        u * u / (v * (1.0 + k * u * u)) + a - b * u
    };
    let lo = a / b;
    let hi = (1.0 + a) / b;
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

#[test]
fn reduced_equilibria_match_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut three = 0;
    for _ in 0..20 {
        let p = draw(&mut rng);
        let oracle = grid_oracle(&p);
        let set = find_equilibria_2d(&p);
        let mut got: Vec<&EquilibriumRecord> = set.interior().collect();
        got.sort_by(|x, y| x.state[0].total_cmp(&y.state[0]));
        assert_eq!(got.len(), oracle.len(), "count at {p:?}");
        for (r, (u, v)) in got.iter().zip(&oracle) {
            assert!((r.state[0] - u).abs() <= 1e-8, "u {} vs {u} at {p:?}", r.state[0]);
            assert!((r.state[1] - v).abs() <= 1e-8, "v {} vs {v} at {p:?}", r.state[1]);
        }
        if oracle.len() == 3 {
            three += 1;
        }
    }
    // The draw box straddles the fold curves; make sure the oracle saw both
    // regimes.
    assert!(three > 0 && three < 20, "{three} draws with three equilibria");
}

#[test]
fn proposition_agrees_with_eigenvalues_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let p = draw(&mut rng);
        for r in find_equilibria_2d(&p).interior() {
            let prop = proposition_class(r.state[0], r.state[1], &p);
            assert!(proposition_agrees(r.class, prop), "{:?} vs {prop:?} at {p:?}", r.class);
        }
    }
}

#[test]
fn three_branch_window_and_single_stable_state() {
    let mut p = ParameterSet2D::reference(3.0);
    p.b = 1.3;
    let set = find_equilibria_2d(&p);
    let mid: Vec<&EquilibriumRecord> = set.interior().collect();
    assert_eq!(mid.len(), 3);
    assert_eq!(mid[1].class, Stability::Saddle);
    let prop = proposition_class(mid[1].state[0], mid[1].state[1], &p);
    assert!(proposition_agrees(Stability::Saddle, prop));
    let set = find_equilibria_2d(&ParameterSet2D::reference(5.0));
    let one: Vec<&EquilibriumRecord> = set.interior().collect();
    assert_eq!(one.len(), 1);
    assert!(one[0].class.is_stable());
    let origin = set.records.iter().find(|r| r.boundary).unwrap();
    assert_eq!(origin.class, Stability::Repeller);
}

/// Damped Newton on the raw 3D field from 1000 random starts; distinct
/// converged roots with positive coordinates.
fn multistart_oracle(p: &[f64]) -> Vec<Vec<f64>> {
    let f = Field3D;
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut roots: Vec<Vec<f64>> = Vec::new();
    for _ in 0..1000 {
        let mut x: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-3.0..1.0))).collect();
        for _ in 0..200 {
            let Ok(r) = f.eval_vec(&x, p) else { break };
            let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm < 1e-13 {
                break;
            }
            let Ok(j) = f.jacobian_matrix(&x, p) else { break };
            let Some(dx) = j.lu().solve(&nalgebra::DVector::from_vec(r)) else { break };
            let mut lam = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a - lam * d).collect();
                let ok = trial.iter().all(|v| *v > 0.0)
                    && f.eval_vec(&trial, p)
                        .map(|rr| rr.iter().fold(0.0f64, |m, v| m.max(v.abs())) < norm)
                        .unwrap_or(false);
                if ok || lam < 1e-6 {
                    x = trial;
                    break;
                }
                lam *= 0.5;
            }
        }
        let ok = x.iter().all(|v| *v > 0.0)
            && f.eval_vec(&x, p)
                .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-10)
                .unwrap_or(false);
        if ok && !roots.iter().any(|r| r.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-6)) {
            roots.push(x);
        }
    }
    roots.sort_by(|a, b| a[1].total_cmp(&b[1]));
    roots
}

#[test]
fn full_model_equilibria_match_multistart_newton() {
    let ps = ParameterSet3D::default_scan();
    let p = ps.to_vec();
    let set = find_equilibria_3d(&ps);
    let mut got: Vec<Vec<f64>> = set.interior().map(|r| r.state.clone()).collect();
    got.sort_by(|a, b| a[1].total_cmp(&b[1]));
    let oracle = multistart_oracle(&p);
    assert_eq!(got.len(), oracle.len(), "{got:?} vs {oracle:?}");
    for (g, o) in got.iter().zip(&oracle) {
        for (a, b) in g.iter().zip(o) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{g:?} vs {o:?}");
        }
        let r = eval_field_3d(&State3::new(g[0], g[1], g[2]), &ps).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-10));
    }
}

#[test]
fn saddle_focus_on_the_homoclinic_side() {
    // Where the cycle branch at gamma = 15 ends in period blow-up the middle
    // equilibrium has one unstable direction and a stable complex pair.
    let ps = ParameterSet3D { k2: 2.338, ..ParameterSet3D::default_scan() };
    let set = find_equilibria_3d(&ps);
    let sf = set.interior().find(|r| {
        let up: Vec<&Eigen> = r.eigenvalues.iter().filter(|e| e.re > 0.0).collect();
        up.len() == 1 && up[0].im == 0.0 && r.eigenvalues.iter().any(|e| e.re < 0.0 && e.im != 0.0)
    });
    assert!(sf.is_some(), "{:?}", set.records);
}
