use nalgebra::DMatrix;
use proptest::prelude::*;
use qsbif_core::chaos::*;
use qsbif_core::continuation::{bialternate, principal_minor_sums};
use qsbif_core::equilibria::{classify_eigenvalues, Eigen, Stability};
use qsbif_core::models::*;
use qsbif_core::normalform::psi_inverse;
use qsbif_core::solve::integrate;

fn params_3d() -> impl Strategy<Value = ParameterSet3D> {
    (0.2..2.0f64, 0.2..2.0f64, 1.0..3.0f64, 1.0..40.0f64, 0.001..0.1f64, 0.1..2.0f64, 0.05..1.0f64, 0.1..1.0f64, 0.05..1.0f64)
        .prop_map(|(r, k1, k2, gamma, alpha, epsilon, mu1, mu2, mu3)| ParameterSet3D { r, k1, k2, gamma, alpha, epsilon, mu1, mu2, mu3 })
}

fn params_2d() -> impl Strategy<Value = ParameterSet2D> {
    (0.0..0.1f64, 0.5..2.0f64, 0.01..0.1f64, 0.2..5.0f64).prop_map(|(k, b, a, e)| ParameterSet2D::new(k, b, a, e).unwrap())
}

fn fd_jacobian(f: &dyn VectorField, x: &[f64], p: &[f64]) -> DMatrix<f64> {
    let n = f.dim();
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let h = 1e-6 * x[c].abs().max(1e-3);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let (fp, fm) = (f.eval_vec(&xp, p).unwrap(), f.eval_vec(&xm, p).unwrap());
        for r in 0..n {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    let scale = a.amax().max(b.amax()).max(1.0);
    (a - b).amax() <= tol * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobians_match_differences_3d(p in params_3d(), x in prop::array::uniform3(0.05..3.0f64)) {
        let pv = p.to_vec();
        for f in [&Field3D as &dyn VectorField, &Field3DDesing] {
            let j = f.jacobian_matrix(&x, &pv).unwrap();
            prop_assert!(close(&j, &fd_jacobian(f, &x, &pv), 1e-6), "{}", f.name());
        }
    }

    #[test]
    fn jacobians_match_differences_2d(p in params_2d(), x in prop::array::uniform2(0.05..3.0f64)) {
        let pv = p.to_vec();
        for f in [&Field2D as &dyn VectorField, &Field2DDesing] {
            let j = f.jacobian_matrix(&x, &pv).unwrap();
            prop_assert!(close(&j, &fd_jacobian(f, &x, &pv), 1e-6), "{}", f.name());
        }
    }

    #[test]
    fn desingularized_fields_are_positive_rescalings(p3 in params_3d(), x3 in prop::array::uniform3(0.05..3.0f64),
                                                     p2 in params_2d(), x2 in prop::array::uniform2(0.05..3.0f64)) {
        for (raw, des, x, p) in [
            (&Field3D as &dyn VectorField, &Field3DDesing as &dyn VectorField, x3.to_vec(), p3.to_vec()),
            (&Field2D, &Field2DDesing, x2.to_vec(), p2.to_vec()),
        ] {
            let a = raw.eval_vec(&x, &p).unwrap();
            let b = des.eval_vec(&x, &p).unwrap();
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(na > 1e-8 && nb > 1e-12);
            let cos = a.iter().zip(&b).map(|(u, v)| u * v).sum::<f64>() / (na * nb);
            prop_assert!((cos - 1.0).abs() < 1e-9, "cos {cos}");
        }
    }

    #[test]
    fn classification_matches_real_parts(re in prop::collection::vec(-2.0..2.0f64, 3), im in 0.0..2.0f64) {
        prop_assume!(re.iter().all(|r| r.abs() > 1e-3));
        let ev = vec![
            Eigen { re: re[0], im },
            Eigen { re: re[0], im: -im },
            Eigen { re: re[2], im: 0.0 },
        ];
        let c = classify_eigenvalues(&ev);
        let neg = ev.iter().filter(|e| e.re < 0.0).count();
        match neg {
            3 => prop_assert!(c.is_stable()),
            0 => prop_assert!(c == Stability::UnstableNode || c == Stability::UnstableFocus),
            _ => prop_assert_eq!(c, Stability::Saddle),
        }
    }

    #[test]
    fn shilnikov_verdict_follows_the_index(lu in 0.01..5.0f64, rs in 0.01..5.0f64, w in 0.01..5.0f64) {
        let ev = [Eigen { re: lu, im: 0.0 }, Eigen { re: -rs, im: w }, Eigen { re: -rs, im: -w }];
        let r = shilnikov_from_eigenvalues(&[0.0; 3], &ev).unwrap();
        prop_assert_eq!(r.kind, SaddleType::SaddleFocus);
        let d = r.saddle_index.unwrap();
        prop_assert!((d - rs / lu).abs() < 1e-12 * d);
        let want = if (d - 1.0).abs() <= MARGINAL_BAND { ShilnikovVerdict::Marginal }
            else if d < 1.0 { ShilnikovVerdict::Chaotic } else { ShilnikovVerdict::Simple };
        prop_assert_eq!(r.verdict, Some(want));
    }

    #[test]
    fn minor_sums_and_bialternate(m in prop::collection::vec(-3.0..3.0f64, 9)) {
        let a = DMatrix::from_row_slice(3, 3, &m);
        let s = principal_minor_sums(&a);
        prop_assert!((s[1] - a.trace()).abs() < 1e-12);
        prop_assert!((s[3] - a.determinant()).abs() < 1e-10);
        let d = bialternate(&a).determinant();
        prop_assert!((d - (s[1] * s[2] - s[3])).abs() < 1e-9 * (1.0 + d.abs()));
    }

    #[test]
    fn psi_round_trip(u in 0.2..1.5f64, v in 0.2..2.0f64, b in 0.8..2.0f64, k in 0.0..0.1f64) {
        let Ok((a, e, _, _)) = psi_map(u, v, b, k) else { return Ok(()) };
        prop_assume!(a > 0.0 && e > 0.0);
        let (uu, vv) = psi_inverse(a, e, b, k, (u * 1.001, v * 0.999)).unwrap();
        prop_assert!((uu - u).abs() < 1e-9 && (vv - v).abs() < 1e-9);
    }

    #[test]
    fn dense_output_is_exact_at_steps(p in params_2d(), x in prop::array::uniform2(0.1..2.0f64)) {
        let tr = integrate(&Field2DDesing, &x, &p.to_vec(), (0.0, 20.0), 1e-8, 1e-10).unwrap();
        for (t, s) in tr.t.iter().zip(&tr.x) {
            prop_assert_eq!(&tr.dense(*t).unwrap(), s);
        }
        prop_assert!(tr.t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn scan_axis_spans_its_range(lo in -5.0..5.0f64, w in 0.1..10.0f64, n in 2usize..50) {
        let ax = ScanAxis::new("k2", lo, lo + w, n);
        prop_assert_eq!(ax.value(0), lo);
        prop_assert!((ax.value(n - 1) - (lo + w)).abs() < 1e-12 * (1.0 + w.abs() + lo.abs()));
        prop_assert!((ax.spacing() * (n - 1) as f64 - w).abs() < 1e-12 * (1.0 + w));
    }
}
