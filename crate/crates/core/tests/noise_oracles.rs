use nalgebra::DMatrix;
use snls_core::grid::{norm, Field, Grid, NormKind, RealField};
use snls_core::noise::{check_regularity, KernelOperator};
use snls_core::rng::StreamFactory;

fn gauss_matrix(g: &std::sync::Arc<Grid>, ell: f64) -> DMatrix<f64> {
    let n = g.len();
    let l = g.length();
    DMatrix::from_fn(n, n, |i, j| {
        let mut z = (g.coords(i)[0] - g.coords(j)[0]).rem_euclid(l);
        if z > l / 2.0 {
            z -= l;
        }
        (-(z * z) / (2.0 * ell * ell)).exp() * (1.0 + 0.1 * (g.coords(i)[0]).sin())
    })
}

#[test]
fn explicit_apply_is_matrix_quadrature() {
    let g = Grid::new(1, 32, 8.0).unwrap();
    let k = gauss_matrix(&g, 0.7);
    let phi = KernelOperator::explicit(&g, k.clone(), 2.0).unwrap();
    let v = RealField::from_fn(&g, |x| (x[0] * 0.9).cos() + 0.2 * x[0]);
    let out = phi.apply(&v).unwrap();
    let dv = g.cell_volume();
    for i in 0..g.len() {
        let expect: f64 = (0..g.len()).map(|j| k[(i, j)] * v.values()[j] * dv).sum();
        assert!((out.values()[i] - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }
}

#[test]
fn f_phi_from_columns() {
    let g = Grid::new(1, 32, 8.0).unwrap();
    for phi in [
        KernelOperator::explicit(&g, gauss_matrix(&g, 0.7), 2.0).unwrap(),
        KernelOperator::gaussian(&g, 0.8, 1.3, 2.0).unwrap(),
    ] {
        let cols: Vec<RealField> = (0..g.len()).map(|j| phi.column(j)).collect();
        for i in 0..g.len() {
            let expect: f64 = cols.iter().map(|c| c.values()[i].powi(2)).sum();
            assert!((phi.f_phi().values()[i] - expect).abs() < 1e-12 * expect.max(1e-300));
        }
        // c(x, 0) = F_Φ(x)
        assert_eq!(phi.correlation(5, &[0]).unwrap(), phi.f_phi().values()[5]);
    }
}

#[test]
fn column_is_operator_on_basis_vector() {
    let g = Grid::new(1, 16, 4.0).unwrap();
    let phi = KernelOperator::gaussian(&g, 0.5, 1.0, 2.0).unwrap();
    let j = 3;
    let e = RealField::from_fn(&g, |_| 0.0);
    let mut e = e;
    e.values_mut()[j] = 1.0 / g.cell_volume().sqrt();
    let a = phi.apply(&e).unwrap();
    let b = phi.column(j);
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn hs_norm_from_columns() {
    let g = Grid::new(1, 32, 8.0).unwrap();
    let phi = KernelOperator::gaussian(&g, 0.8, 1.3, 2.0).unwrap();
    for s in [0.0, 1.0, 2.0] {
        let expect: f64 = (0..g.len())
            .map(|j| norm(&phi.column(j).to_complex(), NormKind::Hs { s }).unwrap().powi(2))
            .sum::<f64>()
            .sqrt();
        let got = phi.hs_norm(s);
        assert!((got - expect).abs() < 1e-9 * expect, "s={s} {got} {expect}");
    }
}

#[test]
fn hs_norm_is_basis_invariant() {
    // Σ_j ‖Φ q_j‖² over a rotated orthonormal basis
    let g = Grid::new(1, 16, 5.0).unwrap();
    let phi = KernelOperator::gaussian(&g, 0.6, 1.0, 2.0).unwrap();
    let n = g.len();
    let m = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) as f64).sin() + if i == j { 2.0 } else { 0.0 });
    let q = m.qr().q();
    let dv = g.cell_volume();
    let total: f64 = (0..n)
        .map(|j| {
            let v = RealField::new(g.clone(), (0..n).map(|i| q[(i, j)] / dv.sqrt()).collect()).unwrap();
            phi.apply(&v).unwrap().l2_norm().powi(2)
        })
        .sum();
    assert!((total.sqrt() - phi.hs_norm(0.0)).abs() < 1e-10 * phi.hs_norm(0.0));
}

#[test]
fn stationary_correlation_is_symmetric() {
    let g = Grid::new(1, 32, 8.0).unwrap();
    let phi = KernelOperator::gaussian(&g, 0.8, 1.0, 2.0).unwrap();
    for z in [1isize, 4, 9] {
        let a = phi.correlation(3, &[z]).unwrap();
        let b = phi.correlation((3 + z) as usize, &[-z]).unwrap();
        let c = phi.correlation(17, &[z]).unwrap();
        assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12, "{a} {b} {c}");
    }
}

#[test]
fn regularity_gate() {
    assert!(check_regularity(1.25, 1).is_err());
    assert!(check_regularity(1.3, 1).is_ok());
    assert!(check_regularity(1.5, 2).is_err());
    assert!(check_regularity(1.6, 2).is_ok());
    let g = Grid::new(1, 16, 4.0).unwrap();
    assert!(KernelOperator::gaussian(&g, 1.0, 1.0, 1.0).is_err());
}

#[test]
fn pseudo_inverse_round_trip() {
    let g = Grid::new(1, 32, 10.0).unwrap();
    let phi = KernelOperator::gaussian(&g, 0.4, 1.0, 2.0).unwrap();
    let h = RealField::from_fn(&g, |x| (x[0] * 0.6).sin() + 0.3);
    let back = phi.pseudo_solve(&phi.apply(&h).unwrap()).unwrap();
    let err = back.sub(&h).unwrap().l2_norm() / h.l2_norm();
    assert!(err < 1e-8, "{err}");

    // rank one: the range is one-dimensional
    let a = RealField::from_fn(&g, |x| (-(x[0] - 5.0).powi(2)).exp());
    let b = RealField::from_fn(&g, |_| 1.0 / 10f64.sqrt());
    let phi1 = KernelOperator::rank_r(&g, vec![(a.clone(), b.clone())], 2.0).unwrap();
    let hp = phi1.project_off_kernel(&h).unwrap();
    let back = phi1.pseudo_solve(&phi1.apply(&h).unwrap()).unwrap();
    assert!(back.sub(&hp).unwrap().l2_norm() < 1e-10 * hp.l2_norm());
    assert!(phi1.relative_residual(&phi1.pseudo_solve(&a).unwrap(), &a).unwrap() < 1e-10);
    let off = RealField::from_fn(&g, |x| (x[0] * 2.0 * std::f64::consts::PI / 10.0).sin());
    assert!(phi1.relative_residual(&phi1.pseudo_solve(&off).unwrap(), &off).unwrap() > 0.5);
}

#[test]
fn sampled_covariance_matches_f_phi() {
    let g = Grid::new(1, 32, 8.0).unwrap();
    let phi = KernelOperator::gaussian(&g, 0.8, 1.0, 2.0).unwrap();
    let f = StreamFactory::new(11, "cov");
    let dt = 0.01;
    let n = 20_000;
    let mut acc = vec![0.0; g.len()];
    let mut rng = f.stream(0);
    for _ in 0..n {
        let inc = phi.sample_increment(dt, &mut rng).unwrap();
        for (a, w) in acc.iter_mut().zip(inc.dw.values()) {
            *a += w * w;
        }
    }
    for (a, fp) in acc.iter().zip(phi.f_phi().values()) {
        let est = a / n as f64 / dt;
        assert!((est - fp).abs() < 0.05 * fp, "{est} {fp}");
    }
}

#[test]
fn zero_operator_gives_zero_noise() {
    let g = Grid::new(1, 16, 4.0).unwrap();
    let phi = KernelOperator::zero(&g, 2.0).unwrap();
    assert_eq!(phi.hs_norm(0.0), 0.0);
    let mut rng = StreamFactory::new(1, "z").stream(0);
    let inc = phi.sample_increment(0.1, &mut rng).unwrap();
    assert!(inc.dw.values().iter().all(|&x| x == 0.0));
    let _ = Field::zeros(&g);
}
