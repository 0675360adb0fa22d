use nalgebra::DMatrix;
use num_complex::Complex64;
use snls_core::control::ControlPath;
use snls_core::grid::{Field, Grid, NormKind, RealField};
use snls_core::integrator::SimParams;
use snls_core::noise::KernelOperator;
use snls_core::rng::StreamFactory;
use snls_core::skeleton::{
    cancel_nonlinearity_control, free_evolution_residual, skeleton_continuity_probe, skeleton_solve,
    wiener_rate, wiener_rate_of_path, CancelOptions, FieldPath, RangeStatus, DEFAULT_RANGE_TOL,
};
use rand::Rng;
use rand_distr::StandardNormal;

fn random_control(g: &std::sync::Arc<Grid>, knots: usize, end: f64, seed: u64) -> ControlPath {
    let f = StreamFactory::new(seed, "h");
    ControlPath::uniform(knots, end, |k, _| {
        let mut rng = f.stream(k as u64);
        RealField::new(g.clone(), (0..g.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    })
    .unwrap()
}

#[test]
fn wiener_rate_round_trip_full_rank() {
    let g = Grid::new(1, 32, 10.0).unwrap();
    let n = g.len();
    // well-conditioned explicit kernel
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + (i as f64 - j as f64).abs()) });
    let phi = KernelOperator::explicit(&g, m, 2.0).unwrap();
    for seed in 0..5 {
        let h = random_control(&g, 6, 1.0, seed);
        let f = FieldPath::integrate(&h, &phi).unwrap();
        let rate = wiener_rate_of_path(&f, &phi, DEFAULT_RANGE_TOL).unwrap();
        let e = h.energy();
        assert!((rate - e).abs() <= 1e-8 * e, "{rate} {e}");
    }
}

#[test]
fn wiener_rate_round_trip_off_kernel() {
    let g = Grid::new(1, 32, 10.0).unwrap();
    let pairs = (1..4)
        .map(|m| {
            let a = RealField::from_fn(&g, |x| (-(x[0] - 2.0 * m as f64).powi(2)).exp());
            let b = RealField::from_fn(&g, |x| (x[0] * m as f64 * 0.6283185307179586).cos() / 5f64.sqrt());
            (a, b)
        })
        .collect();
    let phi = KernelOperator::rank_r(&g, pairs, 2.0).unwrap();
    let h = random_control(&g, 5, 0.7, 3);
    let hp = h.map_values(|v| phi.project_off_kernel(v).unwrap());
    let f = FieldPath::integrate(&hp, &phi).unwrap();
    let rate = wiener_rate_of_path(&f, &phi, DEFAULT_RANGE_TOL).unwrap();
    assert!((rate - hp.energy()).abs() <= 1e-8 * hp.energy());
    // the kernel part of h costs nothing
    assert!((wiener_rate(&h, &phi).unwrap() - hp.energy()).abs() <= 1e-10 * hp.energy());
    assert!(h.energy() > hp.energy());
}

fn explicit_gauss(g: &std::sync::Arc<Grid>, ell: f64) -> KernelOperator {
    let n = g.len();
    let l = g.length();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let mut z = (g.coords(i)[0] - g.coords(j)[0]).rem_euclid(l);
        if z > l / 2.0 {
            z -= l;
        }
        (-(z * z) / (2.0 * ell * ell)).exp()
    });
    KernelOperator::explicit(g, m, 2.0).unwrap()
}

#[test]
fn cancel_control_turns_skeleton_into_free_evolution() {
    let g = Grid::new(1, 16, 8.0).unwrap();
    let phi = explicit_gauss(&g, 0.4);
    let u0 = Field::from_fn(&g, |x| Complex64::new(0.8 / (x[0] - 4.0).cosh(), 0.0));
    let params = SimParams { dt: 0.01, horizon: 0.5, record_snapshots: true, ..SimParams::default() };
    let (h, rep) = cancel_nonlinearity_control(&u0, 0.5, &phi, &params, &CancelOptions::default()).unwrap();
    assert_eq!(rep.status, RangeStatus::Ok);
    assert!(rep.max_residual <= 1e-8, "{}", rep.max_residual);
    assert!((h.end() - 1.0).abs() < 1e-12);
    let p2 = SimParams { horizon: 1.0, ..params };
    let traj = skeleton_solve(&u0, &h, &p2, &phi).unwrap();
    let res = free_evolution_residual(&traj, &u0, NormKind::H1).unwrap();
    assert!(res <= 1e-6, "{res}");
}

#[test]
fn long_correlation_flags_the_range_condition() {
    let g = Grid::new(1, 16, 8.0).unwrap();
    let a = RealField::from_fn(&g, |_| 1.0);
    let b = RealField::from_fn(&g, |_| 1.0 / 8f64.sqrt());
    let phi = KernelOperator::rank_r(&g, vec![(a, b)], 2.0).unwrap();
    let u0 = Field::from_fn(&g, |x| Complex64::new(0.8 / (x[0] - 4.0).cosh(), 0.0));
    let params = SimParams { dt: 0.05, horizon: 0.5, ..SimParams::default() };
    let (_, rep) = cancel_nonlinearity_control(&u0, 0.5, &phi, &params, &CancelOptions::default()).unwrap();
    assert_eq!(rep.status, RangeStatus::Warning);
}

#[test]
fn continuity_probe_is_finite_and_bounded() {
    let g = Grid::new(1, 32, 10.0).unwrap();
    let phi = KernelOperator::gaussian(&g, 1.0, 1.0, 2.0).unwrap();
    let u0 = Field::from_fn(&g, |x| Complex64::new((-(x[0] - 5.0).powi(2)).exp(), 0.0));
    let h = random_control(&g, 4, 0.5, 1).scaled(0.1);
    let params = SimParams { dt: 0.01, horizon: 0.5, ..SimParams::default() };
    let mut rng = StreamFactory::new(2, "probe").stream(0);
    let rep = skeleton_continuity_probe(&u0, &h, &params, &phi, 20, 1e-4, 1e-8, &mut rng).unwrap();
    assert_eq!(rep.ratios.len(), 20);
    assert!(rep.all_finite);
    assert!(rep.max_ratio < 100.0, "{}", rep.max_ratio);
}
