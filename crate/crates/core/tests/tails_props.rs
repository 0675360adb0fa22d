use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use snls_core::grid::{gradient, norm, Field, Grid, NormKind, RealField};
use snls_core::noise::KernelOperator;
use snls_core::rng::StreamFactory;
use snls_core::tails::{compute_constants, embedding_constant, empirical_tail_check, wilson, TailCheckOptions, TailStatus};
use rand::Rng;
use rand_distr::StandardNormal;

/// Independent random-search maximization over complex fields of `‖f‖_target / ‖f‖_{H^s}`.
fn hill_climb(g: &std::sync::Arc<Grid>, s: f64, target: NormKind, seed: u64) -> f64 {
    let mut rng = StreamFactory::new(seed, "climb").stream(0);
    let n = g.len();
    let ratio = |v: &[f64]| {
        // spectral coordinates whitened by the H^s weight
        let spec = (0..n).map(|i| Complex64::new(v[i], v[n + i]) / (1.0 + g.k_squared()[i]).powf(s / 2.0)).collect();
        let f = Field::from_spectrum(g, spec);
        norm(&f, target).unwrap() / norm(&f, NormKind::Hs { s }).unwrap()
    };
    let mut x: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
    let mut best = ratio(&x);
    let mut step = 0.3;
    // (1+1) evolution strategy with the one-fifth success rule
    for _ in 0..60_000 {
        let scale = x.iter().map(|a| a * a).sum::<f64>().sqrt() / (2.0 * n as f64).sqrt();
        let y: Vec<f64> = x.iter().map(|a| a + step * scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = ratio(&y);
        if r > best {
            best = r;
            x = y;
            step *= 1.3;
        } else {
            step = (step * 0.935).max(1e-7);
        }
    }
    best
}

/// `sup |Lf| / ‖f‖_{H^s} = √(L G⁻¹ Lᵀ)` for a linear functional `L`, with the
/// Gram matrix `G` of the `H^s` inner product assembled by polarization.
fn functional_norm(g: &std::sync::Arc<Grid>, s: f64, l: &[f64]) -> f64 {
    let n = g.len();
    let unit = |i: usize, j: usize, sign: f64| {
        let mut v = vec![0.0; n];
        v[i] += 1.0;
        v[j] += sign;
        RealField::new(g.clone(), v).unwrap().to_complex()
    };
    let hs = |f: &snls_core::grid::Field| norm(f, NormKind::Hs { s }).unwrap().powi(2);
    let gram = DMatrix::from_fn(n, n, |i, j| 0.25 * (hs(&unit(i, j, 1.0)) - hs(&unit(i, j, -1.0))));
    let lv = DVector::from_column_slice(l);
    let x = gram.cholesky().unwrap().solve(&lv);
    lv.dot(&x).sqrt()
}

#[test]
fn sup_type_constants_match_the_gram_oracle() {
    let g = Grid::new(1, 16, 6.0).unwrap();
    let n = g.len();
    let mut eval = vec![0.0; n];
    eval[0] = 1.0;
    let point = functional_norm(&g, 2.0, &eval);
    // derivative at x_0 applied to each grid basis vector
    let deriv: Vec<f64> = (0..n)
        .map(|j| {
            let mut v = vec![0.0; n];
            v[j] = 1.0;
            let f = RealField::new(g.clone(), v).unwrap().to_complex();
            gradient(&f)[0].values()[0].re
        })
        .collect();
    let slope = functional_norm(&g, 2.0, &deriv);
    let linf = embedding_constant(&g, 2.0, NormKind::Linf).unwrap().value;
    let w1inf = embedding_constant(&g, 2.0, NormKind::W1Inf).unwrap().value;
    assert!((linf - point).abs() < 1e-10 * point, "{linf} {point}");
    assert!((w1inf - point.max(slope)).abs() < 1e-10 * w1inf, "{w1inf} {slope}");
}

#[test]
fn embedding_constants_dominate_and_match_a_hill_climb() {
    let g = Grid::new(1, 16, 6.0).unwrap();
    for target in [NormKind::Linf, NormKind::W1p { p: 4.0 }, NormKind::W1p { p: 3.0 }, NormKind::H1] {
        let est = embedding_constant(&g, 2.0, target).unwrap();
        let climb = (0..3).map(|k| hill_climb(&g, 2.0, target, k)).fold(0.0, f64::max);
        assert!(climb <= est.value * (1.0 + 1e-6), "{target:?}: climb {climb} > {}", est.value);
        assert!(climb >= 0.98 * est.value, "{target:?}: climb {climb} vs {}", est.value);
    }
}

#[test]
fn hilbert_target_constant_is_one_for_lower_order() {
    let g = Grid::new(1, 16, 6.0).unwrap();
    let e = embedding_constant(&g, 2.0, NormKind::H1).unwrap();
    assert!((e.value - 1.0).abs() < 1e-12);
}

fn gaussian() -> KernelOperator {
    let g = Grid::new(1, 32, 8.0).unwrap();
    KernelOperator::gaussian(&g, 1.0, 0.5, 2.0).unwrap()
}

#[test]
fn kappa1_scales_with_the_square_of_phi() {
    let g = Grid::new(1, 32, 8.0).unwrap();
    let a = KernelOperator::gaussian(&g, 1.0, 0.5, 2.0).unwrap();
    let b = KernelOperator::gaussian(&g, 1.0, 1.0, 2.0).unwrap();
    let ca = compute_constants(1.0, 1.0, 4.0, &a).unwrap();
    let cb = compute_constants(1.0, 1.0, 4.0, &b).unwrap();
    assert!((cb.kappa1 / ca.kappa1 - 4.0).abs() < 1e-10);
    assert!((cb.kappa / ca.kappa - 4.0).abs() < 1e-10);
    assert!((cb.kappa2 / ca.kappa2 - 4.0).abs() < 1e-10);
}

#[test]
fn p2_constants_by_hand() {
    let phi = gaussian();
    let c = compute_constants(0.7, 1.5, 2.0, &phi).unwrap();
    let ci = embedding_constant(phi.grid(), 2.0, NormKind::W1Inf).unwrap().value;
    let hs = phi.hs_norm(2.0);
    // r = ∞: T-exponents are 1, d = 1, p = 2
    let common = ci * ci * 2.0 * 3.0 * hs * hs * 0.7;
    assert!((c.kappa - 4.0 * 1.5 * common).abs() < 1e-10 * c.kappa);
    assert!((c.kappa2 - 8.0 * 1.5 * common).abs() < 1e-10 * c.kappa2);
    assert!((c.kappa1 - 4.0 * 1.5 * ci * ci * hs * hs * 0.7).abs() < 1e-10 * c.kappa1);
    assert_eq!(c.k0, None);
    assert!(c.lr_bound(1.0).is_infinite());
}

#[test]
fn bounds_decrease_in_delta() {
    let c = compute_constants(1.0, 1.0, 4.0, &gaussian()).unwrap();
    let deltas: Vec<f64> = (1..20).map(|i| 0.3 * i as f64).collect();
    for w in deltas.windows(2) {
        assert!(c.fixed_time_bound(w[1]) <= c.fixed_time_bound(w[0]));
        assert!(c.sup_h1_bound(w[1]) <= c.sup_h1_bound(w[0]));
        assert!(c.lr_bound(w[1]) <= c.lr_bound(w[0]));
    }
}

#[test]
fn tail_exponent_range() {
    let g2 = Grid::new(2, 8, 4.0).unwrap();
    let phi2 = KernelOperator::gaussian(&g2, 1.0, 1.0, 2.0).unwrap();
    assert!(compute_constants(1.0, 1.0, 4.0, &phi2).is_err());
    assert!(compute_constants(1.0, 1.0, 3.9, &phi2).is_ok());
    assert!(compute_constants(1.0, 1.0, 1.9, &gaussian()).is_err());
}

#[test]
fn degenerate_noise_passes_every_row() {
    let g = Grid::new(1, 16, 4.0).unwrap();
    let opts = TailCheckOptions { n: 50, dt: 0.1, ..TailCheckOptions::default() };
    let zero = KernelOperator::zero(&g, 2.0).unwrap();
    let rep = empirical_tail_check(&zero, &opts, &StreamFactory::new(0, "t"), None).unwrap();
    assert!(rep.all_pass && rep.hard_violations == 0);
    assert!(rep.rows.iter().all(|r| r.status == TailStatus::Pass && r.hits == 0));

    let phi = KernelOperator::gaussian(&g, 1.0, 1.0, 2.0).unwrap();
    let eta0 = TailCheckOptions { eta: 0.0, ..opts };
    let rep = empirical_tail_check(&phi, &eta0, &StreamFactory::new(0, "t"), None).unwrap();
    assert!(rep.all_pass);
}

#[test]
fn tail_check_has_no_hard_violations() {
    let opts = TailCheckOptions { n: 400, dt: 0.05, ..TailCheckOptions::default() };
    let rep = empirical_tail_check(&gaussian(), &opts, &StreamFactory::new(3, "tail"), None).unwrap();
    assert_eq!(rep.hard_violations, 0);
    assert_eq!(rep.rows.len(), 3 * opts.delta_multipliers.len());
}

#[test]
fn wilson_interval_contains_the_frequency() {
    for (h, n) in [(0, 10), (3, 10), (10, 10), (50, 1000)] {
        let (lo, hi) = wilson(h, n, 1.96);
        let f = h as f64 / n as f64;
        assert!(lo <= f && f <= hi && (0.0..=1.0).contains(&lo) && hi <= 1.0);
    }
}

