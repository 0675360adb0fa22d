use num_complex::Complex64;
use snls_core::control::ControlPath;
use snls_core::events::{EventSpec, TubeReference};
use snls_core::grid::{Field, Grid, NormKind, RealField};
use snls_core::integrator::SimParams;
use snls_core::mc::{estimate_is, estimate_is_mixture, estimate_naive, ldp_curve};
use snls_core::noise::KernelOperator;
use snls_core::rng::StreamFactory;

struct Setup {
    u0: Field,
    phi: KernelOperator,
    params: SimParams,
    psi: RealField,
}

fn setup() -> Setup {
    let g = Grid::new(1, 32, 20.0).unwrap();
    let u0 = Field::from_fn(&g, |x| Complex64::new(2f64.sqrt() / (x[0] - 10.0).cosh(), 0.0));
    let a = RealField::from_fn(&g, |x| 0.3 * (-(x[0] - 11.0).powi(2) / 2.0).exp());
    let psi = RealField::from_fn(&g, |_| 1.0 / 20f64.sqrt());
    let phi = KernelOperator::rank_r(&g, vec![(a, psi.clone())], 2.0).unwrap();
    let params = SimParams { eps: 0.5, dt: 0.05, horizon: 1.0, ..SimParams::default() };
    Setup { u0, phi, params, psi }
}

fn event() -> EventSpec {
    EventSpec::TubeExit { reference: TubeReference::Deterministic, rho: 0.5, norm: NormKind::L2 }
}

#[test]
fn zero_shift_reproduces_naive_bitwise() {
    let s = setup();
    let f = StreamFactory::new(5, "zero");
    let naive = estimate_naive(&s.u0, &s.params, &s.phi, &event(), 200, &f, None).unwrap();
    let zero = ControlPath::zero(s.u0.grid(), 1.0).unwrap();
    let is = estimate_is(&s.u0, &s.params, &s.phi, &event(), &zero, 200, &f, None).unwrap();
    assert_eq!(naive.p_hat.to_bits(), is.p_hat.to_bits());
    assert_eq!(naive.hits, is.hits);
    assert_eq!(is.weight_mean, 1.0);
}

#[test]
fn worker_count_does_not_change_results() {
    let s = setup();
    let f = StreamFactory::new(7, "workers");
    let h = ControlPath::uniform(4, 1.0, |_, _| s.psi.scaled(0.8)).unwrap();
    let zero = ControlPath::zero(s.u0.grid(), 1.0).unwrap();
    let a = estimate_is_mixture(&s.u0, &s.params, &s.phi, &event(), &[h.clone(), zero.clone()], 120, &f, Some(1)).unwrap();
    let b = estimate_is_mixture(&s.u0, &s.params, &s.phi, &event(), &[h, zero], 120, &f, Some(4)).unwrap();
    assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
    assert_eq!(a.weight_mean.to_bits(), b.weight_mean.to_bits());
}

#[test]
fn likelihood_ratio_has_unit_mean() {
    let s = setup();
    let f = StreamFactory::new(9, "lr");
    let h = ControlPath::uniform(4, 1.0, |_, _| s.psi.scaled(0.6)).unwrap();
    let zero = ControlPath::zero(s.u0.grid(), 1.0).unwrap();
    let est = estimate_is_mixture(&s.u0, &s.params, &s.phi, &EventSpec::Everything, &[h, zero], 2000, &f, None).unwrap();
    assert!((est.weight_mean - 1.0).abs() <= 3.0 * est.weight_stderr, "{} {}", est.weight_mean, est.weight_stderr);
    // the whole space is hit with the same weights
    assert_eq!(est.p_hat.to_bits(), est.weight_mean.to_bits());
}

#[test]
fn noiseless_estimate_is_an_indicator() {
    let s = setup();
    let p = SimParams { eps: 0.0, ..s.params.clone() };
    let f = StreamFactory::new(1, "det");
    let e = estimate_naive(&s.u0, &p, &s.phi, &event(), 100, &f, None).unwrap();
    assert!(e.p_hat == 0.0 || e.p_hat == 1.0);
    assert_eq!(e.stderr, 0.0);
}

#[test]
fn ldp_curve_requires_decreasing_eps() {
    let s = setup();
    let f = StreamFactory::new(1, "ldp");
    assert!(ldp_curve(&s.u0, &s.params, &s.phi, &event(), &[], &[0.25, 0.5], 100, None, &f, None).is_err());
    let rows = ldp_curve(&s.u0, &s.params, &s.phi, &event(), &[], &[0.5, 0.25], 100, Some(1.0), &f, None).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.gap.is_some()));
}
