//! The controlled deterministic equation `i u_t = Δu + λ|u|^{2σ}u + u·Φh`
//! (the skeleton), control energies, the Wiener-path rate function and the
//! nonlinearity-cancelling control.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::grid::{check_grids, free_group_apply, norm, Field, NormKind, RealField};
use crate::integrator::{simulate, SimParams, Trajectory};
use crate::noise::KernelOperator;
use num_complex::Complex64;

/// Deterministic (`ε = 0`) solve with control potential `Φh`.
///
/// Zero controls take exactly the uncontrolled code path.
pub fn skeleton_solve(
    u0: &Field,
    h: &ControlPath,
    params: &SimParams,
    phi: &KernelOperator,
) -> Result<Trajectory> {
    let params = SimParams {
        eps: 0.0,
        record_noise: false,
        ..params.clone()
    };
    let control = (!h.is_zero()).then_some(h);
    // no noise is drawn at ε = 0, so the stream is never touched
    let mut rng = crate::rng::stream(0, 0, 0);
    simulate(u0, &params, phi, control, &mut rng)
}

/// `½ Σ_k ‖h(t_k)‖² (t_{k+1} − t_k)`.
pub fn control_energy(h: &ControlPath) -> f64 {
    h.energy()
}

/// `I^W(∫Φh) = ½ inf{‖h'‖² : Φh' = Φh}`, i.e. the energy of the part of `h`
/// orthogonal to `ker Φ`.
pub fn wiener_rate(h: &ControlPath, phi: &KernelOperator) -> Result<f64> {
    check_grids(h.grid(), phi.grid())?;
    let projected = h
        .values()
        .iter()
        .map(|v| phi.project_off_kernel(v))
        .collect::<Result<Vec<_>>>()?;
    let p = ControlPath::new(h.knots().to_vec(), projected, h.end())?;
    Ok(p.energy())
}

/// A time-knotted real field path `f(t_k)`.
#[derive(Debug, Clone)]
pub struct FieldPath {
    pub knots: Vec<f64>,
    pub values: Vec<RealField>,
}

impl FieldPath {
    /// `f(t) = ∫₀ᵗ Φh(s) ds` at the knots of `h` and its end time.
    pub fn integrate(h: &ControlPath, phi: &KernelOperator) -> Result<FieldPath> {
        let mut knots = vec![0.0];
        let mut values = vec![RealField::zeros(h.grid())];
        let mut acc = RealField::zeros(h.grid());
        for (k, v) in h.values().iter().enumerate() {
            let dt = h.interval(k);
            let phv = phi.apply(v)?;
            for (a, b) in acc.values_mut().iter_mut().zip(phv.values()) {
                *a += b * dt;
            }
            knots.push(h.knots().get(k + 1).copied().unwrap_or(h.end()));
            values.push(acc.clone());
        }
        Ok(FieldPath { knots, values })
    }
}

/// Relative out-of-range tolerance for [`wiener_rate_of_path`].
pub const DEFAULT_RANGE_TOL: f64 = 1e-6;

/// `I^W(f)` for a knotted path: differentiates between knots, inverts `Φ` on
/// `(ker Φ)^⊥` and returns `+∞` when some derivative leaves the range of `Φ`
/// by more than `range_tol` (relative).
pub fn wiener_rate_of_path(f: &FieldPath, phi: &KernelOperator, range_tol: f64) -> Result<f64> {
    if f.knots.len() != f.values.len() || f.knots.len() < 2 {
        return Err(Error::InvalidControl("path needs matching knots and values, at least two".into()));
    }
    if f.knots[0] != 0.0 || f.knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidControl("path knots must start at 0 and increase".into()));
    }
    let scale = f.values.iter().map(|v| v.l2_norm()).fold(0.0, f64::max);
    if f.values[0].l2_norm() > 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidControl("path must vanish at t = 0".into()));
    }
    let mut energy = 0.0;
    for k in 0..f.knots.len() - 1 {
        let dt = f.knots[k + 1] - f.knots[k];
        let deriv = f.values[k + 1].sub(&f.values[k])?.scaled(1.0 / dt);
        if deriv.l2_norm() == 0.0 {
            continue;
        }
        let h = phi.pseudo_solve(&deriv)?;
        if phi.relative_residual(&h, &deriv)? > range_tol {
            return Ok(f64::INFINITY);
        }
        energy += 0.5 * h.l2_norm().powi(2) * dt;
    }
    Ok(energy)
}

/// Options of [`cancel_nonlinearity_control`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CancelOptions {
    /// Knot spacing of the control; defaults to the run's time step.
    #[serde(default)]
    pub knot_dt: Option<f64>,
    /// Relative residual above which the range condition is flagged.
    #[serde(default = "default_cancel_threshold")]
    pub residual_threshold: f64,
}

fn default_cancel_threshold() -> f64 {
    1e-3
}

impl Default for CancelOptions {
    fn default() -> Self {
        CancelOptions {
            knot_dt: None,
            residual_threshold: default_cancel_threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeStatus {
    Ok,
    Warning,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub knot_times: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub threshold: f64,
    pub status: RangeStatus,
    pub energy: f64,
}

/// The control with `Φh(t) = −|U(t)u₀|²` on `[0, 2T)`, which turns the cubic
/// focusing skeleton into the free evolution.
///
/// Each knot interval uses `|U|²` at its midpoint; the per-knot relative
/// residual of the least-squares inversion is reported.
pub fn cancel_nonlinearity_control(
    u0: &Field,
    horizon: f64,
    phi: &KernelOperator,
    params: &SimParams,
    opts: &CancelOptions,
) -> Result<(ControlPath, ResidualReport)> {
    if params.sigma != 1.0 || params.lambda != 1.0 {
        return Err(Error::InvalidParams(
            "the cancelling control requires a cubic focusing nonlinearity (sigma = 1, lambda = 1)".into(),
        ));
    }
    check_grids(u0.grid(), phi.grid())?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams(format!("horizon {horizon} must be positive")));
    }
    let end = 2.0 * horizon;
    let knot_dt = opts.knot_dt.unwrap_or(params.effective_dt());
    let m = ((end / knot_dt).round() as usize).max(1);
    let spacing = end / m as f64;
    let mut residuals = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    let mut knot_times = Vec::with_capacity(m);
    for k in 0..m {
        let t = k as f64 * spacing;
        let mid = t + 0.5 * spacing;
        let g = free_group_apply(u0, mid)?.modulus_squared().scaled(-1.0);
        let h = phi.pseudo_solve(&g)?;
        residuals.push(phi.relative_residual(&h, &g)?);
        values.push(h);
        knot_times.push(t);
    }
    let control = ControlPath::new(knot_times.clone(), values, end)?;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let report = ResidualReport {
        knot_times,
        max_residual,
        status: if max_residual > opts.residual_threshold {
            RangeStatus::Warning
        } else {
            RangeStatus::Ok
        },
        threshold: opts.residual_threshold,
        energy: control.energy(),
        residuals,
    };
    Ok((control, report))
}

/// `sup` over the recorded times of `‖a(t) − b(t)‖` for two snapshot records.
pub fn sup_deviation(a: &Trajectory, b: &Trajectory, kind: NormKind) -> Result<f64> {
    let (sa, sb) = match (&a.snapshots, &b.snapshots) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(Error::InvalidParams(
                "sup deviation needs snapshot recording on both trajectories".into(),
            ))
        }
    };
    let mut sup: f64 = 0.0;
    for (x, y) in sa.iter().zip(sb) {
        sup = sup.max(norm(&x.sub(y)?, kind)?);
    }
    Ok(sup)
}

/// `sup_t ‖S(t) − U(t)u₀‖` over the recorded snapshots of a skeleton run.
pub fn free_evolution_residual(traj: &Trajectory, u0: &Field, kind: NormKind) -> Result<f64> {
    let snaps = traj
        .snapshots
        .as_ref()
        .ok_or_else(|| Error::InvalidParams("residual needs snapshot recording".into()))?;
    let mut sup: f64 = 0.0;
    for (t, s) in traj.times.iter().zip(snaps) {
        let free = free_group_apply(u0, *t)?;
        sup = sup.max(norm(&s.sub(&free)?, kind)?);
    }
    Ok(sup)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub all_finite: bool,
}

/// Random perturbations of `(u₀, h)` and the resulting sup-in-time `H¹`
/// deviation of the skeleton, divided by the perturbation size
/// `‖δu‖_{H¹} + ‖δh‖_{L²(L²)}`.
pub fn skeleton_continuity_probe<R: Rng + ?Sized>(
    u0: &Field,
    h: &ControlPath,
    params: &SimParams,
    phi: &KernelOperator,
    probes: usize,
    du_size: f64,
    dh_energy: f64,
    rng: &mut R,
) -> Result<ContinuityReport> {
    let params = SimParams {
        record_snapshots: true,
        ..params.clone()
    };
    let base = skeleton_solve(u0, h, &params, phi)?;
    let grid = u0.grid().clone();
    let smooth = |rng: &mut R| -> RealField {
        let modes = 4usize;
        let coefs: Vec<(f64, f64)> = (0..modes)
            .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let l = grid.length();
        RealField::from_fn(&grid, |x| {
            coefs
                .iter()
                .enumerate()
                .map(|(m, (a, b))| {
                    let k = 2.0 * std::f64::consts::PI * m as f64 / l;
                    x.iter().map(|&xi| a * (k * xi).cos() + b * (k * xi).sin()).sum::<f64>()
                })
                .sum()
        })
    };
    let mut ratios = Vec::with_capacity(probes);
    for _ in 0..probes {
        let re = smooth(rng);
        let im = smooth(rng);
        let du_raw = Field::new(
            grid.clone(),
            re.values()
                .iter()
                .zip(im.values())
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        )?;
        let du = du_raw.scaled(du_size / norm(&du_raw, NormKind::H1)?);
        let dh_vals: Vec<RealField> = h.values().iter().map(|_| smooth(rng)).collect();
        let dh_raw = ControlPath::new(h.knots().to_vec(), dh_vals, h.end())?;
        let dh_scale = (dh_energy / dh_raw.energy().max(f64::MIN_POSITIVE)).sqrt();
        let dh = dh_raw.scaled(dh_scale);
        let perturbed_h = ControlPath::new(
            h.knots().to_vec(),
            h.values()
                .iter()
                .zip(dh.values())
                .map(|(a, b)| {
                    RealField::new(
                        grid.clone(),
                        a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect(),
                    )
                })
                .collect::<Result<Vec<_>>>()?,
            h.end(),
        )?;
        let pert = skeleton_solve(&u0.add(&du)?, &perturbed_h, &params, phi)?;
        let dev = sup_deviation(&base, &pert, NormKind::H1)?;
        let size = du_size + (2.0 * dh.energy()).sqrt();
        ratios.push(dev / size);
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ContinuityReport {
        all_finite: ratios.iter().all(|r| r.is_finite()),
        max_ratio,
        ratios,
    })
}

/// Convenience: an `Arc`-free zero control on the grid of `u0`.
pub fn zero_control(u0: &Field, end: f64) -> Result<ControlPath> {
    ControlPath::zero(&Arc::clone(u0.grid()), end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn sech_field(g: &Arc<Grid>) -> Field {
        let c = g.length() / 2.0;
        Field::from_fn(g, |x| Complex64::new(1.0 / (x[0] - c).cosh(), 0.0))
    }

    #[test]
    fn zero_control_matches_uncontrolled_run_bitwise() {
        let g = Grid::new(1, 64, 20.0).unwrap();
        let phi = KernelOperator::gaussian(&g, 1.0, 1.0, 2.0).unwrap();
        let u0 = sech_field(&g);
        let params = SimParams {
            dt: 0.01,
            horizon: 0.2,
            threshold: 100.0,
            ..SimParams::default()
        };
        let h = ControlPath::zero(&g, 0.2).unwrap();
        let a = skeleton_solve(&u0, &h, &params, &phi).unwrap();
        let b = simulate(&u0, &params, &phi, None, &mut crate::rng::stream(5, 5, 5)).unwrap();
        for (x, y) in a.final_state.values().iter().zip(b.final_state.values()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }

    #[test]
    fn energy_of_constant_control() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let gval = RealField::from_fn(&g, |x| x[0].sin());
        let h = ControlPath::uniform(5, 1.5, |_, _| gval.clone()).unwrap();
        let expect = 0.5 * gval.l2_norm().powi(2) * 1.5;
        assert!((control_energy(&h) - expect).abs() < 1e-13 * expect);
    }

    #[test]
    fn cancel_control_of_zero_data_is_zero() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let phi = KernelOperator::gaussian(&g, 0.3, 1.0, 2.0).unwrap();
        let params = SimParams {
            dt: 0.1,
            ..SimParams::default()
        };
        let (h, rep) =
            cancel_nonlinearity_control(&Field::zeros(&g), 0.5, &phi, &params, &CancelOptions::default())
                .unwrap();
        assert!(h.is_zero());
        assert!(rep.residuals.iter().all(|&r| r == 0.0));
        assert_eq!(rep.status, RangeStatus::Ok);
    }

    #[test]
    fn cancel_control_requires_cubic_focusing() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let phi = KernelOperator::gaussian(&g, 0.3, 1.0, 2.0).unwrap();
        let params = SimParams {
            sigma: 2.0,
            ..SimParams::default()
        };
        assert!(cancel_nonlinearity_control(&sech_field(&g), 0.5, &phi, &params, &CancelOptions::default())
            .is_err());
    }

    #[test]
    fn wiener_rate_of_zero_path() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let phi = KernelOperator::gaussian(&g, 0.3, 1.0, 2.0).unwrap();
        let f = FieldPath {
            knots: vec![0.0, 0.5, 1.0],
            values: vec![RealField::zeros(&g); 3],
        };
        assert_eq!(wiener_rate_of_path(&f, &phi, DEFAULT_RANGE_TOL).unwrap(), 0.0);
        let mut bad = f.clone();
        bad.values[0] = RealField::from_fn(&g, |_| 1.0);
        assert!(wiener_rate_of_path(&bad, &phi, DEFAULT_RANGE_TOL).is_err());
    }

    #[test]
    fn path_orthogonal_to_range_has_infinite_rate() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let phi_f = RealField::from_fn(&g, |x| (-(x[0] - 2.0).powi(2)).exp());
        let psi = RealField::from_fn(&g, |_| 1.0);
        let phi = KernelOperator::rank_r(&g, vec![(phi_f.clone(), psi)], 2.0).unwrap();
        // range is span{phi_f}; use a direction orthogonal to it
        let w = RealField::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0] / 4.0).sin());
        let c = w.inner(&phi_f).unwrap() / phi_f.inner(&phi_f).unwrap();
        let orth = w.sub(&phi_f.scaled(c)).unwrap();
        let f = FieldPath {
            knots: vec![0.0, 1.0],
            values: vec![RealField::zeros(&g), orth],
        };
        assert_eq!(wiener_rate_of_path(&f, &phi, DEFAULT_RANGE_TOL).unwrap(), f64::INFINITY);
    }
}
