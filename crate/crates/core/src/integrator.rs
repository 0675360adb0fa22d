//! Strang-split integrator for
//! `i du = (Δu + λ|u|^{2σ}u + u·V) dt + √ε u ∘ dW`
//! with exact-phase potential substeps, approximate blow-up time detection
//! and invariant recording.
//!
//! The potential substep `u ← u·exp(−i[λ|u|^{2σ}dt + V dt + √ε ΔW])` is the
//! exact Stratonovich flow of the multiplicative part for real `W`, so the Itô
//! drift `−(iε/2) F_Φ u` needs no separate term and `|u(x)|` is untouched by
//! it. Every substep is an `L²` isometry.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::grid::{admissible_rate, check_grids, gradient, hamiltonian, norm, Field, Grid, NormKind, RealField, TimeExponent};
use crate::noise::{KernelOperator, NoiseIncrement};

/// The near-blow-up guard fires when `‖u‖_{H¹}` exceeds this multiple of `R`.
pub const GUARD_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Focusing `+1`, defocusing `−1`, `0` disables the nonlinearity.
    pub lambda: f64,
    pub sigma: f64,
    pub eps: f64,
    pub dt: f64,
    /// Horizon `T`.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Blow-up threshold `R` on the `H¹` norm.
    #[serde(rename = "R")]
    pub threshold: f64,
    /// Exponent of the monitored `L^{r(p)} W^{1,p}` integral.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Optional co-trigger on `(∫‖u‖^{r(p)}_{W^{1,p}} dt)^{1/r(p)}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wp_threshold: Option<f64>,
    #[serde(default)]
    pub dealias: bool,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub record_snapshots: bool,
    #[serde(default)]
    pub record_noise: bool,
}

fn default_record_every() -> usize {
    1
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            lambda: 1.0,
            sigma: 1.0,
            eps: 0.0,
            dt: 1e-3,
            horizon: 1.0,
            threshold: 1e3,
            p: None,
            wp_threshold: None,
            dealias: false,
            record_every: 1,
            record_snapshots: false,
            record_noise: false,
        }
    }
}

impl SimParams {
    /// All violations of the parameter invariants for dimension `d`.
    pub fn violations(&self, d: usize) -> Vec<String> {
        let mut out = Vec::new();
        if ![-1.0, 0.0, 1.0].contains(&self.lambda) {
            out.push(format!("lambda = {} must be +1, -1 or 0", self.lambda));
        }
        if !(self.sigma >= 0.5) {
            out.push(format!("sigma = {} violates sigma >= 1/2", self.sigma));
        }
        if d >= 3 && !(self.sigma < 2.0 / (d as f64 - 2.0)) {
            out.push(format!(
                "sigma = {} violates sigma < 2/(d-2) = {} for d = {d}",
                self.sigma,
                2.0 / (d as f64 - 2.0)
            ));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            out.push(format!("eps = {} must be >= 0", self.eps));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            out.push(format!("dt = {} must be positive", self.dt));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            out.push(format!("T = {} must be positive", self.horizon));
        } else if self.dt > self.horizon {
            out.push(format!("dt = {} exceeds T = {}", self.dt, self.horizon));
        }
        if !(self.threshold > 0.0) {
            out.push(format!("R = {} must be positive", self.threshold));
        }
        if let Some(p) = self.p {
            if let Err(e) = admissible_rate(p, d) {
                out.push(format!("p: {e}"));
            }
        }
        if self.wp_threshold.is_some() && self.p.is_none() {
            out.push("wp_threshold requires p".into());
        }
        if self.record_every == 0 {
            out.push("record_every must be >= 1".into());
        }
        out
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let v = self.violations(d);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v.join("; ")))
        }
    }

    /// Number of steps; `dt` is shrunk so that the steps tile `[0, T]`.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    pub fn effective_dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }
}

/// Approximate blow-up time, or censoring at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BlowupTime {
    Finite { t: f64 },
    Censored { horizon: f64 },
}

impl BlowupTime {
    pub fn is_censored(&self) -> bool {
        matches!(self, BlowupTime::Censored { .. })
    }

    /// The blow-up time, `+∞` when censored.
    pub fn value(&self) -> f64 {
        match *self {
            BlowupTime::Finite { t } => t,
            BlowupTime::Censored { .. } => f64::INFINITY,
        }
    }
}

/// Recorded path of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub h1norm: Vec<f64>,
    pub hamiltonian: Vec<f64>,
    /// States at the recorded times, when enabled.
    pub snapshots: Option<Vec<Field>>,
    pub final_state: Field,
    pub final_time: f64,
    pub tau_r: BlowupTime,
    pub threshold: f64,
    /// White coordinates of every step, in order.
    pub noise_log: Option<Vec<Vec<f64>>>,
    /// Running `∫‖u‖^{r(p)}_{W^{1,p}} dt` (zero when not monitored).
    pub wp_integral: f64,
    /// Largest `H¹` norm over every step taken (not only recorded ones).
    pub max_h1: f64,
    pub dt: f64,
    pub steps_taken: usize,
}

/// Time-step machinery shared by every step of a run.
struct Stepper {
    grid: Arc<Grid>,
    half_phase: Vec<Complex64>,
    lambda: f64,
    sigma: f64,
    sqrt_eps: f64,
    dt: f64,
    dealias_mask: Option<Vec<bool>>,
}

enum StepOutcome {
    Ok { h1: f64 },
    Overflow,
}

impl Stepper {
    fn new(grid: &Arc<Grid>, params: &SimParams, dt: f64) -> Stepper {
        let half_phase = grid
            .k_squared()
            .iter()
            .map(|&k2| Complex64::from_polar(1.0, 0.5 * k2 * dt))
            .collect();
        let integer_sigma = params.sigma.fract() == 0.0;
        let dealias_mask = (params.dealias && integer_sigma).then(|| {
            let n = grid.n();
            let cutoff = n / 3;
            (0..grid.len())
                .map(|m| {
                    grid.multi_index(m).iter().all(|&i| {
                        let signed = if i <= n / 2 { i } else { n - i };
                        signed <= cutoff
                    })
                })
                .collect()
        });
        Stepper {
            grid: grid.clone(),
            half_phase,
            lambda: params.lambda,
            sigma: params.sigma,
            sqrt_eps: params.eps.sqrt(),
            dt,
            dealias_mask,
        }
    }

    fn half_linear(&self, spec: &mut [Complex64]) {
        for (c, p) in spec.iter_mut().zip(&self.half_phase) {
            *c *= p;
        }
    }

    /// Advances `values` (physical space) by one step in place.
    fn advance(
        &self,
        values: &mut [Complex64],
        potential: Option<&RealField>,
        dw: Option<&RealField>,
    ) -> StepOutcome {
        let grid = &self.grid;
        grid.forward(values);
        self.half_linear(values);
        grid.inverse(values);

        let mut theta: Vec<f64> = if self.lambda != 0.0 {
            values
                .iter()
                .map(|c| {
                    let m2 = c.norm_sqr();
                    if self.sigma == 1.0 {
                        m2
                    } else {
                        m2.powf(self.sigma)
                    }
                })
                .collect()
        } else {
            vec![0.0; values.len()]
        };
        if theta.iter().any(|t| !t.is_finite()) {
            return StepOutcome::Overflow;
        }
        if let Some(mask) = &self.dealias_mask {
            let mut spec: Vec<Complex64> = theta.iter().map(|&t| Complex64::new(t, 0.0)).collect();
            grid.forward(&mut spec);
            for (c, &keep) in spec.iter_mut().zip(mask) {
                if !keep {
                    *c = Complex64::new(0.0, 0.0);
                }
            }
            grid.inverse(&mut spec);
            for (t, c) in theta.iter_mut().zip(spec) {
                *t = c.re;
            }
        }
        for t in theta.iter_mut() {
            *t *= self.lambda * self.dt;
        }
        if let Some(v) = potential {
            for (t, p) in theta.iter_mut().zip(v.values()) {
                *t += p * self.dt;
            }
        }
        if let Some(w) = dw {
            for (t, x) in theta.iter_mut().zip(w.values()) {
                *t += self.sqrt_eps * x;
            }
        }
        for (c, t) in values.iter_mut().zip(&theta) {
            *c *= Complex64::from_polar(1.0, -t);
        }

        grid.forward(values);
        self.half_linear(values);
        let h1 = grid.spectral_energy(values, |k2| 1.0 + k2).sqrt();
        grid.inverse(values);
        if values.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return StepOutcome::Overflow;
        }
        StepOutcome::Ok { h1 }
    }
}

/// One Strang step. `control` is the real potential `Φh` for this step.
///
/// A non-finite nonlinearity is reported as [`Error::BlowUp`] instead of
/// propagating NaN.
pub fn step<R: Rng + ?Sized>(
    u: &Field,
    params: &SimParams,
    phi: &KernelOperator,
    control: Option<&RealField>,
    rng: &mut R,
) -> Result<(Field, NoiseIncrement)> {
    u.ensure_finite()?;
    check_grids(u.grid(), phi.grid())?;
    if let Some(c) = control {
        check_grids(c.grid(), u.grid())?;
    }
    let grid = u.grid();
    let stepper = Stepper::new(grid, params, params.dt);
    let inc = if params.eps > 0.0 {
        phi.sample_increment(params.dt, rng)?
    } else {
        NoiseIncrement::zero(grid, params.dt)
    };
    let mut values = u.values().to_vec();
    let dw = (params.eps > 0.0).then_some(&inc.dw);
    match stepper.advance(&mut values, control, dw) {
        StepOutcome::Ok { .. } => Ok((Field::new(grid.clone(), values)?, inc)),
        StepOutcome::Overflow => Err(Error::BlowUp(0.0)),
    }
}

/// Potentials `Φh_k` for every knot of a control.
#[derive(Debug, Clone)]
pub struct Forcing<'a> {
    pub control: &'a ControlPath,
    pub potentials: Vec<RealField>,
}

impl<'a> Forcing<'a> {
    pub fn new(control: &'a ControlPath, phi: &KernelOperator) -> Result<Forcing<'a>> {
        check_grids(control.grid(), phi.grid())?;
        let potentials = control
            .values()
            .iter()
            .map(|h| phi.apply(h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Forcing {
            control,
            potentials,
        })
    }

    /// Potential for the step `[t, t + dt)`, looked up at its midpoint.
    pub fn potential_for_step(&self, t: f64, dt: f64) -> Option<&RealField> {
        self.control
            .index_at(t + 0.5 * dt)
            .map(|k| &self.potentials[k])
    }
}

/// Start time of step `n`; shared by the integrator and the reweighting code.
pub fn step_start(n: usize, dt: f64) -> f64 {
    n as f64 * dt
}

/// Integrates until `T` or until `‖u‖_{H¹}` first reaches `R`.
pub fn simulate<R: Rng + ?Sized>(
    u0: &Field,
    params: &SimParams,
    phi: &KernelOperator,
    control: Option<&ControlPath>,
    rng: &mut R,
) -> Result<Trajectory> {
    let forcing = control.map(|c| Forcing::new(c, phi)).transpose()?;
    simulate_forced(u0, params, phi, forcing.as_ref(), rng)
}

/// [`simulate`] with precomputed control potentials.
pub fn simulate_forced<R: Rng + ?Sized>(
    u0: &Field,
    params: &SimParams,
    phi: &KernelOperator,
    forcing: Option<&Forcing<'_>>,
    rng: &mut R,
) -> Result<Trajectory> {
    let grid = u0.grid().clone();
    params.validate(grid.dim())?;
    u0.ensure_finite()?;
    check_grids(&grid, phi.grid())?;
    let h1_0 = norm(u0, NormKind::H1)?;
    if !(params.threshold > h1_0) {
        return Err(Error::InvalidParams(format!(
            "R = {} must exceed the initial H1 norm {h1_0}",
            params.threshold
        )));
    }
    let wp_rate = match params.p {
        Some(p) => Some((p, admissible_rate(p, grid.dim())?)),
        None => None,
    };

    let steps = params.steps();
    let dt = params.effective_dt();
    let stepper = Stepper::new(&grid, params, dt);
    let noisy = params.eps > 0.0;

    let mut traj = Trajectory {
        times: Vec::new(),
        mass: Vec::new(),
        h1norm: Vec::new(),
        hamiltonian: Vec::new(),
        snapshots: params.record_snapshots.then(Vec::new),
        final_state: u0.clone(),
        final_time: 0.0,
        tau_r: BlowupTime::Censored {
            horizon: params.horizon,
        },
        threshold: params.threshold,
        noise_log: params.record_noise.then(Vec::new),
        wp_integral: 0.0,
        max_h1: h1_0,
        dt,
        steps_taken: 0,
    };
    let record = |traj: &mut Trajectory, u: &Field, t: f64, h1: f64| -> Result<()> {
        traj.times.push(t);
        traj.mass.push(norm(u, NormKind::L2)?);
        traj.h1norm.push(h1);
        traj.hamiltonian.push(hamiltonian(u, params.lambda, params.sigma)?);
        if let Some(s) = traj.snapshots.as_mut() {
            s.push(u.clone());
        }
        Ok(())
    };
    record(&mut traj, u0, 0.0, h1_0)?;

    let mut u = u0.clone();
    let mut scratch = u0.values().to_vec();
    for n in 0..steps {
        let t = step_start(n, dt);
        let t_next = if n + 1 == steps {
            params.horizon
        } else {
            step_start(n + 1, dt)
        };
        let dw = if noisy {
            let inc = phi.sample_increment(dt, rng)?;
            if let Some(log) = traj.noise_log.as_mut() {
                log.push(inc.coords);
            }
            Some(inc.dw)
        } else {
            None
        };
        let potential = forcing.and_then(|f| f.potential_for_step(t, dt));
        scratch.copy_from_slice(u.values());
        let outcome = stepper.advance(&mut scratch, potential, dw.as_ref());
        traj.steps_taken = n + 1;
        let h1 = match outcome {
            StepOutcome::Overflow => {
                traj.tau_r = BlowupTime::Finite { t };
                break;
            }
            StepOutcome::Ok { h1 } => h1,
        };
        if !h1.is_finite() || h1 > GUARD_FACTOR * params.threshold {
            traj.tau_r = BlowupTime::Finite { t };
            break;
        }
        u.values_mut().copy_from_slice(&scratch);
        traj.final_time = t_next;
        traj.max_h1 = traj.max_h1.max(h1);

        let mut triggered = h1 >= params.threshold;
        if let Some((p, rate)) = wp_rate {
            if let TimeExponent::Finite(r) = rate {
                let w = norm(&u, NormKind::W1p { p })?;
                traj.wp_integral += w.powf(r) * dt;
                if let Some(limit) = params.wp_threshold {
                    triggered |= traj.wp_integral.powf(1.0 / r) >= limit;
                }
            }
        }
        let last = n + 1 == steps;
        if triggered || last || (n + 1) % params.record_every == 0 {
            record(&mut traj, &u, t_next, h1)?;
        }
        if triggered {
            traj.tau_r = BlowupTime::Finite { t: t_next };
            break;
        }
    }
    traj.final_state = u;
    Ok(traj)
}

/// The approximate blow-up time recorded on a trajectory.
pub fn blowup_time(traj: &Trajectory) -> BlowupTime {
    traj.tau_r
}

/// First recorded time at which `‖u‖_{H¹} ≥ r`.
///
/// For `r` above the run's own threshold the answer saturates at the
/// recorded stop time, which keeps the result nondecreasing in `r`.
pub fn blowup_time_at(traj: &Trajectory, r: f64) -> BlowupTime {
    if r > traj.threshold {
        return traj.tau_r;
    }
    traj.times
        .iter()
        .zip(&traj.h1norm)
        .find(|(_, &h)| h >= r)
        .map(|(&t, _)| BlowupTime::Finite { t })
        .unwrap_or(traj.tau_r)
}

/// Gradient-based `H¹` seminorm check used by tests and diagnostics.
pub fn h1_from_gradient(u: &Field) -> f64 {
    let dv = u.grid().cell_volume();
    let mut acc: f64 = u.values().iter().map(|c| c.norm_sqr()).sum();
    for g in gradient(u) {
        acc += g.values().iter().map(|c| c.norm_sqr()).sum::<f64>();
    }
    (acc * dv).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::free_group_apply;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, l: f64) -> (Arc<Grid>, KernelOperator) {
        let g = Grid::new(1, n, l).unwrap();
        let phi = KernelOperator::gaussian(&g, 1.0, 1.0, 2.0).unwrap();
        (g, phi)
    }

    fn bump(g: &Arc<Grid>, amp: f64) -> Field {
        let c = g.length() / 2.0;
        Field::from_fn(g, |x| Complex64::new(amp * (-(x[0] - c).powi(2)).exp(), 0.0))
    }

    #[test]
    fn params_validation_lists_everything() {
        let p = SimParams {
            sigma: 0.3,
            dt: 2.0,
            horizon: 1.0,
            record_every: 0,
            ..SimParams::default()
        };
        assert_eq!(p.violations(1).len(), 3);
        let p3 = SimParams {
            sigma: 2.0,
            ..SimParams::default()
        };
        assert_eq!(p3.violations(3).len(), 1);
        assert!(p3.violations(2).is_empty());
    }

    #[test]
    fn linear_deterministic_step_is_free_evolution() {
        let (g, phi) = setup(64, 20.0);
        let u = bump(&g, 1.0);
        let params = SimParams {
            lambda: 0.0,
            dt: 0.05,
            ..SimParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (v, _) = step(&u, &params, &phi, None, &mut rng).unwrap();
        let w = free_group_apply(&u, 0.05).unwrap();
        for (a, b) in v.values().iter().zip(w.values()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn noisy_step_preserves_mass() {
        let (g, phi) = setup(64, 20.0);
        let u = bump(&g, 1.3);
        let params = SimParams {
            eps: 0.7,
            dt: 0.01,
            ..SimParams::default()
        };
        let m0 = norm(&u, NormKind::L2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = u;
        for _ in 0..20 {
            v = step(&v, &params, &phi, None, &mut rng).unwrap().0;
            let m = norm(&v, NormKind::L2).unwrap();
            assert!((m - m0).abs() <= 1e-13 * m0);
        }
    }

    #[test]
    fn overflow_is_a_blowup_signal() {
        let (g, phi) = setup(16, 4.0);
        let mut u = Field::zeros(&g);
        u.values_mut()[2] = Complex64::new(1e200, 0.0);
        let params = SimParams {
            sigma: 2.0,
            ..SimParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(step(&u, &params, &phi, None, &mut rng), Err(Error::BlowUp(_))));
    }

    #[test]
    fn defocusing_is_censored() {
        let (g, phi) = setup(128, 20.0);
        let u = bump(&g, 3.0);
        let params = SimParams {
            lambda: -1.0,
            sigma: 2.0,
            dt: 1e-3,
            horizon: 0.5,
            threshold: 100.0,
            record_every: 50,
            ..SimParams::default()
        };
        let traj = simulate(&u, &params, &phi, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(blowup_time(&traj).is_censored());
        assert_eq!(traj.final_time, 0.5);
    }

    #[test]
    fn threshold_must_exceed_initial_norm() {
        let (g, phi) = setup(64, 20.0);
        let u = bump(&g, 1.0);
        let params = SimParams {
            threshold: 0.1,
            ..SimParams::default()
        };
        assert!(simulate(&u, &params, &phi, None, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn records_follow_the_cadence() {
        let (g, phi) = setup(64, 20.0);
        let u = bump(&g, 1.0);
        let params = SimParams {
            dt: 0.01,
            horizon: 0.1,
            record_every: 3,
            record_snapshots: true,
            ..SimParams::default()
        };
        let traj = simulate(&u, &params, &phi, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(traj.times.len(), 1 + 3 + 1);
        assert_eq!(*traj.times.last().unwrap(), 0.1);
        assert_eq!(traj.snapshots.as_ref().unwrap().len(), traj.times.len());
    }

    #[test]
    fn spectral_h1_matches_gradient_quadrature() {
        let (g, _) = setup(64, 20.0);
        let u = bump(&g, 1.0);
        let a = norm(&u, NormKind::H1).unwrap();
        let b = h1_from_gradient(&u);
        assert!((a - b).abs() < 1e-10 * a);
    }
}
