//! Naive and importance-sampled Monte Carlo for path events.
//!
//! The importance sampler simulates the dynamics shifted by a control
//! potential `Φh dt` and reweights each path by the exact discrete
//! likelihood ratio, computed from the white coordinates that drove it.
//! A list of controls is sampled as an equal-weight mixture (stratified by
//! trajectory index) and reweighted with the mixture density.

use serde::{Deserialize, Serialize};

use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::events::{EventSpec, PreparedEvent};
use crate::grid::Field;
use crate::integrator::{simulate_forced, step_start, Forcing, SimParams, Trajectory};
use crate::noise::KernelOperator;
use crate::parallel::{in_pool, ordered_range};
use crate::rng::StreamFactory;

pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub hits: usize,
    /// Effective sample size of the weighted hits (equal to `hits` for naive MC).
    pub ess: f64,
    pub eps: f64,
    /// Mean likelihood ratio over all paths and its standard error.
    pub weight_mean: f64,
    pub weight_stderr: f64,
    pub event: serde_json::Value,
}

impl MCEstimate {
    pub fn eps_log_p(&self) -> f64 {
        self.eps * self.p_hat.ln()
    }
}

/// Per-path outcome, reduced in index order.
#[derive(Debug, Clone, Copy)]
struct Sample {
    hit: bool,
    weight: f64,
}

fn reduce(samples: &[Sample], eps: f64, event: &EventSpec) -> MCEstimate {
    let n = samples.len() as f64;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut wsum = 0.0;
    let mut wsum2 = 0.0;
    let mut hits = 0usize;
    for s in samples {
        let y = if s.hit { s.weight } else { 0.0 };
        sum += y;
        sum2 += y * y;
        wsum += s.weight;
        wsum2 += s.weight * s.weight;
        hits += usize::from(s.hit);
    }
    let mean = sum / n;
    let var = ((sum2 / n) - mean * mean).max(0.0) * n / (n - 1.0);
    let wmean = wsum / n;
    let wvar = ((wsum2 / n) - wmean * wmean).max(0.0) * n / (n - 1.0);
    MCEstimate {
        p_hat: mean,
        stderr: (var / n).sqrt(),
        n: samples.len(),
        hits,
        ess: if sum2 > 0.0 { sum * sum / sum2 } else { 0.0 },
        eps,
        weight_mean: wmean,
        weight_stderr: (wvar / n).sqrt(),
        event: event.describe(),
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::InvalidParams(format!("N = {n} must be >= {MIN_SAMPLES}")));
    }
    Ok(())
}

fn run_params(params: &SimParams, event: &PreparedEvent, record_noise: bool) -> SimParams {
    SimParams {
        record_snapshots: params.record_snapshots || event.needs_snapshots(),
        record_noise,
        ..params.clone()
    }
}

/// `N` independent runs; `p̂` is the hit fraction.
pub fn estimate_naive(
    u0: &Field,
    params: &SimParams,
    phi: &KernelOperator,
    event: &EventSpec,
    n: usize,
    streams: &StreamFactory,
    workers: Option<usize>,
) -> Result<MCEstimate> {
    check_n(n)?;
    let prepared = event.prepare(u0, params, phi)?;
    let p = run_params(params, &prepared, false);
    let samples = in_pool(workers, || {
        ordered_range(n, |i| -> Result<Sample> {
            let mut rng = streams.stream(i as u64);
            let traj = simulate_forced(u0, &p, phi, None, &mut rng)?;
            Ok(Sample {
                hit: prepared.contains(&traj)?,
                weight: 1.0,
            })
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(reduce(&samples, params.eps, event))
}

/// Log-density of the shifted law of component `h` relative to the
/// unshifted one, per step: `Σ_j a_j ξ'_j − ½|a|²` with
/// `a_j = h_j √dv √dt / √ε` and `ξ'` the unshifted white coordinates.
struct Shift<'a> {
    forcing: Forcing<'a>,
}

impl Shift<'_> {
    /// `a` for the step starting at `t` (empty when the control is off).
    fn coefficients(&self, t: f64, dt: f64, eps: f64, dv: f64) -> Option<Vec<f64>> {
        let h = self.forcing.control.value_at(t + 0.5 * dt)?;
        let c = (dv * dt / eps).sqrt();
        Some(h.values().iter().map(|x| x * c).collect())
    }
}

/// Log-likelihood ratios `log dQ_j/dP` of every mixture component along a
/// path driven by component `c` with logged coordinates `ξ`.
fn log_ratios(shifts: &[Shift<'_>], c: usize, log: &[Vec<f64>], dt: f64, eps: f64, dv: f64) -> Vec<f64> {
    let mut out = vec![0.0; shifts.len()];
    for (k, xi) in log.iter().enumerate() {
        let t = step_start(k, dt);
        let own = shifts[c].coefficients(t, dt, eps, dv);
        // unshifted coordinates ξ' = ξ + a_c
        let xi_p: Vec<f64> = match &own {
            Some(a) => xi.iter().zip(a).map(|(x, y)| x + y).collect(),
            None => xi.clone(),
        };
        for (j, s) in shifts.iter().enumerate() {
            let a = if j == c { own.clone() } else { s.coefficients(t, dt, eps, dv) };
            if let Some(a) = a {
                let dot: f64 = a.iter().zip(&xi_p).map(|(x, y)| x * y).sum();
                let sq: f64 = a.iter().map(|x| x * x).sum();
                out[j] += dot - 0.5 * sq;
            }
        }
    }
    out
}

/// Importance sampling with the single control `h`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_is(
    u0: &Field,
    params: &SimParams,
    phi: &KernelOperator,
    event: &EventSpec,
    h: &ControlPath,
    n: usize,
    streams: &StreamFactory,
    workers: Option<usize>,
) -> Result<MCEstimate> {
    estimate_is_mixture(u0, params, phi, event, std::slice::from_ref(h), n, streams, workers)
}

/// Importance sampling with an equal-weight mixture of shifted laws.
///
/// Trajectory `i` is driven by control `i mod K`; its weight is
/// `1 / (K⁻¹ Σ_j dQ_j/dP)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_is_mixture(
    u0: &Field,
    params: &SimParams,
    phi: &KernelOperator,
    event: &EventSpec,
    controls: &[ControlPath],
    n: usize,
    streams: &StreamFactory,
    workers: Option<usize>,
) -> Result<MCEstimate> {
    check_n(n)?;
    if !(params.eps > 0.0) {
        return Err(Error::InvalidParams("importance sampling needs eps > 0".into()));
    }
    if controls.is_empty() {
        return Err(Error::InvalidControl("importance sampling needs at least one control".into()));
    }
    let prepared = event.prepare(u0, params, phi)?;
    let p = run_params(params, &prepared, true);
    let shifts = controls
        .iter()
        .map(|h| Forcing::new(h, phi).map(|forcing| Shift { forcing }))
        .collect::<Result<Vec<_>>>()?;
    let k = shifts.len() as f64;
    let dv = u0.grid().cell_volume();
    let dt = p.effective_dt();
    let samples = in_pool(workers, || {
        ordered_range(n, |i| -> Result<Sample> {
            let c = i % shifts.len();
            let mut rng = streams.stream(i as u64);
            let traj: Trajectory = simulate_forced(u0, &p, phi, Some(&shifts[c].forcing), &mut rng)?;
            let log = traj.noise_log.as_ref().ok_or(Error::MissingNoiseLog)?;
            let lr = log_ratios(&shifts, c, log, dt, p.eps, dv);
            // 1 / mean_j exp(lr_j), evaluated stably
            let m = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = lr.iter().map(|x| (x - m).exp()).sum::<f64>() / k;
            Ok(Sample {
                hit: prepared.contains(&traj)?,
                weight: (-m).exp() / s,
            })
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(reduce(&samples, params.eps, event))
}

/// Weight for a recorded trajectory under a single control (no mixture).
pub fn girsanov_weight(traj: &Trajectory, h: &ControlPath, phi: &KernelOperator, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParams("Girsanov weights need eps > 0".into()));
    }
    let log = traj.noise_log.as_ref().ok_or(Error::MissingNoiseLog)?;
    let shift = [Shift {
        forcing: Forcing::new(h, phi)?,
    }];
    let lr = log_ratios(&shift, 0, log, traj.dt, eps, h.grid().cell_volume());
    Ok((-lr[0]).exp())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdpRow {
    pub eps: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub ess: f64,
    pub hits: usize,
    pub eps_log_p: f64,
    /// `|ε log p̂ + I*|`, when a certificate energy is supplied.
    pub gap: Option<f64>,
    pub degenerate: bool,
}

/// IS estimates along a decreasing `ε` sweep, next to `−I*`.
///
/// With no controls the rows are naive estimates. ESS below `0.01·N`
/// flags a row as degenerate.
#[allow(clippy::too_many_arguments)]
pub fn ldp_curve(
    u0: &Field,
    params_base: &SimParams,
    phi: &KernelOperator,
    event: &EventSpec,
    controls: &[ControlPath],
    eps_list: &[f64],
    n: usize,
    certificate_energy: Option<f64>,
    streams: &StreamFactory,
    workers: Option<usize>,
) -> Result<Vec<LdpRow>> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParams("eps list must be strictly decreasing".into()));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        let p = SimParams {
            eps,
            ..params_base.clone()
        };
        let s = streams.child(i as u64);
        let est = if controls.is_empty() {
            estimate_naive(u0, &p, phi, event, n, &s, workers)?
        } else {
            estimate_is_mixture(u0, &p, phi, event, controls, n, &s, workers)?
        };
        let eps_log_p = est.eps_log_p();
        rows.push(LdpRow {
            eps,
            p_hat: est.p_hat,
            stderr: est.stderr,
            ess: est.ess,
            hits: est.hits,
            eps_log_p,
            gap: certificate_energy.map(|e| (eps_log_p + e).abs()),
            degenerate: est.ess < 0.01 * n as f64,
        });
    }
    Ok(rows)
}
