//! Small-noise tails of the blow-up time: before and after the
//! deterministic blow-up time, with the nonlinearity-cancelling control as
//! the importance-sampling proposal for survival.

use serde::{Deserialize, Serialize};

use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::events::EventSpec;
use crate::grid::Field;
use crate::integrator::{simulate, BlowupTime, SimParams};
use crate::mc::{estimate_is, estimate_naive, MCEstimate};
use crate::noise::KernelOperator;
use crate::rng::StreamFactory;
use crate::skeleton::{cancel_nonlinearity_control, CancelOptions, RangeStatus, ResidualReport};

/// Tolerance on `|ε log p̂|` for the non-rare limits.
pub const NON_RARE_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeterministicBlowup {
    pub tau: BlowupTime,
    pub tau_refined: BlowupTime,
    /// `|τ(dt) − τ(dt/2)|`, zero when both are censored.
    pub error_bar: f64,
}

impl DeterministicBlowup {
    pub fn is_censored(&self) -> bool {
        self.tau.is_censored() && self.tau_refined.is_censored()
    }

    /// The refined estimate (`+∞` when censored).
    pub fn value(&self) -> f64 {
        self.tau_refined.value()
    }
}

/// `τ_R` of the noiseless run at `dt` and `dt/2`.
pub fn deterministic_blowup_time(u0: &Field, params: &SimParams, phi: &KernelOperator) -> Result<DeterministicBlowup> {
    let base = SimParams {
        eps: 0.0,
        record_noise: false,
        record_snapshots: false,
        ..params.clone()
    };
    let refined = SimParams {
        dt: base.effective_dt() / 2.0,
        ..base.clone()
    };
    let mut rng = crate::rng::stream(0, 0, 0);
    let a = simulate(u0, &base, phi, None, &mut rng)?.tau_r;
    let b = simulate(u0, &refined, phi, None, &mut rng)?.tau_r;
    let error_bar = match (a, b) {
        (BlowupTime::Finite { t: x }, BlowupTime::Finite { t: y }) => (x - y).abs(),
        (BlowupTime::Censored { .. }, BlowupTime::Censored { .. }) => 0.0,
        _ => f64::INFINITY,
    };
    Ok(DeterministicBlowup {
        tau: a,
        tau_refined: b,
        error_bar,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailRowReport {
    pub u0_index: usize,
    pub eps: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub hits: usize,
    pub ess: f64,
    pub eps_log_p: f64,
    /// No hits and no importance sampling control.
    pub needs_is: bool,
}

fn row(u0_index: usize, est: &MCEstimate, is: bool) -> TailRowReport {
    TailRowReport {
        u0_index,
        eps: est.eps,
        p_hat: est.p_hat,
        stderr: est.stderr,
        hits: est.hits,
        ess: est.ess,
        eps_log_p: est.eps_log_p(),
        needs_is: est.hits == 0 && !is,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeforeReport {
    pub horizon: f64,
    pub deterministic: Vec<DeterministicBlowup>,
    pub rows: Vec<TailRowReport>,
    /// `−max ε log p̂` over the initial data at the two smallest `ε`.
    pub c_hat: f64,
    pub pass: bool,
}

fn positive_eps(eps_list: &[f64]) -> Result<Vec<f64>> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParams("eps list must be strictly decreasing".into()));
    }
    // noiseless rows are deterministic 0/1 indicators and are left out
    let v: Vec<f64> = eps_list.iter().copied().filter(|&e| e > 0.0).collect();
    if v.is_empty() {
        return Err(Error::InvalidParams("eps list needs a positive value".into()));
    }
    Ok(v)
}

/// `ℙ(τ_R ≤ T)` for each initial datum, with `T` below every deterministic
/// blow-up time. Passes when `ε log p̂` stays below a common negative level
/// at the two smallest `ε`.
#[allow(clippy::too_many_arguments)]
pub fn tail_before_t(
    u0_set: &[Field],
    horizon: f64,
    eps_list: &[f64],
    n: usize,
    params: &SimParams,
    phi: &KernelOperator,
    accelerating: Option<&[ControlPath]>,
    streams: &StreamFactory,
    workers: Option<usize>,
) -> Result<BeforeReport> {
    let eps_list = positive_eps(eps_list)?;
    let base = SimParams {
        horizon,
        ..params.clone()
    };
    let mut deterministic = Vec::new();
    for (i, u0) in u0_set.iter().enumerate() {
        let det = deterministic_blowup_time(u0, &SimParams { horizon: params.horizon.max(horizon), ..params.clone() }, phi)?;
        if !(det.value() > horizon) {
            return Err(Error::InvalidParams(format!(
                "T = {horizon} must be below the deterministic blow-up time {} of initial datum {i}",
                det.value()
            )));
        }
        deterministic.push(det);
    }
    let event = EventSpec::H1Exceed {
        threshold: base.threshold,
        horizon,
    };
    let mut rows = Vec::new();
    for (i, u0) in u0_set.iter().enumerate() {
        for (j, &eps) in eps_list.iter().enumerate() {
            let p = SimParams { eps, ..base.clone() };
            let s = streams.child((i * 1000 + j) as u64);
            let est = match accelerating.and_then(|a| a.get(i)) {
                Some(h) => estimate_is(u0, &p, phi, &event, h, n, &s, workers)?,
                None => estimate_naive(u0, &p, phi, &event, n, &s, workers)?,
            };
            rows.push(row(i, &est, accelerating.is_some()));
        }
    }
    let smallest: Vec<f64> = eps_list.iter().rev().take(2).copied().collect();
    let worst = rows
        .iter()
        .filter(|r| smallest.contains(&r.eps))
        .map(|r| r.eps_log_p)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BeforeReport {
        horizon,
        deterministic,
        c_hat: -worst,
        pass: worst < 0.0,
        rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AfterRow {
    pub eps: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub hits: usize,
    pub n: usize,
    pub ess: f64,
    pub eps_log_p: f64,
    /// Fraction of shifted paths that survive.
    pub hit_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AfterReport {
    pub horizon: f64,
    pub deterministic: DeterministicBlowup,
    pub control_energy: f64,
    /// Energy of the control restricted to `[0, T)`.
    pub control_energy_to_horizon: f64,
    pub residuals: ResidualReport,
    pub rows: Vec<AfterRow>,
    pub slack: f64,
    pub pass: bool,
}

/// IS estimates of `ℙ(τ_R > T)` for `T` beyond the deterministic blow-up
/// time, shifted by the nonlinearity-cancelling control, compared with the
/// bound `−a`, `a` the control energy. The control is built on `[0, 2T)`.
#[allow(clippy::too_many_arguments)]
pub fn tail_after_t(
    u0: &Field,
    horizon: f64,
    eps_list: &[f64],
    n: usize,
    params: &SimParams,
    phi: &KernelOperator,
    cancel: &CancelOptions,
    slack: f64,
    streams: &StreamFactory,
    workers: Option<usize>,
) -> Result<AfterReport> {
    let eps_list = positive_eps(eps_list)?;
    let base = SimParams {
        horizon,
        ..params.clone()
    };
    let det = deterministic_blowup_time(u0, &base, phi)?;
    if !(det.value() < horizon) {
        return Err(Error::InvalidParams(format!(
            "T = {horizon} must exceed the deterministic blow-up time {}",
            det.value()
        )));
    }
    let (h, residuals) = cancel_nonlinearity_control(u0, horizon, phi, &base, cancel)?;
    if residuals.status == RangeStatus::Warning {
        return Err(Error::RangeCondition(format!(
            "cancelling control residual {:.3e} exceeds {:.3e}; the squared free evolution is not in the range of the noise operator",
            residuals.max_residual, residuals.threshold
        )));
    }
    let a = h.energy();
    let a_t: f64 = (0..h.knots().len())
        .filter(|&k| h.knots()[k] < horizon)
        .map(|k| {
            let end = h.knots().get(k + 1).copied().unwrap_or(h.end()).min(horizon);
            0.5 * h.values()[k].l2_norm().powi(2) * (end - h.knots()[k])
        })
        .sum();
    let event = EventSpec::H1Below {
        threshold: base.threshold,
        horizon,
    };
    let mut rows = Vec::new();
    for (j, &eps) in eps_list.iter().enumerate() {
        let p = SimParams { eps, ..base.clone() };
        let est = estimate_is(u0, &p, phi, &event, &h, n, &streams.child(j as u64), workers)?;
        rows.push(AfterRow {
            eps,
            p_hat: est.p_hat,
            stderr: est.stderr,
            hits: est.hits,
            n: est.n,
            ess: est.ess,
            eps_log_p: est.eps_log_p(),
            hit_rate: est.hits as f64 / est.n as f64,
        });
    }
    let last = rows.last().expect("non-empty eps list");
    Ok(AfterReport {
        horizon,
        deterministic: det,
        control_energy: a,
        control_energy_to_horizon: a_t,
        residuals,
        pass: last.eps_log_p >= -a - slack,
        slack,
        rows,
    })
}

/// Which typical event is estimated by [`non_rare_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonRareDirection {
    /// `T` below the deterministic blow-up time; event = survival to `T`.
    SurvivalBeforeBlowup,
    /// `T` beyond the deterministic blow-up time; event = blow-up by `T`.
    BlowupAfterBlowup,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonRareReport {
    pub direction: NonRareDirection,
    pub horizon: f64,
    pub deterministic: DeterministicBlowup,
    pub rows: Vec<TailRowReport>,
    pub final_abs_eps_log_p: f64,
    pub pass: bool,
}

/// Naive MC of the event the deterministic dynamics realizes; its
/// `|ε log p̂|` at the smallest `ε` must vanish up to [`NON_RARE_TOL`].
#[allow(clippy::too_many_arguments)]
pub fn non_rare_check(
    u0: &Field,
    horizon: f64,
    eps_list: &[f64],
    n: usize,
    params: &SimParams,
    phi: &KernelOperator,
    streams: &StreamFactory,
    workers: Option<usize>,
) -> Result<NonRareReport> {
    let eps_list = positive_eps(eps_list)?;
    let base = SimParams {
        horizon,
        ..params.clone()
    };
    let det = deterministic_blowup_time(u0, &base, phi)?;
    let (direction, event) = if det.value() > horizon {
        (
            NonRareDirection::SurvivalBeforeBlowup,
            EventSpec::H1Below {
                threshold: base.threshold,
                horizon,
            },
        )
    } else {
        (
            NonRareDirection::BlowupAfterBlowup,
            EventSpec::H1Exceed {
                threshold: base.threshold,
                horizon,
            },
        )
    };
    let mut rows = Vec::new();
    for (j, &eps) in eps_list.iter().enumerate() {
        let p = SimParams { eps, ..base.clone() };
        let est = estimate_naive(u0, &p, phi, &event, n, &streams.child(j as u64), workers)?;
        rows.push(row(0, &est, false));
    }
    let final_abs = rows.last().expect("non-empty").eps_log_p.abs();
    Ok(NonRareReport {
        direction,
        horizon,
        deterministic: det,
        final_abs_eps_log_p: final_abs,
        pass: final_abs <= NON_RARE_TOL,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use num_complex::Complex64;

    #[test]
    fn defocusing_and_subcritical_runs_are_censored() {
        let g = Grid::new(1, 64, 20.0).unwrap();
        let u0 = Field::from_fn(&g, |x| Complex64::new(2.0 * (-(x[0] - 10.0).powi(2)).exp(), 0.0));
        let phi = KernelOperator::gaussian(&g, 1.0, 0.5, 2.0).unwrap();
        for (lambda, sigma) in [(-1.0, 2.0), (1.0, 1.0)] {
            let params = SimParams {
                lambda,
                sigma,
                dt: 0.005,
                horizon: 0.3,
                threshold: 40.0,
                ..SimParams::default()
            };
            assert!(deterministic_blowup_time(&u0, &params, &phi).unwrap().is_censored());
        }
    }

    #[test]
    fn noiseless_rows_are_dropped() {
        assert_eq!(positive_eps(&[0.5, 0.1, 0.0]).unwrap(), vec![0.5, 0.1]);
        assert!(positive_eps(&[0.0]).is_err());
        assert!(positive_eps(&[0.1, 0.5]).is_err());
    }
}
