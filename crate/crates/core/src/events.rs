//! Path events evaluated on trajectory records: terminal matching, tube
//! exit, and the `H¹` threshold proxies for blow-up before / after `T`.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{free_group_apply, norm, Field, NormKind};
use crate::integrator::{simulate, SimParams, Trajectory};
use crate::noise::KernelOperator;

/// Target of a terminal-matching event.
#[derive(Debug, Clone)]
pub enum TerminalTarget {
    Field(Field),
    /// Endpoint of the uncontrolled deterministic run.
    Deterministic,
    /// `U(T)u₀`.
    Free,
}

/// Reference path of a tube event.
#[derive(Debug, Clone)]
pub enum TubeReference {
    /// The uncontrolled deterministic run with the same parameters.
    Deterministic,
    /// Snapshots at the recorded times of the runs it is compared with.
    Path { times: Vec<f64>, fields: Vec<Field> },
}

#[derive(Debug, Clone)]
pub enum EventSpec {
    /// `‖u(T) − target‖ ≤ ρ` with no blow-up before `T`.
    TerminalMatch { target: TerminalTarget, rho: f64, norm: NormKind },
    /// `sup_t ‖u(t) − ref(t)‖ ≥ ρ`; a run stopped by the threshold counts as an exit.
    TubeExit { reference: TubeReference, rho: f64, norm: NormKind },
    /// `τ_R ≤ T` (blow-up before `T`).
    H1Exceed { threshold: f64, horizon: f64 },
    /// `τ_R > T` (survival beyond `T`).
    H1Below { threshold: f64, horizon: f64 },
    /// The whole path space.
    Everything,
}

impl EventSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            EventSpec::TerminalMatch { rho, norm, .. } | EventSpec::TubeExit { rho, norm, .. } => {
                if !(*rho > 0.0) {
                    v.push(format!("event rho = {rho} must be > 0"));
                }
                if let Err(e) = norm.validate() {
                    v.push(e.to_string());
                }
            }
            EventSpec::H1Exceed { threshold, horizon } | EventSpec::H1Below { threshold, horizon } => {
                if !(*threshold > 0.0 && threshold.is_finite()) {
                    v.push(format!("event R = {threshold} must be positive and finite"));
                }
                if !(*horizon > 0.0 && horizon.is_finite()) {
                    v.push(format!("event T = {horizon} must be positive and finite"));
                }
            }
            EventSpec::Everything => {}
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidEvent(v.join("; ")))
        }
    }

    /// Whether evaluating the event needs per-record snapshots.
    pub fn needs_snapshots(&self) -> bool {
        matches!(self, EventSpec::TubeExit { .. })
    }

    /// Summary for reports (fields are not echoed).
    pub fn describe(&self) -> Value {
        match self {
            EventSpec::TerminalMatch { target, rho, norm } => json!({
                "kind": "terminal_match",
                "target": match target {
                    TerminalTarget::Field(_) => "field",
                    TerminalTarget::Deterministic => "deterministic",
                    TerminalTarget::Free => "free",
                },
                "rho": rho,
                "norm": norm,
            }),
            EventSpec::TubeExit { reference, rho, norm } => json!({
                "kind": "tube_exit",
                "reference": match reference {
                    TubeReference::Deterministic => "deterministic",
                    TubeReference::Path { .. } => "path",
                },
                "rho": rho,
                "norm": norm,
            }),
            EventSpec::H1Exceed { threshold, horizon } => {
                json!({"kind": "h1_exceed", "R": threshold, "T": horizon})
            }
            EventSpec::H1Below { threshold, horizon } => {
                json!({"kind": "h1_below", "R": threshold, "T": horizon})
            }
            EventSpec::Everything => json!({"kind": "everything"}),
        }
    }

    /// Resolves deterministic references for `(u0, params, phi)`.
    pub fn prepare(&self, u0: &Field, params: &SimParams, phi: &KernelOperator) -> Result<PreparedEvent> {
        self.validate()?;
        let deterministic = |snapshots: bool| -> Result<Trajectory> {
            let p = SimParams {
                eps: 0.0,
                record_noise: false,
                record_snapshots: snapshots,
                ..params.clone()
            };
            simulate(u0, &p, phi, None, &mut crate::rng::stream(0, 0, 0))
        };
        let kind = match self {
            EventSpec::TerminalMatch { target, rho, norm } => {
                let target = match target {
                    TerminalTarget::Field(f) => f.clone(),
                    TerminalTarget::Deterministic => {
                        let tr = deterministic(false)?;
                        if !tr.tau_r.is_censored() {
                            return Err(Error::InvalidEvent(
                                "deterministic run stops before T; no endpoint to match".into(),
                            ));
                        }
                        tr.final_state
                    }
                    TerminalTarget::Free => free_group_apply(u0, params.horizon)?,
                };
                crate::grid::check_grids(target.grid(), u0.grid())?;
                Prepared::Terminal {
                    target,
                    rho: *rho,
                    norm: *norm,
                    horizon: params.horizon,
                }
            }
            EventSpec::TubeExit { reference, rho, norm } => {
                let (times, fields) = match reference {
                    TubeReference::Path { times, fields } => {
                        if times.len() != fields.len() || times.is_empty() {
                            return Err(Error::InvalidEvent("tube reference needs matching times and fields".into()));
                        }
                        (times.clone(), fields.clone())
                    }
                    TubeReference::Deterministic => {
                        let tr = deterministic(true)?;
                        (tr.times, tr.snapshots.expect("snapshots recorded"))
                    }
                };
                Prepared::Tube {
                    times,
                    fields,
                    rho: *rho,
                    norm: *norm,
                }
            }
            EventSpec::H1Exceed { threshold, horizon } => Prepared::Exceed {
                threshold: *threshold,
                horizon: *horizon,
            },
            EventSpec::H1Below { threshold, horizon } => Prepared::Below {
                threshold: *threshold,
                horizon: *horizon,
            },
            EventSpec::Everything => Prepared::Everything,
        };
        if let Prepared::Exceed { threshold, horizon } | Prepared::Below { threshold, horizon } = &kind {
            if *threshold > params.threshold {
                return Err(Error::InvalidEvent(format!(
                    "event R = {threshold} exceeds the simulation threshold {}",
                    params.threshold
                )));
            }
            if *horizon > params.horizon {
                return Err(Error::InvalidEvent(format!(
                    "event T = {horizon} exceeds the simulation horizon {}",
                    params.horizon
                )));
            }
        }
        Ok(PreparedEvent {
            spec: self.clone(),
            kind,
        })
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Terminal { target: Field, rho: f64, norm: NormKind, horizon: f64 },
    Tube { times: Vec<f64>, fields: Vec<Field>, rho: f64, norm: NormKind },
    Exceed { threshold: f64, horizon: f64 },
    Below { threshold: f64, horizon: f64 },
    Everything,
}

/// An event with its references resolved, ready to test trajectories.
#[derive(Debug, Clone)]
pub struct PreparedEvent {
    spec: EventSpec,
    kind: Prepared,
}

/// Largest recorded `H¹` norm on `[0, T]`, or `+∞` if the run stopped by `T`.
fn max_h1_until(traj: &Trajectory, horizon: f64) -> f64 {
    if let crate::integrator::BlowupTime::Finite { t } = traj.tau_r {
        if t <= horizon {
            return f64::INFINITY;
        }
    }
    if traj.final_time <= horizon {
        return traj.max_h1;
    }
    traj.times
        .iter()
        .zip(&traj.h1norm)
        .filter(|(t, _)| **t <= horizon)
        .map(|(_, h)| *h)
        .fold(0.0, f64::max)
}

impl PreparedEvent {
    pub fn spec(&self) -> &EventSpec {
        &self.spec
    }

    pub fn needs_snapshots(&self) -> bool {
        self.spec.needs_snapshots()
    }

    /// Signed distance to the event boundary: `≥ 0` inside, `< 0` outside.
    ///
    /// Units are those of the event's own quantity (a norm distance, or a
    /// relative `H¹` level for the threshold events).
    pub fn margin(&self, traj: &Trajectory) -> Result<f64> {
        match &self.kind {
            Prepared::Everything => Ok(f64::INFINITY),
            Prepared::Terminal {
                target,
                rho,
                norm: kind,
                horizon,
            } => {
                if !traj.tau_r.is_censored() || traj.final_time < *horizon {
                    return Ok(-rho.max(1.0));
                }
                Ok(rho - norm(&traj.final_state.sub(target)?, *kind)?)
            }
            Prepared::Tube {
                times,
                fields,
                rho,
                norm: kind,
            } => {
                let snaps = traj
                    .snapshots
                    .as_ref()
                    .ok_or_else(|| Error::InvalidEvent("tube events need snapshot recording".into()))?;
                let mut sup: f64 = 0.0;
                for (k, (t, s)) in traj.times.iter().zip(snaps).enumerate() {
                    let Some(r) = fields.get(k) else { break };
                    if (t - times[k]).abs() > 1e-9 * t.abs().max(1.0) {
                        return Err(Error::InvalidEvent(format!(
                            "record time {t} does not match the tube reference time {}",
                            times[k]
                        )));
                    }
                    sup = sup.max(norm(&s.sub(r)?, *kind)?);
                }
                if !traj.tau_r.is_censored() {
                    return Ok(sup.max(*rho));
                }
                Ok(sup - rho)
            }
            Prepared::Exceed { threshold, horizon } => {
                let m = max_h1_until(traj, *horizon);
                Ok(if m.is_finite() { m / threshold - 1.0 } else { 1.0 })
            }
            Prepared::Below { threshold, horizon } => {
                let m = max_h1_until(traj, *horizon);
                Ok(if m.is_finite() { 1.0 - m / threshold } else { -1.0 })
            }
        }
    }

    pub fn contains(&self, traj: &Trajectory) -> Result<bool> {
        Ok(self.margin(traj)? >= 0.0)
    }

    /// `max(0, −margin)`.
    pub fn violation(&self, traj: &Trajectory) -> Result<f64> {
        Ok((-self.margin(traj)?).max(0.0))
    }
}
