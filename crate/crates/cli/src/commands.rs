//! One function per subcommand. Each reads the validated configuration,
//! calls into `snls_core` and writes its artifacts through [`Outputs`].

use std::path::{Path, PathBuf};

use serde_json::json;
use snls_core::blowup::{deterministic_blowup_time, non_rare_check, tail_after_t, tail_before_t};
use snls_core::control::ControlPath;
use snls_core::events::EventSpec;
use snls_core::grid::{Field, NormKind};
use snls_core::integrator::{simulate, BlowupTime, SimParams};
use snls_core::mc::{estimate_is_mixture, estimate_naive, ldp_curve};
use snls_core::noise::KernelOperator;
use snls_core::optimizer::{minimize_rate, rate_certificate_check, OptimizerOptions, RateCertificate};
use snls_core::rng::StreamFactory;
use snls_core::skeleton::{
    cancel_nonlinearity_control, free_evolution_residual, skeleton_continuity_probe, skeleton_solve, wiener_rate,
};
use snls_core::tails::empirical_tail_check;

use crate::config::{BlowupMode, McMethod, RunConfig};
use crate::error::CliError;
use crate::output::{num, Outputs};

/// Everything a subcommand needs, resolved once.
pub struct Context {
    pub cfg: RunConfig,
    pub base: PathBuf,
    pub u0: Field,
    pub phi: KernelOperator,
    pub extra: Extra,
}

/// Subcommand-only options that are not part of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Extra {
    pub control: Option<PathBuf>,
    pub warm_start: Option<PathBuf>,
}

impl Context {
    pub fn new(cfg: RunConfig, base: &Path, extra: Extra) -> Result<Context, CliError> {
        let grid = cfg.grid()?;
        let u0 = cfg.initial_field(&grid, base)?;
        let phi = cfg.kernel_operator(&grid, base)?;
        Ok(Context {
            cfg,
            base: base.to_path_buf(),
            u0,
            phi,
            extra,
        })
    }

    fn streams(&self, label: &str) -> StreamFactory {
        StreamFactory::new(self.cfg.seed, label)
    }

    fn event(&self) -> Result<EventSpec, CliError> {
        self.cfg.event_spec(self.u0.grid(), &self.base)
    }

    fn load_control(&self, path: &Path) -> Result<ControlPath, CliError> {
        Ok(ControlPath::load(path, self.u0.grid())?)
    }
}

fn tau_json(t: BlowupTime) -> serde_json::Value {
    match t {
        BlowupTime::Finite { t } => json!({"censored": false, "t": t}),
        BlowupTime::Censored { horizon } => json!({"censored": true, "horizon": horizon}),
    }
}

pub fn simulate_cmd(ctx: &Context, out: &mut Outputs) -> Result<(), CliError> {
    let params = ctx.cfg.sim.clone();
    let mut rng = ctx.streams("simulate").stream(0);
    let traj = simulate(&ctx.u0, &params, &ctx.phi, None, &mut rng)?;
    out.trajectory_csv("trajectory.csv", &traj)?;
    out.field("final_state.json", &traj.final_state, traj.final_time)?;
    let m0 = traj.mass[0];
    let drift = traj.mass.iter().map(|m| ((m - m0) / m0).abs()).fold(0.0, f64::max);
    out.json(
        "summary.json",
        &json!({
            "tau_R": tau_json(traj.tau_r),
            "final_time": traj.final_time,
            "steps": traj.steps_taken,
            "dt": traj.dt,
            "mass_initial": m0,
            "mass_final": traj.mass.last(),
            "max_relative_mass_drift": drift,
            "max_h1": traj.max_h1,
            "hamiltonian_initial": traj.hamiltonian[0],
            "hamiltonian_final": traj.hamiltonian.last(),
            "wp_integral": traj.wp_integral,
        }),
    )
}

pub fn skeleton_cmd(ctx: &Context, out: &mut Outputs) -> Result<(), CliError> {
    let sk = &ctx.cfg.skeleton;
    let sim = &ctx.cfg.sim;
    if sk.cancel_control {
        let (h, report) = cancel_nonlinearity_control(&ctx.u0, sim.horizon, &ctx.phi, sim, &sk.cancel)?;
        let params = SimParams {
            horizon: h.end(),
            record_snapshots: true,
            ..sim.clone()
        };
        let traj = skeleton_solve(&ctx.u0, &h, &params, &ctx.phi)?;
        let residual = free_evolution_residual(&traj, &ctx.u0, NormKind::H1)?;
        out.trajectory_csv("trajectory.csv", &traj)?;
        out.control("control.json", &h)?;
        let rows: Vec<Vec<String>> = report
            .knot_times
            .iter()
            .zip(&report.residuals)
            .map(|(t, r)| vec![num(*t), num(*r)])
            .collect();
        out.csv("residuals.csv", &["t", "relative_residual"], &rows)?;
        out.json(
            "summary.json",
            &json!({
                "control": "cancel_nonlinearity",
                "interval": [0.0, h.end()],
                "energy": h.energy(),
                "range_status": report.status,
                "max_range_residual": report.max_residual,
                "range_threshold": report.threshold,
                "sup_h1_residual_vs_free": residual,
                "tau_R": tau_json(traj.tau_r),
            }),
        )?;
        return Ok(());
    }
    let control_path = ctx.extra.control.clone().or_else(|| sk.control.as_ref().map(|c| ctx.base.join(c)));
    let h = match &control_path {
        Some(p) => ctx.load_control(p)?,
        None => ControlPath::zero(ctx.u0.grid(), sim.horizon)?,
    };
    let params = SimParams {
        record_snapshots: sk.probes > 0,
        ..sim.clone()
    };
    let traj = skeleton_solve(&ctx.u0, &h, &params, &ctx.phi)?;
    out.trajectory_csv("trajectory.csv", &traj)?;
    out.field("final_state.json", &traj.final_state, traj.final_time)?;
    let probe = if sk.probes > 0 {
        let mut rng = ctx.streams("skeleton-probe").stream(0);
        Some(skeleton_continuity_probe(
            &ctx.u0,
            &h,
            &params,
            &ctx.phi,
            sk.probes,
            sk.probe_du,
            sk.probe_dh_energy,
            &mut rng,
        )?)
    } else {
        None
    };
    out.json(
        "summary.json",
        &json!({
            "control": control_path.map(|p| p.display().to_string()).unwrap_or_else(|| "zero".into()),
            "energy": h.energy(),
            "wiener_rate": wiener_rate(&h, &ctx.phi)?,
            "tau_R": tau_json(traj.tau_r),
            "final_time": traj.final_time,
            "continuity": probe,
        }),
    )
}

/// A certificate, its mirrored counterpart (optimized from `−h*`) and the
/// smaller of the two energies. Only controls that realize the event are
/// kept; `defensive` appends the zero control.
pub fn certificate_proposals(
    u0: &Field,
    event: &EventSpec,
    params: &SimParams,
    phi: &KernelOperator,
    opts: &OptimizerOptions,
    defensive: bool,
    workers: Option<usize>,
) -> Result<(Vec<ControlPath>, Option<f64>, Vec<RateCertificate>), CliError> {
    let first = minimize_rate(u0, event, params, phi, opts, None, workers)?;
    let mirror = minimize_rate(u0, event, params, phi, opts, Some(&first.h_star.scaled(-1.0)), workers)?;
    let certs = vec![first, mirror];
    let mut controls = Vec::new();
    let mut energy: Option<f64> = None;
    for c in &certs {
        if c.event_satisfied && !c.h_star.is_zero() {
            controls.push(c.h_star.clone());
        }
        if c.event_satisfied {
            energy = Some(energy.map_or(c.energy, |e| e.min(c.energy)));
        }
    }
    if defensive && !controls.is_empty() {
        controls.push(ControlPath::zero(u0.grid(), params.horizon)?);
    }
    Ok((controls, energy, certs))
}

pub fn rate_cmd(ctx: &Context, out: &mut Outputs, workers: Option<usize>) -> Result<(), CliError> {
    let event = ctx.event()?;
    let warm = match &ctx.extra.warm_start {
        Some(p) => Some(ctx.load_control(p)?),
        None => None,
    };
    let sim = &ctx.cfg.sim;
    let cert = minimize_rate(&ctx.u0, &event, sim, &ctx.phi, &ctx.cfg.optimizer, warm.as_ref(), workers)?;
    let check = rate_certificate_check(&cert, &ctx.u0, &event, sim, &ctx.phi)?;
    out.control("h_star.json", &cert.h_star)?;
    let traj = skeleton_solve(&ctx.u0, &cert.h_star, sim, &ctx.phi)?;
    out.trajectory_csv("skeleton_trajectory.csv", &traj)?;
    out.json(
        "certificate.json",
        &json!({
            "event": event.describe(),
            "certificate": cert.summary(),
            "rate_upper_bound": if cert.event_satisfied { Some(cert.energy) } else { None },
            "check": check,
        }),
    )
}

pub fn mc_cmd(ctx: &Context, out: &mut Outputs, workers: Option<usize>) -> Result<(), CliError> {
    let event = ctx.event()?;
    let mc = &ctx.cfg.mc;
    let sim = &ctx.cfg.sim;
    let streams = ctx.streams("mc");
    let (controls, energy) = if mc.method == McMethod::Naive {
        (Vec::new(), None)
    } else if mc.controls.is_empty() {
        let (controls, energy, certs) =
            certificate_proposals(&ctx.u0, &event, sim, &ctx.phi, &ctx.cfg.optimizer, mc.defensive, workers)?;
        for (i, c) in certs.iter().enumerate() {
            out.control(&format!("proposal_{i}.json"), &c.h_star)?;
        }
        out.json("certificates.json", &certs.iter().map(|c| c.summary()).collect::<Vec<_>>())?;
        if controls.is_empty() {
            return Err(CliError::Core(snls_core::Error::InvalidControl(
                "the optimizer found no control realizing the event; importance sampling has no proposal".into(),
            )));
        }
        (controls, energy)
    } else {
        let mut v = mc
            .controls
            .iter()
            .map(|p| ctx.load_control(&ctx.base.join(p)))
            .collect::<Result<Vec<_>, _>>()?;
        if mc.defensive {
            v.push(ControlPath::zero(ctx.u0.grid(), sim.horizon)?);
        }
        (v, None)
    };
    match mc.method {
        McMethod::Naive | McMethod::Is => {
            let est = if controls.is_empty() {
                estimate_naive(&ctx.u0, sim, &ctx.phi, &event, mc.n, &streams, workers)?
            } else {
                estimate_is_mixture(&ctx.u0, sim, &ctx.phi, &event, &controls, mc.n, &streams, workers)?
            };
            out.json(
                "mc.json",
                &json!({
                    "method": mc.method,
                    "mixture_size": controls.len(),
                    "estimate": est,
                    "eps_log_p": est.eps_log_p(),
                    "certificate_energy": energy,
                }),
            )
        }
        McMethod::Ldp => {
            let rows = ldp_curve(&ctx.u0, sim, &ctx.phi, &event, &controls, &mc.eps_list, mc.n, energy, &streams, workers)?;
            let csv_rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        num(r.eps),
                        num(r.p_hat),
                        num(r.stderr),
                        num(r.ess),
                        r.hits.to_string(),
                        num(r.eps_log_p),
                        r.gap.map(num).unwrap_or_default(),
                        r.degenerate.to_string(),
                    ]
                })
                .collect();
            out.csv(
                "ldp.csv",
                &["eps", "p_hat", "stderr", "ess", "hits", "eps_log_p", "gap", "degenerate"],
                &csv_rows,
            )?;
            out.json(
                "mc.json",
                &json!({
                    "method": mc.method,
                    "mixture_size": controls.len(),
                    "certificate_energy": energy,
                    "rows": rows,
                }),
            )
        }
    }
}

pub fn tails_cmd(ctx: &Context, out: &mut Outputs, workers: Option<usize>) -> Result<(), CliError> {
    let report = empirical_tail_check(&ctx.phi, &ctx.cfg.tails, &ctx.streams("tails"), workers)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.bound_kind.clone(),
                num(r.delta),
                r.hits.to_string(),
                num(r.frequency),
                num(r.upper95),
                num(r.lower99),
                num(r.bound),
                format!("{:?}", r.status).to_uppercase(),
                r.hard_violation.to_string(),
            ]
        })
        .collect();
    out.csv(
        "tails.csv",
        &["bound_kind", "delta", "hits", "frequency", "upper95", "lower99", "bound", "status", "hard_violation"],
        &rows,
    )?;
    out.json("tails.json", &report)
}

pub fn blowup_cmd(ctx: &Context, out: &mut Outputs, workers: Option<usize>) -> Result<(), CliError> {
    let b = &ctx.cfg.blowup;
    let sim = &ctx.cfg.sim;
    let horizon = b.horizon.unwrap_or(sim.horizon);
    let params = SimParams {
        horizon: horizon.max(sim.horizon),
        ..sim.clone()
    };
    let streams = ctx.streams("blowup");
    match b.mode {
        BlowupMode::Time => {
            let det = deterministic_blowup_time(&ctx.u0, &params, &ctx.phi)?;
            out.json("blowup.json", &json!({"mode": b.mode, "deterministic": det}))
        }
        BlowupMode::Before => {
            let set: Vec<Field> = b.scales.iter().map(|s| ctx.u0.scaled(*s)).collect();
            let rep = tail_before_t(&set, horizon, &b.eps_list, b.n, &params, &ctx.phi, None, &streams, workers)?;
            out.json("blowup.json", &json!({"mode": b.mode, "report": rep}))
        }
        BlowupMode::After => {
            let rep = tail_after_t(&ctx.u0, horizon, &b.eps_list, b.n, &params, &ctx.phi, &b.cancel, b.slack, &streams, workers)?;
            out.json("blowup.json", &json!({"mode": b.mode, "report": rep}))
        }
        BlowupMode::NonRare => {
            let rep = non_rare_check(&ctx.u0, horizon, &b.eps_list, b.n, &params, &ctx.phi, &streams, workers)?;
            out.json("blowup.json", &json!({"mode": b.mode, "report": rep}))
        }
    }
}
