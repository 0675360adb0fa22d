//! Upper bounds on `inf_A I^{u₀}`: minimize the control energy over a
//! finite-dimensional control subspace subject to the skeleton entering the
//! event set, with a penalty-continuation evolution strategy.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::events::{EventSpec, PreparedEvent};
use crate::grid::{Field, Grid, RealField};
use crate::integrator::SimParams;
use crate::noise::KernelOperator;
use crate::parallel::{in_pool, ordered_map};
use crate::skeleton::skeleton_solve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOptions {
    /// Time knots of the subspace on `[0, T)`.
    pub knots: usize,
    /// Leading real Fourier modes (constant first).
    pub modes: usize,
    pub population: usize,
    /// Generations per penalty stage.
    pub generations: usize,
    pub penalty_schedule: Vec<f64>,
    pub initial_step: f64,
    /// Safety margin (relative to the event scale) kept by the final control.
    pub margin_buffer: f64,
    pub bisection_steps: usize,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            knots: 8,
            modes: 3,
            population: 16,
            generations: 30,
            penalty_schedule: vec![1.0, 10.0, 100.0, 1000.0],
            initial_step: 0.5,
            margin_buffer: 1e-3,
            bisection_steps: 40,
            seed: 0,
        }
    }
}

impl OptimizerOptions {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.knots == 0 {
            v.push("optimizer knots must be >= 1".into());
        }
        if self.modes == 0 {
            v.push("optimizer modes must be >= 1".into());
        }
        if self.population < 4 || self.population % 2 != 0 {
            v.push(format!("optimizer population {} must be even and >= 4", self.population));
        }
        if self.penalty_schedule.is_empty() || self.penalty_schedule.iter().any(|m| !(*m > 0.0)) {
            v.push("penalty schedule must be a non-empty list of positive weights".into());
        }
        if !(self.initial_step > 0.0) {
            v.push(format!("initial step {} must be > 0", self.initial_step));
        }
        if !(self.margin_buffer >= 0.0) {
            v.push(format!("margin buffer {} must be >= 0", self.margin_buffer));
        }
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub penalty: f64,
    pub best_objective: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub evaluations: usize,
    pub generations: usize,
    pub penalty_schedule: Vec<f64>,
    pub stages: Vec<StageSummary>,
    /// Scale applied to the best feasible candidate by the final bisection.
    pub final_scale: f64,
    pub final_violation: f64,
}

/// A control whose skeleton lies in the event, and its energy.
#[derive(Debug, Clone)]
pub struct RateCertificate {
    pub h_star: ControlPath,
    pub energy: f64,
    pub event_satisfied: bool,
    pub margin: f64,
    pub solver_report: SolverReport,
}

impl RateCertificate {
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "energy": self.energy,
            "event_satisfied": self.event_satisfied,
            "margin": self.margin,
            "solver_report": self.solver_report,
        })
    }
}

/// Orthonormal (grid quadrature) real Fourier functions, lowest `|k|` first.
pub fn fourier_basis(grid: &Arc<Grid>, count: usize) -> Vec<RealField> {
    let d = grid.dim();
    let v = grid.volume();
    let half = (grid.n() / 2) as i64 - 1;
    let reach = ((count as f64).powf(1.0 / d as f64).ceil() as i64 + 1).min(half);
    let mut vecs: Vec<Vec<i64>> = Vec::new();
    let mut idx = vec![-reach; d];
    loop {
        let first = idx.iter().find(|&&m| m != 0);
        if matches!(first, Some(&m) if m > 0) {
            vecs.push(idx.clone());
        }
        let mut a = 0;
        loop {
            if a == d {
                break;
            }
            idx[a] += 1;
            if idx[a] > reach {
                idx[a] = -reach;
                a += 1;
            } else {
                break;
            }
        }
        if a == d {
            break;
        }
    }
    vecs.sort_by_key(|m| (m.iter().map(|x| x * x).sum::<i64>(), m.clone()));
    let mut out = vec![RealField::from_fn(grid, |_| 1.0 / v.sqrt())];
    let c = (2.0 / v).sqrt();
    let base = 2.0 * std::f64::consts::PI / grid.length();
    for m in vecs {
        if out.len() >= count {
            break;
        }
        let phase = |x: &[f64]| x.iter().zip(&m).map(|(xi, mi)| base * *mi as f64 * xi).sum::<f64>();
        out.push(RealField::from_fn(grid, |x| c * phase(x).cos()));
        if out.len() < count {
            out.push(RealField::from_fn(grid, |x| c * phase(x).sin()));
        }
    }
    out.truncate(count);
    out
}

/// The searched family `h = s·warm + Σ θ_{k,m} b_m 1_{[t_k, t_{k+1})}`.
struct Subspace {
    grid: Arc<Grid>,
    basis: Vec<RealField>,
    uniform_knots: Vec<f64>,
    knots: Vec<f64>,
    /// For every merged knot, the uniform interval it falls in.
    slot: Vec<usize>,
    warm: Option<Vec<RealField>>,
    end: f64,
}

impl Subspace {
    fn new(grid: &Arc<Grid>, opts: &OptimizerOptions, end: f64, warm: Option<&ControlPath>) -> Result<Subspace> {
        let m = opts.knots;
        let uniform_knots: Vec<f64> = (0..m).map(|k| end * k as f64 / m as f64).collect();
        let mut knots = uniform_knots.clone();
        if let Some(w) = warm {
            crate::grid::check_grids(w.grid(), grid)?;
            knots.extend(w.knots().iter().copied().filter(|&t| t < end));
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * end);
        let slot = knots
            .iter()
            .map(|&t| uniform_knots.partition_point(|&k| k <= t + 1e-12 * end) - 1)
            .collect();
        let warm = warm.map(|w| {
            knots
                .iter()
                .map(|&t| w.value_at(t).cloned().unwrap_or_else(|| RealField::zeros(grid)))
                .collect()
        });
        Ok(Subspace {
            grid: grid.clone(),
            basis: fourier_basis(grid, opts.modes),
            uniform_knots,
            knots,
            slot,
            warm,
            end,
        })
    }

    fn dim(&self) -> usize {
        self.uniform_knots.len() * self.basis.len() + usize::from(self.warm.is_some())
    }

    fn initial(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        if self.warm.is_some() {
            *theta.last_mut().expect("non-empty") = 1.0;
        }
        theta
    }

    fn control(&self, theta: &[f64]) -> Result<ControlPath> {
        let nb = self.basis.len();
        let values = self
            .knots
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let k = self.slot[i];
                let mut v = match &self.warm {
                    Some(w) => w[i].scaled(*theta.last().expect("warm coefficient")),
                    None => RealField::zeros(&self.grid),
                };
                for (b, c) in self.basis.iter().zip(&theta[k * nb..(k + 1) * nb]) {
                    if *c != 0.0 {
                        for (x, y) in v.values_mut().iter_mut().zip(b.values()) {
                            *x += c * y;
                        }
                    }
                }
                v
            })
            .collect();
        ControlPath::new(self.knots.clone(), values, self.end)
    }
}

struct Evaluation {
    energy: f64,
    margin: f64,
}

struct Problem<'a> {
    u0: &'a Field,
    params: SimParams,
    phi: &'a KernelOperator,
    event: PreparedEvent,
    scale: f64,
}

impl Problem<'_> {
    fn evaluate(&self, h: &ControlPath) -> Result<Evaluation> {
        let traj = skeleton_solve(self.u0, h, &self.params, self.phi)?;
        Ok(Evaluation {
            energy: h.energy(),
            margin: self.event.margin(&traj)?,
        })
    }

    fn objective(&self, e: &Evaluation, penalty: f64) -> f64 {
        let v = (-e.margin).max(0.0) / self.scale;
        e.energy + penalty * v * v
    }
}

fn event_scale(event: &EventSpec) -> f64 {
    match event {
        EventSpec::TerminalMatch { rho, .. } | EventSpec::TubeExit { rho, .. } => *rho,
        _ => 1.0,
    }
}

/// Skeleton parameters used by the optimizer and the certificate check.
fn skeleton_params(params: &SimParams, event: &EventSpec) -> SimParams {
    SimParams {
        eps: 0.0,
        record_noise: false,
        record_snapshots: event.needs_snapshots(),
        ..params.clone()
    }
}

/// Searches for a low-energy control whose skeleton enters `event`.
///
/// `warm_start`, when given, is evaluated first and spans an extra search
/// direction, so a feasible warm start bounds the returned energy.
pub fn minimize_rate(
    u0: &Field,
    event: &EventSpec,
    params: &SimParams,
    phi: &KernelOperator,
    opts: &OptimizerOptions,
    warm_start: Option<&ControlPath>,
    workers: Option<usize>,
) -> Result<RateCertificate> {
    let v = opts.violations();
    if !v.is_empty() {
        return Err(Error::InvalidParams(v.join("; ")));
    }
    let params = skeleton_params(params, event);
    let problem = Problem {
        u0,
        event: event.prepare(u0, &params, phi)?,
        params,
        phi,
        scale: event_scale(event),
    };
    in_pool(workers, || search(&problem, opts, warm_start))?
}

fn search(problem: &Problem<'_>, opts: &OptimizerOptions, warm: Option<&ControlPath>) -> Result<RateCertificate> {
    let sub = Subspace::new(problem.u0.grid(), opts, problem.params.horizon, warm)?;
    let dim = sub.dim();
    let mut rng = crate::rng::stream(opts.seed, crate::rng::run_id("rate"), 0);
    let mut evaluations = 0usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let consider = |theta: &[f64], e: &Evaluation, best: &mut Option<(f64, Vec<f64>)>| {
        if e.margin >= 0.0 && best.as_ref().is_none_or(|(en, _)| e.energy < *en) {
            *best = Some((e.energy, theta.to_vec()));
        }
    };

    let zero = vec![0.0; dim];
    let e0 = problem.evaluate(&sub.control(&zero)?)?;
    evaluations += 1;
    consider(&zero, &e0, &mut best);
    let mut mean = sub.initial();
    if warm.is_some() {
        let e = problem.evaluate(&sub.control(&mean)?)?;
        evaluations += 1;
        consider(&mean, &e, &mut best);
    }

    let lambda = opts.population;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();

    let mut step = opts.initial_step;
    let mut stages = Vec::new();
    let mut generations = 0usize;
    for &penalty in &opts.penalty_schedule {
        let mut stage_best = f64::INFINITY;
        for _ in 0..opts.generations {
            generations += 1;
            let half: Vec<Vec<f64>> = (0..lambda / 2)
                .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let mut cands: Vec<Vec<f64>> = Vec::with_capacity(lambda + 1);
            cands.push(mean.clone());
            for z in &half {
                for sign in [1.0, -1.0] {
                    cands.push(mean.iter().zip(z).map(|(m, zi)| m + sign * step * zi).collect());
                }
            }
            let evals = ordered_map(&cands, |_, th| sub.control(th).and_then(|h| problem.evaluate(&h)));
            evaluations += cands.len();
            let mut scored = Vec::with_capacity(cands.len());
            for (th, e) in cands.iter().zip(evals) {
                let e = e?;
                consider(th, &e, &mut best);
                scored.push((problem.objective(&e, penalty), th));
            }
            let mean_obj = scored[0].0;
            let mut offspring: Vec<_> = scored[1..].to_vec();
            offspring.sort_by(|a, b| a.0.total_cmp(&b.0));
            stage_best = stage_best.min(offspring[0].0).min(mean_obj);
            let next: Vec<f64> = (0..dim)
                .map(|j| weights.iter().zip(&offspring).map(|(w, (_, th))| w * th[j]).sum())
                .collect();
            step *= if offspring[0].0 < mean_obj { 1.15 } else { 0.8 };
            step = step.clamp(1e-6 * opts.initial_step, 10.0 * opts.initial_step);
            mean = next;
        }
        stages.push(StageSummary {
            penalty,
            best_objective: stage_best,
            step,
        });
    }

    let mut report = SolverReport {
        evaluations,
        generations,
        penalty_schedule: opts.penalty_schedule.clone(),
        stages,
        final_scale: 1.0,
        final_violation: 0.0,
    };
    let Some((_, theta)) = best else {
        let h = sub.control(&mean)?;
        let e = problem.evaluate(&h)?;
        report.evaluations += 1;
        report.final_violation = (-e.margin).max(0.0);
        return Ok(RateCertificate {
            energy: e.energy,
            h_star: h,
            event_satisfied: false,
            margin: e.margin,
            solver_report: report,
        });
    };

    // shrink along the ray towards the event boundary, keeping a buffer
    let h_best = sub.control(&theta)?;
    let buffer = opts.margin_buffer * problem.scale;
    let mut hi = 1.0;
    let mut e_hi = problem.evaluate(&h_best)?;
    report.evaluations += 1;
    if e_hi.margin < buffer {
        // the buffer is not reachable by shrinking; keep the feasible point
        return finish(problem, h_best, e_hi, report);
    }
    if e0.margin < buffer && !h_best.is_zero() {
        let mut lo = 0.0;
        for _ in 0..opts.bisection_steps {
            let mid = 0.5 * (lo + hi);
            let e = problem.evaluate(&h_best.scaled(mid))?;
            report.evaluations += 1;
            if e.margin >= buffer {
                hi = mid;
                e_hi = e;
            } else {
                lo = mid;
            }
        }
    } else {
        hi = 0.0;
        e_hi = problem.evaluate(&h_best.scaled(0.0))?;
    }
    report.final_scale = hi;
    finish(problem, h_best.scaled(hi), e_hi, report)
}

/// Drops the `ker Φ` component when that keeps the event satisfied.
fn finish(problem: &Problem<'_>, h: ControlPath, e: Evaluation, report: SolverReport) -> Result<RateCertificate> {
    let projected = ControlPath::new(
        h.knots().to_vec(),
        h.values()
            .iter()
            .map(|v| problem.phi.project_off_kernel(v))
            .collect::<Result<Vec<_>>>()?,
        h.end(),
    )?;
    let (h, e) = if projected.energy() < h.energy() {
        let ep = problem.evaluate(&projected)?;
        if ep.margin >= 0.0 {
            (projected, ep)
        } else {
            (h, e)
        }
    } else {
        (h, e)
    };
    Ok(RateCertificate {
        energy: e.energy,
        event_satisfied: e.margin >= 0.0,
        margin: e.margin,
        h_star: h,
        solver_report: report,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub pass: bool,
    pub margin: f64,
    pub margin_refined: f64,
    pub energy: f64,
}

/// Replays a certificate at the same resolution and at `dt/2`.
pub fn rate_certificate_check(
    cert: &RateCertificate,
    u0: &Field,
    event: &EventSpec,
    params: &SimParams,
    phi: &KernelOperator,
) -> Result<CheckReport> {
    let base = skeleton_params(params, event);
    let refined = SimParams {
        dt: base.effective_dt() / 2.0,
        record_every: base.record_every * 2,
        ..base.clone()
    };
    let margin_at = |p: &SimParams| -> Result<f64> {
        let ev = event.prepare(u0, p, phi)?;
        ev.margin(&skeleton_solve(u0, &cert.h_star, p, phi)?)
    };
    let margin = margin_at(&base)?;
    let margin_refined = margin_at(&refined)?;
    let energy = cert.h_star.energy();
    let energy_ok = (energy - cert.energy).abs() <= 1e-12 * energy.max(1e-300);
    Ok(CheckReport {
        pass: margin >= 0.0 && margin_refined >= 0.0 && energy_ok,
        margin,
        margin_refined,
        energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_basis_is_orthonormal() {
        for (d, n) in [(1, 16), (2, 8)] {
            let g = Grid::new(d, n, 3.0).unwrap();
            let b = fourier_basis(&g, 7);
            assert_eq!(b.len(), 7);
            for i in 0..b.len() {
                for j in 0..b.len() {
                    let ip = b[i].inner(&b[j]).unwrap();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - expect).abs() < 1e-12, "d={d} ({i},{j}) {ip}");
                }
            }
        }
    }

    #[test]
    fn options_validation() {
        let mut o = OptimizerOptions::default();
        assert!(o.violations().is_empty());
        o.population = 5;
        o.penalty_schedule.clear();
        assert_eq!(o.violations().len(), 2);
    }
}
