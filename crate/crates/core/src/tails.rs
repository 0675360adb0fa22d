//! Exponential tail constants for stochastic convolutions and their
//! empirical check.
//!
//! The continuum embedding constants are replaced by discrete surrogates:
//! operator norms `sup ‖v‖_target / ‖v‖_{H^s}` over real fields on the grid.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{admissible_rate, gradient, norm, Field, Grid, NormKind, RealField, TimeExponent};
use crate::noise::KernelOperator;
use crate::parallel::{in_pool, ordered_range};
use crate::rng::StreamFactory;

/// One-sided normal quantiles.
const Z95: f64 = 1.644_853_626_951_472_2;
const Z99: f64 = 2.326_347_874_040_840_8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `closed_form` or `power_iteration`.
    pub method: String,
    #[serde(skip)]
    pub maximizer: Option<RealField>,
}

fn hs_weights(grid: &Grid, s: f64) -> Vec<f64> {
    grid.k_squared().iter().map(|k2| (1.0 + k2).powf(s)).collect()
}

/// `sup_x |v(x)| / ‖v‖_{H^s}` for a spectral weight `a_m`: the norm of the
/// point evaluation `v ↦ (1/N) Σ a_m v̂_m`, i.e. `√((1/V) Σ |a_m|² / w_m)`.
fn evaluation_norm(grid: &Grid, w: &[f64], a: impl Fn(usize) -> f64) -> f64 {
    let acc: f64 = w.iter().enumerate().map(|(m, wm)| a(m).powi(2) / wm).sum();
    (acc / grid.volume()).sqrt()
}

/// Discrete surrogate of the norm of the embedding `H^s ⊂ target`.
///
/// Hilbert and sup-type targets have closed forms; `W^{1,p}` with finite
/// `p` is maximized by the nonlinear power method from several starts.
pub fn embedding_constant(grid: &Arc<Grid>, s: f64, target: NormKind) -> Result<EmbeddingEstimate> {
    if !(s >= 0.0) {
        return Err(Error::InvalidNorm(format!("s = {s} must be >= 0")));
    }
    target.validate()?;
    let w = hs_weights(grid, s);
    let closed = |value: f64| EmbeddingEstimate {
        value,
        converged: true,
        iterations: 0,
        method: "closed_form".into(),
        maximizer: None,
    };
    let hilbert = |t: f64| {
        grid.k_squared()
            .iter()
            .map(|k2| ((1.0 + k2).powf(t - s)).sqrt())
            .fold(0.0, f64::max)
    };
    match target {
        NormKind::L2 => Ok(closed(hilbert(0.0))),
        NormKind::H1 => Ok(closed(hilbert(1.0))),
        NormKind::Hs { s: t } => Ok(closed(if t == s { 1.0 } else { hilbert(t) })),
        NormKind::Linf => Ok(closed(evaluation_norm(grid, &w, |_| 1.0))),
        NormKind::W1Inf => {
            let mut c = evaluation_norm(grid, &w, |_| 1.0);
            for axis in 0..grid.dim() {
                c = c.max(evaluation_norm(grid, &w, |m| grid.mode_wavenumber(m, axis)));
            }
            Ok(closed(c))
        }
        NormKind::W1p { p } => Ok(power_embedding(grid, &w, p, 8, 2000, 1e-13)),
    }
}

fn hs_normalize(grid: &Arc<Grid>, w: &[f64], v: &Field) -> Field {
    let spec = v.spectrum();
    let n2 = (grid.len() as f64).powi(2);
    let e: f64 = spec.iter().zip(w).map(|(c, wm)| wm * c.norm_sqr()).sum::<f64>() * grid.volume() / n2;
    v.scaled(1.0 / e.sqrt())
}

fn w1p_power(v: &Field, p: f64) -> f64 {
    norm(v, NormKind::W1p { p }).expect("finite field").powf(p)
}

/// Gradient of `‖v‖^p_{W^{1,p}}` mapped through the `H^s` Riesz map.
fn ascent_direction(grid: &Arc<Grid>, w: &[f64], v: &Field, p: f64) -> Field {
    let pow = |c: Complex64| c * c.norm().powf(p - 2.0);
    let mut g: Vec<Complex64> = v.values().iter().map(|&c| pow(c)).collect();
    for (axis, dj) in gradient(v).into_iter().enumerate() {
        let b = Field::new(grid.clone(), dj.values().iter().map(|&c| pow(c)).collect()).expect("grid sized");
        let db = &gradient(&b)[axis];
        for (x, y) in g.iter_mut().zip(db.values()) {
            *x -= y;
        }
    }
    let gf = Field::new(grid.clone(), g).expect("grid sized");
    let spec: Vec<Complex64> = gf.spectrum().iter().zip(w).map(|(c, wm)| c / wm).collect();
    let out = Field::from_spectrum(grid, spec);
    // keep the iterate real
    Field::new(grid.clone(), out.values().iter().map(|c| Complex64::new(c.re, 0.0)).collect()).expect("grid sized")
}

fn power_embedding(grid: &Arc<Grid>, w: &[f64], p: f64, random_starts: usize, max_iter: usize, tol: f64) -> EmbeddingEstimate {
    let mut starts: Vec<Field> = Vec::new();
    // evaluation-functional shapes: the L∞ and derivative maximizers
    let bump: Vec<Complex64> = w.iter().map(|wm| Complex64::new(1.0 / wm, 0.0)).collect();
    starts.push(Field::from_spectrum(grid, bump));
    for axis in 0..grid.dim() {
        let spec: Vec<Complex64> = w
            .iter()
            .enumerate()
            .map(|(m, wm)| Complex64::new(0.0, -grid.mode_wavenumber(m, axis) / wm))
            .collect();
        starts.push(Field::from_spectrum(grid, spec));
    }
    let l = grid.length();
    for m in 0..4 {
        let k = 2.0 * std::f64::consts::PI * m as f64 / l;
        starts.push(Field::from_fn(grid, |x| Complex64::new((k * x[0]).cos(), 0.0)));
    }
    let mut rng = crate::rng::stream(0, crate::rng::run_id("embedding"), 0);
    for _ in 0..random_starts {
        let spec: Vec<Complex64> = w
            .iter()
            .map(|wm| Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) / wm.sqrt())
            .collect();
        let f = Field::from_spectrum(grid, spec);
        starts.push(Field::new(grid.clone(), f.values().iter().map(|c| Complex64::new(c.re, 0.0)).collect()).expect("grid sized"));
    }

    let mut best = (0.0, None, 0usize, false);
    let mut total_iter = 0;
    for s0 in starts {
        if s0.values().iter().all(|c| c.norm() == 0.0) {
            continue;
        }
        let mut v = hs_normalize(grid, w, &s0);
        let mut f = w1p_power(&v, p);
        let mut converged = false;
        for _ in 0..max_iter {
            total_iter += 1;
            let next = hs_normalize(grid, w, &ascent_direction(grid, w, &v, p));
            let fn_ = w1p_power(&next, p);
            v = next;
            let done = (fn_ - f).abs() <= tol * fn_;
            f = fn_;
            if done {
                converged = true;
                break;
            }
        }
        let ratio = f.powf(1.0 / p);
        if ratio > best.0 {
            best = (ratio, Some(v), total_iter, converged);
        }
    }
    let (value, v, _, converged) = best;
    EmbeddingEstimate {
        value,
        converged,
        iterations: total_iter,
        method: "power_iteration".into(),
        maximizer: v.map(|f| RealField::new(grid.clone(), f.values().iter().map(|c| c.re).collect()).expect("grid sized")),
    }
}

/// `k₀ = 2 ∨ min{k : 2k ≥ r}`; undefined for `r = ∞`.
pub fn k0(r: TimeExponent) -> Option<u32> {
    match r {
        TimeExponent::Infinite => None,
        TimeExponent::Finite(r) => Some(((r / 2.0).ceil() as u32).max(2)),
    }
}

/// `c = 2e + exp((2e·k₀!)^{1/k₀})`, infinite when `k₀` is undefined.
pub fn c_prop(k0: Option<u32>) -> f64 {
    match k0 {
        None => f64::INFINITY,
        Some(k) => {
            let fact: f64 = (1..=k).map(f64::from).product();
            let e = std::f64::consts::E;
            2.0 * e + (2.0 * e * fact).powf(1.0 / k as f64).exp()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailConstants {
    pub kappa: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub c_prop4: f64,
    pub k0: Option<u32>,
    pub r: TimeExponent,
    pub eta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub p: f64,
    pub d: usize,
    pub s: f64,
    pub hs_norm: f64,
    pub c_emb_inf: f64,
    pub c_emb_rpd2: f64,
    pub embeddings_converged: bool,
}

/// Admissible range check for the tail constants: `p ∈ [2, 2d/(d−1))`.
pub fn check_tail_exponent(p: f64, d: usize) -> Result<()> {
    let upper = if d <= 1 { f64::INFINITY } else { 2.0 * d as f64 / (d as f64 - 1.0) };
    if !(p >= 2.0 && p < upper) {
        return Err(Error::InvalidParams(format!(
            "p = {p} is outside the admissible range [2, {upper}) for d = {d}"
        )));
    }
    Ok(())
}

/// The constants `κ, κ₁, κ₂, c` for `(η, T, p)` and the operator `Φ`.
pub fn compute_constants(eta: f64, horizon: f64, p: f64, phi: &KernelOperator) -> Result<TailConstants> {
    let grid = phi.grid();
    let d = grid.dim();
    check_tail_exponent(p, d)?;
    if !(eta >= 0.0 && eta.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParams(format!("need eta >= 0 and T > 0, got eta = {eta}, T = {horizon}")));
    }
    let s = phi.regularity();
    let r = admissible_rate(p, d)?;
    let inv_r = r.reciprocal();
    let c_inf = embedding_constant(grid, s, NormKind::W1Inf)?;
    let c_rpd2 = match r {
        TimeExponent::Infinite => c_inf.clone(),
        TimeExponent::Finite(r) => embedding_constant(grid, s, NormKind::W1p { p: r * d as f64 / 2.0 })?,
    };
    let hs = phi.hs_norm(s);
    let df = d as f64;
    let common = c_rpd2.value.powi(2) * (df + 1.0) * (df + p) * hs * hs * eta / (1.0 - 4.0 * inv_r);
    let kappa = 4.0 * horizon.powf(1.0 - 4.0 * inv_r) * common;
    let kappa1 = horizon * 4.0 * c_inf.value.powi(2) * hs * hs * eta;
    let kappa2 = 8.0 * horizon.powf(1.0 - 2.0 * inv_r) * common;
    let k0 = k0(r);
    Ok(TailConstants {
        kappa,
        kappa1,
        kappa2,
        c_prop4: c_prop(k0),
        k0,
        r,
        eta,
        horizon,
        p,
        d,
        s,
        hs_norm: hs,
        c_emb_inf: c_inf.value,
        c_emb_rpd2: c_rpd2.value,
        embeddings_converged: c_inf.converged && c_rpd2.converged,
    })
}

/// `a·exp(b − δ²/κ)` with the degenerate cases spelled out.
fn exp_bound(a: f64, b: f64, delta: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    if a.is_infinite() {
        return f64::INFINITY;
    }
    a * (b - delta * delta / kappa).exp()
}

impl TailConstants {
    /// `exp(1 − δ²/κ)`.
    pub fn fixed_time_bound(&self, delta: f64) -> f64 {
        exp_bound(1.0, 1.0, delta, self.kappa)
    }

    /// `3 exp(−δ²/κ₁)`.
    pub fn sup_h1_bound(&self, delta: f64) -> f64 {
        exp_bound(3.0, 0.0, delta, self.kappa1)
    }

    /// `c exp(−δ²/κ₂)`.
    pub fn lr_bound(&self, delta: f64) -> f64 {
        exp_bound(self.c_prop4, 0.0, delta, self.kappa2)
    }
}

/// Wilson score interval for `hits / n` at normal quantile `z`.
pub fn wilson(hits: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let ph = hits as f64 / n;
    let z2 = z * z;
    let centre = (ph + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (ph * (1.0 - ph) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Test integrand `ξ` with `sup_t ‖ξ‖²_{H¹} ≤ η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestIntegrand {
    /// A fixed Gaussian bump scaled to `‖ξ‖²_{H¹} = η`.
    Frozen,
    /// Independent random smooth profiles, frozen on each of `pieces` intervals.
    PiecewiseRandom { pieces: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailCheckOptions {
    pub eta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub p: f64,
    /// `δ` values in units of `√κ₁`.
    pub delta_multipliers: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    pub integrand: TestIntegrand,
}

impl Default for TailCheckOptions {
    fn default() -> Self {
        TailCheckOptions {
            eta: 1.0,
            horizon: 1.0,
            dt: 0.01,
            p: 4.0,
            delta_multipliers: (0..8).map(|i| 0.5 + 0.5 * i as f64).collect(),
            n: 10_000,
            integrand: TestIntegrand::Frozen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TailStatus {
    Pass,
    Warn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailRow {
    pub delta: f64,
    /// `w1p_fixed_t`, `sup_h1` or `lr_w1p`.
    pub bound_kind: String,
    pub hits: usize,
    pub frequency: f64,
    pub upper95: f64,
    pub lower99: f64,
    pub bound: f64,
    pub status: TailStatus,
    pub hard_violation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    pub constants: TailConstants,
    pub rows: Vec<TailRow>,
    pub hard_violations: usize,
    pub all_pass: bool,
}

/// Per-path maxima of the three tested functionals.
#[derive(Debug, Clone, Copy)]
struct PathStats {
    fixed_time: f64,
    sup_h1: f64,
    lr: f64,
}

fn unit_bump(grid: &Arc<Grid>, eta: f64) -> Result<RealField> {
    let l = grid.length();
    let width = l / 10.0;
    let c = l / 2.0;
    let g = Field::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|xi| (xi - c).powi(2)).sum();
        Complex64::new((-r2 / (2.0 * width * width)).exp(), 0.0)
    });
    let scale = eta.sqrt() / norm(&g, NormKind::H1)?;
    Ok(RealField::new(grid.clone(), g.values().iter().map(|c| c.re * scale).collect())?)
}

fn random_profile<R: Rng + ?Sized>(grid: &Arc<Grid>, eta: f64, rng: &mut R) -> Result<RealField> {
    let modes = 3usize;
    let l = grid.length();
    let coefs: Vec<(Vec<i32>, f64, f64)> = (0..modes * grid.dim())
        .map(|_| {
            let m: Vec<i32> = (0..grid.dim()).map(|_| rng.random_range(0..=modes as i32)).collect();
            (m, rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
        .collect();
    let g = Field::from_fn(grid, |x| {
        let v: f64 = coefs
            .iter()
            .map(|(m, a, b)| {
                let ph: f64 = x.iter().zip(m).map(|(xi, mi)| 2.0 * std::f64::consts::PI * *mi as f64 * xi / l).sum();
                a * ph.cos() + b * ph.sin()
            })
            .sum();
        Complex64::new(v, 0.0)
    });
    let n = norm(&g, NormKind::H1)?;
    if n == 0.0 {
        return Ok(RealField::zeros(grid));
    }
    let scale = eta.sqrt() / n;
    Ok(RealField::new(grid.clone(), g.values().iter().map(|c| c.re * scale).collect())?)
}

fn path_stats<R: Rng + ?Sized>(
    phi: &KernelOperator,
    opts: &TailCheckOptions,
    r: TimeExponent,
    frozen: &RealField,
    rng: &mut R,
) -> Result<PathStats> {
    let grid = phi.grid().clone();
    let steps = ((opts.horizon / opts.dt).round() as usize).max(1);
    let dt = opts.horizon / steps as f64;
    let k2 = grid.k_squared().to_vec();
    let mut y_hat = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut stats = PathStats {
        fixed_time: 0.0,
        sup_h1: 0.0,
        lr: 0.0,
    };
    let mut lr_acc = 0.0;
    let pieces = match opts.integrand {
        TestIntegrand::Frozen => 1,
        TestIntegrand::PiecewiseRandom { pieces } => pieces.max(1),
    };
    let mut xi = frozen.clone();
    let phased = |spec: &[Complex64], t: f64| -> Field {
        let s: Vec<Complex64> = spec
            .iter()
            .zip(&k2)
            .map(|(c, k)| c * Complex64::from_polar(1.0, k * t))
            .collect();
        Field::from_spectrum(&grid, s)
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        if let TestIntegrand::PiecewiseRandom { .. } = opts.integrand {
            if k * pieces % steps < pieces {
                xi = random_profile(&grid, opts.eta, rng)?;
            }
        }
        let dw = phi.sample_increment(dt, rng)?.dw;
        let prod = Field::new(
            grid.clone(),
            xi.values().iter().zip(dw.values()).map(|(a, b)| Complex64::new(a * b, 0.0)).collect(),
        )?;
        for ((y, c), kk) in y_hat.iter_mut().zip(prod.spectrum()).zip(&k2) {
            *y += c * Complex64::from_polar(1.0, -kk * t);
        }
        let t_next = (k + 1) as f64 * dt;
        let h1 = grid.spectral_energy(&y_hat, |k2| 1.0 + k2).sqrt();
        stats.sup_h1 = stats.sup_h1.max(h1);
        let m = phased(&y_hat, opts.horizon);
        stats.fixed_time = stats.fixed_time.max(norm(&m, NormKind::W1p { p: opts.p })?);
        let z = phased(&y_hat, t_next);
        let zw = norm(&z, NormKind::W1p { p: opts.p })?;
        match r {
            TimeExponent::Finite(r) => lr_acc += zw.powf(r) * dt,
            TimeExponent::Infinite => stats.lr = stats.lr.max(zw),
        }
    }
    if let TimeExponent::Finite(r) = r {
        stats.lr = lr_acc.powf(1.0 / r);
    }
    Ok(stats)
}

/// Monte Carlo of `Z(t) = Σ_k U(t − t_k) ξ(t_k) ΔW_k` against the three bounds.
///
/// A row passes when the one-sided 95% upper confidence limit of the
/// exceedance frequency is below the bound; a hard violation is a one-sided
/// 99% lower limit above it.
pub fn empirical_tail_check(
    phi: &KernelOperator,
    opts: &TailCheckOptions,
    streams: &StreamFactory,
    workers: Option<usize>,
) -> Result<TailReport> {
    if opts.n < 1 || !(opts.dt > 0.0) {
        return Err(Error::InvalidParams("tail check needs N >= 1 and dt > 0".into()));
    }
    let constants = compute_constants(opts.eta, opts.horizon, opts.p, phi)?;
    let grid = phi.grid().clone();
    let frozen = unit_bump(&grid, opts.eta)?;
    let degenerate = phi.hs_norm(0.0) == 0.0 || opts.eta == 0.0;
    let stats = in_pool(workers, || {
        ordered_range(opts.n, |i| {
            let mut rng = streams.stream(i as u64);
            path_stats(phi, opts, constants.r, &frozen, &mut rng)
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let root = constants.kappa1.sqrt();
    let mut rows = Vec::new();
    for &mult in &opts.delta_multipliers {
        let delta = if root > 0.0 { mult * root } else { mult };
        let kinds: [(&str, f64, fn(&PathStats) -> f64); 3] = [
            ("w1p_fixed_t", constants.fixed_time_bound(delta), |s| s.fixed_time),
            ("sup_h1", constants.sup_h1_bound(delta), |s| s.sup_h1),
            ("lr_w1p", constants.lr_bound(delta), |s| s.lr),
        ];
        for (name, bound, get) in kinds {
            let hits = stats.iter().filter(|s| get(s) >= delta).count();
            let (upper95, lower99) = if degenerate {
                (0.0, 0.0)
            } else {
                (wilson(hits, opts.n, Z95).1, wilson(hits, opts.n, Z99).0)
            };
            rows.push(TailRow {
                delta,
                bound_kind: name.into(),
                hits,
                frequency: hits as f64 / opts.n as f64,
                upper95,
                lower99,
                bound,
                status: if upper95 <= bound { TailStatus::Pass } else { TailStatus::Warn },
                hard_violation: lower99 > bound,
            });
        }
    }
    let hard_violations = rows.iter().filter(|r| r.hard_violation).count();
    Ok(TailReport {
        all_pass: rows.iter().all(|r| r.status == TailStatus::Pass),
        hard_violations,
        constants,
        rows,
    })
}
