//! Periodic spatial grid, Fourier multipliers and the discrete norms used
//! throughout the crate.
//!
//! Fields are stored row-major (last axis fastest). The unnormalized DFT
//! convention is used: `û_m = Σ_j u_j e^{-i k_m x_j}`, so Parseval reads
//! `‖u‖²_{L²} = (V / N²) Σ_m |û_m|²` with `N = n^d` and `V = L^d`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic box `[0, L)^d` sampled with `n` points per axis.
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
    /// Derivative wavenumbers per axis; the Nyquist entry is zero so that
    /// `k_{-m} = -k_m` holds exactly.
    k_axis: Vec<f64>,
    /// Squared wavenumbers per axis, Nyquist included.
    k2_axis: Vec<f64>,
    /// `|k|²` per flat mode index.
    k2: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.length == other.length
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Arc<Grid>> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n = {n} must be even and >= 8")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length {length} must be positive")));
        }
        let two_pi_over_l = 2.0 * std::f64::consts::PI / length;
        let half = n / 2;
        let mut k_axis = vec![0.0; n];
        let mut k2_axis = vec![0.0; n];
        for m in 0..n {
            let signed = if m < half {
                m as f64
            } else if m == half {
                half as f64
            } else {
                m as f64 - n as f64
            };
            let k = two_pi_over_l * signed;
            k2_axis[m] = k * k;
            k_axis[m] = if m == half { 0.0 } else { k };
        }
        let total = n.pow(dim as u32);
        let mut k2 = vec![0.0; total];
        for (idx, slot) in k2.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut rem = idx;
            for _ in 0..dim {
                acc += k2_axis[rem % n];
                rem /= n;
            }
            *slot = acc;
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(Arc::new(Grid {
            dim,
            n,
            length,
            k_axis,
            k2_axis,
            k2,
            fwd,
            inv,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Total number of grid points `n^d`.
    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Quadrature weight `(L/n)^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Derivative wavenumbers along one axis (Nyquist mapped to zero).
    pub fn wavenumbers(&self) -> &[f64] {
        &self.k_axis
    }

    pub fn wavenumbers_squared(&self) -> &[f64] {
        &self.k2_axis
    }

    /// `|k|²` for every flat mode index.
    pub fn k_squared(&self) -> &[f64] {
        &self.k2
    }

    /// Per-axis indices of a flat (row-major) index.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        let mut rem = flat;
        for a in (0..self.dim).rev() {
            out[a] = rem % self.n;
            rem /= self.n;
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + (i % self.n))
    }

    /// Physical coordinates of a grid point.
    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(flat).into_iter().map(|i| i as f64 * h).collect()
    }

    /// Wavenumber along `axis` of a flat mode index (derivative convention).
    pub fn mode_wavenumber(&self, flat: usize, axis: usize) -> f64 {
        let stride = self.n.pow((self.dim - 1 - axis) as u32);
        self.k_axis[(flat / stride) % self.n]
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len());
        let n = self.n;
        // last axis is contiguous
        plan.process(data);
        if self.dim == 1 {
            return;
        }
        let total = data.len();
        let mut lines = vec![Complex64::new(0.0, 0.0); total];
        for axis in 0..self.dim - 1 {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = n * stride;
            let mut pos = 0;
            for outer in 0..total / block {
                for inner in 0..stride {
                    let base = outer * block + inner;
                    for j in 0..n {
                        lines[pos + j] = data[base + j * stride];
                    }
                    pos += n;
                }
            }
            plan.process(&mut lines);
            pos = 0;
            for outer in 0..total / block {
                for inner in 0..stride {
                    let base = outer * block + inner;
                    for j in 0..n {
                        data[base + j * stride] = lines[pos + j];
                    }
                    pos += n;
                }
            }
        }
    }

    /// In-place forward DFT (unnormalized).
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
    }

    /// In-place inverse DFT, normalized by `1/N`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Parseval sum `(V/N²) Σ w_m |û_m|²` for a spectral array.
    pub(crate) fn spectral_energy(&self, spec: &[Complex64], weight: impl Fn(f64) -> f64) -> f64 {
        let n2 = (self.len() as f64).powi(2);
        let acc: f64 = spec
            .iter()
            .zip(&self.k2)
            .map(|(c, &k2)| weight(k2) * c.norm_sqr())
            .sum();
        acc * self.volume() / n2
    }
}

pub fn same_grid(a: &Grid, b: &Grid) -> bool {
    std::ptr::eq(a, b) || a == b
}

/// Complex field sampled on a grid.
#[derive(Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("grid", &self.grid)
            .field("len", &self.values.len())
            .finish()
    }
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<Complex64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Field {
        Field {
            grid: grid.clone(),
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> Complex64) -> Field {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Field {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteField)
        }
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        check_grids(&self.grid, &other.grid)?;
        Ok(Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        check_grids(&self.grid, &other.grid)?;
        Ok(Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Pointwise `|u|²`.
    pub fn modulus_squared(&self) -> RealField {
        RealField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|c| c.norm_sqr()).collect(),
        }
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut s = self.values.clone();
        self.grid.forward(&mut s);
        s
    }

    pub fn from_spectrum(grid: &Arc<Grid>, mut spec: Vec<Complex64>) -> Field {
        grid.inverse(&mut spec);
        Field {
            grid: grid.clone(),
            values: spec,
        }
    }
}

/// Real field sampled on a grid (noise, potentials, controls).
#[derive(Clone)]
pub struct RealField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl fmt::Debug for RealField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RealField")
            .field("grid", &self.grid)
            .field("len", &self.values.len())
            .finish()
    }
}

impl RealField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<RealField> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(RealField { grid, values })
    }

    pub fn zeros(grid: &Arc<Grid>) -> RealField {
        RealField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> RealField {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        RealField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_complex(&self) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> RealField {
        RealField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &RealField) -> Result<RealField> {
        check_grids(&self.grid, &other.grid)?;
        Ok(RealField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `⟨self, other⟩_{L²}` by grid quadrature.
    pub fn inner(&self, other: &RealField) -> Result<f64> {
        check_grids(&self.grid, &other.grid)?;
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(dot * self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        (s * self.grid.cell_volume()).sqrt()
    }
}

pub(crate) fn check_grids(a: &Grid, b: &Grid) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{a:?} vs {b:?}")))
    }
}

/// Which discrete norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormKind {
    L2,
    H1,
    Hs { s: f64 },
    /// `(∫|u|^p + Σ_j ∫|∂_j u|^p)^{1/p}`.
    W1p { p: f64 },
    Linf,
    /// `max(‖u‖_∞, max_j ‖∂_j u‖_∞)`, the `p → ∞` limit of `W1p`.
    W1Inf,
}

impl NormKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NormKind::Hs { s } if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::InvalidNorm(format!("H^s requires s >= 0, got {s}")))
            }
            NormKind::W1p { p } if !(p >= 2.0 && p.is_finite()) => {
                Err(Error::InvalidNorm(format!("W^{{1,p}} requires finite p >= 2, got {p}")))
            }
            _ => Ok(()),
        }
    }
}

/// Exact solution of the discrete free equation `i u_t = Δu`: mode `m` is
/// multiplied by `exp(i |k_m|² t)`.
pub fn free_group_apply(u: &Field, t: f64) -> Result<Field> {
    u.ensure_finite()?;
    let grid = u.grid().clone();
    let mut spec = u.spectrum();
    apply_free_phase(&grid, &mut spec, t);
    Ok(Field::from_spectrum(&grid, spec))
}

pub(crate) fn apply_free_phase(grid: &Grid, spec: &mut [Complex64], t: f64) {
    if t == 0.0 {
        return;
    }
    for (c, &k2) in spec.iter_mut().zip(grid.k_squared()) {
        *c *= Complex64::from_polar(1.0, k2 * t);
    }
}

/// Spectral derivatives along each axis.
pub fn gradient(u: &Field) -> Vec<Field> {
    let grid = u.grid().clone();
    let spec = u.spectrum();
    (0..grid.dim())
        .map(|axis| {
            let d: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(m, c)| c * Complex64::new(0.0, grid.mode_wavenumber(m, axis)))
                .collect();
            Field::from_spectrum(&grid, d)
        })
        .collect()
}

fn lp_sum(values: &[Complex64], p: f64) -> f64 {
    if p == 2.0 {
        values.iter().map(|c| c.norm_sqr()).sum()
    } else {
        values.iter().map(|c| c.norm().powf(p)).sum()
    }
}

fn sup_abs(values: &[Complex64]) -> f64 {
    values.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn norm(u: &Field, kind: NormKind) -> Result<f64> {
    kind.validate()?;
    u.ensure_finite()?;
    let grid = u.grid();
    Ok(match kind {
        NormKind::L2 => grid.spectral_energy(&u.spectrum(), |_| 1.0).sqrt(),
        NormKind::H1 => grid.spectral_energy(&u.spectrum(), |k2| 1.0 + k2).sqrt(),
        NormKind::Hs { s } => {
            if s == 0.0 {
                grid.spectral_energy(&u.spectrum(), |_| 1.0).sqrt()
            } else {
                grid.spectral_energy(&u.spectrum(), |k2| (1.0 + k2).powf(s)).sqrt()
            }
        }
        NormKind::W1p { p } => {
            let mut acc = lp_sum(u.values(), p);
            for g in gradient(u) {
                acc += lp_sum(g.values(), p);
            }
            (acc * grid.cell_volume()).powf(1.0 / p)
        }
        NormKind::Linf => sup_abs(u.values()),
        NormKind::W1Inf => gradient(u)
            .iter()
            .map(|g| sup_abs(g.values()))
            .fold(sup_abs(u.values()), f64::max),
    })
}

/// `M(u) = ‖u‖_{L²}`.
pub fn momentum(u: &Field) -> Result<f64> {
    norm(u, NormKind::L2)
}

/// `H(u) = ½∫|∇u|² − λ/(2σ+2) ∫|u|^{2σ+2}` with spectral gradient and grid quadrature.
pub fn hamiltonian(u: &Field, lambda: f64, sigma: f64) -> Result<f64> {
    u.ensure_finite()?;
    if sigma < 0.5 {
        return Err(Error::InvalidParams(format!("sigma = {sigma} must be >= 1/2")));
    }
    let dv = u.grid().cell_volume();
    let kinetic: f64 = gradient(u)
        .iter()
        .map(|g| g.values().iter().map(|c| c.norm_sqr()).sum::<f64>())
        .sum();
    let q = 2.0 * sigma + 2.0;
    let potential: f64 = u.values().iter().map(|c| c.norm_sqr().powf(q / 2.0)).sum();
    Ok(0.5 * kinetic * dv - lambda / q * potential * dv)
}

/// Time exponent `r(p)` of an admissible pair; `r(2) = ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeExponent {
    Finite(f64),
    Infinite,
}

impl TimeExponent {
    pub fn is_infinite(&self) -> bool {
        matches!(self, TimeExponent::Infinite)
    }

    /// `1/r`, zero for the infinite exponent.
    pub fn reciprocal(&self) -> f64 {
        match *self {
            TimeExponent::Finite(r) => 1.0 / r,
            TimeExponent::Infinite => 0.0,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            TimeExponent::Finite(r) => r,
            TimeExponent::Infinite => f64::INFINITY,
        }
    }
}

/// `2/r(p) = d(1/2 − 1/p)` on the admissible range of `p`.
pub fn admissible_rate(p: f64, d: usize) -> Result<TimeExponent> {
    let admissible = match d {
        0 => false,
        1 => p >= 2.0,
        2 => p >= 2.0 && p.is_finite(),
        _ => p >= 2.0 && p < 2.0 * d as f64 / (d as f64 - 2.0),
    };
    if !admissible {
        return Err(Error::NotAdmissible { p, d });
    }
    let two_over_r = d as f64 * (0.5 - 1.0 / p);
    if two_over_r == 0.0 {
        Ok(TimeExponent::Infinite)
    } else {
        Ok(TimeExponent::Finite(2.0 / two_over_r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(1, 6, 1.0).is_err());
        assert!(Grid::new(1, 9, 1.0).is_err());
        assert!(Grid::new(1, 16, 0.0).is_err());
        assert!(Grid::new(4, 16, 1.0).is_err());
    }

    #[test]
    fn wavenumbers_are_antisymmetric() {
        let g = Grid::new(1, 16, 7.0).unwrap();
        let k = g.wavenumbers();
        for m in 1..16 {
            assert_eq!(k[16 - m], -k[m]);
        }
        assert_eq!(k[0], 0.0);
    }

    #[test]
    fn plane_wave_gets_exact_phase() {
        let g = Grid::new(1, 32, 10.0).unwrap();
        let k = 2.0 * PI * 3.0 / 10.0;
        let u = Field::from_fn(&g, |x| Complex64::from_polar(1.0, k * x[0]));
        let t = 0.37;
        let v = free_group_apply(&u, t).unwrap();
        for (i, z) in v.values().iter().enumerate() {
            let x = g.coords(i)[0];
            let expect = Complex64::from_polar(1.0, k * k * t + k * x);
            assert!((z - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let g = Grid::new(2, 8, 3.0).unwrap();
        let u = Field::from_fn(&g, |x| Complex64::new(x[0].sin(), x[1] * x[0]));
        let v = free_group_apply(&u, 0.0).unwrap();
        for (a, b) in u.values().iter().zip(v.values()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let mut u = Field::zeros(&g);
        u.values_mut()[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(free_group_apply(&u, 1.0), Err(Error::NonFiniteField)));
    }

    #[test]
    fn constant_field_norms() {
        let g = Grid::new(2, 16, 5.0).unwrap();
        let c = Complex64::new(0.6, -0.8) * 3.0;
        let u = Field::from_fn(&g, |_| c);
        let expect = c.norm() * 5.0;
        assert!(rel(norm(&u, NormKind::L2).unwrap(), expect) < 1e-13);
        for s in [0.0, 0.5, 1.0, 2.7] {
            assert!(rel(norm(&u, NormKind::Hs { s }).unwrap(), expect) < 1e-13);
        }
        assert!(rel(momentum(&u).unwrap(), expect) < 1e-13);
        for g in gradient(&u) {
            assert!(g.values().iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn plane_wave_gradient() {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let k = 2.0 * PI * 5.0 / 4.0;
        let u = Field::from_fn(&g, |x| Complex64::from_polar(1.0, k * x[0]));
        let du = &gradient(&u)[0];
        for (a, b) in du.values().iter().zip(u.values()) {
            assert!((a - Complex64::new(0.0, k) * b).norm() < 1e-11);
        }
    }

    #[test]
    fn hamiltonian_of_constant() {
        let g = Grid::new(1, 16, 3.0).unwrap();
        let c = 1.3;
        let u = Field::from_fn(&g, |_| Complex64::new(c, 0.0));
        let h = hamiltonian(&u, 1.0, 1.0).unwrap();
        assert!(rel(h, -0.25 * c.powi(4) * 3.0) < 1e-13);
        assert_eq!(hamiltonian(&Field::zeros(&g), 1.0, 1.0).unwrap(), 0.0);
        assert!(hamiltonian(&u, 1.0, 0.3).is_err());
    }

    #[test]
    fn admissible_rates() {
        assert_eq!(admissible_rate(2.0, 1).unwrap(), TimeExponent::Infinite);
        assert_eq!(admissible_rate(2.0, 3).unwrap(), TimeExponent::Infinite);
        assert!(rel(admissible_rate(6.0, 1).unwrap().as_f64(), 6.0) < 1e-14);
        assert!(rel(admissible_rate(4.0, 2).unwrap().as_f64(), 4.0) < 1e-14);
        assert!(rel(admissible_rate(f64::INFINITY, 1).unwrap().as_f64(), 4.0) < 1e-14);
        assert!(admissible_rate(f64::INFINITY, 2).is_err());
        assert!(admissible_rate(6.0, 3).is_err());
        assert!(admissible_rate(1.5, 1).is_err());
    }

    #[test]
    fn norm_kind_validation() {
        assert!(NormKind::Hs { s: -0.1 }.validate().is_err());
        assert!(NormKind::W1p { p: 1.5 }.validate().is_err());
        assert!(NormKind::W1p { p: 3.0 }.validate().is_ok());
    }

    #[test]
    fn two_dimensional_fft_roundtrip() {
        let g = Grid::new(2, 8, 2.0).unwrap();
        let u = Field::from_fn(&g, |x| Complex64::new((3.0 * x[0]).cos(), x[1]));
        let back = Field::from_spectrum(&g, u.spectrum());
        for (a, b) in u.values().iter().zip(back.values()) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
