//! The coloring operator `Φ` of the noise `W = Φ W_c`, represented by a real
//! kernel on the grid, together with everything derived from it: the Itô
//! correction field `F_Φ`, the spatial correlation, Hilbert–Schmidt norms and
//! a regularized pseudo-inverse.
//!
//! The canonical orthonormal basis of grid functions is
//! `e_j = 1_{cell j} / √(Δx^d)`, so `Φe_j(x) = K(x, y_j) √(Δx^d)`.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grids, norm, Field, Grid, NormKind, RealField};

/// Largest grid (in points) for which a dense kernel matrix is allowed.
pub const MAX_EXPLICIT_POINTS: usize = 4096;

/// Default relative singular-value cutoff of the pseudo-inverse.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub enum KernelForm {
    /// Stationary kernel `K(x, y) = κ(x − y)`; stores `κ` sampled at the
    /// periodic offsets of each grid point from the origin.
    Convolution { profile: RealField },
    /// Dense `K(x_i, y_j)`, row `i`, column `j`.
    Explicit { matrix: DMatrix<f64> },
    /// `K(x, y) = Σ_i φ_i(x) ψ_i(y)`.
    RankR { pairs: Vec<(RealField, RealField)> },
}

/// Regularized inverse of the discrete operator `v ↦ Φv` on `(ker Φ)^⊥`.
#[derive(Debug, Clone)]
enum PseudoInverse {
    /// Fourier multiplier of `Φ` and its truncated reciprocal.
    Spectral {
        inverse: Vec<Complex64>,
        keep: Vec<bool>,
    },
    /// Thin SVD `A = U S Vᵀ` of the grid-value matrix.
    Svd {
        u: DMatrix<f64>,
        singular: Vec<f64>,
        v: DMatrix<f64>,
    },
}

pub struct KernelOperator {
    grid: Arc<Grid>,
    form: KernelForm,
    s: f64,
    /// DFT of the profile (convolution form only).
    profile_spectrum: Option<Vec<Complex64>>,
    f_phi: RealField,
    hs0: f64,
    hs_s: f64,
    pinv_tol: f64,
    pinv: OnceLock<PseudoInverse>,
}

impl std::fmt::Debug for KernelOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let form = match &self.form {
            KernelForm::Convolution { .. } => "convolution",
            KernelForm::Explicit { .. } => "explicit",
            KernelForm::RankR { .. } => "rank_r",
        };
        f.debug_struct("KernelOperator")
            .field("grid", &self.grid)
            .field("form", &form)
            .field("s", &self.s)
            .field("hs_norm_0", &self.hs0)
            .field("hs_norm_s", &self.hs_s)
            .finish()
    }
}

/// Minimum-image offset of coordinate `x` on a periodic axis of length `l`.
fn periodic_offset(x: f64, l: f64) -> f64 {
    let mut z = x.rem_euclid(l);
    if z > 0.5 * l {
        z -= l;
    }
    z
}

/// Check the regularity index against the standing requirement `s > d/4 + 1`.
pub fn check_regularity(s: f64, d: usize) -> Result<()> {
    let bound = d as f64 / 4.0 + 1.0;
    if !(s.is_finite() && s > bound) {
        return Err(Error::InvalidKernel(format!(
            "regularity s = {s} must exceed d/4 + 1 = {bound} (Hilbert-Schmidt into H^s requirement)"
        )));
    }
    Ok(())
}

impl KernelOperator {
    fn build(grid: Arc<Grid>, form: KernelForm, s: f64) -> Result<KernelOperator> {
        check_regularity(s, grid.dim())?;
        let finite = match &form {
            KernelForm::Convolution { profile } => {
                check_grids(profile.grid(), &grid)?;
                profile.values().iter().all(|v| v.is_finite())
            }
            KernelForm::Explicit { matrix } => {
                if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
                    return Err(Error::InvalidKernel(format!(
                        "explicit kernel is {}x{}, grid has {} points",
                        matrix.nrows(),
                        matrix.ncols(),
                        grid.len()
                    )));
                }
                if grid.len() > MAX_EXPLICIT_POINTS {
                    return Err(Error::InvalidKernel(format!(
                        "explicit kernels are limited to n^d <= {MAX_EXPLICIT_POINTS}"
                    )));
                }
                matrix.iter().all(|v| v.is_finite())
            }
            KernelForm::RankR { pairs } => {
                let mut ok = true;
                for (phi, psi) in pairs {
                    check_grids(phi.grid(), &grid)?;
                    check_grids(psi.grid(), &grid)?;
                    ok &= phi.values().iter().chain(psi.values()).all(|v| v.is_finite());
                }
                ok
            }
        };
        if !finite {
            return Err(Error::InvalidKernel("kernel has non-finite entries".into()));
        }
        let profile_spectrum = match &form {
            KernelForm::Convolution { profile } => Some(profile.to_complex().spectrum()),
            _ => None,
        };
        let mut op = KernelOperator {
            f_phi: RealField::zeros(&grid),
            grid,
            form,
            s,
            profile_spectrum,
            hs0: 0.0,
            hs_s: 0.0,
            pinv_tol: DEFAULT_PINV_TOL,
            pinv: OnceLock::new(),
        };
        op.f_phi = op.compute_f_phi();
        op.hs0 = op.compute_hs_norm(0.0);
        op.hs_s = op.compute_hs_norm(s);
        Ok(op)
    }

    pub fn convolution(profile: RealField, s: f64) -> Result<KernelOperator> {
        let grid = profile.grid().clone();
        KernelOperator::build(grid, KernelForm::Convolution { profile }, s)
    }

    /// Stationary Gaussian kernel `a · exp(−|z|²/(2ℓ²))` with periodic offsets.
    pub fn gaussian(grid: &Arc<Grid>, length_scale: f64, amplitude: f64, s: f64) -> Result<KernelOperator> {
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::InvalidKernel(format!("length scale {length_scale} must be positive")));
        }
        let l = grid.length();
        let profile = RealField::from_fn(grid, |x| {
            let r2: f64 = x.iter().map(|&xi| periodic_offset(xi, l).powi(2)).sum();
            amplitude * (-r2 / (2.0 * length_scale * length_scale)).exp()
        });
        KernelOperator::convolution(profile, s)
    }

    pub fn explicit(grid: &Arc<Grid>, matrix: DMatrix<f64>, s: f64) -> Result<KernelOperator> {
        KernelOperator::build(grid.clone(), KernelForm::Explicit { matrix }, s)
    }

    /// Dense kernel sampled from a function of `(x, y)`.
    pub fn explicit_from_fn(
        grid: &Arc<Grid>,
        s: f64,
        kernel: impl Fn(&[f64], &[f64]) -> f64,
    ) -> Result<KernelOperator> {
        let n = grid.len();
        if n > MAX_EXPLICIT_POINTS {
            return Err(Error::InvalidKernel(format!(
                "explicit kernels are limited to n^d <= {MAX_EXPLICIT_POINTS}"
            )));
        }
        let coords: Vec<Vec<f64>> = (0..n).map(|i| grid.coords(i)).collect();
        let matrix = DMatrix::from_fn(n, n, |i, j| kernel(&coords[i], &coords[j]));
        KernelOperator::explicit(grid, matrix, s)
    }

    pub fn rank_r(grid: &Arc<Grid>, pairs: Vec<(RealField, RealField)>, s: f64) -> Result<KernelOperator> {
        KernelOperator::build(grid.clone(), KernelForm::RankR { pairs }, s)
    }

    pub fn zero(grid: &Arc<Grid>, s: f64) -> Result<KernelOperator> {
        KernelOperator::convolution(RealField::zeros(grid), s)
    }

    /// Sets the relative singular-value cutoff used by the pseudo-inverse.
    pub fn with_pinv_tolerance(mut self, tol: f64) -> KernelOperator {
        self.pinv_tol = tol;
        self.pinv = OnceLock::new();
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    /// Configured regularity index of the target space `H^s`.
    pub fn regularity(&self) -> f64 {
        self.s
    }

    pub fn pinv_tolerance(&self) -> f64 {
        self.pinv_tol
    }

    /// `Φv(x) = ∫K(x,y) v(y) dy` by grid quadrature.
    pub fn apply(&self, v: &RealField) -> Result<RealField> {
        check_grids(v.grid(), &self.grid)?;
        let dv = self.grid.cell_volume();
        let out = match &self.form {
            KernelForm::Convolution { .. } => {
                let kh = self.profile_spectrum.as_ref().expect("convolution spectrum");
                let mut spec = v.to_complex().spectrum();
                for (c, k) in spec.iter_mut().zip(kh) {
                    *c *= k * dv;
                }
                self.grid.inverse(&mut spec);
                spec.into_iter().map(|c| c.re).collect()
            }
            KernelForm::Explicit { matrix } => {
                let x = DVector::from_column_slice(v.values());
                (matrix * x * dv).iter().copied().collect()
            }
            KernelForm::RankR { pairs } => {
                let mut out = vec![0.0; self.grid.len()];
                for (phi, psi) in pairs {
                    let c = psi.inner(v)?;
                    for (o, p) in out.iter_mut().zip(phi.values()) {
                        *o += c * p;
                    }
                }
                out
            }
        };
        RealField::new(self.grid.clone(), out)
    }

    /// `Φe_j` for the canonical basis vector at grid point `j`.
    pub fn column(&self, j: usize) -> RealField {
        let mut e = RealField::zeros(&self.grid);
        e.values_mut()[j] = 1.0 / self.grid.cell_volume().sqrt();
        self.apply(&e).expect("same grid")
    }

    /// Kernel value `K(x_i, y_j)`.
    pub fn kernel_entry(&self, i: usize, j: usize) -> f64 {
        match &self.form {
            KernelForm::Convolution { profile } => {
                let xi = self.grid.multi_index(i);
                let yj = self.grid.multi_index(j);
                let n = self.grid.n();
                let off: Vec<usize> = xi.iter().zip(&yj).map(|(a, b)| (a + n - b) % n).collect();
                profile.values()[self.grid.flat_index(&off)]
            }
            KernelForm::Explicit { matrix } => matrix[(i, j)],
            KernelForm::RankR { pairs } => pairs
                .iter()
                .map(|(phi, psi)| phi.values()[i] * psi.values()[j])
                .sum(),
        }
    }

    /// Dense `K(x_i, y_j)`; only for grids within [`MAX_EXPLICIT_POINTS`].
    pub fn dense_kernel(&self) -> Result<DMatrix<f64>> {
        let n = self.grid.len();
        if n > MAX_EXPLICIT_POINTS {
            return Err(Error::InvalidKernel("grid too large for a dense kernel".into()));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| self.kernel_entry(i, j)))
    }

    fn psi_gram(pairs: &[(RealField, RealField)]) -> Vec<Vec<f64>> {
        pairs
            .iter()
            .map(|(_, a)| pairs.iter().map(|(_, b)| a.inner(b).expect("same grid")).collect())
            .collect()
    }

    fn compute_f_phi(&self) -> RealField {
        let dv = self.grid.cell_volume();
        let values = match &self.form {
            KernelForm::Convolution { profile } => {
                let c = dv * profile.values().iter().map(|k| k * k).sum::<f64>();
                vec![c; self.grid.len()]
            }
            KernelForm::Explicit { matrix } => matrix
                .row_iter()
                .map(|row| dv * row.iter().map(|k| k * k).sum::<f64>())
                .collect(),
            KernelForm::RankR { pairs } => {
                let g = Self::psi_gram(pairs);
                (0..self.grid.len())
                    .map(|x| {
                        let mut acc = 0.0;
                        for (i, (pi, _)) in pairs.iter().enumerate() {
                            for (l, (pl, _)) in pairs.iter().enumerate() {
                                acc += pi.values()[x] * pl.values()[x] * g[i][l];
                            }
                        }
                        acc
                    })
                    .collect()
            }
        };
        RealField::new(self.grid.clone(), values).expect("grid sized")
    }

    fn real_hs(&self, f: &RealField, s: f64) -> f64 {
        norm(&f.to_complex(), NormKind::Hs { s }).expect("finite kernel")
    }

    fn compute_hs_norm(&self, s: f64) -> f64 {
        let dv = self.grid.cell_volume();
        let sq = match &self.form {
            KernelForm::Convolution { profile } => {
                self.grid.volume() * self.real_hs(profile, s).powi(2)
            }
            KernelForm::Explicit { matrix } => matrix
                .column_iter()
                .map(|col| {
                    let f = RealField::new(self.grid.clone(), col.iter().copied().collect())
                        .expect("grid sized");
                    dv * self.real_hs(&f, s).powi(2)
                })
                .sum(),
            KernelForm::RankR { pairs } => {
                let gpsi = Self::psi_gram(pairs);
                let spectra: Vec<Vec<Complex64>> =
                    pairs.iter().map(|(phi, _)| phi.to_complex().spectrum()).collect();
                let n2 = (self.grid.len() as f64).powi(2);
                let mut acc = 0.0;
                for i in 0..pairs.len() {
                    for l in 0..pairs.len() {
                        let g: f64 = spectra[i]
                            .iter()
                            .zip(&spectra[l])
                            .zip(self.grid.k_squared())
                            .map(|((a, b), &k2)| (1.0 + k2).powf(s) * (a * b.conj()).re)
                            .sum();
                        acc += g * self.grid.volume() / n2 * gpsi[i][l];
                    }
                }
                acc.max(0.0)
            }
        };
        sq.sqrt()
    }

    /// `‖Φ‖_{L₂(L², H^s)} = (Σ_j ‖Φe_j‖²_{H^s})^{1/2}`.
    pub fn hs_norm(&self, s: f64) -> f64 {
        if s == 0.0 {
            self.hs0
        } else if s == self.s {
            self.hs_s
        } else {
            self.compute_hs_norm(s)
        }
    }

    /// `F_Φ(x) = Σ_j (Φe_j(x))² = ∫K(x,y)² dy`.
    pub fn f_phi(&self) -> &RealField {
        &self.f_phi
    }

    /// `c(x, z) = ∫K(x+z, u) K(x, u) du` with periodic wrap of `x + z`.
    pub fn correlation(&self, x: usize, offset: &[isize]) -> Result<f64> {
        if offset.len() != self.grid.dim() {
            return Err(Error::GridMismatch(format!(
                "offset has {} components, grid dimension is {}",
                offset.len(),
                self.grid.dim()
            )));
        }
        let n = self.grid.n() as isize;
        let xi = self.grid.multi_index(x);
        let shifted: Vec<usize> = xi
            .iter()
            .zip(offset)
            .map(|(&a, &z)| (a as isize + z).rem_euclid(n) as usize)
            .collect();
        let xz = self.grid.flat_index(&shifted);
        if offset.iter().all(|&z| z == 0) {
            return Ok(self.f_phi.values()[x]);
        }
        let dv = self.grid.cell_volume();
        Ok(match &self.form {
            KernelForm::Explicit { matrix } => {
                dv * matrix.row(xz).iter().zip(matrix.row(x).iter()).map(|(a, b)| a * b).sum::<f64>()
            }
            KernelForm::Convolution { .. } | KernelForm::RankR { .. } => {
                dv * (0..self.grid.len())
                    .map(|u| self.kernel_entry(xz, u) * self.kernel_entry(x, u))
                    .sum::<f64>()
            }
        })
    }

    /// Draws the white coordinates of one increment and colors them.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<NoiseIncrement> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt = {dt} must be positive")));
        }
        let coords: Vec<f64> = (0..self.grid.len()).map(|_| rng.sample(StandardNormal)).collect();
        let dw = self.color(&coords, dt);
        Ok(NoiseIncrement { dw, coords, dt })
    }

    /// `Φ(Σ_j ξ_j e_j) · √dt` for white coordinates `ξ`.
    pub fn color(&self, coords: &[f64], dt: f64) -> RealField {
        let scale = (dt / self.grid.cell_volume()).sqrt();
        let white = RealField::new(self.grid.clone(), coords.iter().map(|c| c * scale).collect())
            .expect("grid sized");
        self.apply(&white).expect("same grid")
    }

    fn pseudo_inverse(&self) -> &PseudoInverse {
        self.pinv.get_or_init(|| self.factorize())
    }

    fn factorize(&self) -> PseudoInverse {
        let dv = self.grid.cell_volume();
        match &self.form {
            KernelForm::Convolution { .. } => {
                let kh = self.profile_spectrum.as_ref().expect("convolution spectrum");
                let max = kh.iter().map(|c| c.norm()).fold(0.0, f64::max) * dv;
                let keep: Vec<bool> = kh
                    .iter()
                    .map(|c| max > 0.0 && c.norm() * dv > self.pinv_tol * max)
                    .collect();
                let inverse = kh
                    .iter()
                    .zip(&keep)
                    .map(|(c, &k)| if k { 1.0 / (c * dv) } else { Complex64::new(0.0, 0.0) })
                    .collect();
                PseudoInverse::Spectral { inverse, keep }
            }
            KernelForm::Explicit { matrix } => {
                let a = matrix * dv;
                let svd = a.svd(true, true);
                let u = svd.u.expect("u requested");
                let vt = svd.v_t.expect("v requested");
                self.truncate(u, svd.singular_values.iter().copied().collect(), vt.transpose())
            }
            KernelForm::RankR { pairs } => {
                let n = self.grid.len();
                let r = pairs.len();
                if r == 0 {
                    return PseudoInverse::Svd {
                        u: DMatrix::zeros(n, 0),
                        singular: vec![],
                        v: DMatrix::zeros(n, 0),
                    };
                }
                // A = P Qᵀ with P = [φ_i], Q = dv [ψ_i]; reduce through thin QR.
                let p = DMatrix::from_fn(n, r, |x, i| pairs[i].0.values()[x]);
                let q = DMatrix::from_fn(n, r, |x, i| pairs[i].1.values()[x] * dv);
                let (q1, r1) = p.qr().unpack();
                let (q2, r2) = q.qr().unpack();
                let core = &r1 * r2.transpose();
                let svd = core.svd(true, true);
                let u = &q1 * svd.u.expect("u requested");
                let v = &q2 * svd.v_t.expect("v requested").transpose();
                self.truncate(u, svd.singular_values.iter().copied().collect(), v)
            }
        }
    }

    fn truncate(&self, u: DMatrix<f64>, singular: Vec<f64>, v: DMatrix<f64>) -> PseudoInverse {
        let max = singular.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..singular.len())
            .filter(|&i| max > 0.0 && singular[i] > self.pinv_tol * max)
            .collect();
        let u = u.select_columns(&keep);
        let v = v.select_columns(&keep);
        let singular = keep.iter().map(|&i| singular[i]).collect();
        PseudoInverse::Svd { u, singular, v }
    }

    /// Minimum-norm least-squares solution of `Φh = g` on `(ker Φ)^⊥`.
    pub fn pseudo_solve(&self, g: &RealField) -> Result<RealField> {
        check_grids(g.grid(), &self.grid)?;
        let values: Vec<f64> = match self.pseudo_inverse() {
            PseudoInverse::Spectral { inverse, .. } => {
                let mut spec = g.to_complex().spectrum();
                for (c, m) in spec.iter_mut().zip(inverse) {
                    *c *= m;
                }
                self.grid.inverse(&mut spec);
                spec.into_iter().map(|c| c.re).collect()
            }
            PseudoInverse::Svd { u, singular, v } => {
                let gv = DVector::from_column_slice(g.values());
                let mut coef = u.transpose() * gv;
                for (c, s) in coef.iter_mut().zip(singular) {
                    *c /= s;
                }
                (v * coef).iter().copied().collect()
            }
        };
        RealField::new(self.grid.clone(), values)
    }

    /// Orthogonal projection of `h` onto `(ker Φ)^⊥` (up to the cutoff).
    pub fn project_off_kernel(&self, h: &RealField) -> Result<RealField> {
        check_grids(h.grid(), &self.grid)?;
        let values: Vec<f64> = match self.pseudo_inverse() {
            PseudoInverse::Spectral { keep, .. } => {
                let mut spec = h.to_complex().spectrum();
                for (c, &k) in spec.iter_mut().zip(keep) {
                    if !k {
                        *c = Complex64::new(0.0, 0.0);
                    }
                }
                self.grid.inverse(&mut spec);
                spec.into_iter().map(|c| c.re).collect()
            }
            PseudoInverse::Svd { v, .. } => {
                let hv = DVector::from_column_slice(h.values());
                let coef = v.transpose() * hv;
                (v * coef).iter().copied().collect()
            }
        };
        RealField::new(self.grid.clone(), values)
    }

    /// Relative residual `‖Φh − g‖ / ‖g‖` (zero when `g = 0`).
    pub fn relative_residual(&self, h: &RealField, g: &RealField) -> Result<f64> {
        let gn = g.l2_norm();
        let r = self.apply(h)?.sub(g)?.l2_norm();
        Ok(if gn == 0.0 { r } else { r / gn })
    }
}

/// One increment of the colored Wiener process.
#[derive(Debug, Clone)]
pub struct NoiseIncrement {
    /// `ΔW = Φ(ΔW_c)` on the grid.
    pub dw: RealField,
    /// The i.i.d. standard-normal white coordinates behind `dw`.
    pub coords: Vec<f64>,
    pub dt: f64,
}

impl NoiseIncrement {
    pub fn zero(grid: &Arc<Grid>, dt: f64) -> NoiseIncrement {
        NoiseIncrement {
            dw: RealField::zeros(grid),
            coords: vec![0.0; grid.len()],
            dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFormTag {
    Convolution,
    Explicit,
    RankR,
}

/// Kernel block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub form: KernelFormTag,
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_path: Option<String>,
    #[serde(default = "default_pinv")]
    pub pinv_tolerance: f64,
}

fn default_length_scale() -> f64 {
    1.0
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_s() -> f64 {
    2.0
}
fn default_pinv() -> f64 {
    DEFAULT_PINV_TOL
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            form: KernelFormTag::Convolution,
            length_scale: default_length_scale(),
            amplitude: default_amplitude(),
            s: default_s(),
            matrix_path: None,
            pairs_path: None,
            pinv_tolerance: DEFAULT_PINV_TOL,
        }
    }
}

impl KernelConfig {
    /// Every violation found, not just the first.
    pub fn violations(&self, d: usize) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = check_regularity(self.s, d) {
            out.push(format!("kernel.s: {e}"));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            out.push(format!("kernel.length_scale = {} must be positive", self.length_scale));
        }
        if !self.amplitude.is_finite() {
            out.push("kernel.amplitude must be finite".into());
        }
        if !(self.pinv_tolerance > 0.0 && self.pinv_tolerance < 1.0) {
            out.push(format!("kernel.pinv_tolerance = {} must be in (0, 1)", self.pinv_tolerance));
        }
        match self.form {
            KernelFormTag::Explicit if self.matrix_path.is_none() => {
                out.push("kernel.matrix_path is required for form = \"explicit\"".into())
            }
            KernelFormTag::RankR if self.pairs_path.is_none() => {
                out.push("kernel.pairs_path is required for form = \"rank_r\"".into())
            }
            _ => {}
        }
        out
    }

    /// Builds the operator; relative paths resolve against `base_dir`.
    pub fn build(&self, grid: &Arc<Grid>, base_dir: &Path) -> Result<KernelOperator> {
        let v = self.violations(grid.dim());
        if !v.is_empty() {
            return Err(Error::InvalidKernel(v.join("; ")));
        }
        let op = match self.form {
            KernelFormTag::Convolution => {
                KernelOperator::gaussian(grid, self.length_scale, self.amplitude, self.s)?
            }
            KernelFormTag::Explicit => {
                let path = base_dir.join(self.matrix_path.as_deref().unwrap_or_default());
                let (_, rows) = crate::snapshot::read_rows_on(&path, grid)?;
                let n = grid.len();
                if rows.len() != n {
                    return Err(Error::InvalidKernel(format!(
                        "explicit matrix has {} rows, expected {n}",
                        rows.len()
                    )));
                }
                let matrix = DMatrix::from_fn(n, n, |i, j| rows[i].values()[j].re * self.amplitude);
                KernelOperator::explicit(grid, matrix, self.s)?
            }
            KernelFormTag::RankR => {
                let path = base_dir.join(self.pairs_path.as_deref().unwrap_or_default());
                let (_, rows) = crate::snapshot::read_rows_on(&path, grid)?;
                if rows.len() % 2 != 0 {
                    return Err(Error::InvalidKernel("rank_r pairs file needs an even row count".into()));
                }
                let real = |f: &Field| {
                    RealField::new(grid.clone(), f.values().iter().map(|c| c.re).collect())
                        .expect("grid sized")
                };
                let pairs = rows
                    .chunks(2)
                    .map(|c| (real(&c[0]).scaled(self.amplitude), real(&c[1])))
                    .collect();
                KernelOperator::rank_r(grid, pairs, self.s)?
            }
        };
        Ok(op.with_pinv_tolerance(self.pinv_tolerance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn bump(grid: &Arc<Grid>, c: f64, w: f64) -> RealField {
        RealField::from_fn(grid, |x| (-(x[0] - c).powi(2) / (w * w)).exp())
    }

    #[test]
    fn regularity_gate() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        assert!(KernelOperator::gaussian(&g, 0.5, 1.0, 1.25).is_err());
        assert!(KernelOperator::gaussian(&g, 0.5, 1.0, 1.26).is_ok());
        let g2 = Grid::new(2, 8, 4.0).unwrap();
        assert!(KernelOperator::gaussian(&g2, 0.5, 1.0, 1.5).is_err());
    }

    #[test]
    fn zero_operator() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let op = KernelOperator::zero(&g, 2.0).unwrap();
        let v = bump(&g, 2.0, 0.5);
        assert!(op.apply(&v).unwrap().values().iter().all(|&x| x == 0.0));
        assert_eq!(op.hs_norm(0.0), 0.0);
        assert_eq!(op.hs_norm(2.0), 0.0);
        assert!(op.f_phi().values().iter().all(|&x| x == 0.0));
        assert_eq!(op.correlation(3, &[2]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inc = op.sample_increment(0.1, &mut rng).unwrap();
        assert!(inc.dw.values().iter().all(|&x| x == 0.0));
        assert_eq!(inc.coords.len(), 16);
        assert!(inc.coords.iter().any(|&c| c != 0.0));
    }

    #[test]
    fn rank_one_identities() {
        let g = Grid::new(1, 32, 6.0).unwrap();
        let phi = bump(&g, 2.0, 0.7);
        let psi = RealField::from_fn(&g, |x| (x[0]).sin() + 0.3);
        let op = KernelOperator::rank_r(&g, vec![(phi.clone(), psi.clone())], 2.0).unwrap();
        let v = bump(&g, 4.0, 1.1);
        let got = op.apply(&v).unwrap();
        let c = psi.inner(&v).unwrap();
        for (a, p) in got.values().iter().zip(phi.values()) {
            assert!((a - c * p).abs() < 1e-13);
        }
        let phi_hs = norm(&phi.to_complex(), NormKind::Hs { s: 2.0 }).unwrap();
        assert!(rel(op.hs_norm(2.0), psi.l2_norm() * phi_hs) < 1e-12);
        let psi2 = psi.l2_norm().powi(2);
        for (f, p) in op.f_phi().values().iter().zip(phi.values()) {
            assert!((f - p * p * psi2).abs() < 1e-12);
        }
    }

    #[test]
    fn f_phi_integrates_to_hs_norm() {
        let g = Grid::new(1, 32, 6.0).unwrap();
        let op = KernelOperator::explicit_from_fn(&g, 2.0, |x, y| (x[0] * y[0]).cos() * (-y[0]).exp()).unwrap();
        let integral: f64 = op.f_phi().values().iter().sum::<f64>() * g.cell_volume();
        assert!(rel(integral, op.hs_norm(0.0).powi(2)) < 1e-12);
        assert!(op.f_phi().values().iter().all(|&f| f >= 0.0));
    }

    #[test]
    fn correlation_at_zero_lag_is_f_phi() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let op = KernelOperator::gaussian(&g, 0.6, 1.5, 2.0).unwrap();
        for x in 0..16 {
            assert_eq!(op.correlation(x, &[0]).unwrap(), op.f_phi().values()[x]);
        }
        assert!(op.correlation(0, &[1, 1]).is_err());
    }

    #[test]
    fn pseudo_inverse_of_rank_r_recovers_range_elements() {
        let g = Grid::new(1, 32, 6.0).unwrap();
        let pairs = (0..3)
            .map(|i| (bump(&g, 1.0 + i as f64, 0.5), bump(&g, 2.0 + i as f64, 0.8)))
            .collect();
        let op = KernelOperator::rank_r(&g, pairs, 2.0).unwrap();
        let h = op.project_off_kernel(&bump(&g, 3.0, 1.0)).unwrap();
        let back = op.pseudo_solve(&op.apply(&h).unwrap()).unwrap();
        assert!(back.sub(&h).unwrap().l2_norm() < 1e-10 * h.l2_norm());
        // projection is idempotent
        let h2 = op.project_off_kernel(&h).unwrap();
        assert!(h2.sub(&h).unwrap().l2_norm() < 1e-12 * h.l2_norm());
    }

    #[test]
    fn increments_are_deterministic_per_stream() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let op = KernelOperator::gaussian(&g, 0.6, 1.5, 2.0).unwrap();
        let a = op.sample_increment(0.01, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = op.sample_increment(0.01, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.dw.values(), b.dw.values());
        assert!(op.sample_increment(0.0, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn config_collects_all_violations() {
        let cfg = KernelConfig {
            form: KernelFormTag::Explicit,
            length_scale: -1.0,
            s: 1.0,
            ..KernelConfig::default()
        };
        assert_eq!(cfg.violations(1).len(), 3);
    }
}
