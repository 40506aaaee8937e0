//! The discrete `(alpha_k, p_j)` data lattice, noise injection and pixel
//! binning.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};
use crate::phantom::Phantom;
use crate::rng;

/// Lattice `alpha_k = k d_alpha`, `p_j = p_bar + j d_p` with `d_p = epsilon`
/// and `d_alpha = kappa epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub epsilon: f64,
    pub kappa: f64,
    pub p_bar: f64,
    pub support: f64,
    pub k_min: i64,
    pub n_alpha: usize,
    pub j_min: i64,
    pub n_p: usize,
}

const INDEX_TOL: f64 = 1e-9;

impl SamplingGrid {
    /// Full lattice: `alpha_k` in `[-pi, pi)`, `|p_j| <= P`.
    pub fn new(epsilon: f64, kappa: f64, p_bar: f64, support: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !(kappa > 0.0) || !(support > 0.0) {
            return Err(SmaError::param(format!(
                "grid needs epsilon > 0, kappa > 0, P > 0 (got {epsilon}, {kappa}, {support})"
            )));
        }
        let (k_min, n_alpha) = Self::alpha_range(kappa * epsilon);
        let (j_min, n_p) = Self::p_range(epsilon, p_bar, support);
        if n_alpha < 2 || n_p < 2 {
            return Err(SmaError::param("grid has fewer than two samples per axis"));
        }
        Ok(SamplingGrid {
            epsilon,
            kappa,
            p_bar,
            support,
            k_min,
            n_alpha,
            j_min,
            n_p,
        })
    }

    /// Default experiment grid: `epsilon = 0.007`, `kappa = 2 pi`, `p_bar = 0`, `P = 1`.
    pub fn reference() -> Self {
        Self::new(0.007, 2.0 * PI, 0.0, 1.0).expect("reference grid is valid")
    }

    pub(crate) fn alpha_range(d_alpha: f64) -> (i64, usize) {
        let k_min = (-PI / d_alpha - INDEX_TOL).ceil() as i64;
        let k_max = (PI / d_alpha - INDEX_TOL).ceil() as i64 - 1;
        (k_min, (k_max - k_min + 1) as usize)
    }

    pub(crate) fn p_range(d_p: f64, p_bar: f64, support: f64) -> (i64, usize) {
        let j_min = ((-support - p_bar) / d_p - INDEX_TOL).ceil() as i64;
        let j_max = ((support - p_bar) / d_p + INDEX_TOL).floor() as i64;
        (j_min, (j_max - j_min + 1) as usize)
    }

    /// Whether the index ranges are the full ones implied by the parameters.
    pub fn is_canonical(&self) -> bool {
        let (k_min, n_alpha) = Self::alpha_range(self.d_alpha());
        let (j_min, n_p) = Self::p_range(self.epsilon, self.p_bar, self.support);
        (k_min, n_alpha, j_min, n_p) == (self.k_min, self.n_alpha, self.j_min, self.n_p)
    }

    #[inline]
    pub fn d_alpha(&self) -> f64 {
        self.kappa * self.epsilon
    }

    #[inline]
    pub fn d_p(&self) -> f64 {
        self.epsilon
    }

    /// Angle of row `i` (array index, not lattice index).
    #[inline]
    pub fn alpha(&self, i: usize) -> f64 {
        (self.k_min + i as i64) as f64 * self.d_alpha()
    }

    #[inline]
    pub fn p(&self, i: usize) -> f64 {
        self.p_bar + (self.j_min + i as i64) as f64 * self.epsilon
    }

    pub fn len(&self) -> usize {
        self.n_alpha * self.n_p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.n_alpha).map(|i| self.alpha(i)).collect()
    }

    pub fn ps(&self) -> Vec<f64> {
        (0..self.n_p).map(|i| self.p(i)).collect()
    }
}

/// Sampled data `g[k][j]`, row-major over angles.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub grid: SamplingGrid,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(grid: &SamplingGrid) -> Self {
        Sinogram {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &SamplingGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SmaError::DimensionMismatch {
                expected: format!("{} x {}", grid.n_alpha, grid.n_p),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(Sinogram {
            grid: grid.clone(),
            values,
        })
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.grid.n_p + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.grid.n_p..(k + 1) * self.grid.n_p]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Sinogram {
        Sinogram {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// Analytic Radon transform on the lattice.
pub fn sample_radon(phantom: &Phantom, grid: &SamplingGrid) -> Result<Sinogram> {
    for (i, d) in phantom.disks.iter().enumerate() {
        if d.center[0].hypot(d.center[1]) + d.radius >= grid.support {
            return Err(SmaError::Support(format!(
                "disk {i} is not inside |x| < P = {}",
                grid.support
            )));
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    for k in 0..grid.n_alpha {
        let (s, c) = grid.alpha(k).sin_cos();
        for j in 0..grid.n_p {
            values.push(phantom.radon_dir([c, s], grid.p(j)));
        }
    }
    Ok(Sinogram {
        grid: grid.clone(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    #[default]
    Uniform,
    Gaussian,
}

/// Relative noise strength `sigma(alpha, p)`.
///
/// Every preset satisfies `sigma(alpha, p) = sigma(alpha + pi, -p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SigmaProfile {
    Constant { sigma: f64 },
    /// `sigma (1 + angular cos 2 alpha)(1 + radial p^2)`.
    Smooth { sigma: f64, angular: f64, radial: f64 },
}

impl Default for SigmaProfile {
    fn default() -> Self {
        SigmaProfile::Constant { sigma: 3f64.sqrt() }
    }
}

impl SigmaProfile {
    pub fn constant(sigma: f64) -> Self {
        SigmaProfile::Constant { sigma }
    }

    #[inline]
    pub fn eval(&self, alpha: f64, p: f64) -> f64 {
        match *self {
            SigmaProfile::Constant { sigma } => sigma,
            SigmaProfile::Smooth {
                sigma,
                angular,
                radial,
            } => sigma * (1.0 + angular * (2.0 * alpha).cos()) * (1.0 + radial * p * p),
        }
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            SigmaProfile::Constant { .. } => true,
            SigmaProfile::Smooth { angular, radial, .. } => angular == 0.0 && radial == 0.0,
        }
    }

    /// Magnitude parameter `sigma`.
    pub fn level(&self) -> f64 {
        match *self {
            SigmaProfile::Constant { sigma } | SigmaProfile::Smooth { sigma, .. } => sigma,
        }
    }

    pub fn with_level(&self, level: f64) -> Self {
        match *self {
            SigmaProfile::Constant { .. } => SigmaProfile::Constant { sigma: level },
            SigmaProfile::Smooth { angular, radial, .. } => SigmaProfile::Smooth {
                sigma: level,
                angular,
                radial,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SigmaProfile::Constant { sigma } if sigma < 0.0 || !sigma.is_finite() => {
                Err(SmaError::param(format!("sigma = {sigma} must be finite and >= 0")))
            }
            SigmaProfile::Smooth {
                sigma,
                angular,
                radial,
            } if sigma < 0.0 || angular.abs() >= 1.0 || radial < 0.0 => Err(SmaError::param(
                "smooth sigma profile needs sigma >= 0, |angular| < 1, radial >= 0",
            )),
            _ => Ok(()),
        }
    }
}

/// Whether the lattice standard deviation carries the `sqrt(d_alpha)` factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaling {
    /// `std = sigma sqrt(d_alpha) vartheta`.
    #[default]
    Lattice,
    /// `std = sigma vartheta`.
    Raw,
}

/// How `sigma` maps onto a uniform draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UniformConvention {
    /// The standard deviation equals the prescribed scale: `U[-a, a]`,
    /// `a = sqrt(3) scale`.
    #[default]
    Std,
    /// The prescribed scale is the full width of the interval, so the
    /// standard deviation is `scale / sqrt(12)`. Applied to both families so
    /// the variance is family-independent.
    Width,
}

impl UniformConvention {
    pub fn std_factor(self) -> f64 {
        match self {
            UniformConvention::Std => 1.0,
            UniformConvention::Width => 1.0 / 12f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub sigma: SigmaProfile,
    pub scaling: NoiseScaling,
    pub convention: UniformConvention,
    /// `vartheta(epsilon) = vartheta_scale * epsilon^vartheta_power`.
    pub vartheta_scale: f64,
    pub vartheta_power: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            family: NoiseFamily::Uniform,
            sigma: SigmaProfile::default(),
            scaling: NoiseScaling::Lattice,
            convention: UniformConvention::Std,
            vartheta_scale: 1.0,
            vartheta_power: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn uniform(sigma: SigmaProfile) -> Self {
        NoiseModel {
            sigma,
            ..Default::default()
        }
    }

    pub fn with_convention(mut self, convention: UniformConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_family(mut self, family: NoiseFamily) -> Self {
        self.family = family;
        self
    }

    pub fn with_sigma(mut self, sigma: SigmaProfile) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn vartheta(&self, epsilon: f64) -> f64 {
        self.vartheta_scale * epsilon.powf(self.vartheta_power)
    }

    /// Standard deviation of `eta` at `(alpha, p)`.
    #[inline]
    pub fn std_at(&self, grid: &SamplingGrid, alpha: f64, p: f64) -> f64 {
        let lattice = match self.scaling {
            NoiseScaling::Lattice => grid.d_alpha().sqrt(),
            NoiseScaling::Raw => 1.0,
        };
        self.sigma.eval(alpha, p) * lattice * self.vartheta(grid.epsilon) * self.convention.std_factor()
    }

    /// `Var(eta) / d_alpha` at `(alpha, p)`: the density entering the
    /// limiting covariance.
    pub fn sigma_sq_effective(&self, grid: &SamplingGrid, alpha: f64, p: f64) -> f64 {
        let s = self.std_at(grid, alpha, p);
        s * s / grid.d_alpha()
    }

    /// Constant-profile effective variance density, if the profile is constant.
    pub fn constant_sigma_sq(&self, grid: &SamplingGrid) -> Option<f64> {
        self.sigma
            .is_constant()
            .then(|| self.sigma_sq_effective(grid, 0.0, 0.0))
    }

    pub fn validate(&self, grid: &SamplingGrid) -> Result<()> {
        self.sigma.validate()?;
        if !(self.vartheta_scale > 0.0) {
            return Err(SmaError::param("vartheta scale must be positive"));
        }
        // Parity sigma(alpha, p) = sigma(alpha + pi, -p) on the lattice.
        for k in 0..grid.n_alpha {
            let a = grid.alpha(k);
            for j in (0..grid.n_p).step_by(7) {
                let p = grid.p(j);
                let d = (self.sigma.eval(a, p) - self.sigma.eval(a + PI, -p)).abs();
                if d > 1e-12 {
                    return Err(SmaError::param(format!("sigma violates parity at ({a}, {p})")));
                }
            }
        }
        Ok(())
    }

    /// Per-entry standard deviations on the grid.
    pub fn std_table(&self, grid: &SamplingGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len());
        for k in 0..grid.n_alpha {
            let a = grid.alpha(k);
            for j in 0..grid.n_p {
                out.push(self.std_at(grid, a, grid.p(j)));
            }
        }
        out
    }
}

/// One noise array; replicate `r` of experiment `seed` is `draw_noise_stream(.., seed, r)`.
pub fn draw_noise(grid: &SamplingGrid, model: &NoiseModel, seed: u64) -> Vec<f64> {
    draw_noise_stream(grid, model, seed, 0)
}

pub fn draw_noise_stream(grid: &SamplingGrid, model: &NoiseModel, seed: u64, stream: u64) -> Vec<f64> {
    let stds = model.std_table(grid);
    let mut out = vec![0.0; stds.len()];
    fill_noise(&stds, model.family, seed, stream, &mut out);
    out
}

/// Fills `out` with independent zero-mean draws of the given standard deviations.
pub fn fill_noise(stds: &[f64], family: NoiseFamily, seed: u64, stream: u64, out: &mut [f64]) {
    let mut rng = rng::stream(seed, stream);
    match family {
        NoiseFamily::Uniform => {
            let root3 = 3f64.sqrt();
            for (o, &s) in out.iter_mut().zip(stds) {
                let u: f64 = rng.random();
                *o = root3 * s * (2.0 * u - 1.0);
            }
        }
        NoiseFamily::Gaussian => {
            for (o, &s) in out.iter_mut().zip(stds) {
                let z: f64 = rng.sample(StandardNormal);
                *o = s * z;
            }
        }
    }
}

pub fn add_noise(sinogram: &Sinogram, noise: &[f64]) -> Result<Sinogram> {
    if noise.len() != sinogram.values.len() {
        return Err(SmaError::DimensionMismatch {
            expected: format!("{} values", sinogram.values.len()),
            actual: format!("{} values", noise.len()),
        });
    }
    Ok(Sinogram {
        grid: sinogram.grid.clone(),
        values: sinogram.values.iter().zip(noise).map(|(a, b)| a + b).collect(),
    })
}

/// `N x N` pixel binning: the value at lattice index `(k, j)`, `k, j` in
/// `N Z`, is the mean over `k + m, j + n` with `-N/2 <= m, n < N/2`.
/// Blocks that are not complete are dropped.
pub fn bin(sinogram: &Sinogram, n: usize) -> Result<Sinogram> {
    if n == 0 {
        return Err(SmaError::param("binning factor must be positive"));
    }
    let g = &sinogram.grid;
    if n == 1 {
        return Ok(sinogram.clone());
    }
    let n_i = n as i64;
    let lo_off = -(n_i / 2);
    let hi_off = lo_off + n_i - 1;
    let range = |min: i64, count: usize| -> (i64, usize) {
        let max = min + count as i64 - 1;
        // coarse index c with fine block [n c + lo_off, n c + hi_off] inside [min, max]
        let c_min = (min - lo_off).div_euclid(n_i) + i64::from((min - lo_off).rem_euclid(n_i) != 0);
        let c_max = (max - hi_off).div_euclid(n_i);
        (c_min, (c_max - c_min + 1).max(0) as usize)
    };
    let (ck_min, nk) = range(g.k_min, g.n_alpha);
    let (cj_min, nj) = range(g.j_min, g.n_p);
    if nk == 0 || nj == 0 {
        return Err(SmaError::param(format!("binning factor {n} leaves no complete block")));
    }
    let grid = SamplingGrid {
        epsilon: g.epsilon * n as f64,
        kappa: g.kappa,
        p_bar: g.p_bar,
        support: g.support,
        k_min: ck_min,
        n_alpha: nk,
        j_min: cj_min,
        n_p: nj,
    };
    let inv = 1.0 / (n * n) as f64;
    let mut values = Vec::with_capacity(nk * nj);
    for ck in 0..nk {
        let k0 = ((ck_min + ck as i64) * n_i + lo_off - g.k_min) as usize;
        for cj in 0..nj {
            let j0 = ((cj_min + cj as i64) * n_i + lo_off - g.j_min) as usize;
            let mut acc = 0.0;
            for k in k0..k0 + n {
                let row = sinogram.row(k);
                acc += row[j0..j0 + n].iter().sum::<f64>();
            }
            values.push(acc * inv);
        }
    }
    Ok(Sinogram { grid, values })
}

/// Noise-to-signal ratio `||eta|| / ||Rf||` over the lattice.
pub fn nsr(clean: &Sinogram, noise: &[f64]) -> f64 {
    let n = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
    n / clean.norm()
}

/// Level of a constant profile whose expected NSR equals `target`.
pub fn sigma_for_nsr(clean: &Sinogram, model: &NoiseModel, target: f64) -> f64 {
    let unit = model.with_sigma(model.sigma.with_level(1.0));
    let expected_sq: f64 = unit.std_table(&clean.grid).iter().map(|s| s * s).sum();
    target * clean.norm() / expected_sq.sqrt()
}
