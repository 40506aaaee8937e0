//! Filtered backprojection from lattice data: point values, local patches in
//! rescaled coordinates, macro images, and linear functionals of patches
//! expressed directly as weights on the sinogram.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};
use crate::kernel::Kernel;
use crate::quadrature::GaussLegendre;
use crate::sampling::{SamplingGrid, Sinogram};

/// Overall sign of the backprojection sum. With the Hilbert transform
/// `(1/pi) p.v. int f(s)/(t-s) ds` the inversion carries a plus sign.
pub const BACKPROJECTION_SIGN: f64 = 1.0;

/// Prefactor `sign * d_alpha / (4 pi epsilon)`.
pub fn fbp_scale(grid: &SamplingGrid) -> f64 {
    BACKPROJECTION_SIGN * grid.d_alpha() / (4.0 * PI * grid.epsilon)
}

/// View directions and the offsets needed to evaluate the filter argument
/// `(alpha_k . x - p_j) / epsilon = proj_k(x) / epsilon - shift - j`.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub dirs: Vec<[f64; 2]>,
    pub scale: f64,
    inv_eps: f64,
    /// `(p_bar / epsilon) + j_min`.
    shift: f64,
    n_p: usize,
    support: f64,
}

impl Geometry {
    pub fn new(grid: &SamplingGrid) -> Self {
        let dirs = (0..grid.n_alpha)
            .map(|k| {
                let (s, c) = grid.alpha(k).sin_cos();
                [c, s]
            })
            .collect();
        Geometry {
            dirs,
            scale: fbp_scale(grid),
            inv_eps: 1.0 / grid.epsilon,
            shift: grid.p_bar / grid.epsilon + grid.j_min as f64,
            n_p: grid.n_p,
            support: grid.support,
        }
    }

    /// Filter argument for `j = 0` in view `k` at point `x`.
    #[inline]
    pub fn base_arg(&self, k: usize, x: [f64; 2]) -> f64 {
        let d = self.dirs[k];
        (d[0] * x[0] + d[1] * x[1]) * self.inv_eps - self.shift
    }

    pub fn check_point(&self, x: [f64; 2]) -> Result<()> {
        let r = x[0].hypot(x[1]);
        if !(r < self.support) {
            return Err(SmaError::Support(format!(
                "point ({}, {}) is not inside |x| < P = {}",
                x[0], x[1], self.support
            )));
        }
        Ok(())
    }
}

/// Pairwise sum with a fixed tree, independent of how the terms were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[inline]
fn view_sum(kernel: &Kernel, base: f64, row: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, &g) in row.iter().enumerate() {
        acc += kernel.hilbert_dphi(base - j as f64) * g;
    }
    acc
}

fn value_with(geom: &Geometry, kernel: &Kernel, sino: &Sinogram, x: [f64; 2], views: &mut Vec<f64>) -> f64 {
    views.clear();
    for k in 0..geom.dirs.len() {
        let row = &sino.values[k * geom.n_p..(k + 1) * geom.n_p];
        views.push(view_sum(kernel, geom.base_arg(k, x), row));
    }
    geom.scale * pairwise_sum(views)
}

/// Reconstruction at a single point.
pub fn fbp_value(sino: &Sinogram, kernel: &Kernel, x: [f64; 2]) -> Result<f64> {
    let geom = Geometry::new(&sino.grid);
    geom.check_point(x)?;
    Ok(value_with(&geom, kernel, sino, x, &mut Vec::new()))
}

/// Reconstruction at many points; parallel over points, each point summed in
/// the same fixed order as `fbp_value`.
pub fn fbp_points(sino: &Sinogram, kernel: &Kernel, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    let geom = Geometry::new(&sino.grid);
    for &x in points {
        geom.check_point(x)?;
    }
    Ok(points
        .par_iter()
        .map_init(Vec::new, |buf, &x| value_with(&geom, kernel, sino, x, buf))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PatchPart {
    #[default]
    Full,
    Deterministic,
    NoiseOnly,
}

/// Noiseless data plus an additive noise array on the same lattice.
#[derive(Debug, Clone)]
pub struct NoisyData {
    pub clean: Sinogram,
    pub noise: Vec<f64>,
}

impl NoisyData {
    pub fn new(clean: Sinogram, noise: Vec<f64>) -> Result<Self> {
        if noise.len() != clean.values.len() {
            return Err(SmaError::DimensionMismatch {
                expected: format!("{} values", clean.values.len()),
                actual: format!("{} values", noise.len()),
            });
        }
        Ok(NoisyData { clean, noise })
    }

    pub fn select(&self, part: PatchPart) -> Sinogram {
        match part {
            PatchPart::Deterministic => self.clean.clone(),
            PatchPart::NoiseOnly => Sinogram {
                grid: self.clean.grid.clone(),
                values: self.noise.clone(),
            },
            PatchPart::Full => Sinogram {
                grid: self.clean.grid.clone(),
                values: self.clean.values.iter().zip(&self.noise).map(|(a, b)| a + b).collect(),
            },
        }
    }
}

/// Square lattice `{(a h, b h) : |a|, |b| <= m}` in rescaled coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rho: f64,
    pub h: f64,
    pub m: i32,
}

impl PatchGrid {
    pub fn new(rho: f64, h: f64) -> Result<Self> {
        if !(rho > 0.0) || !(h > 0.0) {
            return Err(SmaError::param("patch radius and step must be positive"));
        }
        let m = (rho / h).round();
        if (m * h - rho).abs() > 1e-9 * rho {
            return Err(SmaError::param(format!("patch step {h} does not divide radius {rho}")));
        }
        Ok(PatchGrid { rho, h, m: m as i32 })
    }

    pub fn side(&self) -> usize {
        (2 * self.m + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major index of lattice node `(a, b)`: `b` selects the row.
    #[inline]
    pub fn index(&self, a: i32, b: i32) -> usize {
        ((b + self.m) as usize) * self.side() + (a + self.m) as usize
    }

    #[inline]
    pub fn offset(&self, a: i32, b: i32) -> [f64; 2] {
        [a as f64 * self.h, b as f64 * self.h]
    }

    pub fn offsets(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len());
        for b in -self.m..=self.m {
            for a in -self.m..=self.m {
                out.push(self.offset(a, b));
            }
        }
        out
    }
}

/// Reconstruction samples on `x0 + epsilon * checked lattice`.
#[derive(Debug, Clone)]
pub struct LocalPatch {
    pub x0: [f64; 2],
    pub epsilon: f64,
    pub grid: PatchGrid,
    pub samples: Vec<f64>,
    pub part: PatchPart,
}

impl LocalPatch {
    /// Patch filled from a function of the rescaled coordinate.
    pub fn from_fn(x0: [f64; 2], epsilon: f64, grid: PatchGrid, part: PatchPart, f: impl Fn([f64; 2]) -> f64) -> Self {
        let samples = grid.offsets().into_iter().map(f).collect();
        LocalPatch {
            x0,
            epsilon,
            grid,
            samples,
            part,
        }
    }

    #[inline]
    pub fn at(&self, a: i32, b: i32) -> f64 {
        self.samples[self.grid.index(a, b)]
    }

    /// Bilinear interpolation at a rescaled coordinate inside the patch.
    pub fn interp(&self, y: [f64; 2]) -> Result<f64> {
        let w = bilinear_weights(&self.grid, y)?;
        Ok(w.iter().map(|&(i, wt)| wt * self.samples[i]).sum())
    }
}

/// Nodes and weights of the bilinear interpolant at `y`.
pub fn bilinear_weights(grid: &PatchGrid, y: [f64; 2]) -> Result<[(usize, f64); 4]> {
    let m = grid.m;
    let fx = y[0] / grid.h;
    let fy = y[1] / grid.h;
    let lim = m as f64 + 1e-9;
    if fx.abs() > lim || fy.abs() > lim {
        return Err(SmaError::Coverage(format!(
            "point ({}, {}) lies outside the patch of radius {}",
            y[0], y[1], grid.rho
        )));
    }
    let a0 = (fx.floor() as i32).clamp(-m, m - 1);
    let b0 = (fy.floor() as i32).clamp(-m, m - 1);
    let tx = fx - a0 as f64;
    let ty = fy - b0 as f64;
    Ok([
        (grid.index(a0, b0), (1.0 - tx) * (1.0 - ty)),
        (grid.index(a0 + 1, b0), tx * (1.0 - ty)),
        (grid.index(a0, b0 + 1), (1.0 - tx) * ty),
        (grid.index(a0 + 1, b0 + 1), tx * ty),
    ])
}

/// Reconstruction on the local patch around `x0`.
pub fn fbp_patch(data: &NoisyData, kernel: &Kernel, x0: [f64; 2], rho: f64, h: f64, part: PatchPart) -> Result<LocalPatch> {
    let grid = PatchGrid::new(rho, h)?;
    let sino = data.select(part);
    fbp_patch_from(&sino, kernel, x0, grid, part)
}

/// Patch reconstruction from a single sinogram.
pub fn fbp_patch_from(sino: &Sinogram, kernel: &Kernel, x0: [f64; 2], grid: PatchGrid, part: PatchPart) -> Result<LocalPatch> {
    let eps = sino.grid.epsilon;
    let reach = x0[0].hypot(x0[1]) + eps * (grid.rho * 2f64.sqrt() + 1.0);
    if reach >= sino.grid.support {
        return Err(SmaError::Support(format!(
            "patch around ({}, {}) reaches |x| = {reach} >= P",
            x0[0], x0[1]
        )));
    }
    let points: Vec<[f64; 2]> = grid
        .offsets()
        .into_iter()
        .map(|o| [x0[0] + eps * o[0], x0[1] + eps * o[1]])
        .collect();
    let samples = fbp_points(sino, kernel, &points)?;
    Ok(LocalPatch {
        x0,
        epsilon: eps,
        grid,
        samples,
        part,
    })
}

/// Fit of the transition model `c + delta_f f_T(theta0 . x)` to a patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtbFit {
    pub c_fit: f64,
    pub max_residual: f64,
}

pub fn dtb_residual(patch: &LocalPatch, theta0: [f64; 2], delta_f: f64, kernel: &Kernel) -> DtbFit {
    let offsets = patch.grid.offsets();
    let resid: Vec<f64> = offsets
        .iter()
        .zip(&patch.samples)
        .map(|(o, &v)| v - delta_f * kernel.dtb(theta0[0] * o[0] + theta0[1] * o[1]))
        .collect();
    let c_fit = resid.iter().sum::<f64>() / resid.len() as f64;
    let max_residual = resid.iter().fold(0.0f64, |m, r| m.max((r - c_fit).abs()));
    DtbFit { c_fit, max_residual }
}

/// Regular image grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub x_min: f64,
    pub y_min: f64,
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, row `iy` at `y = y_min + iy * step`.
    pub values: Vec<f64>,
}

impl Image {
    pub fn zeros(x_min: f64, y_min: f64, step: f64, nx: usize, ny: usize) -> Self {
        Image {
            x_min,
            y_min,
            step,
            nx,
            ny,
            values: vec![0.0; nx * ny],
        }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    #[inline]
    pub fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.x_min + ix as f64 * self.step, self.y_min + iy as f64 * self.step]
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                out.push(self.point(ix, iy));
            }
        }
        out
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        if (self.nx, self.ny) != (other.nx, other.ny) {
            return Err(SmaError::DimensionMismatch {
                expected: format!("{} x {}", self.nx, self.ny),
                actual: format!("{} x {}", other.nx, other.ny),
            });
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(out)
    }
}

/// Bounding box `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn centered(c: [f64; 2], half: f64) -> Self {
        BBox {
            x_min: c[0] - half,
            x_max: c[0] + half,
            y_min: c[1] - half,
            y_max: c[1] + half,
        }
    }

    fn image(&self, step: f64) -> Result<Image> {
        if !(step > 0.0) || !(self.x_max >= self.x_min) || !(self.y_max >= self.y_min) {
            return Err(SmaError::param("image needs a positive step and a nonempty box"));
        }
        let nx = ((self.x_max - self.x_min) / step + 1e-9).floor() as usize + 1;
        let ny = ((self.y_max - self.y_min) / step + 1e-9).floor() as usize + 1;
        Ok(Image::zeros(self.x_min, self.y_min, step, nx, ny))
    }

    fn check(&self, support: f64) -> Result<()> {
        let r = [self.x_min.abs().max(self.x_max.abs()), self.y_min.abs().max(self.y_max.abs())];
        if r[0].hypot(r[1]) >= support {
            return Err(SmaError::Support(format!("image box {self:?} leaves |x| < P = {support}")));
        }
        Ok(())
    }
}

/// Macro image by direct evaluation of the reconstruction sum at every pixel.
pub fn fbp_image(sino: &Sinogram, kernel: &Kernel, bbox: BBox, step: f64) -> Result<Image> {
    bbox.check(sino.grid.support)?;
    let mut img = bbox.image(step)?;
    img.values = fbp_points(sino, kernel, &img.points())?;
    Ok(img)
}

/// Macro image with per-view filtered projections.
///
/// Each view is filtered once onto a sub-lattice `s = p_bar + (j_min + n / phases) epsilon`
/// by discrete convolution with `H phi'(n + f / phases)`, then interpolated
/// by cubic Lagrange polynomials during backprojection.
pub fn fbp_image_banded(sino: &Sinogram, kernel: &Kernel, bbox: BBox, step: f64, phases: usize) -> Result<Image> {
    bbox.check(sino.grid.support)?;
    if phases == 0 {
        return Err(SmaError::param("phases must be positive"));
    }
    let mut img = bbox.image(step)?;
    let geom = Geometry::new(&sino.grid);
    let filtered = filter_views(sino, kernel, phases);
    let ph = phases as f64;
    let points = img.points();
    img.values = points
        .par_iter()
        .map_init(Vec::new, |views: &mut Vec<f64>, &x| {
            views.clear();
            for (k, q) in filtered.iter().enumerate() {
                // sub-lattice coordinate of s = alpha_k . x
                let u = geom.base_arg(k, x) * ph;
                let i = u.floor();
                let t = u - i;
                let i = i as i64;
                // |alpha . x| < P keeps n inside the padded band
                let at = |n: i64| -> f64 { q[(n + BAND_PAD) as usize] };
                // 4-point Lagrange on nodes i-1..i+2
                let (a, b, c, d) = (at(i - 1), at(i), at(i + 1), at(i + 2));
                let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
                let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
                let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
                let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
                views.push(w0 * a + w1 * b + w2 * c + w3 * d);
            }
            geom.scale * pairwise_sum(views)
        })
        .collect();
    Ok(img)
}

/// Sub-lattice padding on each side of the filtered projections.
const BAND_PAD: i64 = 8;

/// Filtered projections `q_k(n) = sum_j H phi'(n / phases - j) g_kj` for the
/// sub-lattice indices `n` in `[-BAND_PAD, len + BAND_PAD)`, stored with
/// offset `BAND_PAD`.
fn filter_views(sino: &Sinogram, kernel: &Kernel, phases: usize) -> Vec<Vec<f64>> {
    let n_p = sino.grid.n_p as i64;
    let len = (n_p - 1) * phases as i64 + 1;
    let lo = -BAND_PAD;
    let hi = len + BAND_PAD;
    // taps[f][d] = H phi'(d + f / phases)
    let reach = n_p + BAND_PAD;
    let taps: Vec<Vec<f64>> = (0..phases)
        .map(|f| {
            (-reach..=reach)
                .map(|d| kernel.hilbert_dphi(d as f64 + f as f64 / phases as f64))
                .collect()
        })
        .collect();
    (0..sino.grid.n_alpha)
        .into_par_iter()
        .map(|k| {
            let row = sino.row(k);
            (lo..hi)
                .map(|n| {
                    let f = n.rem_euclid(phases as i64);
                    let base = n.div_euclid(phases as i64);
                    let tap = &taps[f as usize];
                    let mut acc = 0.0;
                    for (j, &g) in row.iter().enumerate() {
                        let d = base - j as i64;
                        if d.abs() <= reach {
                            acc += tap[(d + reach) as usize] * g;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// A linear functional of patch samples: `sum_n w_n sample(node_n)`, with a
/// scalar or 2-vector weight per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFunctional {
    pub grid: PatchGrid,
    pub dim: usize,
    pub nodes: Vec<(i32, i32)>,
    pub weights: Vec<[f64; 2]>,
}

impl PatchFunctional {
    pub fn offsets(&self) -> Vec<[f64; 2]> {
        self.nodes.iter().map(|&(a, b)| self.grid.offset(a, b)).collect()
    }

    pub fn apply(&self, patch: &LocalPatch) -> Result<[f64; 2]> {
        if patch.grid.m < self.grid.m || (patch.grid.h - self.grid.h).abs() > 1e-12 {
            return Err(SmaError::Coverage(format!(
                "patch (radius {}, step {}) does not carry the functional's lattice (radius {}, step {})",
                patch.grid.rho, patch.grid.h, self.grid.rho, self.grid.h
            )));
        }
        let mut acc = [0.0; 2];
        for (&(a, b), w) in self.nodes.iter().zip(&self.weights) {
            let v = patch.at(a, b);
            acc[0] += w[0] * v;
            acc[1] += w[1] * v;
        }
        Ok(acc)
    }

    /// Applies the functional to a function of the rescaled coordinate.
    pub fn apply_fn(&self, f: impl Fn([f64; 2]) -> f64) -> [f64; 2] {
        let mut acc = [0.0; 2];
        for (&(a, b), w) in self.nodes.iter().zip(&self.weights) {
            let v = f(self.grid.offset(a, b));
            acc[0] += w[0] * v;
            acc[1] += w[1] * v;
        }
        acc
    }

    /// Vector moment of the disk, `int_{B_rho} y g(y) dy`, for `g` given by
    /// its biquadratic interpolant on `2h x 2h` blocks of the lattice.
    ///
    /// Blocks cut by the circle are integrated over the exact intersection:
    /// Gauss–Legendre in `x` between the breakpoints of the clipped chord, and
    /// exactly in `y` over the clipped interval.
    pub fn disk_moment(rho: f64, h: f64) -> Result<Self> {
        let grid = PatchGrid::new(rho, h)?;
        if grid.m % 2 != 0 {
            return Err(SmaError::param(format!(
                "disk functional needs an even number of steps per radius (rho/h = {})",
                grid.m
            )));
        }
        let side = grid.side();
        let mut acc = vec![[0.0f64; 2]; side * side];
        let inner = GaussLegendre::cached(4);
        let outer = GaussLegendre::cached(8);
        let r2 = rho * rho;
        for bb in (-grid.m..grid.m).step_by(2) {
            for ba in (-grid.m..grid.m).step_by(2) {
                let x0 = ba as f64 * h;
                let y0 = bb as f64 * h;
                let x1 = x0 + 2.0 * h;
                let y1 = y0 + 2.0 * h;
                let near = x0.abs().min(x1.abs()) * if x0 * x1 <= 0.0 { 0.0 } else { 1.0 };
                let neary = y0.abs().min(y1.abs()) * if y0 * y1 <= 0.0 { 0.0 } else { 1.0 };
                if near * near + neary * neary >= r2 {
                    continue;
                }
                let far_x = x0.abs().max(x1.abs());
                let far_y = y0.abs().max(y1.abs());
                let full = far_x * far_x + far_y * far_y <= r2;
                // x breakpoints where the chord crosses y0 or y1
                let mut xb = vec![x0, x1];
                if !full {
                    for y in [y0, y1] {
                        if y * y < r2 {
                            let c = (r2 - y * y).sqrt();
                            for x in [-c, c] {
                                if x > x0 && x < x1 {
                                    xb.push(x);
                                }
                            }
                        }
                    }
                    for x in [-rho, rho] {
                        if x > x0 && x < x1 {
                            xb.push(x);
                        }
                    }
                    xb.sort_by(|a, b| a.partial_cmp(b).unwrap());
                }
                for seg in xb.windows(2) {
                    let (xa, xc) = (seg[0], seg[1]);
                    if xc <= xa {
                        continue;
                    }
                    let y_range = |x: f64| -> (f64, f64) {
                        if full {
                            (y0, y1)
                        } else {
                            let c = (r2 - x * x).max(0.0).sqrt();
                            (y0.max(-c), y1.min(c))
                        }
                    };
                    let mut add = |x: f64, wx: f64| {
                        let (ya, yc) = y_range(x);
                        if yc <= ya {
                            return;
                        }
                        let lx = lagrange3((x - x0) / h);
                        for (y, wy) in inner.on(ya, yc) {
                            let ly = lagrange3((y - y0) / h);
                            let w = wx * wy;
                            for (jb, lyv) in ly.iter().enumerate() {
                                for (ia, lxv) in lx.iter().enumerate() {
                                    let idx = grid.index(ba + ia as i32, bb + jb as i32);
                                    let basis = w * lxv * lyv;
                                    acc[idx][0] += basis * x;
                                    acc[idx][1] += basis * y;
                                }
                            }
                        }
                    };
                    if full {
                        for (x, wx) in inner.on(xa, xc) {
                            add(x, wx);
                        }
                    } else if xc >= rho || xa <= -rho {
                        // chord length ~ sqrt(rho - |x|): x = end -+ w v^2 removes
                        // the square root
                        let (end, sgn) = if xc >= rho { (rho, -1.0) } else { (-rho, 1.0) };
                        let w = xc - xa;
                        for (v, wv) in outer.on(0.0, 1.0) {
                            add(end + sgn * w * v * v, wv * 2.0 * w * v);
                        }
                    } else {
                        for (x, wx) in outer.on(xa, xc) {
                            add(x, wx);
                        }
                    }
                }
            }
        }
    let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for b in -grid.m..=grid.m {
            for a in -grid.m..=grid.m {
                let w = acc[grid.index(a, b)];
                if w[0] != 0.0 || w[1] != 0.0 {
                    nodes.push((a, b));
                    weights.push(w);
                }
            }
        }
        Ok(PatchFunctional {
            grid,
            dim: 2,
            nodes,
            weights,
        })
    }

    /// `int_{-rho}^{rho} u(t) g(t theta0) dt` by the midpoint rule with step
    /// `h`, `g` bilinearly interpolated from the lattice.
    pub fn segment(rho: f64, h: f64, theta0: [f64; 2], u: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = PatchGrid::new(rho, h)?;
        let side = grid.side();
        let mut acc = vec![0.0f64; side * side];
        let n = grid.m;
        for i in -n..n {
            let t = (i as f64 + 0.5) * h;
            let wt = h * u(t);
            if wt == 0.0 {
                continue;
            }
            for (idx, w) in bilinear_weights(&grid, [t * theta0[0], t * theta0[1]])? {
                acc[idx] += wt * w;
            }
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for b in -grid.m..=grid.m {
            for a in -grid.m..=grid.m {
                let w = acc[grid.index(a, b)];
                if w != 0.0 {
                    nodes.push((a, b));
                    weights.push([w, 0.0]);
                }
            }
        }
        Ok(PatchFunctional {
            grid,
            dim: 1,
            nodes,
            weights,
        })
    }
}

/// Lagrange basis on the nodes `0, 1, 2` at `s`.
#[inline]
fn lagrange3(s: f64) -> [f64; 3] {
    [0.5 * (s - 1.0) * (s - 2.0), -s * (s - 2.0), 0.5 * s * (s - 1.0)]
}

/// Sinogram weights reproducing a patch functional: applying them to data
/// `g` equals reconstructing the patch from `g` and applying the functional.
#[derive(Debug, Clone)]
pub struct InfluenceWeights {
    pub x0: [f64; 2],
    pub dim: usize,
    pub n_alpha: usize,
    pub n_p: usize,
    /// One plane per component, row-major like the sinogram.
    pub planes: Vec<Vec<f64>>,
}

impl InfluenceWeights {
    pub fn apply(&self, values: &[f64]) -> Result<[f64; 2]> {
        if values.len() != self.n_alpha * self.n_p {
            return Err(SmaError::DimensionMismatch {
                expected: format!("{} values", self.n_alpha * self.n_p),
                actual: format!("{} values", values.len()),
            });
        }
        let mut out = [0.0; 2];
        for (c, plane) in self.planes.iter().enumerate() {
            out[c] = dot_by_rows(plane, values, self.n_p);
        }
        Ok(out)
    }

    pub fn apply_sinogram(&self, sino: &Sinogram) -> Result<[f64; 2]> {
        self.apply(&sino.values)
    }

    /// `sum_kj w_kj^a w_kj^b s_kj^2` for per-entry standard deviations `s`:
    /// the exact covariance of the statistic under independent noise.
    pub fn exact_covariance(&self, stds: &[f64]) -> [[f64; 2]; 2] {
        let mut c = [[0.0; 2]; 2];
        for a in 0..self.dim {
            for b in 0..self.dim {
                c[a][b] = self.planes[a]
                    .iter()
                    .zip(&self.planes[b])
                    .zip(stds)
                    .map(|((x, y), s)| x * y * s * s)
                    .sum();
            }
        }
        c
    }
}

fn dot_by_rows(w: &[f64], v: &[f64], n_p: usize) -> f64 {
    let rows: Vec<f64> = w
        .chunks(n_p)
        .zip(v.chunks(n_p))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
        .collect();
    pairwise_sum(&rows)
}

/// `w_kj = scale * sum_n a_n H phi'((alpha_k . (x0 + eps y_n) - p_j) / eps)`.
pub fn influence_weights(grid: &SamplingGrid, kernel: &Kernel, x0: [f64; 2], functional: &PatchFunctional) -> Result<InfluenceWeights> {
    let geom = Geometry::new(grid);
    let reach = x0[0].hypot(x0[1]) + grid.epsilon * (functional.grid.rho * 2f64.sqrt() + 1.0);
    if reach >= grid.support {
        return Err(SmaError::Support(format!("window around ({}, {}) leaves |x| < P", x0[0], x0[1])));
    }
    let offsets = functional.offsets();
    let n_p = grid.n_p;
    let dim = functional.dim;
    let rows: Vec<Vec<[f64; 2]>> = (0..grid.n_alpha)
        .into_par_iter()
        .map(|k| {
            let d = geom.dirs[k];
            let base = geom.base_arg(k, x0);
            let mut row = vec![[0.0f64; 2]; n_p];
            for (o, a) in offsets.iter().zip(&functional.weights) {
                let t0 = base + d[0] * o[0] + d[1] * o[1];
                for (j, r) in row.iter_mut().enumerate() {
                    let hv = kernel.hilbert_dphi(t0 - j as f64);
                    r[0] += a[0] * hv;
                    r[1] += a[1] * hv;
                }
            }
            row
        })
        .collect();
    let mut planes = vec![Vec::with_capacity(grid.len()); dim];
    for row in rows {
        for r in row {
            for (c, plane) in planes.iter_mut().enumerate() {
                plane.push(geom.scale * r[c]);
            }
        }
    }
    Ok(InfluenceWeights {
        x0,
        dim,
        n_alpha: grid.n_alpha,
        n_p,
        planes,
    })
}
