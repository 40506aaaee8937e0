//! Sliding-window application of the 2D statistic to a macro image.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{cov_matrix, CovContext, CovMatrix2};
use crate::error::{Result, SmaError};
use crate::reconstructor::{Image, PatchFunctional};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Per-center `q`-quantile of the null `|F|`.
    NullQuantile { q: f64 },
    /// Fraction of the largest magnitude on the map.
    Relative { fraction: f64 },
    /// Union bound over all centers: the null `|F|` exceeds the threshold
    /// anywhere on the map with probability at most `level`.
    NullMax { level: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Window radius in units of epsilon.
    pub rho: f64,
    /// Distance between window centers in image cells.
    pub stride: usize,
    /// Image step as a fraction of epsilon.
    pub step_fraction: f64,
    pub threshold: ThresholdPolicy,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            rho: 3.0,
            stride: 12,
            step_fraction: 0.125,
            threshold: ThresholdPolicy::NullQuantile { q: 0.99 },
        }
    }
}

impl ScanConfig {
    /// Stride of half the window radius.
    pub fn with_default_stride(mut self) -> Self {
        self.stride = ((0.5 * self.rho / self.step_fraction).round() as usize).max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(SmaError::param("scan stride must be at least one cell"));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 0.25 + 1e-12) {
            return Err(SmaError::param("image step must be at most epsilon / 4"));
        }
        if !(self.rho > 0.0) {
            return Err(SmaError::param("window radius must be positive"));
        }
        match self.threshold {
            ThresholdPolicy::NullQuantile { q } if !(q > 0.0 && q < 1.0) => {
                Err(SmaError::param("null quantile must lie in (0, 1)"))
            }
            ThresholdPolicy::Relative { fraction } if !(fraction >= 0.0 && fraction <= 1.0) => {
                Err(SmaError::param("relative threshold must lie in [0, 1]"))
            }
            ThresholdPolicy::NullMax { level } if !(level > 0.0 && level < 1.0) => {
                Err(SmaError::param("familywise level must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuiverArrow {
    pub center: [f64; 2],
    pub dir: [f64; 2],
    pub mag: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMap {
    /// Center grid dimensions.
    pub nx: usize,
    pub ny: usize,
    pub centers: Vec<[f64; 2]>,
    pub f: Vec<[f64; 2]>,
    pub mag: Vec<f64>,
    /// Angle of `F` reduced to `[0, pi)`; `None` where `F = 0`.
    pub theta: Vec<Option<f64>>,
    /// `+1` when the full angle lies in `[0, pi)`, `-1` otherwise.
    pub sign: Vec<i8>,
    pub cov: Vec<CovMatrix2>,
    pub p_value: Vec<f64>,
    pub mask: Vec<bool>,
    pub quiver: Vec<QuiverArrow>,
}

/// Null covariance of `F` at each center.
#[derive(Debug, Clone)]
pub enum ScanNull {
    Shared(CovMatrix2),
    /// Evaluated with `x0` set to each center.
    PerCenter(CovContext),
}

impl ScanNull {
    pub fn from_context(ctx: &CovContext, rho: f64) -> Result<Self> {
        Ok(if ctx.constant_sigma_sq().is_some() {
            ScanNull::Shared(cov_matrix(ctx, rho)?)
        } else {
            ScanNull::PerCenter(ctx.clone())
        })
    }

    fn at(&self, x: [f64; 2], rho: f64) -> Result<CovMatrix2> {
        match self {
            ScanNull::Shared(c) => Ok(*c),
            ScanNull::PerCenter(ctx) => {
                let mut c = ctx.clone();
                c.x0 = x;
                cov_matrix(&c, rho)
            }
        }
    }
}

/// `F` at every window center of the image.
///
/// The image step must equal `step_fraction * epsilon`; windows are placed
/// on image pixels every `stride` cells, as far as they fit.
pub fn scan(image: &Image, epsilon: f64, config: &ScanConfig, null: &ScanNull) -> Result<EdgeMap> {
    config.validate()?;
    let h = config.step_fraction;
    if ((image.step / epsilon) - h).abs() > 1e-9 * h {
        return Err(SmaError::param(format!(
            "image step {} is not {h} epsilon = {}",
            image.step,
            h * epsilon
        )));
    }
    let functional = PatchFunctional::disk_moment(config.rho, h)?;
    let m = functional.grid.m as usize;
    if image.nx < 2 * m + 1 || image.ny < 2 * m + 1 {
        return Err(SmaError::Coverage(format!(
            "image {} x {} is smaller than one window ({} cells)",
            image.nx,
            image.ny,
            2 * m + 1
        )));
    }
    let cx: Vec<usize> = (m..image.nx - m).step_by(config.stride).collect();
    let cy: Vec<usize> = (m..image.ny - m).step_by(config.stride).collect();
    // Lattice offsets of the functional are image cell offsets.
    let taps: Vec<(isize, isize, [f64; 2])> = functional
        .nodes
        .iter()
        .zip(&functional.weights)
        .map(|(&(a, b), &w)| (a as isize, b as isize, w))
        .collect();
    let cells: Vec<(usize, usize)> = cy.iter().flat_map(|&y| cx.iter().map(move |&x| (x, y))).collect();
    let f: Vec<[f64; 2]> = cells
        .par_iter()
        .map(|&(ix, iy)| {
            let mut acc = [0.0; 2];
            for &(a, b, w) in &taps {
                let v = image.get((ix as isize + a) as usize, (iy as isize + b) as usize);
                acc[0] += w[0] * v;
                acc[1] += w[1] * v;
            }
            acc
        })
        .collect();
    let centers: Vec<[f64; 2]> = cells.iter().map(|&(x, y)| image.point(x, y)).collect();
    let cov: Vec<CovMatrix2> = centers
        .par_iter()
        .map(|&c| null.at(c, config.rho))
        .collect::<Result<_>>()?;
    let mut mag = Vec::with_capacity(f.len());
    let mut theta = Vec::with_capacity(f.len());
    let mut sign = Vec::with_capacity(f.len());
    let mut p_value = Vec::with_capacity(f.len());
    for (v, c) in f.iter().zip(&cov) {
        let r = v[0].hypot(v[1]);
        mag.push(r);
        if r > 0.0 {
            let a = v[1].atan2(v[0]);
            if a >= 0.0 && a < PI {
                theta.push(Some(a));
                sign.push(1);
            } else {
                theta.push(Some((a + PI).rem_euclid(PI)));
                sign.push(-1);
            }
        } else {
            theta.push(None);
            sign.push(0);
        }
        p_value.push((-0.5 * c.inv_quad(*v)?).exp());
    }
    let mut map = EdgeMap {
        nx: cx.len(),
        ny: cy.len(),
        centers,
        f,
        mag,
        theta,
        sign,
        cov,
        p_value,
        mask: Vec::new(),
        quiver: Vec::new(),
    };
    let (mask, quiver) = extract_edges(&map, config.threshold)?;
    map.mask = mask;
    map.quiver = quiver;
    Ok(map)
}

/// Thresholded centers and their unit `F / |F|` arrows.
pub fn extract_edges(map: &EdgeMap, policy: ThresholdPolicy) -> Result<(Vec<bool>, Vec<QuiverArrow>)> {
    let per_center = |q: f64| -> Vec<bool> {
        map.mag
            .iter()
            .zip(&map.cov)
            .zip(&map.f)
            .map(|((&r, c), v)| {
                if c.is_isotropic(1e-9) {
                    let nu_sq = 0.5 * c.trace();
                    r > (-2.0 * nu_sq * (1.0 - q).ln()).sqrt()
                } else {
                    c.inv_quad(*v).map(|z| z > -2.0 * (1.0 - q).ln()).unwrap_or(false)
                }
            })
            .collect()
    };
    let mask: Vec<bool> = match policy {
        ThresholdPolicy::NullQuantile { q } => {
            if !(q > 0.0 && q < 1.0) {
                return Err(SmaError::param("null quantile must lie in (0, 1)"));
            }
            per_center(q)
        }
        ThresholdPolicy::NullMax { level } => {
            if !(level > 0.0 && level < 1.0) {
                return Err(SmaError::param("familywise level must lie in (0, 1)"));
            }
            per_center(1.0 - level / map.mag.len().max(1) as f64)
        }
        ThresholdPolicy::Relative { fraction } => {
            let top = map.mag.iter().cloned().fold(0.0, f64::max);
            map.mag.iter().map(|&r| r > 0.0 && r >= fraction * top).collect()
        }
    };
    let quiver = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| {
            let r = map.mag[i];
            QuiverArrow {
                center: map.centers[i],
                dir: [map.f[i][0] / r, map.f[i][1] / r],
                mag: r,
                p_value: map.p_value[i],
            }
        })
        .collect();
    Ok((mask, quiver))
}

/// Symmetric Hausdorff distance between a point set and a circle, the circle
/// sampled at `n` points.
pub fn hausdorff_to_circle(points: &[[f64; 2]], center: [f64; 2], radius: f64, n: usize) -> f64 {
    if points.is_empty() {
        return f64::INFINITY;
    }
    let forward = points
        .iter()
        .map(|p| ((p[0] - center[0]).hypot(p[1] - center[1]) - radius).abs())
        .fold(0.0, f64::max);
    let backward = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let c = [center[0] + radius * t.cos(), center[1] + radius * t.sin()];
            points
                .iter()
                .map(|p| (p[0] - c[0]).hypot(p[1] - c[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    forward.max(backward)
}

/// Smallest angle between the lines spanned by `a` and `b`.
pub fn line_angle(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dot = (a[0] * b[0] + a[1] * b[1]).abs();
    let cross = (a[0] * b[1] - a[1] * b[0]).abs();
    cross.atan2(dot)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
