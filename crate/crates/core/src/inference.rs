//! Edge tests, their power, confidence regions and direction/magnitude
//! uncertainty.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::covariance::{CovMatrix2, WeightKind};
use crate::error::{Result, SmaError};
use crate::quadrature::{adaptive_simpson, composite_uniform, GaussLegendre};
use crate::reconstructor::{LocalPatch, PatchFunctional};
use crate::special::{
    bessel_i0e, chi2_1_quantile, noncentral_chi2_2_cdf, noncentral_chi2_2_sf, normal_cdf, normal_quantile,
    normal_sf, projected_normal_angle_pdf, rice_pdf,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub p_value: f64,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SmaError::param(format!("alpha = {alpha} is outside (0, 1)")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(SmaError::param(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

/// `F_u = int u(t) patch(t theta0) dt` over `|t| <= rho`.
pub fn f_u_1d(patch: &LocalPatch, theta0: [f64; 2], u: WeightKind, rho: f64) -> Result<f64> {
    let functional = segment_functional(patch.grid.h, theta0, u, rho)?;
    Ok(functional.apply(patch)?[0])
}

pub fn segment_functional(h: f64, theta0: [f64; 2], u: WeightKind, rho: f64) -> Result<PatchFunctional> {
    PatchFunctional::segment(rho, h, theta0, |t| u.eval(t, rho))
}

/// `F = int_{B_rho} y patch(y) dy`.
pub fn f_2d(patch: &LocalPatch, rho: f64) -> Result<[f64; 2]> {
    PatchFunctional::disk_moment(rho, patch.grid.h)?.apply(patch)
}

/// Size-`alpha` test of `Z = (F_u / gamma)^2` against `chi2_1`.
pub fn test_1d(f_u: f64, gamma: f64, alpha: f64) -> Result<TestResult> {
    check_positive("gamma", gamma)?;
    check_alpha(alpha)?;
    let z = (f_u / gamma).powi(2);
    let threshold = chi2_1_quantile(1.0 - alpha);
    Ok(TestResult {
        statistic: z,
        threshold,
        reject: z > threshold,
        p_value: libm::erfc((z / 2.0).sqrt()),
        alpha,
    })
}

/// One-sided variant for an edge whose response sign is known: rejects when
/// `sign * F_u / gamma` exceeds the standard normal `1 - alpha` quantile.
pub fn test_1d_directed(f_u: f64, gamma: f64, sign: f64, alpha: f64) -> Result<TestResult> {
    check_positive("gamma", gamma)?;
    check_alpha(alpha)?;
    let z = sign.signum() * f_u / gamma;
    let threshold = normal_quantile(1.0 - alpha);
    Ok(TestResult {
        statistic: z,
        threshold,
        reject: z > threshold,
        p_value: normal_sf(z),
        alpha,
    })
}

/// Type II error of [`test_1d`]: `P(|N(m, 1)| <= sqrt(c_alpha))`, `m = |H_u| / gamma`.
pub fn beta_1d(h_u: f64, gamma: f64, alpha: f64) -> Result<f64> {
    check_positive("gamma", gamma)?;
    check_alpha(alpha)?;
    let m = h_u.abs() / gamma;
    let c = chi2_1_quantile(1.0 - alpha).sqrt();
    Ok((normal_cdf(c - m) - normal_cdf(-c - m)).clamp(0.0, 1.0))
}

/// Type II error of [`test_1d_directed`] when the sign is correct.
pub fn beta_1d_directed(h_u: f64, gamma: f64, alpha: f64) -> Result<f64> {
    check_positive("gamma", gamma)?;
    check_alpha(alpha)?;
    Ok(normal_cdf(normal_quantile(1.0 - alpha) - h_u.abs() / gamma))
}

/// Size-`alpha` test of `Z = F^T C^{-1} F` against `chi2_2`.
pub fn test_2d(f: [f64; 2], c: &CovMatrix2, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let z = c.inv_quad(f)?;
    let threshold = -2.0 * alpha.ln();
    Ok(TestResult {
        statistic: z,
        threshold,
        reject: z > threshold,
        p_value: (-0.5 * z).exp(),
        alpha,
    })
}

/// `P(chi2_2(mu) <= x)`.
pub fn noncentral_chi2_cdf(x: f64, mu: f64) -> Result<f64> {
    if !(x >= 0.0) || !(mu >= 0.0) {
        return Err(SmaError::param("noncentral chi-squared needs x >= 0 and mu >= 0"));
    }
    Ok(noncentral_chi2_2_cdf(x, mu))
}

/// Noncentrality `mu = H^T C^{-1} H`.
pub fn noncentrality(h: [f64; 2], c: &CovMatrix2) -> Result<f64> {
    c.inv_quad(h)
}

pub fn power_2d(h: [f64; 2], c: &CovMatrix2, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mu = noncentrality(h, c)?;
    Ok(noncentral_chi2_2_sf(-2.0 * alpha.ln(), mu))
}

/// Isotropic power as the Rice mass outside the radius `nu sqrt(-2 ln alpha)`.
///
/// Integrates the Rice density rather than reusing the Poisson series, so the
/// two power routes check each other.
pub fn power_2d_iso(h: [f64; 2], nu: f64, alpha: f64) -> Result<f64> {
    check_positive("nu", nu)?;
    check_alpha(alpha)?;
    let a = h[0].hypot(h[1]) / nu;
    let b = (-2.0 * alpha.ln()).sqrt();
    // 1 - int_0^b t exp(-(t - a)^2 / 2) i0e(a t) dt
    let inside = composite_uniform(0.0, b, 16, 24, |t| t * (-0.5 * (t - a).powi(2)).exp() * bessel_i0e(a * t));
    Ok((1.0 - inside).clamp(0.0, 1.0))
}

/// `{H : (F - H)^T C^{-1} (F - H) <= radius_sq}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub shape: CovMatrix2,
    pub radius_sq: f64,
}

impl Ellipse {
    pub fn contains(&self, h: [f64; 2]) -> bool {
        let d = [self.center[0] - h[0], self.center[1] - h[1]];
        match self.shape.inv_quad(d) {
            Ok(q) => q <= self.radius_sq,
            Err(_) => false,
        }
    }

    /// Semi-axis lengths, minor first.
    pub fn semi_axes(&self) -> [f64; 2] {
        let ev = self.shape.eigenvalues();
        [
            (ev[0].max(0.0) * self.radius_sq).sqrt(),
            (ev[1].max(0.0) * self.radius_sq).sqrt(),
        ]
    }

    /// Boundary polyline with `n` vertices.
    pub fn boundary(&self, n: usize) -> Result<Vec<[f64; 2]>> {
        let l = self.shape.cholesky()?;
        let r = self.radius_sq.sqrt();
        Ok((0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                let (s, c) = t.sin_cos();
                [
                    self.center[0] + r * l[0][0] * c,
                    self.center[1] + r * (l[1][0] * c + l[1][1] * s),
                ]
            })
            .collect())
    }
}

pub fn confidence_region(f: [f64; 2], c: &CovMatrix2, alpha: f64) -> Result<Ellipse> {
    check_alpha(alpha)?;
    c.check_positive_definite()?;
    Ok(Ellipse {
        center: f,
        shape: *c,
        radius_sq: -2.0 * alpha.ln(),
    })
}

/// Isotropic dispersion `nu` of `C`, or an error for anisotropic matrices.
pub fn isotropic_nu(c: &CovMatrix2) -> Result<f64> {
    c.check_positive_definite()?;
    if !c.is_isotropic(1e-6) {
        return Err(SmaError::Unsupported(
            "direction and magnitude uncertainty need an isotropic covariance".into(),
        ));
    }
    Ok((0.5 * c.trace()).sqrt())
}

fn wrap_angle(t: f64) -> f64 {
    let mut d = (t + PI).rem_euclid(2.0 * PI) - PI;
    if d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Density of the polar angle of `F ~ N(H, nu^2 I)` at `theta`.
pub fn direction_pdf(theta: f64, h: [f64; 2], nu: f64) -> Result<f64> {
    check_positive("nu", nu)?;
    let k = h[0].hypot(h[1]) / nu;
    let theta0 = if k > 0.0 { h[1].atan2(h[0]) } else { 0.0 };
    Ok(projected_normal_angle_pdf(wrap_angle(theta - theta0), k))
}

/// Probability that the angle of `F` lies within `omega` of the angle of `H`.
pub fn direction_coverage(omega: f64, h: [f64; 2], nu: f64) -> Result<f64> {
    check_positive("nu", nu)?;
    if !(omega >= 0.0) {
        return Err(SmaError::param("omega must be nonnegative"));
    }
    let w = omega.min(PI);
    let k = h[0].hypot(h[1]) / nu;
    if k == 0.0 {
        return Ok(w / PI);
    }
    let v = 2.0 * adaptive_simpson(&|d| projected_normal_angle_pdf(d, k), 0.0, w, 1e-13);
    Ok(v.clamp(0.0, 1.0))
}

/// Smallest `omega` with `direction_coverage(omega) >= p`.
pub fn direction_interval(p: f64, h: [f64; 2], nu: f64) -> Result<f64> {
    check_alpha(p)?;
    bisect(|w| direction_coverage(w, h, nu).map(|c| c - p), 0.0, PI)
}

/// Rice density of `|F|`.
pub fn magnitude_pdf(t: f64, h: [f64; 2], nu: f64) -> Result<f64> {
    check_positive("nu", nu)?;
    Ok(rice_pdf(t, h[0].hypot(h[1]), nu))
}

/// Probability that `| |F| - |H| | <= r`, for `r < |H|`.
pub fn magnitude_coverage(r: f64, h: [f64; 2], nu: f64) -> Result<f64> {
    check_positive("nu", nu)?;
    let amp = h[0].hypot(h[1]);
    if !(r >= 0.0 && r < amp) {
        return Err(SmaError::param(format!("coverage radius {r} must lie in [0, |H| = {amp})")));
    }
    let rule = GaussLegendre::cached(48);
    let (lo, hi) = (amp - r, amp + r);
    let panels = 32;
    let step = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for i in 0..panels {
        let a = lo + i as f64 * step;
        acc += rule.integrate(a, a + step, |t| rice_pdf(t, amp, nu));
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// Smallest `r` with `magnitude_coverage(r) >= p`; errors when `p` is not
/// reached for `r < |H|`.
pub fn magnitude_interval(p: f64, h: [f64; 2], nu: f64) -> Result<f64> {
    check_alpha(p)?;
    let amp = h[0].hypot(h[1]);
    let top = amp * (1.0 - 1e-12);
    if magnitude_coverage(top, h, nu)? < p {
        return Err(SmaError::Unsupported(format!(
            "coverage {p} is not reached by magnitude intervals inside (0, 2|H|)"
        )));
    }
    bisect(|r| magnitude_coverage(r, h, nu).map(|c| c - p), 0.0, top)
}

fn bisect(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdfKind {
    Direction,
    Magnitude,
}

/// Tabulated direction or magnitude density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarPdf {
    pub kind: PdfKind,
    pub amplitude: f64,
    pub nu: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl PolarPdf {
    /// Angle density on `theta0 + [-pi, pi]`.
    pub fn direction(h: [f64; 2], nu: f64, n: usize) -> Result<Self> {
        let theta0 = h[1].atan2(h[0]);
        let grid: Vec<f64> = (0..=n).map(|i| theta0 - PI + 2.0 * PI * i as f64 / n as f64).collect();
        let values = grid.iter().map(|&t| direction_pdf(t, h, nu)).collect::<Result<_>>()?;
        Ok(PolarPdf {
            kind: PdfKind::Direction,
            amplitude: h[0].hypot(h[1]),
            nu,
            grid,
            values,
        })
    }

    /// Magnitude density on `[0, |H| + 12 nu]`.
    pub fn magnitude(h: [f64; 2], nu: f64, n: usize) -> Result<Self> {
        let amp = h[0].hypot(h[1]);
        let top = amp + 12.0 * nu;
        let grid: Vec<f64> = (0..=n).map(|i| top * i as f64 / n as f64).collect();
        let values = grid.iter().map(|&t| magnitude_pdf(t, h, nu)).collect::<Result<_>>()?;
        Ok(PolarPdf {
            kind: PdfKind::Magnitude,
            amplitude: amp,
            nu,
            grid,
            values,
        })
    }

    /// Integral of the density over its domain by Gauss–Legendre on the
    /// closed form.
    pub fn total_mass(&self) -> f64 {
        let (lo, hi) = (self.grid[0], *self.grid.last().unwrap());
        let h = [self.amplitude, 0.0];
        match self.kind {
            PdfKind::Direction => composite_uniform(lo, hi, 64, 24, |t| {
                direction_pdf(t - self.grid[0] - PI, h, self.nu).unwrap_or(0.0)
            }),
            PdfKind::Magnitude => composite_uniform(lo, hi, 64, 24, |t| rice_pdf(t, self.amplitude, self.nu)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{edge_vector, gamma_sq, h_u, CovContext};
    use crate::kernel::Kernel;
    use crate::reconstructor::{PatchGrid, PatchPart};
    use crate::rng;
    use crate::sampling::{NoiseModel, SamplingGrid, SigmaProfile, UniformConvention};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn patch_of(rho: f64, f: impl Fn([f64; 2]) -> f64) -> LocalPatch {
        let g = PatchGrid::new(rho, 0.125).unwrap();
        LocalPatch::from_fn([0.0, 0.0], 0.007, g, PatchPart::Full, f)
    }

    /// Theoretical 1D and 2D inputs for the reference experiment.
    fn reference_theory(u: WeightKind) -> (f64, f64) {
        let grid = SamplingGrid::reference();
        let model = NoiseModel::uniform(SigmaProfile::constant(3f64.sqrt())).with_convention(UniformConvention::Width);
        let ctx = CovContext::from_noise([0.345, -0.1], &grid, &model, Arc::new(Kernel::bspline4()));
        let k = Kernel::bspline4();
        (h_u(&k, u, 3.0, -1.0), gamma_sq(&ctx, u, 3.0, [1.0, 0.0]).sqrt())
    }

    #[test]
    fn f_u_constant_patch_is_zero() {
        let p = patch_of(3.0, |_| 2.5);
        for u in [WeightKind::Linear, WeightKind::Sgn] {
            assert!(f_u_1d(&p, [0.6, 0.8], u, 3.0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn f_u_of_edge_profile_matches_h_u() {
        let k = Kernel::bspline4();
        let rho = 3.0;
        let p = patch_of(rho, |y| k.dtb(y[0]));
        let v = f_u_1d(&p, [1.0, 0.0], WeightKind::Sgn, rho).unwrap() / rho;
        let want = h_u(&k, WeightKind::Sgn, rho, 1.0) / rho;
        // midpoint rule on bilinear samples: second order in h
        assert!((v - want).abs() < 1e-3 * want, "{v} vs {want}");
        let big = h_u(&k, WeightKind::Sgn, 50.0, 1.0) / 50.0;
        assert!((big - 1.0).abs() < 0.02);
    }

    #[test]
    fn f_u_negates_with_direction() {
        let p = patch_of(3.0, |y| (0.7 * y[0] + 0.2 * y[1]).sin());
        let th = [0.8, -0.6];
        let a = f_u_1d(&p, th, WeightKind::Linear, 2.5).unwrap();
        let b = f_u_1d(&p, [-th[0], -th[1]], WeightKind::Linear, 2.5).unwrap();
        assert!(a.abs() > 0.1);
        assert!((a + b).abs() < 1e-12);
        assert!(f_u_1d(&p, th, WeightKind::Linear, 4.0).is_err());
    }

    #[test]
    fn test_1d_basics() {
        let r = test_1d(0.0, 1.2, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.reject);
        assert!((r.p_value - 1.0).abs() < 1e-15);
        assert!((r.threshold - 3.841458820694124).abs() < 1e-9);
        // Independent inversion of erf(sqrt(x/2)) = 0.95 by Newton.
        let mut x: f64 = 3.0;
        for _ in 0..50 {
            let f = libm::erf((x / 2.0).sqrt()) - 0.95;
            let df = (-x / 2.0).exp() / (2.0 * PI * x).sqrt();
            x -= f / df;
        }
        assert!((r.threshold - x).abs() < 1e-9);
        assert!(test_1d(1.0, 0.0, 0.05).is_err());
        assert!(test_1d(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn test_1d_calibration_under_null() {
        let n = 10_000;
        let mut r = rng::stream(11, 0);
        let gamma = 0.7;
        let samples: Vec<f64> = (0..n).map(|_| gamma * r.sample::<f64, _>(StandardNormal)).collect();
        for alpha in [0.01, 0.05, 0.1] {
            let rate = samples.iter().filter(|&&f| test_1d(f, gamma, alpha).unwrap().reject).count() as f64 / n as f64;
            let band = 2.0 * (alpha * (1.0 - alpha) / n as f64).sqrt();
            assert!((rate - alpha).abs() <= 2.0 * band, "{alpha}: {rate}");
        }
    }

    #[test]
    fn beta_1d_limits() {
        assert!((beta_1d(0.0, 1.0, 0.05).unwrap() - 0.95).abs() < 1e-12);
        assert!((beta_1d(0.0, 1.0, 0.2).unwrap() - 0.8).abs() < 1e-12);
        assert!(beta_1d(50.0, 1.0, 0.05).unwrap() < 1e-12);
        assert!((beta_1d_directed(0.0, 1.0, 0.05).unwrap() - 0.95).abs() < 1e-12);
        assert!(beta_1d(1.0, -1.0, 0.05).is_err());
    }

    #[test]
    fn beta_1d_against_simulation() {
        let m = 1.7;
        let n = 100_000;
        let mut r = rng::stream(5, 1);
        let acc = (0..n)
            .filter(|_| {
                let f = m + r.sample::<f64, _>(StandardNormal);
                !test_1d(f, 1.0, 0.05).unwrap().reject
            })
            .count() as f64
            / n as f64;
        let b = beta_1d(m, 1.0, 0.05).unwrap();
        assert!((acc - b).abs() < 4.0 * (b * (1.0 - b) / n as f64).sqrt());
    }

    #[test]
    fn reference_1d_power_linear() {
        let (h, g) = reference_theory(WeightKind::Linear);
        let directed = 1.0 - beta_1d_directed(h, g, 0.05).unwrap();
        let two_sided = 1.0 - beta_1d(h, g, 0.05).unwrap();
        // The reported 0.64 is reproduced by the signed statistic; the
        // two-sided test has less power at the same signal.
        assert!((directed - 0.64).abs() < 0.05, "directed {directed}");
        assert!(two_sided < directed);
    }

    #[test]
    fn f_2d_exact_cases() {
        let c = patch_of(3.0, |_| 4.0);
        let v = f_2d(&c, 3.0).unwrap();
        assert!(v[0].abs() < 1e-10 && v[1].abs() < 1e-10);
        let lin = patch_of(3.0, |y| y[0]);
        let v = f_2d(&lin, 3.0).unwrap();
        assert!((v[0] - PI * 81.0 / 4.0).abs() < 1e-4);
        assert!(v[1].abs() < 1e-10);
    }

    #[test]
    fn f_2d_of_edge_profile_matches_edge_vector() {
        let k = Kernel::bspline4();
        let th = [0.6, 0.8];
        let p = patch_of(3.0, |y| -k.dtb(th[0] * y[0] + th[1] * y[1]));
        let v = f_2d(&p, 3.0).unwrap();
        let e = edge_vector(&k, 3.0, -1.0, th).unwrap();
        assert!((v[0] - e.h[0]).abs() < 1e-4 && (v[1] - e.h[1]).abs() < 1e-4, "{v:?} vs {:?}", e.h);
    }

    #[test]
    fn test_2d_basics() {
        let c = CovMatrix2::new(2.0, 0.3, 1.0);
        let r = test_2d([0.0, 0.0], &c, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!((r.threshold - 5.991464547107979).abs() < 1e-12);
        let sing = CovMatrix2::new(1.0, 1.0, 1.0);
        assert!(matches!(test_2d([1.0, 0.0], &sing, 0.05), Err(SmaError::SingularCovariance { .. })));
    }

    #[test]
    fn test_2d_calibration_under_null() {
        let c = CovMatrix2::new(2.0, 0.5, 0.8);
        let l = c.cholesky().unwrap();
        let n = 10_000;
        let mut r = rng::stream(21, 0);
        let samples: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let z0: f64 = StandardNormal.sample(&mut r);
                let z1: f64 = StandardNormal.sample(&mut r);
                [l[0][0] * z0, l[1][0] * z0 + l[1][1] * z1]
            })
            .collect();
        for alpha in [0.01, 0.05, 0.1] {
            let rate = samples.iter().filter(|f| test_2d(**f, &c, alpha).unwrap().reject).count() as f64 / n as f64;
            assert!((rate - alpha).abs() <= 4.0 * (alpha * (1.0 - alpha) / n as f64).sqrt());
        }
    }

    #[test]
    fn noncentral_cdf_properties() {
        for x in [0.0, 0.5, 3.0, 10.0] {
            assert!((noncentral_chi2_cdf(x, 0.0).unwrap() - (1.0 - (-x / 2.0f64).exp())).abs() < 1e-15);
        }
        let xs: Vec<f64> = (0..40).map(|i| 0.5 * i as f64).collect();
        let mus = [0.0, 0.5, 2.0, 8.0, 30.0];
        for &mu in &mus {
            for w in xs.windows(2) {
                assert!(noncentral_chi2_cdf(w[1], mu).unwrap() >= noncentral_chi2_cdf(w[0], mu).unwrap());
            }
        }
        for &x in &xs {
            for w in mus.windows(2) {
                assert!(noncentral_chi2_cdf(x, w[1]).unwrap() <= noncentral_chi2_cdf(x, w[0]).unwrap() + 1e-15);
            }
        }
        assert!(noncentral_chi2_cdf(-1.0, 0.0).is_err());
    }

    #[test]
    fn noncentral_cdf_against_simulation() {
        let h = [1.2, -2.1];
        let mu = h[0] * h[0] + h[1] * h[1];
        let n = 1_000_000;
        let x = 6.0;
        let mut r = rng::stream(99, 0);
        let hits = (0..n)
            .filter(|_| {
                let a: f64 = h[0] + r.sample::<f64, _>(StandardNormal);
                let b: f64 = h[1] + r.sample::<f64, _>(StandardNormal);
                a * a + b * b <= x
            })
            .count() as f64
            / n as f64;
        let p = noncentral_chi2_cdf(x, mu).unwrap();
        assert!((hits - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{hits} vs {p}");
    }

    #[test]
    fn power_basics() {
        let c = CovMatrix2::new(0.3, 0.05, 0.2);
        assert!((power_2d([0.0, 0.0], &c, 0.05).unwrap() - 0.05).abs() < 1e-12);
        assert!((power_2d_iso([0.0, 0.0], 0.4, 0.05).unwrap() - 0.05).abs() < 1e-10);
        let h = [0.9, -0.4];
        let p = power_2d(h, &c, 0.05).unwrap();
        for s in [0.001, 0.3, 7.0, 1e4] {
            let q = power_2d([s * h[0], s * h[1]], &c.scaled(s * s), 0.05).unwrap();
            assert!((q - p).abs() < 1e-12);
        }
        let mut last = 0.0;
        for i in 0..30 {
            let v = power_2d_iso([0.2 * i as f64, 0.0], 0.5, 0.05).unwrap();
            assert!(v >= last - 1e-12);
            last = v;
        }
        assert!(power_2d_iso(h, 0.0, 0.05).is_err());
    }

    #[test]
    fn power_routes_agree_on_grid() {
        for &alpha in &[0.01, 0.05, 0.2] {
            for &nu in &[0.1, 0.5, 2.0] {
                for &a in &[0.0, 0.05, 0.4, 1.0, 3.0] {
                    let h = [a * 0.6, a * 0.8];
                    let p1 = power_2d(h, &CovMatrix2::isotropic(nu * nu), alpha).unwrap();
                    let p2 = power_2d_iso(h, nu, alpha).unwrap();
                    assert!((p1 - p2).abs() < 1e-10, "{alpha} {nu} {a}: {p1} {p2}");
                }
            }
        }
    }

    #[test]
    fn confidence_region_shape_and_coverage() {
        let c = CovMatrix2::new(0.5, 0.1, 0.3);
        let e = confidence_region([0.0, 0.0], &c, 1.0 - 1e-12).unwrap();
        assert!(e.radius_sq < 1e-11);
        let iso = confidence_region([1.0, 2.0], &CovMatrix2::isotropic(0.04), 0.05).unwrap();
        let want = 0.2 * (-2.0 * 0.05f64.ln()).sqrt();
        let ax = iso.semi_axes();
        assert!((ax[0] - want).abs() < 1e-12 && (ax[1] - want).abs() < 1e-12);
        assert!(iso.contains([1.0 + 0.99 * want, 2.0]));
        assert!(!iso.contains([1.0, 2.0 + 1.01 * want]));

        let h = [0.7, -0.2];
        let l = c.cholesky().unwrap();
        let n = 10_000;
        for alpha in [0.05, 0.32] {
            let mut r = rng::stream(3, (alpha * 100.0) as u64);
            let mut hit = 0;
            for _ in 0..n {
                let z0: f64 = StandardNormal.sample(&mut r);
                let z1: f64 = StandardNormal.sample(&mut r);
                let f = [h[0] + l[0][0] * z0, h[1] + l[1][0] * z0 + l[1][1] * z1];
                if confidence_region(f, &c, alpha).unwrap().contains(h) {
                    hit += 1;
                }
            }
            let cov = hit as f64 / n as f64;
            assert!((cov - (1.0 - alpha)).abs() <= 4.0 * (alpha * (1.0 - alpha) / n as f64).sqrt());
        }
    }

    #[test]
    fn direction_pdf_cases() {
        let nu = 0.3;
        for t in [-3.0, -1.0, 0.0, 2.0] {
            assert!((direction_pdf(t, [0.0, 0.0], nu).unwrap() - 0.5 / PI).abs() < 1e-15);
        }
        assert!((direction_coverage(1.0, [0.0, 0.0], nu).unwrap() - 1.0 / PI).abs() < 1e-15);
        let h: [f64; 2] = [0.5, 0.7];
        let th0 = h[1].atan2(h[0]);
        let mass = adaptive_simpson(&|t| direction_pdf(t, h, nu).unwrap(), -PI, PI, 1e-13);
        assert!((mass - 1.0).abs() < 1e-8);
        for d in [0.1, 0.5, 2.0] {
            let a = direction_pdf(th0 + d, h, nu).unwrap();
            let b = direction_pdf(th0 - d, h, nu).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
        assert!((direction_coverage(PI, h, nu).unwrap() - 1.0).abs() < 1e-8);
        assert!(direction_pdf(0.0, h, 0.0).is_err());
    }

    #[test]
    fn direction_pdf_matches_radial_integral() {
        // phi(theta) = int_0^inf f(t Theta) t dt by quadrature.
        let h = [0.9, -0.3];
        let nu = 0.4;
        for theta in [-2.5, -0.4, 0.0, 1.1] {
            let (c, s) = (f64::cos(theta), f64::sin(theta));
            let f = |t: f64| {
                let d2 = (t * c - h[0]).powi(2) + (t * s - h[1]).powi(2);
                t * (-d2 / (2.0 * nu * nu)).exp() / (2.0 * PI * nu * nu)
            };
            let direct = composite_uniform(0.0, 12.0, 200, 16, f);
            assert!((direct - direction_pdf(theta, h, nu).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn ratio_4_52_anchors() {
        // |H| / nu implied by the reported H and C_hat.
        let h = [1.23, 0.0];
        let nu = 0.074f64.sqrt();
        let omega = direction_interval(0.95, h, nu).unwrap().to_degrees();
        assert!((omega - 26.0).abs() < 3.0, "{omega}");
        let r = magnitude_interval(0.95, h, nu).unwrap() / 1.23;
        assert!((r - 0.43).abs() < 0.03, "{r}");
    }

    #[test]
    fn magnitude_pdf_cases() {
        let nu = 0.7;
        // Rayleigh mode at nu
        let f = |t: f64| magnitude_pdf(t, [0.0, 0.0], nu).unwrap();
        assert!(f(nu) > f(nu - 1e-3) && f(nu) > f(nu + 1e-3));
        let h = [1.5, 0.4];
        let mass = adaptive_simpson(&|t| magnitude_pdf(t, h, nu).unwrap(), 0.0, 20.0, 1e-13);
        assert!((mass - 1.0).abs() < 1e-8);
        assert!(magnitude_coverage(2.0, h, nu).is_err());
        // Interior coverage against the angular integral of the density.
        let amp = h[0].hypot(h[1]);
        let via_angle = adaptive_simpson(
            &|t: f64| {
                t * adaptive_simpson(
                    &|th: f64| {
                        let d2 = (t * th.cos() - amp).powi(2) + (t * th.sin()).powi(2);
                        (-d2 / (2.0 * nu * nu)).exp() / (2.0 * PI * nu * nu)
                    },
                    -PI,
                    PI,
                    1e-12,
                )
            },
            amp - 0.5,
            amp + 0.5,
            1e-10,
        );
        assert!((magnitude_coverage(0.5, h, nu).unwrap() - via_angle).abs() < 1e-8);
    }

    #[test]
    fn polar_pdfs_integrate_to_one() {
        let h = [0.8, 0.3];
        let d = PolarPdf::direction(h, 0.25, 256).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-8);
        assert!(d.values.iter().all(|&v| v >= 0.0));
        let m = PolarPdf::magnitude(h, 0.25, 256).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn anisotropic_uq_is_rejected() {
        assert!(matches!(isotropic_nu(&CovMatrix2::new(1.0, 0.2, 1.0)), Err(SmaError::Unsupported(_))));
        assert!((isotropic_nu(&CovMatrix2::isotropic(0.25)).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uq_pdfs_match_sample_histograms() {
        let h: [f64; 2] = [0.6, 0.2];
        let nu = 0.3;
        let n = 100_000;
        let mut r = rng::stream(77, 0);
        let th0 = h[1].atan2(h[0]);
        let bins = 24;
        let (mut ang, mut mag) = (vec![0usize; bins], vec![0usize; bins]);
        let tmax = 2.0;
        for _ in 0..n {
            let x = h[0] + nu * r.sample::<f64, _>(StandardNormal);
            let y = h[1] + nu * r.sample::<f64, _>(StandardNormal);
            let d = wrap_angle(y.atan2(x) - th0);
            ang[(((d + PI) / (2.0 * PI)) * bins as f64).min(bins as f64 - 1.0) as usize] += 1;
            let t = x.hypot(y);
            if t < tmax {
                mag[(t / tmax * bins as f64) as usize] += 1;
            }
        }
        for b in 0..bins {
            let (a0, a1) = (-PI + 2.0 * PI * b as f64 / bins as f64, -PI + 2.0 * PI * (b + 1) as f64 / bins as f64);
            let p = adaptive_simpson(&|d| direction_pdf(th0 + d, h, nu).unwrap(), a0, a1, 1e-12);
            let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!((ang[b] as f64 - n as f64 * p).abs() < 3.5 * sd, "angle bin {b}");
            let (t0, t1) = (tmax * b as f64 / bins as f64, tmax * (b + 1) as f64 / bins as f64);
            let p = adaptive_simpson(&|t| magnitude_pdf(t, h, nu).unwrap(), t0, t1, 1e-12);
            let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!((mag[b] as f64 - n as f64 * p).abs() < 3.5 * sd, "magnitude bin {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn decisions_are_scale_invariant(s in 0.01f64..100.0, f0 in -3.0f64..3.0, f1 in -3.0f64..3.0, alpha in 0.01f64..0.5) {
            let c = CovMatrix2::new(0.8, 0.2, 0.5);
            let a = test_2d([f0, f1], &c, alpha).unwrap();
            let b = test_2d([s * f0, s * f1], &c.scaled(s * s), alpha).unwrap();
            prop_assert_eq!(a.reject, b.reject);
            let g = 0.9;
            prop_assert_eq!(test_1d(f0, g, alpha).unwrap().reject, test_1d(s * f0, s * g, alpha).unwrap().reject);
        }

        #[test]
        fn one_d_reject_iff_p_below_alpha(f in -5.0f64..5.0, alpha in 0.001f64..0.5) {
            let r = test_1d(f, 1.0, alpha).unwrap();
            if (r.p_value - alpha).abs() > 1e-9 {
                prop_assert_eq!(r.reject, r.p_value < alpha);
            }
        }
    }
}
