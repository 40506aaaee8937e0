//! Limiting covariance of the reconstruction noise near `x0` and the
//! deterministic edge response.
//!
//! `C(x) = (kappa/4pi)^2 int_0^{2pi} sigma^2(alpha, alpha.x0) A(alpha.x) d alpha`
//! with `A = phi' * phi'`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};
use crate::kernel::{Kernel, KernelKind};
use crate::quadrature::{composite, GaussLegendre};
use crate::rng;
use crate::sampling::{NoiseModel, SamplingGrid};

pub type SigmaSqFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct CovContext {
    pub x0: [f64; 2],
    pub kappa: f64,
    pub kernel: Arc<Kernel>,
    /// Trapezoid nodes for the angular integral.
    pub n_alpha: usize,
    sigma_sq: SigmaSqFn,
    constant: Option<f64>,
}

impl std::fmt::Debug for CovContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CovContext")
            .field("x0", &self.x0)
            .field("kappa", &self.kappa)
            .field("kernel", &self.kernel.kind())
            .field("n_alpha", &self.n_alpha)
            .field("constant_sigma_sq", &self.constant)
            .finish()
    }
}

pub const DEFAULT_N_ALPHA: usize = 2048;

impl CovContext {
    /// Constant noise density `sigma^2`.
    pub fn constant(x0: [f64; 2], kappa: f64, sigma_sq: f64, kernel: Arc<Kernel>) -> Self {
        CovContext {
            x0,
            kappa,
            kernel,
            n_alpha: DEFAULT_N_ALPHA,
            sigma_sq: Arc::new(move |_, _| sigma_sq),
            constant: Some(sigma_sq),
        }
    }

    /// Variance density of a noise model on a lattice (including any
    /// convention factors of the model).
    pub fn from_noise(x0: [f64; 2], grid: &SamplingGrid, model: &NoiseModel, kernel: Arc<Kernel>) -> Self {
        let g = grid.clone();
        let m = *model;
        let constant = model.constant_sigma_sq(grid);
        CovContext {
            x0,
            kappa: grid.kappa,
            kernel,
            n_alpha: DEFAULT_N_ALPHA,
            sigma_sq: Arc::new(move |a, p| m.sigma_sq_effective(&g, a, p)),
            constant,
        }
    }

    pub fn custom(x0: [f64; 2], kappa: f64, kernel: Arc<Kernel>, sigma_sq: SigmaSqFn) -> Self {
        CovContext {
            x0,
            kappa,
            kernel,
            n_alpha: DEFAULT_N_ALPHA,
            sigma_sq,
            constant: None,
        }
    }

    pub fn with_n_alpha(mut self, n: usize) -> Result<Self> {
        if n < 256 {
            return Err(SmaError::param(format!("n_alpha = {n} is below the minimum of 256")));
        }
        self.n_alpha = n;
        Ok(self)
    }

    /// Same context with the noise density multiplied by `s^2`.
    pub fn scaled(&self, s: f64) -> Self {
        let inner = self.sigma_sq.clone();
        let s2 = s * s;
        CovContext {
            x0: self.x0,
            kappa: self.kappa,
            kernel: self.kernel.clone(),
            n_alpha: self.n_alpha,
            sigma_sq: Arc::new(move |a, p| s2 * inner(a, p)),
            constant: self.constant.map(|c| c * s2),
        }
    }

    pub fn constant_sigma_sq(&self) -> Option<f64> {
        self.constant
    }

    /// `sigma^2(alpha, alpha . x0)`.
    #[inline]
    pub fn sigma_sq_along(&self, alpha: f64) -> f64 {
        let p = alpha.cos() * self.x0[0] + alpha.sin() * self.x0[1];
        (self.sigma_sq)(alpha, p)
    }

    fn prefactor(&self) -> f64 {
        let c = self.kappa / (4.0 * PI);
        c * c
    }
}

/// `C(x)` by the trapezoid rule on `n_alpha` nodes.
pub fn cov_c(ctx: &CovContext, x: [f64; 2]) -> f64 {
    let n = ctx.n_alpha;
    let da = 2.0 * PI / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let a = i as f64 * da;
        let (s, c) = a.sin_cos();
        acc += ctx.sigma_sq_along(a) * ctx.kernel.autocorr_dphi(c * x[0] + s * x[1]);
    }
    ctx.prefactor() * acc * da
}

/// `C(x)` by Gauss–Legendre between the angles where `alpha . x` crosses a
/// knot of `A`. Accurate for arguments far beyond the kernel scale, where the
/// trapezoid rule under-resolves the narrow angular window.
pub fn cov_c_panels(ctx: &CovContext, x: [f64; 2]) -> f64 {
    let r = x[0].hypot(x[1]);
    let phase = x[1].atan2(x[0]);
    // alpha . x = r cos(alpha - phase)
    let mut breaks = vec![0.0, PI, 2.0 * PI];
    if r > 0.0 {
        let reach = ctx.kernel.autocorr_support().min(r).floor() as i64;
        for m in -reach..=reach {
            let c = (m as f64 / r).clamp(-1.0, 1.0);
            let b = c.acos();
            breaks.push(b);
            breaks.push(2.0 * PI - b);
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let acc = composite(&breaks, 16, |u| {
        let alpha = u + phase;
        ctx.sigma_sq_along(alpha) * ctx.kernel.autocorr_dphi(r * u.cos())
    });
    ctx.prefactor() * acc
}

/// `C_1(t) = C(t theta0)`.
pub fn cov_c1(ctx: &CovContext, t: f64, theta0: [f64; 2]) -> f64 {
    cov_c(ctx, [t * theta0[0], t * theta0[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    #[default]
    Linear,
    Sgn,
}

impl WeightKind {
    #[inline]
    pub fn eval(self, t: f64, rho: f64) -> f64 {
        if t.abs() > rho {
            return 0.0;
        }
        match self {
            WeightKind::Linear => t,
            WeightKind::Sgn => {
                if t > 0.0 {
                    1.0
                } else if t < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `R(tau) = int u(t) u(t + tau) dt` for `tau >= 0`.
    pub fn autocorrelation(self, tau: f64, rho: f64) -> f64 {
        let tau = tau.abs();
        if tau >= 2.0 * rho {
            return 0.0;
        }
        match self {
            WeightKind::Sgn => {
                if tau <= rho {
                    2.0 * rho - 3.0 * tau
                } else {
                    -(2.0 * rho - tau)
                }
            }
            WeightKind::Linear => {
                let (a, b) = (-rho, rho - tau);
                (b.powi(3) - a.powi(3)) / 3.0 + tau * (b * b - a * a) / 2.0
            }
        }
    }
}

/// `gamma^2 = int int u(t1) u(t2) C_1(t1 - t2)`, reduced to the single
/// integral `int C_1(tau) R_u(tau) d tau` over the weight autocorrelation.
pub fn gamma_sq(ctx: &CovContext, u: WeightKind, rho: f64, theta0: [f64; 2]) -> f64 {
    // C_1 is even, so integrate over tau >= 0 and double.
    let mut breaks: Vec<f64> = (0..=(2.0 * rho).ceil() as i64).map(|m| m as f64).collect();
    breaks.retain(|&b| b < 2.0 * rho);
    breaks.push(rho);
    breaks.push(2.0 * rho);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    2.0 * composite(&breaks, 24, |tau| {
        cov_c_panels(ctx, [tau * theta0[0], tau * theta0[1]]) * u.autocorrelation(tau, rho)
    })
}

/// `gamma^2` by tensor Gauss–Legendre in `(t1, t2)` with `n` nodes per half
/// segment, kept as an independent route.
pub fn gamma_sq_tensor(ctx: &CovContext, u: WeightKind, rho: f64, theta0: [f64; 2], n: usize) -> f64 {
    let rule = GaussLegendre::cached(n);
    let nodes: Vec<(f64, f64)> = rule.on(-rho, 0.0).chain(rule.on(0.0, rho)).collect();
    let mut acc = 0.0;
    for &(t1, w1) in &nodes {
        let u1 = u.eval(t1, rho);
        for &(t2, w2) in &nodes {
            let d = t1 - t2;
            acc += w1 * w2 * u1 * u.eval(t2, rho) * cov_c(ctx, [d * theta0[0], d * theta0[1]]);
        }
    }
    acc
}

/// Deterministic part of the 1D weighted integral,
/// `H_u = delta_f int u(t) f_T(t) dt`.
pub fn h_u(kernel: &Kernel, u: WeightKind, rho: f64, delta_f: f64) -> f64 {
    let s = kernel.support_radius();
    let mut breaks = vec![-rho, 0.0, rho];
    for kn in kernel.knots() {
        if kn.abs() < rho {
            breaks.push(kn);
        }
    }
    breaks.push(s.min(rho));
    breaks.push(-s.min(rho));
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    delta_f * composite(&breaks, 16, |t| u.eval(t, rho) * kernel.dtb(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix2 {
    pub c11: f64,
    pub c12: f64,
    pub c22: f64,
}

impl CovMatrix2 {
    pub fn new(c11: f64, c12: f64, c22: f64) -> Self {
        CovMatrix2 { c11, c12, c22 }
    }

    pub fn isotropic(nu_sq: f64) -> Self {
        CovMatrix2::new(nu_sq, 0.0, nu_sq)
    }

    pub fn trace(&self) -> f64 {
        self.c11 + self.c22
    }

    pub fn det(&self) -> f64 {
        self.c11 * self.c22 - self.c12 * self.c12
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * self.trace();
        let d = (0.25 * (self.c11 - self.c22).powi(2) + self.c12 * self.c12).sqrt();
        [m - d, m + d]
    }

    pub fn scaled(&self, s2: f64) -> Self {
        CovMatrix2::new(self.c11 * s2, self.c12 * s2, self.c22 * s2)
    }

    /// Errors unless the smallest eigenvalue exceeds `1e-12 * trace`.
    pub fn check_positive_definite(&self) -> Result<()> {
        let det = self.det();
        let tr = self.trace();
        if !(tr > 0.0) || !(self.eigenvalues()[0] > 1e-12 * tr) || !(det > 1e-300) {
            return Err(SmaError::SingularCovariance { det });
        }
        Ok(())
    }

    /// `v^T C^{-1} v` by the adjugate formula.
    pub fn inv_quad(&self, v: [f64; 2]) -> Result<f64> {
        self.check_positive_definite()?;
        let det = self.det();
        Ok((self.c22 * v[0] * v[0] - 2.0 * self.c12 * v[0] * v[1] + self.c11 * v[1] * v[1]) / det)
    }

    /// Lower Cholesky factor `[[l11, 0], [l21, l22]]`.
    pub fn cholesky(&self) -> Result<[[f64; 2]; 2]> {
        if !(self.c11 > 0.0) {
            return Err(SmaError::Factorization { pivot: 0 });
        }
        let l11 = self.c11.sqrt();
        let l21 = self.c12 / l11;
        let r = self.c22 - l21 * l21;
        if !(r > 0.0) {
            return Err(SmaError::Factorization { pivot: 1 });
        }
        Ok([[l11, 0.0], [l21, r.sqrt()]])
    }

    pub fn is_isotropic(&self, rel: f64) -> bool {
        let s = self.c11.abs().max(self.c22.abs());
        self.c12.abs() <= rel * s && (self.c11 - self.c22).abs() <= rel * s
    }
}

type CacheKey = (KernelKind, u64);

fn q_cache() -> &'static RwLock<HashMap<CacheKey, f64>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn coeff_cache() -> &'static RwLock<HashMap<CacheKey, f64>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn memo(cache: &RwLock<HashMap<CacheKey, f64>>, key: CacheKey, f: impl FnOnce() -> f64) -> f64 {
    if let Some(&v) = cache.read().unwrap().get(&key) {
        return v;
    }
    let v = f();
    *cache.write().unwrap().entry(key).or_insert(v)
}

/// `Q = int int t s w(t) w(s) A(t - s) dt ds`, `w(t) = 2 sqrt(rho^2 - t^2)`.
///
/// With `t = rho sin th` the weight becomes `2 rho^3 sin th cos^2 th d th`,
/// which removes the square-root endpoints.
pub fn q_integral(kernel: &Kernel, rho: f64) -> f64 {
    memo(q_cache(), (kernel.kind(), rho.to_bits()), || {
        let n = 128usize.max((24.0 * rho).ceil() as usize);
        let rule = GaussLegendre::cached(n);
        let nodes: Vec<(f64, f64)> = rule
            .on(-0.5 * PI, 0.5 * PI)
            .map(|(th, w)| {
                let (s, c) = th.sin_cos();
                (rho * s, w * 2.0 * rho.powi(3) * s * c * c)
            })
            .collect();
        let mut acc = 0.0;
        for &(t, wt) in &nodes {
            let mut row = 0.0;
            for &(s, ws) in &nodes {
                row += ws * kernel.autocorr_dphi(t - s);
            }
            acc += wt * row;
        }
        acc
    })
}

/// `C_hat = (kappa/4pi)^2 Q int sigma^2(alpha, alpha.x0) alpha alpha^T d alpha`.
pub fn cov_matrix(ctx: &CovContext, rho: f64) -> Result<CovMatrix2> {
    if !(rho > 0.0) {
        return Err(SmaError::param("window radius must be positive"));
    }
    let q = q_integral(&ctx.kernel, rho);
    let pre = ctx.prefactor() * q;
    if let Some(s2) = ctx.constant {
        // int cos^2 = int sin^2 = pi, int cos sin = 0
        let v = pre * s2 * PI;
        return Ok(CovMatrix2::new(v, 0.0, v));
    }
    let n = ctx.n_alpha;
    let da = 2.0 * PI / n as f64;
    let (mut m11, mut m12, mut m22) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let a = i as f64 * da;
        let (s, c) = a.sin_cos();
        let w = ctx.sigma_sq_along(a);
        m11 += w * c * c;
        m12 += w * c * s;
        m22 += w * s * s;
    }
    Ok(CovMatrix2::new(pre * m11 * da, pre * m12 * da, pre * m22 * da))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeVector {
    pub h: [f64; 2],
    pub magnitude_coeff: f64,
}

impl EdgeVector {
    pub fn norm(&self) -> f64 {
        self.h[0].hypot(self.h[1])
    }
}

/// `4 int_0^rho t sqrt(rho^2 - t^2) f_T(t) dt` with `t = rho sin th`.
pub fn edge_coeff(kernel: &Kernel, rho: f64) -> f64 {
    memo(coeff_cache(), (kernel.kind(), rho.to_bits()), || {
        let rule = GaussLegendre::cached(256);
        4.0 * rule.integrate(0.0, 0.5 * PI, |th| {
            let (s, c) = th.sin_cos();
            rho.powi(3) * s * c * c * kernel.dtb(rho * s)
        })
    })
}

/// `H = coeff * delta_f * theta0`.
pub fn edge_vector(kernel: &Kernel, rho: f64, delta_f: f64, theta0: [f64; 2]) -> Result<EdgeVector> {
    if !(rho > 0.0) {
        return Err(SmaError::param("window radius must be positive"));
    }
    let c = edge_coeff(kernel, rho);
    Ok(EdgeVector {
        h: [c * delta_f * theta0[0], c * delta_f * theta0[1]],
        magnitude_coeff: c,
    })
}

/// Dense lower Cholesky factorization in place; returns the failing pivot.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> std::result::Result<(), usize> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

/// Factor of the field covariance over `points`, with relative diagonal
/// jitter `1e-10`.
pub fn grf_factor(ctx: &CovContext, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    let n = points.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let d = [points[i][0] - points[j][0], points[i][1] - points[j][1]];
            let v = cov_c(ctx, d);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let diag = (0..n).map(|i| a[i * n + i]).fold(0.0f64, f64::max);
    for i in 0..n {
        a[i * n + i] += 1e-10 * diag;
    }
    cholesky_in_place(&mut a, n).map_err(|pivot| SmaError::Factorization { pivot })?;
    Ok(a)
}

/// One draw of the zero-mean field with covariance `C(x_i - x_j)`, using a
/// precomputed factor.
pub fn grf_sample_with(factor: &[f64], n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, stream);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    (0..n)
        .map(|i| (0..=i).map(|k| factor[i * n + k] * z[k]).sum())
        .collect()
}

pub fn grf_sample(ctx: &CovContext, points: &[[f64; 2]], seed: u64) -> Result<Vec<f64>> {
    let f = grf_factor(ctx, points)?;
    Ok(grf_sample_with(&f, points.len(), seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{adaptive_simpson, adaptive_simpson_breaks};
    use crate::sampling::SigmaProfile;
    use proptest::prelude::*;

    fn kernel() -> Arc<Kernel> {
        Arc::new(Kernel::bspline4())
    }

    fn x0() -> [f64; 2] {
        [0.345, -0.1]
    }

    fn ctx_const() -> CovContext {
        CovContext::constant(x0(), 2.0 * PI, 3.0, kernel())
    }

    fn ctx_smooth() -> CovContext {
        let g = SamplingGrid::reference();
        let m = NoiseModel::uniform(SigmaProfile::Smooth {
            sigma: 1.5,
            angular: 0.4,
            radial: 0.8,
        });
        CovContext::from_noise(x0(), &g, &m, kernel())
    }

    #[test]
    fn c_at_zero_matches_closed_form() {
        let ctx = ctx_const();
        let want = (0.5f64).powi(2) * 2.0 * PI * 3.0 * ctx.kernel.dphi_energy();
        assert!((cov_c(&ctx, [0.0, 0.0]) - want).abs() < 1e-12);
        assert!((cov_c_panels(&ctx, [0.0, 0.0]) - want).abs() < 1e-12);
    }

    #[test]
    fn constant_sigma_is_radial() {
        let ctx = ctx_const();
        let r: f64 = 1.7;
        let v0 = cov_c(&ctx, [r, 0.0]);
        for i in 0..12 {
            let a = 0.37 * i as f64;
            let v = cov_c(&ctx, [r * a.cos(), r * a.sin()]);
            assert!((v - v0).abs() < 1e-10);
        }
    }

    #[test]
    fn trapezoid_and_panel_routes_agree() {
        for ctx in [ctx_const(), ctx_smooth()] {
            for &x in &[[0.3, 0.1], [1.5, -2.0], [3.3, 0.4], [-0.2, 4.1]] {
                let a = cov_c(&ctx, x);
                let b = cov_c_panels(&ctx, x);
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn doubling_nodes_is_converged() {
        let ctx = ctx_smooth();
        let fine = ctx.clone().with_n_alpha(4096).unwrap();
        for i in 0..10 {
            let x = [0.6 * i as f64 - 2.7, 0.45 * i as f64 - 1.9];
            assert!((cov_c(&ctx, x) - cov_c(&fine, x)).abs() < 1e-10);
        }
        assert!(ctx.clone().with_n_alpha(100).is_err());
    }

    #[test]
    fn c1_decays_like_inverse_t() {
        let ctx = ctx_const();
        let th = [1.0, 0.0];
        assert_eq!(cov_c1(&ctx, 0.0, th), cov_c(&ctx, [0.0, 0.0]));
        assert_eq!(cov_c1(&ctx, 2.5, th), cov_c(&ctx, [2.5, 0.0]));
        let c0 = cov_c(&ctx, [0.0, 0.0]);
        for t in [10.0, 20.0, 50.0, 100.0, 200.0] {
            let v = cov_c_panels(&ctx, [t, 0.0]);
            assert!((t * v).abs() < c0, "t={t} C1={v}");
        }
    }

    #[test]
    fn gamma_routes_agree() {
        let ctx = ctx_const();
        for u in [WeightKind::Linear, WeightKind::Sgn] {
            let a = gamma_sq(&ctx, u, 3.0, [1.0, 0.0]);
            let b = gamma_sq_tensor(&ctx, u, 3.0, [1.0, 0.0], 64);
            assert!(a > 0.0);
            assert!((a - b).abs() < 1e-7 * a, "{u:?}: {a} vs {b}");
        }
    }

    #[test]
    fn weight_autocorrelation_matches_direct_integral() {
        for u in [WeightKind::Linear, WeightKind::Sgn] {
            for tau in [0.0, 0.7, 2.9, 3.0, 4.4, 5.99] {
                let mut br = vec![-3.0, -tau, 0.0, 3.0 - tau, 3.0];
                br.retain(|&b: &f64| b >= -3.0);
                br.sort_by(|a, b| a.partial_cmp(b).unwrap());
                br.dedup();
                let f = |t: f64| u.eval(t, 3.0) * u.eval(t + tau, 3.0);
                let direct = adaptive_simpson_breaks(&f, &br, 1e-11);
                assert!((u.autocorrelation(tau, 3.0) - direct).abs() < 1e-6, "{u:?} {tau}");
            }
        }
    }

    #[test]
    fn constant_sigma_matrix_is_isotropic() {
        let c = cov_matrix(&ctx_const(), 3.0).unwrap();
        assert!(c.c12.abs() <= 1e-10 * c.c11);
        assert!((c.c11 - c.c22).abs() <= 1e-10 * c.c11);
        // The general angular route agrees with the closed constant case.
        let general = CovContext::custom(x0(), 2.0 * PI, kernel(), Arc::new(|_, _| 3.0));
        let g = cov_matrix(&general, 3.0).unwrap();
        assert!((g.c11 - c.c11).abs() < 1e-10 * c.c11);
        assert!(g.c12.abs() < 1e-10 * c.c11);
    }

    #[test]
    fn q_matches_naive_tensor_rule() {
        let k = Kernel::bspline4();
        let rho: f64 = 3.0;
        let rule = GaussLegendre::new(400);
        let nodes: Vec<(f64, f64)> = rule.on(-rho, rho).collect();
        let w = |t: f64| 2.0 * (rho * rho - t * t).max(0.0).sqrt();
        let mut naive = 0.0;
        for &(t, wt) in &nodes {
            for &(s, ws) in &nodes {
                naive += wt * ws * t * s * w(t) * w(s) * k.autocorr_dphi(t - s);
            }
        }
        let q = q_integral(&k, rho);
        assert!((q - naive).abs() < 1e-4 * q.abs(), "{q} vs {naive}");
    }

    #[test]
    fn edge_coefficient_against_adaptive_quadrature() {
        let k = Kernel::bspline4();
        let rho: f64 = 3.0;
        let direct = 4.0 * adaptive_simpson(&|t: f64| t * (rho * rho - t * t).max(0.0).sqrt() * k.dtb(t), 0.0, rho, 1e-12);
        let c = edge_coeff(&k, rho);
        assert!((c - direct).abs() < 1e-8, "{c} vs {direct}");
        let e = edge_vector(&k, rho, -1.0, [0.6, 0.8]).unwrap();
        assert!((e.h[0] / e.h[1] - 0.75).abs() < 1e-15);
        assert!(e.h[0] < 0.0);
        let big = edge_coeff(&k, 50.0) / 50f64.powi(3);
        assert!((big - 2.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn h_u_limits() {
        let k = Kernel::bspline4();
        // sgn / rho weight: H_u -> 1 for large rho
        let v = h_u(&k, WeightKind::Sgn, 50.0, 1.0) / 50.0;
        assert!((v - 1.0).abs() < 0.02);
        let direct = 2.0 * adaptive_simpson(&|s: f64| k.dtb(3.0 * s), 0.0, 1.0, 1e-12);
        assert!((h_u(&k, WeightKind::Sgn, 3.0, 1.0) / 3.0 - direct).abs() < 1e-9);
    }

    #[test]
    fn grf_single_point_variance() {
        let ctx = ctx_const();
        let f = grf_factor(&ctx, &[[0.0, 0.0]]).unwrap();
        let n = 100_000;
        let var: f64 = (0..n)
            .map(|r| grf_sample_with(&f, 1, 3, r)[0].powi(2))
            .sum::<f64>()
            / n as f64;
        let c0 = cov_c(&ctx, [0.0, 0.0]);
        assert!((var / c0 - 1.0).abs() < 0.02, "{var} vs {c0}");
        let pts = [[0.0, 0.0], [0.5, 0.0], [8.0, 0.0]];
        assert_eq!(grf_sample(&ctx, &pts, 5).unwrap(), grf_sample(&ctx, &pts, 5).unwrap());
    }

    #[test]
    fn grf_distant_points_are_nearly_uncorrelated() {
        let ctx = ctx_const();
        let pts = [[0.0, 0.0], [7.5, 0.0]];
        let f = grf_factor(&ctx, &pts).unwrap();
        let n = 20_000;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for r in 0..n {
            let v = grf_sample_with(&f, 2, 8, r);
            sxy += v[0] * v[1];
            sxx += v[0] * v[0];
            syy += v[1] * v[1];
        }
        let corr = sxy / (sxx * syy).sqrt();
        let want = cov_c(&ctx, [7.5, 0.0]) / cov_c(&ctx, [0.0, 0.0]);
        assert!(want.abs() < 0.05);
        assert!((corr - want).abs() < 4.0 / (n as f64).sqrt());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn c_is_even(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            for ctx in [ctx_const(), ctx_smooth()] {
                prop_assert!((cov_c(&ctx, [x, y]) - cov_c(&ctx, [-x, -y])).abs() < 1e-12);
            }
        }

        #[test]
        fn quadratic_homogeneity_in_sigma(s in 0.1f64..5.0) {
            let ctx = ctx_smooth();
            let sc = ctx.scaled(s);
            let a = cov_matrix(&ctx, 3.0).unwrap();
            let b = cov_matrix(&sc, 3.0).unwrap();
            prop_assert!((b.c11 - s * s * a.c11).abs() < 1e-12 * b.c11.abs().max(1.0));
            let g1 = gamma_sq(&ctx, WeightKind::Sgn, 3.0, [1.0, 0.0]);
            let g2 = gamma_sq(&sc, WeightKind::Sgn, 3.0, [1.0, 0.0]);
            prop_assert!((g2 - s * s * g1).abs() < 1e-12 * g2.abs().max(1.0));
        }
    }
}
