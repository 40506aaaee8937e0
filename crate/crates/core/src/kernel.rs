//! Interpolation kernels and the derived functions used by the reconstruction
//! and covariance formulas: `phi'`, the Hilbert transform `H phi'`, the
//! transition profile `f_T`, and the autocorrelation `phi' * phi'`.
//!
//! Everything is built symbolically from the polynomial pieces of `phi` at
//! construction. Evaluation afterwards is a branch per piece.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};
use crate::poly::{Piece, PiecewisePoly, Poly};
use crate::quadrature::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Bspline4,
    Bspline3,
    Trapezoid,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Bspline4 => "bspline4",
            KernelKind::Bspline3 => "bspline3",
            KernelKind::Trapezoid => "trapezoid",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = SmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bspline4" => Ok(KernelKind::Bspline4),
            "bspline3" => Ok(KernelKind::Bspline3),
            "trapezoid" => Ok(KernelKind::Trapezoid),
            other => Err(SmaError::param(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Log term `q(t - x) ln|t - x|` attached to a knot `x`.
#[derive(Debug, Clone)]
struct KnotLog {
    knot: f64,
    coeff: Poly,
}

/// Polynomial remainder `D(t - c)` of one piece.
#[derive(Debug, Clone)]
struct PieceRemainder {
    center: f64,
    poly: Poly,
}

#[derive(Debug, Clone)]
pub struct Kernel {
    kind: KernelKind,
    phi: PiecewisePoly,
    dphi: PiecewisePoly,
    cdf: PiecewisePoly,
    autocorr: PiecewisePoly,
    support: f64,
    smoothness: u32,
    knot_logs: Vec<KnotLog>,
    remainders: Vec<PieceRemainder>,
    /// Coefficients of the far-field series in `1/t^2`, already divided by `-pi`.
    far_coeffs: Vec<f64>,
    far_radius: f64,
    hard_cutoff: Option<f64>,
}

impl Kernel {
    pub fn new(kind: KernelKind) -> Self {
        let (pieces, smoothness) = match kind {
            KernelKind::Bspline4 => (bspline_pieces(4), 3),
            KernelKind::Bspline3 => (bspline_pieces(3), 2),
            KernelKind::Trapezoid => (trapezoid_pieces(), 0),
        };
        Self::from_pieces(kind, pieces, smoothness)
    }

    pub fn bspline4() -> Self {
        Self::new(KernelKind::Bspline4)
    }

    fn from_pieces(kind: KernelKind, pieces: Vec<Piece>, smoothness: u32) -> Self {
        let phi = PiecewisePoly::new(pieces);
        let support = phi.hi().max(-phi.lo());
        let dphi = phi.derivative();
        let mut cdf = phi.cumulative(0.0);
        cdf.right_value = 1.0;
        let autocorr = autocorrelation(&dphi);
        let (knot_logs, remainders) = hilbert_terms(&dphi);
        // H phi'(t) = -(1/pi) sum_{n>=1} n mu_{n-1} / t^{n+1}; only even n
        // survive for an even kernel, giving a series in 1/t^2.
        let far_coeffs = (0..24)
            .map(|k| {
                let n = 2 * k + 1;
                -(n as f64) * phi.moment(n as u32 - 1) / PI
            })
            .collect();
        Kernel {
            kind,
            phi,
            dphi,
            cdf,
            autocorr,
            support,
            smoothness,
            knot_logs,
            remainders,
            far_coeffs,
            far_radius: 3.0 * support,
            hard_cutoff: None,
        }
    }

    /// Sets a hard cutoff beyond which `H phi'` is replaced by zero.
    pub fn with_hilbert_truncation(mut self, cutoff: Option<f64>) -> Self {
        self.hard_cutoff = cutoff;
        self
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn support_radius(&self) -> f64 {
        self.support
    }

    pub fn smoothness_order(&self) -> u32 {
        self.smoothness
    }

    pub fn hilbert_truncation(&self) -> Option<f64> {
        self.hard_cutoff
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.phi.pieces
    }

    pub fn knots(&self) -> Vec<f64> {
        self.phi.knots()
    }

    #[inline]
    pub fn phi(&self, t: f64) -> f64 {
        self.phi.eval(t)
    }

    #[inline]
    pub fn dphi(&self, t: f64) -> f64 {
        self.dphi.eval(t)
    }

    /// `f_T(t) = int_{-inf}^t phi - 1/2`.
    #[inline]
    pub fn dtb(&self, t: f64) -> f64 {
        if t >= self.support {
            0.5
        } else if t <= -self.support {
            -0.5
        } else {
            self.cdf.eval(t) - 0.5
        }
    }

    /// `(phi' * phi')(t) = int phi'(s) phi'(s + t) ds`.
    #[inline]
    pub fn autocorr_dphi(&self, t: f64) -> f64 {
        self.autocorr.eval(t)
    }

    pub fn autocorr_support(&self) -> f64 {
        self.autocorr.hi()
    }

    pub fn autocorr_pieces(&self) -> &PiecewisePoly {
        &self.autocorr
    }

    /// `int (phi')^2`.
    pub fn dphi_energy(&self) -> f64 {
        self.autocorr.eval(0.0)
    }

    /// Exact moment `int t^n phi(t) dt`.
    pub fn moment(&self, n: u32) -> f64 {
        self.phi.moment(n)
    }

    /// Principal-value Hilbert transform `(1/pi) p.v. int phi'(s) / (t - s) ds`.
    #[inline]
    pub fn hilbert_dphi(&self, t: f64) -> f64 {
        let a = t.abs();
        if let Some(cut) = self.hard_cutoff {
            if a > cut {
                return 0.0;
            }
        }
        if a > self.far_radius {
            self.hilbert_far(a)
        } else {
            self.hilbert_near(a)
        }
    }

    /// Closed-form value, valid for every `t`.
    pub fn hilbert_near(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for kl in &self.knot_logs {
            let v = t - kl.knot;
            if v != 0.0 {
                acc += kl.coeff.eval(v) * v.abs().ln();
            }
        }
        for r in &self.remainders {
            acc -= r.poly.eval(t - r.center);
        }
        acc / PI
    }

    /// Moment series, valid for `|t| > support`.
    pub fn hilbert_far(&self, t: f64) -> f64 {
        let w = 1.0 / (t * t);
        let mut acc = 0.0;
        for &c in self.far_coeffs.iter().rev() {
            acc = acc * w + c;
        }
        acc * w
    }

    /// Checks normalization, order-1 exactness and evenness.
    pub fn validate(&self) -> Result<()> {
        let mass = self.phi.moment(0);
        if (mass - 1.0).abs() > 1e-12 {
            return Err(SmaError::param(format!("kernel mass {mass} is not 1")));
        }
        let reach = self.support.ceil() as i64 + 1;
        for i in 0..64 {
            let t = -0.5 + i as f64 / 63.0;
            let (mut s0, mut s1) = (0.0, 0.0);
            for k in -reach..=reach {
                let v = self.phi(t - k as f64);
                s0 += v;
                s1 += k as f64 * v;
            }
            if (s0 - 1.0).abs() > 1e-10 || (s1 - t).abs() > 1e-10 {
                return Err(SmaError::param(format!(
                    "kernel is not exact to order 1 at t={t}: sum={s0}, first moment={s1}"
                )));
            }
        }
        for i in 0..50 {
            let t = 0.1 * i as f64 + 0.013;
            if (self.phi(t) - self.phi(-t)).abs() > 1e-14 {
                return Err(SmaError::param("kernel is not even"));
            }
        }
        Ok(())
    }
}

/// Centered cardinal B-spline of degree `n` on unit pieces, using the
/// truncated-power form `(1/n!) sum_k (-1)^k C(n+1,k) (t + (n+1)/2 - k)_+^n`.
fn bspline_pieces(n: usize) -> Vec<Piece> {
    let half = (n as f64 + 1.0) / 2.0;
    let fact: f64 = (1..=n).map(|i| i as f64).product();
    let mut pieces: Vec<Piece> = Vec::with_capacity(n + 1);
    for m in 0..=n {
        let lo = -half + m as f64;
        let hi = lo + 1.0;
        let center = 0.5 * (lo + hi);
        if center > 0.0 {
            // Mirror the left half: fewer truncated powers, less cancellation,
            // and exact evenness.
            let src = &pieces[n - m];
            let coeffs = src
                .poly
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| if i % 2 == 0 { *c } else { -c })
                .collect();
            pieces.push(Piece::new(lo, hi, Poly::new(coeffs)));
            continue;
        }
        let mut poly = Poly::zero();
        for k in 0..=m {
            let knot = k as f64 - half;
            let mut mono = vec![0.0; n + 1];
            mono[n] = 1.0;
            // (t - knot)^n as a polynomial in u = t - center
            let term = Poly::new(mono).shifted(center - knot);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            poly = poly.add(&term.scale(sign * binomial(n + 1, k) / fact));
        }
        pieces.push(Piece::new(lo, hi, poly));
    }
    pieces
}

/// Box of width 1 convolved with a box of width 2 and height 1/2.
fn trapezoid_pieces() -> Vec<Piece> {
    vec![
        // (1.5 + t)/2 on [-1.5, -0.5], u = t + 1
        Piece::new(-1.5, -0.5, Poly::new(vec![0.25, 0.5])),
        Piece::new(-0.5, 0.5, Poly::constant(0.5)),
        // (1.5 - t)/2 on [0.5, 1.5], u = t - 1
        Piece::new(0.5, 1.5, Poly::new(vec![0.25, -0.5])),
    ]
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Decomposes `p.v. int f(s)/(t-s) ds` for a piecewise polynomial `f`.
///
/// On a piece `[c-h, c+h]` with `f(s) = p(u)`, `u = s - c`, `tau = t - c`:
/// `int p(u)/(tau-u) du = p(tau) ln|(tau+h)/(tau-h)| - D(tau)` with
/// `D(tau) = sum_r d_r tau^r`, `d_r = sum_{n>r} c_n M_{n-1-r}`,
/// `M_m = int_{-h}^{h} u^m du`. Log terms sharing a knot are merged.
fn hilbert_terms(f: &PiecewisePoly) -> (Vec<KnotLog>, Vec<PieceRemainder>) {
    let mut remainders = Vec::new();
    for p in &f.pieces {
        let h = 0.5 * (p.hi - p.lo);
        let c = &p.poly.coeffs;
        let moments: Vec<f64> = (0..c.len())
            .map(|m| {
                if m % 2 == 1 {
                    0.0
                } else {
                    2.0 * h.powi(m as i32 + 1) / (m as f64 + 1.0)
                }
            })
            .collect();
        let d: Vec<f64> = (0..c.len().max(1))
            .map(|r| ((r + 1)..c.len()).map(|n| c[n] * moments[n - 1 - r]).sum())
            .collect();
        remainders.push(PieceRemainder {
            center: p.center,
            poly: Poly::new(d),
        });
    }
    let knots = f.knots();
    let mut logs = Vec::with_capacity(knots.len());
    for (i, &x) in knots.iter().enumerate() {
        // +p_right(t) ln|t - x| from the piece starting at x,
        // -p_left(t) ln|t - x| from the piece ending at x.
        let mut coeff = Poly::zero();
        if i < f.pieces.len() {
            let right = &f.pieces[i];
            coeff = coeff.add(&right.poly.shifted(x - right.center));
        }
        if i > 0 {
            let left = &f.pieces[i - 1];
            coeff = coeff.sub(&left.poly.shifted(x - left.center));
        }
        // Continuity of f makes the constant term vanish analytically.
        let scale = coeff.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let mut cs = coeff.coeffs.clone();
        if cs[0].abs() < 1e-13 * scale.max(1.0) {
            cs[0] = 0.0;
        }
        logs.push(KnotLog {
            knot: x,
            coeff: Poly::new(cs),
        });
    }
    (logs, remainders)
}

/// `A(t) = int g(s) g(s+t) ds` rebuilt exactly on unit pieces.
///
/// The breakpoints of `A` are differences of knots of `g`, which are integers
/// for every shipped kernel. On each unit interval `A` is a polynomial of
/// degree at most `2 deg(g) + 1`; it is recovered by interpolation at
/// Chebyshev points of values computed exactly with Gauss–Legendre.
fn autocorrelation(g: &PiecewisePoly) -> PiecewisePoly {
    let reach = (g.hi() - g.lo()).round() as i64;
    let deg = g.pieces.iter().map(|p| p.poly.degree()).max().unwrap_or(0);
    let npts = 2 * deg + 2;
    let rule = GaussLegendre::cached(deg + 2);
    let knots = g.knots();
    let value = |t: f64| -> f64 {
        let mut breaks: Vec<f64> = knots.iter().copied().chain(knots.iter().map(|k| k - t)).collect();
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let lo = g.lo().max(g.lo() - t);
        let hi = g.hi().min(g.hi() - t);
        let mut acc = 0.0;
        for w in breaks.windows(2) {
            let (a, b) = (w[0].max(lo), w[1].min(hi));
            if b > a {
                acc += rule.integrate(a, b, |s| g.eval(s) * g.eval(s + t));
            }
        }
        acc
    };
    let mut pieces = Vec::new();
    for m in -reach..reach {
        let lo = m as f64;
        let hi = lo + 1.0;
        let us: Vec<f64> = (0..npts)
            .map(|i| 0.5 * ((2 * i + 1) as f64 * PI / (2 * npts) as f64).cos())
            .collect();
        let ys: Vec<f64> = us.iter().map(|&u| value(lo + 0.5 + u)).collect();
        pieces.push(Piece::new(lo, hi, Poly::interpolate(&us, &ys)));
    }
    PiecewisePoly::new(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{adaptive_simpson_breaks, composite_uniform};

    fn all() -> Vec<Kernel> {
        vec![
            Kernel::new(KernelKind::Bspline4),
            Kernel::new(KernelKind::Bspline3),
            Kernel::new(KernelKind::Trapezoid),
        ]
    }

    #[test]
    fn shipped_kernels_validate() {
        for k in all() {
            k.validate().unwrap();
        }
    }

    #[test]
    fn zero_outside_support() {
        for k in all() {
            let s = k.support_radius();
            assert_eq!(k.phi(s + 0.01), 0.0);
            assert_eq!(k.phi(-s - 3.0), 0.0);
            assert_eq!(k.dphi(s + 0.5), 0.0);
        }
    }

    #[test]
    fn bspline4_values() {
        // B4(0) = 115/192, B4(1) = 19/96, B4(2) = 1/384
        let k = Kernel::bspline4();
        assert!((k.phi(0.0) - 115.0 / 192.0).abs() < 1e-15);
        assert!((k.phi(1.0) - 19.0 / 96.0).abs() < 1e-15);
        assert!((k.phi(2.0) - 1.0 / 384.0).abs() < 1e-15);
        assert_eq!(k.smoothness_order(), 3);
    }

    #[test]
    fn mass_by_dense_quadrature() {
        for k in all() {
            let s = k.support_radius();
            // 2000 midpoint panels per piece keep the knots on panel edges
            let m = composite_uniform(-s, s, 2000 * k.pieces().len(), 1, |t| k.phi(t));
            assert!((m - 1.0).abs() < 1e-10, "{} mass {m}", k.kind().name());
        }
    }

    #[test]
    fn dtb_limits_and_symmetry() {
        for k in all() {
            let s = k.support_radius();
            assert!(k.dtb(0.0).abs() < 1e-14);
            assert_eq!(k.dtb(s), 0.5);
            assert_eq!(k.dtb(s + 4.0), 0.5);
            assert!((k.dtb(-s) + 0.5).abs() < 1e-15);
            assert_eq!(k.dtb(-s - 1.0), -0.5);
            let mut prev = -0.5;
            for i in 0..=500 {
                let v = k.dtb(-s + 2.0 * s * i as f64 / 500.0);
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
    }

    /// `p.v. int g(s)/(t-s) ds` by subtracting the singularity and adaptive
    /// Simpson on the remainder.
    fn pv_oracle(k: &Kernel, t: f64) -> f64 {
        let s = k.support_radius();
        let g0 = k.dphi(t);
        let f = |x: f64| {
            let d = t - x;
            if d.abs() < 1e-300 {
                // limit of (g(x) - g(t))/(t - x) is -g'(t); its value at a
                // single node does not matter
                0.0
            } else {
                (k.dphi(x) - g0) / d
            }
        };
        let mut breaks = k.knots();
        if t > -s && t < s {
            breaks.push(t);
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        let regular = adaptive_simpson_breaks(&f, &breaks, 1e-13);
        let log = if g0 != 0.0 {
            g0 * ((t + s).abs().ln() - (t - s).abs().ln())
        } else {
            0.0
        };
        (regular + log) / PI
    }

    #[test]
    fn hilbert_matches_pv_oracle() {
        for k in [Kernel::bspline4(), Kernel::new(KernelKind::Bspline3)] {
            for i in 0..50 {
                let t = -10.0 + 20.0 * (i as f64 + 0.37) / 50.0;
                let got = k.hilbert_dphi(t);
                let want = pv_oracle(&k, t);
                assert!((got - want).abs() < 1e-8, "{} t={t}: {got} vs {want}", k.kind().name());
            }
        }
    }

    #[test]
    fn hilbert_continuous_at_knots_and_series_switch() {
        let k = Kernel::bspline4();
        for x in k.knots() {
            let a = k.hilbert_near(x);
            let b = k.hilbert_near(x + 1e-9);
            assert!((a - b).abs() < 1e-7, "knot {x}: {a} vs {b}");
        }
        let r = 3.0 * k.support_radius();
        // the closed form loses digits to cancellation as t grows
        assert!((k.hilbert_near(r) - k.hilbert_far(r)).abs() < 1e-12);
        assert!((k.hilbert_near(r + 2.0) - k.hilbert_far(r + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn hilbert_even_and_decays_like_inverse_square() {
        let k = Kernel::bspline4();
        for i in 0..40 {
            let t = 0.3 * i as f64 + 0.05;
            assert!((k.hilbert_dphi(t) - k.hilbert_dphi(-t)).abs() < 1e-12);
        }
        let t = 200.0;
        assert!((t * t * k.hilbert_dphi(t) + 1.0 / PI).abs() < 1e-3);
    }

    #[test]
    fn hard_cutoff_zeroes_tail() {
        let k = Kernel::bspline4().with_hilbert_truncation(Some(64.0));
        assert_eq!(k.hilbert_dphi(64.5), 0.0);
        assert!(k.hilbert_dphi(63.0) < 0.0);
    }

    #[test]
    fn autocorrelation_matches_direct_correlation() {
        for k in [Kernel::bspline4(), Kernel::new(KernelKind::Bspline3)] {
            let s = k.support_radius();
            for i in 0..50 {
                let t = -2.0 * s + 4.0 * s * (i as f64 + 0.5) / 50.0;
                let direct = composite_uniform(-s, s, 400, 8, |x| k.dphi(x) * k.dphi(x + t));
                assert!((k.autocorr_dphi(t) - direct).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn autocorrelation_properties() {
        for k in all() {
            let a = k.autocorr_pieces();
            assert!(k.dphi_energy() > 0.0);
            assert!(a.moment(0).abs() < 1e-12, "{}", a.moment(0));
            // int t^2 A = -2 (int t phi')^2 ... = -2
            assert!((a.moment(2) + 2.0).abs() < 1e-10);
            for i in 0..30 {
                let t = 0.17 * i as f64;
                assert!((k.autocorr_dphi(t) - k.autocorr_dphi(-t)).abs() < 1e-13);
            }
            assert_eq!(k.autocorr_dphi(2.0 * k.support_radius() + 0.1), 0.0);
        }
        let k = Kernel::bspline4();
        assert!((k.dphi_energy() - 0.486_111_111_111_111).abs() < 1e-9);
    }
}
