//! Dense polynomials and piecewise polynomials in local coordinates.
//!
//! Each piece stores its polynomial in the variable `u = t - center`, which
//! keeps the coefficients small for the unit-length pieces used by the
//! interpolation kernels.

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    /// Coefficients, lowest degree first.
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Poly { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Poly { coeffs: vec![c] }
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1 && *self.coeffs.last().unwrap() == 0.0 {
            self.coeffs.pop();
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(0.0);
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, &c)| n as f64 * c)
            .collect();
        Poly::new(coeffs)
    }

    /// Antiderivative vanishing at `u = 0`.
    pub fn antiderivative(&self) -> Poly {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(0.0);
        coeffs.extend(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(n, &c)| c / (n as f64 + 1.0)),
        );
        Poly::new(coeffs)
    }

    /// Re-expand `p(u)` as a polynomial in `v = u - shift`, i.e. returns `q` with
    /// `q(v) = p(v + shift)`.
    pub fn shifted(&self, shift: f64) -> Poly {
        // Horner-style Taylor shift.
        let n = self.coeffs.len();
        let mut c = self.coeffs.clone();
        for i in 0..n {
            for j in (i..n - 1).rev() {
                c[j] += shift * c[j + 1];
            }
        }
        Poly::new(c)
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n)
            .map(|i| self.coeffs.get(i).unwrap_or(&0.0) + other.coeffs.get(i).unwrap_or(&0.0))
            .collect();
        Poly::new(coeffs)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Poly::new(coeffs)
    }

    /// Least-degree interpolant through `(u_i, y_i)` by Newton divided differences.
    pub fn interpolate(us: &[f64], ys: &[f64]) -> Poly {
        assert_eq!(us.len(), ys.len());
        let n = us.len();
        let mut dd = ys.to_vec();
        for level in 1..n {
            for i in (level..n).rev() {
                dd[i] = (dd[i] - dd[i - 1]) / (us[i] - us[i - level]);
            }
        }
        // Expand Newton form into monomials.
        let mut result = Poly::constant(dd[n - 1]);
        for i in (0..n - 1).rev() {
            result = result.mul(&Poly::new(vec![-us[i], 1.0]));
            result.coeffs[0] += dd[i];
        }
        Poly::new(result.coeffs)
    }
}

/// One polynomial piece supported on `[lo, hi]`, evaluated in `u = t - center`.
#[derive(Debug, Clone)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub poly: Poly,
}

impl Piece {
    pub fn new(lo: f64, hi: f64, poly: Poly) -> Self {
        Piece {
            lo,
            hi,
            center: 0.5 * (lo + hi),
            poly,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.poly.eval(t - self.center)
    }
}

/// Contiguous piecewise polynomial, zero outside `[pieces[0].lo, pieces[last].hi]`.
#[derive(Debug, Clone)]
pub struct PiecewisePoly {
    pub pieces: Vec<Piece>,
    /// Value returned to the left of the first piece.
    pub left_value: f64,
    /// Value returned to the right of the last piece.
    pub right_value: f64,
}

impl PiecewisePoly {
    pub fn new(pieces: Vec<Piece>) -> Self {
        PiecewisePoly {
            pieces,
            left_value: 0.0,
            right_value: 0.0,
        }
    }

    pub fn lo(&self) -> f64 {
        self.pieces.first().map_or(0.0, |p| p.lo)
    }

    pub fn hi(&self) -> f64 {
        self.pieces.last().map_or(0.0, |p| p.hi)
    }

    pub fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.pieces.iter().map(|p| p.lo).collect();
        if let Some(p) = self.pieces.last() {
            k.push(p.hi);
        }
        k
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let lo = self.lo();
        if t < lo {
            return self.left_value;
        }
        if t > self.hi() {
            return self.right_value;
        }
        // Pieces are unit-width in every shipped kernel, but fall back to a
        // search if they are not.
        let first = &self.pieces[0];
        let w = first.hi - first.lo;
        let mut idx = ((t - lo) / w) as usize;
        if idx >= self.pieces.len() {
            idx = self.pieces.len() - 1;
        }
        let piece = &self.pieces[idx];
        if t >= piece.lo && t <= piece.hi {
            return piece.eval(t);
        }
        self.pieces
            .iter()
            .find(|p| t >= p.lo && t <= p.hi)
            .map_or(0.0, |p| p.eval(t))
    }

    pub fn derivative(&self) -> PiecewisePoly {
        PiecewisePoly::new(
            self.pieces
                .iter()
                .map(|p| Piece::new(p.lo, p.hi, p.poly.derivative()))
                .collect(),
        )
    }

    /// Running integral `∫_{lo}^t`, continuous, with `offset` added.
    pub fn cumulative(&self, offset: f64) -> PiecewisePoly {
        let mut acc = offset;
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            let anti = p.poly.antiderivative();
            let base = anti.eval(p.lo - p.center);
            let poly = anti.add(&Poly::constant(acc - base));
            acc = poly.eval(p.hi - p.center);
            pieces.push(Piece {
                lo: p.lo,
                hi: p.hi,
                center: p.center,
                poly,
            });
        }
        PiecewisePoly {
            pieces,
            left_value: offset,
            right_value: acc,
        }
    }

    /// Exact `∫ t^n f(t) dt` over the support.
    pub fn moment(&self, n: u32) -> f64 {
        self.pieces
            .iter()
            .map(|p| {
                let mono = monomial_about(n, p.center);
                let anti = p.poly.mul(&mono).antiderivative();
                anti.eval(p.hi - p.center) - anti.eval(p.lo - p.center)
            })
            .sum()
    }
}

/// `t^n` written as a polynomial in `u = t - c`.
fn monomial_about(n: u32, c: f64) -> Poly {
    let mut coeffs = vec![0.0; n as usize + 1];
    coeffs[n as usize] = 1.0;
    Poly::new(coeffs).shifted(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_matches_direct_evaluation() {
        let p = Poly::new(vec![1.0, -2.0, 0.5, 3.0]);
        let q = p.shifted(0.75);
        for &v in &[-1.0, 0.0, 0.3, 2.0] {
            assert!((q.eval(v) - p.eval(v + 0.75)).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_recovers_cubic() {
        let p = Poly::new(vec![0.2, -1.0, 0.0, 4.0]);
        let us = [-0.5, -0.1, 0.2, 0.5];
        let ys: Vec<f64> = us.iter().map(|&u| p.eval(u)).collect();
        let q = Poly::interpolate(&us, &ys);
        for (a, b) in p.coeffs.iter().zip(&q.coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cumulative_is_continuous() {
        let pp = PiecewisePoly::new(vec![
            Piece::new(0.0, 1.0, Poly::new(vec![1.0, 1.0])),
            Piece::new(1.0, 2.0, Poly::new(vec![2.0, -3.0, 1.0])),
        ]);
        let c = pp.cumulative(0.0);
        assert!((c.pieces[0].eval(1.0) - c.pieces[1].eval(1.0)).abs() < 1e-14);
        // ∫_0^1 (1 + (t - 1/2)) dt = 1
        assert!((c.eval(1.0) - 1.0).abs() < 1e-14);
    }
}
