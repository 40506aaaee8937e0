//! Special functions: normal and chi-squared distributions, the noncentral
//! chi-squared CDF with two degrees of freedom, and the modified Bessel
//! function `I0`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse standard normal CDF (Acklam's rational approximation, then two
/// Halley steps against `erfc`).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let plow = 0.02425;
    let mut x = if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        // Work on whichever tail keeps the residual well conditioned.
        let e = if x < 0.0 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - normal_sf(x)
        };
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// CDF of the chi-squared distribution with one degree of freedom.
pub fn chi2_1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        libm::erf((0.5 * x).sqrt())
    }
}

/// Quantile of chi-squared(1): returns `c` with `chi2_1_cdf(c) = p`.
pub fn chi2_1_quantile(p: f64) -> f64 {
    let z = normal_quantile(0.5 + 0.5 * p);
    z * z
}

/// CDF of chi-squared(2): `1 - exp(-x/2)`.
pub fn chi2_2_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-0.5 * x).exp_m1()
    }
}

fn ln_factorial(k: u64) -> f64 {
    libm::lgamma(k as f64 + 1.0)
}

/// `ln P(N = k)` for `N ~ Poisson(lambda)`.
pub fn poisson_ln_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lambda + k as f64 * lambda.ln() - ln_factorial(k)
}

/// Survival function of the noncentral chi-squared distribution with two
/// degrees of freedom: `P(chi2_2(mu) > x)`.
///
/// Uses the Poisson mixture `sum_k Pois(k; mu/2) P(chi2_{2+2k} > x)` together
/// with `P(chi2_{2+2k} > x) = sum_{i<=k} Pois(i; x/2)`. Terms are accumulated
/// until the neglected Poisson mass is below `1e-12`.
pub fn noncentral_chi2_2_sf(x: f64, mu: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let lam = 0.5 * mu;
    let y = 0.5 * x;
    if lam == 0.0 {
        return (-y).exp();
    }
    // Window of Poisson(lam) indices carrying all but ~1e-13 of the mass.
    let spread = 12.0 * lam.sqrt() + 30.0;
    let k_lo = (lam - spread).max(0.0).floor() as u64;
    let k_hi = (lam + spread).ceil() as u64;
    // Central chi-squared tail for the first index, then recurse upward.
    let mut tail = central_even_sf(k_lo, y);
    let mut total = 0.0;
    let mut weight_seen = 0.0;
    for k in k_lo..=k_hi {
        if k > k_lo {
            tail += poisson_ln_pmf(k, y).exp();
        }
        let w = poisson_ln_pmf(k, lam).exp();
        total += w * tail.min(1.0);
        weight_seen += w;
        if k as f64 > lam && 1.0 - weight_seen < 1e-13 {
            break;
        }
    }
    // The window holds all but ~1e-13 of the mass; dividing by the summed
    // weights cancels the rounding of the log-pmf at large lam.
    (total / weight_seen).clamp(0.0, 1.0)
}

/// `P(chi2_{2+2k} > 2y) = sum_{i=0}^{k} Pois(i; y)`.
fn central_even_sf(k: u64, y: f64) -> f64 {
    if k as f64 > y + 40.0 * y.sqrt() + 60.0 {
        return 1.0;
    }
    // Sum in log space around the mode to avoid underflow for large y.
    (0..=k).map(|i| poisson_ln_pmf(i, y).exp()).sum::<f64>().min(1.0)
}

/// `P(chi2_2(mu) <= x)`.
pub fn noncentral_chi2_2_cdf(x: f64, mu: f64) -> f64 {
    1.0 - noncentral_chi2_2_sf(x, mu)
}

/// Exponentially scaled modified Bessel function, `exp(-|x|) I0(x)`.
pub fn bessel_i0e(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 20.0 {
        let q = 0.25 * ax * ax;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum * (-ax).exp()
    } else {
        // Asymptotic expansion, terms prod (2j-1)^2 / (k! (8x)^k).
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            let kf = k as f64;
            let next = term * (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * ax);
            if next.abs() > term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 * sum {
                break;
            }
        }
        sum / (2.0 * PI * ax).sqrt()
    }
}

/// Rice density of `|X|`, `X ~ N(h, s^2 I_2)` with `|h| = amp`.
pub fn rice_pdf(t: f64, amp: f64, s: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let s2 = s * s;
    let z = t * amp / s2;
    // exp(-(t^2+a^2)/2s^2) I0(z) = exp(-(t-a)^2/2s^2) i0e(z)
    t / s2 * (-(t - amp).powi(2) / (2.0 * s2)).exp() * bessel_i0e(z)
}

/// Density of the polar angle of `X ~ N(h, s^2 I_2)` at angular distance
/// `dtheta` from the direction of `h`, with `k = |h| / s`.
pub fn projected_normal_angle_pdf(dtheta: f64, k: f64) -> f64 {
    let a = k * dtheta.cos();
    let b = k * dtheta.sin();
    ((-0.5 * k * k).exp() + a * (2.0 * PI).sqrt() * (-0.5 * b * b).exp() * normal_cdf(a))
        / (2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 1e-4, 0.025, 0.3, 0.5, 0.8, 0.975, 1.0 - 1e-6] {
            let x = normal_quantile(p);
            let back = normal_cdf(x);
            assert!((back - p).abs() < 1e-14 * p.max(1e-3) * 10.0, "p={p} back={back}");
        }
    }

    #[test]
    fn chi2_1_quantile_at_95_percent() {
        assert!((chi2_1_quantile(0.95) - 3.841_458_820_694_124).abs() < 1e-10);
    }

    #[test]
    fn central_case_of_noncentral_chi2() {
        for &x in &[0.1, 1.0, 5.991, 20.0] {
            let got = noncentral_chi2_2_cdf(x, 0.0);
            assert!((got - chi2_2_cdf(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn noncentral_chi2_large_mu_does_not_underflow() {
        let sf = noncentral_chi2_2_sf(5.99, 2000.0);
        assert!((sf - 1.0).abs() < 1e-12);
        let sf = noncentral_chi2_2_sf(2600.0, 2000.0);
        assert!(sf > 0.0 && sf < 1e-6);
    }

    #[test]
    fn bessel_i0e_matches_reference_values() {
        assert!((bessel_i0e(1.0) * 1f64.exp() - 1.266_065_877_752_008_2).abs() < 1e-14);
        for (x, want) in [
            (3.7, 0.216_049_441_672_973_7),
            (20.0, 0.089_780_311_884_826),
            (25.0, 0.080_196_773_547_436_69),
            (30.0, 0.073_145_946_482_237_3),
        ] {
            assert!((bessel_i0e(x) / want - 1.0).abs() < 1e-13, "x={x}");
        }
        // continuity across the branch switch
        let lo = bessel_i0e(20.0 - 1e-12);
        let hi = bessel_i0e(20.0 + 1e-12);
        assert!((lo - hi).abs() < 1e-13);
    }
}
