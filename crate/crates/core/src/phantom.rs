//! Piecewise-constant disk phantoms with analytic Radon transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

impl Disk {
    pub fn new(center: [f64; 2], radius: f64, amplitude: f64) -> Self {
        Disk {
            center,
            radius,
            amplitude,
        }
    }

    fn contains(&self, x: [f64; 2]) -> bool {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Signed distance of `x` from the boundary circle.
    fn boundary_offset(&self, x: [f64; 2]) -> f64 {
        (x[0] - self.center[0]).hypot(x[1] - self.center[1]) - self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub disks: Vec<Disk>,
    /// Support radius `P`.
    pub support: f64,
}

/// Boundary point with outward normal and jump `lim f(x0 + t n) - f(x0 - t n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePoint {
    pub x0: [f64; 2],
    pub theta0: [f64; 2],
    pub delta_f: f64,
}

impl EdgePoint {
    pub fn normal_angle(&self) -> f64 {
        self.theta0[1].atan2(self.theta0[0])
    }

    /// Same point with the normal reversed (and the jump negated).
    pub fn flipped(&self) -> EdgePoint {
        EdgePoint {
            x0: self.x0,
            theta0: [-self.theta0[0], -self.theta0[1]],
            delta_f: -self.delta_f,
        }
    }
}

impl Phantom {
    pub fn new(disks: Vec<Disk>, support: f64) -> Result<Self> {
        if !(support > 0.0) {
            return Err(SmaError::param(format!("support radius P={support} must be positive")));
        }
        for (i, d) in disks.iter().enumerate() {
            if !(d.radius > 0.0) {
                return Err(SmaError::param(format!("disk {i}: radius {} must be positive", d.radius)));
            }
            let reach = d.center[0].hypot(d.center[1]) + d.radius;
            if reach >= support {
                return Err(SmaError::Support(format!(
                    "disk {i} reaches |x| = {reach}, outside the support radius {support}"
                )));
            }
        }
        Ok(Phantom { disks, support })
    }

    pub fn empty(support: f64) -> Result<Self> {
        Self::new(Vec::new(), support)
    }

    /// The single-disk test object used throughout the experiments.
    pub fn reference_disk() -> Self {
        Phantom {
            disks: vec![Disk::new([0.0, -0.1], 0.345, 1.0)],
            support: 1.0,
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.disks
            .iter()
            .filter(|d| d.contains(x))
            .map(|d| d.amplitude)
            .sum()
    }

    /// Line integral over `{x : (cos a, sin a) . x = p}`.
    pub fn radon(&self, alpha: f64, p: f64) -> f64 {
        let (s, c) = alpha.sin_cos();
        self.radon_dir([c, s], p)
    }

    #[inline]
    pub fn radon_dir(&self, dir: [f64; 2], p: f64) -> f64 {
        let mut acc = 0.0;
        for disk in &self.disks {
            let d = p - (dir[0] * disk.center[0] + dir[1] * disk.center[1]);
            let r2 = disk.radius * disk.radius - d * d;
            if r2 > 0.0 {
                acc += disk.amplitude * 2.0 * r2.sqrt();
            }
        }
        acc
    }

    /// Point at `polar_angle` on the boundary of disk `index`.
    pub fn boundary_point(&self, index: usize, polar_angle: f64) -> Result<EdgePoint> {
        let disk = self
            .disks
            .get(index)
            .ok_or_else(|| SmaError::param(format!("no disk with index {index}")))?;
        let (s, c) = polar_angle.sin_cos();
        let x0 = [disk.center[0] + disk.radius * c, disk.center[1] + disk.radius * s];
        for (j, other) in self.disks.iter().enumerate() {
            if j != index && other.boundary_offset(x0).abs() < 1e-12 {
                return Err(SmaError::AmbiguousEdge(format!(
                    "boundary point of disk {index} also lies on disk {j}"
                )));
            }
        }
        Ok(EdgePoint {
            x0,
            theta0: [c, s],
            delta_f: -disk.amplitude,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RationalProximity {
    pub value: f64,
    pub numerator: i64,
    pub denominator: i64,
    /// `q^2 |x - p/q|` minimised over `q <= max_denominator`.
    pub weighted_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub radial: RationalProximity,
    pub tangential: RationalProximity,
    pub curvature_nonzero: bool,
    pub inside_support: bool,
    pub sigma_nonzero: bool,
    pub verdict: Verdict,
    pub messages: Vec<String>,
}

pub const RATIONAL_DENOMINATOR_LIMIT: i64 = 100;
pub const RATIONAL_WARN_THRESHOLD: f64 = 1e-3;

/// Closest rational in the Diophantine sense `q^2 |x - p/q|`, `q <= qmax`.
pub fn rational_proximity(x: f64, qmax: i64) -> RationalProximity {
    let mut best = RationalProximity {
        value: x,
        numerator: x.round() as i64,
        denominator: 1,
        weighted_distance: f64::INFINITY,
    };
    for q in 1..=qmax {
        let p = (q as f64 * x).round();
        let w = (q as f64) * (q as f64 * x - p).abs();
        if w < best.weighted_distance {
            best = RationalProximity {
                value: x,
                numerator: p as i64,
                denominator: q,
                weighted_distance: w,
            };
        }
    }
    best
}

/// Advisory check of the conditions the limit theorems place on `x0`.
///
/// `sigma_sq` evaluates the noise variance along the lines through `x0` as a
/// function of the view angle. This never blocks any computation.
pub fn admissibility_report(
    x0: [f64; 2],
    theta0: [f64; 2],
    kappa: f64,
    phantom: &Phantom,
    sigma_sq: &dyn Fn(f64) -> f64,
) -> AdmissibilityReport {
    let norm = x0[0].hypot(x0[1]);
    let tangential = x0[0] * -theta0[1] + x0[1] * theta0[0];
    let radial = rational_proximity(kappa * norm, RATIONAL_DENOMINATOR_LIMIT);
    let tangential = rational_proximity(kappa * tangential, RATIONAL_DENOMINATOR_LIMIT);
    let inside_support = norm < phantom.support;
    let sigma_nonzero = (0..256).any(|i| {
        let a = 2.0 * std::f64::consts::PI * i as f64 / 256.0;
        sigma_sq(a) > 0.0
    });
    let mut messages = Vec::new();
    let mut verdict = Verdict::Pass;
    for (name, r) in [("kappa|x0|", &radial), ("kappa x0.theta0_perp", &tangential)] {
        if r.weighted_distance < RATIONAL_WARN_THRESHOLD {
            verdict = Verdict::Warn;
            messages.push(format!(
                "warn: {name} = {} is within q^2-distance {:.3e} of {}/{}",
                r.value, r.weighted_distance, r.numerator, r.denominator
            ));
        }
    }
    if !sigma_nonzero {
        verdict = Verdict::Fail;
        messages.push("fail: noise variance vanishes for every view through x0".into());
    }
    if !inside_support {
        verdict = Verdict::Fail;
        messages.push(format!("fail: |x0| = {norm} is not inside the support radius {}", phantom.support));
    }
    if verdict == Verdict::Pass {
        messages.push("pass (advisory)".into());
    }
    AdmissibilityReport {
        radial,
        tangential,
        curvature_nonzero: true,
        inside_support,
        sigma_nonzero,
        verdict,
        messages,
    }
}
