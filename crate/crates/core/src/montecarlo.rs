//! Replicated experiments: null and alternative samples of the edge
//! statistics, ROC curves, power tables and normality checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{CovMatrix2, WeightKind};
use crate::error::{Result, SmaError};
use crate::inference::{beta_1d, beta_1d_directed, power_2d, segment_functional};
use crate::kernel::{Kernel, KernelKind};
use crate::phantom::{EdgePoint, Phantom};
use crate::reconstructor::{fbp_points, influence_weights, InfluenceWeights, PatchFunctional};
use crate::sampling::{fill_noise, sample_radon, NoiseModel, SamplingGrid, Sinogram};

/// Alternative-arm noise draws use streams from here on.
pub const ALT_STREAM_BASE: u64 = 1 << 61;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    SgnU,
    LinearU,
    TwoD,
}

impl StatisticKind {
    pub fn dim(self) -> usize {
        match self {
            StatisticKind::TwoD => 2,
            _ => 1,
        }
    }

    pub fn weight(self) -> Option<WeightKind> {
        match self {
            StatisticKind::SgnU => Some(WeightKind::Sgn),
            StatisticKind::LinearU => Some(WeightKind::Linear),
            StatisticKind::TwoD => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AltMode {
    /// Alternative sample `r` is null sample `r` plus the deterministic part.
    #[default]
    ReuseNull,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalPath {
    #[default]
    Weights,
    /// Reconstructs the functional's nodes from every noisy sinogram.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub phantom: Phantom,
    pub edge: EdgePoint,
    pub grid: SamplingGrid,
    pub noise: NoiseModel,
    pub kernel: KernelKind,
    /// Hard cutoff on the filter tail, if any.
    #[serde(default)]
    pub hilbert_truncation: Option<f64>,
    pub rho: f64,
    /// Patch lattice step in rescaled units.
    pub patch_step: f64,
    pub statistic: StatisticKind,
    pub n_null: usize,
    pub n_alt: usize,
    pub seed: u64,
    pub alt_mode: AltMode,
    pub path: EvalPath,
}

impl ExperimentSpec {
    /// Disk phantom, edge at polar angle 0, lattice of the reference grid.
    pub fn reference(statistic: StatisticKind, noise: NoiseModel, n: usize, seed: u64) -> Result<Self> {
        let phantom = Phantom::reference_disk();
        let edge = phantom.boundary_point(0, 0.0)?;
        Ok(ExperimentSpec {
            phantom,
            edge,
            grid: SamplingGrid::reference(),
            noise,
            kernel: KernelKind::Bspline4,
            hilbert_truncation: None,
            rho: 3.0,
            patch_step: 0.125,
            statistic,
            n_null: n,
            n_alt: n,
            seed,
            alt_mode: AltMode::ReuseNull,
            path: EvalPath::Weights,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_null < 100 || self.n_alt < 100 {
            return Err(SmaError::param("replicate counts must be at least 100"));
        }
        if !(self.rho > 0.0) {
            return Err(SmaError::param("window radius must be positive"));
        }
        self.noise.validate(&self.grid)
    }

    /// Hex SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex_digest(json.as_bytes())
    }

    pub fn kernel_instance(&self) -> Kernel {
        Kernel::new(self.kernel).with_hilbert_truncation(self.hilbert_truncation)
    }

    pub fn functional(&self) -> Result<PatchFunctional> {
        match self.statistic.weight() {
            Some(u) => segment_functional(self.patch_step, self.edge.theta0, u, self.rho),
            None => PatchFunctional::disk_moment(self.rho, self.patch_step),
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Precomputed pieces of an experiment shared by all replicates.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub kernel: Kernel,
    pub functional: PatchFunctional,
    pub weights: InfluenceWeights,
    pub clean: Sinogram,
    pub stds: Vec<f64>,
    /// Statistic of the noiseless data.
    pub deterministic: [f64; 2],
}

impl Experiment {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let kernel = spec.kernel_instance();
        let functional = spec.functional()?;
        let weights = influence_weights(&spec.grid, &kernel, spec.edge.x0, &functional)?;
        let clean = sample_radon(&spec.phantom, &spec.grid)?;
        let deterministic = weights.apply_sinogram(&clean)?;
        Ok(Experiment {
            stds: spec.noise.std_table(&spec.grid),
            spec: spec.clone(),
            kernel,
            functional,
            weights,
            clean,
            deterministic,
        })
    }

    /// Noise draw for a replicate stream.
    pub fn noise(&self, stream: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.stds.len()];
        fill_noise(&self.stds, self.spec.noise.family, self.spec.seed, stream, &mut out);
        out
    }

    /// Statistic of pure noise by the influence weights.
    pub fn noise_statistic(&self, stream: u64) -> [f64; 2] {
        let v = self.noise(stream);
        self.weights.apply(&v).expect("weights match the grid")
    }

    /// Statistic of arbitrary data by reconstructing the functional's nodes.
    pub fn direct_statistic(&self, data: &Sinogram) -> Result<[f64; 2]> {
        let eps = self.spec.grid.epsilon;
        let x0 = self.spec.edge.x0;
        let pts: Vec<[f64; 2]> = self
            .functional
            .offsets()
            .iter()
            .map(|o| [x0[0] + eps * o[0], x0[1] + eps * o[1]])
            .collect();
        let vals = fbp_points(data, &self.kernel, &pts)?;
        let mut acc = [0.0; 2];
        for (v, w) in vals.iter().zip(&self.functional.weights) {
            acc[0] += w[0] * v;
            acc[1] += w[1] * v;
        }
        Ok(acc)
    }

    fn replicate(&self, stream: u64) -> Result<[f64; 2]> {
        match self.spec.path {
            EvalPath::Weights => Ok(self.noise_statistic(stream)),
            EvalPath::Direct => {
                let noise = self.noise(stream);
                self.direct_statistic(&Sinogram::from_values(&self.spec.grid, noise)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub dim: usize,
    pub null_samples: Vec<[f64; 2]>,
    pub alt_samples: Vec<[f64; 2]>,
    pub deterministic: [f64; 2],
    pub spec_hash: String,
    pub seed: u64,
}

impl SampleSet {
    pub fn null_component(&self, c: usize) -> Vec<f64> {
        self.null_samples.iter().map(|v| v[c]).collect()
    }

    pub fn alt_component(&self, c: usize) -> Vec<f64> {
        self.alt_samples.iter().map(|v| v[c]).collect()
    }
}

pub fn run_replicates(spec: &ExperimentSpec) -> Result<SampleSet> {
    let exp = Experiment::new(spec)?;
    run_with(&exp)
}

/// Replicate `r` of the null arm uses noise stream `r`; the independent
/// alternative arm uses `ALT_STREAM_BASE + r`.
pub fn run_with(exp: &Experiment) -> Result<SampleSet> {
    let spec = &exp.spec;
    let h = exp.deterministic;
    let null: Vec<[f64; 2]> = (0..spec.n_null as u64)
        .into_par_iter()
        .map(|r| exp.replicate(r))
        .collect::<Result<_>>()?;
    let alt: Vec<[f64; 2]> = match spec.alt_mode {
        AltMode::ReuseNull => (0..spec.n_alt)
            .map(|r| {
                let g = if r < null.len() {
                    null[r]
                } else {
                    exp.replicate(r as u64).expect("replicate")
                };
                [g[0] + h[0], g[1] + h[1]]
            })
            .collect(),
        AltMode::Independent => (0..spec.n_alt as u64)
            .into_par_iter()
            .map(|r| exp.replicate(ALT_STREAM_BASE + r).map(|g| [g[0] + h[0], g[1] + h[1]]))
            .collect::<Result<_>>()?,
    };
    Ok(SampleSet {
        dim: spec.statistic.dim(),
        null_samples: null,
        alt_samples: alt,
        deterministic: h,
        spec_hash: spec.hash(),
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Four standard errors under normality.
    pub mean_band: f64,
    pub skewness_band: f64,
    pub kurtosis_band: f64,
}

impl MomentReport {
    pub fn new(x: &[f64]) -> Self {
        let n = x.len();
        let nf = n as f64;
        let mean = x.iter().sum::<f64>() / nf;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in x {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= nf;
        m3 /= nf;
        m4 /= nf;
        // Standard errors of the sample skewness and kurtosis for normal data.
        let se_skew = (6.0 * nf * (nf - 1.0) / ((nf - 2.0) * (nf + 1.0) * (nf + 3.0))).sqrt();
        let se_kurt = 2.0 * se_skew * ((nf * nf - 1.0) / ((nf - 3.0) * (nf + 5.0))).sqrt();
        MomentReport {
            n,
            mean,
            variance: m2 * nf / (nf - 1.0),
            skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
            excess_kurtosis: if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 },
            mean_band: 4.0 * (m2 / nf).sqrt(),
            skewness_band: 4.0 * se_skew,
            kurtosis_band: 4.0 * se_kurt,
        }
    }

    pub fn shape_ok(&self) -> bool {
        self.skewness.abs() <= self.skewness_band && self.excess_kurtosis.abs() <= self.kurtosis_band
    }

    /// Relative standard error of the sample variance under normality.
    pub fn variance_rel_se(&self) -> f64 {
        (2.0 / (self.n as f64 - 1.0)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianityReport {
    pub components: Vec<MomentReport>,
    /// Sample covariance (1x1 or 2x2, row-major).
    pub covariance: Vec<f64>,
    /// Kolmogorov–Smirnov distance of the standardized first component from
    /// the standard normal, and its 1% critical value.
    pub ks_distance: f64,
    pub ks_critical_1pct: f64,
    /// Relative deviation of the sample covariance from a prediction.
    pub prediction_rel_error: Option<f64>,
}

impl GaussianityReport {
    pub fn shape_ok(&self) -> bool {
        self.components.iter().all(MomentReport::shape_ok)
    }

    pub fn ks_ok(&self) -> bool {
        self.ks_distance < self.ks_critical_1pct
    }
}

pub fn gaussianity_report(samples: &[[f64; 2]], dim: usize, predicted: Option<&CovMatrix2>) -> Result<GaussianityReport> {
    if samples.len() < 1000 {
        return Err(SmaError::param("normality checks need at least 1000 samples"));
    }
    if !(1..=2).contains(&dim) {
        return Err(SmaError::param("dimension must be 1 or 2"));
    }
    let comps: Vec<Vec<f64>> = (0..dim).map(|c| samples.iter().map(|v| v[c]).collect()).collect();
    let components: Vec<MomentReport> = comps.iter().map(|x| MomentReport::new(x)).collect();
    let cov = sample_covariance(samples, dim);
    let m = &components[0];
    let sd = m.variance.sqrt();
    let z: Vec<f64> = comps[0].iter().map(|v| (v - m.mean) / sd).collect();
    let ks_distance = ks_statistic(&z, crate::special::normal_cdf);
    let prediction_rel_error = predicted.map(|p| {
        if dim == 1 {
            (cov[0] / p.c11 - 1.0).abs()
        } else {
            let scale = p.trace();
            let d = (cov[0] - p.c11).abs().max((cov[1] - p.c12).abs()).max((cov[3] - p.c22).abs());
            d / (0.5 * scale)
        }
    });
    Ok(GaussianityReport {
        components,
        covariance: cov,
        ks_distance,
        ks_critical_1pct: ks_critical(samples.len(), 0.01),
        prediction_rel_error,
    })
}

pub fn sample_covariance(samples: &[[f64; 2]], dim: usize) -> Vec<f64> {
    let n = samples.len() as f64;
    let mut mean = [0.0; 2];
    for v in samples {
        mean[0] += v[0];
        mean[1] += v[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut c = vec![0.0; dim * dim];
    for v in samples {
        for a in 0..dim {
            for b in 0..dim {
                c[a * dim + b] += (v[a] - mean[a]) * (v[b] - mean[b]);
            }
        }
    }
    c.iter_mut().for_each(|x| *x /= n - 1.0);
    c
}

/// `sup |F_n - F|` of the empirical distribution of `x`.
pub fn ks_statistic(x: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov critical value `sqrt(-ln(level / 2) / 2) / sqrt(n)`.
pub fn ks_critical(n: usize, level: f64) -> f64 {
    (-(0.5 * level).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Score whose large values count as evidence for an edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Score {
    /// `(F_u / gamma)^2`.
    TwoSided { gamma: f64 },
    /// `sign * F_u / gamma`.
    Directed { gamma: f64, sign: f64 },
    /// `F^T C^{-1} F`.
    Quadratic { cov: CovMatrix2 },
}

impl Score {
    pub fn eval(&self, v: [f64; 2]) -> Result<f64> {
        match *self {
            Score::TwoSided { gamma } => Ok((v[0] / gamma).powi(2)),
            Score::Directed { gamma, sign } => Ok(sign.signum() * v[0] / gamma),
            Score::Quadratic { cov } => cov.inv_quad(v),
        }
    }

    pub fn eval_all(&self, s: &[[f64; 2]]) -> Result<Vec<f64>> {
        s.iter().map(|v| self.eval(*v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// False positive rate, increasing from 0 to 1.
    pub alpha: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    /// True positive rate at false positive rate `a`, linear between points.
    pub fn tpr_at(&self, a: f64) -> f64 {
        let i = self.alpha.partition_point(|&x| x < a);
        if i == 0 {
            return self.tpr[0];
        }
        if i >= self.alpha.len() {
            return *self.tpr.last().unwrap();
        }
        let (a0, a1) = (self.alpha[i - 1], self.alpha[i]);
        let (t0, t1) = (self.tpr[i - 1], self.tpr[i]);
        if a1 == a0 {
            t1
        } else {
            t0 + (t1 - t0) * (a - a0) / (a1 - a0)
        }
    }
}

/// Threshold sweep over pooled scores; tied scores move the curve
/// diagonally, which gives ties half credit in the trapezoid AUC.
pub fn empirical_roc(null: &[f64], alt: &[f64]) -> Result<RocCurve> {
    if null.is_empty() || alt.is_empty() {
        return Err(SmaError::param("ROC needs nonempty null and alternative samples"));
    }
    let mut pooled: Vec<(f64, bool)> = null.iter().map(|&v| (v, false)).chain(alt.iter().map(|&v| (v, true))).collect();
    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let (n0, n1) = (null.len() as f64, alt.len() as f64);
    let mut alpha = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let v = pooled[i].0;
        let (f0, t0) = (fp, tp);
        while i < pooled.len() && pooled[i].0 == v {
            if pooled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (a0, a1) = (f0 as f64 / n0, fp as f64 / n0);
        let (b0, b1) = (t0 as f64 / n1, tp as f64 / n1);
        auc += (a1 - a0) * 0.5 * (b0 + b1);
        alpha.push(a1);
        tpr.push(b1);
    }
    Ok(RocCurve { alpha, tpr, auc })
}

/// Detection problem for the theoretical ROC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TheoryKind {
    TwoSided { h_u: f64, gamma: f64 },
    Directed { h_u: f64, gamma: f64 },
    TwoD { h: [f64; 2], cov: CovMatrix2 },
}

impl TheoryKind {
    pub fn power(&self, alpha: f64) -> Result<f64> {
        match *self {
            TheoryKind::TwoSided { h_u, gamma } => Ok(1.0 - beta_1d(h_u, gamma, alpha)?),
            TheoryKind::Directed { h_u, gamma } => Ok(1.0 - beta_1d_directed(h_u, gamma, alpha)?),
            TheoryKind::TwoD { h, cov } => power_2d(h, &cov, alpha),
        }
    }
}

/// Power on `n` log-spaced sizes in `[1e-6, 1)`, closed by `(0, 0)` and `(1, 1)`.
pub fn theoretical_roc(kind: &TheoryKind, n: usize) -> Result<RocCurve> {
    if n < 2 {
        return Err(SmaError::param("ROC grid needs at least two points"));
    }
    let (lo, hi) = (1e-6f64.ln(), (1.0 - 1e-9f64).ln());
    let mut alpha = vec![0.0];
    let mut tpr = vec![0.0];
    for i in 0..n {
        let a = (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp();
        alpha.push(a);
        tpr.push(kind.power(a)?);
    }
    alpha.push(1.0);
    tpr.push(1.0);
    let auc = alpha
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(a, t)| (a[1] - a[0]) * 0.5 * (t[0] + t[1]))
        .sum();
    Ok(RocCurve { alpha, tpr, auc })
}

/// Largest `|tpr_emp - tpr_theory|` over the theory grid.
pub fn roc_gap(empirical: &RocCurve, theory: &RocCurve) -> f64 {
    theory
        .alpha
        .iter()
        .zip(&theory.tpr)
        .map(|(&a, &t)| (empirical.tpr_at(a) - t).abs())
        .fold(0.0, f64::max)
}

/// Theoretical inputs at a reference noise level; dispersions scale
/// linearly in sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerInputs {
    pub sigma_ref: f64,
    pub h_u: f64,
    pub gamma_ref: f64,
    pub h: [f64; 2],
    pub cov_ref: CovMatrix2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub sigma: f64,
    pub power_1d: f64,
    pub power_1d_directed: f64,
    pub power_2d: f64,
}

pub fn power_vs_sigma(inputs: &PowerInputs, sigmas: &[f64], alpha: f64) -> Result<Vec<PowerRow>> {
    sigmas
        .iter()
        .map(|&s| {
            if !(s > 0.0) {
                return Err(SmaError::param("sigma grid values must be positive"));
            }
            let r = s / inputs.sigma_ref;
            let g = inputs.gamma_ref * r;
            Ok(PowerRow {
                sigma: s,
                power_1d: 1.0 - beta_1d(inputs.h_u, g, alpha)?,
                power_1d_directed: 1.0 - beta_1d_directed(inputs.h_u, g, alpha)?,
                power_2d: power_2d(inputs.h, &inputs.cov_ref.scaled(r * r), alpha)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    FreedmanDiaconis,
    Fixed { lo: f64, hi: f64, bins: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < s.len() {
        s[i] * (1.0 - f) + s[i + 1] * f
    } else {
        s[i]
    }
}

/// Edges shared by all `sets`.
pub fn histogram_edges(sets: &[&[f64]], binning: Binning) -> Result<Vec<f64>> {
    match binning {
        Binning::Fixed { lo, hi, bins } => {
            if bins == 0 || !(hi > lo) {
                return Err(SmaError::param("fixed binning needs bins > 0 and hi > lo"));
            }
            Ok((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
        }
        Binning::FreedmanDiaconis => {
            let mut all: Vec<f64> = sets.iter().flat_map(|s| s.iter().copied()).collect();
            if all.is_empty() {
                return Err(SmaError::param("histogram of an empty sample"));
            }
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = (all[0], *all.last().unwrap());
            // Width from the first set, so both arms share the null resolution.
            let mut first = sets[0].to_vec();
            first.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let iqr = quantile_sorted(&first, 0.75) - quantile_sorted(&first, 0.25);
            let width = 2.0 * iqr / (first.len() as f64).cbrt();
            let bins = if width > 0.0 && hi > lo {
                (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
            } else {
                1
            };
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
            Ok((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
        }
    }
}

/// Counts on `edges`; the last bin is closed, values outside are dropped.
pub fn histogram(x: &[f64], edges: &[f64]) -> Histogram {
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    let (lo, hi) = (edges[0], edges[bins]);
    for &v in x {
        if v < lo || v > hi {
            continue;
        }
        let i = edges.partition_point(|&e| e <= v).saturating_sub(1).min(bins - 1);
        counts[i] += 1;
    }
    Histogram {
        edges: edges.to_vec(),
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sampling::{SigmaProfile, UniformConvention};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64, m: f64) -> Vec<f64> {
        let mut r = rng::stream(seed, 0);
        (0..n).map(|_| m + r.sample::<f64, _>(StandardNormal)).collect()
    }

    fn spec(kind: StatisticKind, sigma: f64, n: usize) -> ExperimentSpec {
        let noise = NoiseModel::uniform(SigmaProfile::constant(sigma)).with_convention(UniformConvention::Width);
        ExperimentSpec::reference(kind, noise, n, 17).unwrap()
    }

    #[test]
    fn zero_noise_gives_deterministic_samples() {
        let s = run_replicates(&spec(StatisticKind::LinearU, 0.0, 100)).unwrap();
        assert!(s.null_samples.iter().all(|v| v[0] == 0.0));
        assert!(s.alt_samples.iter().all(|v| v[0] == s.deterministic[0]));
        assert!(s.deterministic[0] < 0.0);
    }

    #[test]
    fn null_mean_is_zero_and_runs_are_reproducible() {
        let sp = spec(StatisticKind::SgnU, 3f64.sqrt(), 2000);
        let a = run_replicates(&sp).unwrap();
        let m = MomentReport::new(&a.null_component(0));
        assert!(m.mean.abs() < m.mean_band);
        let b = run_replicates(&sp).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_replicates(&sp)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn independent_arms_differ_from_reuse() {
        let mut sp = spec(StatisticKind::LinearU, 3f64.sqrt(), 200);
        let a = run_replicates(&sp).unwrap();
        sp.alt_mode = AltMode::Independent;
        let b = run_replicates(&sp).unwrap();
        assert_eq!(a.null_samples, b.null_samples);
        assert_ne!(a.alt_samples, b.alt_samples);
        assert_ne!(a.spec_hash, b.spec_hash);
    }

    #[test]
    fn weights_path_matches_direct_path() {
        let sp = spec(StatisticKind::SgnU, 3f64.sqrt(), 100);
        let exp = Experiment::new(&sp).unwrap();
        for r in 0..3 {
            let w = exp.noise_statistic(r);
            let noise = exp.noise(r);
            let d = exp
                .direct_statistic(&Sinogram::from_values(&sp.grid, noise).unwrap())
                .unwrap();
            assert!((w[0] - d[0]).abs() <= 1e-6 * w[0].abs().max(1e-3), "{w:?} vs {d:?}");
        }
        let det = exp.direct_statistic(&exp.clean).unwrap();
        assert!((det[0] - exp.deterministic[0]).abs() < 1e-9 * det[0].abs());
    }

    #[test]
    fn moment_report_on_normal_input() {
        let x = normals(10_000, 4, 0.0);
        let m = MomentReport::new(&x);
        assert!(m.shape_ok());
        let pairs: Vec<[f64; 2]> = x.iter().zip(normals(10_000, 5, 0.0)).map(|(&a, b)| [a, b]).collect();
        let g = gaussianity_report(&pairs, 2, Some(&CovMatrix2::isotropic(1.0))).unwrap();
        assert!(g.shape_ok() && g.ks_ok());
        assert!(g.prediction_rel_error.unwrap() < 0.05);
        assert!(gaussianity_report(&pairs[..10], 2, None).is_err());
        // A skewed sample is flagged.
        let e: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(!MomentReport::new(&e).shape_ok());
    }

    #[test]
    fn roc_extremes() {
        let a = normals(5000, 1, 0.0);
        let b = normals(5000, 2, 0.0);
        let r = empirical_roc(&a, &b).unwrap();
        // sd of the Mann–Whitney AUC under equal distributions
        let sd = ((5000.0 + 5000.0 + 1.0) / (12.0 * 5000.0 * 5000.0f64)).sqrt();
        assert!((r.auc - 0.5).abs() < 3.0 * sd);
        let c: Vec<f64> = a.iter().map(|v| v + 100.0).collect();
        assert_eq!(empirical_roc(&a, &c).unwrap().auc, 1.0);
        // Full ties give exactly one half.
        assert_eq!(empirical_roc(&[1.0; 10], &[1.0; 7]).unwrap().auc, 0.5);
        assert!(empirical_roc(&[], &a).is_err());
    }

    #[test]
    fn roc_auc_equals_pair_count() {
        let a = [0.1, 0.5, 0.5, 0.9, 2.0];
        let b = [0.5, 0.6, 1.0, 2.0];
        let mut pairs = 0.0;
        for &x in &a {
            for &y in &b {
                pairs += if y > x {
                    1.0
                } else if y == x {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let auc = empirical_roc(&a, &b).unwrap().auc;
        assert!((auc - pairs / 20.0).abs() < 1e-15);
    }

    #[test]
    fn theoretical_roc_cases() {
        let z = theoretical_roc(&TheoryKind::TwoSided { h_u: 0.0, gamma: 1.0 }, 1000).unwrap();
        assert!((z.auc - 0.5).abs() < 1e-6);
        let z = theoretical_roc(&TheoryKind::TwoD { h: [0.0, 0.0], cov: CovMatrix2::isotropic(1.0) }, 1000).unwrap();
        assert!((z.auc - 0.5).abs() < 1e-6);
        // Directed: AUC = Phi(m / sqrt 2).
        let m = 1.3;
        let d = theoretical_roc(&TheoryKind::Directed { h_u: m, gamma: 1.0 }, 1000).unwrap();
        assert!((d.auc - crate::special::normal_cdf(m / 2f64.sqrt())).abs() < 1e-4);
    }

    #[test]
    fn theory_matches_empirical_roc() {
        let m = 1.5;
        let null = normals(10_000, 8, 0.0);
        let alt = normals(10_000, 9, m);
        let theory = theoretical_roc(&TheoryKind::Directed { h_u: m, gamma: 1.0 }, 1000).unwrap();
        let emp = empirical_roc(&null, &alt).unwrap();
        assert!(roc_gap(&emp, &theory) < 0.03);
        let sq = |v: &Vec<f64>| v.iter().map(|x| x * x).collect::<Vec<_>>();
        let theory2 = theoretical_roc(&TheoryKind::TwoSided { h_u: m, gamma: 1.0 }, 1000).unwrap();
        let emp2 = empirical_roc(&sq(&null), &sq(&alt)).unwrap();
        assert!(roc_gap(&emp2, &theory2) < 0.03);
        assert!((emp2.auc - theory2.auc).abs() < 0.02);
    }

    #[test]
    fn power_table_limits() {
        let inputs = PowerInputs {
            sigma_ref: 1.0,
            h_u: 2.0,
            gamma_ref: 1.0,
            h: [3.0, 0.0],
            cov_ref: CovMatrix2::isotropic(1.0),
        };
        let rows = power_vs_sigma(&inputs, &[1e-3, 0.5, 1.0, 2.0, 1e4], 0.05).unwrap();
        assert!(rows[0].power_1d > 1.0 - 1e-9 && rows[0].power_2d > 1.0 - 1e-9);
        let last = rows.last().unwrap();
        assert!((last.power_1d - 0.05).abs() < 1e-3 && (last.power_2d - 0.05).abs() < 1e-3);
        assert!(rows.iter().all(|r| r.power_2d >= r.power_1d));
        assert!(power_vs_sigma(&inputs, &[0.0], 0.05).is_err());
    }

    #[test]
    fn histograms() {
        let x = normals(10_000, 3, 0.0);
        let y = normals(10_000, 6, 2.0);
        let edges = histogram_edges(&[&x, &y], Binning::FreedmanDiaconis).unwrap();
        let h = histogram(&x, &edges);
        assert_eq!(h.total(), x.len());
        assert!(edges.windows(2).all(|w| w[1] > w[0]));
        let f = histogram_edges(&[&x], Binning::Fixed { lo: -1.0, hi: 1.0, bins: 4 }).unwrap();
        assert_eq!(f, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let hf = histogram(&[-1.0, -0.6, 0.0, 1.0, 3.0], &f);
        assert_eq!(hf.counts, vec![2, 0, 1, 1]);
    }
}
