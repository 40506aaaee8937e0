//! Experiment configuration file.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sma_core::montecarlo::{hex_digest, AltMode, EvalPath, ExperimentSpec, StatisticKind};
use sma_core::sampling::{NoiseScaling, UniformConvention};
use sma_core::scanmap::ThresholdPolicy;
use sma_core::{Disk, EdgePoint, KernelKind, NoiseFamily, NoiseModel, Phantom, SamplingGrid, SigmaProfile};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub alpha: f64,
    /// Window radius in units of epsilon.
    pub rho: f64,
    pub statistic: StatisticKind,
    pub kernel: KernelKind,
    pub hilbert_truncation: Option<f64>,
    /// Patch lattice step in units of epsilon.
    pub patch_step: f64,
    pub n_null: usize,
    pub n_alt: usize,
    pub alt_mode: AltMode,
    pub grid: GridConfig,
    pub phantom: PhantomConfig,
    pub noise: NoiseConfig,
    pub edge: EdgeConfig,
    pub sweep: SweepConfig,
    pub scan: ScanSection,
    pub recon: ReconConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: None,
            alpha: 0.05,
            rho: 3.0,
            statistic: StatisticKind::TwoD,
            kernel: KernelKind::Bspline4,
            hilbert_truncation: None,
            patch_step: 0.125,
            n_null: 10_000,
            n_alt: 10_000,
            alt_mode: AltMode::ReuseNull,
            grid: GridConfig::default(),
            phantom: PhantomConfig::default(),
            noise: NoiseConfig::default(),
            edge: EdgeConfig::default(),
            sweep: SweepConfig::default(),
            scan: ScanSection::default(),
            recon: ReconConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub epsilon: f64,
    pub kappa: f64,
    pub p_bar: f64,
    /// Support radius `P` of the data.
    pub support: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { epsilon: 0.007, kappa: 2.0 * PI, p_bar: 0.0, support: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskConfig {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub disks: Vec<DiskConfig>,
    /// Phantom support `P`; defaults to the grid's.
    pub support: Option<f64>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { disks: vec![DiskConfig { cx: 0.0, cy: -0.1, r: 0.345, amp: 1.0 }], support: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub family: NoiseFamily,
    pub sigma: f64,
    /// `sigma (1 + angular cos 2 alpha)(1 + radial p^2)` when either is nonzero.
    pub angular: f64,
    pub radial: f64,
    /// Omit the `sqrt(d_alpha)` lattice factor.
    pub raw_std: bool,
    pub convention: UniformConvention,
    pub vartheta_scale: f64,
    pub vartheta_power: f64,
    /// When false the data are noiseless while the tests keep the
    /// null distribution of the configured noise.
    pub draw: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            family: NoiseFamily::Uniform,
            sigma: 3f64.sqrt(),
            angular: 0.0,
            radial: 0.0,
            raw_std: false,
            convention: UniformConvention::Width,
            vartheta_scale: 1.0,
            vartheta_power: 0.0,
            draw: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeConfig {
    pub disk: usize,
    /// Polar angle of the boundary point, radians.
    pub polar_angle: f64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig { disk: 0, polar_angle: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Noise levels for power curves and UQ families.
    pub sigmas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { sigmas: (0..41).map(|i| 10f64.powf(-1.0 + 3.0 * i as f64 / 40.0)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    /// Window stride in image cells; half the window radius when absent.
    pub stride: Option<usize>,
    /// Image step as a fraction of epsilon.
    pub step_fraction: f64,
    pub threshold: ThresholdPolicy,
    /// Square frame, pixels per side.
    pub frame_pixels: usize,
    /// Frame center; the first disk's center when absent.
    pub frame_center: Option<[f64; 2]>,
    /// Replaces `noise.sigma` by the level giving this noise-to-signal ratio.
    pub nsr: Option<f64>,
    /// Sub-band count of the banded image reconstruction.
    pub phases: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            stride: None,
            step_fraction: 0.25,
            threshold: ThresholdPolicy::NullMax { level: 0.05 },
            frame_pixels: 512,
            frame_center: None,
            nsr: None,
            phases: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Full-image reconstruction, pixels per side; `0` skips it.
    pub image_pixels: usize,
    /// Image step in units of epsilon.
    pub image_step: f64,
    /// Horizontal line profile through the image at this height.
    pub profile_y: Option<f64>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig { image_pixels: 0, image_step: 1.0, profile_y: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Field checks that need no module; modules validate the rest.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.phantom.disks.is_empty() {
            return bad("phantom needs at least one disk");
        }
        if self.edge.disk >= self.phantom.disks.len() {
            return bad("edge.disk indexes past the phantom's disks");
        }
        if self.sweep.sigmas.iter().any(|s| !(*s > 0.0)) {
            return bad("sweep.sigmas must be positive");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, output location excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        hex_digest(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn sampling_grid(&self) -> sma_core::Result<SamplingGrid> {
        let g = &self.grid;
        SamplingGrid::new(g.epsilon, g.kappa, g.p_bar, g.support)
    }

    pub fn phantom(&self) -> sma_core::Result<Phantom> {
        let disks = self.phantom.disks.iter().map(|d| Disk::new([d.cx, d.cy], d.r, d.amp)).collect();
        Phantom::new(disks, self.phantom.support.unwrap_or(self.grid.support))
    }

    pub fn noise_model(&self) -> NoiseModel {
        let n = &self.noise;
        let sigma = if n.angular == 0.0 && n.radial == 0.0 {
            SigmaProfile::constant(n.sigma)
        } else {
            SigmaProfile::Smooth { sigma: n.sigma, angular: n.angular, radial: n.radial }
        };
        NoiseModel {
            family: n.family,
            sigma,
            scaling: if n.raw_std { NoiseScaling::Raw } else { NoiseScaling::Lattice },
            convention: n.convention,
            vartheta_scale: n.vartheta_scale,
            vartheta_power: n.vartheta_power,
        }
    }

    pub fn edge_point(&self) -> sma_core::Result<EdgePoint> {
        self.phantom()?.boundary_point(self.edge.disk, self.edge.polar_angle)
    }

    pub fn experiment(&self, statistic: StatisticKind, path: EvalPath) -> sma_core::Result<ExperimentSpec> {
        Ok(ExperimentSpec {
            phantom: self.phantom()?,
            edge: self.edge_point()?,
            grid: self.sampling_grid()?,
            noise: self.noise_model(),
            kernel: self.kernel,
            hilbert_truncation: self.hilbert_truncation,
            rho: self.rho,
            patch_step: self.patch_step,
            statistic,
            n_null: self.n_null,
            n_alt: self.n_alt,
            seed: self.seed,
            alt_mode: self.alt_mode,
            path,
        })
    }
}
