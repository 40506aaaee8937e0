//! Subcommand implementations. Each writes its artifacts into the run's
//! output directory and returns nothing else.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use serde_json::{json, Value};
use sma_core::covariance::{
    cov_c, cov_c1, cov_matrix, edge_vector, gamma_sq, h_u, CovContext, CovMatrix2, WeightKind,
};
use sma_core::inference::{
    confidence_region, direction_coverage, direction_interval, isotropic_nu, magnitude_coverage, magnitude_interval,
    noncentrality, power_2d, test_1d, test_1d_directed, test_2d, PolarPdf,
};
use sma_core::io::{write_image_pgm, write_pgm16, write_sinogram_bin, write_sinogram_csv, CsvWriter, Provenance};
use sma_core::montecarlo::{
    empirical_roc, gaussianity_report, histogram, histogram_edges, power_vs_sigma, run_replicates, theoretical_roc,
    Binning, EvalPath, Experiment, PowerInputs, SampleSet, Score, StatisticKind, TheoryKind,
};
use sma_core::phantom::admissibility_report;
use sma_core::reconstructor::{dtb_residual, fbp_image_banded, fbp_patch, fbp_points, BBox, NoisyData, PatchPart};
use sma_core::sampling::{self, sample_radon};
use sma_core::scanmap::{hausdorff_to_circle, scan as scan_map, ScanConfig, ScanNull};
use sma_core::{EdgePoint, Kernel, Phantom, SamplingGrid, Sinogram};

use crate::config::RunConfig;
use crate::error::CliError;

pub type CmdResult = Result<(), CliError>;

/// A resolved run: config, output directory and provenance stamp.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub prov: Provenance,
    pub force_direct: bool,
}

impl Run {
    pub fn new(cfg: RunConfig, out: PathBuf, force_direct: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out)?;
        let prov = Provenance::new(cfg.hash(), cfg.seed);
        Ok(Run { cfg, out, prov, force_direct })
    }

    /// Same run with a modified config, writing into a subdirectory.
    pub fn derived(&self, sub: &str, f: impl FnOnce(&mut RunConfig)) -> Result<Self, CliError> {
        let mut cfg = self.cfg.clone();
        f(&mut cfg);
        cfg.check()?;
        Run::new(cfg, self.out.join(sub), self.force_direct)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn csv(&self, name: &str, columns: &[&str]) -> Result<CsvWriter, CliError> {
        Ok(CsvWriter::create(&self.path(name), Some(&self.prov), columns)?)
    }

    fn summary(&self, name: &str, body: Value) -> CmdResult {
        let doc = json!({
            "config_hash": self.prov.config_hash,
            "seed": self.prov.seed,
            "config": self.cfg,
            "result": body,
        });
        std::fs::write(self.path(name), serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n")?;
        Ok(())
    }

    fn eval_path(&self) -> EvalPath {
        if self.force_direct {
            EvalPath::Direct
        } else {
            EvalPath::Weights
        }
    }

    fn kernel(&self) -> Kernel {
        Kernel::new(self.cfg.kernel).with_hilbert_truncation(self.cfg.hilbert_truncation)
    }

    fn noise(&self, grid: &SamplingGrid) -> Vec<f64> {
        if self.cfg.noise.draw {
            sampling::draw_noise(grid, &self.cfg.noise_model(), self.cfg.seed)
        } else {
            vec![0.0; grid.len()]
        }
    }
}

fn f(v: f64) -> String {
    v.to_string()
}

/// Closed-form quantities at the configured edge point and noise level.
struct Theory {
    edge: EdgePoint,
    ctx: CovContext,
    cov: CovMatrix2,
    h: [f64; 2],
    h_u_linear: f64,
    h_u_sgn: f64,
    gamma_linear: f64,
    gamma_sgn: f64,
}

impl Theory {
    fn new(run: &Run) -> Result<Self, CliError> {
        let cfg = &run.cfg;
        let grid = cfg.sampling_grid()?;
        let edge = cfg.edge_point()?;
        let kernel = run.kernel();
        let model = cfg.noise_model();
        model.validate(&grid)?;
        let ctx = CovContext::from_noise(edge.x0, &grid, &model, Arc::new(kernel.clone()));
        let cov = cov_matrix(&ctx, cfg.rho)?;
        let h = edge_vector(&kernel, cfg.rho, edge.delta_f, edge.theta0)?.h;
        Ok(Theory {
            h_u_linear: h_u(&kernel, WeightKind::Linear, cfg.rho, edge.delta_f),
            h_u_sgn: h_u(&kernel, WeightKind::Sgn, cfg.rho, edge.delta_f),
            gamma_linear: gamma_sq(&ctx, WeightKind::Linear, cfg.rho, edge.theta0).sqrt(),
            gamma_sgn: gamma_sq(&ctx, WeightKind::Sgn, cfg.rho, edge.theta0).sqrt(),
            edge,
            ctx,
            cov,
            h,
        })
    }

    fn one_d(&self, u: WeightKind) -> (f64, f64) {
        match u {
            WeightKind::Linear => (self.h_u_linear, self.gamma_linear),
            WeightKind::Sgn => (self.h_u_sgn, self.gamma_sgn),
        }
    }

    fn json(&self) -> Value {
        json!({
            "x0": self.edge.x0,
            "theta0": self.edge.theta0,
            "delta_f": self.edge.delta_f,
            "c_hat": self.cov,
            "nu_sq": self.cov.c11,
            "h": self.h,
            "h_norm": self.h[0].hypot(self.h[1]),
            "h_u_linear": self.h_u_linear,
            "h_u_sgn": self.h_u_sgn,
            "gamma_sq_linear": self.gamma_linear.powi(2),
            "gamma_sq_sgn": self.gamma_sgn.powi(2),
        })
    }
}

fn one_d_weight(kind: StatisticKind) -> WeightKind {
    kind.weight().unwrap_or(WeightKind::Linear)
}

pub fn simulate(run: &Run) -> CmdResult {
    let grid = run.cfg.sampling_grid()?;
    let model = run.cfg.noise_model();
    model.validate(&grid)?;
    let clean = sample_radon(&run.cfg.phantom()?, &grid)?;
    let noise = run.noise(&grid);
    let noisy = sampling::add_noise(&clean, &noise)?;
    write_sinogram_bin(&run.path("sinogram.sma"), &clean)?;
    write_sinogram_csv(&run.path("sinogram.csv"), &clean, Some(&run.prov))?;
    write_sinogram_bin(&run.path("noisy.sma"), &noisy)?;
    write_sinogram_csv(&run.path("noisy.csv"), &noisy, Some(&run.prov))?;
    run.summary(
        "simulate.json",
        json!({
            "n_alpha": grid.n_alpha,
            "n_p": grid.n_p,
            "d_alpha": grid.d_alpha(),
            "clean_norm": clean.norm(),
            "nsr": sampling::nsr(&clean, &noise),
        }),
    )
}

pub fn recon(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    let grid = cfg.sampling_grid()?;
    let kernel = run.kernel();
    let phantom = cfg.phantom()?;
    let edge = cfg.edge_point()?;
    let clean = sample_radon(&phantom, &grid)?;
    let data = NoisyData::new(clean, run.noise(&grid))?;
    let eps = grid.epsilon;

    // Local patch in rescaled coordinates with the transition-model prediction.
    let det = fbp_patch(&data, &kernel, edge.x0, cfg.rho, cfg.patch_step, PatchPart::Deterministic)?;
    let full = fbp_patch(&data, &kernel, edge.x0, cfg.rho, cfg.patch_step, PatchPart::Full)?;
    let fit = dtb_residual(&det, edge.theta0, edge.delta_f, &kernel);
    let mut w = run.csv("patch.csv", &["x1", "x2", "observed", "noisy", "predicted"])?;
    for (i, o) in det.grid.offsets().iter().enumerate() {
        let pred = fit.c_fit + edge.delta_f * kernel.dtb(edge.theta0[0] * o[0] + edge.theta0[1] * o[1]);
        w.row_f64(&[o[0], o[1], det.samples[i], full.samples[i], pred])?;
    }
    w.finish()?;

    // Profile along the normal through x0.
    let n = (2.0 * cfg.rho / cfg.patch_step).round() as usize;
    let ts: Vec<f64> = (0..=n).map(|i| -cfg.rho + i as f64 * cfg.patch_step).collect();
    let pts: Vec<[f64; 2]> = ts
        .iter()
        .map(|t| [edge.x0[0] + eps * t * edge.theta0[0], edge.x0[1] + eps * t * edge.theta0[1]])
        .collect();
    let obs = fbp_points(&data.select(PatchPart::Deterministic), &kernel, &pts)?;
    let noise = fbp_points(&data.select(PatchPart::NoiseOnly), &kernel, &pts)?;
    let mut w = run.csv("profile.csv", &["t", "observed", "noise", "noisy", "predicted"])?;
    for i in 0..ts.len() {
        let pred = fit.c_fit + edge.delta_f * kernel.dtb(ts[i]);
        w.row_f64(&[ts[i], obs[i], noise[i], obs[i] + noise[i], pred])?;
    }
    w.finish()?;

    let mut image_info = Value::Null;
    if cfg.recon.image_pixels > 0 {
        let step = cfg.recon.image_step * eps;
        let c = frame_center(cfg);
        let half = 0.5 * (cfg.recon.image_pixels - 1) as f64 * step;
        let img = fbp_image_banded(&data.select(PatchPart::Full), &kernel, BBox::centered(c, half), step, cfg.scan.phases)?;
        sma_core::io::write_image_csv(&run.path("image.csv"), &img, Some(&run.prov))?;
        let sc = write_image_pgm(&run.path("image.pgm"), &img, Some(&run.prov))?;
        image_info = json!({ "nx": img.nx, "ny": img.ny, "min": sc.min, "max": sc.max });
    }
    if let Some(y) = cfg.recon.profile_y {
        line_profile(run, &data, &kernel, y, &[cfg.noise.sigma], "image_profile.csv")?;
    }
    run.summary(
        "recon.json",
        json!({
            "dtb_c_fit": fit.c_fit,
            "dtb_max_residual": fit.max_residual,
            "image": image_info,
        }),
    )
}

fn frame_center(cfg: &RunConfig) -> [f64; 2] {
    cfg.scan.frame_center.unwrap_or([cfg.phantom.disks[0].cx, cfg.phantom.disks[0].cy])
}

/// Horizontal profile at height `y` with the noise part rescaled to each
/// level in `sigmas`; noise is linear in sigma so one draw serves all.
fn line_profile(run: &Run, data: &NoisyData, kernel: &Kernel, y: f64, sigmas: &[f64], name: &str) -> CmdResult {
    let grid = &data.clean.grid;
    let reach = (grid.support * grid.support - y * y).sqrt() * 0.999;
    let step = grid.epsilon;
    let n = (2.0 * reach / step).floor() as usize;
    let pts: Vec<[f64; 2]> = (0..=n).map(|i| [-reach + i as f64 * step, y]).collect();
    let clean = fbp_points(&data.select(PatchPart::Deterministic), kernel, &pts)?;
    let noise = fbp_points(&data.select(PatchPart::NoiseOnly), kernel, &pts)?;
    let base = run.cfg.noise.sigma;
    let mut cols = vec!["x".to_string(), "clean".to_string()];
    for s in sigmas {
        cols.push(format!("noise_sigma_{s}"));
        cols.push(format!("noisy_sigma_{s}"));
    }
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut w = run.csv(name, &refs)?;
    for i in 0..pts.len() {
        let mut row = vec![pts[i][0], clean[i]];
        for s in sigmas {
            let r = if base > 0.0 { s / base } else { 0.0 };
            row.push(r * noise[i]);
            row.push(clean[i] + r * noise[i]);
        }
        w.row_f64(&row)?;
    }
    Ok(w.finish()?)
}

pub fn cov_report(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    let th = Theory::new(run)?;
    let mut w = run.csv("cov_c.csv", &["x1", "x2", "c"])?;
    let n = 48;
    let span = 2.0 * cfg.rho;
    for i in 0..=n {
        for j in 0..=n {
            let x = [-span + 2.0 * span * i as f64 / n as f64, -span + 2.0 * span * j as f64 / n as f64];
            w.row_f64(&[x[0], x[1], cov_c(&th.ctx, x)])?;
        }
    }
    w.finish()?;
    let mut w = run.csv("cov_c1.csv", &["t", "c1"])?;
    for i in 0..=200 {
        let t = -span + 2.0 * span * i as f64 / 200.0;
        w.row_f64(&[t, cov_c1(&th.ctx, t, th.edge.theta0)])?;
    }
    w.finish()?;
    let grid = cfg.sampling_grid()?;
    let model = cfg.noise_model();
    let sigma_sq = |a: f64| {
        let p = th.edge.x0[0] * a.cos() + th.edge.x0[1] * a.sin();
        model.sigma_sq_effective(&grid, a, p)
    };
    let report = admissibility_report(th.edge.x0, th.edge.theta0, cfg.grid.kappa, &cfg.phantom()?, &sigma_sq);
    let mut body = th.json();
    body["mu"] = json!(noncentrality(th.h, &th.cov)?);
    body["power_2d"] = json!(power_2d(th.h, &th.cov, cfg.alpha)?);
    body["admissibility"] = serde_json::to_value(&report).expect("report serializes");
    run.summary("cov_report.json", body)
}

fn replicate_once(run: &Run, statistic: StatisticKind) -> Result<(Experiment, [f64; 2]), CliError> {
    let mut spec = run.cfg.experiment(statistic, run.eval_path())?;
    spec.n_null = 100;
    spec.n_alt = 100;
    let exp = Experiment::new(&spec)?;
    let g = if !run.cfg.noise.draw {
        [0.0, 0.0]
    } else if run.force_direct {
        let noise = exp.noise(0);
        exp.direct_statistic(&Sinogram::from_values(&spec.grid, noise)?)?
    } else {
        exp.noise_statistic(0)
    };
    Ok((exp, g))
}

pub fn test1d(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    let kind = match cfg.statistic {
        StatisticKind::TwoD => StatisticKind::LinearU,
        k => k,
    };
    let th = Theory::new(run)?;
    let (h_theory, gamma) = th.one_d(one_d_weight(kind));
    let (exp, g) = replicate_once(run, kind)?;
    let h = exp.deterministic[0];
    let sign = h_theory.signum();
    let mut lines = String::new();
    for (arm, v) in [("null", g[0]), ("edge", g[0] + h)] {
        let two = test_1d(v, gamma, cfg.alpha)?;
        let dir = test_1d_directed(v, gamma, sign, cfg.alpha)?;
        let line = json!({
            "config_hash": run.prov.config_hash,
            "seed": run.prov.seed,
            "arm": arm,
            "statistic": kind,
            "f_u": v,
            "gamma": gamma,
            "h_u_observed": h,
            "h_u_theory": h_theory,
            "two_sided": two,
            "directed": dir,
        });
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    std::fs::write(run.path("test1d.jsonl"), lines)?;
    Ok(())
}

pub fn test2d(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    let th = Theory::new(run)?;
    let (exp, g) = replicate_once(run, StatisticKind::TwoD)?;
    let h = exp.deterministic;
    let mut lines = String::new();
    for (arm, v) in [("null", g), ("edge", [g[0] + h[0], g[1] + h[1]])] {
        let r = test_2d(v, &th.cov, cfg.alpha)?;
        let cr = confidence_region(v, &th.cov, cfg.alpha)?;
        let line = json!({
            "config_hash": run.prov.config_hash,
            "seed": run.prov.seed,
            "arm": arm,
            "f": v,
            "mu": noncentrality(h, &th.cov)?,
            "mu_theory": noncentrality(th.h, &th.cov)?,
            "h_observed": h,
            "h_theory": th.h,
            "c_hat": th.cov,
            "test": r,
            "region_covers_h": cr.contains(h),
        });
        lines.push_str(&line.to_string());
        lines.push('\n');
        if arm == "edge" {
            let mut w = run.csv("confidence_region.csv", &["x", "y"])?;
            for p in cr.boundary(360)? {
                w.row_f64(&p)?;
            }
            w.finish()?;
        }
    }
    std::fs::write(run.path("test2d.jsonl"), lines)?;
    Ok(())
}

fn samples(run: &Run, statistic: StatisticKind) -> Result<SampleSet, CliError> {
    let spec = run.cfg.experiment(statistic, run.eval_path())?;
    Ok(run_replicates(&spec)?)
}

/// Gaussian density of a 1D score component.
fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

pub fn roc(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    let th = Theory::new(run)?;
    let kind = cfg.statistic;
    let s = samples(run, kind)?;
    let dim = kind.dim();

    let mut w = run.csv("samples.csv", &["arm", "f1", "f2"])?;
    for (arm, set) in [("null", &s.null_samples), ("edge", &s.alt_samples)] {
        for v in set.iter() {
            w.row(&[arm.to_string(), f(v[0]), f(v[1])])?;
        }
    }
    w.finish()?;

    let mut w = run.csv("hist.csv", &["component", "arm", "lo", "hi", "count"])?;
    for c in 0..dim {
        let (null, alt) = (s.null_component(c), s.alt_component(c));
        let edges = histogram_edges(&[&null, &alt], Binning::FreedmanDiaconis)?;
        for (arm, x) in [("null", &null), ("edge", &alt)] {
            let hst = histogram(x, &edges);
            for b in 0..hst.counts.len() {
                w.row(&[c.to_string(), arm.to_string(), f(edges[b]), f(edges[b + 1]), hst.counts[b].to_string()])?;
            }
        }
    }
    w.finish()?;

    let mut scores: Vec<(&str, Score, TheoryKind)> = Vec::new();
    let mut pdf_rows: Vec<[f64; 3]> = Vec::new();
    match kind.weight() {
        Some(u) => {
            let (hu, gamma) = th.one_d(u);
            scores.push(("two_sided", Score::TwoSided { gamma }, TheoryKind::TwoSided { h_u: hu, gamma }));
            scores.push((
                "directed",
                Score::Directed { gamma, sign: hu.signum() },
                TheoryKind::Directed { h_u: hu, gamma },
            ));
            let lo = hu.min(0.0) - 5.0 * gamma;
            let hi = hu.max(0.0) + 5.0 * gamma;
            for i in 0..=400 {
                let x = lo + (hi - lo) * i as f64 / 400.0;
                pdf_rows.push([x, normal_pdf(x, 0.0, gamma), normal_pdf(x, hu, gamma)]);
            }
        }
        None => {
            scores.push(("quadratic", Score::Quadratic { cov: th.cov }, TheoryKind::TwoD { h: th.h, cov: th.cov }));
            let sd = th.cov.c11.sqrt();
            let lo = th.h[0].min(0.0) - 5.0 * sd;
            let hi = th.h[0].max(0.0) + 5.0 * sd;
            for i in 0..=400 {
                let x = lo + (hi - lo) * i as f64 / 400.0;
                pdf_rows.push([x, normal_pdf(x, 0.0, sd), normal_pdf(x, th.h[0], sd)]);
            }
        }
    }
    let mut w = run.csv("pdf.csv", &["f1", "pdf_null", "pdf_edge"])?;
    for r in &pdf_rows {
        w.row_f64(r)?;
    }
    w.finish()?;

    let mut w = run.csv("roc.csv", &["score", "source", "alpha", "tpr"])?;
    let mut aucs = serde_json::Map::new();
    for (name, score, theory) in &scores {
        let emp = empirical_roc(&score.eval_all(&s.null_samples)?, &score.eval_all(&s.alt_samples)?)?;
        let thr = theoretical_roc(theory, 400)?;
        for (src, curve) in [("empirical", &emp), ("theory", &thr)] {
            for (a, t) in curve.alpha.iter().zip(&curve.tpr) {
                w.row(&[name.to_string(), src.to_string(), f(*a), f(*t)])?;
            }
        }
        aucs.insert(
            name.to_string(),
            json!({
                "auc_empirical": emp.auc,
                "auc_theory": thr.auc,
                "power_empirical": emp.tpr_at(cfg.alpha),
                "power_theory": theory.power(cfg.alpha)?,
            }),
        );
    }
    w.finish()?;

    let null_report = gaussianity_report(&s.null_samples, dim, (dim == 2).then_some(&th.cov))?;
    let alt_report = gaussianity_report(&s.alt_samples, dim, None)?;
    let mut w = run.csv(
        "gaussianity.csv",
        &["arm", "component", "mean", "variance", "skewness", "excess_kurtosis", "skewness_band", "kurtosis_band"],
    )?;
    for (arm, rep) in [("null", &null_report), ("edge", &alt_report)] {
        for (c, m) in rep.components.iter().enumerate() {
            w.row(&[
                arm.to_string(),
                c.to_string(),
                f(m.mean),
                f(m.variance),
                f(m.skewness),
                f(m.excess_kurtosis),
                f(m.skewness_band),
                f(m.kurtosis_band),
            ])?;
        }
    }
    w.finish()?;

    let mut body = th.json();
    body["statistic"] = json!(kind);
    body["n_null"] = json!(s.null_samples.len());
    body["n_alt"] = json!(s.alt_samples.len());
    body["observed_deterministic"] = json!(s.deterministic);
    body["scores"] = Value::Object(aucs);
    body["gaussianity_null"] = serde_json::to_value(&null_report).expect("report serializes");
    if dim == 2 {
        let mut cover = serde_json::Map::new();
        for a in [0.05, 0.32] {
            let hits = s
                .alt_samples
                .iter()
                .map(|v| confidence_region(*v, &th.cov, a).map(|e| e.contains(s.deterministic)))
                .collect::<sma_core::Result<Vec<bool>>>()?;
            cover.insert(a.to_string(), json!(hits.iter().filter(|&&b| b).count() as f64 / hits.len() as f64));
        }
        body["region_coverage"] = Value::Object(cover);
        write_pdf2d(run, &th)?;
    }
    run.summary("roc.json", body)
}

/// Predicted null and edge densities of `F` on a square grid.
fn write_pdf2d(run: &Run, th: &Theory) -> CmdResult {
    let sd = th.cov.c11.sqrt().max(th.cov.c22.sqrt());
    let hn = th.h[0].hypot(th.h[1]);
    let reach = hn + 4.0 * sd;
    let norm = 1.0 / (2.0 * PI * th.cov.det().sqrt());
    let mut w = run.csv("pdf2d.csv", &["f1", "f2", "pdf_null", "pdf_edge"])?;
    let n = 80;
    for i in 0..=n {
        for j in 0..=n {
            let x = [-reach + 2.0 * reach * i as f64 / n as f64, -reach + 2.0 * reach * j as f64 / n as f64];
            let p0 = norm * (-0.5 * th.cov.inv_quad(x)?).exp();
            let p1 = norm * (-0.5 * th.cov.inv_quad([x[0] - th.h[0], x[1] - th.h[1]])?).exp();
            w.row_f64(&[x[0], x[1], p0, p1])?;
        }
    }
    Ok(w.finish()?)
}

/// Edge samples scaled by `1 / |H|` with the predicted `1 - alpha` circles.
pub fn confidence_spread(run: &Run, alphas: &[f64]) -> CmdResult {
    let th = Theory::new(run)?;
    let s = samples(run, StatisticKind::TwoD)?;
    let hn = th.h[0].hypot(th.h[1]);
    let mut w = run.csv("cr_samples.csv", &["f1", "f2"])?;
    for v in &s.alt_samples {
        w.row_f64(&[v[0] / hn, v[1] / hn])?;
    }
    w.finish()?;
    let mut w = run.csv("cr_circles.csv", &["alpha", "x", "y"])?;
    let mut inside = serde_json::Map::new();
    for &a in alphas {
        let e = confidence_region(th.h, &th.cov, a)?;
        for p in e.boundary(180)? {
            w.row_f64(&[a, p[0] / hn, p[1] / hn])?;
        }
        let c = s.alt_samples.iter().filter(|v| e.contains(**v)).count() as f64 / s.alt_samples.len() as f64;
        inside.insert(a.to_string(), json!(c));
    }
    w.finish()?;
    run.summary("cr.json", json!({ "h_norm": hn, "fraction_inside": inside }))
}

pub fn power_curve(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    if !(cfg.noise.sigma > 0.0) {
        return Err(sma_core::SmaError::InvalidParameter("power curve needs a positive reference sigma".into()).into());
    }
    let th = Theory::new(run)?;
    let (hu, gamma) = th.one_d(one_d_weight(cfg.statistic));
    let inputs = PowerInputs { sigma_ref: cfg.noise.sigma, h_u: hu, gamma_ref: gamma, h: th.h, cov_ref: th.cov };
    let rows = power_vs_sigma(&inputs, &cfg.sweep.sigmas, cfg.alpha)?;
    let mut w = run.csv("power_vs_sigma.csv", &["sigma", "power_1d", "power_1d_directed", "power_2d"])?;
    for r in &rows {
        w.row_f64(&[r.sigma, r.power_1d, r.power_1d_directed, r.power_2d])?;
    }
    w.finish()?;
    run.summary("power_curve.json", json!({ "inputs": inputs, "alpha": cfg.alpha }))
}

/// Isotropic `nu` at each sweep level, scaled from the reference level.
fn nu_at(th: &Theory, sigma_ref: f64, s: f64) -> sma_core::Result<f64> {
    Ok(isotropic_nu(&th.cov)? * s / sigma_ref)
}

pub fn uq_direction(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    let th = Theory::new(run)?;
    let nu = isotropic_nu(&th.cov)?;
    let mut w = run.csv("direction_pdf.csv", &["sigma", "theta", "pdf"])?;
    for &s in &cfg.sweep.sigmas {
        let pdf = PolarPdf::direction(th.h, nu_at(&th, cfg.noise.sigma, s)?, 360)?;
        for (t, v) in pdf.grid.iter().zip(&pdf.values) {
            w.row_f64(&[s, *t, *v])?;
        }
    }
    w.finish()?;
    let mut w = run.csv("direction_coverage.csv", &["omega_deg", "coverage"])?;
    for i in 0..=180 {
        let om = i as f64;
        w.row_f64(&[om, direction_coverage(om.to_radians(), th.h, nu)?])?;
    }
    w.finish()?;
    let omega = direction_interval(1.0 - cfg.alpha, th.h, nu)?;
    run.summary(
        "uq_direction.json",
        json!({
            "h_norm": th.h[0].hypot(th.h[1]),
            "nu": nu,
            "omega_deg": omega.to_degrees(),
            "level": 1.0 - cfg.alpha,
        }),
    )
}

pub fn uq_magnitude(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    let th = Theory::new(run)?;
    let nu = isotropic_nu(&th.cov)?;
    let hn = th.h[0].hypot(th.h[1]);
    let mut w = run.csv("magnitude_pdf.csv", &["sigma", "t_over_h", "pdf"])?;
    for &s in &cfg.sweep.sigmas {
        let pdf = PolarPdf::magnitude(th.h, nu_at(&th, cfg.noise.sigma, s)?, 400)?;
        for (t, v) in pdf.grid.iter().zip(&pdf.values) {
            w.row_f64(&[s, t / hn, v * hn])?;
        }
    }
    w.finish()?;
    let mut w = run.csv("magnitude_coverage.csv", &["r_over_h", "coverage"])?;
    for i in 0..200 {
        let r = i as f64 / 200.0;
        w.row_f64(&[r, magnitude_coverage(r * hn, th.h, nu)?])?;
    }
    w.finish()?;
    let level = 1.0 - cfg.alpha;
    let r = magnitude_interval(level, th.h, nu).ok();
    run.summary(
        "uq_magnitude.json",
        json!({
            "h_norm": hn,
            "nu": nu,
            "r": r,
            "r_over_h": r.map(|r| r / hn),
            "level": level,
        }),
    )
}

pub fn scan(run: &Run) -> CmdResult {
    let cfg = &run.cfg;
    let grid = cfg.sampling_grid()?;
    let kernel = run.kernel();
    let phantom: Phantom = cfg.phantom()?;
    let clean = sample_radon(&phantom, &grid)?;
    let mut model = cfg.noise_model();
    if let Some(target) = cfg.scan.nsr {
        model = model.with_sigma(model.sigma.with_level(sampling::sigma_for_nsr(&clean, &model, target)));
    }
    model.validate(&grid)?;
    let noise = if cfg.noise.draw { sampling::draw_noise(&grid, &model, cfg.seed) } else { vec![0.0; grid.len()] };
    let data = NoisyData::new(clean, noise)?;
    let eps = grid.epsilon;
    let step = cfg.scan.step_fraction * eps;
    let c = frame_center(cfg);
    let half = 0.5 * (cfg.scan.frame_pixels.max(2) - 1) as f64 * step;
    let bbox = BBox::centered(c, half);
    let img = fbp_image_banded(&data.select(PatchPart::Full), &kernel, bbox, step, cfg.scan.phases)?;
    let img_clean = fbp_image_banded(&data.select(PatchPart::Deterministic), &kernel, bbox, step, cfg.scan.phases)?;
    let mut sc = ScanConfig { rho: cfg.rho, stride: 1, step_fraction: cfg.scan.step_fraction, threshold: cfg.scan.threshold };
    sc = match cfg.scan.stride {
        Some(s) => ScanConfig { stride: s, ..sc },
        None => sc.with_default_stride(),
    };
    let ctx = CovContext::from_noise(c, &grid, &model, Arc::new(kernel.clone()));
    let null = ScanNull::from_context(&ctx, cfg.rho)?;
    let map = scan_map(&img, eps, &sc, &null)?;
    let map_clean = scan_map(&img_clean, eps, &sc, &null)?;

    write_image_pgm(&run.path("image.pgm"), &img, Some(&run.prov))?;
    let mut w = run.csv("edgemap_mag.csv", &["x", "y", "mag", "mag_noiseless", "p_value"])?;
    for i in 0..map.mag.len() {
        let p = map.centers[i];
        w.row_f64(&[p[0], p[1], map.mag[i], map_clean.mag[i], map.p_value[i]])?;
    }
    w.finish()?;
    let origin = Some((map.centers[0], sc.stride as f64 * step));
    write_pgm16(&run.path("edgemap_mag.pgm"), map.nx, map.ny, &map.mag, origin, Some(&run.prov))?;
    write_pgm16(&run.path("edgemap_mag_noiseless.pgm"), map.nx, map.ny, &map_clean.mag, origin, Some(&run.prov))?;
    let mut w = run.csv("edgemap_theta.csv", &["x", "y", "theta", "sign", "edge"])?;
    for i in 0..map.mag.len() {
        let p = map.centers[i];
        // Zero away from detected edges.
        let t = if map.mask[i] { map.theta[i].unwrap_or(0.0) } else { 0.0 };
        w.row(&[f(p[0]), f(p[1]), f(t), map.sign[i].to_string(), (map.mask[i] as u8).to_string()])?;
    }
    w.finish()?;
    let mut w = run.csv("quiver.csv", &["x", "y", "ux", "uy", "mag", "p_value"])?;
    for a in &map.quiver {
        w.row_f64(&[a.center[0], a.center[1], a.dir[0], a.dir[1], a.mag, a.p_value])?;
    }
    w.finish()?;
    let pts: Vec<[f64; 2]> = map.quiver.iter().map(|a| a.center).collect();
    let d0 = phantom.disks[0];
    let hd = hausdorff_to_circle(&pts, d0.center, d0.radius, 7200);
    run.summary(
        "scan.json",
        json!({
            "sigma": model.sigma.level(),
            "nsr": sampling::nsr(&data.clean, &data.noise),
            "stride": sc.stride,
            "centers": map.mag.len(),
            "masked": pts.len(),
            "null_first_center": map.cov[0],
            "hausdorff_to_first_disk": if hd.is_finite() { json!(hd) } else { Value::Null },
            "hausdorff_over_epsilon": if hd.is_finite() { json!(hd / eps) } else { Value::Null },
        }),
    )
}

/// Line profiles for a family of noise levels plus the 1D AUCs at each.
pub fn sigma_profiles(run: &Run, sigmas: &[f64]) -> CmdResult {
    let cfg = &run.cfg;
    let grid = cfg.sampling_grid()?;
    let kernel = run.kernel();
    let clean = sample_radon(&cfg.phantom()?, &grid)?;
    let data = NoisyData::new(clean, run.noise(&grid))?;
    let y = cfg.recon.profile_y.unwrap_or(cfg.phantom.disks[0].cy);
    line_profile(run, &data, &kernel, y, sigmas, "profiles.csv")?;

    // Local profiles along the window for the same levels.
    let edge = cfg.edge_point()?;
    let n = (2.0 * cfg.rho / cfg.patch_step).round() as usize;
    let ts: Vec<f64> = (0..=n).map(|i| -cfg.rho + i as f64 * cfg.patch_step).collect();
    let pts: Vec<[f64; 2]> = ts
        .iter()
        .map(|t| [edge.x0[0] + grid.epsilon * t * edge.theta0[0], edge.x0[1] + grid.epsilon * t * edge.theta0[1]])
        .collect();
    let det = fbp_points(&data.select(PatchPart::Deterministic), &kernel, &pts)?;
    let noise = fbp_points(&data.select(PatchPart::NoiseOnly), &kernel, &pts)?;
    let mut w = run.csv("local_profiles.csv", &["sigma", "t", "noiseless", "noise", "noisy"])?;
    for &s in sigmas {
        let r = if cfg.noise.sigma > 0.0 { s / cfg.noise.sigma } else { 0.0 };
        for i in 0..ts.len() {
            w.row_f64(&[s, ts[i], det[i], r * noise[i], det[i] + r * noise[i]])?;
        }
    }
    w.finish()?;

    let mut w = run.csv(
        "auc.csv",
        &["statistic", "sigma", "auc_theory_two_sided", "auc_empirical_two_sided", "auc_theory_directed", "auc_empirical_directed"],
    )?;
    for kind in [StatisticKind::LinearU, StatisticKind::SgnU] {
        let mut spec = cfg.experiment(kind, run.eval_path())?;
        let exp = Experiment::new(&spec)?;
        for &s in sigmas {
            spec.noise = spec.noise.with_sigma(spec.noise.sigma.with_level(s));
            let mut e = exp.clone();
            e.spec = spec.clone();
            e.stds = spec.noise.std_table(&spec.grid);
            let set = sma_core::montecarlo::run_with(&e)?;
            let sub = run.derived_theory(s)?;
            let (hu, gamma) = sub.one_d(one_d_weight(kind));
            let mut row = vec![if kind == StatisticKind::LinearU { "linear_u" } else { "sgn_u" }.to_string(), f(s)];
            for (score, theory) in [
                (Score::TwoSided { gamma }, TheoryKind::TwoSided { h_u: hu, gamma }),
                (Score::Directed { gamma, sign: hu.signum() }, TheoryKind::Directed { h_u: hu, gamma }),
            ] {
                let emp = empirical_roc(&score.eval_all(&set.null_samples)?, &score.eval_all(&set.alt_samples)?)?;
                row.push(f(theoretical_roc(&theory, 400)?.auc));
                row.push(f(emp.auc));
            }
            w.row(&row)?;
        }
    }
    Ok(w.finish()?)
}

impl Run {
    fn derived_theory(&self, sigma: f64) -> Result<Theory, CliError> {
        let mut cfg = self.cfg.clone();
        cfg.noise.sigma = sigma;
        let r = Run { cfg, out: self.out.clone(), prov: self.prov.clone(), force_direct: self.force_direct };
        Theory::new(&r)
    }
}

/// Phantom indicator on a square grid covering the support.
pub fn phantom_map(run: &Run, pixels: usize) -> CmdResult {
    let ph = run.cfg.phantom()?;
    let mut values = Vec::with_capacity(pixels * pixels);
    let step = 2.0 * ph.support / (pixels - 1) as f64;
    for iy in 0..pixels {
        for ix in 0..pixels {
            values.push(ph.eval([-ph.support + ix as f64 * step, -ph.support + iy as f64 * step]));
        }
    }
    write_pgm16(
        &run.path("phantom.pgm"),
        pixels,
        pixels,
        &values,
        Some(([-ph.support, -ph.support], step)),
        Some(&run.prov),
    )?;
    Ok(())
}
