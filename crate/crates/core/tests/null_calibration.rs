use std::sync::Arc;

use sma_core::covariance::{cov_matrix, edge_vector, gamma_sq, h_u, CovContext, WeightKind};
use sma_core::inference::{beta_1d, power_2d, test_1d, test_2d};
use sma_core::montecarlo::*;
use sma_core::sampling::UniformConvention;
use sma_core::{Kernel, NoiseModel, SigmaProfile};

fn noise(sigma: f64) -> NoiseModel {
    NoiseModel::uniform(SigmaProfile::constant(sigma)).with_convention(UniformConvention::Width)
}

fn context(spec: &ExperimentSpec) -> CovContext {
    CovContext::from_noise(spec.edge.x0, &spec.grid, &spec.noise, Arc::new(Kernel::new(spec.kernel)))
}

fn within(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

#[test]
fn sample_variance_matches_gamma_sq() {
    for (kind, u) in [(StatisticKind::LinearU, WeightKind::Linear), (StatisticKind::SgnU, WeightKind::Sgn)] {
        let spec = ExperimentSpec::reference(kind, noise(3f64.sqrt()), 20_000, 41).unwrap();
        let s = run_replicates(&spec).unwrap();
        let m = MomentReport::new(&s.null_component(0));
        let g2 = gamma_sq(&context(&spec), u, spec.rho, spec.edge.theta0);
        assert!(within(m.variance, g2, 0.03), "{kind:?}: sample {} theory {g2}", m.variance);
        assert!(m.shape_ok(), "{kind:?}: {m:?}");
    }
}

#[test]
fn sample_covariance_matches_c_hat() {
    let spec = ExperimentSpec::reference(StatisticKind::TwoD, noise(3f64.sqrt()), 20_000, 43).unwrap();
    let s = run_replicates(&spec).unwrap();
    let c = cov_matrix(&context(&spec), spec.rho).unwrap();
    let rep = gaussianity_report(&s.null_samples, 2, Some(&c)).unwrap();
    assert!(rep.prediction_rel_error.unwrap() < 0.03, "{rep:?}");
    assert!(rep.shape_ok() && rep.ks_ok(), "{rep:?}");
    let sc = sample_covariance(&s.null_samples, 2);
    assert!(sc[1].abs() < 0.03 * c.c11);
}

#[test]
fn type_one_error_is_calibrated_through_the_pipeline() {
    let n = 10_000;
    for kind in [StatisticKind::LinearU, StatisticKind::TwoD] {
        let spec = ExperimentSpec::reference(kind, noise(3f64.sqrt()), n, 47).unwrap();
        let s = run_replicates(&spec).unwrap();
        let ctx = context(&spec);
        let c = cov_matrix(&ctx, spec.rho).unwrap();
        let g = gamma_sq(&ctx, WeightKind::Linear, spec.rho, spec.edge.theta0).sqrt();
        let mut pvals = Vec::with_capacity(n);
        for alpha in [0.01, 0.05, 0.1] {
            let mut rejected = 0usize;
            for v in &s.null_samples {
                let r = match kind {
                    StatisticKind::TwoD => test_2d(*v, &c, alpha).unwrap(),
                    _ => test_1d(v[0], g, alpha).unwrap(),
                };
                rejected += r.reject as usize;
                if alpha == 0.05 {
                    pvals.push(r.p_value);
                }
            }
            let rate = rejected as f64 / n as f64;
            let band = 4.0 * (alpha * (1.0 - alpha) / n as f64).sqrt();
            assert!((rate - alpha).abs() <= band, "{kind:?} alpha {alpha}: rate {rate}");
        }
        let d = ks_statistic(&pvals, |p| p.clamp(0.0, 1.0));
        assert!(d < ks_critical(n, 0.01), "{kind:?}: KS {d}");
    }
}

#[test]
fn deterministic_part_matches_edge_theory() {
    let spec = ExperimentSpec::reference(StatisticKind::TwoD, noise(0.0), 100, 1).unwrap();
    let exp = Experiment::new(&spec).unwrap();
    let k = Kernel::new(spec.kernel);
    // The disk's jump seen along the outward normal is -1.
    let e = edge_vector(&k, spec.rho, -1.0, spec.edge.theta0).unwrap();
    let h = exp.deterministic;
    assert!((h[0] - e.h[0]).abs() < 0.02 * e.norm() && (h[1] - e.h[1]).abs() < 0.02 * e.norm(), "{h:?} vs {:?}", e.h);

    let spec = ExperimentSpec::reference(StatisticKind::LinearU, noise(0.0), 100, 1).unwrap();
    let exp = Experiment::new(&spec).unwrap();
    let hu = h_u(&k, WeightKind::Linear, spec.rho, -1.0);
    assert!(within(exp.deterministic[0], hu, 0.02), "{} vs {hu}", exp.deterministic[0]);
}

#[test]
fn auc_is_ordered_on_the_sigma_grid() {
    let sigmas = [0.87, 1.73, 5.2, 34.6];
    let mut last = 1.0;
    for &s in &sigmas {
        let spec = ExperimentSpec::reference(StatisticKind::SgnU, noise(s), 4_000, 53).unwrap();
        let exp = Experiment::new(&spec).unwrap();
        let g = gamma_sq(&context(&spec), WeightKind::Sgn, spec.rho, spec.edge.theta0).sqrt();
        let hu = exp.deterministic[0];
        let theory = theoretical_roc(&TheoryKind::Directed { h_u: hu, gamma: g }, 400).unwrap();
        let samples = run_with(&exp).unwrap();
        let score = Score::Directed { gamma: g, sign: hu.signum() };
        let emp = empirical_roc(&score.eval_all(&samples.null_samples).unwrap(), &score.eval_all(&samples.alt_samples).unwrap()).unwrap();
        assert!(theory.auc < last, "sigma {s}: {} not below {last}", theory.auc);
        assert!((emp.auc - theory.auc).abs() < 0.02, "sigma {s}: {} vs {}", emp.auc, theory.auc);
        last = theory.auc;
    }
}

#[test]
fn two_d_power_dominates_one_d() {
    let spec = ExperimentSpec::reference(StatisticKind::TwoD, noise(3f64.sqrt()), 100, 1).unwrap();
    let ctx = context(&spec);
    let k = Kernel::new(spec.kernel);
    let c = cov_matrix(&ctx, spec.rho).unwrap();
    let h = edge_vector(&k, spec.rho, -1.0, spec.edge.theta0).unwrap().h;
    let hu = h_u(&k, WeightKind::Linear, spec.rho, -1.0);
    let g = gamma_sq(&ctx, WeightKind::Linear, spec.rho, spec.edge.theta0).sqrt();
    for s in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let p2 = power_2d(h, &c.scaled(s * s), 0.05).unwrap();
        let p1 = 1.0 - beta_1d(hu, g * s, 0.05).unwrap();
        assert!(p2 >= p1 - 1e-12, "scale {s}: 2D {p2} 1D {p1}");
    }
}

#[test]
fn eval_path_is_part_of_the_spec_hash() {
    let a = ExperimentSpec::reference(StatisticKind::TwoD, noise(1.0), 100, 9).unwrap();
    let mut b = a.clone();
    b.path = EvalPath::Direct;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash(), a.clone().hash());
    assert_eq!(a.hash().len(), 64);
}
