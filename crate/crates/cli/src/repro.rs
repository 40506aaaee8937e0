//! Canned figure runs on top of the configured base experiment.

use sma_core::montecarlo::{AltMode, StatisticKind};

use crate::commands::{self, CmdResult, Run};
use crate::error::CliError;

pub const FIGURES: &[&str] = &[
    "fig1", "fig3", "fig5", "fig7", "fig11", "fig12", "fig13", "fig14", "fig14a", "fig14b", "fig15", "fig16", "fig17",
];

const SQRT3: f64 = 1.732_050_807_568_877_2;

pub fn repro(base: &Run, figure: &str) -> CmdResult {
    match figure {
        "all" => {
            for f in FIGURES.iter().filter(|f| **f != "fig14a" && **f != "fig14b") {
                repro(base, f)?;
            }
            Ok(())
        }
        "fig1" => {
            let run = base.derived("fig1", |c| {
                c.recon.profile_y = Some(c.phantom.disks[0].cy);
            })?;
            commands::phantom_map(&run, 512)?;
            commands::simulate(&run)?;
            commands::recon(&run)
        }
        "fig3" => {
            let run = base.derived("fig3", |c| {
                c.statistic = StatisticKind::LinearU;
                c.n_null = 1000;
                c.n_alt = 1000;
                c.alt_mode = AltMode::Independent;
                c.noise.sigma = SQRT3;
            })?;
            commands::roc(&run)
        }
        "fig5" => {
            let run = base.derived("fig5", |c| {
                c.n_null = 1000;
                c.n_alt = 1000;
                c.noise.sigma = SQRT3;
                c.recon.profile_y = Some(c.phantom.disks[0].cy);
            })?;
            commands::sigma_profiles(&run, &[0.87, 1.73, 5.2, 34.6])
        }
        "fig7" => {
            let run = base.derived("fig7", |c| {
                c.statistic = StatisticKind::SgnU;
                c.n_null = 1000;
                c.n_alt = 1000;
                c.alt_mode = AltMode::Independent;
                c.noise.sigma = SQRT3;
            })?;
            commands::roc(&run)
        }
        "fig11" => {
            let run = base.derived("fig11", |c| {
                c.noise.draw = false;
            })?;
            commands::recon(&run)
        }
        "fig12" | "fig13" => {
            let run = base.derived(figure, |c| {
                c.statistic = StatisticKind::TwoD;
                c.noise.sigma = SQRT3;
            })?;
            commands::cov_report(&run)?;
            commands::roc(&run)
        }
        "fig14" => {
            repro(base, "fig14a")?;
            repro(base, "fig14b")
        }
        "fig14a" => {
            let run = base.derived("fig14a", |c| c.noise.sigma = SQRT3)?;
            commands::confidence_spread(&run, &[0.05, 0.32])
        }
        "fig14b" => {
            let run = base.derived("fig14b", |c| c.noise.sigma = SQRT3)?;
            commands::power_curve(&run)
        }
        "fig15" => {
            let run = base.derived("fig15", |c| {
                c.noise.sigma = SQRT3;
                c.sweep.sigmas = vec![0.87, 1.73, 3.46, 5.2];
            })?;
            commands::uq_direction(&run)
        }
        "fig16" => {
            let run = base.derived("fig16", |c| {
                c.noise.sigma = SQRT3;
                c.sweep.sigmas = vec![0.87, 1.73, 3.46, 5.2];
            })?;
            commands::uq_magnitude(&run)
        }
        "fig17" => {
            let run = base.derived("fig17", |c| c.scan.nsr = Some(0.15))?;
            commands::scan(&run)
        }
        other => Err(CliError::Config(format!("unknown figure `{other}`; expected one of {} or all", FIGURES.join(", ")))),
    }
}
