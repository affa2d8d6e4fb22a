//! Synthetic inputs for an end-to-end run: published-style curves and
//! numbers at risk for the mixed-histology trials, the case-study baseline
//! table and a matching config.

use std::path::{Path, PathBuf};

use kmlead_core::casestudy::{baseline_profiles, CM227, CM9LA, POSEIDON};
use kmlead_core::io::{render_baseline, render_risk_tables, render_xy, write_file, BASELINE_FILE, RISK_FILE, XY_FILE};
use kmlead_core::model::{KMCurve, RiskArm, RiskTable, StudyId};
use kmlead_core::similarity::{default_covariates, Aggregation};
use kmlead_core::simulate::{published_arm, simulate_weibull_arm, ArmSpec};
use kmlead_core::synthesis::Priors;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    ArmRef, ClassConfig, Inputs, PairingMode, PipelineConfig, ProjectionConfig, SimilarityConfig, SynthesisConfig,
};
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "demo.toml";
pub const MONO: &str = "mono";
pub const DUAL: &str = "dual";
const STEP: f64 = 3.0;

struct DemoArm {
    study: &'static str,
    label: &'static str,
    n: usize,
    median: f64,
    shape: f64,
}

const fn arm(study: &'static str, label: &'static str, n: usize, median: f64, shape: f64) -> DemoArm {
    DemoArm {
        study,
        label,
        n,
        median,
        shape,
    }
}

/// Medians are loosely shaped on the published trials; nothing here is
/// meant to reproduce them.
const ARMS: [DemoArm; 5] = [
    arm(CM227, "Nivo", 396, 15.2, 1.05),
    arm(CM227, "Nivo+Ipi", 583, 17.1, 0.95),
    arm(CM9LA, "Nivo+Ipi+CT", 361, 15.8, 1.0),
    arm(POSEIDON, "Treme+Durva+CT", 338, 14.0, 1.0),
    arm(POSEIDON, "Durva+CT", 338, 13.3, 1.1),
];

fn follow_up(study: &str) -> f64 {
    if study == CM9LA {
        48.0
    } else {
        60.0
    }
}

/// Curves and one multi-arm risk table per trial, on a 3-month grid.
pub fn demo_bundle(seed: u64) -> Result<(Vec<KMCurve>, Vec<RiskTable>)> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut curves = Vec::new();
    let mut tables: Vec<RiskTable> = Vec::new();
    for a in &ARMS {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let spec = ArmSpec {
            n: a.n,
            shape: a.shape,
            median_months: a.median,
            censor_fraction: 0.05,
            follow_up: follow_up(a.study),
        };
        let records = simulate_weibull_arm(&mut rng, &spec)?;
        let (curve, table) = published_arm(StudyId::new(a.study), a.label, &records, STEP)?;
        curves.push(curve);
        match tables.iter_mut().find(|t| t.study == table.study) {
            None => tables.push(table),
            Some(t) => {
                // arms of one trial share the trial's grid
                let k = t.time_grid.len().min(table.time_grid.len());
                t.time_grid.truncate(k);
                for existing in &mut t.arms {
                    existing.counts.truncate(k);
                }
                let mut counts = table.arms[0].counts.clone();
                counts.truncate(k);
                t.arms.push(RiskArm::new(a.label, counts));
            }
        }
    }
    Ok((curves, tables))
}

pub fn demo_config() -> PipelineConfig {
    let r = |study: &str, arm: &str| ArmRef {
        study: study.into(),
        arm: arm.into(),
    };
    PipelineConfig {
        seed: 7,
        inputs: Inputs {
            xy: XY_FILE.into(),
            risk_table: RISK_FILE.into(),
            baseline: BASELINE_FILE.into(),
        },
        out_dir: "out".into(),
        similarity: SimilarityConfig {
            covariates: default_covariates(),
            modes: vec![Aggregation::Average, Aggregation::Maximum],
            k: Some(3),
            profiles: Default::default(),
        },
        synthesis: SynthesisConfig {
            target: CM9LA.into(),
            chains: 4,
            iters: 20_000,
            burn_in: 10_000,
            thin: 5,
            force: false,
            n_total: None,
            draws: 4000,
            priors: Priors::default(),
        },
        classes: vec![
            ClassConfig {
                name: MONO.into(),
                arms: vec![r(CM227, "Nivo"), r(POSEIDON, "Durva+CT")],
            },
            ClassConfig {
                name: DUAL.into(),
                arms: vec![
                    r(CM227, "Nivo+Ipi"),
                    r(CM9LA, "Nivo+Ipi+CT"),
                    r(POSEIDON, "Treme+Durva+CT"),
                ],
            },
        ],
        projection: ProjectionConfig {
            margin: 3.0,
            times: vec![12.0, 24.0, 36.0, 48.0],
            pairing: PairingMode::Index,
        },
    }
}

/// Writes the demo inputs and `demo.toml` into `dir`; returns the config path.
pub fn write_demo(dir: &Path, seed: u64) -> Result<PathBuf> {
    let (curves, tables) = demo_bundle(seed)?;
    write_file(&dir.join(XY_FILE), &render_xy(&curves))?;
    write_file(&dir.join(RISK_FILE), &render_risk_tables(&tables))?;
    write_file(&dir.join(BASELINE_FILE), &render_baseline(&baseline_profiles()))?;
    let cfg = demo_config();
    cfg.check().map_err(Error::Usage)?;
    let path = dir.join(CONFIG_FILE);
    write_file(&path, &cfg.to_toml())?;
    Ok(path)
}
