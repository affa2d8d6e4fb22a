//! Stage functions shared by the subcommands, and the end-to-end run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kmlead_core::io::{
    read_baseline, read_risk_tables, read_xy, render_ipd, write_file, IPD_FILE,
};
use kmlead_core::model::{BaselineProfile, KMCurve, ReconstructedIPD, RiskTable};
use kmlead_core::projection::{
    compare, fan_plot_data, render_comparison, render_medians, render_os_table, summarize, ArmComparison,
    Pairing, SurvivalSummary, COMPARISON_FILE, FAN_FILE, MEDIANS_FILE, OS_TABLE_FILE,
};
use kmlead_core::reconstruct::{
    choose_grid_with_follow_up, discretize, reconstruct_ipd, tabulate_events, TimeGrid,
};
use kmlead_core::report::ValidationReport;
use kmlead_core::similarity::{
    cluster_kmedoids, designate_profiles, dissimilarity_matrix, render_clusters, render_dissimilarity,
    render_heatmap, ClusterReport, DissimilarityMatrix, ProfileChoice, CLUSTERS_FILE, DISSIMILARITY_FILE,
    HEATMAP_FILE,
};
use kmlead_core::synthesis::{
    fit_bhm, fit_predictive_bsp, predictive_draws, render_bsp_fit, render_posterior, render_predictive,
    ChainDiagnostics, PosteriorSample, PredictiveBSPFit, PredictiveEnsemble, BSP_FIT_FILE, POSTERIOR_FILE,
    PREDICTIVE_FILE,
};
use kmlead_core::validate::validate_bundle;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::{ArmRef, PairingMode, PipelineConfig, ProjectionConfig, Seeds, SimilarityConfig, SynthesisConfig};
use crate::error::{Error, Result};

pub const RUN_FILE: &str = "run.json";

/// `heatmap.csv` + `average` -> `heatmap_average.csv`.
pub fn tagged(file: &str, tag: &str) -> String {
    match file.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_{tag}.{ext}"),
        None => format!("{file}_{tag}"),
    }
}

pub struct Bundle {
    pub curves: Vec<KMCurve>,
    pub tables: Vec<RiskTable>,
}

/// Parses curves and risk tables and fails with the full report if any
/// error finding remains.
pub fn load_bundle(xy: &Path, risk: &Path) -> Result<(Bundle, ValidationReport)> {
    let curves = read_xy(xy)?;
    let tables = read_risk_tables(risk)?;
    let report = validate_bundle(&curves, &tables);
    if report.has_errors() {
        return Err(Error::Invalid(report));
    }
    Ok((Bundle { curves, tables }, report))
}

pub fn load_baseline(path: &Path) -> Result<Vec<BaselineProfile>> {
    Ok(read_baseline(path)?)
}

pub struct ClusterStage {
    pub matrices: Vec<DissimilarityMatrix>,
    pub reports: Vec<ClusterReport>,
}

impl ClusterStage {
    /// Labels sharing `target`'s cluster under the first mode.
    pub fn members_with(&self, target: &str) -> Result<Vec<String>> {
        let r = &self.reports[0].result;
        let Some(&c) = r.assignment.get(target) else {
            return Err(Error::Usage(format!("target trial {target:?} has no baseline profile")));
        };
        Ok(r.clusters[c].members.clone())
    }
}

/// Multi-arm trials absent from `profiles` are pooled.
pub fn profile_choices(
    baselines: &[BaselineProfile],
    profiles: &BTreeMap<String, ProfileChoice>,
) -> BTreeMap<String, ProfileChoice> {
    let mut arms: BTreeMap<String, usize> = BTreeMap::new();
    for b in baselines {
        *arms.entry(b.study.render()).or_default() += 1;
    }
    let mut out = profiles.clone();
    for (study, n) in arms {
        if n > 1 {
            out.entry(study).or_insert(ProfileChoice::Pooled);
        }
    }
    out
}

pub fn cluster_stage(baselines: &[BaselineProfile], cfg: &SimilarityConfig, seed: u64) -> Result<ClusterStage> {
    let choices = profile_choices(baselines, &cfg.profiles);
    let profiles = designate_profiles(baselines, &choices, &cfg.covariates)?;
    let mut matrices = Vec::new();
    let mut reports = Vec::new();
    for &mode in &cfg.modes {
        let m = dissimilarity_matrix(&profiles, &cfg.covariates, mode)?;
        for w in &m.warnings {
            warn!("{mode}: {w}");
        }
        let result = cluster_kmedoids(&m, cfg.k, seed)?;
        info!(
            "{mode}: k = {}, mean silhouette {:.3}",
            result.k, result.mean_silhouette
        );
        matrices.push(m);
        reports.push(ClusterReport { mode, result });
    }
    Ok(ClusterStage { matrices, reports })
}

pub fn write_cluster_outputs(dir: &Path, stage: &ClusterStage) -> Result<()> {
    write_file(&dir.join(DISSIMILARITY_FILE), &render_dissimilarity(&stage.matrices))?;
    for m in &stage.matrices {
        write_file(&dir.join(tagged(HEATMAP_FILE, &m.mode.to_string())), &render_heatmap(m))?;
    }
    write_file(&dir.join(CLUSTERS_FILE), &render_clusters(&stage.reports)?)?;
    Ok(())
}

fn find_curve<'a>(curves: &'a [KMCurve], arm: &ArmRef) -> Option<&'a KMCurve> {
    curves
        .iter()
        .find(|c| c.study.render() == arm.study && c.arm_label == arm.arm)
}

fn find_table<'a>(tables: &'a [RiskTable], arm: &ArmRef) -> Option<&'a RiskTable> {
    tables
        .iter()
        .find(|t| t.study.render() == arm.study && t.arm(&arm.arm).is_some())
}

/// Reconstructs one arm, joining curve and risk table on the exact
/// study and arm label.
pub fn reconstruct_arm(bundle: &Bundle, arm: &ArmRef) -> Result<(ReconstructedIPD, RiskTable)> {
    let curve = find_curve(&bundle.curves, arm)
        .ok_or_else(|| Error::Usage(format!("no curve for {arm} in xy.csv")))?;
    let table = find_table(&bundle.tables, arm)
        .ok_or_else(|| Error::Usage(format!("no risk-table arm for {arm}")))?;
    let counts = &table.arm(&arm.arm).expect("checked by find_table").counts;
    let ipd = reconstruct_ipd(curve, &table.time_grid, counts)?;
    Ok((ipd, table.clone()))
}

/// Every curve that has a risk-table arm of the same name.
pub fn reconstruct_all(bundle: &Bundle) -> Result<Vec<ReconstructedIPD>> {
    bundle
        .curves
        .iter()
        .map(|c| {
            let arm = ArmRef {
                study: c.study.render(),
                arm: c.arm_label.clone(),
            };
            reconstruct_arm(bundle, &arm).map(|(ipd, _)| ipd)
        })
        .collect()
}

/// Finest risk-table grid, long enough for the follow-up and every
/// projection time.
pub fn analysis_grid(tables: &[RiskTable], ipd: &[ReconstructedIPD], horizon: f64) -> Result<TimeGrid> {
    let follow_up = ipd
        .iter()
        .flat_map(|a| a.records.iter().map(|r| r.time))
        .fold(horizon, f64::max);
    Ok(choose_grid_with_follow_up(tables, Some(follow_up))?)
}

pub struct ClassFit {
    pub name: String,
    pub posterior: PosteriorSample,
    pub ensemble: PredictiveEnsemble,
    pub fit: PredictiveBSPFit,
}

pub fn synthesize_class(
    name: &str,
    ipd: &[ReconstructedIPD],
    grid: &TimeGrid,
    cfg: &SynthesisConfig,
    (mcmc_seed, draw_seed): (u64, u64),
) -> Result<ClassFit> {
    let tables = ipd
        .iter()
        .map(|a| tabulate_events(&discretize(a, grid), grid))
        .collect::<kmlead_core::Result<Vec<_>>>()?;
    let posterior = fit_bhm(&tables, grid, &cfg.mcmc(mcmc_seed))?;
    if let Some(d) = &posterior.diagnostics {
        info!(
            "{name}: acceptance {:.2?}, max split-Rhat {:.4}",
            d.acceptance,
            d.max_rhat()
        );
    }
    let ensemble = predictive_draws(&posterior, grid, cfg.draws, draw_seed)?;
    let fit = fit_predictive_bsp(&posterior, &ensemble)?;
    Ok(ClassFit {
        name: name.to_string(),
        posterior,
        ensemble,
        fit,
    })
}

/// Writes `posterior`, `predictive` and `bsp_fit`, tagged with `tag` when given.
pub fn write_class_outputs(dir: &Path, fit: &ClassFit, tag: Option<&str>) -> Result<()> {
    let name = |f: &str| match tag {
        Some(t) => dir.join(tagged(f, t)),
        None => dir.join(f),
    };
    write_file(&name(POSTERIOR_FILE), &render_posterior(&fit.posterior))?;
    write_file(&name(PREDICTIVE_FILE), &render_predictive(&fit.ensemble))?;
    let mut json = render_bsp_fit(&fit.fit)?;
    json.push('\n');
    write_file(&name(BSP_FIT_FILE), &json)?;
    Ok(())
}

pub struct ProjectionStage {
    pub summary_a: SurvivalSummary,
    pub summary_b: SurvivalSummary,
    pub comparison: ArmComparison,
}

pub fn pairing(mode: PairingMode, seed: u64) -> Pairing {
    match mode {
        PairingMode::Index => Pairing::Index,
        PairingMode::Shuffle => Pairing::Shuffle(seed),
    }
}

pub fn project(
    a: (&str, &PredictiveEnsemble),
    b: (&str, &PredictiveEnsemble),
    cfg: &ProjectionConfig,
    pairing_seed: u64,
) -> Result<ProjectionStage> {
    let comparison = compare(a, b, cfg.margin, &cfg.times, pairing(cfg.pairing, pairing_seed))?;
    Ok(ProjectionStage {
        summary_a: summarize(a.1, &cfg.times)?,
        summary_b: summarize(b.1, &cfg.times)?,
        comparison,
    })
}

pub fn write_projection(
    dir: &Path,
    stage: &ProjectionStage,
    ensembles: &[(&str, &PredictiveEnsemble)],
    published: &[KMCurve],
) -> Result<()> {
    let c = &stage.comparison;
    write_file(
        &dir.join(OS_TABLE_FILE),
        &render_os_table(
            (&c.label_a, &stage.summary_a),
            (&c.label_b, &stage.summary_b),
            &c.delta_os,
        ),
    )?;
    write_file(
        &dir.join(MEDIANS_FILE),
        &render_medians(&[(&c.label_a, &c.median_a), (&c.label_b, &c.median_b)]),
    )?;
    let mut json = render_comparison(c)?;
    json.push('\n');
    write_file(&dir.join(COMPARISON_FILE), &json)?;
    write_file(&dir.join(FAN_FILE), &fan_plot_data(ensembles, published))?;
    Ok(())
}

/// Machine-readable record of what the pipeline did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub target: String,
    pub target_cluster: Vec<String>,
    pub classes: Vec<ClassSummary>,
    pub grid_end: f64,
    pub prob_benefit: f64,
    pub margin: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub name: String,
    pub arms: Vec<ArmRef>,
    /// Configured arms left out because their trial is outside the
    /// target's cluster.
    pub excluded: Vec<ArmRef>,
    pub diagnostics: Option<ChainDiagnostics>,
    pub c_star: f64,
    pub ess: f64,
}

/// Runs every stage and writes all outputs under `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, seed: u64) -> Result<RunSummary> {
    let out = &cfg.out_dir;
    let seeds = Seeds::derive(seed, cfg.classes.len());
    let mut outputs: Vec<PathBuf> = Vec::new();

    let (bundle, report) = load_bundle(&cfg.inputs.xy, &cfg.inputs.risk_table)?;
    if !report.is_clean() {
        warn!("input validation warnings:\n{report}");
    }
    let baselines = load_baseline(&cfg.inputs.baseline)?;

    let clusters = cluster_stage(&baselines, &cfg.similarity, seeds.clustering)?;
    write_cluster_outputs(out, &clusters)?;
    outputs.push(DISSIMILARITY_FILE.into());
    outputs.extend(
        clusters
            .matrices
            .iter()
            .map(|m| tagged(HEATMAP_FILE, &m.mode.to_string()).into()),
    );
    outputs.push(CLUSTERS_FILE.into());
    let target_cluster = clusters.members_with(&cfg.synthesis.target)?;
    info!("target cluster: {}", target_cluster.join(", "));

    // restrict each class to arms from trials in the target's cluster
    let mut class_arms = Vec::new();
    for class in &cfg.classes {
        let (kept, excluded): (Vec<ArmRef>, Vec<ArmRef>) = class
            .arms
            .iter()
            .cloned()
            .partition(|a| target_cluster.contains(&a.study));
        for a in &excluded {
            warn!("{}: {a} is outside the target cluster and is excluded", class.name);
        }
        if kept.is_empty() {
            return Err(Error::Usage(format!(
                "class {} has no arms in the target's cluster",
                class.name
            )));
        }
        class_arms.push((kept, excluded));
    }

    let mut ipd = Vec::new();
    let mut tables = Vec::new();
    let mut published = Vec::new();
    for (kept, _) in &class_arms {
        let mut class_ipd = Vec::new();
        for arm in kept {
            let (a, t) = reconstruct_arm(&bundle, arm)?;
            published.push(find_curve(&bundle.curves, arm).expect("reconstructed").clone());
            class_ipd.push(a);
            tables.push(t);
        }
        ipd.push(class_ipd);
    }
    let all_ipd: Vec<ReconstructedIPD> = ipd.iter().flatten().cloned().collect();
    write_file(&out.join(IPD_FILE), &render_ipd(&all_ipd))?;
    outputs.push(IPD_FILE.into());

    // one grid for both classes so their draws can be paired
    let horizon = cfg.projection.times.iter().copied().fold(0.0, f64::max);
    let grid = analysis_grid(&tables, &all_ipd, horizon)?;
    info!("analysis grid: {} points to month {}", grid.len(), grid.last());

    let mut fits = Vec::new();
    for ((class, class_ipd), &seeds) in cfg.classes.iter().zip(&ipd).zip(&seeds.classes) {
        let fit = synthesize_class(&class.name, class_ipd, &grid, &cfg.synthesis, seeds)?;
        write_class_outputs(out, &fit, Some(&class.name))?;
        for f in [POSTERIOR_FILE, PREDICTIVE_FILE, BSP_FIT_FILE] {
            outputs.push(tagged(f, &class.name).into());
        }
        fits.push(fit);
    }

    let (fa, fb) = (&fits[0], &fits[1]);
    let stage = project(
        (&fa.name, &fa.ensemble),
        (&fb.name, &fb.ensemble),
        &cfg.projection,
        seeds.pairing,
    )?;
    write_projection(
        out,
        &stage,
        &[(&fa.name, &fa.ensemble), (&fb.name, &fb.ensemble)],
        &published,
    )?;
    outputs.extend([OS_TABLE_FILE, MEDIANS_FILE, COMPARISON_FILE, FAN_FILE].map(PathBuf::from));
    outputs.push(RUN_FILE.into());

    let summary = RunSummary {
        seed,
        target: cfg.synthesis.target.clone(),
        target_cluster,
        classes: fits
            .iter()
            .zip(class_arms)
            .map(|(f, (arms, excluded))| ClassSummary {
                name: f.name.clone(),
                arms,
                excluded,
                diagnostics: f.posterior.diagnostics.clone(),
                c_star: f.fit.c_star,
                ess: f.fit.ess,
            })
            .collect(),
        grid_end: grid.last(),
        prob_benefit: stage.comparison.prob_benefit,
        margin: stage.comparison.margin,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(kmlead_core::Error::from)?;
    json.push('\n');
    write_file(&out.join(RUN_FILE), &json)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kmlead_core::casestudy::{baseline_profiles, POSEIDON};

    #[test]
    fn tagging() {
        assert_eq!(tagged("heatmap.csv", "average"), "heatmap_average.csv");
        assert_eq!(tagged("bsp_fit.json", "mono"), "bsp_fit_mono.json");
        assert_eq!(tagged("plain", "x"), "plain_x");
    }

    #[test]
    fn unlisted_multi_arm_trials_are_pooled() {
        let b = baseline_profiles();
        let c = profile_choices(&b, &BTreeMap::new());
        assert_eq!(c.len(), 1);
        assert_eq!(c[POSEIDON], ProfileChoice::Pooled);
        let explicit = BTreeMap::from([(POSEIDON.to_string(), ProfileChoice::Arm("Durva+CT".into()))]);
        assert_eq!(profile_choices(&b, &explicit), explicit);
    }
}
