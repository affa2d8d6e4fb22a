//! Baseline-profile dissimilarity between trials and k-medoids clustering.

mod kmedoids;
mod stddiff;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use kmedoids::{
    cluster_kmedoids, pam, pam_swap, silhouettes, Cluster, ClusteringResult, PamRun, DEFAULT_RESTARTS,
};
pub use stddiff::{
    approx_moments, band, covariate_std_diff, pooled_profile, profile_dissimilarity, std_diff_binary,
    std_diff_binary_corrected, std_diff_continuous, Aggregation, Band, ProfileDissimilarity, StdDiff,
    UNBOUNDED_CAP,
};

use crate::error::{Error, Result};
use crate::io::csv_text;
use crate::model::BaselineProfile;

pub const DISSIMILARITY_FILE: &str = "dissimilarity.csv";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const DISSIMILARITY_COLUMNS: [&str; 4] = ["trial_a", "trial_b", "mode", "D"];

/// Age, female, ECOG 0, squamous, never-smoker, PD-L1 >= 1%.
pub fn default_covariates() -> Vec<String> {
    ["age", "female", "ecog0", "squamous", "never_smoker", "pdl1_ge1"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub mode: Aggregation,
    pub covariates: Vec<String>,
    /// One line per capped covariate difference.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DissimilarityMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.values[self.index_of(a)?][self.index_of(b)?])
    }

    /// Upper-triangle entries `(a, b, D)` in label order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        let h = self.len();
        (0..h).flat_map(move |i| {
            ((i + 1)..h).map(move |j| (self.labels[i].as_str(), self.labels[j].as_str(), self.values[i][j]))
        })
    }
}

/// One row and column per profile, labelled by the rendered study id.
pub fn dissimilarity_matrix(
    profiles: &[BaselineProfile],
    covariates: &[String],
    mode: Aggregation,
) -> Result<DissimilarityMatrix> {
    if profiles.len() < 2 {
        return Err(Error::Input(format!(
            "dissimilarity needs at least 2 profiles, found {}",
            profiles.len()
        )));
    }
    let labels: Vec<String> = profiles.iter().map(|p| p.study.render()).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::Input(format!(
                "{l} has more than one profile; designate one arm or pool them"
            )));
        }
    }
    let h = profiles.len();
    let mut values = vec![vec![0.0; h]; h];
    let mut warnings = Vec::new();
    for i in 0..h {
        for j in (i + 1)..h {
            let pd = profile_dissimilarity(&profiles[i], &profiles[j], covariates, mode)?;
            for name in pd.capped() {
                warnings.push(format!(
                    "{} vs {}: {name} has zero pooled spread, difference capped at {UNBOUNDED_CAP}",
                    labels[i], labels[j]
                ));
            }
            values[i][j] = pd.value;
            values[j][i] = pd.value;
        }
    }
    Ok(DissimilarityMatrix {
        labels,
        values,
        mode,
        covariates: covariates.to_vec(),
        warnings,
    })
}

/// How a trial with several arm profiles contributes to the matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileChoice {
    Arm(String),
    Pooled,
}

/// One profile per trial, in order of first appearance. Trials with a
/// single arm use it; others need an entry in `choices`.
pub fn designate_profiles(
    profiles: &[BaselineProfile],
    choices: &BTreeMap<String, ProfileChoice>,
    covariates: &[String],
) -> Result<Vec<BaselineProfile>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_study: BTreeMap<String, Vec<&BaselineProfile>> = BTreeMap::new();
    for p in profiles {
        let key = p.study.render();
        if !by_study.contains_key(&key) {
            order.push(key.clone());
        }
        by_study.entry(key).or_default().push(p);
    }
    order
        .into_iter()
        .map(|study| {
            let arms = &by_study[&study];
            match choices.get(&study) {
                Some(ProfileChoice::Arm(label)) => arms
                    .iter()
                    .find(|a| &a.arm_label == label)
                    .map(|a| (*a).clone())
                    .ok_or_else(|| Error::Input(format!("{study}: no baseline profile for arm {label:?}"))),
                Some(ProfileChoice::Pooled) => {
                    let owned: Vec<BaselineProfile> = arms.iter().map(|a| (*a).clone()).collect();
                    pooled_profile(&owned, covariates)
                }
                None if arms.len() == 1 => Ok(arms[0].clone()),
                None => Err(Error::Input(format!(
                    "{study} has {} arm profiles; choose an arm or pooled",
                    arms.len()
                ))),
            }
        })
        .collect()
}

pub fn render_dissimilarity(matrices: &[DissimilarityMatrix]) -> String {
    csv_text(
        &DISSIMILARITY_COLUMNS,
        matrices.iter().flat_map(|m| {
            m.pairs()
                .map(|(a, b, d)| vec![a.to_string(), b.to_string(), m.mode.to_string(), d.to_string()])
                .collect::<Vec<_>>()
        }),
    )
}

/// Square grid for a heat map: header `trial` then the labels.
pub fn render_heatmap(m: &DissimilarityMatrix) -> String {
    let mut columns = vec!["trial"];
    columns.extend(m.labels.iter().map(String::as_str));
    csv_text(
        &columns,
        m.labels.iter().zip(&m.values).map(|(l, row)| {
            std::iter::once(l.clone())
                .chain(row.iter().map(|v| v.to_string()))
                .collect()
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub mode: Aggregation,
    #[serde(flatten)]
    pub result: ClusteringResult,
}

pub fn render_clusters(reports: &[ClusterReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CovariateSummary, StudyId};

    fn prof(study: &str, arm: &str, n: u32, p: f64) -> BaselineProfile {
        BaselineProfile {
            study: StudyId::new(study),
            arm_label: arm.into(),
            n,
            covariates: vec![CovariateSummary::proportion("x", p)],
        }
    }

    #[test]
    fn identical_profiles_give_zero_matrix() {
        let names = vec!["x".to_string()];
        let m = dissimilarity_matrix(&[prof("a", "A", 10, 0.3), prof("b", "B", 10, 0.3)], &names, Aggregation::Maximum)
            .unwrap();
        assert_eq!(m.values, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(dissimilarity_matrix(&[prof("a", "A", 10, 0.3)], &names, Aggregation::Average).is_err());
    }

    #[test]
    fn capped_entries_warn() {
        let names = vec!["x".to_string()];
        let m = dissimilarity_matrix(&[prof("a", "A", 0, 0.0), prof("b", "B", 0, 1.0)], &names, Aggregation::Average)
            .unwrap();
        assert_eq!(m.values[0][1], UNBOUNDED_CAP);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn designation_rules() {
        let names = vec!["x".to_string()];
        let ps = vec![prof("a", "A1", 100, 0.2), prof("a", "A2", 300, 0.6), prof("b", "B", 50, 0.5)];
        assert!(designate_profiles(&ps, &BTreeMap::new(), &names).is_err());
        let mut choices = BTreeMap::new();
        choices.insert("a".to_string(), ProfileChoice::Pooled);
        let out = designate_profiles(&ps, &choices, &names).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].n, 400);
        choices.insert("a".to_string(), ProfileChoice::Arm("A2".into()));
        let out = designate_profiles(&ps, &choices, &names).unwrap();
        assert_eq!(out[0].arm_label, "A2");
        choices.insert("a".to_string(), ProfileChoice::Arm("nope".into()));
        assert!(designate_profiles(&ps, &choices, &names).is_err());
    }

    #[test]
    fn csv_layouts() {
        let names = vec!["x".to_string()];
        let m = dissimilarity_matrix(
            &[prof("a", "A", 10, 0.3), prof("b", "B", 10, 0.5), prof("c", "C", 10, 0.5)],
            &names,
            Aggregation::Average,
        )
        .unwrap();
        let text = render_dissimilarity(std::slice::from_ref(&m));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "trial_a,trial_b,mode,D");
        assert_eq!(lines.len(), 2 + 3);
        assert!(lines[4].starts_with("b,c,average,0"));
        let heat = render_heatmap(&m);
        assert_eq!(heat.lines().nth(1).unwrap(), "trial,a,b,c");
        assert_eq!(heat.lines().count(), 5);
    }
}
