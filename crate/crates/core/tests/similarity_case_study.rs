use std::collections::BTreeSet;

use kmlead_core::casestudy::{self, K189, K407};
use kmlead_core::model::{BaselineProfile, CovariateSummary, StudyId};
use kmlead_core::similarity::{
    band, cluster_kmedoids, default_covariates, designate_profiles, dissimilarity_matrix, pam_swap,
    profile_dissimilarity, Aggregation, Band, DissimilarityMatrix,
};
use proptest::prelude::*;

/// Independent evaluation straight from the published percentages.
fn oracle(a: &[f64; 8], b: &[f64; 8]) -> (f64, f64) {
    // [median, min, max, female%, ecog0%, squamous%, never%, pdl1%]
    let sa = (a[2] - a[1]) / 4.0;
    let sb = (b[2] - b[1]) / 4.0;
    let mut d = vec![(a[0] - b[0]).abs() / ((sa * sa + sb * sb) / 2.0).sqrt()];
    for i in 3..8 {
        let (p, q) = (a[i] / 100.0, b[i] / 100.0);
        d.push((p - q).abs() / ((p * (1.0 - p) + q * (1.0 - q)) / 2.0).sqrt());
    }
    (d.iter().sum::<f64>() / 6.0, d.iter().cloned().fold(0.0, f64::max))
}

const CM9LA: [f64; 8] = [65.0, 59.0, 70.0, 30.0, 31.0, 31.0, 13.0, 60.0];
const CM227: [f64; 8] = [64.0, 26.0, 87.0, 32.6, 35.0, 28.0, 13.6, 67.9];
const POS_DUAL: [f64; 8] = [63.0, 27.0, 87.0, 20.4, 32.5, 36.7, 17.5, 63.0];
const KN189: [f64; 8] = [65.0, 34.0, 84.0, 38.0, 45.4, 0.0, 11.7, 63.4];
const KN407: [f64; 8] = [65.0, 29.0, 87.0, 20.9, 26.3, 97.5, 7.9, 63.3];

fn matrix(choices_pooled: bool, mode: Aggregation) -> DissimilarityMatrix {
    let covs = default_covariates();
    let choices = if choices_pooled {
        casestudy::pooled_choices()
    } else {
        casestudy::dual_arm_choices()
    };
    let profiles = designate_profiles(&casestudy::baseline_profiles(), &choices, &covs).unwrap();
    dissimilarity_matrix(&profiles, &covs, mode).unwrap()
}

#[test]
fn dual_arm_matrix_matches_oracle() {
    let avg = matrix(false, Aggregation::Average);
    let max = matrix(false, Aggregation::Maximum);
    let cases = [
        (casestudy::CM9LA, CM9LA),
        (casestudy::CM227, CM227),
        (casestudy::POSEIDON, POS_DUAL),
        (K189, KN189),
        (K407, KN407),
    ];
    for (la, a) in &cases {
        for (lb, b) in &cases {
            let (oa, om) = if la == lb { (0.0, 0.0) } else { oracle(a, b) };
            assert!((avg.get(la, lb).unwrap() - oa).abs() < 1e-12, "{la} {lb}");
            assert!((max.get(la, lb).unwrap() - om).abs() < 1e-12, "{la} {lb}");
        }
    }
    let pos_9la = avg.get(casestudy::POSEIDON, casestudy::CM9LA).unwrap();
    assert!((pos_9la - 0.1247).abs() < 5e-4, "{pos_9la}");
    let sq = max.get(K189, K407).unwrap();
    assert!(sq > 3.0 && (sq - 8.8318).abs() < 1e-3, "{sq}");
    assert_eq!(band(sq).unwrap(), Band::Extreme);
}

#[test]
fn mixed_cluster_is_small_on_average() {
    for pooled in [false, true] {
        let avg = matrix(pooled, Aggregation::Average);
        for a in casestudy::MIXED_HISTOLOGY {
            for b in casestudy::MIXED_HISTOLOGY {
                let d = avg.get(a, b).unwrap();
                assert!(d < 0.20, "{a} vs {b}: {d}");
                assert_eq!(band(d).unwrap(), Band::Small);
            }
        }
    }
}

#[test]
fn pooled_profile_brings_maximum_near_022() {
    let max = matrix(true, Aggregation::Maximum);
    let worst = casestudy::MIXED_HISTOLOGY
        .iter()
        .flat_map(|a| casestudy::MIXED_HISTOLOGY.iter().map(move |b| (a, b)))
        .map(|(a, b)| max.get(a, b).unwrap())
        .fold(0.0, f64::max);
    assert!((worst - 0.2215).abs() < 1e-3, "{worst}");
    let dual = matrix(false, Aggregation::Maximum);
    let worst_dual = dual.get(casestudy::CM227, casestudy::POSEIDON).unwrap();
    assert!((worst_dual - 0.2791).abs() < 1e-3, "{worst_dual}");
}

#[test]
fn three_clusters_in_both_modes() {
    let expected: BTreeSet<BTreeSet<String>> = [
        vec![K189],
        vec![K407],
        vec![casestudy::CM227, casestudy::CM9LA, casestudy::POSEIDON],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    for pooled in [false, true] {
        for mode in [Aggregation::Average, Aggregation::Maximum] {
            let r = cluster_kmedoids(&matrix(pooled, mode), Some(3), 7).unwrap();
            let got: BTreeSet<BTreeSet<String>> = r
                .clusters
                .iter()
                .map(|c| c.members.iter().cloned().collect())
                .collect();
            assert_eq!(got, expected, "pooled {pooled} mode {mode}");
            for (c, cl) in r.clusters.iter().enumerate() {
                assert!(cl.members.contains(&cl.medoid));
                assert!(cl.members.iter().all(|m| r.assignment[m] == c));
            }
        }
    }
}

// properties

fn arb_profile(label: &'static str) -> impl Strategy<Value = BaselineProfile> {
    (
        30.0..80.0f64,
        0.5..20.0f64,
        prop::collection::vec(0.01..0.99f64, 3),
        20u32..600,
    )
        .prop_map(move |(mean, sd, ps, n)| BaselineProfile {
            study: StudyId::new(label),
            arm_label: "A".into(),
            n,
            covariates: vec![
                CovariateSummary::mean_sd("m", mean, sd),
                CovariateSummary::proportion("p0", ps[0]),
                CovariateSummary::proportion("p1", ps[1]),
                CovariateSummary::proportion("p2", ps[2]),
            ],
        })
}

fn names() -> Vec<String> {
    ["m", "p0", "p1", "p2"].iter().map(|s| s.to_string()).collect()
}

fn scaled(p: &BaselineProfile, c: f64) -> BaselineProfile {
    let mut out = p.clone();
    if let kmlead_core::model::CovariateValue::ContinuousMeanSd { mean, sd } = &mut out.covariates[0].value {
        *mean *= c;
        *sd *= c;
    }
    out
}

proptest! {
    #[test]
    fn symmetric_order_free_and_scale_invariant(
        a in arb_profile("a"),
        b in arb_profile("b"),
        c in 0.01..100.0f64,
        rot in 0usize..4,
    ) {
        for mode in [Aggregation::Average, Aggregation::Maximum] {
            let ab = profile_dissimilarity(&a, &b, &names(), mode).unwrap().value;
            let ba = profile_dissimilarity(&b, &a, &names(), mode).unwrap().value;
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            let mut reordered = names();
            reordered.rotate_left(rot);
            let r = profile_dissimilarity(&a, &b, &reordered, mode).unwrap().value;
            prop_assert!((r - ab).abs() < 1e-12);
            let s = profile_dissimilarity(&scaled(&a, c), &scaled(&b, c), &names(), mode).unwrap().value;
            prop_assert!((s - ab).abs() < 1e-9 * (1.0 + ab));
        }
    }

    #[test]
    fn matrix_invariants(ps in prop::collection::vec(arb_profile("x"), 3..7)) {
        let ps: Vec<BaselineProfile> = ps
            .into_iter()
            .enumerate()
            .map(|(i, mut p)| { p.study = StudyId::new(format!("t{i}")); p })
            .collect();
        let m = dissimilarity_matrix(&ps, &names(), Aggregation::Average).unwrap();
        for i in 0..m.len() {
            prop_assert_eq!(m.values[i][i], 0.0);
            for j in 0..m.len() {
                prop_assert_eq!(m.values[i][j], m.values[j][i]);
                prop_assert!(m.values[i][j] >= 0.0);
            }
        }
    }

    #[test]
    fn swap_descends_to_a_local_optimum(
        ps in prop::collection::vec(arb_profile("x"), 4..9),
        k in 2usize..4,
    ) {
        let ps: Vec<BaselineProfile> = ps
            .into_iter()
            .enumerate()
            .map(|(i, mut p)| { p.study = StudyId::new(format!("t{i}")); p })
            .collect();
        let m = dissimilarity_matrix(&ps, &names(), Aggregation::Maximum).unwrap();
        let k = k.min(m.len() - 1);
        let run = pam_swap(&m, (0..k).collect());
        prop_assert!(run.history.windows(2).all(|w| w[1] <= w[0]));
        let cost = |med: &[usize]| -> f64 {
            (0..m.len())
                .map(|i| med.iter().map(|&j| m.values[i][j]).fold(f64::INFINITY, f64::min))
                .sum()
        };
        for slot in 0..k {
            for c in 0..m.len() {
                if run.medoids.contains(&c) { continue; }
                let mut t = run.medoids.clone();
                t[slot] = c;
                prop_assert!(cost(&t) >= run.cost - 1e-9);
            }
        }
    }
}
