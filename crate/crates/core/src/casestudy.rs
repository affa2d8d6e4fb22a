//! Published baseline summaries of five first-line NSCLC immunotherapy
//! trials, used by the demo and the worked examples.

use std::collections::BTreeMap;

use crate::model::{BaselineProfile, CovariateSummary, StudyId};
use crate::similarity::ProfileChoice;

pub const CM9LA: &str = "CheckMate-9LA";
pub const CM227: &str = "CheckMate-227";
pub const POSEIDON: &str = "POSEIDON";
pub const K189: &str = "KEYNOTE-189";
pub const K407: &str = "KEYNOTE-407";

/// Trials sharing a mixed squamous/non-squamous population.
pub const MIXED_HISTOLOGY: [&str; 3] = [CM227, CM9LA, POSEIDON];

#[allow(clippy::too_many_arguments)]
fn arm(
    study: &str,
    arm: &str,
    n: u32,
    age: (f64, f64, f64),
    female: f64,
    ecog0: f64,
    squamous: f64,
    never: f64,
    pdl1: f64,
) -> BaselineProfile {
    BaselineProfile {
        study: StudyId::new(study),
        arm_label: arm.into(),
        n,
        covariates: vec![
            CovariateSummary::median_range("age", age.0, age.1, age.2),
            CovariateSummary::proportion("female", female / 100.0),
            CovariateSummary::proportion("ecog0", ecog0 / 100.0),
            CovariateSummary::proportion("squamous", squamous / 100.0),
            CovariateSummary::proportion("never_smoker", never / 100.0),
            CovariateSummary::proportion("pdl1_ge1", pdl1 / 100.0),
        ],
    }
}

/// Experimental-arm profiles; POSEIDON contributes both of its arms.
pub fn baseline_profiles() -> Vec<BaselineProfile> {
    vec![
        arm(CM9LA, "Nivo+Ipi", 361, (65.0, 59.0, 70.0), 30.0, 31.0, 31.0, 13.0, 60.0),
        arm(CM227, "Nivo+Ipi", 583, (64.0, 26.0, 87.0), 32.6, 35.0, 28.0, 13.6, 67.9),
        arm(POSEIDON, "Treme+Durva+CT", 338, (63.0, 27.0, 87.0), 20.4, 32.5, 36.7, 17.5, 63.0),
        arm(POSEIDON, "Durva+CT", 338, (64.5, 32.0, 87.0), 25.1, 32.2, 37.9, 24.9, 66.3),
        arm(K189, "Pembro+Chemo", 410, (65.0, 34.0, 84.0), 38.0, 45.4, 0.0, 11.7, 63.4),
        arm(K407, "Pembro+Chemo", 278, (65.0, 29.0, 87.0), 20.9, 26.3, 97.5, 7.9, 63.3),
    ]
}

/// POSEIDON pooled across its two arms.
pub fn pooled_choices() -> BTreeMap<String, ProfileChoice> {
    BTreeMap::from([(POSEIDON.to_string(), ProfileChoice::Pooled)])
}

/// POSEIDON represented by its dual-checkpoint arm.
pub fn dual_arm_choices() -> BTreeMap<String, ProfileChoice> {
    BTreeMap::from([(
        POSEIDON.to_string(),
        ProfileChoice::Arm("Treme+Durva+CT".to_string()),
    )])
}
