//! Standardized differences between trial-level covariate summaries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BaselineProfile, CovariateSummary, CovariateValue};

/// Value reported for a difference whose pooled spread is zero.
pub const UNBOUNDED_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Average,
    Maximum,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Average => "average",
            Aggregation::Maximum => "maximum",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" | "mean" => Ok(Aggregation::Average),
            "maximum" | "max" => Ok(Aggregation::Maximum),
            other => Err(Error::Input(format!(
                "unknown aggregation {other:?} (expected average or maximum)"
            ))),
        }
    }
}

/// A standardized difference, flagged when the cap replaced an unbounded
/// value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdDiff {
    pub value: f64,
    pub capped: bool,
}

impl StdDiff {
    fn exact(value: f64) -> Self {
        Self {
            value,
            capped: false,
        }
    }

    fn cap() -> Self {
        Self {
            value: UNBOUNDED_CAP,
            capped: true,
        }
    }
}

/// Median and range to mean and SD: the median stands in for the mean and
/// a quarter of the range for the SD.
pub fn approx_moments(median: f64, min: f64, max: f64) -> Result<(f64, f64)> {
    if !(max >= min) || !(min <= median && median <= max) {
        return Err(Error::Input(format!(
            "median/range ({median}, {min}, {max}) violates min <= median <= max"
        )));
    }
    Ok((median, (max - min) / 4.0))
}

pub fn std_diff_continuous(mean_j: f64, var_j: f64, mean_k: f64, var_k: f64) -> StdDiff {
    let diff = (mean_j - mean_k).abs();
    if diff == 0.0 {
        return StdDiff::exact(0.0);
    }
    let pooled = ((var_j + var_k) / 2.0).sqrt();
    if pooled > 0.0 {
        let d = diff / pooled;
        if d.is_finite() && d <= UNBOUNDED_CAP {
            return StdDiff::exact(d);
        }
    }
    StdDiff::cap()
}

pub fn std_diff_binary(p_j: f64, p_k: f64) -> StdDiff {
    let diff = (p_j - p_k).abs();
    if diff == 0.0 {
        return StdDiff::exact(0.0);
    }
    let pooled = ((p_j * (1.0 - p_j) + p_k * (1.0 - p_k)) / 2.0).sqrt();
    if pooled > 0.0 {
        let d = diff / pooled;
        if d <= UNBOUNDED_CAP {
            return StdDiff::exact(d);
        }
    }
    StdDiff::cap()
}

/// As [`std_diff_binary`], but a zero pooled spread is first repaired by
/// pulling proportions of exactly 0 or 1 inwards by `0.5 / n`.
pub fn std_diff_binary_corrected(p_j: f64, n_j: u32, p_k: f64, n_k: u32) -> StdDiff {
    let plain = std_diff_binary(p_j, p_k);
    if !plain.capped || n_j == 0 || n_k == 0 {
        return plain;
    }
    let pull = |p: f64, n: u32| {
        let c = 0.5 / n as f64;
        if p <= 0.0 {
            c
        } else if p >= 1.0 {
            1.0 - c
        } else {
            p
        }
    };
    std_diff_binary(pull(p_j, n_j), pull(p_k, n_k))
}

fn continuous_moments(v: &CovariateValue) -> Result<Option<(f64, f64)>> {
    match *v {
        CovariateValue::ContinuousMeanSd { mean, sd } => Ok(Some((mean, sd))),
        CovariateValue::ContinuousMedianRange { median, min, max } => {
            approx_moments(median, min, max).map(Some)
        }
        CovariateValue::BinaryProportion { .. } => Ok(None),
    }
}

/// Standardized difference for one covariate in two profiles.
pub fn covariate_std_diff(
    name: &str,
    a: &CovariateSummary,
    n_a: u32,
    b: &CovariateSummary,
    n_b: u32,
) -> Result<StdDiff> {
    match (a.value, b.value) {
        (
            CovariateValue::BinaryProportion { proportion: pa },
            CovariateValue::BinaryProportion { proportion: pb },
        ) => Ok(std_diff_binary_corrected(pa, n_a, pb, n_b)),
        (va, vb) => match (continuous_moments(&va)?, continuous_moments(&vb)?) {
            (Some((ma, sa)), Some((mb, sb))) => Ok(std_diff_continuous(ma, sa * sa, mb, sb * sb)),
            _ => Err(Error::IncompatibleCovariate {
                covariate: name.to_string(),
            }),
        },
    }
}

/// Per-covariate differences behind one aggregated dissimilarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDissimilarity {
    pub value: f64,
    pub per_covariate: Vec<(String, StdDiff)>,
}

impl ProfileDissimilarity {
    pub fn capped(&self) -> impl Iterator<Item = &str> {
        self.per_covariate
            .iter()
            .filter(|(_, d)| d.capped)
            .map(|(n, _)| n.as_str())
    }
}

fn lookup<'a>(p: &'a BaselineProfile, name: &str) -> Result<&'a CovariateSummary> {
    p.covariate(name).ok_or_else(|| Error::MissingCovariate {
        covariate: name.to_string(),
        profile: format!("{} / {}", p.study, p.arm_label),
    })
}

pub fn profile_dissimilarity(
    a: &BaselineProfile,
    b: &BaselineProfile,
    covariates: &[String],
    mode: Aggregation,
) -> Result<ProfileDissimilarity> {
    if covariates.is_empty() {
        return Err(Error::Input("no covariates selected".into()));
    }
    let per_covariate = covariates
        .iter()
        .map(|name| {
            let d = covariate_std_diff(name, lookup(a, name)?, a.n, lookup(b, name)?, b.n)?;
            Ok((name.clone(), d))
        })
        .collect::<Result<Vec<_>>>()?;
    let values = per_covariate.iter().map(|(_, d)| d.value);
    let value = match mode {
        Aggregation::Average => values.sum::<f64>() / covariates.len() as f64,
        Aggregation::Maximum => values.fold(0.0, f64::max),
    };
    Ok(ProfileDissimilarity {
        value,
        per_covariate,
    })
}

/// n-weighted combination of several arms of one trial: proportions are
/// averaged, continuous covariates become the mixture mean and SD.
pub fn pooled_profile(arms: &[BaselineProfile], covariates: &[String]) -> Result<BaselineProfile> {
    let first = arms
        .first()
        .ok_or_else(|| Error::Input("pooling needs at least one arm".into()))?;
    let total: u32 = arms.iter().map(|a| a.n).sum();
    if total == 0 {
        return Err(Error::Input(format!("{}: pooled arms have n = 0", first.study)));
    }
    let w: Vec<f64> = arms.iter().map(|a| a.n as f64 / total as f64).collect();
    let mut out = Vec::with_capacity(covariates.len());
    for name in covariates {
        let vals = arms
            .iter()
            .map(|a| lookup(a, name).map(|c| c.value))
            .collect::<Result<Vec<_>>>()?;
        if vals.iter().all(CovariateValue::is_binary) {
            let p = vals
                .iter()
                .zip(&w)
                .map(|(v, w)| match v {
                    CovariateValue::BinaryProportion { proportion } => w * proportion,
                    _ => unreachable!(),
                })
                .sum();
            out.push(CovariateSummary::proportion(name.clone(), p));
        } else {
            let moments = vals
                .iter()
                .map(|v| {
                    continuous_moments(v)?.ok_or_else(|| Error::IncompatibleCovariate {
                        covariate: name.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mean: f64 = moments.iter().zip(&w).map(|((m, _), w)| w * m).sum();
            let second: f64 = moments
                .iter()
                .zip(&w)
                .map(|((m, s), w)| w * (s * s + m * m))
                .sum();
            let sd = (second - mean * mean).max(0.0).sqrt();
            out.push(CovariateSummary::mean_sd(name.clone(), mean, sd));
        }
    }
    Ok(BaselineProfile {
        study: first.study.clone(),
        arm_label: "pooled".into(),
        n: total,
        covariates: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Small,
    Medium,
    Large,
    Extreme,
}

pub fn band(d: f64) -> Result<Band> {
    if !(d >= 0.0) {
        return Err(Error::Input(format!("dissimilarity must be >= 0, found {d}")));
    }
    Ok(if d < 0.2 {
        Band::Small
    } else if d < 0.5 {
        Band::Medium
    } else if d < 0.8 {
        Band::Large
    } else {
        Band::Extreme
    })
}
