//! Design-stage summaries of predictive survival ensembles: pointwise OS
//! with credible bands, median OS, and between-class comparisons.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::csv_text;
use crate::model::KMCurve;
use crate::synthesis::{quantile_sorted, PredictiveEnsemble};

pub const OS_TABLE_FILE: &str = "os_table.csv";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const FAN_FILE: &str = "fan.csv";
pub const MEDIANS_FILE: &str = "medians.csv";

/// Draws kept per ensemble in fan-plot data.
pub const FAN_MAX_DRAWS: usize = 200;

/// Median differences within this many months of the margin count as
/// reaching it; interpolated medians carry rounding error.
pub const MARGIN_TOLERANCE: f64 = 1e-9;

const LOWER_Q: f64 = 0.025;
const UPPER_Q: f64 = 0.975;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSummary {
    pub times: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ({:.1}, {:.1})", self.estimate, self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "months")]
pub enum MedianOs {
    Months(f64),
    NotReached,
}

impl MedianOs {
    pub fn months(self) -> Option<f64> {
        match self {
            MedianOs::Months(m) => Some(m),
            MedianOs::NotReached => None,
        }
    }
}

/// Median of one draw's distribution plus how many draws never reach 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    /// `None` when every draw stays above 0.5.
    pub interval: Option<Interval>,
    pub not_reached: usize,
    pub draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum Pairing {
    /// Draw i of one ensemble with draw i of the other.
    Index,
    /// Draws of the second ensemble permuted with the given seed first.
    Shuffle(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmComparison {
    pub label_a: String,
    pub label_b: String,
    /// Pointwise `S_b - S_a` per pair.
    pub delta_os: SurvivalSummary,
    pub median_a: MedianSummary,
    pub median_b: MedianSummary,
    pub delta_median: Option<Interval>,
    /// Pairs left out of the median difference because either side never
    /// reached 0.5.
    pub excluded_pairs: usize,
    pub margin: f64,
    /// `#{pairs with Δmedian ≥ margin} / M`.
    pub prob_benefit: f64,
    pub pairing: Pairing,
}

/// Survival at `t` from grid values, with `S(0) = 1` and linear
/// interpolation between grid points.
fn value_at(times: &[f64], curve: &[f64], t: f64) -> f64 {
    let mut t0 = 0.0;
    let mut s0 = 1.0;
    for (&tk, &sk) in times.iter().zip(curve) {
        if t <= tk {
            if t == tk {
                return sk;
            }
            return s0 + (sk - s0) * (t - t0) / (tk - t0);
        }
        t0 = tk;
        s0 = sk;
    }
    s0
}

fn check_times(grid_end: f64, times: &[f64]) -> Result<()> {
    match times.iter().find(|&&t| !(0.0..=grid_end).contains(&t)) {
        Some(t) => Err(Error::Input(format!(
            "summary time {t} is outside the grid span [0, {grid_end}]"
        ))),
        None => Ok(()),
    }
}

fn summarize_rows(rows: &[Vec<f64>], times: &[f64]) -> SurvivalSummary {
    let mut estimate = Vec::with_capacity(times.len());
    let mut lower = Vec::with_capacity(times.len());
    let mut upper = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        col.sort_by(f64::total_cmp);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let lo = quantile_sorted(&col, LOWER_Q);
        let hi = quantile_sorted(&col, UPPER_Q);
        // keep lower ≤ estimate ≤ upper when rounding disagrees
        estimate.push(mean.clamp(lo, hi));
        lower.push(lo);
        upper.push(hi);
    }
    SurvivalSummary {
        times: times.to_vec(),
        estimate,
        lower,
        upper,
    }
}

fn interpolated(ens: &PredictiveEnsemble, times: &[f64]) -> Vec<Vec<f64>> {
    let grid = ens.grid.times();
    ens.curves
        .iter()
        .map(|c| times.iter().map(|&t| value_at(grid, c, t)).collect())
        .collect()
}

/// Ensemble mean and pointwise 2.5%/97.5% percentiles at `times`.
pub fn summarize(ens: &PredictiveEnsemble, times: &[f64]) -> Result<SurvivalSummary> {
    if ens.is_empty() {
        return Err(Error::Input("empty predictive ensemble".into()));
    }
    check_times(ens.grid.last(), times)?;
    Ok(summarize_rows(&interpolated(ens, times), times))
}

/// First crossing of 0.5, interpolating linearly between grid values
/// (with `S(0) = 1`).
pub fn median_os(times: &[f64], curve: &[f64]) -> MedianOs {
    let mut t0 = 0.0;
    let mut s0 = 1.0;
    for (&tk, &sk) in times.iter().zip(curve) {
        if sk <= 0.5 {
            if sk == 0.5 || s0 == sk {
                return MedianOs::Months(tk);
            }
            return MedianOs::Months(t0 + (tk - t0) * (s0 - 0.5) / (s0 - sk));
        }
        t0 = tk;
        s0 = sk;
    }
    MedianOs::NotReached
}

fn interval_of(mut v: Vec<f64>) -> Option<Interval> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(Interval {
        estimate: quantile_sorted(&v, 0.5),
        lower: quantile_sorted(&v, LOWER_Q),
        upper: quantile_sorted(&v, UPPER_Q),
    })
}

fn medians(ens: &PredictiveEnsemble) -> Vec<MedianOs> {
    ens.curves.iter().map(|c| median_os(ens.grid.times(), c)).collect()
}

pub fn median_summary(ens: &PredictiveEnsemble) -> MedianSummary {
    let all = medians(ens);
    let reached: Vec<f64> = all.iter().filter_map(|m| m.months()).collect();
    MedianSummary {
        not_reached: all.len() - reached.len(),
        interval: interval_of(reached),
        draws: all.len(),
    }
}

/// Pairs draws of two independently generated ensembles and summarises
/// the difference `b - a`.
pub fn compare(
    (label_a, a): (&str, &PredictiveEnsemble),
    (label_b, b): (&str, &PredictiveEnsemble),
    margin: f64,
    times: &[f64],
    pairing: Pairing,
) -> Result<ArmComparison> {
    if a.grid != b.grid {
        return Err(Error::Input("ensembles are on different grids".into()));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Input(format!(
            "ensembles need the same non-zero draw count, found {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_times(a.grid.last(), times)?;
    let mut order: Vec<usize> = (0..b.len()).collect();
    if let Pairing::Shuffle(seed) = pairing {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let sa = interpolated(a, times);
    let sb = interpolated(b, times);
    let deltas: Vec<Vec<f64>> = (0..a.len())
        .map(|i| sb[order[i]].iter().zip(&sa[i]).map(|(y, x)| y - x).collect())
        .collect();
    let ma = medians(a);
    let mb = medians(b);
    let dm: Vec<f64> = (0..a.len())
        .filter_map(|i| Some(mb[order[i]].months()? - ma[i].months()?))
        .collect();
    let hits = dm.iter().filter(|&&d| d >= margin - MARGIN_TOLERANCE).count();
    Ok(ArmComparison {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        delta_os: summarize_rows(&deltas, times),
        median_a: median_summary(a),
        median_b: median_summary(b),
        excluded_pairs: a.len() - dm.len(),
        prob_benefit: hits as f64 / a.len() as f64,
        delta_median: interval_of(dm),
        margin,
        pairing,
    })
}

/// Table-style rows: one per time, estimate and interval for each arm and
/// for the difference.
pub fn render_os_table(
    (label_a, sa): (&str, &SurvivalSummary),
    (label_b, sb): (&str, &SurvivalSummary),
    delta: &SurvivalSummary,
) -> String {
    let cols: Vec<String> = std::iter::once("time_months".to_string())
        .chain([label_a, label_b, "difference"].iter().flat_map(|l| {
            ["estimate", "lower_2.5", "upper_97.5"]
                .iter()
                .map(move |s| format!("{l}_{s}"))
        }))
        .collect();
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    csv_text(
        &refs,
        (0..sa.times.len()).map(|j| {
            let mut row = vec![sa.times[j].to_string()];
            for s in [sa, sb, delta] {
                row.extend([s.estimate[j], s.lower[j], s.upper[j]].iter().map(|v| format!("{v:.4}")));
            }
            row
        }),
    )
}

pub fn render_medians(rows: &[(&str, &MedianSummary)]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    csv_text(
        &["arm", "median_months", "lower_2.5", "upper_97.5", "not_reached", "draws"],
        rows.iter().map(|(label, m)| {
            vec![
                label.to_string(),
                fmt(m.interval.map(|i| i.estimate)),
                fmt(m.interval.map(|i| i.lower)),
                fmt(m.interval.map(|i| i.upper)),
                m.not_reached.to_string(),
                m.draws.to_string(),
            ]
        }),
    )
}

pub fn render_comparison(c: &ArmComparison) -> Result<String> {
    Ok(serde_json::to_string_pretty(c)?)
}

/// Evenly spaced draw indices, at most `FAN_MAX_DRAWS`.
fn thinned(m: usize) -> Vec<usize> {
    if m <= FAN_MAX_DRAWS {
        (0..m).collect()
    } else {
        (0..FAN_MAX_DRAWS).map(|i| i * m / FAN_MAX_DRAWS).collect()
    }
}

/// Long-form plot data: predictive draws (thinned) for each labelled
/// ensemble plus published curves as overlays.
pub fn fan_plot_data(ensembles: &[(&str, &PredictiveEnsemble)], published: &[KMCurve]) -> String {
    let mut rows = Vec::new();
    for (label, ens) in ensembles {
        let times = ens.grid.times();
        for i in thinned(ens.len()) {
            for (t, s) in times.iter().zip(&ens.curves[i]) {
                rows.push(vec![
                    label.to_string(),
                    "draw".into(),
                    i.to_string(),
                    t.to_string(),
                    s.to_string(),
                ]);
            }
        }
    }
    for c in published {
        let id = format!("{} / {}", c.study, c.arm_label);
        for p in &c.points {
            rows.push(vec![
                id.clone(),
                "published".into(),
                String::new(),
                p.time.to_string(),
                p.survival.to_string(),
            ]);
        }
    }
    csv_text(&["series", "kind", "draw_id", "t", "survival"], rows)
}
