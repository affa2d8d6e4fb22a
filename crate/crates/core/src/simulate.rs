//! Synthetic trial arms with known patient-level data, used as oracles for
//! the digitize-and-reconstruct round trip and for demo inputs.

use rand::Rng;
use rand_distr::{Distribution, Exp, Uniform, Weibull};

use crate::digitizer::standardize_curve;
use crate::error::{Error, Result};
use crate::model::{IpdRecord, KMCurve, RiskArm, RiskTable, StudyId};
use crate::reconstruct::{km_estimator, number_at_risk};

/// Weibull event times with a target censoring share.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmSpec {
    pub n: usize,
    pub shape: f64,
    pub median_months: f64,
    /// Probability that a patient is lost to follow-up before their event.
    pub censor_fraction: f64,
    /// Administrative end of follow-up.
    pub follow_up: f64,
}

/// Each patient is lost to follow-up with probability `censor_fraction`, at
/// a uniform time before their event; everyone still event-free at
/// `follow_up` is censored there.
pub fn simulate_weibull_arm<R: Rng + ?Sized>(rng: &mut R, spec: &ArmSpec) -> Result<Vec<IpdRecord>> {
    if spec.n == 0 || !(spec.shape > 0.0) || !(spec.median_months > 0.0) || !(spec.follow_up > 0.0) {
        return Err(Error::Input("arm spec needs n, shape, median and follow-up > 0".into()));
    }
    if !(0.0..1.0).contains(&spec.censor_fraction) {
        return Err(Error::Input("censor fraction must be in [0, 1)".into()));
    }
    let scale = spec.median_months / std::f64::consts::LN_2.powf(1.0 / spec.shape);
    let weibull = Weibull::new(scale, spec.shape).map_err(|e| Error::Input(e.to_string()))?;
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    Ok((0..spec.n)
        .map(|_| {
            let t: f64 = weibull.sample(rng);
            let horizon = t.min(spec.follow_up);
            if unit.sample(rng) < spec.censor_fraction {
                // strictly positive
                let c = horizon * (1.0 - unit.sample(rng));
                IpdRecord::censored(c)
            } else if t > spec.follow_up {
                IpdRecord::censored(spec.follow_up)
            } else {
                IpdRecord::event(t)
            }
        })
        .collect())
}

/// Exponential event times with independent uniform censoring on `(0, censor_max)`.
pub fn simulate_exponential_arm<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    rate: f64,
    censor_max: f64,
) -> Result<Vec<IpdRecord>> {
    let exp = Exp::new(rate).map_err(|e| Error::Input(e.to_string()))?;
    let unif = Uniform::new(0.0, censor_max).map_err(|e| Error::Input(e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let t: f64 = exp.sample(rng);
            let c: f64 = unif.sample(rng);
            if t <= c {
                IpdRecord::event(t)
            } else {
                IpdRecord::censored(c.max(f64::MIN_POSITIVE))
            }
        })
        .collect())
}

/// Corner points of the product-limit step function in `(months, %)`,
/// as a careful tracer would click them, ending at the last follow-up.
pub fn km_trace(records: &[IpdRecord]) -> Vec<(f64, f64)> {
    let km = km_estimator(records);
    let t_end = records.iter().map(|r| r.time).fold(0.0, f64::max);
    let eps = 1e-7 * t_end.max(1.0);
    let mut out = vec![(0.0, 100.0)];
    let mut prev = 1.0;
    for (&t, &s) in km.times.iter().zip(&km.survival) {
        if t - eps > out[out.len() - 1].0 {
            out.push((t - eps, prev * 100.0));
        }
        out.push((t, s * 100.0));
        prev = s;
    }
    if t_end > out[out.len() - 1].0 {
        out.push((t_end, prev * 100.0));
    }
    out
}

/// Published-figure view of an arm: standardized curve plus numbers at risk
/// every `step` months up to the end of follow-up.
pub fn published_arm(
    study: StudyId,
    arm_label: &str,
    records: &[IpdRecord],
    step: f64,
) -> Result<(KMCurve, RiskTable)> {
    let (curve, report) = standardize_curve(study.clone(), arm_label, &km_trace(records))?;
    if report.has_errors() {
        return Err(Error::Input(format!("simulated trace failed validation\n{report}")));
    }
    let end = curve.end_time();
    let k = (end / step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=k).map(|j| step * j as f64).collect();
    let counts = number_at_risk(records, &grid);
    let table = RiskTable::new(study, grid, vec![RiskArm::new(arm_label, counts)]);
    Ok((curve, table))
}
