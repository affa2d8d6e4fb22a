use serde::{Deserialize, Serialize};

use crate::model::IpdRecord;

/// Product-limit estimate as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMEstimate {
    /// Distinct event times, increasing.
    pub times: Vec<f64>,
    /// Survival just after each step.
    pub survival: Vec<f64>,
    /// Number at risk at each step.
    pub at_risk: Vec<usize>,
}

impl KMEstimate {
    pub fn survival_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }
}

/// Records censored at an event time are in that event's risk set.
pub fn km_estimator(records: &[IpdRecord]) -> KMEstimate {
    let mut sorted: Vec<IpdRecord> = records.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut est = KMEstimate {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
    };
    let mut s = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let at_risk = sorted.len() - i;
        let mut events = 0;
        while i < sorted.len() && sorted[i].time == t {
            events += usize::from(sorted[i].event);
            i += 1;
        }
        if events > 0 {
            s *= 1.0 - events as f64 / at_risk as f64;
            est.times.push(t);
            est.survival.push(s);
            est.at_risk.push(at_risk);
        }
    }
    est
}

/// `#{Y >= t}` for each `t`.
pub fn number_at_risk(records: &[IpdRecord], times: &[f64]) -> Vec<i64> {
    let mut ys: Vec<f64> = records.iter().map(|r| r.time).collect();
    ys.sort_by(f64::total_cmp);
    times
        .iter()
        .map(|&t| (ys.len() - ys.partition_point(|&y| y < t)) as i64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product_limit() {
        let km = km_estimator(&[
            IpdRecord::event(3.0),
            IpdRecord::censored(5.0),
            IpdRecord::event(7.0),
        ]);
        assert_eq!(km.times, vec![3.0, 7.0]);
        assert!((km.survival_at(2.9) - 1.0).abs() < 1e-15);
        assert!((km.survival_at(3.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival_at(6.9) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival_at(7.0), 0.0);
    }

    #[test]
    fn censored_at_event_time_is_at_risk() {
        let km = km_estimator(&[IpdRecord::event(2.0), IpdRecord::censored(2.0)]);
        assert_eq!(km.at_risk, vec![2]);
        assert_eq!(km.survival_at(2.0), 0.5);
    }

    #[test]
    fn degenerate_cases() {
        let km = km_estimator(&[IpdRecord::censored(1.0), IpdRecord::censored(4.0)]);
        assert!(km.times.is_empty());
        assert_eq!(km.survival_at(100.0), 1.0);
        let km = km_estimator(&[IpdRecord::event(5.0)]);
        assert_eq!(km.survival_at(4.99), 1.0);
        assert_eq!(km.survival_at(5.0), 0.0);
    }

    #[test]
    fn at_risk_counts() {
        let r = [
            IpdRecord::event(3.0),
            IpdRecord::censored(3.0),
            IpdRecord::event(6.0),
        ];
        assert_eq!(number_at_risk(&r, &[0.0, 3.0, 4.0, 6.0, 7.0]), vec![3, 3, 1, 1, 0]);
    }
}
