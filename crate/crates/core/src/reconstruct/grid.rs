use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArmKey, IpdRecord, ReconstructedIPD, RiskTable};

/// Shared analysis grid `t_1 < … < t_K`, all positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Input("time grid is empty".into()));
        }
        if !(times[0] > 0.0) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Input("time grid must be finite and start above 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("time grid must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Smallest positive gap between consecutive points, counting from 0.
    pub fn spacing(&self) -> f64 {
        std::iter::once(self.times[0])
            .chain(self.times.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Continues the grid at its final spacing up to `t_end`, which becomes
    /// the last point exactly.
    pub fn extend_to(&self, t_end: f64) -> TimeGrid {
        let mut times = self.times.clone();
        let last = self.last();
        if t_end <= last {
            return self.clone();
        }
        let step = if times.len() >= 2 {
            last - times[times.len() - 2]
        } else {
            last
        };
        let mut k = 1.0;
        loop {
            let t = last + k * step;
            if t >= t_end - 1e-9 * t_end.abs().max(1.0) {
                break;
            }
            times.push(t);
            k += 1.0;
        }
        times.push(t_end);
        TimeGrid { times }
    }

    /// Index of the grid point equal to `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t);
        (i < self.times.len() && self.times[i] == t).then_some(i)
    }
}

fn positive_times(rt: &RiskTable) -> Vec<f64> {
    rt.time_grid.iter().copied().filter(|&t| t > 0.0).collect()
}

/// Finest risk-table grid, extended to the longest follow-up among the
/// tables. Ties in spacing go to the longer grid.
pub fn choose_grid(tables: &[RiskTable]) -> Result<TimeGrid> {
    choose_grid_with_follow_up(tables, None)
}

/// As [`choose_grid`], with the follow-up horizon raised to `follow_up` when
/// arms are known to be followed past their last risk-table time.
pub fn choose_grid_with_follow_up(tables: &[RiskTable], follow_up: Option<f64>) -> Result<TimeGrid> {
    if tables.is_empty() {
        return Err(Error::Input("choose_grid needs at least one risk table".into()));
    }
    let mut best: Option<TimeGrid> = None;
    let mut t_max = follow_up.unwrap_or(0.0);
    for rt in tables {
        let grid = TimeGrid::new(positive_times(rt))
            .map_err(|e| Error::Input(format!("risk table {}: {e}", rt.study)))?;
        t_max = t_max.max(grid.last());
        best = match best {
            None => Some(grid),
            Some(b) => {
                let (sb, sg) = (b.spacing(), grid.spacing());
                if sg < sb || (sg == sb && grid.last() > b.last()) {
                    Some(grid)
                } else {
                    Some(b)
                }
            }
        };
    }
    Ok(best.expect("non-empty").extend_to(t_max))
}

/// Snaps each time up to the next grid point; times past `t_K` become
/// censored at `t_K`.
pub fn discretize(ipd: &ReconstructedIPD, grid: &TimeGrid) -> ReconstructedIPD {
    let times = grid.times();
    let t_k = grid.last();
    let records = ipd
        .records
        .iter()
        .map(|r| {
            // absorb float noise from upstream arithmetic
            let y = r.time - 1e-9 * r.time.abs().max(1.0);
            let i = times.partition_point(|&s| s < y);
            if i >= times.len() {
                IpdRecord::censored(t_k)
            } else {
                IpdRecord {
                    time: times[i],
                    event: r.event,
                }
            }
        })
        .collect();
    ReconstructedIPD::new(ipd.study.clone(), ipd.arm_label.clone(), records)
}

/// Events and numbers at risk on the grid for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTable {
    pub arm: ArmKey,
    pub d: Vec<u64>,
    pub r: Vec<u64>,
}

impl EventTable {
    pub fn m(&self) -> Vec<u64> {
        self.r.iter().zip(&self.d).map(|(r, d)| r - d).collect()
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// `r_k = #{Y ≥ t_k}`, `d_k = #{Y = t_k, event}`. Every time must lie on
/// the grid.
pub fn tabulate_events(ipd: &ReconstructedIPD, grid: &TimeGrid) -> Result<EventTable> {
    let k = grid.len();
    let mut d = vec![0u64; k];
    let mut exits = vec![0u64; k];
    for rec in &ipd.records {
        let i = grid.index_of(rec.time).ok_or_else(|| {
            Error::Input(format!(
                "{}: time {} is not on the analysis grid; discretize first",
                ipd.key(),
                rec.time
            ))
        })?;
        exits[i] += 1;
        if rec.event {
            d[i] += 1;
        }
    }
    let mut r = vec![0u64; k];
    let mut acc = 0;
    for i in (0..k).rev() {
        acc += exits[i];
        r[i] = acc;
    }
    Ok(EventTable { arm: ipd.key(), d, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RiskArm, StudyId};

    fn table(step: f64, last: f64) -> RiskTable {
        let n = (last / step).round() as usize;
        let grid: Vec<f64> = (0..=n).map(|j| step * j as f64).collect();
        let counts = (0..=n).map(|j| 100 - j as i64).collect();
        RiskTable::new(StudyId::new("S"), grid, vec![RiskArm::new("A", counts)])
    }

    fn ipd(recs: &[(f64, bool)]) -> ReconstructedIPD {
        ReconstructedIPD::new(
            StudyId::new("S"),
            "A",
            recs.iter().map(|&(time, event)| IpdRecord { time, event }).collect(),
        )
    }

    fn steps(step: f64, last: f64) -> Vec<f64> {
        let n = (last / step).round() as usize;
        (1..=n).map(|j| step * j as f64).collect()
    }

    #[test]
    fn finest_grid_wins() {
        let g = choose_grid(&[table(6.0, 60.0), table(3.0, 72.0)]).unwrap();
        assert_eq!(g.times(), steps(3.0, 72.0).as_slice());
        let g = choose_grid(&[table(6.0, 60.0)]).unwrap();
        assert_eq!(g.times(), steps(6.0, 60.0).as_slice());
    }

    #[test]
    fn finest_grid_extended_to_follow_up() {
        let g = choose_grid(&[table(3.0, 60.0), table(6.0, 72.0)]).unwrap();
        assert_eq!(g.times(), steps(3.0, 72.0).as_slice());
        let g = TimeGrid::new(vec![3.0, 6.0]).unwrap().extend_to(10.0);
        assert_eq!(g.times(), &[3.0, 6.0, 9.0, 10.0]);
        assert!(choose_grid(&[]).is_err());
    }

    #[test]
    fn discretize_rounds_up_and_truncates() {
        let g = TimeGrid::new(vec![3.0, 6.0, 9.0]).unwrap();
        let out = discretize(&ipd(&[(4.2, true), (6.0, false), (9.5, true), (0.1, true)]), &g);
        let t: Vec<(f64, bool)> = out.records.iter().map(|r| (r.time, r.event)).collect();
        assert_eq!(t, vec![(6.0, true), (6.0, false), (9.0, false), (3.0, true)]);

        let g = TimeGrid::new(steps(3.0, 72.0)).unwrap();
        let out = discretize(&ipd(&[(75.0, true)]), &g);
        assert_eq!(out.records[0], IpdRecord::censored(72.0));
    }

    #[test]
    fn tabulate_by_hand() {
        let g = TimeGrid::new(vec![3.0, 6.0]).unwrap();
        let et = tabulate_events(&ipd(&[(3.0, true), (3.0, false), (6.0, true)]), &g).unwrap();
        assert_eq!(et.r, vec![3, 1]);
        assert_eq!(et.d, vec![1, 1]);
        assert_eq!(et.m(), vec![2, 0]);

        let et = tabulate_events(&ipd(&[(3.0, true), (3.0, true)]), &g).unwrap();
        assert_eq!((et.r, et.d), (vec![2, 0], vec![2, 0]));

        assert!(tabulate_events(&ipd(&[(4.0, true)]), &g).is_err());
    }
}
