//! Interval-wise inversion of a survival curve and its numbers at risk into
//! individual event and censoring times.

use crate::error::{Error, Result};
use crate::model::{CurvePoint, IpdRecord, KMCurve, ReconstructedIPD};
use crate::validate::validate_curve;

/// Shortfall (probability scale) between the lowest survival the at-risk
/// counts allow in an interval and the curve, beyond which the inputs are
/// declared inconsistent.
pub const FEASIBILITY_SLACK: f64 = 0.02;

/// Extra tracking error accepted in exchange for spreading censorings
/// evenly through an interval rather than bunching them at its end.
const TRACKING_SLACK: f64 = 0.002;

struct Interval<'a> {
    start: f64,
    end: f64,
    n_start: usize,
    n_end: usize,
    points: &'a [CurvePoint],
    /// First curve point at or past `end`. Resampling shows a step just
    /// before `end` only there.
    next: Option<CurvePoint>,
}

#[derive(Clone)]
struct Pass {
    events: Vec<(f64, usize)>,
    /// Sorted censoring times inside the interval.
    censors: Vec<f64>,
    km_end: f64,
    max_dev: f64,
}

impl Pass {
    fn leaving(&self) -> usize {
        total(&self.events) + self.censors.len()
    }
}

fn events_for(nrisk: usize, km: f64, s: f64) -> usize {
    if nrisk == 0 || km <= 0.0 {
        return 0;
    }
    let want = nrisk as f64 * (1.0 - s / km);
    (want.round().max(0.0) as usize).min(nrisk)
}

/// Event counts at each curve point given fixed censoring times, choosing
/// `d` so the running product-limit estimate tracks the curve.
fn simulate(km0: f64, n0: usize, points: &[CurvePoint], censors: Vec<f64>) -> Pass {
    let mut km = km0;
    let mut nrisk = n0;
    let mut ci = 0;
    let mut events = Vec::new();
    let mut max_dev: f64 = 0.0;
    for p in points {
        while ci < censors.len() && censors[ci] < p.time {
            nrisk = nrisk.saturating_sub(1);
            ci += 1;
        }
        let d = events_for(nrisk, km, p.survival);
        if d > 0 {
            km *= 1.0 - d as f64 / nrisk as f64;
            nrisk -= d;
            events.push((p.time, d));
        }
        max_dev = max_dev.max((km - p.survival).abs());
    }
    Pass {
        events,
        censors,
        km_end: km,
        max_dev,
    }
}

/// Reads the risk-set size off each drop: before every point, withdraws the
/// number of censorings that lets an integer event count reproduce the step
/// most closely, holding back enough budget for the drops still to come.
fn step_matched(km0: f64, n0: usize, budget: usize, start: f64, points: &[CurvePoint]) -> Pass {
    let mut km = km0;
    let mut nrisk = n0;
    let mut used = 0;
    let mut prev_t = start;
    let mut events = Vec::new();
    let mut censors = Vec::new();
    let mut max_dev: f64 = 0.0;
    let s_last = points.last().map_or(km0, |p| p.survival);
    for p in points {
        let mut best = (0usize, events_for(nrisk, km, p.survival));
        if p.survival < km {
            let err = |c: usize, d: usize| {
                let n = nrisk - c;
                if n == 0 {
                    return (km - p.survival).abs();
                }
                (km * (1.0 - d as f64 / n as f64) - p.survival).abs()
            };
            let mut best_err = err(best.0, best.1);
            let room = budget.saturating_sub(used);
            for c in 1..=room.min(nrisk) {
                let d = events_for(nrisk - c, km, p.survival);
                if d == 0 {
                    break;
                }
                // drops still ahead need events from those left at risk
                let after = nrisk - c - d;
                let ahead = if p.survival > 0.0 {
                    (after as f64 * (1.0 - s_last / p.survival)).round() as usize
                } else {
                    0
                };
                if used + c + d + ahead > budget {
                    break;
                }
                let e = err(c, d);
                if e < best_err - 1e-12 {
                    best = (c, d);
                    best_err = e;
                }
            }
        }
        let (c, d) = best;
        if c > 0 {
            let t = 0.5 * (prev_t + p.time);
            censors.extend(std::iter::repeat_n(t, c));
            nrisk -= c;
        }
        if d > 0 {
            km *= 1.0 - d as f64 / nrisk as f64;
            nrisk -= d;
            events.push((p.time, d));
        }
        used += c + d;
        max_dev = max_dev.max((km - p.survival).abs());
        prev_t = p.time;
    }
    Pass {
        events,
        censors,
        km_end: km,
        max_dev,
    }
}

fn top_up_time(iv: &Interval) -> f64 {
    let last_pt = iv.points.last().map_or(iv.start, |p| p.time);
    0.5 * (last_pt + iv.end)
}

/// Spends unused budget on a step that only shows at the first curve point
/// past the interval end, placing those events just before the end. `None`
/// when there is nothing to absorb.
fn absorb_next_step(pass: &Pass, iv: &Interval, removals: usize) -> Option<Pass> {
    let next = iv.next?;
    let leaving = pass.leaving();
    let room = removals - leaving;
    let nrisk = iv.n_start - leaving;
    let km = pass.km_end;
    // as in the step-matched pass, censorings may go first when that lets
    // the event count reproduce the step better
    let mut best: Option<(usize, usize, f64)> = None;
    for c in 0..=room.min(nrisk) {
        let n = nrisk - c;
        let d = events_for(n, km, next.survival).min(room - c);
        if d == 0 {
            continue;
        }
        let err = (km * (1.0 - d as f64 / n as f64) - next.survival).abs();
        if best.is_none_or(|b| err < b.2 - 1e-12) {
            best = Some((c, d, err));
        }
    }
    let (c, d, err) = best?;
    let t_events = top_up_time(iv);
    let last_pt = iv.points.last().map_or(iv.start, |p| p.time);
    let mut out = pass.clone();
    out.censors
        .extend(std::iter::repeat_n(0.5 * (last_pt + t_events), c));
    out.km_end *= 1.0 - d as f64 / (nrisk - c) as f64;
    out.events.push((t_events, d));
    out.max_dev = out.max_dev.max(err);
    Some(out)
}

fn uniform_censors(start: f64, end: f64, count: usize) -> Vec<f64> {
    let w = end - start;
    (1..=count)
        .map(|i| start + w * i as f64 / (count + 1) as f64)
        .collect()
}

fn total(events: &[(f64, usize)]) -> usize {
    events.iter().map(|e| e.1).sum()
}

/// One way of filling an interval with patients.
struct Choice {
    records: Vec<IpdRecord>,
    km_end: f64,
    max_dev: f64,
}

fn into_choice(mut pass: Pass, iv: &Interval, removals: usize) -> Choice {
    // the rest are censored after the interval's last curve point, so they
    // sit in every risk set the pass saw
    let leaving = pass.leaving();
    pass.censors
        .extend(std::iter::repeat_n(top_up_time(iv), removals - leaving));
    let mut records: Vec<IpdRecord> = Vec::with_capacity(removals);
    for &(t, d) in &pass.events {
        records.extend(std::iter::repeat_n(IpdRecord::event(t), d));
    }
    records.extend(pass.censors.into_iter().map(IpdRecord::censored));
    Choice {
        records,
        km_end: pass.km_end,
        max_dev: pass.max_dev,
    }
}

/// Censorings topped up after the interval's last curve point never change
/// the fit, so candidates are ranked by tracking error first, preferring the
/// one leaving the least to top up among near-best fits.
fn best_pass(passes: Vec<Pass>, removals: usize) -> Option<Pass> {
    let best_dev = passes.iter().map(|p| p.max_dev).fold(f64::INFINITY, f64::min);
    passes
        .into_iter()
        .filter(|p| p.max_dev <= best_dev + TRACKING_SLACK)
        .min_by(|a, b| {
            (removals - a.leaving())
                .cmp(&(removals - b.leaving()))
                .then(a.max_dev.total_cmp(&b.max_dev))
        })
}

/// Candidate fillings of one interval: the best fit of its own curve
/// points, and the best fit that also absorbs a step showing just past the
/// interval end. Which one is right only becomes clear downstream.
fn invert_interval(iv: &Interval, km0: f64) -> Result<Vec<Choice>> {
    let removals = iv.n_start - iv.n_end;
    if iv.n_start == 0 {
        return Ok(vec![Choice {
            records: Vec::new(),
            km_end: km0,
            max_dev: 0.0,
        }]);
    }

    let mut passes: Vec<Pass> = (0..=removals)
        .map(|nc| simulate(km0, iv.n_start, iv.points, uniform_censors(iv.start, iv.end, nc)))
        .collect();
    passes.push(step_matched(km0, iv.n_start, removals, iv.start, iv.points));
    passes.retain(|p| p.leaving() <= removals);

    if passes.is_empty() {
        // even without censoring the curve asks for more events than the
        // counts allow
        let floor = km0 * iv.n_end as f64 / iv.n_start as f64;
        let s_end = iv.points.last().map_or(km0, |p| p.survival);
        if floor - s_end > FEASIBILITY_SLACK {
            return Err(Error::Reconstruction {
                start: iv.start,
                end: iv.end,
                reason: format!(
                    "curve falls to {:.4} but {} of {} at risk remain, allowing no lower than {:.4}",
                    s_end, iv.n_end, iv.n_start, floor
                ),
            });
        }
        let mut pass = simulate(km0, iv.n_start, iv.points, Vec::new());
        let mut excess = total(&pass.events) - removals;
        while excess > 0 {
            let last = pass.events.last_mut().expect("excess implies events");
            let cut = last.1.min(excess);
            last.1 -= cut;
            excess -= cut;
            if last.1 == 0 {
                pass.events.pop();
            }
        }
        let mut km = km0;
        let mut nrisk = iv.n_start;
        let mut dev: f64 = 0.0;
        let mut ei = 0;
        for p in iv.points {
            if ei < pass.events.len() && pass.events[ei].0 == p.time {
                let d = pass.events[ei].1;
                km *= 1.0 - d as f64 / nrisk as f64;
                nrisk -= d;
                ei += 1;
            }
            dev = dev.max((km - p.survival).abs());
        }
        pass.km_end = km;
        pass.max_dev = dev;
        return Ok(vec![into_choice(pass, iv, removals)]);
    }

    let absorbed: Vec<Pass> = passes
        .iter()
        .filter_map(|p| absorb_next_step(p, iv, removals))
        .collect();
    let mut choices = Vec::with_capacity(2);
    if let Some(p) = best_pass(passes, removals) {
        choices.push(into_choice(p, iv, removals));
    }
    if let Some(p) = best_pass(absorbed, removals) {
        choices.push(into_choice(p, iv, removals));
    }
    Ok(choices)
}

/// Rebuilds one arm's patients from its standardized curve and at-risk row.
///
/// `time_grid` must start at 0 and `counts[0]` is the arm size. Events are
/// placed at curve point times; censorings are spread evenly inside each
/// risk interval. After the last grid time drops become events and the
/// survivors are censored at the later of the curve end and that time,
/// apart from censorings that the step heights show happened earlier.
pub fn reconstruct_ipd(curve: &KMCurve, time_grid: &[f64], counts: &[i64]) -> Result<ReconstructedIPD> {
    let report = validate_curve(curve);
    if report.has_errors() {
        return Err(Error::Input(format!(
            "{}: curve fails validation\n{report}",
            curve.key()
        )));
    }
    if time_grid.len() != counts.len() || time_grid.is_empty() {
        return Err(Error::Input("risk grid and counts must be non-empty and of equal length".into()));
    }
    if time_grid[0] != 0.0 || time_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("risk grid must start at 0 and increase strictly".into()));
    }
    if counts[0] <= 0 {
        return Err(Error::Input("number at risk at time 0 must be positive".into()));
    }
    if counts.iter().any(|&c| c < 0) || counts.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Input("numbers at risk must be non-negative and non-increasing".into()));
    }
    let last = time_grid[time_grid.len() - 1];
    let step = if time_grid.len() >= 2 {
        last - time_grid[time_grid.len() - 2]
    } else {
        0.0
    };
    if curve.end_time() < last - step - 1e-9 {
        return Err(Error::Input(format!(
            "curve ends at month {} but the risk grid runs to month {last}",
            curve.end_time()
        )));
    }

    let pts = &curve.points[1..];
    let intervals: Vec<Interval> = time_grid
        .windows(2)
        .zip(counts.windows(2))
        .map(|(g, n)| {
            let lo = pts.partition_point(|p| p.time < g[0]);
            let hi = pts.partition_point(|p| p.time < g[1]);
            Interval {
                start: g[0],
                end: g[1],
                n_start: n[0] as usize,
                n_end: n[1] as usize,
                points: &pts[lo..hi],
                next: pts.get(hi).copied(),
            }
        })
        .collect();
    let n_tail = counts[counts.len() - 1] as usize;
    let tail_pts = &pts[pts.partition_point(|p| p.time < last)..];
    let tail = |km: f64| {
        let plain = simulate(km, n_tail, tail_pts, Vec::new());
        let matched = step_matched(km, n_tail, n_tail, last, tail_pts);
        if matched.max_dev < plain.max_dev {
            matched
        } else {
            plain
        }
    };

    let mut records = Vec::with_capacity(counts[0] as usize);
    let mut km = 1.0;
    for (k, iv) in intervals.iter().enumerate() {
        let mut choices = invert_interval(iv, km)?;
        let pick = if choices.len() == 1 {
            0
        } else {
            // one interval of lookahead decides between the fillings
            let score = |c: &Choice| {
                let ahead = match intervals.get(k + 1) {
                    Some(nx) => invert_interval(nx, c.km_end).map_or(f64::INFINITY, |cs| {
                        cs.iter().map(|x| x.max_dev).fold(f64::INFINITY, f64::min)
                    }),
                    None => tail(c.km_end).max_dev,
                };
                c.max_dev.max(ahead)
            };
            let scores: Vec<f64> = choices.iter().map(score).collect();
            (0..choices.len())
                .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .expect("non-empty")
        };
        let choice = choices.swap_remove(pick);
        records.extend(choice.records);
        km = choice.km_end;
    }

    if n_tail > 0 {
        let pass = tail(km);
        for &(t, d) in &pass.events {
            records.extend(std::iter::repeat_n(IpdRecord::event(t), d));
        }
        records.extend(pass.censors.iter().map(|&t| IpdRecord::censored(t)));
        let survivors = n_tail - pass.leaving();
        let t_cens = curve.end_time().max(last);
        records.extend(std::iter::repeat_n(IpdRecord::censored(t_cens), survivors));
    }

    records.sort_by(|a, b| a.time.total_cmp(&b.time).then(b.event.cmp(&a.event)));
    Ok(ReconstructedIPD::new(curve.study.clone(), curve.arm_label.clone(), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{StudyId, CURVE_POINTS};
    use crate::reconstruct::km::{km_estimator, number_at_risk};

    fn curve_from(f: impl Fn(f64) -> f64, t_max: f64) -> KMCurve {
        let points = (0..CURVE_POINTS)
            .map(|i| {
                let t = t_max * i as f64 / (CURVE_POINTS - 1) as f64;
                CurvePoint::new(t, f(t))
            })
            .collect();
        KMCurve::new(StudyId::new("S"), "A", points)
    }

    #[test]
    fn flat_curve_only_censors() {
        let c = curve_from(|_| 1.0, 12.0);
        let grid = [0.0, 6.0, 12.0];
        let ipd = reconstruct_ipd(&c, &grid, &[50, 48, 45]).unwrap();
        assert_eq!(ipd.n(), 50);
        assert_eq!(ipd.events(), 0);
        assert_eq!(number_at_risk(&ipd.records, &grid), vec![50, 48, 45]);
        // interval censorings strictly inside their interval
        let inside = ipd.records.iter().filter(|r| r.time > 0.0 && r.time < 6.0).count();
        assert_eq!(inside, 2);
    }

    #[test]
    fn single_interval_balance() {
        // 100% to 50% within (0, 1], four at risk, two left at the end
        let c = curve_from(|t| if t < 0.5 { 1.0 } else { 0.5 }, 1.5);
        let ipd = reconstruct_ipd(&c, &[0.0, 1.0], &[4, 2]).unwrap();
        let before: Vec<_> = ipd.records.iter().filter(|r| r.time < 1.0).collect();
        assert_eq!(before.len(), 2);
        assert!(before.iter().all(|r| r.event));
        assert_eq!(number_at_risk(&ipd.records, &[0.0, 1.0]), vec![4, 2]);
    }

    #[test]
    fn infeasible_interval_is_named() {
        // curve collapses to 10% while 90 of 100 remain at risk
        let c = curve_from(|t| if t < 1.0 { 1.0 } else { 0.1 }, 12.0);
        match reconstruct_ipd(&c, &[0.0, 6.0, 12.0], &[100, 90, 80]) {
            Err(Error::Reconstruction { start, end, .. }) => {
                assert_eq!((start, end), (0.0, 6.0));
            }
            other => panic!("expected reconstruction error, got {other:?}"),
        }
    }

    #[test]
    fn exponential_curve_round_trip() {
        let c = curve_from(|t| (-0.05 * t).exp(), 36.0);
        // counts consistent with light censoring
        let grid = [0.0, 6.0, 12.0, 18.0, 24.0, 30.0, 36.0];
        let counts = [200, 145, 104, 74, 52, 36, 24];
        let ipd = reconstruct_ipd(&c, &grid, &counts).unwrap();
        assert_eq!(ipd.n(), 200);
        assert_eq!(number_at_risk(&ipd.records, &grid), counts.to_vec());
        let km = km_estimator(&ipd.records);
        let sup = c
            .points
            .iter()
            .map(|p| (km.survival_at(p.time) - p.survival).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "sup {sup}");
    }

    #[test]
    fn bad_inputs() {
        let c = curve_from(|t| (-0.05 * t).exp(), 36.0);
        assert!(reconstruct_ipd(&c, &[0.0, 6.0], &[0, 0]).is_err());
        assert!(reconstruct_ipd(&c, &[0.0, 6.0], &[10, 12]).is_err());
        assert!(reconstruct_ipd(&c, &[1.0, 6.0], &[10, 8]).is_err());
        assert!(reconstruct_ipd(&c, &[0.0, 6.0, 60.0], &[10, 8, 1]).is_err());
    }
}
