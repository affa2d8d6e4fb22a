//! Linking traced curve labels to risk-table arm labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest allowed difference in normalized label length for a fuzzy match.
pub const FUZZY_LENGTH_GAP: usize = 5;
/// Minimum length-normalized edit similarity for a fuzzy match.
pub const FUZZY_SIMILARITY: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Confirmed,
    Exact,
    Fuzzy,
    ColorFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmPair {
    pub curve_label: String,
    pub table_label: String,
    pub method: MatchMethod,
}

/// Injective curve-to-table assignment plus whatever could not be paired.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmMapping {
    pub pairs: Vec<ArmPair>,
    pub unmatched_curves: Vec<String>,
    pub unmatched_tables: Vec<String>,
    /// Curve labels left unmatched because two or more candidates tied.
    pub ambiguous: Vec<String>,
}

impl ArmMapping {
    pub fn table_label_for(&self, curve_label: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|p| p.curve_label == curve_label)
            .map(|p| p.table_label.as_str())
    }

    pub fn pair_for(&self, curve_label: &str) -> Option<&ArmPair> {
        self.pairs.iter().find(|p| p.curve_label == curve_label)
    }

    pub fn is_complete(&self) -> bool {
        self.unmatched_curves.is_empty() && self.unmatched_tables.is_empty()
    }
}

/// Lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize_label(s: &str) -> String {
    let mapped: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Fuzzy score between normalized labels, `None` when the pair is not eligible.
fn fuzzy_score(a: &str, b: &str) -> Option<f64> {
    let (la, lb) = (char_len(a), char_len(b));
    if la.abs_diff(lb) > FUZZY_LENGTH_GAP || la == 0 || lb == 0 {
        return None;
    }
    let sim = 1.0 - levenshtein(a, b) as f64 / la.max(lb) as f64;
    let contained = a.contains(b) || b.contains(a);
    if contained {
        Some(sim.max(FUZZY_SIMILARITY))
    } else if sim >= FUZZY_SIMILARITY {
        Some(sim)
    } else {
        None
    }
}

struct Pool<'a> {
    curves: Vec<&'a str>,
    tables: Vec<&'a str>,
    used_curves: BTreeSet<usize>,
    used_tables: BTreeSet<usize>,
    pairs: Vec<ArmPair>,
}

impl<'a> Pool<'a> {
    fn take(&mut self, ci: usize, ti: usize, method: MatchMethod) {
        self.used_curves.insert(ci);
        self.used_tables.insert(ti);
        self.pairs.push(ArmPair {
            curve_label: self.curves[ci].to_string(),
            table_label: self.tables[ti].to_string(),
            method,
        });
    }

    fn free_curves(&self) -> Vec<usize> {
        (0..self.curves.len())
            .filter(|i| !self.used_curves.contains(i))
            .collect()
    }

    fn free_tables(&self) -> Vec<usize> {
        (0..self.tables.len())
            .filter(|i| !self.used_tables.contains(i))
            .collect()
    }
}

/// Unique best index by score; `None` if empty, `Some(Err(()))` on a tie.
fn unique_best(scores: &[(usize, f64)]) -> Option<std::result::Result<usize, ()>> {
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
    match winners.as_slice() {
        [] => None,
        [one] => Some(Ok(*one)),
        _ => Some(Err(())),
    }
}

/// Hierarchical matcher: confirmed pairs, then exact normalized equality,
/// then gated fuzzy similarity, then shared plot colour.
///
/// `colors` maps curve labels and table labels to colour names; a curve and
/// a table arm pair up when they are the only free labels carrying a colour.
pub fn match_arms(
    curve_labels: &[String],
    table_labels: &[String],
    confirmed: Option<&[(String, String)]>,
    colors: Option<&BTreeMap<String, String>>,
) -> Result<ArmMapping> {
    if curve_labels.is_empty() || table_labels.is_empty() {
        return Err(Error::Input("match_arms needs at least one label on each side".into()));
    }
    let mut pool = Pool {
        curves: curve_labels.iter().map(String::as_str).collect(),
        tables: table_labels.iter().map(String::as_str).collect(),
        used_curves: BTreeSet::new(),
        used_tables: BTreeSet::new(),
        pairs: Vec::new(),
    };

    for (c, t) in confirmed.unwrap_or_default() {
        let ci = pool.curves.iter().position(|x| x == c);
        let ti = pool.tables.iter().position(|x| x == t);
        match (ci, ti) {
            (Some(ci), Some(ti)) => {
                if pool.used_curves.contains(&ci) || pool.used_tables.contains(&ti) {
                    return Err(Error::Input(format!(
                        "confirmed mapping {c:?} -> {t:?} reuses a label"
                    )));
                }
                pool.take(ci, ti, MatchMethod::Confirmed);
            }
            _ => {
                return Err(Error::Input(format!(
                    "confirmed mapping {c:?} -> {t:?} names an unknown label"
                )))
            }
        }
    }

    let norm_c: Vec<String> = pool.curves.iter().map(|s| normalize_label(s)).collect();
    let norm_t: Vec<String> = pool.tables.iter().map(|s| normalize_label(s)).collect();
    let mut ambiguous = BTreeSet::new();

    // exact: only when the normalized form is unique on both free sides
    for ci in pool.free_curves() {
        let tis: Vec<usize> = pool
            .free_tables()
            .into_iter()
            .filter(|&ti| norm_t[ti] == norm_c[ci])
            .collect();
        let twins = pool
            .free_curves()
            .into_iter()
            .filter(|&o| norm_c[o] == norm_c[ci])
            .count();
        match (tis.as_slice(), twins) {
            ([ti], 1) => pool.take(ci, *ti, MatchMethod::Exact),
            ([], _) => {}
            _ => {
                ambiguous.insert(ci);
            }
        }
    }

    // fuzzy: mutual unique best among eligible pairs
    let free_c: Vec<usize> = pool
        .free_curves()
        .into_iter()
        .filter(|ci| !ambiguous.contains(ci))
        .collect();
    let free_t = pool.free_tables();
    let score = |ci: usize, ti: usize| fuzzy_score(&norm_c[ci], &norm_t[ti]);
    let mut fuzzy = Vec::new();
    for &ci in &free_c {
        let row: Vec<(usize, f64)> = free_t
            .iter()
            .filter_map(|&ti| score(ci, ti).map(|s| (ti, s)))
            .collect();
        match unique_best(&row) {
            None => {}
            Some(Err(())) => {
                ambiguous.insert(ci);
            }
            Some(Ok(ti)) => {
                let col: Vec<(usize, f64)> = free_c
                    .iter()
                    .filter_map(|&oc| score(oc, ti).map(|s| (oc, s)))
                    .collect();
                match unique_best(&col) {
                    Some(Ok(back)) if back == ci => fuzzy.push((ci, ti)),
                    Some(Err(())) => {
                        ambiguous.insert(ci);
                    }
                    _ => {}
                }
            }
        }
    }
    for (ci, ti) in fuzzy {
        pool.take(ci, ti, MatchMethod::Fuzzy);
    }

    if let Some(colors) = colors {
        let free_t = pool.free_tables();
        for ci in pool.free_curves() {
            let Some(color) = colors.get(pool.curves[ci]) else {
                continue;
            };
            let same = |label: &str| colors.get(label) == Some(color);
            let tis: Vec<usize> = free_t
                .iter()
                .copied()
                .filter(|&ti| !pool.used_tables.contains(&ti) && same(pool.tables[ti]))
                .collect();
            let rivals = pool
                .free_curves()
                .into_iter()
                .filter(|&o| same(pool.curves[o]))
                .count();
            if let ([ti], 1) = (tis.as_slice(), rivals) {
                ambiguous.remove(&ci);
                pool.take(ci, *ti, MatchMethod::ColorFallback);
            }
        }
    }

    let unmatched_curves: Vec<String> = pool
        .free_curves()
        .into_iter()
        .map(|i| pool.curves[i].to_string())
        .collect();
    let unmatched_tables = pool
        .free_tables()
        .into_iter()
        .map(|i| pool.tables[i].to_string())
        .collect();
    let ambiguous = ambiguous
        .into_iter()
        .filter(|&i| !pool.used_curves.contains(&i))
        .map(|i| pool.curves[i].to_string())
        .collect();
    Ok(ArmMapping {
        pairs: pool.pairs,
        unmatched_curves,
        unmatched_tables,
        ambiguous,
    })
}
