//! PAM (BUILD + SWAP) on a precomputed dissimilarity matrix.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DissimilarityMatrix;
use crate::error::{Error, Result};

const COST_EPS: f64 = 1e-12;

/// Random restarts tried on top of the BUILD initialisation.
pub const DEFAULT_RESTARTS: usize = 8;

/// One run of SWAP from a given set of medoids.
#[derive(Debug, Clone, PartialEq)]
pub struct PamRun {
    pub medoids: Vec<usize>,
    pub cost: f64,
    /// Objective after BUILD (or the supplied start) and after every accepted swap.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub medoid: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub medoids: Vec<String>,
    /// Trial label to cluster index (position in `clusters`).
    pub assignment: BTreeMap<String, usize>,
    pub clusters: Vec<Cluster>,
    pub silhouette: BTreeMap<String, f64>,
    pub mean_silhouette: f64,
    pub cost: f64,
    /// Set when silhouettes carry no information (all within- and
    /// between-cluster distances are zero).
    pub degenerate: bool,
    /// Mean silhouette per candidate k when k was chosen automatically.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_scan: Vec<(usize, f64)>,
}

/// Index order used for every tie: by label, then by position.
fn label_rank(labels: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]).then(a.cmp(&b)));
    let mut rank = vec![0; labels.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Nearest medoid per point; ties go to the medoid with the smaller label.
fn assign(d: &[Vec<f64>], medoids: &[usize], rank: &[usize]) -> Vec<usize> {
    (0..d.len())
        .map(|i| {
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate().skip(1) {
                let cur = medoids[best];
                match d[i][m].partial_cmp(&d[i][cur]).unwrap_or(Ordering::Equal) {
                    Ordering::Less => best = c,
                    Ordering::Equal if rank[m] < rank[cur] => best = c,
                    _ => {}
                }
            }
            best
        })
        .collect()
}

fn total_cost(d: &[Vec<f64>], medoids: &[usize]) -> f64 {
    (0..d.len())
        .map(|i| medoids.iter().map(|&m| d[i][m]).fold(f64::INFINITY, f64::min))
        .sum()
}

fn build(d: &[Vec<f64>], k: usize, rank: &[usize]) -> Vec<usize> {
    let h = d.len();
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    while medoids.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for c in (0..h).filter(|c| !medoids.contains(c)) {
            let mut trial = medoids.clone();
            trial.push(c);
            let cost = total_cost(d, &trial);
            let better = match best {
                None => true,
                Some((bc, bi)) => cost < bc - COST_EPS || (cost <= bc + COST_EPS && rank[c] < rank[bi]),
            };
            if better {
                best = Some((cost, c));
            }
        }
        medoids.push(best.expect("k < h leaves a candidate").1);
    }
    medoids
}

/// Steepest-descent SWAP: apply the best improving (medoid, non-medoid)
/// exchange until none lowers the objective.
pub fn pam_swap(matrix: &DissimilarityMatrix, start: Vec<usize>) -> PamRun {
    let d = &matrix.values;
    let rank = label_rank(&matrix.labels);
    let h = d.len();
    let mut medoids = start;
    let mut cost = total_cost(d, &medoids);
    let mut history = vec![cost];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for slot in 0..medoids.len() {
            for c in (0..h).filter(|c| !medoids.contains(c)) {
                let mut trial = medoids.clone();
                trial[slot] = c;
                let t = total_cost(d, &trial);
                let better = match best {
                    None => t < cost - COST_EPS,
                    Some((bc, _, bi)) => t < bc - COST_EPS || (t <= bc + COST_EPS && rank[c] < rank[bi]),
                };
                if better {
                    best = Some((t, slot, c));
                }
            }
        }
        match best {
            Some((t, slot, c)) => {
                medoids[slot] = c;
                cost = t;
                history.push(cost);
            }
            None => break,
        }
    }
    PamRun {
        medoids,
        cost,
        history,
    }
}

/// BUILD followed by SWAP, then `restarts` SWAP runs from random medoid
/// sets; the lowest objective wins, ties going to the earlier run.
pub fn pam(matrix: &DissimilarityMatrix, k: usize, seed: u64, restarts: usize) -> Result<PamRun> {
    let h = matrix.len();
    if k < 1 || k > h {
        return Err(Error::Clustering(format!("k = {k} outside [1, {h}]")));
    }
    let rank = label_rank(&matrix.labels);
    let mut best = pam_swap(matrix, build(&matrix.values, k, &rank));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let start = sample(&mut rng, h, k).into_vec();
        let run = pam_swap(matrix, start);
        if run.cost < best.cost - COST_EPS {
            best = run;
        }
    }
    // canonical medoid order: by label
    best.medoids.sort_by_key(|&m| rank[m]);
    Ok(best)
}

/// Per-point silhouette; singletons score 0. Returns the values and whether
/// every non-singleton had a zero scale (no information).
pub fn silhouettes(d: &[Vec<f64>], assignment: &[usize], k: usize) -> (Vec<f64>, bool) {
    let h = d.len();
    let mut degenerate = true;
    let s = (0..h)
        .map(|i| {
            let own = assignment[i];
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for j in (0..h).filter(|&j| j != i) {
                sums[assignment[j]] += d[i][j];
                counts[assignment[j]] += 1;
            }
            if counts[own] == 0 {
                return 0.0;
            }
            let a = sums[own] / counts[own] as f64;
            let b = (0..k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let scale = a.max(b);
            if scale > 0.0 {
                degenerate = false;
                (b - a) / scale
            } else {
                0.0
            }
        })
        .collect();
    (s, degenerate)
}

fn result_for(matrix: &DissimilarityMatrix, run: &PamRun) -> ClusteringResult {
    let rank = label_rank(&matrix.labels);
    let k = run.medoids.len();
    let assignment = assign(&matrix.values, &run.medoids, &rank);
    let (sil, degenerate) = silhouettes(&matrix.values, &assignment, k);
    let clusters = run
        .medoids
        .iter()
        .enumerate()
        .map(|(c, &m)| {
            let mut members: Vec<usize> = (0..matrix.len()).filter(|&i| assignment[i] == c).collect();
            members.sort_by_key(|&i| rank[i]);
            Cluster {
                medoid: matrix.labels[m].clone(),
                members: members.into_iter().map(|i| matrix.labels[i].clone()).collect(),
            }
        })
        .collect();
    ClusteringResult {
        k,
        medoids: run.medoids.iter().map(|&m| matrix.labels[m].clone()).collect(),
        assignment: matrix
            .labels
            .iter()
            .cloned()
            .zip(assignment.iter().copied())
            .collect(),
        clusters,
        silhouette: matrix.labels.iter().cloned().zip(sil.iter().copied()).collect(),
        mean_silhouette: sil.iter().sum::<f64>() / sil.len() as f64,
        cost: run.cost,
        degenerate,
        k_scan: Vec::new(),
    }
}

/// k-medoids over a dissimilarity matrix. With `k = None`, k is the value in
/// `[2, H - 1]` with the highest mean silhouette (smaller k on ties).
pub fn cluster_kmedoids(matrix: &DissimilarityMatrix, k: Option<usize>, seed: u64) -> Result<ClusteringResult> {
    let h = matrix.len();
    match k {
        Some(k) => {
            if k < 2 || k + 1 > h {
                return Err(Error::Clustering(format!(
                    "k = {k} outside [2, {}] for {h} trials",
                    h.saturating_sub(1)
                )));
            }
            Ok(result_for(matrix, &pam(matrix, k, seed, DEFAULT_RESTARTS)?))
        }
        None => {
            if h < 3 {
                return Err(Error::Clustering(format!(
                    "choosing k needs at least 3 trials, found {h}"
                )));
            }
            let mut best: Option<ClusteringResult> = None;
            let mut scan = Vec::new();
            for k in 2..h {
                let r = result_for(matrix, &pam(matrix, k, seed, DEFAULT_RESTARTS)?);
                scan.push((k, r.mean_silhouette));
                if best
                    .as_ref()
                    .is_none_or(|b| r.mean_silhouette > b.mean_silhouette + COST_EPS)
                {
                    best = Some(r);
                }
            }
            let mut best = best.expect("h >= 3 gives at least one k");
            best.k_scan = scan;
            Ok(best)
        }
    }
}
