//! Predictive survival curves for a new trial and their beta-Stacy
//! approximation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::bsp::{bsp_params, closed_form_variance, BSPHyper, BSPParams};
use super::mcmc::PosteriorSample;
use crate::error::{Error, Result};
use crate::reconstruct::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveEnsemble {
    pub grid: TimeGrid,
    /// `curves[i][k] = S*_i(t_k)`.
    pub curves: Vec<Vec<f64>>,
    /// `hazards[i][k] = η*_ik`.
    pub hazards: Vec<Vec<f64>>,
}

impl PredictiveEnsemble {
    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn mean(&self) -> Vec<f64> {
        column_moments(&self.curves).0
    }

    /// Sample variance at each grid time.
    pub fn variance(&self) -> Vec<f64> {
        column_moments(&self.curves).1
    }
}

fn column_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let k = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mut mean = vec![0.0; k];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; k];
    if rows.len() > 1 {
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / (n - 1.0);
            }
        }
    }
    (mean, var)
}

/// Hazard draw that tolerates parameters too extreme for the sampler by
/// falling back to the mean.
fn draw_hazard<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let mean = a / (a + b);
    match Beta::new(a, b) {
        Ok(dist) => {
            let x: f64 = dist.sample(rng);
            if x.is_finite() {
                x.clamp(0.0, 1.0)
            } else {
                mean
            }
        }
        Err(_) => {
            if mean.is_finite() {
                mean
            } else {
                0.0
            }
        }
    }
}

fn curve_from_params<R: Rng + ?Sized>(rng: &mut R, p: &BSPParams) -> (Vec<f64>, Vec<f64>) {
    let mut s = 1.0;
    let mut curve = Vec::with_capacity(p.len());
    let mut hazards = Vec::with_capacity(p.len());
    for (&a, &b) in p.alpha.iter().zip(&p.beta) {
        let eta = draw_hazard(rng, a, b);
        s *= 1.0 - eta;
        hazards.push(eta);
        curve.push(s);
    }
    (curve, hazards)
}

/// Survival curves drawn directly from one BSP.
pub fn bsp_draws(h: &BSPHyper, grid: &TimeGrid, m: usize, seed: u64) -> PredictiveEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = bsp_params(h, grid);
    let (curves, hazards) = (0..m).map(|_| curve_from_params(&mut rng, &p)).unzip();
    PredictiveEnsemble {
        grid: grid.clone(),
        curves,
        hazards,
    }
}

/// `M` draws of `S*`: hyperparameters resampled from the posterior, then
/// independent `Beta(α_k, β_k)` hazards.
pub fn predictive_draws(post: &PosteriorSample, grid: &TimeGrid, m: usize, seed: u64) -> Result<PredictiveEnsemble> {
    if post.draws.is_empty() {
        return Err(Error::Model("posterior sample is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (curves, hazards) = (0..m)
        .map(|_| {
            let d = &post.draws[rng.random_range(0..post.draws.len())];
            curve_from_params(&mut rng, &bsp_params(&d.hyper(), grid))
        })
        .unzip();
    Ok(PredictiveEnsemble {
        grid: grid.clone(),
        curves,
        hazards,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveBSPFit {
    pub lambda_star: f64,
    pub kappa_star: f64,
    pub c_star: f64,
    pub times: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub ene: f64,
    pub ess: f64,
    pub vhat: Vec<f64>,
    pub vstar: Vec<f64>,
    /// The variance match wanted a precision at or beyond `N`.
    pub at_upper_bound: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const C_REL_TOL: f64 = 1e-6;
const SCAN_POINTS: usize = 400;
const SCAN_DECADES: f64 = 8.0;

fn variance_mismatch(lambda: f64, kappa: f64, c: f64, grid: &TimeGrid, vhat: &[f64]) -> f64 {
    let h = BSPHyper { lambda, kappa, c };
    closed_form_variance(&bsp_params(&h, grid))
        .iter()
        .zip(vhat)
        .map(|(a, b)| (a - b).powi(2))
        .sum()
}

/// `λ*`, `κ*` are posterior means; `c*` minimises the squared distance
/// between the closed-form and ensemble variances over `(0, N]`.
pub fn fit_predictive_bsp(post: &PosteriorSample, ens: &PredictiveEnsemble) -> Result<PredictiveBSPFit> {
    if ens.len() < 2 {
        return Err(Error::Model("predictive ensemble needs at least 2 draws".into()));
    }
    if post.draws.is_empty() {
        return Err(Error::Model("posterior sample is empty".into()));
    }
    let vhat = ens.variance();
    if vhat.iter().all(|v| *v == 0.0) {
        return Err(Error::Model(
            "predictive ensemble has zero variance everywhere; c* is undefined".into(),
        ));
    }
    let (lambda_star, kappa_star, _) = post.mean();
    let n = post.n_total;
    let grid = &ens.grid;
    let f = |ln_c: f64| variance_mismatch(lambda_star, kappa_star, ln_c.exp(), grid, &vhat);

    // coarse scan in ln c, then golden section around the best point
    let hi = n.ln();
    let lo = hi - SCAN_DECADES * std::f64::consts::LN_10;
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let (best, _) = (0..SCAN_POINTS)
        .map(|i| (i, f(lo + step * i as f64)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = (lo + step * (best + 1) as f64).min(hi);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > C_REL_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    let mut ln_c = 0.5 * (a + b);
    for cand in [lo, hi] {
        if f(cand) < f(ln_c) {
            ln_c = cand;
        }
    }
    let c_star = ln_c.exp().min(n);
    let at_upper_bound = hi - ln_c < 2.0 * C_REL_TOL;
    let h = BSPHyper::new(lambda_star, kappa_star, c_star)?;
    let params = bsp_params(&h, grid);
    let vstar = closed_form_variance(&params);
    Ok(PredictiveBSPFit {
        lambda_star,
        kappa_star,
        c_star,
        times: grid.times().to_vec(),
        ene: params.alpha.iter().sum(),
        ess: c_star,
        alpha_star: params.alpha,
        beta_star: params.beta,
        vhat,
        vstar,
        at_upper_bound,
    })
}
