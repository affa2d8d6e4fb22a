//! Adaptive random-walk Metropolis over `(ln λ, ln κ, logit(c / N))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bsp::{data_loglik_unchecked, BSPHyper, Priors};
use crate::error::{Error, Result};
use crate::reconstruct::{EventTable, TimeGrid};

pub const RHAT_LIMIT: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub chains: usize,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Keep the fit even when split-R̂ exceeds the limit.
    pub force: bool,
    /// Overrides `N`, the bound on `c`; defaults to the pooled sample size.
    pub n_total: Option<f64>,
    pub priors: Priors,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iters: 20_000,
            burn_in: 10_000,
            thin: 5,
            seed: 1,
            force: false,
            n_total: None,
            priors: Priors::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iter: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub c: f64,
}

impl Draw {
    pub fn hyper(&self) -> BSPHyper {
        BSPHyper {
            lambda: self.lambda,
            kappa: self.kappa,
            c: self.c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Post-burn-in acceptance rate per chain.
    pub acceptance: Vec<f64>,
    pub rhat_lambda: f64,
    pub rhat_kappa: f64,
    pub rhat_c: f64,
}

impl ChainDiagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat_lambda.max(self.rhat_kappa).max(self.rhat_c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub draws: Vec<Draw>,
    pub diagnostics: Option<ChainDiagnostics>,
    pub seed: u64,
    pub n_total: f64,
}

impl PosteriorSample {
    /// A point mass, for working with known hyperparameters.
    pub fn fixed(h: BSPHyper, n_total: f64) -> Self {
        Self {
            draws: vec![Draw {
                chain: 0,
                iter: 0,
                lambda: h.lambda,
                kappa: h.kappa,
                c: h.c,
            }],
            diagnostics: None,
            seed: 0,
            n_total,
        }
    }

    pub fn mean(&self) -> (f64, f64, f64) {
        let n = self.draws.len() as f64;
        let (l, k, c) = self
            .draws
            .iter()
            .fold((0.0, 0.0, 0.0), |acc, d| (acc.0 + d.lambda, acc.1 + d.kappa, acc.2 + d.c));
        (l / n, k / n, c / n)
    }

    /// Empirical `(lo, hi)` quantiles of one parameter.
    pub fn interval(&self, f: impl Fn(&Draw) -> f64, lo: f64, hi: f64) -> (f64, f64) {
        let mut v: Vec<f64> = self.draws.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        (quantile_sorted(&v, lo), quantile_sorted(&v, hi))
    }
}

/// Linear-interpolation quantile (type 7) of sorted values.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Gelman-Rubin R̂ with every chain split in half.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    if halves.len() < 2 || n < 2 {
        return f64::NAN;
    }
    let m = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| h[..n].iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    (var_plus / w).sqrt()
}

struct Target<'a> {
    tables: &'a [EventTable],
    grid: &'a TimeGrid,
    priors: Priors,
    n_total: f64,
}

impl Target<'_> {
    fn hyper(&self, x: &[f64; 3]) -> BSPHyper {
        let q = 1.0 / (1.0 + (-x[2]).exp());
        BSPHyper {
            lambda: x[0].exp(),
            kappa: x[1].exp(),
            c: q * self.n_total,
        }
    }

    /// Log density on the unconstrained scale, Jacobian included.
    fn ln_density(&self, x: &[f64; 3]) -> f64 {
        let h = self.hyper(x);
        if !(h.lambda > 0.0 && h.kappa > 0.0 && h.c > 0.0 && h.c < self.n_total)
            || !h.lambda.is_finite()
            || !h.kappa.is_finite()
        {
            return f64::NEG_INFINITY;
        }
        let q = h.c / self.n_total;
        let jac = x[0] + x[1] + q.ln() + (1.0 - q).ln();
        let v = data_loglik_unchecked(&h, self.tables, self.grid) + self.priors.ln_density(&h, self.n_total) + jac;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

/// Crude Weibull fit to the pooled discrete hazard, used to start chains:
/// least squares of `ln H(t_k)` on `ln t_k`.
fn pooled_start(tables: &[EventTable], grid: &TimeGrid) -> (f64, f64) {
    let mut cum = 0.0;
    let mut pts = Vec::new();
    for (k, &t) in grid.times().iter().enumerate() {
        let d: u64 = tables.iter().map(|x| x.d[k]).sum();
        let r: u64 = tables.iter().map(|x| x.r[k]).sum();
        if r == 0 {
            break;
        }
        cum += -(1.0 - d as f64 / r as f64).max(1e-12).ln();
        if cum > 0.0 {
            pts.push((t.ln(), cum.ln()));
        }
    }
    if pts.len() < 2 {
        return (0.05, 1.0);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let kappa = if sxx > 0.0 { (sxy / sxx).clamp(0.1, 10.0) } else { 1.0 };
    let lambda = (my - kappa * mx).exp();
    (lambda, kappa)
}

fn cholesky3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn covariance(xs: &[[f64; 3]]) -> [[f64; 3]; 3] {
    let n = xs.len() as f64;
    let mut mean = [0.0; 3];
    for x in xs {
        for i in 0..3 {
            mean[i] += x[i] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for x in xs {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    cov
}

struct ChainOut {
    kept: Vec<(usize, [f64; 3])>,
    acceptance: f64,
}

const ADAPT_EVERY: usize = 100;
const ADAPT_FROM: usize = 500;
const TARGET_ACCEPT: f64 = 0.3;

fn run_chain(target: &Target, cfg: &McmcConfig, chain: usize, start: (f64, f64)) -> ChainOut {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64 + 1);
    // overdispersed starting point around the pooled fit
    let mut x = [
        start.0.ln() + 0.5 * rng.sample::<f64, _>(StandardNormal),
        start.1.ln() + 0.2 * rng.sample::<f64, _>(StandardNormal),
        1.5 * rng.sample::<f64, _>(StandardNormal),
    ];
    let mut lp = target.ln_density(&x);
    let mut tries = 0;
    while !lp.is_finite() && tries < 1000 {
        x = [
            start.0.ln() + 0.1 * rng.sample::<f64, _>(StandardNormal),
            start.1.ln() + 0.05 * rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        lp = target.ln_density(&x);
        tries += 1;
    }

    let mut chol = [[0.1, 0.0, 0.0], [0.0, 0.05, 0.0], [0.0, 0.0, 0.3]];
    let mut scale: f64 = 1.0;
    let mut history: Vec<[f64; 3]> = Vec::with_capacity(cfg.burn_in);
    let mut window_accepts = 0usize;
    let mut accepts = 0usize;
    let mut kept = Vec::new();

    for it in 0..cfg.iters {
        let z: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let mut prop = x;
        for i in 0..3 {
            prop[i] += scale * (0..=i).map(|j| chol[i][j] * z[j]).sum::<f64>();
        }
        let lp_prop = target.ln_density(&prop);
        let u: f64 = rng.random();
        if lp_prop.is_finite() && u.ln() < lp_prop - lp {
            x = prop;
            lp = lp_prop;
            if it >= cfg.burn_in {
                accepts += 1;
            } else {
                window_accepts += 1;
            }
        }
        if it < cfg.burn_in {
            history.push(x);
            if (it + 1) % ADAPT_EVERY == 0 {
                let rate = window_accepts as f64 / ADAPT_EVERY as f64;
                window_accepts = 0;
                scale *= ((rate - TARGET_ACCEPT) * 2.0).exp();
                if history.len() >= ADAPT_FROM {
                    let tail = &history[history.len() / 2..];
                    let mut cov = covariance(tail);
                    let base = 2.38f64.powi(2) / 3.0;
                    for (i, row) in cov.iter_mut().enumerate() {
                        for v in row.iter_mut() {
                            *v *= base;
                        }
                        row[i] += 1e-8;
                    }
                    if let Some(l) = cholesky3(&cov) {
                        chol = l;
                    }
                }
            }
        } else if (it - cfg.burn_in) % cfg.thin == 0 {
            kept.push((it, x));
        }
    }
    let post = cfg.iters.saturating_sub(cfg.burn_in).max(1);
    ChainOut {
        kept,
        acceptance: accepts as f64 / post as f64,
    }
}

/// Posterior sample of `(λ, κ, c)` given event tables from one treatment
/// class. Chains run on separate threads with their own generator streams.
pub fn fit_bhm(tables: &[EventTable], grid: &TimeGrid, cfg: &McmcConfig) -> Result<PosteriorSample> {
    if tables.is_empty() {
        return Err(Error::Model("no event tables to fit".into()));
    }
    if cfg.chains == 0 || cfg.thin == 0 || cfg.iters <= cfg.burn_in {
        return Err(Error::Input(
            "MCMC needs chains >= 1, thin >= 1 and iters > burn_in".into(),
        ));
    }
    // validates table shapes
    super::bsp::data_loglik(&BSPHyper::new(0.1, 1.0, 1.0)?, tables, grid)?;
    let n_total = cfg
        .n_total
        .unwrap_or_else(|| tables.iter().map(|t| t.r.first().copied().unwrap_or(0) as f64).sum());
    if !(n_total > 0.0) {
        return Err(Error::Model("total sample size N is zero; nothing bounds c".into()));
    }
    let target = Target {
        tables,
        grid,
        priors: cfg.priors,
        n_total,
    };
    let start = pooled_start(tables, grid);

    let outs: Vec<ChainOut> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.chains)
            .map(|c| {
                let target = &target;
                s.spawn(move || run_chain(target, cfg, c, start))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });

    let per_param = |i: usize| -> Vec<Vec<f64>> {
        outs.iter().map(|o| o.kept.iter().map(|(_, x)| x[i]).collect()).collect()
    };
    let diagnostics = ChainDiagnostics {
        acceptance: outs.iter().map(|o| o.acceptance).collect(),
        rhat_lambda: split_rhat(&per_param(0)),
        rhat_kappa: split_rhat(&per_param(1)),
        rhat_c: split_rhat(&per_param(2)),
    };
    let draws = outs
        .iter()
        .enumerate()
        .flat_map(|(chain, o)| {
            let target = &target;
            o.kept.iter().map(move |(iter, x)| {
                let h = target.hyper(x);
                Draw {
                    chain,
                    iter: *iter,
                    lambda: h.lambda,
                    kappa: h.kappa,
                    c: h.c,
                }
            })
        })
        .collect();
    let rhat = diagnostics.max_rhat();
    if cfg.chains > 1 && !(rhat <= RHAT_LIMIT) && !cfg.force {
        return Err(Error::Diagnostics(format!(
            "split R-hat {rhat:.3} exceeds {RHAT_LIMIT} (lambda {:.3}, kappa {:.3}, c {:.3})",
            diagnostics.rhat_lambda, diagnostics.rhat_kappa, diagnostics.rhat_c
        )));
    }
    Ok(PosteriorSample {
        draws,
        diagnostics: Some(diagnostics),
        seed: cfg.seed,
        n_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhat_of_identical_chains_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let r = split_rhat(&chains);
        assert!((r - 1.0).abs() < 0.01, "{r}");
        let shifted: Vec<Vec<f64>> = chains
            .iter()
            .enumerate()
            .map(|(i, c)| c.iter().map(|x| x + 3.0 * i as f64).collect())
            .collect();
        assert!(split_rhat(&shifted) > 1.5);
        // trend within a chain is caught by splitting
        let trend: Vec<Vec<f64>> = (0..2).map(|_| (0..1000).map(|i| i as f64).collect()).collect();
        assert!(split_rhat(&trend) > 1.5);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.125), 1.5);
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = [[4.0, 2.0, 0.4], [2.0, 3.0, 0.1], [0.4, 0.1, 1.0]];
        let l = cholesky3(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - a[i][j]).abs() < 1e-12);
            }
        }
        assert!(cholesky3(&[[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_none());
    }
}
