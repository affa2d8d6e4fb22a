//! Discrete-time beta-Stacy process on a time grid, centred on a Weibull
//! survival function with constant precision.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::reconstruct::{EventTable, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BSPHyper {
    pub lambda: f64,
    pub kappa: f64,
    pub c: f64,
}

impl BSPHyper {
    pub fn new(lambda: f64, kappa: f64, c: f64) -> Result<Self> {
        let h = Self { lambda, kappa, c };
        h.check()?;
        Ok(h)
    }

    pub fn check(&self) -> Result<()> {
        if [self.lambda, self.kappa, self.c].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Model(format!(
                "hyperparameters must be finite and > 0: lambda {}, kappa {}, c {}",
                self.lambda, self.kappa, self.c
            )))
        }
    }

    /// Cumulative hazard `λ t^κ` of the centring Weibull.
    pub fn cum_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            self.lambda * t.powf(self.kappa)
        }
    }

    /// `G(t) = exp(-λ t^κ)`.
    pub fn g(&self, t: f64) -> f64 {
        (-self.cum_hazard(t)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSPParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BSPParams {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `E[S(t_k)] = Π β_j / (α_j + β_j)`.
    pub fn mean_survival(&self) -> Vec<f64> {
        let mut s = 1.0;
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| {
                s *= b / (a + b);
                s
            })
            .collect()
    }
}

/// `α_k = c (G(t_{k-1}) - G(t_k))`, `β_k = c G(t_k)` with `t_0 = 0`.
pub fn bsp_params(h: &BSPHyper, grid: &TimeGrid) -> BSPParams {
    let mut alpha = Vec::with_capacity(grid.len());
    let mut beta = Vec::with_capacity(grid.len());
    let mut prev = 0.0;
    for &t in grid.times() {
        let cells = LogCell::new(h, prev, t);
        alpha.push(cells.ln_alpha().exp());
        beta.push(cells.ln_beta().exp());
        prev = t;
    }
    BSPParams { alpha, beta }
}

/// Conjugate update: `α_k + d_k`, `β_k + m_k`.
pub fn posterior_update(params: &BSPParams, d: &[u64], m: &[u64]) -> Result<BSPParams> {
    if d.len() != params.len() || m.len() != params.len() {
        return Err(Error::Input(format!(
            "posterior update needs {} counts, got d {} and m {}",
            params.len(),
            d.len(),
            m.len()
        )));
    }
    Ok(BSPParams {
        alpha: params.alpha.iter().zip(d).map(|(a, &d)| a + d as f64).collect(),
        beta: params.beta.iter().zip(m).map(|(b, &m)| b + m as f64).collect(),
    })
}

/// Variance of `S(t_k)` when the hazards are independent
/// `Beta(α_k, β_k)`: `Π u_k - Π v_k` with `v_k = (β_k / (α_k + β_k))²`.
pub fn closed_form_variance(params: &BSPParams) -> Vec<f64> {
    let mut pu = 1.0;
    let mut pv = 1.0;
    params
        .alpha
        .iter()
        .zip(&params.beta)
        .map(|(&a, &b)| {
            let s = a + b;
            let v = (b / s).powi(2);
            let u = v + a * b / (s * s * (s + 1.0));
            pu *= u;
            pv *= v;
            (pu - pv).max(0.0)
        })
        .collect()
}

/// One grid cell in log space: `ln(α + β) = ln c - λ t_{k-1}^κ`, hazard
/// `h = 1 - exp(-λ (t_k^κ - t_{k-1}^κ))`. Avoids underflow of `G` deep in
/// the tail.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogCell {
    ln_total: f64,
    ln_h: f64,
    ln_1mh: f64,
}

impl LogCell {
    pub(crate) fn new(h: &BSPHyper, t_prev: f64, t: f64) -> Self {
        let h0 = h.cum_hazard(t_prev);
        let dh = h.cum_hazard(t) - h0;
        Self {
            ln_total: h.c.ln() - h0,
            ln_h: (-(-dh).exp_m1()).ln(),
            ln_1mh: -dh,
        }
    }

    pub(crate) fn ln_alpha(&self) -> f64 {
        self.ln_total + self.ln_h
    }

    pub(crate) fn ln_beta(&self) -> f64 {
        self.ln_total + self.ln_1mh
    }

    /// `ln B(α + d, β + m) - ln B(α, β)`.
    pub(crate) fn beta_binomial(&self, d: u64, m: u64) -> f64 {
        rising(self.ln_alpha(), d) + rising(self.ln_beta(), m) - rising(self.ln_total, d + m)
    }
}

/// `ln Γ(x + n) - ln Γ(x)` for `x = exp(ln_x)`, using
/// `Γ(x + 1) = x Γ(x)` so tiny `x` keeps full precision.
fn rising(ln_x: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let x = ln_x.exp();
    if n == 1 {
        return ln_x;
    }
    ln_x + ln_gamma(x + n as f64) - ln_gamma(x + 1.0)
}

/// Vague priors on the Weibull parameters and on `c / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    pub kappa_shape: f64,
    pub kappa_rate: f64,
    pub c_a: f64,
    pub c_b: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            lambda_shape: 0.01,
            lambda_rate: 0.01,
            kappa_shape: 0.01,
            kappa_rate: 0.01,
            c_a: 1.0,
            c_b: 1.0,
        }
    }
}

fn ln_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

fn ln_beta_density(q: f64, a: f64, b: f64) -> f64 {
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * q.ln() + (b - 1.0) * (1.0 - q).ln()
}

impl Priors {
    /// Log prior density of `(λ, κ, c)`, with `c / N` on the unit interval.
    pub fn ln_density(&self, h: &BSPHyper, n_total: f64) -> f64 {
        let q = h.c / n_total;
        if !(q > 0.0 && q < 1.0) {
            return f64::NEG_INFINITY;
        }
        ln_gamma_density(h.lambda, self.lambda_shape, self.lambda_rate)
            + ln_gamma_density(h.kappa, self.kappa_shape, self.kappa_rate)
            + ln_beta_density(q, self.c_a, self.c_b)
            - n_total.ln()
    }
}

fn check_tables(tables: &[EventTable], grid: &TimeGrid) -> Result<()> {
    for t in tables {
        if t.len() != grid.len() || t.r.len() != grid.len() {
            return Err(Error::Input(format!(
                "{}: event table has {} cells, grid has {}",
                t.arm,
                t.len(),
                grid.len()
            )));
        }
        if t.d.iter().zip(&t.r).any(|(d, r)| d > r) {
            return Err(Error::Input(format!("{}: events exceed number at risk", t.arm)));
        }
    }
    Ok(())
}

/// Beta-binomial log likelihood with the hazards integrated out; may be
/// `-inf` for hyperparameters the data rule out.
pub(crate) fn data_loglik_unchecked(h: &BSPHyper, tables: &[EventTable], grid: &TimeGrid) -> f64 {
    let mut total = 0.0;
    let mut prev = 0.0;
    for (k, &t) in grid.times().iter().enumerate() {
        let cell = LogCell::new(h, prev, t);
        for tab in tables {
            let d = tab.d[k];
            let m = tab.r[k] - d;
            if d + m > 0 {
                total += cell.beta_binomial(d, m);
            }
        }
        prev = t;
    }
    total
}

pub fn data_loglik(h: &BSPHyper, tables: &[EventTable], grid: &TimeGrid) -> Result<f64> {
    h.check()?;
    check_tables(tables, grid)?;
    Ok(data_loglik_unchecked(h, tables, grid))
}

/// Log posterior kernel of `(λ, κ, c)`: collapsed likelihood plus priors.
pub fn collapsed_loglik(
    h: &BSPHyper,
    tables: &[EventTable],
    grid: &TimeGrid,
    priors: &Priors,
    n_total: f64,
) -> Result<f64> {
    let value = data_loglik(h, tables, grid)? + priors.ln_density(h, n_total);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Model(format!(
            "log posterior is not finite at lambda {}, kappa {}, c {} (N = {n_total})",
            h.lambda, h.kappa, h.c
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArmKey, StudyId};

    fn grid(ts: &[f64]) -> TimeGrid {
        TimeGrid::new(ts.to_vec()).unwrap()
    }

    fn table(d: &[u64], r: &[u64]) -> EventTable {
        EventTable {
            arm: ArmKey::new(StudyId::new("t"), "A"),
            d: d.to_vec(),
            r: r.to_vec(),
        }
    }

    #[test]
    fn params_worked_example() {
        let h = BSPHyper::new(0.1, 1.0, 10.0).unwrap();
        let p = bsp_params(&h, &grid(&[1.0, 2.0]));
        assert!((p.alpha[0] - 10.0 * (1.0 - (-0.1f64).exp())).abs() < 1e-12);
        assert!((p.alpha[0] - 0.9516).abs() < 1e-4);
        assert!((p.beta[0] - 9.0484).abs() < 1e-4);
        assert!((p.alpha[0] + p.beta[0] - 10.0).abs() < 1e-12);
        // constant precision: β_k = β_{k-1} - α_k
        assert!((p.beta[1] - (p.beta[0] - p.alpha[1])).abs() < 1e-12);
    }

    #[test]
    fn alpha_telescopes() {
        let h = BSPHyper::new(0.04, 1.3, 250.0).unwrap();
        let g = grid(&(1..=24).map(|i| 3.0 * i as f64).collect::<Vec<_>>());
        let p = bsp_params(&h, &g);
        let sum: f64 = p.alpha.iter().sum();
        assert!((sum - 250.0 * (1.0 - h.g(72.0))).abs() < 1e-9);
        for (s, &t) in p.mean_survival().iter().zip(g.times()) {
            assert!((s - h.g(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn update_arithmetic() {
        let p = BSPParams {
            alpha: vec![1.0, 2.0],
            beta: vec![9.0, 7.0],
        };
        let q = posterior_update(&p, &[2, 0], &[8, 0]).unwrap();
        assert_eq!(q.alpha, vec![3.0, 2.0]);
        assert_eq!(q.beta, vec![17.0, 7.0]);
        assert!(posterior_update(&p, &[1], &[1, 1]).is_err());
    }

    #[test]
    fn single_factor_variance() {
        let p = BSPParams {
            alpha: vec![2.0],
            beta: vec![5.0],
        };
        let v = closed_form_variance(&p)[0];
        assert!((v - 10.0 / (49.0 * 8.0)).abs() < 1e-15);
        let big = BSPParams {
            alpha: vec![2e9],
            beta: vec![5e9],
        };
        assert!(closed_form_variance(&big)[0] < 1e-9);
    }

    #[test]
    fn empty_cell_contributes_nothing() {
        let h = BSPHyper::new(0.3, 0.7, 5.0).unwrap();
        let g = grid(&[1.0]);
        assert_eq!(data_loglik(&h, &[table(&[0], &[0])], &g).unwrap(), 0.0);
    }

    #[test]
    fn identical_tables_double() {
        let h = BSPHyper::new(0.05, 1.2, 80.0).unwrap();
        let g = grid(&[3.0, 6.0, 9.0]);
        let t = table(&[4, 3, 2], &[40, 30, 20]);
        let one = data_loglik(&h, std::slice::from_ref(&t), &g).unwrap();
        let two = data_loglik(&h, &[t.clone(), t], &g).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12 * one.abs());
    }

    #[test]
    fn tail_cells_stay_finite() {
        // G(t_K) underflows as a plain f64; the log-space cell does not
        let h = BSPHyper::new(2.0, 1.5, 100.0).unwrap();
        let g = grid(&[60.0, 63.0]);
        let v = data_loglik(&h, &[table(&[0, 0], &[1, 1])], &g).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn bad_tables_rejected() {
        let h = BSPHyper::new(0.1, 1.0, 10.0).unwrap();
        let g = grid(&[1.0, 2.0]);
        assert!(data_loglik(&h, &[table(&[1], &[3])], &g).is_err());
        assert!(data_loglik(&h, &[table(&[4, 0], &[3, 0])], &g).is_err());
        assert!(BSPHyper::new(0.0, 1.0, 1.0).is_err());
    }
}
