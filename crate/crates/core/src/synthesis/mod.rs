//! Hierarchical beta-Stacy synthesis of one treatment class and the
//! predictive survival curve of a new trial.

mod bsp;
mod mcmc;
mod predictive;

pub use bsp::{
    bsp_params, closed_form_variance, collapsed_loglik, data_loglik, posterior_update, BSPHyper, BSPParams, Priors,
};
pub use mcmc::{
    fit_bhm, quantile_sorted, split_rhat, ChainDiagnostics, Draw, McmcConfig, PosteriorSample, RHAT_LIMIT,
};
pub use predictive::{bsp_draws, fit_predictive_bsp, predictive_draws, PredictiveBSPFit, PredictiveEnsemble};

use crate::error::Result;
use crate::io::csv_text;

pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const PREDICTIVE_FILE: &str = "predictive.csv";
pub const BSP_FIT_FILE: &str = "bsp_fit.json";

pub fn render_posterior(post: &PosteriorSample) -> String {
    csv_text(
        &["chain", "iter", "lambda", "kappa", "c"],
        post.draws.iter().map(|d| {
            vec![
                d.chain.to_string(),
                d.iter.to_string(),
                d.lambda.to_string(),
                d.kappa.to_string(),
                d.c.to_string(),
            ]
        }),
    )
}

pub fn render_predictive(ens: &PredictiveEnsemble) -> String {
    let times = ens.grid.times();
    csv_text(
        &crate::io::PREDICTIVE_COLUMNS,
        ens.curves.iter().enumerate().flat_map(|(i, c)| {
            times
                .iter()
                .zip(c)
                .map(move |(t, s)| vec![i.to_string(), t.to_string(), s.to_string()])
        }),
    )
}

pub fn render_bsp_fit(fit: &PredictiveBSPFit) -> Result<String> {
    Ok(serde_json::to_string_pretty(fit)?)
}
