//! Fit-quality metrics and the serializable fit report.
//!
//! Three numbers summarize a fitted approximation:
//!
//! * **ELBO** — Monte-Carlo average of `log joint - log q` over draws from
//!   the approximation; the quantity the optimizer ascends, and a lower bound
//!   on the log evidence.
//! * **Predictive log-likelihood** — the data's log-density under an equal-
//!   weight mixture placed at the fitted component means, a direct measure of
//!   how well the located components explain the observations.
//! * **DIC** — deviance information criterion: `-2 * loglik(mean params)`
//!   plus twice the effective parameter count `p_D`, which is estimated from
//!   the spread of the log-likelihood across draws of the component means.
//!   Lower is better; the penalty grows with posterior spread.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dists::log_sum_exp_raw;
use crate::dists::normal_logpdf_raw;
use crate::error::{Error, Result};
use crate::model::{draw_latents, elbo_over_draws, Dataset, GmmSpec, LatentDraw, VariationalParams};
use crate::optimizer::OptimizerConfig;

/// One optimizer iteration as recorded in the fit trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Iteration number, counted from one.
    pub t: usize,
    /// Relative parameter change produced by this step.
    pub delta: f64,
    /// Shrinkage factor, when the estimator computes one.
    pub shrink_factor: Option<f64>,
    /// Euclidean norm of the gradient estimate.
    pub grad_norm: f64,
    /// ELBO estimate from this iteration's own draws (no extra sampling).
    pub elbo: f64,
}

/// Everything a fit run reports: final metrics, the per-iteration trace, and
/// an echo of the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Estimator that drove the run.
    pub method: crate::estimators::EstimatorKind,
    /// Iterations actually performed.
    pub iterations: usize,
    /// Whether the relative-change rule triggered within the budget.
    pub converged: bool,
    /// Wall-clock seconds spent in the ascent loop (excludes final metrics).
    pub wall_time_s: f64,
    /// Final ELBO estimate (fresh draws, metrics stream).
    pub elbo: f64,
    /// Predictive log-likelihood at the fitted component means.
    pub loglik: f64,
    /// Deviance information criterion.
    pub dic: f64,
    /// Configuration echo for reproducibility.
    pub config: OptimizerConfig,
    /// Per-iteration diagnostics.
    pub trace: Vec<TraceRow>,
}

/// ELBO estimate from an existing set of draws:
/// mean over draws of `log joint - log q`.
pub fn elbo_from_draws(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    draws: &[LatentDraw],
) -> Result<f64> {
    elbo_over_draws(spec, data, lam, draws)
}

/// ELBO estimate from `s` fresh draws off the supplied generator.
pub fn elbo_estimate<R: Rng + ?Sized>(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    s: usize,
    rng: &mut R,
) -> Result<f64> {
    if s == 0 {
        return Err(Error::InvalidParameter(
            "ELBO estimation needs at least one draw".into(),
        ));
    }
    let draws = draw_latents(lam, s, rng);
    elbo_over_draws(spec, data, lam, &draws)
}

/// Log-likelihood of the data under an equal-weight mixture of normals with
/// the given component means and the model's observation variance:
/// `sum_i log( (1/K) * sum_k N(y_i; means_k, sigma2 * I) )`.
pub fn loglik(spec: &GmmSpec, data: &Dataset, means: &Array2<f64>) -> Result<f64> {
    let k = spec.k();
    let dim = spec.dim();
    if means.dim() != (k, dim) {
        return Err(Error::DimensionMismatch(format!(
            "means shape {:?} does not match model shape ({k}, {dim})",
            means.dim()
        )));
    }
    if data.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "data dim {} does not match model dim {dim}",
            data.dim()
        )));
    }
    let obs = data.observations();
    let ln_k = (k as f64).ln();
    let mut per_component = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..data.n() {
        for kk in 0..k {
            let mut ll = 0.0;
            for j in 0..dim {
                ll += normal_logpdf_raw(obs[[i, j]], means[[kk, j]], spec.sigma2());
            }
            per_component[kk] = ll;
        }
        total += log_sum_exp_raw(&per_component) - ln_k;
    }
    Ok(total)
}

/// Deviance information criterion for a fitted approximation.
///
/// Uses `s` draws of the component means from the approximation — only the
/// mean blocks are sampled, row by row in the same order as the full latent
/// sampler — to estimate the effective parameter count
/// `p_D = 2 * (loglik(fitted means) - mean_s loglik(drawn means))`, and
/// returns `-2 * loglik(fitted means) + 2 * p_D`.
pub fn dic<R: Rng + ?Sized>(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    s: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(dic_parts(spec, data, lam, s, rng)?.0)
}

/// DIC plus its ingredients `(dic, p_d, loglik_at_fit)`; split out for tests.
pub(crate) fn dic_parts<R: Rng + ?Sized>(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    s: usize,
    rng: &mut R,
) -> Result<(f64, f64, f64)> {
    if s == 0 {
        return Err(Error::InvalidParameter(
            "DIC estimation needs at least one draw".into(),
        ));
    }
    if lam.k() != spec.k() || lam.dim() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "variational shape ({}, {}) does not match model shape ({}, {})",
            lam.k(),
            lam.dim(),
            spec.k(),
            spec.dim()
        )));
    }
    let ll_hat = loglik(spec, data, lam.means())?;
    let mut acc = 0.0;
    let mut mu = Array2::zeros((lam.k(), lam.dim()));
    for _ in 0..s {
        for kk in 0..lam.k() {
            for j in 0..lam.dim() {
                let eps: f64 = rng.sample(StandardNormal);
                mu[[kk, j]] = lam.means()[[kk, j]] + lam.factor_var(kk, j).sqrt() * eps;
            }
        }
        acc += loglik(spec, data, &mu)?;
    }
    let mean_ll = acc / s as f64;
    let p_d = 2.0 * (ll_hat - mean_ll);
    Ok((-2.0 * ll_hat + 2.0 * p_d, p_d, ll_hat))
}
