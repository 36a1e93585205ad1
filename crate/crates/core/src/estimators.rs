//! Monte-Carlo gradient estimators for the ELBO.
//!
//! All four estimators consume the same latent draws and produce an estimate
//! of the ELBO gradient with respect to the flattened variational parameters
//! (see [`VariationalParams::flatten`] for the coordinate layout):
//!
//! * **Naive** — the plain score-function estimator: average over draws of
//!   `score × (log joint − log q)`.
//! * **James-Stein (positive part)** — the naive average, shrunk toward the
//!   origin by a data-driven factor in `[0, 1]`. The factor is computed from
//!   the estimated per-coordinate variance of the average and clamps at zero
//!   rather than overshooting past the origin.
//! * **Rao-Blackwellized** — each coordinate's sample value is built from the
//!   Markov blanket of its latent block instead of the full
//!   `log joint − log q` difference, discarding terms that only add noise.
//! * **Rao-Blackwellized + shrinkage** — the James-Stein factor applied to
//!   the Rao-Blackwellized average.
//!
//! The shrinkage factor is the complement of a norm-clipping factor; both are
//! exposed so callers can use either view. `js_shrink_factor` and
//! `clip_factor` are kept in exact floating-point agreement:
//! `js_shrink_factor(n * n, p, s2) == 1.0 - clip_factor(n, (p as f64 - 3.0) * s2, true)`
//! bit for bit whenever `p > 3`, `s2 > 0`, and `n > 0`.

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dists::{log_sum_exp_raw, normal_logpdf_raw, normal_score_raw, softmax_into};
use crate::error::{Error, Result};
use crate::model::{
    check_draw, check_lam_draw, draw_latents, log_joint, log_q, score_q, Dataset, GmmSpec,
    LatentDraw, VariationalParams,
};

/// Which gradient estimator to run.
///
/// The string forms (used by `Display`, `FromStr`, and serde) are `naive`,
/// `js`, `rb`, and `rbplus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    /// Plain score-function average.
    #[serde(rename = "naive")]
    Naive,
    /// Positive-part James-Stein shrinkage of the naive average.
    #[serde(rename = "js")]
    JsPlus,
    /// Rao-Blackwellized per-block estimator.
    #[serde(rename = "rb")]
    Rb,
    /// James-Stein shrinkage applied to the Rao-Blackwellized average.
    #[serde(rename = "rbplus")]
    RbPlus,
}

impl EstimatorKind {
    /// All four estimators, in the order they are reported everywhere.
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Naive,
        EstimatorKind::JsPlus,
        EstimatorKind::Rb,
        EstimatorKind::RbPlus,
    ];

    /// Stable lowercase name, matching the CLI `--method` values.
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::JsPlus => "js",
            EstimatorKind::Rb => "rb",
            EstimatorKind::RbPlus => "rbplus",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(EstimatorKind::Naive),
            "js" => Ok(EstimatorKind::JsPlus),
            "rb" => Ok(EstimatorKind::Rb),
            "rbplus" => Ok(EstimatorKind::RbPlus),
            other => Err(Error::InvalidParameter(format!(
                "unknown estimator '{other}' (expected naive, js, rb, or rbplus)"
            ))),
        }
    }
}

/// One per-draw gradient sample: a vector in the flattened parameter space.
///
/// Averaging these over draws gives the gradient estimate; their spread is
/// what the shrinkage estimators measure.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    /// Sample value per flattened coordinate.
    pub z: Array1<f64>,
}

/// A gradient estimate plus the diagnostics that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Estimated gradient in the flattened parameter layout.
    pub g: Array1<f64>,
    /// Which estimator produced this value.
    pub kind: EstimatorKind,
    /// Shrinkage factor in `[0, 1]`; `None` for estimators that do not shrink.
    pub shrink_factor: Option<f64>,
    /// Estimated per-coordinate variance of the averaged sample; `None` for
    /// estimators that do not shrink.
    pub sigma2_hat: Option<f64>,
}

fn check_samples(samples: &[GradientSample]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("need at least one gradient sample".into()))?;
    let p = first.z.len();
    if p == 0 {
        return Err(Error::InvalidParameter(
            "gradient samples must have at least one coordinate".into(),
        ));
    }
    for (s, sample) in samples.iter().enumerate() {
        if sample.z.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "gradient sample {s} has {} coordinates, expected {p}",
                sample.z.len()
            )));
        }
    }
    Ok(p)
}

/// Per-draw samples of the plain score-function estimator:
/// `z_s = score(lambda, draw_s) * (log joint(draw_s) - log q(draw_s))`.
pub fn score_samples(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    draws: &[LatentDraw],
) -> Result<Vec<GradientSample>> {
    let mut out = Vec::with_capacity(draws.len());
    for draw in draws {
        let diff = log_joint(spec, data, draw)? - log_q(lam, draw)?;
        let z = score_q(lam, draw)?.mapv_into(|v| v * diff);
        out.push(GradientSample { z });
    }
    Ok(out)
}

/// Draw `s` latent samples from `q` and turn them into score-function
/// gradient samples in one call.
pub fn collect_samples<R: Rng + ?Sized>(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    s: usize,
    rng: &mut R,
) -> Result<Vec<GradientSample>> {
    if s == 0 {
        return Err(Error::InvalidParameter(
            "need at least one draw to form gradient samples".into(),
        ));
    }
    let draws = draw_latents(lam, s, rng);
    score_samples(spec, data, lam, &draws)
}

/// Per-draw samples of the Rao-Blackwellized estimator.
///
/// Coordinate `j` of each sample is `score_j * blanket(block of j)`, where the
/// blanket keeps only the log-density terms that involve the coordinate's
/// latent block: a component's prior, its assigned observations, and its own
/// variational factor for mean/log-scale coordinates; the assignment prior,
/// the single observation, and the assignment's variational factor for logit
/// coordinates. Everything else in `log joint - log q` is constant with
/// respect to the block and would only add variance.
pub fn rb_samples(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    draws: &[LatentDraw],
) -> Result<Vec<GradientSample>> {
    let k = spec.k();
    let dim = spec.dim();
    let n = data.n();
    if data.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} does not match model dimension {dim}",
            data.dim()
        )));
    }
    if lam.k() != k || lam.dim() != dim || lam.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "variational shape ({}, {}, {}) does not match model/data shape ({k}, {dim}, {n})",
            lam.k(),
            lam.dim(),
            lam.n()
        )));
    }

    let kd = k * dim;
    let ln_k = (k as f64).ln();
    let obs = data.observations();
    let mut out = Vec::with_capacity(draws.len());

    // Scratch buffers reused across draws.
    let mut obs_ll = vec![0.0; n];
    let mut comp_ll = vec![0.0; k];
    let mut comp_blanket = vec![0.0; k];
    let mut probs = vec![0.0; k];

    for draw in draws {
        check_draw(spec, data, draw)?;
        check_lam_draw(lam, draw)?;
        let mut z = Array1::zeros(lam.p());

        // One pass over observations: per-observation log-likelihood under the
        // drawn means, accumulated per assigned component.
        comp_ll.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let zi = draw.assignments[i];
            let mut ll = 0.0;
            for j in 0..dim {
                ll += normal_logpdf_raw(obs[[i, j]], draw.component_means[[zi, j]], spec.sigma2());
            }
            obs_ll[i] = ll;
            comp_ll[zi] += ll;
        }

        // Component blankets: prior + assigned likelihood - variational factor.
        for kk in 0..k {
            let mut b = comp_ll[kk];
            for j in 0..dim {
                let mu = draw.component_means[[kk, j]];
                b += normal_logpdf_raw(mu, 0.0, spec.tau2());
                b -= normal_logpdf_raw(mu, lam.means()[[kk, j]], lam.factor_var(kk, j));
            }
            comp_blanket[kk] = b;
        }

        // Mean and log-scale coordinates: factor score times the component blanket.
        for kk in 0..k {
            for j in 0..dim {
                let (d_mean, d_logscale) = normal_score_raw(
                    draw.component_means[[kk, j]],
                    lam.means()[[kk, j]],
                    lam.factor_var(kk, j),
                );
                z[kk * dim + j] = d_mean * comp_blanket[kk];
                z[kd + kk * dim + j] = d_logscale * comp_blanket[kk];
            }
        }

        // Logit coordinates: categorical score times the assignment blanket.
        for i in 0..n {
            let zi = draw.assignments[i];
            let row = lam.logits().row(i);
            let row = row.as_slice().expect("logits rows are contiguous");
            softmax_into(row, &mut probs);
            let log_phi = row[zi] - log_sum_exp_raw(row);
            let blanket = -ln_k + obs_ll[i] - log_phi;
            for kk in 0..k {
                let indicator = if kk == zi { 1.0 } else { 0.0 };
                z[2 * kd + i * k + kk] = (indicator - probs[kk]) * blanket;
            }
        }

        out.push(GradientSample { z });
    }
    Ok(out)
}

/// Coordinate-wise average of gradient samples (the naive estimator).
pub fn naive_gradient(samples: &[GradientSample]) -> Result<GradientEstimate> {
    let g = mean_sample(samples)?;
    Ok(GradientEstimate {
        g,
        kind: EstimatorKind::Naive,
        shrink_factor: None,
        sigma2_hat: None,
    })
}

fn mean_sample(samples: &[GradientSample]) -> Result<Array1<f64>> {
    let p = check_samples(samples)?;
    let mut acc = Array1::zeros(p);
    for sample in samples {
        acc += &sample.z;
    }
    acc /= samples.len() as f64;
    Ok(acc)
}

/// Estimated per-coordinate variance of the *average* of `samples`: the
/// coordinate-wise sample variance (denominator `S - 1`) divided by `S`,
/// then averaged over coordinates.
///
/// Needs at least two samples; with one the spread is unobservable.
pub fn estimate_sigma2(samples: &[GradientSample]) -> Result<f64> {
    let p = check_samples(samples)?;
    let s = samples.len();
    if s < 2 {
        return Err(Error::InvalidParameter(
            "variance estimation needs at least two gradient samples".into(),
        ));
    }
    let mean = mean_sample(samples)?;
    let mut var_sum = 0.0;
    for j in 0..p {
        let mut ss = 0.0;
        for sample in samples {
            let d = sample.z[j] - mean[j];
            ss += d * d;
        }
        var_sum += ss / (s as f64 - 1.0);
    }
    Ok(var_sum / (p as f64 * s as f64))
}

/// Positive-part James-Stein shrinkage factor for an estimate with squared
/// norm `norm2`, dimension `p`, and estimated per-coordinate variance
/// `sigma2`: `max(0, 1 - (p - 3) * sigma2 / norm2)`.
///
/// Convention for the degenerate cases: a zero-norm estimate returns `0.0`
/// (shrinking the origin to the origin), and `p <= 3` returns `1.0` because
/// shrinkage has no dominance guarantee in three or fewer dimensions.
pub fn js_shrink_factor(norm2: f64, p: usize, sigma2: f64) -> f64 {
    if norm2 == 0.0 {
        return 0.0;
    }
    if p <= 3 {
        return 1.0;
    }
    // Written as `c / norm2` with `c` formed first, so that the complement
    // identity with `clip_factor(norm, c, true)` holds bit for bit.
    let c = (p as f64 - 3.0) * sigma2;
    (1.0 - c / norm2).max(0.0)
}

/// Norm-clipping factor: `min(1, c / norm)` or, with `squared` set,
/// `min(1, c / norm^2)`. Multiplying a vector of norm `norm` by the factor
/// caps its norm (or squared norm) at `c`. A zero-norm vector needs no
/// clipping, so `norm == 0` returns `1.0`.
pub fn clip_factor(norm: f64, c: f64, squared: bool) -> Result<f64> {
    if !norm.is_finite() || norm < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "clip_factor norm must be finite and non-negative, got {norm}"
        )));
    }
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "clip_factor threshold must be finite and positive, got {c}"
        )));
    }
    if norm == 0.0 {
        return Ok(1.0);
    }
    let ratio = if squared { c / (norm * norm) } else { c / norm };
    Ok(ratio.min(1.0))
}

/// Positive-part James-Stein estimator: the naive average shrunk by
/// [`js_shrink_factor`] with the variance estimated from the same samples.
pub fn js_plus_gradient(samples: &[GradientSample]) -> Result<GradientEstimate> {
    let p = check_samples(samples)?;
    let mean = mean_sample(samples)?;
    let sigma2 = estimate_sigma2(samples)?;
    let norm2 = mean.iter().map(|v| v * v).sum::<f64>();
    let factor = js_shrink_factor(norm2, p, sigma2);
    Ok(GradientEstimate {
        g: mean.mapv_into(|v| v * factor),
        kind: EstimatorKind::JsPlus,
        shrink_factor: Some(factor),
        sigma2_hat: Some(sigma2),
    })
}

/// Rao-Blackwellized estimator: coordinate-wise average of [`rb_samples`].
pub fn rb_gradient(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    draws: &[LatentDraw],
) -> Result<GradientEstimate> {
    let samples = rb_samples(spec, data, lam, draws)?;
    let g = mean_sample(&samples)?;
    Ok(GradientEstimate {
        g,
        kind: EstimatorKind::Rb,
        shrink_factor: None,
        sigma2_hat: None,
    })
}

/// Rao-Blackwellized estimator with positive-part James-Stein shrinkage on
/// top, using the variance of the Rao-Blackwellized samples.
pub fn rb_plus_gradient(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    draws: &[LatentDraw],
) -> Result<GradientEstimate> {
    let samples = rb_samples(spec, data, lam, draws)?;
    let p = check_samples(&samples)?;
    let mean = mean_sample(&samples)?;
    let sigma2 = estimate_sigma2(&samples)?;
    let norm2 = mean.iter().map(|v| v * v).sum::<f64>();
    let factor = js_shrink_factor(norm2, p, sigma2);
    Ok(GradientEstimate {
        g: mean.mapv_into(|v| v * factor),
        kind: EstimatorKind::RbPlus,
        shrink_factor: Some(factor),
        sigma2_hat: Some(sigma2),
    })
}

/// Run the selected estimator on a shared set of draws.
pub fn estimate_gradient(
    kind: EstimatorKind,
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    draws: &[LatentDraw],
) -> Result<GradientEstimate> {
    match kind {
        EstimatorKind::Naive => naive_gradient(&score_samples(spec, data, lam, draws)?),
        EstimatorKind::JsPlus => js_plus_gradient(&score_samples(spec, data, lam, draws)?),
        EstimatorKind::Rb => rb_gradient(spec, data, lam, draws),
        EstimatorKind::RbPlus => rb_plus_gradient(spec, data, lam, draws),
    }
}
