//! Finite Gaussian-mixture model and its fully factorized (mean-field)
//! variational family.
//!
//! The generative model: component means μ_k ~ N(0, τ²·I) in `dim`
//! dimensions, assignments z_i uniform over the `k` components, and
//! observations y_i | z_i ~ N(μ_{z_i}, σ²·I). The variational family puts an
//! independent diagonal normal q(μ_k) = N(m_k, s_k²·I) on every component
//! mean (parameterized by log-scale) and an independent categorical
//! q(z_i) = softmax(logits_i) on every assignment.
//!
//! Every sampling routine draws in a fixed documented order (component-mean
//! coordinates row-major, then assignments in observation order), so all
//! downstream computations are byte-reproducible given one seeded generator.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dists::{
    log_softmax_at, normal_logpdf_raw, normal_score_raw, sample_categorical_raw, softmax_into,
};
use crate::error::{Error, Result};

/// Evenly spaced component-mean grid used by the simulated studies; a
/// `k`-component simulation takes the first `k` entries.
pub const DEFAULT_COMPONENT_MEANS: [f64; 10] =
    [-5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0];

/// Variance of the seeded perturbation applied to every initial variational
/// coordinate.
const INIT_JITTER_VAR: f64 = 0.01;

/// Fixed hyperparameters of one mixture-model instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GmmSpec {
    k: usize,
    dim: usize,
    tau2: f64,
    sigma2: f64,
}

impl GmmSpec {
    /// Builds a model spec: `k ≥ 1` components in `dim ≥ 1` dimensions,
    /// component-mean prior variance `tau2 > 0`, observation-noise variance
    /// `sigma2 > 0`.
    pub fn new(k: usize, dim: usize, tau2: f64, sigma2: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if !tau2.is_finite() || tau2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tau2 must be finite and > 0, got {tau2}"
            )));
        }
        if !sigma2.is_finite() || sigma2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be finite and > 0, got {sigma2}"
            )));
        }
        Ok(Self { k, dim, tau2, sigma2 })
    }

    /// Number of mixture components.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Observation dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Prior variance of each component-mean coordinate.
    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    /// Observation-noise variance per coordinate.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Where a dataset came from, for audit trails in serialized outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    /// Simulated by [`generate_gmm_data`] under the given seed.
    Generated {
        /// Seed the simulation ran under.
        seed: u64,
    },
    /// Loaded from a CSV file.
    File {
        /// Path the file was read from.
        path: String,
    },
    /// Constructed in memory (tests, embedding callers).
    Memory,
}

/// An observation matrix (one row per observation) plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Array2<f64>,
    provenance: Provenance,
}

impl Dataset {
    /// Wraps an observation matrix; requires at least one row and one column
    /// and all-finite entries.
    pub fn new(observations: Array2<f64>, provenance: Provenance) -> Result<Self> {
        if observations.nrows() == 0 || observations.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "dataset must have at least one row and one column".into(),
            ));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "dataset entries must all be finite".into(),
            ));
        }
        Ok(Self { observations, provenance })
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    /// Observation dimension.
    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    /// The observation matrix, one row per observation.
    pub fn observations(&self) -> &Array2<f64> {
        &self.observations
    }

    /// Provenance tag.
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Per-dimension sample mean.
    pub fn mean_per_dim(&self) -> Array1<f64> {
        let n = self.n() as f64;
        self.observations.sum_axis(ndarray::Axis(0)) / n
    }

    /// Per-dimension sample variance (denominator n−1; zero when n = 1).
    pub fn var_per_dim(&self) -> Array1<f64> {
        let n = self.n();
        if n < 2 {
            return Array1::zeros(self.dim());
        }
        let means = self.mean_per_dim();
        let mut acc = Array1::<f64>::zeros(self.dim());
        for row in self.observations.rows() {
            for (j, v) in row.iter().enumerate() {
                let d = v - means[j];
                acc[j] += d * d;
            }
        }
        acc / (n as f64 - 1.0)
    }

    /// Sample variance pooled across dimensions (mean of [`Self::var_per_dim`]).
    pub fn pooled_variance(&self) -> f64 {
        self.var_per_dim().mean().unwrap_or(0.0)
    }
}

/// Mean-field variational parameters: per-component normal factors
/// (`means`, `log_scales`, both `k × dim`) and per-observation categorical
/// factors (`logits`, `n × k`).
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    means: Array2<f64>,
    log_scales: Array2<f64>,
    logits: Array2<f64>,
}

impl VariationalParams {
    /// Builds a parameter set, checking shape coherence and finiteness.
    pub fn new(
        means: Array2<f64>,
        log_scales: Array2<f64>,
        logits: Array2<f64>,
    ) -> Result<Self> {
        if means.dim() != log_scales.dim() {
            return Err(Error::DimensionMismatch(format!(
                "means shape {:?} != log_scales shape {:?}",
                means.dim(),
                log_scales.dim()
            )));
        }
        let (k, dim) = means.dim();
        if k == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "variational params need k >= 1 and dim >= 1".into(),
            ));
        }
        if logits.nrows() == 0 || logits.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "logits shape {:?} incompatible with k = {k} (need n × k, n >= 1)",
                logits.dim()
            )));
        }
        for (name, arr) in [("means", &means), ("log_scales", &log_scales), ("logits", &logits)] {
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "variational {name} must all be finite"
                )));
            }
        }
        Ok(Self { means, log_scales, logits })
    }

    /// Number of components.
    pub fn k(&self) -> usize {
        self.means.nrows()
    }

    /// Observation dimension.
    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Number of observations covered by the assignment factors.
    pub fn n(&self) -> usize {
        self.logits.nrows()
    }

    /// Total number of flattened coordinates: `2·k·dim + n·k`.
    pub fn p(&self) -> usize {
        2 * self.k() * self.dim() + self.n() * self.k()
    }

    /// Component-mean locations (`k × dim`).
    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    /// Component-mean log-scales (`k × dim`); the factor variance is
    /// `exp(2·log_scale)`.
    pub fn log_scales(&self) -> &Array2<f64> {
        &self.log_scales
    }

    /// Assignment logits (`n × k`).
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    /// Variance of the (k, j) mean-factor coordinate.
    pub fn factor_var(&self, k: usize, j: usize) -> f64 {
        (2.0 * self.log_scales[(k, j)]).exp()
    }

    /// Flattens to a single vector in the fixed layout
    /// `[means row-major | log_scales row-major | logits row-major]`.
    /// [`Self::unflatten`] inverts this exactly (bit-for-bit).
    pub fn flatten(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.p());
        out.extend(self.means.iter().copied());
        out.extend(self.log_scales.iter().copied());
        out.extend(self.logits.iter().copied());
        Array1::from_vec(out)
    }

    /// Rebuilds parameters from a flat vector produced by [`Self::flatten`].
    pub fn unflatten(flat: &Array1<f64>, k: usize, dim: usize, n: usize) -> Result<Self> {
        let p = 2 * k * dim + n * k;
        if flat.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "flat vector has length {}, expected {p} for k={k}, dim={dim}, n={n}",
                flat.len()
            )));
        }
        let slice = flat.as_slice().expect("flat vector is contiguous");
        let kd = k * dim;
        let means = Array2::from_shape_vec((k, dim), slice[..kd].to_vec())
            .expect("means shape matches slice length");
        let log_scales = Array2::from_shape_vec((k, dim), slice[kd..2 * kd].to_vec())
            .expect("log_scales shape matches slice length");
        let logits = Array2::from_shape_vec((n, k), slice[2 * kd..].to_vec())
            .expect("logits shape matches slice length");
        Self::new(means, log_scales, logits)
    }
}

/// One joint draw θ = (μ, z) from the variational family: component means
/// (`k × dim`) and one 0-based assignment per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    /// Sampled component-mean matrix (`k × dim`).
    pub component_means: Array2<f64>,
    /// Sampled assignment per observation, each in `0..k`.
    pub assignments: Vec<usize>,
}

/// A single mean-field factor, addressed for per-block (Rao-Blackwellized)
/// gradient computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// The normal factor of component `k` (its mean and log-scale rows).
    Component(usize),
    /// The categorical factor of observation `i` (its logits row).
    Assignment(usize),
}

pub(crate) fn check_draw(spec: &GmmSpec, data: &Dataset, draw: &LatentDraw) -> Result<()> {
    if data.dim() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data dim {} != spec dim {}",
            data.dim(),
            spec.dim()
        )));
    }
    if draw.component_means.dim() != (spec.k(), spec.dim()) {
        return Err(Error::DimensionMismatch(format!(
            "draw means shape {:?} != ({}, {})",
            draw.component_means.dim(),
            spec.k(),
            spec.dim()
        )));
    }
    if draw.assignments.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "draw has {} assignments for {} observations",
            draw.assignments.len(),
            data.n()
        )));
    }
    if let Some(&z) = draw.assignments.iter().find(|&&z| z >= spec.k()) {
        return Err(Error::IndexOutOfRange { index: z, len: spec.k() });
    }
    Ok(())
}

pub(crate) fn check_lam_draw(lam: &VariationalParams, draw: &LatentDraw) -> Result<()> {
    if draw.component_means.dim() != (lam.k(), lam.dim()) {
        return Err(Error::DimensionMismatch(format!(
            "draw means shape {:?} != ({}, {})",
            draw.component_means.dim(),
            lam.k(),
            lam.dim()
        )));
    }
    if draw.assignments.len() != lam.n() {
        return Err(Error::DimensionMismatch(format!(
            "draw has {} assignments for {} assignment factors",
            draw.assignments.len(),
            lam.n()
        )));
    }
    if let Some(&z) = draw.assignments.iter().find(|&&z| z >= lam.k()) {
        return Err(Error::IndexOutOfRange { index: z, len: lam.k() });
    }
    Ok(())
}

/// Log-density of the joint model `log p(y, μ, z)`: component-mean prior,
/// uniform assignment prior, and Gaussian likelihood.
pub fn log_joint(spec: &GmmSpec, data: &Dataset, draw: &LatentDraw) -> Result<f64> {
    check_draw(spec, data, draw)?;
    let mut total = 0.0;
    for &mu in draw.component_means.iter() {
        total += normal_logpdf_raw(mu, 0.0, spec.tau2());
    }
    let ln_uniform = -(spec.k() as f64).ln();
    for (i, row) in data.observations().rows().into_iter().enumerate() {
        let z = draw.assignments[i];
        total += ln_uniform;
        for (j, &y) in row.iter().enumerate() {
            total += normal_logpdf_raw(y, draw.component_means[(z, j)], spec.sigma2());
        }
    }
    Ok(total)
}

/// Log-density of the variational family `log q(μ, z | λ)`.
pub fn log_q(lam: &VariationalParams, draw: &LatentDraw) -> Result<f64> {
    check_lam_draw(lam, draw)?;
    let mut total = 0.0;
    for k in 0..lam.k() {
        for j in 0..lam.dim() {
            total += normal_logpdf_raw(
                draw.component_means[(k, j)],
                lam.means[(k, j)],
                lam.factor_var(k, j),
            );
        }
    }
    for (i, &z) in draw.assignments.iter().enumerate() {
        let row = lam.logits.row(i);
        total += log_softmax_at(row.as_slice().expect("logits row is contiguous"), z);
    }
    Ok(total)
}

/// Draws θ = (μ, z) from the variational family: component-mean coordinates
/// row-major first, then one assignment per observation by inverse CDF.
pub fn sample_q<R: Rng + ?Sized>(lam: &VariationalParams, rng: &mut R) -> LatentDraw {
    let (k, dim, n) = (lam.k(), lam.dim(), lam.n());
    let mut mu = Array2::<f64>::zeros((k, dim));
    for kk in 0..k {
        for j in 0..dim {
            let eps: f64 = rng.sample(StandardNormal);
            mu[(kk, j)] = lam.means[(kk, j)] + lam.factor_var(kk, j).sqrt() * eps;
        }
    }
    let mut probs = vec![0.0; k];
    let mut assignments = Vec::with_capacity(n);
    for i in 0..n {
        let row = lam.logits.row(i);
        softmax_into(row.as_slice().expect("logits row is contiguous"), &mut probs);
        assignments.push(sample_categorical_raw(&probs, rng));
    }
    LatentDraw { component_means: mu, assignments }
}

/// Draws `s` independent joint samples from the variational family.
pub fn draw_latents<R: Rng + ?Sized>(
    lam: &VariationalParams,
    s: usize,
    rng: &mut R,
) -> Vec<LatentDraw> {
    (0..s).map(|_| sample_q(lam, rng)).collect()
}

/// Gradient of `log q(θ | λ)` with respect to the flattened variational
/// coordinates, evaluated at a fixed draw θ. Layout matches
/// [`VariationalParams::flatten`].
pub fn score_q(lam: &VariationalParams, draw: &LatentDraw) -> Result<Array1<f64>> {
    check_lam_draw(lam, draw)?;
    let (k, dim, n) = (lam.k(), lam.dim(), lam.n());
    let kd = k * dim;
    let mut out = vec![0.0; lam.p()];
    for kk in 0..k {
        for j in 0..dim {
            let (d_mean, d_logscale) = normal_score_raw(
                draw.component_means[(kk, j)],
                lam.means[(kk, j)],
                lam.factor_var(kk, j),
            );
            out[kk * dim + j] = d_mean;
            out[kd + kk * dim + j] = d_logscale;
        }
    }
    let mut probs = vec![0.0; k];
    for i in 0..n {
        let row = lam.logits.row(i);
        softmax_into(row.as_slice().expect("logits row is contiguous"), &mut probs);
        let z = draw.assignments[i];
        let base = 2 * kd + i * k;
        for (kk, &p) in probs.iter().enumerate() {
            out[base + kk] = if kk == z { 1.0 - p } else { -p };
        }
    }
    Ok(Array1::from_vec(out))
}

/// Markov-blanket log-density difference for one mean-field block: the terms
/// of `log p(y, θ)` that involve the block's latent variables, minus the
/// block's own variational factor.
///
/// For a component block that is the mean prior plus the likelihood of the
/// observations currently assigned to it, minus its normal factor; for an
/// assignment block it is the uniform assignment prior plus that
/// observation's likelihood, minus its categorical factor. Likelihood terms
/// appear in both the component and the assignment blanket by construction.
pub fn blanket_diff(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    draw: &LatentDraw,
    block: Block,
) -> Result<f64> {
    check_draw(spec, data, draw)?;
    check_lam_draw(lam, draw)?;
    if lam.n() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "params cover {} observations, data has {}",
            lam.n(),
            data.n()
        )));
    }
    match block {
        Block::Component(kk) => {
            if kk >= spec.k() {
                return Err(Error::IndexOutOfRange { index: kk, len: spec.k() });
            }
            let mut total = 0.0;
            for j in 0..spec.dim() {
                let mu = draw.component_means[(kk, j)];
                total += normal_logpdf_raw(mu, 0.0, spec.tau2());
                total -= normal_logpdf_raw(mu, lam.means[(kk, j)], lam.factor_var(kk, j));
            }
            for (i, row) in data.observations().rows().into_iter().enumerate() {
                if draw.assignments[i] == kk {
                    for (j, &y) in row.iter().enumerate() {
                        total +=
                            normal_logpdf_raw(y, draw.component_means[(kk, j)], spec.sigma2());
                    }
                }
            }
            Ok(total)
        }
        Block::Assignment(i) => {
            if i >= data.n() {
                return Err(Error::IndexOutOfRange { index: i, len: data.n() });
            }
            let z = draw.assignments[i];
            let mut total = -(spec.k() as f64).ln();
            for (j, &y) in data.observations().row(i).iter().enumerate() {
                total += normal_logpdf_raw(y, draw.component_means[(z, j)], spec.sigma2());
            }
            let row = lam.logits.row(i);
            total -= log_softmax_at(row.as_slice().expect("logits row is contiguous"), z);
            Ok(total)
        }
    }
}

/// Simulates a one-dimensional mixture dataset: `n` observations with
/// assignments uniform over `k` components located at `means`, plus
/// N(0, sigma2) noise. One uniform variate per assignment and one normal
/// variate per observation, in observation order.
pub fn generate_gmm_data(
    k: usize,
    n: usize,
    means: &[f64],
    sigma2: f64,
    seed: u64,
) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if means.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "need exactly {k} component means, got {}",
            means.len()
        )));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidParameter("component means must be finite".into()));
    }
    if !sigma2.is_finite() || sigma2 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma2 must be finite and > 0, got {sigma2}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = sigma2.sqrt();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let z = ((u * k as f64) as usize).min(k - 1);
        let eps: f64 = rng.sample(StandardNormal);
        values.push(means[z] + sd * eps);
    }
    let observations =
        Array2::from_shape_vec((n, 1), values).expect("n×1 shape matches value count");
    Dataset::new(observations, Provenance::Generated { seed })
}

/// Standard initialization: component means drawn around the data's
/// per-dimension mean with its per-dimension variance, log-scales and logits
/// at zero, and every coordinate perturbed by N(0, 0.01) jitter. Draw order:
/// means (location then jitter per coordinate, row-major), log-scales,
/// logits.
pub fn init_params<R: Rng + ?Sized>(
    spec: &GmmSpec,
    data: &Dataset,
    rng: &mut R,
) -> Result<VariationalParams> {
    if data.dim() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data dim {} != spec dim {}",
            data.dim(),
            spec.dim()
        )));
    }
    let (k, dim, n) = (spec.k(), spec.dim(), data.n());
    let mean = data.mean_per_dim();
    let sd = data.var_per_dim().mapv(f64::sqrt);
    let jitter_sd = INIT_JITTER_VAR.sqrt();
    let mut means = Array2::<f64>::zeros((k, dim));
    for kk in 0..k {
        for j in 0..dim {
            let location: f64 = rng.sample(StandardNormal);
            let jitter: f64 = rng.sample(StandardNormal);
            means[(kk, j)] = mean[j] + sd[j] * location + jitter_sd * jitter;
        }
    }
    let mut log_scales = Array2::<f64>::zeros((k, dim));
    for v in log_scales.iter_mut() {
        let jitter: f64 = rng.sample(StandardNormal);
        *v = jitter_sd * jitter;
    }
    let mut logits = Array2::<f64>::zeros((n, k));
    for v in logits.iter_mut() {
        let jitter: f64 = rng.sample(StandardNormal);
        *v = jitter_sd * jitter;
    }
    VariationalParams::new(means, log_scales, logits)
}

/// Mean over draws of `log p(y, θ) − log q(θ | λ)`; reused by the optimizer
/// trace and the ELBO metric so no extra sampling is needed.
pub(crate) fn elbo_over_draws(
    spec: &GmmSpec,
    data: &Dataset,
    lam: &VariationalParams,
    draws: &[LatentDraw],
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    let mut acc = 0.0;
    for draw in draws {
        acc += log_joint(spec, data, draw)? - log_q(lam, draw)?;
    }
    Ok(acc / draws.len() as f64)
}
