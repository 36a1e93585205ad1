//! Stochastic-gradient ascent on the ELBO with per-coordinate adaptive
//! learning rates.
//!
//! Each iteration draws a fresh batch of latent samples, forms a gradient
//! estimate with the configured estimator, and takes an ascent step scaled by
//! an RMSProp (exponential moving average of squared gradients) or AdaGrad
//! (running sum of squared gradients) schedule. The run stops once the
//! relative parameter change drops to the threshold — but never before a
//! minimum number of iterations, so an early lucky step cannot end the run —
//! or when the iteration budget is exhausted. A step that produces a
//! non-finite parameter aborts the run with [`Error::Diverged`], carrying the
//! trace collected so far.
//!
//! Randomness discipline: one run consumes three independent streams of a
//! single counter-based generator seeded with `config.seed` — one for
//! parameter initialization, one for the per-iteration draws, one for the
//! final metrics. Identical configurations therefore reproduce identical
//! reports (up to wall-clock time) regardless of how many iterations earlier
//! runs consumed.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimators::{estimate_gradient, EstimatorKind};
use crate::metrics::{dic, elbo_estimate, loglik, FitReport, TraceRow};
use crate::model::{draw_latents, elbo_over_draws, init_params, Dataset, GmmSpec, VariationalParams};

/// Stream indices of the per-run generator (see the module docs).
const STREAM_INIT: u64 = 1;
const STREAM_LOOP: u64 = 2;
const STREAM_METRICS: u64 = 3;

/// Default number of Monte-Carlo draws per iteration.
pub const DEFAULT_SAMPLES: usize = 500;
/// Default relative-change convergence threshold.
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Default RMSProp decay factor.
pub const DEFAULT_BETA: f64 = 0.9;
/// Default denominator stabilizer in the adaptive rates.
pub const DEFAULT_XI: f64 = 1e-8;
/// Default minimum number of iterations before convergence may trigger.
pub const DEFAULT_MIN_ITERS: usize = 100;
/// Default iteration budget.
pub const DEFAULT_MAX_ITERS: usize = 2000;

/// Per-coordinate learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// Exponential moving average of squared gradients.
    #[serde(rename = "rmsprop")]
    RmsProp,
    /// Running sum of squared gradients (rates only ever decrease).
    #[serde(rename = "adagrad")]
    AdaGrad,
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schedule::RmsProp => "rmsprop",
            Schedule::AdaGrad => "adagrad",
        })
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmsprop" => Ok(Schedule::RmsProp),
            "adagrad" => Ok(Schedule::AdaGrad),
            other => Err(Error::InvalidParameter(format!(
                "unknown schedule '{other}' (expected rmsprop or adagrad)"
            ))),
        }
    }
}

/// Everything a fit run needs besides the model and the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Gradient estimator to drive the ascent.
    pub method: EstimatorKind,
    /// Monte-Carlo draws per iteration (and for the final metrics).
    pub samples: usize,
    /// Relative parameter-change threshold for convergence.
    pub epsilon: f64,
    /// Base learning rate.
    pub eta: f64,
    /// RMSProp decay factor (ignored by AdaGrad).
    pub beta: f64,
    /// Stabilizer added inside the square root of the adaptive rates.
    pub xi: f64,
    /// Which adaptive schedule to run.
    pub schedule: Schedule,
    /// Convergence may not trigger before this many iterations.
    pub min_iters: usize,
    /// Hard iteration budget.
    pub max_iters: usize,
    /// Seed for the run's generator (see the module docs for the streams).
    pub seed: u64,
}

impl OptimizerConfig {
    /// Defaults for the given estimator. The shrinkage-free and shrinkage
    /// variants of the plain estimator want a small base rate (0.1); the
    /// Rao-Blackwellized variants tolerate 1.0.
    pub fn for_method(method: EstimatorKind) -> Self {
        OptimizerConfig {
            method,
            samples: DEFAULT_SAMPLES,
            epsilon: DEFAULT_EPSILON,
            eta: default_eta(method),
            beta: DEFAULT_BETA,
            xi: DEFAULT_XI,
            schedule: Schedule::RmsProp,
            min_iters: DEFAULT_MIN_ITERS,
            max_iters: DEFAULT_MAX_ITERS,
            seed: 0,
        }
    }

    /// Check the numeric fields. `min_iters > max_iters` is allowed — such a
    /// run simply never reports convergence.
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidParameter(
                "samples per iteration must be at least 1".into(),
            ));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and positive, got {}",
                self.epsilon
            )));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "eta must be finite and positive, got {}",
                self.eta
            )));
        }
        if !self.beta.is_finite() || !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if !self.xi.is_finite() || self.xi <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "xi must be finite and positive, got {}",
                self.xi
            )));
        }
        Ok(())
    }
}

/// Default base learning rate per estimator.
pub fn default_eta(method: EstimatorKind) -> f64 {
    match method {
        EstimatorKind::Naive | EstimatorKind::JsPlus => 0.1,
        EstimatorKind::Rb | EstimatorKind::RbPlus => 1.0,
    }
}

/// One RMSProp update: returns the new accumulator
/// `beta * accum + (1 - beta) * g^2` and the per-coordinate rates
/// `eta / sqrt(accum' + xi)`.
pub fn rmsprop_rates(
    accum: &Array1<f64>,
    g: &Array1<f64>,
    eta: f64,
    beta: f64,
    xi: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if accum.len() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "accumulator has {} coordinates but gradient has {}",
            accum.len(),
            g.len()
        )));
    }
    let new_accum =
        Array1::from_shape_fn(g.len(), |j| beta * accum[j] + (1.0 - beta) * g[j] * g[j]);
    let rates = new_accum.mapv(|a| eta / (a + xi).sqrt());
    Ok((new_accum, rates))
}

/// One AdaGrad update: returns the new accumulator `accum + g^2` and the
/// per-coordinate rates `eta / sqrt(accum' + xi)`.
pub fn adagrad_rates(
    accum: &Array1<f64>,
    g: &Array1<f64>,
    eta: f64,
    xi: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if accum.len() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "accumulator has {} coordinates but gradient has {}",
            accum.len(),
            g.len()
        )));
    }
    let new_accum = Array1::from_shape_fn(g.len(), |j| accum[j] + g[j] * g[j]);
    let rates = new_accum.mapv(|a| eta / (a + xi).sqrt());
    Ok((new_accum, rates))
}

/// Mutable state of an ascent run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    /// Current variational parameters.
    pub lam: VariationalParams,
    /// Squared-gradient accumulator, one entry per flattened coordinate.
    pub accum: Array1<f64>,
    /// Completed iterations.
    pub t: usize,
    /// Relative parameter change of the most recent step.
    pub delta: f64,
}

impl OptimizerState {
    /// Fresh state around an initial parameter value.
    pub fn new(lam: VariationalParams) -> Self {
        let p = lam.p();
        OptimizerState {
            lam,
            accum: Array1::zeros(p),
            t: 0,
            delta: f64::INFINITY,
        }
    }
}

fn l2_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Apply one ascent step `lambda + rates * g` in place, updating the
/// accumulator, iteration counter, and relative change. A non-finite result
/// aborts with [`Error::Diverged`] (the caller owns the trace and attaches
/// it).
pub fn step(state: &mut OptimizerState, g: &Array1<f64>, config: &OptimizerConfig) -> Result<()> {
    let flat = state.lam.flatten();
    if g.len() != flat.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} coordinates but parameters have {}",
            g.len(),
            flat.len()
        )));
    }
    let (new_accum, rates) = match config.schedule {
        Schedule::RmsProp => rmsprop_rates(&state.accum, g, config.eta, config.beta, config.xi)?,
        Schedule::AdaGrad => adagrad_rates(&state.accum, g, config.eta, config.xi)?,
    };
    let step_vec = &rates * g;
    let new_flat = &flat + &step_vec;
    state.t += 1;
    if new_flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            iteration: state.t,
            trace: Vec::new(),
        });
    }
    let base = l2_norm(&flat);
    let change = l2_norm(&step_vec);
    // Relative change, falling back to the absolute change at the origin.
    state.delta = if base == 0.0 { change } else { change / base };
    state.accum = new_accum;
    state.lam = VariationalParams::unflatten(&new_flat, state.lam.k(), state.lam.dim(), state.lam.n())?;
    Ok(())
}

/// A completed fit: the serializable report plus the fitted parameters.
#[derive(Debug, Clone)]
pub struct FitRun {
    /// Metrics, trace, and configuration echo.
    pub report: FitReport,
    /// Variational parameters at the final iteration.
    pub params: VariationalParams,
}

/// Fit the variational approximation to `data` under `spec`.
///
/// Returns the report and final parameters; a run whose parameters leave the
/// finite range fails with [`Error::Diverged`] carrying the per-iteration
/// trace up to the failing step.
pub fn run(spec: &GmmSpec, data: &Dataset, config: &OptimizerConfig) -> Result<FitRun> {
    config.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(STREAM_INIT);
    let mut loop_rng = ChaCha8Rng::seed_from_u64(config.seed);
    loop_rng.set_stream(STREAM_LOOP);
    let mut metrics_rng = ChaCha8Rng::seed_from_u64(config.seed);
    metrics_rng.set_stream(STREAM_METRICS);

    let lam0 = init_params(spec, data, &mut init_rng)?;
    let mut state = OptimizerState::new(lam0);
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut converged = false;

    let clock = Instant::now();
    while state.t < config.max_iters {
        let draws = draw_latents(&state.lam, config.samples, &mut loop_rng);
        let est = estimate_gradient(config.method, spec, data, &state.lam, &draws)?;
        let elbo_now = elbo_over_draws(spec, data, &state.lam, &draws)?;
        let grad_norm = l2_norm(&est.g);
        if let Err(err) = step(&mut state, &est.g, config) {
            return Err(match err {
                Error::Diverged { iteration, .. } => Error::Diverged { iteration, trace },
                other => other,
            });
        }
        trace.push(TraceRow {
            t: state.t,
            delta: state.delta,
            shrink_factor: est.shrink_factor,
            grad_norm,
            elbo: elbo_now,
        });
        if state.t >= config.min_iters && state.delta <= config.epsilon {
            converged = true;
            break;
        }
    }
    let wall_time_s = clock.elapsed().as_secs_f64();

    let elbo = elbo_estimate(spec, data, &state.lam, config.samples, &mut metrics_rng)?;
    let loglik = loglik(spec, data, state.lam.means())?;
    let dic = dic(spec, data, &state.lam, config.samples, &mut metrics_rng)?;

    let report = FitReport {
        method: config.method,
        iterations: state.t,
        converged,
        wall_time_s,
        elbo,
        loglik,
        dic,
        config: config.clone(),
        trace,
    };
    Ok(FitRun {
        report,
        params: state.lam,
    })
}
