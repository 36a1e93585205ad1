//! Elementary distribution kernels shared by the model and estimator layers:
//! log-densities, analytic scores, and seeded samplers.
//!
//! Normal factors are parameterized by mean and log-scale so the scale stays
//! positive under unconstrained gradient updates; categorical factors are
//! parameterized by logits so the probabilities stay on the simplex. Scores
//! are exact gradients of the log-densities in those unconstrained
//! coordinates — no automatic differentiation is used anywhere in this crate.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// ln(2π), the normalization constant of the normal log-density.
pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Validated mean/variance pair for one univariate normal factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    mean: f64,
    var: f64,
}

impl NormalParams {
    /// Builds a normal parameter pair, rejecting non-finite values and
    /// non-positive variance.
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "normal mean must be finite, got {mean}"
            )));
        }
        if !var.is_finite() || var <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "normal variance must be finite and > 0, got {var}"
            )));
        }
        Ok(Self { mean, var })
    }

    /// The factor's mean.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// The factor's variance.
    pub fn var(&self) -> f64 {
        self.var
    }

    /// Log-density at `x`. Rejects non-finite `x`.
    pub fn logpdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "normal logpdf argument must be finite, got {x}"
            )));
        }
        Ok(normal_logpdf_raw(x, self.mean, self.var))
    }

    /// Gradient of the log-density with respect to the factor's mean and
    /// log-scale, evaluated at a fixed point `theta`:
    /// `d_mean = (θ − m)/s²` and `d_logscale = (θ − m)²/s² − 1`.
    pub fn score(&self, theta: f64) -> Result<(f64, f64)> {
        if !theta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "normal score argument must be finite, got {theta}"
            )));
        }
        Ok(normal_score_raw(theta, self.mean, self.var))
    }

    /// Draws one value, consuming exactly one standard-normal variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.var.sqrt() * z
    }
}

/// Validated logit vector for one categorical factor over `{0, …, k-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalParams {
    logits: Array1<f64>,
}

impl CategoricalParams {
    /// Builds a categorical parameter vector, rejecting empty or non-finite
    /// logits.
    pub fn new(logits: Array1<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidParameter(
                "categorical logits must be non-empty".into(),
            ));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "categorical logits must all be finite".into(),
            ));
        }
        Ok(Self { logits })
    }

    /// Number of categories.
    pub fn k(&self) -> usize {
        self.logits.len()
    }

    /// The raw logits.
    pub fn logits(&self) -> &Array1<f64> {
        &self.logits
    }

    /// Probabilities under the softmax map. Sums to one and is invariant to
    /// adding a constant to every logit.
    pub fn probs(&self) -> Array1<f64> {
        let slice = self.logits.as_slice().expect("logits are contiguous");
        let mut out = vec![0.0; slice.len()];
        softmax_into(slice, &mut out);
        Array1::from_vec(out)
    }

    /// Log-probability of category `k`, computed as
    /// `logits[k] − log_sum_exp(logits)` for stability.
    pub fn log_prob(&self, k: usize) -> Result<f64> {
        self.check_index(k)?;
        let slice = self.logits.as_slice().expect("logits are contiguous");
        Ok(slice[k] - log_sum_exp_raw(slice))
    }

    /// Gradient of `log_prob(k)` with respect to the logits: the indicator
    /// vector of `k` minus the softmax probabilities.
    pub fn score(&self, k: usize) -> Result<Array1<f64>> {
        self.check_index(k)?;
        let mut out = self.probs();
        out.mapv_inplace(|p| -p);
        out[k] += 1.0;
        Ok(out)
    }

    /// Draws one category by inverse CDF, consuming exactly one uniform
    /// variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let slice = self.logits.as_slice().expect("logits are contiguous");
        let mut probs = vec![0.0; slice.len()];
        softmax_into(slice, &mut probs);
        sample_categorical_raw(&probs, rng)
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.logits.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.logits.len(),
            });
        }
        Ok(())
    }
}

/// Numerically stable `log Σ exp(vᵢ)`. Rejects empty input.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidParameter(
            "log_sum_exp of empty slice".into(),
        ));
    }
    Ok(log_sum_exp_raw(v))
}

/// Softmax probabilities of a logit slice. Rejects empty or non-finite input.
pub fn softmax(v: &[f64]) -> Result<Array1<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidParameter("softmax of empty slice".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "softmax input must be finite".into(),
        ));
    }
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(Array1::from_vec(out))
}

pub(crate) fn normal_logpdf_raw(x: f64, mean: f64, var: f64) -> f64 {
    let diff = x - mean;
    -0.5 * (LN_2PI + var.ln()) - diff * diff / (2.0 * var)
}

pub(crate) fn normal_score_raw(theta: f64, mean: f64, var: f64) -> (f64, f64) {
    let diff = theta - mean;
    (diff / var, diff * diff / var - 1.0)
}

pub(crate) fn log_sum_exp_raw(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All -inf (or a NaN slipped in): the sum degenerates to the max.
        return max;
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Writes softmax(v) into `out`. Both slices must have the same non-zero
/// length; subtracts the max logit before exponentiating for stability.
pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), out.len());
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Log-probability of category `k` under softmax(logits), without allocating.
pub(crate) fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    logits[k] - log_sum_exp_raw(logits)
}

/// Inverse-CDF draw from an explicit probability vector, consuming one
/// uniform variate. Falls back to the last category if rounding pushes the
/// cumulative sum below 1.
pub(crate) fn sample_categorical_raw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Continuous, Normal};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn logpdf_at_mean_of_unit_normal() {
        let p = NormalParams::new(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.logpdf(2.0).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-15);
    }

    #[test]
    fn logpdf_matches_reference_implementation() {
        // statrs is an independent implementation of the same density.
        let mut r = rng(7);
        for _ in 0..200 {
            let mean = 10.0 * (r.random::<f64>() - 0.5);
            let var = 0.05 + 5.0 * r.random::<f64>();
            let x = mean + 8.0 * (r.random::<f64>() - 0.5);
            let ours = NormalParams::new(mean, var).unwrap().logpdf(x).unwrap();
            let reference = Normal::new(mean, var.sqrt()).unwrap().ln_pdf(x);
            assert_abs_diff_eq!(ours, reference, epsilon = 1e-12);
        }
    }

    #[test]
    fn logpdf_integrates_to_one() {
        let p = NormalParams::new(-1.3, 2.7).unwrap();
        // Simpson's rule over ±12 standard deviations.
        let s = p.var().sqrt();
        let (a, b) = (p.mean() - 12.0 * s, p.mean() + 12.0 * s);
        let n = 4000;
        let h = (b - a) / n as f64;
        let f = |x: f64| p.logpdf(x).unwrap().exp();
        let mut integral = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 0 { 2.0 } else { 4.0 };
            integral += w * f(a + i as f64 * h);
        }
        integral *= h / 3.0;
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn rejects_invalid_normal_params() {
        assert!(NormalParams::new(5.0, 0.0).is_err());
        assert!(NormalParams::new(5.0, -1.0).is_err());
        assert!(NormalParams::new(f64::NAN, 1.0).is_err());
        assert!(NormalParams::new(5.0, f64::INFINITY).is_err());
        let p = NormalParams::new(0.0, 1.0).unwrap();
        assert!(p.logpdf(f64::NAN).is_err());
        assert!(p.score(f64::INFINITY).is_err());
    }

    #[test]
    fn normal_score_hand_example() {
        let p = NormalParams::new(2.0, 1.0).unwrap();
        let (d_mean, d_logscale) = p.score(3.0).unwrap();
        assert_abs_diff_eq!(d_mean, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d_logscale, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn normal_score_matches_finite_differences() {
        let mut r = rng(11);
        for _ in 0..100 {
            let m = 6.0 * (r.random::<f64>() - 0.5);
            let u = 1.5 * (r.random::<f64>() - 0.5); // log-scale
            let theta = m + 4.0 * (r.random::<f64>() - 0.5);
            let p = NormalParams::new(m, (2.0 * u).exp()).unwrap();
            let (d_mean, d_logscale) = p.score(theta).unwrap();

            let h = 1e-6;
            let fd_mean = central_diff(
                |mm| NormalParams::new(mm, (2.0 * u).exp()).unwrap().logpdf(theta).unwrap(),
                m,
                h,
            );
            let fd_logscale = central_diff(
                |uu| NormalParams::new(m, (2.0 * uu).exp()).unwrap().logpdf(theta).unwrap(),
                u,
                h,
            );
            let tol = |exact: f64| 1e-5 * exact.abs().max(1e-3);
            assert!((d_mean - fd_mean).abs() <= tol(d_mean), "{d_mean} vs {fd_mean}");
            assert!(
                (d_logscale - fd_logscale).abs() <= tol(d_logscale),
                "{d_logscale} vs {fd_logscale}"
            );
        }
    }

    #[test]
    fn categorical_score_hand_example() {
        let p = CategoricalParams::new(array![0.0, 0.0]).unwrap();
        let s = p.score(0).unwrap();
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn categorical_score_matches_finite_differences() {
        let mut r = rng(13);
        for _ in 0..100 {
            let k = 2 + (r.random::<f64>() * 5.0) as usize;
            let logits: Vec<f64> = (0..k).map(|_| 6.0 * (r.random::<f64>() - 0.5)).collect();
            let target = (r.random::<f64>() * k as f64) as usize;
            let p = CategoricalParams::new(Array1::from_vec(logits.clone())).unwrap();
            let score = p.score(target).unwrap();
            for j in 0..k {
                let fd = central_diff(
                    |lj| {
                        let mut l = logits.clone();
                        l[j] = lj;
                        log_softmax_at(&l, target)
                    },
                    logits[j],
                    1e-6,
                );
                let tol = 1e-5 * score[j].abs().max(1e-3);
                assert!((score[j] - fd).abs() <= tol, "coord {j}: {} vs {fd}", score[j]);
            }
        }
    }

    #[test]
    fn categorical_rejects_bad_input() {
        assert!(CategoricalParams::new(Array1::from_vec(vec![])).is_err());
        assert!(CategoricalParams::new(array![0.0, f64::NAN]).is_err());
        let p = CategoricalParams::new(array![0.0, 1.0]).unwrap();
        assert!(p.score(2).is_err());
        assert!(p.log_prob(5).is_err());
    }

    #[test]
    fn normal_score_has_zero_mean_under_own_draws() {
        let p = NormalParams::new(1.5, 0.8).unwrap();
        let mut r = rng(17);
        let n = 200_000;
        let (mut sum_m, mut sum_m2) = (0.0, 0.0);
        let (mut sum_s, mut sum_s2) = (0.0, 0.0);
        for _ in 0..n {
            let theta = p.sample(&mut r);
            let (dm, ds) = p.score(theta).unwrap();
            sum_m += dm;
            sum_m2 += dm * dm;
            sum_s += ds;
            sum_s2 += ds * ds;
        }
        let nf = n as f64;
        for (sum, sum2) in [(sum_m, sum_m2), (sum_s, sum_s2)] {
            let mean = sum / nf;
            let se = ((sum2 / nf - mean * mean) / nf).sqrt();
            assert!(mean.abs() <= 3.5 * se, "score mean {mean} exceeds 3.5 SE {se}");
        }
    }

    #[test]
    fn categorical_score_has_zero_mean_under_own_draws() {
        let p = CategoricalParams::new(array![0.3, -0.4, 1.1]).unwrap();
        let mut r = rng(19);
        let n = 200_000;
        let mut sums = vec![0.0; 3];
        let mut sums2 = vec![0.0; 3];
        for _ in 0..n {
            let z = p.sample(&mut r);
            let s = p.score(z).unwrap();
            for j in 0..3 {
                sums[j] += s[j];
                sums2[j] += s[j] * s[j];
            }
        }
        let nf = n as f64;
        for j in 0..3 {
            let mean = sums[j] / nf;
            let se = ((sums2[j] / nf - mean * mean) / nf).sqrt();
            assert!(mean.abs() <= 3.5 * se, "coord {j}: mean {mean} exceeds 3.5 SE {se}");
        }
    }

    #[test]
    fn log_sum_exp_examples() {
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0]).unwrap(), 2.0_f64.ln(), epsilon = 1e-15);
        // Stable far below the exp underflow range.
        let v = log_sum_exp(&[-1000.0, -1000.5]).unwrap();
        assert_abs_diff_eq!(v, -1000.0 + (1.0 + (-0.5_f64).exp()).ln(), epsilon = 1e-12);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn samplers_are_deterministic_per_seed_and_stream() {
        let p = NormalParams::new(0.0, 1.0).unwrap();
        let seq = |seed: u64, stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            (0..8).map(|_| p.sample(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(seq(42, 1), seq(42, 1));
        assert_ne!(seq(42, 1), seq(42, 2));
        assert_ne!(seq(42, 1), seq(43, 1));
    }

    #[test]
    fn normal_sample_moments() {
        let p = NormalParams::new(-2.0, 4.0).unwrap();
        let mut r = rng(23);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| p.sample(&mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - -2.0).abs() < 3.5 * (4.0f64 / n as f64).sqrt());
        assert!((var - 4.0).abs() < 0.1);
    }

    #[test]
    fn categorical_sample_frequencies() {
        let p = CategoricalParams::new(array![0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()]).unwrap();
        let mut r = rng(29);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[p.sample(&mut r)] += 1;
        }
        for (count, want) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let freq = *count as f64 / n as f64;
            let se = (want * (1.0 - want) / n as f64).sqrt();
            assert!((freq - want).abs() < 4.0 * se, "freq {freq} vs {want}");
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in proptest::collection::vec(-30.0f64..30.0, 1..8),
            c in -10.0f64..10.0,
        ) {
            let p = softmax(&v).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(q.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn log_sum_exp_dominates_max(v in proptest::collection::vec(-50.0f64..50.0, 1..8)) {
            let lse = log_sum_exp(&v).unwrap();
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max - 1e-12);
            prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
        }
    }
}
