//! Geometric Brownian motion model of renewable generation.
//!
//! Generation follows `dP = mu_g P dt + sigma_g P dW`. Paths are sampled with
//! the exact lognormal transition
//!
//! ```text
//! P(t + h) = P(t) * exp((mu_g - sigma_g^2 / 2) h + sigma_g sqrt(h) Z),  Z ~ N(0, 1)
//! ```
//!
//! so a path on any grid has the correct finite-dimensional distributions and
//! there is no discretisation bias to account for downstream.
//!
//! Randomness comes from ChaCha8 seeded from a `u64`, with one ChaCha stream
//! per path. Path `i` of an ensemble is `(seed, stream = i)`; a single path is
//! stream 0. Streams are independent, so ensembles can be generated in any
//! order or in parallel and stay reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Below this `|x|` the ratio `(e^x - 1) / x` is taken from its series.
const EXPREL_SERIES_CUTOFF: f64 = 1e-8;

/// Drift, volatility and initial value of the generation process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    /// Initial generation P_g(0) in kW.
    pub p0: f64,
    /// Percentage drift per hour.
    pub mu_g: f64,
    /// Percentage volatility per square-root hour.
    pub sigma_g: f64,
}

impl GbmParams {
    pub fn new(p0: f64, mu_g: f64, sigma_g: f64) -> Result<Self> {
        let params = Self { p0, mu_g, sigma_g };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.p0.is_finite() && self.p0 > 0.0, || {
            format!("initial generation p0 must be positive, got {}", self.p0)
        })?;
        ensure(self.mu_g.is_finite(), || format!("drift mu_g must be finite, got {}", self.mu_g))?;
        ensure(self.sigma_g.is_finite() && self.sigma_g >= 0.0, || {
            format!("volatility sigma_g must be non-negative, got {}", self.sigma_g)
        })
    }

    /// Same dynamics started from a different initial value.
    pub fn with_p0(self, p0: f64) -> Self {
        Self { p0, ..self }
    }
}

/// How the sub-interval mean generation is conditioned on an observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanConvention {
    /// `E[P(t) | P(s) = p] = p e^{mu_g (t - s)}` (Markov property).
    #[default]
    Markov,
    /// Additionally scales the observation by `e^{mu_g s}`, where `s` is the
    /// sub-interval start. Kept to reproduce the printed block-count formula.
    Literal,
}

/// A sampled generation trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GbmPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl GbmPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Last timestamp of the grid.
    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    /// Value at the latest grid point not after `t` (causal sample-and-hold).
    ///
    /// Timestamps within a relative 1e-9 of a grid point count as that point,
    /// so accumulated rounding in interval endpoints does not skip a sample.
    pub fn value_at_or_before(&self, t: f64) -> f64 {
        let slack = 1e-9 * t.abs().max(1.0);
        let idx = self.times.partition_point(|&s| s <= t + slack);
        self.values[idx.saturating_sub(1)]
    }

    /// Index of the grid point equal to `t` (within a relative 1e-9), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let slack = 1e-9 * t.abs().max(1.0);
        let idx = self.times.partition_point(|&s| s < t - slack);
        (idx < self.times.len() && (self.times[idx] - t).abs() <= slack).then_some(idx)
    }

    /// Keeps every `factor`-th grid point. Because transitions are exact, the
    /// result is a path on the coarser grid driven by the same Brownian motion.
    pub fn subsample(&self, factor: usize) -> Result<GbmPath> {
        ensure(factor >= 1, || "subsample factor must be at least 1".into())?;
        let steps = self.len().saturating_sub(1);
        ensure(steps.is_multiple_of(factor), || {
            format!("{steps} steps are not divisible by subsample factor {factor}")
        })?;
        Ok(GbmPath {
            times: self.times.iter().step_by(factor).copied().collect(),
            values: self.values.iter().step_by(factor).copied().collect(),
            seed: self.seed,
            stream: self.stream,
        })
    }
}

/// Samples one path on `n_steps + 1` uniform points over `[0, horizon]`.
pub fn simulate_path(params: &GbmParams, horizon: f64, n_steps: usize, seed: u64) -> Result<GbmPath> {
    simulate_path_stream(params, horizon, n_steps, seed, 0)
}

/// Like [`simulate_path`] but draws from ChaCha stream `stream` of `seed`.
pub fn simulate_path_stream(
    params: &GbmParams,
    horizon: f64,
    n_steps: usize,
    seed: u64,
    stream: u64,
) -> Result<GbmPath> {
    params.validate()?;
    ensure(horizon.is_finite() && horizon > 0.0, || {
        format!("horizon must be positive, got {horizon}")
    })?;
    ensure(n_steps >= 1, || "n_steps must be at least 1".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let dt = horizon / n_steps as f64;
    let drift = (params.mu_g - 0.5 * params.sigma_g * params.sigma_g) * dt;
    let diffusion = params.sigma_g * dt.sqrt();

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    values.push(params.p0);
    let mut p = params.p0;
    for k in 1..=n_steps {
        let z: f64 = rng.sample(StandardNormal);
        p *= (drift + diffusion * z).exp();
        times.push(if k == n_steps { horizon } else { k as f64 * dt });
        values.push(p);
    }
    Ok(GbmPath { times, values, seed, stream })
}

/// `E[P_g(t)] = p0 e^{mu_g t}`.
pub fn mean_at(params: &GbmParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(params.p0 * (params.mu_g * t).exp())
}

/// `Var[P_g(t)] = p0^2 e^{2 mu_g t} (e^{sigma_g^2 t} - 1)`.
///
/// The variance starts at zero and grows exponentially in `t`, which is why
/// reserve planning splits long horizons into short sub-intervals.
pub fn variance_at(params: &GbmParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let s2 = params.sigma_g * params.sigma_g;
    Ok(params.p0 * params.p0 * (2.0 * params.mu_g * t).exp() * (s2 * t).exp_m1())
}

/// Time-averaged conditional mean `(1/dt) ∫_0^dt E[P(s+u) | P(s) = p_obs] du`
/// under the Markov convention: `p_obs (e^{mu_g dt} - 1) / (mu_g dt)`.
pub fn conditional_mean_integral(params: &GbmParams, p_obs: f64, dt: f64) -> Result<f64> {
    conditional_mean_integral_with(params, p_obs, 0.0, dt, MeanConvention::Markov)
}

/// Time-averaged conditional mean over `[t_start, t_start + dt]` for either
/// convention. `t_start` only matters for [`MeanConvention::Literal`].
pub fn conditional_mean_integral_with(
    params: &GbmParams,
    p_obs: f64,
    t_start: f64,
    dt: f64,
    convention: MeanConvention,
) -> Result<f64> {
    ensure(p_obs.is_finite() && p_obs > 0.0, || {
        format!("observed generation must be positive, got {p_obs}")
    })?;
    ensure(dt.is_finite() && dt > 0.0, || format!("interval length must be positive, got {dt}"))?;
    let base = match convention {
        MeanConvention::Markov => p_obs,
        MeanConvention::Literal => p_obs * (params.mu_g * t_start).exp(),
    };
    Ok(base * exprel(params.mu_g * dt))
}

/// `(e^x - 1) / x`, continuous at zero.
pub fn exprel(x: f64) -> f64 {
    if x.abs() < EXPREL_SERIES_CUTOFF {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

fn check_time(t: f64) -> Result<()> {
    ensure(t.is_finite() && t >= 0.0, || format!("time must be non-negative, got {t}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> GbmParams {
        GbmParams::new(20.0, 0.1, 0.3).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(GbmParams::new(0.0, 0.1, 0.3).is_err());
        assert!(GbmParams::new(-1.0, 0.1, 0.3).is_err());
        assert!(GbmParams::new(1.0, 0.1, -0.3).is_err());
        assert!(GbmParams::new(1.0, -0.5, 0.0).is_ok());
    }

    #[test]
    fn zero_drift_zero_vol_is_constant() {
        let params = GbmParams::new(20.0, 0.0, 0.0).unwrap();
        let path = simulate_path(&params, 5.0, 10, 1).unwrap();
        assert_eq!(path.len(), 11);
        assert!(path.values.iter().all(|&v| v == 20.0));
        assert_eq!(path.times[0], 0.0);
        assert_eq!(path.end_time(), 5.0);
    }

    #[test]
    fn deterministic_per_seed_and_stream() {
        let a = simulate_path(&reference(), 5.0, 300, 42).unwrap();
        let b = simulate_path(&reference(), 5.0, 300, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&v| v > 0.0));
        assert_eq!(a.values[0], 20.0);
        let c = simulate_path_stream(&reference(), 5.0, 300, 42, 1).unwrap();
        assert_ne!(a.values, c.values);
        let d = simulate_path(&reference(), 5.0, 300, 43).unwrap();
        assert_ne!(a.values, d.values);
    }

    #[test]
    fn grid_is_strictly_increasing() {
        let path = simulate_path(&reference(), 5.0, 300, 3).unwrap();
        assert!(path.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn simulate_rejects_bad_grid() {
        assert!(simulate_path(&reference(), 0.0, 10, 1).is_err());
        assert!(simulate_path(&reference(), -1.0, 10, 1).is_err());
        assert!(simulate_path(&reference(), 1.0, 0, 1).is_err());
    }

    #[test]
    fn moments_closed_form() {
        let flat = GbmParams::new(20.0, 0.0, 0.7).unwrap();
        assert_eq!(mean_at(&flat, 7.0).unwrap(), 20.0);
        let unit = GbmParams::new(1.0, 0.1, 0.3).unwrap();
        assert_eq!(mean_at(&unit, 0.0).unwrap(), 1.0);
        assert!((mean_at(&reference(), 5.0).unwrap() - 32.974_425_414_002_56).abs() < 1e-9);

        assert_eq!(variance_at(&reference(), 0.0).unwrap(), 0.0);
        let still = GbmParams::new(20.0, 0.1, 0.0).unwrap();
        assert_eq!(variance_at(&still, 3.0).unwrap(), 0.0);
        let expected = 400.0 * 1f64.exp() * (0.45f64.exp() - 1.0);
        assert!((variance_at(&reference(), 5.0).unwrap() - expected).abs() < 1e-9);

        assert!(mean_at(&reference(), -1.0).is_err());
        assert!(variance_at(&reference(), -1.0).is_err());
    }

    #[test]
    fn conditional_mean_examples() {
        let flat = GbmParams::new(1.0, 0.0, 0.3).unwrap();
        assert_eq!(conditional_mean_integral(&flat, 25.0, 1.0).unwrap(), 25.0);
        let v = conditional_mean_integral(&reference(), 20.0, 0.5).unwrap();
        assert!((v - 20.0 * (0.05f64.exp() - 1.0) / 0.05).abs() < 1e-12);
        assert!((v - 20.508_5).abs() < 1e-4);
        let tiny = conditional_mean_integral(&reference(), 20.0, 1e-12).unwrap();
        assert!((tiny - 20.0).abs() < 1e-10);
        assert!(conditional_mean_integral(&reference(), 20.0, 0.0).is_err());
        assert!(conditional_mean_integral(&reference(), 0.0, 1.0).is_err());
    }

    #[test]
    fn literal_convention_scales_by_start_time() {
        let markov = conditional_mean_integral_with(&reference(), 20.0, 2.0, 0.5, MeanConvention::Markov).unwrap();
        let literal = conditional_mean_integral_with(&reference(), 20.0, 2.0, 0.5, MeanConvention::Literal).unwrap();
        assert!((literal / markov - 0.2f64.exp()).abs() < 1e-12);
        let at_zero = conditional_mean_integral_with(&reference(), 20.0, 0.0, 0.5, MeanConvention::Literal).unwrap();
        assert_eq!(at_zero, markov);
    }

    #[test]
    fn exprel_is_continuous_across_cutoff() {
        for &x in &[1e-7, 1e-8, 9.9e-9, 1e-10, 0.0, -1e-9, -1e-8, -2e-8] {
            let reference = 1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0;
            assert!((exprel(x) - reference).abs() < 1e-15, "x = {x}");
        }
    }

    #[test]
    fn conditional_mean_matches_quadrature() {
        // composite Simpson of p e^{mu s} over [0, dt]
        for &(mu, dt) in &[(0.1, 0.5), (-0.3, 2.0), (1e-9, 1.0), (0.8, 0.01)] {
            let params = GbmParams::new(1.0, mu, 0.2).unwrap();
            let p = 17.0;
            let n = 2000;
            let h = dt / n as f64;
            let f = |s: f64| p * (mu * s).exp();
            let mut acc = f(0.0) + f(dt);
            for k in 1..n {
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
            }
            let quad = acc * h / 3.0;
            let closed = conditional_mean_integral(&params, p, dt).unwrap() * dt;
            assert!(((closed - quad) / quad).abs() < 1e-9, "mu={mu} dt={dt}");
        }
    }

    #[test]
    fn sample_and_hold_lookup() {
        let path = simulate_path(&reference(), 1.0, 4, 9).unwrap();
        assert_eq!(path.value_at_or_before(0.0), path.values[0]);
        assert_eq!(path.value_at_or_before(0.3), path.values[1]);
        assert_eq!(path.value_at_or_before(0.5 - 1e-13), path.values[2]);
        assert_eq!(path.value_at_or_before(7.0), path.values[4]);
        assert_eq!(path.index_of(0.75), Some(3));
        assert_eq!(path.index_of(0.7), None);
    }

    #[test]
    fn subsample_keeps_shared_points() {
        let fine = simulate_path(&reference(), 5.0, 600, 5).unwrap();
        let coarse = fine.subsample(2).unwrap();
        assert_eq!(coarse.len(), 301);
        assert_eq!(coarse.values[150], fine.values[300]);
        assert_eq!(coarse.end_time(), 5.0);
        assert!(fine.subsample(7).is_err());
    }
}
