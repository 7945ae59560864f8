//! Geometric Brownian motion for the price of B's coins, denominated in A's
//! asset.
//!
//! ```text
//! ln(x(t+λ) / x(t)) = (μ − σ²/2)·λ + σ·(W(t+λ) − W(t))
//! ```
//!
//! The transition law is log-normal; [`transition_pdf`] and
//! [`transition_cdf`] are its density and distribution function, which the
//! game solvers integrate against. Times are in hours.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Hours;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriceModelError {
    #[error("volatility must be finite and non-negative, got {0}")]
    InvalidVolatility(f64),
    #[error("drift must be finite, got {0}")]
    InvalidDrift(f64),
    #[error("volatility is zero; the transition law is a point mass")]
    DegenerateVolatility,
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("horizon must be non-negative, got {0}")]
    NegativeHorizon(f64),
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("step must be positive and no larger than the horizon (step {step}, horizon {horizon})")]
    InvalidStep { step: f64, horizon: f64 },
    #[error("probability must lie strictly between 0 and 1, got {0}")]
    InvalidProbability(f64),
}

/// Drift per hour and volatility per square-root hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GbmParams {
    /// `sigma == 0` is accepted here as the deterministic limit; the density
    /// functions reject it.
    pub fn new(mu: f64, sigma: f64) -> Result<Self, PriceModelError> {
        let params = Self { mu, sigma };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PriceModelError> {
        if !self.mu.is_finite() {
            return Err(PriceModelError::InvalidDrift(self.mu));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(PriceModelError::InvalidVolatility(self.sigma));
        }
        Ok(())
    }

    /// Mean of the log-return over `lambda` hours.
    pub fn log_drift(&self, lambda: Hours) -> f64 {
        (self.mu - 0.5 * self.sigma * self.sigma) * lambda
    }

    /// Standard deviation of the log-return over `lambda` hours.
    pub fn log_sd(&self, lambda: Hours) -> f64 {
        self.sigma * lambda.sqrt()
    }
}

/// A price observation `x(y_b, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceState {
    pub value: f64,
    pub at_time: Hours,
}

impl PriceState {
    pub fn new(value: f64, at_time: Hours) -> Result<Self, PriceModelError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(PriceModelError::NonPositivePrice(value));
        }
        if !(at_time.is_finite() && at_time >= 0.0) {
            return Err(PriceModelError::NegativeHorizon(at_time));
        }
        Ok(Self { value, at_time })
    }

    /// Price at time zero. Panics on a nonpositive value; use [`PriceState::new`]
    /// for checked construction.
    pub fn at_origin(value: f64) -> Self {
        Self::new(value, 0.0).expect("price must be positive")
    }
}

/// Complementary error function, accurate to a few ulps over the real line.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`normal_cdf`].
///
/// Acklam's rational approximation followed by two Halley steps against the
/// erfc-based distribution function, which brings the result to full double
/// precision away from the extreme tails.
pub fn normal_quantile(p: f64) -> Result<f64, PriceModelError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PriceModelError::InvalidProbability(p));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    for _ in 0..2 {
        // Work with the smaller tail so the residual keeps relative precision.
        let e = if x < 0.0 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - normal_cdf(-x)
        };
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

fn check_horizon(lambda: Hours) -> Result<(), PriceModelError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(PriceModelError::NonPositiveHorizon(lambda));
    }
    Ok(())
}

fn check_law(params: &GbmParams, lambda: Hours) -> Result<(), PriceModelError> {
    params.validate()?;
    check_horizon(lambda)?;
    if params.sigma == 0.0 {
        return Err(PriceModelError::DegenerateVolatility);
    }
    Ok(())
}

/// Standardized log-distance of `target` from the transition law's centre.
fn standardize(target: f64, state: &PriceState, params: &GbmParams, lambda: Hours) -> f64 {
    ((target / state.value).ln() - params.log_drift(lambda)) / params.log_sd(lambda)
}

/// `E[x(t+λ) | x(t)] = x(t)·e^{μλ}`.
pub fn expected_price(
    state: &PriceState,
    params: &GbmParams,
    lambda: Hours,
) -> Result<f64, PriceModelError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(PriceModelError::NegativeHorizon(lambda));
    }
    Ok(state.value * (params.mu * lambda).exp())
}

/// Log-normal transition density of reaching `target` after `lambda` hours.
pub fn transition_pdf(
    target: f64,
    state: &PriceState,
    params: &GbmParams,
    lambda: Hours,
) -> Result<f64, PriceModelError> {
    if !(target > 0.0) {
        return Err(PriceModelError::NonPositivePrice(target));
    }
    check_law(params, lambda)?;
    let z = standardize(target, state, params, lambda);
    Ok(normal_pdf(z) / (params.log_sd(lambda) * target))
}

/// `P[x(t+λ) ≤ target | x(t)]`.
pub fn transition_cdf(
    target: f64,
    state: &PriceState,
    params: &GbmParams,
    lambda: Hours,
) -> Result<f64, PriceModelError> {
    if !(target > 0.0) {
        return Err(PriceModelError::NonPositivePrice(target));
    }
    check_law(params, lambda)?;
    Ok(normal_cdf(standardize(target, state, params, lambda)))
}

/// Price `p` with `transition_cdf(p) == prob`.
pub fn transition_quantile(
    prob: f64,
    state: &PriceState,
    params: &GbmParams,
    lambda: Hours,
) -> Result<f64, PriceModelError> {
    check_law(params, lambda)?;
    let z = normal_quantile(prob)?;
    Ok(state.value * (params.log_drift(lambda) + params.log_sd(lambda) * z).exp())
}

/// Samples a GBM path from `state` out to `state.at_time + horizon` with exact
/// log-normal increments. The last step is shortened when `horizon` is not a
/// multiple of `step`. The returned path starts with `state` itself.
pub fn sample_path(
    state: &PriceState,
    params: &GbmParams,
    horizon: Hours,
    step: Hours,
    seed: u64,
) -> Result<Vec<PriceState>, PriceModelError> {
    params.validate()?;
    if !(step.is_finite() && step > 0.0 && horizon.is_finite() && horizon >= step) {
        return Err(PriceModelError::InvalidStep { step, horizon });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (horizon / step - 1e-9).ceil() as usize;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(*state);
    let mut log_price = state.value.ln();
    let mut elapsed = 0.0;
    for k in 1..=steps {
        let next = (k as f64 * step).min(horizon);
        let dt = next - elapsed;
        let z: f64 = rng.sample(StandardNormal);
        log_price += params.log_drift(dt) + params.log_sd(dt) * z;
        elapsed = next;
        path.push(PriceState {
            value: log_price.exp(),
            at_time: state.at_time + elapsed,
        });
    }
    Ok(path)
}

/// A GBM path realized lazily at whatever times it is queried.
///
/// Queries past the last realized knot extend the path forward; queries
/// between knots are filled in by Brownian-bridge sampling, so the joint law
/// of all realized points is exactly that of the GBM regardless of query
/// order. Times before the anchor return the anchor price.
#[derive(Debug, Clone)]
pub struct PricePath {
    params: GbmParams,
    anchor: PriceState,
    rng: ChaCha8Rng,
    /// `(time, ln price)`, sorted by time.
    knots: Vec<(Hours, f64)>,
}

impl PricePath {
    pub fn new(anchor: PriceState, params: GbmParams, seed: u64) -> Self {
        Self {
            params,
            anchor,
            rng: ChaCha8Rng::seed_from_u64(seed),
            knots: vec![(anchor.at_time, anchor.value.ln())],
        }
    }

    pub fn anchor(&self) -> PriceState {
        self.anchor
    }

    pub fn price_at(&mut self, t: Hours) -> f64 {
        if t <= self.anchor.at_time {
            return self.anchor.value;
        }
        let idx = self.knots.partition_point(|&(kt, _)| kt < t);
        if let Some(&(kt, lp)) = self.knots.get(idx) {
            if kt == t {
                return lp.exp();
            }
        }
        let z: f64 = self.rng.sample(StandardNormal);
        let (t0, l0) = self.knots[idx - 1];
        let lp = match self.knots.get(idx) {
            None => l0 + self.params.log_drift(t - t0) + self.params.log_sd(t - t0) * z,
            Some(&(t1, l1)) => {
                let w = (t - t0) / (t1 - t0);
                let var = self.params.sigma.powi(2) * (t - t0) * (t1 - t) / (t1 - t0);
                l0 + w * (l1 - l0) + var.sqrt() * z
            }
        };
        self.knots.insert(idx, (t, lp));
        lp.exp()
    }
}
