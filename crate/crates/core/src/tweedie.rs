//! Tweedie law in the compound Poisson-gamma regime `1 < p < 2`.
//!
//! A draw is `X = C_1 + ... + C_M` with `M ~ Poisson(lambda)` and the `C_i`
//! independent `Gamma(alpha, scale)`; `X = 0` exactly when `M = 0`. The
//! triple `(lambda, alpha, scale)` is fixed by matching the first two
//! moments to `(mu, phi * mu^p)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::special::{ln_gamma, reg_lower_incomplete_gamma};

/// Poisson tail mass left out of the CDF series.
pub const SERIES_TAIL: f64 = 1e-12;

const POISSON_INVERSION_MAX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TweedieParams {
    pub mu: f64,
    pub phi: f64,
    pub p: f64,
}

impl TweedieParams {
    pub fn new(mu: f64, phi: f64, p: f64) -> Result<Self> {
        let params = TweedieParams { mu, phi, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "phi must be positive, got {}",
                self.phi
            )));
        }
        if !(self.p > 1.0 && self.p < 2.0) {
            return Err(Error::InvalidParams(format!(
                "power p must lie in (1, 2), got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Poisson rate, gamma shape and gamma scale of the compound representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundParams {
    pub lambda: f64,
    pub alpha: f64,
    pub scale: f64,
}

impl CompoundParams {
    pub fn mean(&self) -> f64 {
        self.lambda * self.alpha * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.lambda * self.alpha * (self.alpha + 1.0) * self.scale * self.scale
    }

    pub fn zero_mass(&self) -> f64 {
        (-self.lambda).exp()
    }
}

pub fn to_compound(params: &TweedieParams) -> Result<CompoundParams> {
    params.validate()?;
    let TweedieParams { mu, phi, p } = *params;
    Ok(CompoundParams {
        lambda: mu.powf(2.0 - p) / (phi * (2.0 - p)),
        alpha: (2.0 - p) / (p - 1.0),
        scale: phi * (p - 1.0) * mu.powf(p - 1.0),
    })
}

/// `(mu, phi * mu^p)`.
pub fn mean_variance(params: &TweedieParams) -> Result<(f64, f64)> {
    params.validate()?;
    Ok((params.mu, params.phi * params.mu.powf(params.p)))
}

/// Marsaglia-Tsang gamma draw with unit scale; shapes below one use the
/// `U^(1/a)` boost.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = rng.random();
        return sample_gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    while u > cdf {
        k += 1;
        pmf *= lambda / k as f64;
        cdf += pmf;
        if pmf == 0.0 && cdf < u {
            // rounding left cdf a hair below u
            break;
        }
    }
    k
}

/// Poisson draw by inversion. Rates of 30 and above are split into equal
/// chunks below 30 whose draws are summed, which keeps `exp(-lambda)` from
/// underflowing without any approximation.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < POISSON_INVERSION_MAX {
        return poisson_inversion(rng, lambda);
    }
    let chunks = (lambda / POISSON_INVERSION_MAX).floor() as u64 + 1;
    let piece = lambda / chunks as f64;
    (0..chunks).map(|_| poisson_inversion(rng, piece)).sum()
}

/// One compound draw. The sum of `m` iid `Gamma(alpha)` variables is drawn
/// directly as `Gamma(m * alpha)`.
pub fn sample_one<R: Rng + ?Sized>(rng: &mut R, compound: &CompoundParams) -> f64 {
    let m = sample_poisson(rng, compound.lambda);
    if m == 0 {
        0.0
    } else {
        compound.scale * sample_gamma(rng, m as f64 * compound.alpha)
    }
}

/// `n` draws from the stream keyed by `seed`.
pub fn sample(params: &TweedieParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    let compound = to_compound(params)?;
    if n == 0 {
        return Err(Error::InvalidParams(
            "sample size must be at least 1".into(),
        ));
    }
    let mut rng = rng::stream(seed, "tweedie-sample", &[]);
    Ok((0..n).map(|_| sample_one(&mut rng, &compound)).collect())
}

/// Poisson weights `P(M = m)` for `m = 0..=m_max`, where `m_max` is the
/// first index beyond which the remaining mass is provably below
/// [`SERIES_TAIL`].
fn poisson_weights(lambda: f64) -> Vec<f64> {
    let ln_lambda = lambda.ln();
    let mut weights = Vec::with_capacity((lambda + 10.0 * lambda.sqrt() + 20.0) as usize);
    let mut m = 0u64;
    loop {
        let mf = m as f64;
        let w = (-lambda + mf * ln_lambda - ln_gamma(mf + 1.0)).exp();
        weights.push(w);
        let ratio = lambda / (mf + 1.0);
        // tail after m is bounded by w * r / (1 - r) once r < 1
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < SERIES_TAIL {
            break;
        }
        m += 1;
    }
    weights
}

/// Reusable CDF evaluator: the Poisson weights are computed once.
#[derive(Debug, Clone)]
pub struct CdfSeries {
    compound: CompoundParams,
    weights: Vec<f64>,
}

impl CdfSeries {
    pub fn new(params: &TweedieParams) -> Result<Self> {
        let compound = to_compound(params)?;
        let weights = poisson_weights(compound.lambda);
        Ok(CdfSeries { compound, weights })
    }

    pub fn compound(&self) -> &CompoundParams {
        &self.compound
    }

    pub fn terms(&self) -> usize {
        self.weights.len()
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::NegativeX(x));
        }
        let mut total = self.compound.zero_mass();
        if x == 0.0 {
            return Ok(total);
        }
        let z = x / self.compound.scale;
        for (m, &w) in self.weights.iter().enumerate().skip(1) {
            if w < 1e-300 {
                continue;
            }
            total += w * reg_lower_incomplete_gamma(m as f64 * self.compound.alpha, z)?;
        }
        Ok(total.min(1.0))
    }
}

/// `P(X <= x)` by the Poisson mixture of gamma CDFs.
pub fn cdf(params: &TweedieParams, x: f64) -> Result<f64> {
    CdfSeries::new(params)?.eval(x)
}
