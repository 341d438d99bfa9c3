//! Synthetic "experimental" data: homoscedastic Gaussian measurement noise
//! and Gaussian perturbation of ground-truth parameters.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`), which is specified
//! bit-for-bit and therefore portable across platforms. Every gas (or
//! parameter) draws from its own ChaCha stream, selected by a hash of its
//! name, so adding a gas does not reshuffle the noise of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::params::ParameterSet;
use crate::reactor::FluxSeries;

/// Noise magnitude per gas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    /// Absolute standard deviation per gas, nmol/s, in the flux's gas order.
    Absolute(Vec<f64>),
    /// Standard deviation as a fraction of each gas's peak in a reference
    /// (noiseless) trace.
    FractionOfPeak(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub level: NoiseLevel,
    pub seed: u64,
}

impl NoiseModel {
    pub fn absolute(sigma: Vec<f64>, seed: u64) -> Self {
        NoiseModel { level: NoiseLevel::Absolute(sigma), seed }
    }

    pub fn fraction_of_peak(fraction: f64, seed: u64) -> Self {
        NoiseModel { level: NoiseLevel::FractionOfPeak(fraction), seed }
    }

    /// Absolute sigma per gas; fractions are taken of `reference`'s peaks.
    pub fn resolve(&self, reference: &FluxSeries) -> Result<Vec<f64>> {
        let sigma = match &self.level {
            NoiseLevel::Absolute(s) => {
                if s.len() != reference.gases.len() {
                    return Err(TapError::invalid(format!(
                        "noise model has {} sigmas for {} gases",
                        s.len(),
                        reference.gases.len()
                    )));
                }
                s.clone()
            }
            NoiseLevel::FractionOfPeak(f) => {
                (0..reference.gases.len()).map(|g| f * reference.peak(g).1.max(0.0)).collect()
            }
        };
        if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(TapError::invalid("noise sigma must be finite and non-negative"));
        }
        Ok(sigma)
    }

    /// The same model with sigma fixed to absolute values from `reference`.
    pub fn resolved(&self, reference: &FluxSeries) -> Result<Self> {
        Ok(NoiseModel::absolute(self.resolve(reference)?, self.seed))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NoiseModel { level: self.level.clone(), seed }
    }
}

/// 64-bit FNV-1a; stable stream selector for a gas or parameter name.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn named_stream(seed: u64, name: &str) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

/// Adds iid `N(0, sigma_g^2)` to every sample of every gas. The noise model
/// must already be absolute (see [`NoiseModel::resolved`]).
pub fn add_noise(flux: &FluxSeries, noise: &NoiseModel) -> Result<FluxSeries> {
    let NoiseLevel::Absolute(sigma) = &noise.level else {
        return Err(TapError::invalid("noise sigma must be resolved to absolute units before adding noise"));
    };
    if sigma.len() != flux.gases.len() {
        return Err(TapError::invalid(format!(
            "noise model has {} sigmas for {} gases",
            sigma.len(),
            flux.gases.len()
        )));
    }
    if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(TapError::invalid("noise sigma must be finite and non-negative"));
    }
    let mut out = flux.clone();
    for (g, series) in out.flux.iter_mut().enumerate() {
        if sigma[g] == 0.0 {
            continue;
        }
        let mut rng = named_stream(noise.seed, &flux.gases[g]);
        for v in series.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma[g] * z;
        }
    }
    Ok(out)
}

/// Shifts every free energy by an independent `N(0, sigma^2)` draw; fixed
/// parameters are untouched. Results are clamped into the parameter bounds.
pub fn perturb_parameters(params: &ParameterSet, sigma: f64, seed: u64) -> Result<ParameterSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(TapError::invalid(format!("perturbation sigma must be non-negative, got {sigma}")));
    }
    let mut out = params.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for e in out.entries.iter_mut().filter(|e| e.free) {
        let mut rng = named_stream(seed, &e.name);
        let z: f64 = StandardNormal.sample(&mut rng);
        e.value = (e.value + sigma * z).clamp(e.lower, e.upper);
    }
    Ok(out)
}
