//! Blockade-constrained positions on a periodic ring and the power-law
//! coupling matrix built from them.
//!
//! All lengths are measured in units of the blockade radius, so the blockade
//! condition reads `d_min(i, j) >= 1`. The ring length follows from the
//! density `rho = 1/(2W)` as `L = N/rho = 2WN`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whole-sample rejection budget for the blockade condition.
pub const DEFAULT_MAX_ATTEMPTS: u64 = 1_000_000;

/// Half-width prefactor of the shifted-lattice jitter, `sigma = 1.5 (2W - 1)`.
pub const DEFAULT_SIGMA_FACTOR: f64 = 1.5;

/// One disorder realization: spin coordinates on a ring of length `l = 2WN`.
///
/// Positions are stored sorted ascending, so index order coincides with
/// spatial order around the ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSample {
    #[serde(rename = "n")]
    pub n_spins: usize,
    #[serde(rename = "w")]
    pub disorder_strength: f64,
    #[serde(rename = "l")]
    pub box_length: f64,
    pub seed: u64,
    pub positions: Vec<f64>,
}

impl PositionSample {
    /// Checks the blockade invariant and coordinate ranges.
    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.n_spins {
            return Err(Error::InvalidDomain(format!(
                "expected {} positions, got {}",
                self.n_spins,
                self.positions.len()
            )));
        }
        if self.box_length <= 0.0 {
            return Err(Error::InvalidDomain("box length must be positive".into()));
        }
        for &x in &self.positions {
            if !(0.0..self.box_length).contains(&x) {
                return Err(Error::InvalidDomain(format!(
                    "position {x} outside [0, {})",
                    self.box_length
                )));
            }
        }
        if !blockade_holds(&self.positions, self.box_length) {
            return Err(Error::InvalidDomain(
                "blockade condition violated: min-image distance < 1".into(),
            ));
        }
        Ok(())
    }
}

/// Minimum-image distance on a ring of circumference `l`.
pub fn min_image_distance(x_i: f64, x_j: f64, l: f64) -> Result<f64> {
    if l <= 0.0 {
        return Err(Error::InvalidDomain(format!("ring length {l} <= 0")));
    }
    let d = (x_i - x_j).abs();
    Ok(d.min(l - d))
}

fn blockade_holds(positions: &[f64], l: f64) -> bool {
    for (a, &xi) in positions.iter().enumerate() {
        for &xj in &positions[a + 1..] {
            let d = (xi - xj).abs();
            if d.min(l - d) < 1.0 {
                return false;
            }
        }
    }
    true
}

fn finish_sample(
    mut positions: Vec<f64>,
    n: usize,
    w: f64,
    seed: u64,
    l: f64,
) -> PositionSample {
    positions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    PositionSample {
        n_spins: n,
        disorder_strength: w,
        box_length: l,
        seed,
        positions,
    }
}

/// Draws `n` i.i.d. uniform positions on `[0, L)` and rejects whole samples
/// until the blockade condition holds.
///
/// The acceptance probability collapses as the density approaches the jamming
/// limit (Renyi's parking constant, about 0.748); exceeding the attempt
/// budget is reported as an error.
pub fn sample_positions_naive(
    n: usize,
    w: f64,
    seed: u64,
    max_attempts: u64,
) -> Result<PositionSample> {
    check_sampler_args(n, w)?;
    let l = 2.0 * w * n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let positions: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..l)).collect();
        if blockade_holds(&positions, l) {
            return Ok(finish_sample(positions, n, w, seed, l));
        }
    }
    Err(Error::SamplingFailure {
        attempts: max_attempts,
        n,
        w,
    })
}

/// Draws positions `x_i = i s + sigma_i mod L` with `s = 2W` and
/// `sigma_i ~ U[-sigma, sigma]`, `sigma = sigma_factor (2W - 1)`,
/// rejecting whole samples until the blockade condition holds.
///
/// At `W = 0.5` the jitter width vanishes and the output is the regular
/// chain with unit spacing, independent of the seed.
pub fn sample_positions_shifted(
    n: usize,
    w: f64,
    sigma_factor: f64,
    seed: u64,
    max_attempts: u64,
) -> Result<PositionSample> {
    check_sampler_args(n, w)?;
    if sigma_factor < 0.0 {
        return Err(Error::InvalidDomain("sigma_factor must be >= 0".into()));
    }
    let l = 2.0 * w * n as f64;
    let s = 2.0 * w;
    let sigma = sigma_factor * (2.0 * w - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let positions: Vec<f64> = (0..n)
            .map(|i| {
                let jitter = if sigma > 0.0 {
                    rng.gen_range(-sigma..sigma)
                } else {
                    0.0
                };
                (i as f64 * s + jitter).rem_euclid(l)
            })
            .collect();
        if blockade_holds(&positions, l) {
            return Ok(finish_sample(positions, n, w, seed, l));
        }
    }
    Err(Error::SamplingFailure {
        attempts: max_attempts,
        n,
        w,
    })
}

/// Samples a disorder realization, dispatching on the disorder strength:
/// shifted lattice below `W = 1`, naive rejection at and above.
pub fn sample_positions(n: usize, w: f64, seed: u64) -> Result<PositionSample> {
    if w < 1.0 {
        sample_positions_shifted(n, w, DEFAULT_SIGMA_FACTOR, seed, DEFAULT_MAX_ATTEMPTS)
    } else {
        sample_positions_naive(n, w, seed, DEFAULT_MAX_ATTEMPTS)
    }
}

fn check_sampler_args(n: usize, w: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidDomain("need at least 2 spins".into()));
    }
    if w < 0.5 {
        return Err(Error::InvalidDomain(format!(
            "disorder strength {w} < 0.5 is below the blockade-packing minimum"
        )));
    }
    Ok(())
}

/// Symmetric matrix of power-law couplings `J_ij = c_alpha / d_min(i,j)^alpha`.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    pub j: Array2<f64>,
    pub alpha: f64,
    pub c_alpha: f64,
}

impl CouplingMatrix {
    pub fn n_spins(&self) -> usize {
        self.j.nrows()
    }
}

/// Builds the coupling matrix from a position sample, using minimum-image
/// distances on the ring.
pub fn coupling_matrix(sample: &PositionSample, alpha: f64, c_alpha: f64) -> Result<CouplingMatrix> {
    if alpha <= 0.0 {
        return Err(Error::InvalidDomain("alpha must be positive".into()));
    }
    let n = sample.n_spins;
    let mut j = Array2::zeros((n, n));
    for a in 0..n {
        for b in (a + 1)..n {
            let d = min_image_distance(sample.positions[a], sample.positions[b], sample.box_length)?;
            if d == 0.0 {
                return Err(Error::InvalidDomain(format!(
                    "coincident positions at indices {a}, {b}"
                )));
            }
            let coupling = c_alpha / d.powf(alpha);
            j[[a, b]] = coupling;
            j[[b, a]] = coupling;
        }
    }
    Ok(CouplingMatrix { j, alpha, c_alpha })
}
