//! Synthetic panel generator for simulation studies.
//!
//! Draws a two-level hierarchy: bank profiles around the industry means,
//! cell parameters around their bank's profile (gamma mixing at both
//! levels), then Pareto losses and Poisson counts from the cell parameters.
//! All scales are 1, so each cell's tail parameter equals its severity
//! parameter and its annual rate equals its frequency parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{CellConfig, CountRecord, LossRecord};
use crate::error::{Error, Result};

/// Generator settings.  Means must be positive, variances nonnegative;
/// a zero variance collapses that mixing level to a constant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub banks: usize,
    pub cells: usize,
    pub years: usize,
    pub losses_per_cell: usize,
    pub threshold: f64,
    pub severity_mean: f64,
    pub severity_between: f64,
    pub severity_within: f64,
    pub frequency_mean: f64,
    pub frequency_between: f64,
    pub frequency_within: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            banks: 3,
            cells: 10,
            years: 10,
            losses_per_cell: 10,
            threshold: 1.0,
            severity_mean: 3.0,
            severity_between: 0.5,
            severity_within: 1.0,
            frequency_mean: 2.0,
            frequency_between: 0.25,
            frequency_within: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.banks < 1 || self.cells < 1 || self.years < 1 || self.losses_per_cell < 1 {
            return Err(Error::Config(
                "banks, cells, years and losses-per-cell must all be >= 1".into(),
            ));
        }
        if self.years > 10_000 {
            return Err(Error::Config("years must be <= 10000".into()));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "threshold must be > 0, got {}",
                self.threshold
            )));
        }
        for (name, value) in [
            ("severity-mean", self.severity_mean),
            ("frequency-mean", self.frequency_mean),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {value}")));
            }
        }
        for (name, value) in [
            ("severity-between", self.severity_between),
            ("severity-within", self.severity_within),
            ("frequency-between", self.frequency_between),
            ("frequency-within", self.frequency_within),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {value}")));
            }
        }
        Ok(())
    }
}

/// Sampled cell parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub cell_id: String,
    /// Severity parameter; equals the cell's Pareto tail (scale 1).
    pub severity: f64,
    /// Frequency parameter; equals the cell's annual rate (volume 1).
    pub frequency: f64,
}

/// Sampled bank profiles and their cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankTruth {
    pub bank_id: String,
    pub severity_profile: f64,
    pub frequency_profile: f64,
    pub cells: Vec<CellTruth>,
}

/// Generated panel plus the parameters that produced it.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub losses: Vec<LossRecord>,
    pub counts: Vec<CountRecord>,
    pub configs: Vec<CellConfig>,
    pub truth: Vec<BankTruth>,
}

// Gamma draw parameterized by mean and variance; variance 0 degenerates to
// the mean, and underflowed zero draws are rejected so downstream laws stay
// well defined.
fn draw_positive<R: Rng>(rng: &mut R, mean: f64, variance: f64) -> f64 {
    if variance == 0.0 {
        return mean;
    }
    let shape = mean * mean / variance;
    let scale = variance / mean;
    let gamma = Gamma::new(shape, scale).expect("validated mean and variance");
    loop {
        let x = gamma.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

/// Generates a full panel.  Deterministic in the config, including the seed.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.banks * config.cells * config.losses_per_cell);
    let mut counts = Vec::with_capacity(config.banks * config.cells * config.years);
    let mut configs = Vec::with_capacity(config.banks * config.cells);
    let mut truth = Vec::with_capacity(config.banks);

    for b in 1..=config.banks {
        let bank_id = b.to_string();
        let severity_profile = draw_positive(&mut rng, config.severity_mean, config.severity_between);
        let frequency_profile =
            draw_positive(&mut rng, config.frequency_mean, config.frequency_between);
        let mut cells = Vec::with_capacity(config.cells);
        for c in 1..=config.cells {
            let cell_id = c.to_string();
            let severity = draw_positive(&mut rng, severity_profile, config.severity_within);
            let frequency = draw_positive(&mut rng, frequency_profile, config.frequency_within);
            configs.push(CellConfig {
                bank_id: bank_id.clone(),
                cell_id: cell_id.clone(),
                threshold: config.threshold,
                severity_scale: 1.0,
                frequency_scale: 1.0,
            });
            for _ in 0..config.losses_per_cell {
                let u: f64 = rng.random();
                losses.push(LossRecord {
                    bank_id: bank_id.clone(),
                    cell_id: cell_id.clone(),
                    amount: config.threshold * (1.0 - u).powf(-1.0 / severity),
                });
            }
            let poisson = Poisson::new(frequency).expect("positive frequency");
            for year in 1..=config.years {
                counts.push(CountRecord {
                    bank_id: bank_id.clone(),
                    cell_id: cell_id.clone(),
                    year: year as i32,
                    count: poisson.sample(&mut rng) as u64,
                });
            }
            cells.push(CellTruth {
                cell_id,
                severity,
                frequency,
            });
        }
        truth.push(BankTruth {
            bank_id,
            severity_profile,
            frequency_profile,
            cells,
        });
    }
    Ok(SynthDataset {
        losses,
        counts,
        configs,
        truth,
    })
}
