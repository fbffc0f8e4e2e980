//! Compound annual-loss simulation and quantile (VaR) estimation.
//!
//! Each cell's annual loss is a Poisson-count sum of Pareto severities above
//! the threshold, plus an optional high-frequency compound of sub-threshold
//! losses; the bank total sums independent cells path by path.  Simulation is
//! deterministic for a given seed regardless of thread count: every
//! (cell, path-block) pair draws from its own counter-derived substream.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::domain::CellKey;
use crate::error::{Error, Result};

/// Paths per random substream; one substream per (cell, block).
const BLOCK_SIZE: usize = 65_536;

/// Optional model for losses below the threshold: Poisson counts with
/// lognormal severities truncated to (0, L), where L is the owning cell's
/// threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighFrequencyModel {
    /// Poisson mean of annual below-threshold counts; >= 0.
    pub rate: f64,
    /// Mean of the underlying normal (of log severity).
    pub log_mean: f64,
    /// Standard deviation of the underlying normal; > 0.
    pub log_sd: f64,
}

impl HighFrequencyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::Domain(format!(
                "high-frequency rate must be >= 0, got {}",
                self.rate
            )));
        }
        if !self.log_mean.is_finite() {
            return Err(Error::Domain("high-frequency log-mean must be finite".into()));
        }
        if !(self.log_sd > 0.0 && self.log_sd.is_finite()) {
            return Err(Error::Domain(format!(
                "high-frequency log-sd must be > 0, got {}",
                self.log_sd
            )));
        }
        Ok(())
    }
}

/// Annual-loss model of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLossModel {
    pub key: CellKey,
    /// Poisson mean of annual above-threshold counts; >= 0.
    pub rate: f64,
    /// Pareto tail parameter of losses above the threshold; > 0.
    pub tail: f64,
    /// Threshold L; > 0.
    pub threshold: f64,
    pub hf: Option<HighFrequencyModel>,
}

impl CellLossModel {
    pub fn new(
        key: CellKey,
        rate: f64,
        tail: f64,
        threshold: f64,
        hf: Option<HighFrequencyModel>,
    ) -> Result<Self> {
        let model = CellLossModel {
            key,
            rate,
            tail,
            threshold,
            hf,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::Domain(format!(
                "{}: arrival rate must be >= 0, got {}",
                self.key, self.rate
            )));
        }
        if !(self.tail > 0.0 && self.tail.is_finite()) {
            return Err(Error::Domain(format!(
                "{}: tail parameter must be > 0, got {}",
                self.key, self.tail
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Domain(format!(
                "{}: threshold must be > 0, got {}",
                self.key, self.threshold
            )));
        }
        if let Some(hf) = &self.hf {
            hf.validate()?;
            // The truncated severity law needs mass below the threshold.
            if truncation_mass(hf, self.threshold) <= 0.0 {
                return Err(Error::Domain(format!(
                    "{}: high-frequency severity has no mass below threshold {}",
                    self.key, self.threshold
                )));
            }
        }
        Ok(())
    }

    /// The theoretical severity mean is infinite for tail <= 1; sample
    /// statistics are still reported but do not converge.
    pub fn infinite_mean(&self) -> bool {
        self.tail <= 1.0
    }
}

fn truncation_mass(hf: &HighFrequencyModel, threshold: f64) -> f64 {
    let standard = Normal::standard();
    standard.cdf((threshold.ln() - hf.log_mean) / hf.log_sd)
}

/// Simulation settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapitalConfig {
    /// Monte Carlo repetitions.
    pub paths: u64,
    pub seed: u64,
    /// Quantile probabilities to report.
    pub quantiles: Vec<f64>,
}

impl Default for CapitalConfig {
    fn default() -> Self {
        CapitalConfig {
            paths: 1_000_000,
            seed: 0,
            quantiles: vec![0.999],
        }
    }
}

impl CapitalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 1 {
            return Err(Error::Config("paths must be >= 1".into()));
        }
        for &q in &self.quantiles {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Config(format!(
                    "quantile probabilities must lie in (0,1), got {q}"
                )));
            }
        }
        Ok(())
    }
}

/// Empirical quantile with its order-statistic confidence band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub probability: f64,
    /// Order statistic of rank ceil(q * K).
    pub value: f64,
    /// Order statistics at the central 95% binomial(K, q) rank interval.
    pub lower: f64,
    pub upper: f64,
}

/// Sample statistics of one annual-loss sample.  Mean, standard deviation
/// and max are computed in path order before sorting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub max: f64,
    pub quantiles: Vec<QuantileEstimate>,
}

/// One cell's simulated summary alongside its model parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellCapital {
    pub key: CellKey,
    pub rate: f64,
    pub tail: f64,
    pub threshold: f64,
    /// tail <= 1: sample mean does not converge.
    pub infinite_mean: bool,
    pub summary: SampleSummary,
}

/// Full simulation result.  `bank_sample` holds the sorted bank-total sample
/// for optional export; it is not serialized.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapitalResult {
    pub paths: u64,
    pub seed: u64,
    pub cells: Vec<CellCapital>,
    pub bank: SampleSummary,
    pub infinite_mean: bool,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub bank_sample: Vec<f64>,
}

// Precomputed samplers for one cell.
struct CellSampler<'a> {
    model: &'a CellLossModel,
    poisson: Option<Poisson<f64>>,
    neg_inv_tail: f64,
    hf: Option<HfSampler>,
}

struct HfSampler {
    poisson: Option<Poisson<f64>>,
    log_mean: f64,
    log_sd: f64,
    mass: f64,
    bound: f64,
    standard: Normal,
}

impl<'a> CellSampler<'a> {
    fn new(model: &'a CellLossModel) -> Result<Self> {
        model.validate()?;
        let poisson = if model.rate > 0.0 {
            Some(Poisson::new(model.rate).expect("validated rate"))
        } else {
            None
        };
        let hf = model.hf.as_ref().map(|hf| HfSampler {
            poisson: if hf.rate > 0.0 {
                Some(Poisson::new(hf.rate).expect("validated rate"))
            } else {
                None
            },
            log_mean: hf.log_mean,
            log_sd: hf.log_sd,
            mass: truncation_mass(hf, model.threshold),
            bound: model.threshold,
            standard: Normal::standard(),
        });
        Ok(CellSampler {
            model,
            poisson,
            neg_inv_tail: -1.0 / model.tail,
            hf,
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let mut total = 0.0;
        if let Some(poisson) = &self.poisson {
            let events = poisson.sample(rng) as u64;
            for _ in 0..events {
                let u: f64 = rng.random();
                // Inverse transform of the Pareto law: 1-u is in (0,1].
                total += self.model.threshold * (1.0 - u).powf(self.neg_inv_tail);
            }
        }
        if let Some(hf) = &self.hf {
            if let Some(poisson) = &hf.poisson {
                let events = poisson.sample(rng) as u64;
                for _ in 0..events {
                    let u: f64 = rng.random();
                    // Inverse transform of the truncated law; 1-u keeps the
                    // argument strictly positive.
                    let z = hf.standard.inverse_cdf((1.0 - u) * hf.mass);
                    total += (hf.log_mean + hf.log_sd * z).exp().min(hf.bound);
                }
            }
        }
        total
    }
}

/// Draws one annual loss for a cell.  The model must have passed
/// [`CellLossModel::new`]; invalid parameters panic here.
pub fn simulate_annual_loss<R: Rng>(model: &CellLossModel, rng: &mut R) -> f64 {
    CellSampler::new(model)
        .expect("invalid model; construct via CellLossModel::new")
        .draw(rng)
}

/// Empirical quantile of an ascending-sorted sample: the order statistic of
/// rank ceil(q*K), with the central 95% binomial rank band.
pub fn quantile(sorted: &[f64], q: f64) -> Result<QuantileEstimate> {
    if sorted.is_empty() {
        return Err(Error::Domain("quantile of an empty sample".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!(
            "quantile probability must lie in (0,1), got {q}"
        )));
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    let binomial = Binomial::new(q, n as u64).expect("q lies in (0,1)");
    let lower_rank = binomial.inverse_cdf(0.025).max(1) as usize;
    let upper_rank = (binomial.inverse_cdf(0.975) + 1).min(n as u64) as usize;
    Ok(QuantileEstimate {
        probability: q,
        value: sorted[rank - 1],
        lower: sorted[lower_rank - 1],
        upper: sorted[upper_rank - 1],
    })
}

fn summarize(sample: &mut [f64], quantiles: &[f64]) -> Result<SampleSummary> {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let variance = if sample.len() > 1 {
        sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let max = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sample.sort_unstable_by(f64::total_cmp);
    let quantiles = quantiles
        .iter()
        .map(|&q| quantile(sample, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSummary {
        mean,
        std_dev: variance.sqrt(),
        max,
        quantiles,
    })
}

fn simulate_cell(
    sampler: &CellSampler<'_>,
    cell_index: u64,
    seed: u64,
    paths: usize,
) -> Vec<f64> {
    let mut sample = vec![0.0f64; paths];
    sample
        .par_chunks_mut(BLOCK_SIZE)
        .enumerate()
        .for_each(|(block, chunk)| {
            debug_assert!((block as u64) < (1 << 32));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((cell_index << 32) | block as u64);
            for slot in chunk {
                *slot = sampler.draw(&mut rng);
            }
        });
    sample
}

/// Runs the full simulation: K paths of every cell's annual loss and the
/// bank total, with per-sample summaries and quantile bands.
///
/// Deterministic in (models, config) including under parallel execution.
pub fn run_capital(models: &[CellLossModel], config: &CapitalConfig) -> Result<CapitalResult> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::Validation(
            "capital simulation needs at least one cell model".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for model in models {
        model.validate()?;
        if !seen.insert(&model.key) {
            return Err(Error::Validation(format!(
                "duplicate cell model for {}",
                model.key
            )));
        }
    }

    let paths = config.paths as usize;
    let mut warnings = Vec::new();
    for &q in &config.quantiles {
        let needed = (1.0 / (1.0 - q)).ceil();
        if (paths as f64) < needed {
            warnings.push(format!(
                "quantile {q} is beyond sample resolution: needs at least {needed:.0} paths, \
                 got {paths}"
            ));
        }
    }

    let mut bank = vec![0.0f64; paths];
    let mut cells = Vec::with_capacity(models.len());
    for (cell_index, model) in models.iter().enumerate() {
        if model.infinite_mean() {
            warnings.push(format!(
                "{}: tail parameter {} <= 1 implies an infinite severity mean; sample moments \
                 do not converge",
                model.key, model.tail
            ));
        }
        let sampler = CellSampler::new(model)?;
        let mut sample = simulate_cell(&sampler, cell_index as u64, config.seed, paths);
        for (total, x) in bank.iter_mut().zip(&sample) {
            *total += *x;
        }
        let summary = summarize(&mut sample, &config.quantiles)?;
        cells.push(CellCapital {
            key: model.key.clone(),
            rate: model.rate,
            tail: model.tail,
            threshold: model.threshold,
            infinite_mean: model.infinite_mean(),
            summary,
        });
    }
    let bank_summary = summarize(&mut bank, &config.quantiles)?;
    let infinite_mean = cells.iter().any(|c| c.infinite_mean);
    Ok(CapitalResult {
        paths: config.paths,
        seed: config.seed,
        cells,
        bank: bank_summary,
        infinite_mean,
        warnings,
        bank_sample: bank,
    })
}

/// Severity-side inputs to model building: final tail parameter per cell.
#[derive(Clone, Debug)]
pub struct SeverityModelInput {
    pub key: CellKey,
    pub threshold: f64,
    pub tail_parameter: f64,
}

/// Frequency-side inputs to model building: final arrival rate per cell.
#[derive(Clone, Debug)]
pub struct FrequencyModelInput {
    pub key: CellKey,
    pub threshold: f64,
    pub arrival_rate: f64,
}

/// Joins severity and frequency fits into per-cell loss models.  Cells
/// present in only one fit are excluded with a warning; thresholds must
/// agree cell by cell (the model has one split point).
pub fn build_models_from_fits(
    severity: &[SeverityModelInput],
    frequency: &[FrequencyModelInput],
    hf: Option<&HighFrequencyModel>,
) -> Result<(Vec<CellLossModel>, Vec<String>)> {
    let mut frequency_by_key = std::collections::BTreeMap::new();
    for f in frequency {
        if frequency_by_key.insert(&f.key, f).is_some() {
            return Err(Error::Validation(format!(
                "duplicate frequency fit entry for {}",
                f.key
            )));
        }
    }
    let mut severity_keys = BTreeSet::new();
    for s in severity {
        if !severity_keys.insert(&s.key) {
            return Err(Error::Validation(format!(
                "duplicate severity fit entry for {}",
                s.key
            )));
        }
    }

    let mut models = Vec::new();
    let mut warnings = Vec::new();
    for s in severity {
        match frequency_by_key.get(&s.key) {
            Some(f) => {
                if f.threshold != s.threshold {
                    return Err(Error::Validation(format!(
                        "{}: severity threshold {} does not match frequency threshold {}",
                        s.key, s.threshold, f.threshold
                    )));
                }
                models.push(CellLossModel::new(
                    s.key.clone(),
                    f.arrival_rate,
                    s.tail_parameter,
                    s.threshold,
                    hf.cloned(),
                )?);
            }
            None => warnings.push(format!(
                "{}: present only in the severity fit; excluded from simulation",
                s.key
            )),
        }
    }
    for f in frequency {
        if !severity_keys.contains(&f.key) {
            warnings.push(format!(
                "{}: present only in the frequency fit; excluded from simulation",
                f.key
            ));
        }
    }
    if models.is_empty() {
        return Err(Error::Validation(
            "no cell appears in both the severity and frequency fits".into(),
        ));
    }
    Ok((models, warnings))
}

/// Writes a sample to a binary file of little-endian 64-bit floats.
pub fn write_sample_binary(sample: &[f64], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for &x in sample {
        out.write_all(&x.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
