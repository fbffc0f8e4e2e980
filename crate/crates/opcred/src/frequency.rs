//! Poisson frequency stack: per-cell arrival-rate MLEs from standardized
//! frequencies, bank-level credibility, and the two-level industry hierarchy.
//!
//! Annual counts above the threshold are Poisson with arrival rate
//! theta_j = nu_j * lambda_j, where nu_j is the cell's a priori frequency
//! scale and lambda_j the latent risk profile.  The hierarchy mirrors the
//! severity stack with volumes v_j = nu_j * K_j.

use rayon::prelude::*;

use crate::credibility::{
    aggregate_industry, credibility_combine, solve_fixed_point, weighted_mean, BankSummary,
    FixedPointSettings, StructuralParams,
};
use crate::domain::{CellKey, CountPanel};
use crate::error::{Error, Result};

/// Frequency estimates for one cell.  `credibility`/`arrival_rate` are the
/// bank-level tier; the `adjusted_*` fields are filled by the industry pass.
#[derive(Clone, Debug)]
pub struct FrequencyCellEstimate {
    pub key: CellKey,
    /// Number of observed years K_j.
    pub years: usize,
    pub total_count: u64,
    pub threshold: f64,
    /// A priori frequency scale nu_j.
    pub scale: f64,
    /// Credibility volume v_j = nu_j * K_j.
    pub volume: f64,
    /// Rate MLE, total_count / volume.
    pub mle: f64,
    /// Credibility weight gamma_j in [0,1]; 0 when the bank fit degenerated.
    pub weight: f64,
    /// Bank-tier credibility estimate of the cell profile.
    pub credibility: f64,
    /// Bank-tier arrival rate, scale * credibility.
    pub arrival_rate: f64,
    /// Industry-tier credibility estimate (same gamma_j, improved bank
    /// profile).
    pub adjusted_credibility: Option<f64>,
    pub adjusted_arrival_rate: Option<f64>,
}

impl FrequencyCellEstimate {
    /// Industry tier when present, bank tier otherwise.
    pub fn final_credibility(&self) -> f64 {
        self.adjusted_credibility.unwrap_or(self.credibility)
    }

    pub fn final_arrival_rate(&self) -> f64 {
        self.adjusted_arrival_rate.unwrap_or(self.arrival_rate)
    }
}

/// One bank's structural frequency estimates.
#[derive(Clone, Debug)]
pub struct FrequencyBankProfile {
    pub bank_id: String,
    /// Bank rate profile (bottom-up tier).
    pub profile: f64,
    /// Between-cell variance; 0 when the estimate truncated.
    pub between_variance: f64,
    /// Sum of cell credibility weights; the total volume when the fit
    /// degenerated.
    pub total_weight: f64,
    /// Total credibility volume nu_0 = sum of cell volumes.
    pub total_volume: f64,
    /// The between-variance estimate truncated at zero and the fallback
    /// volume-weighted profile was used.
    pub degenerate: bool,
    /// Iterations the structural solver took (1 on the direct fallback).
    pub iterations: u32,
    /// Bank credibility weight rho against the industry collective; set by
    /// the industry pass.
    pub bank_weight: Option<f64>,
    /// Industry-adjusted bank profile; set by the industry pass.
    pub adjusted_profile: Option<f64>,
}

impl FrequencyBankProfile {
    pub fn final_profile(&self) -> f64 {
        self.adjusted_profile.unwrap_or(self.profile)
    }
}

/// Result of fitting one bank: its profile plus all cell estimates in key
/// order.
#[derive(Clone, Debug)]
pub struct FrequencyBankFit {
    pub profile: FrequencyBankProfile,
    pub cells: Vec<FrequencyCellEstimate>,
}

/// Industry-level frequency parameters, estimated or injected a priori.
#[derive(Clone, Debug)]
pub struct FrequencyIndustryProfile {
    pub collective: f64,
    pub collective_variance: f64,
    /// Sum of bank weights A; None when injected.
    pub normalizer: Option<f64>,
    /// Unweighted mean of bank between-variances; None when injected.
    pub pooled_variance: Option<f64>,
    /// Sum of bank total weights W_0; None when injected.
    pub total_volume: Option<f64>,
    /// Balance constant c of the between-bank variance estimator; None when
    /// injected.
    pub balance_constant: Option<f64>,
    /// Between-bank variance estimate was clamped at 0.
    pub truncated: bool,
    /// Parameters supplied externally rather than estimated.
    pub injected: bool,
}

/// A bank left out of industry structural estimation (fewer than 2 cells);
/// its cells are fully shrunk to the collective.
#[derive(Clone, Debug)]
pub struct ExcludedBank {
    pub bank_id: String,
    pub reason: String,
    pub cells: Vec<FrequencyCellEstimate>,
}

/// Full two-level fit over an industry panel.
#[derive(Clone, Debug)]
pub struct FrequencyIndustryFit {
    pub industry: FrequencyIndustryProfile,
    pub banks: Vec<FrequencyBankFit>,
    pub excluded: Vec<ExcludedBank>,
}

/// Rate MLE from yearly counts: returns (mle, volume) with
/// mle = sum(counts) / (scale * K) and volume = scale * K.
pub fn poisson_mle(counts: &[u64], scale: f64) -> Result<(f64, f64)> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!(
            "frequency scale must be > 0, got {scale}"
        )));
    }
    if counts.is_empty() {
        return Err(Error::InsufficientData(
            "rate estimation needs at least 1 observed year".into(),
        ));
    }
    let volume = scale * counts.len() as f64;
    let total: u64 = counts.iter().sum();
    Ok((total as f64 / volume, volume))
}

/// Cell credibility weight gamma_j = v / (v + profile/between_variance).
///
/// Returns 0 for a zero between-cell variance (degenerate branch).  Note the
/// second ratio uses the variance, not the standard deviation.
pub fn frequency_weight(volume: f64, profile: f64, between_variance: f64) -> f64 {
    if !(between_variance > 0.0) {
        return 0.0;
    }
    volume / (volume + profile / between_variance)
}

struct CellPrep {
    key: CellKey,
    years: usize,
    total_count: u64,
    threshold: f64,
    scale: f64,
    volume: f64,
    mle: f64,
}

fn prep_cells(panel: &CountPanel) -> Result<Vec<CellPrep>> {
    let mut prep = Vec::with_capacity(panel.len());
    for (key, cell) in panel.cells() {
        let counts: Vec<u64> = cell.entries.iter().map(|&(_, c)| c).collect();
        let (mle, volume) = poisson_mle(&counts, cell.config.frequency_scale)?;
        prep.push(CellPrep {
            key: key.clone(),
            years: cell.years(),
            total_count: cell.total_count(),
            threshold: cell.config.threshold,
            scale: cell.config.frequency_scale,
            volume,
            mle,
        });
    }
    Ok(prep)
}

fn check_common_threshold(bank_id: &str, prep: &[CellPrep]) -> Result<()> {
    let mut distinct: Vec<f64> = Vec::new();
    for p in prep {
        if !distinct.contains(&p.threshold) {
            distinct.push(p.threshold);
        }
    }
    if distinct.len() > 1 {
        return Err(Error::Validation(format!(
            "bank {bank_id}: cells carry {} distinct thresholds; the frequency model assumes \
             one threshold per bank",
            distinct.len()
        )));
    }
    Ok(())
}

fn bank_fit_from_prep(
    bank_id: String,
    prep: Vec<CellPrep>,
    settings: &FixedPointSettings,
) -> Result<FrequencyBankFit> {
    if prep.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "bank {bank_id}: frequency credibility needs at least 2 cells, got {}",
            prep.len()
        )));
    }
    check_common_threshold(&bank_id, &prep)?;
    let j = prep.len() as f64;

    // Data-only constants of the structural equations.
    let total_volume: f64 = prep.iter().map(|p| p.volume).sum();
    let rate_mean = prep.iter().map(|p| p.mle).sum::<f64>() / j;
    let dispersion: f64 = prep
        .iter()
        .map(|p| p.volume / total_volume * (p.mle - rate_mean) * (p.mle - rate_mean))
        .sum();
    let t_statistic = j / (j - 1.0) * dispersion;
    let balance_denominator: f64 = prep
        .iter()
        .map(|p| p.volume / total_volume * (1.0 - p.volume / total_volume))
        .sum();

    let volume_weighted_profile = || weighted_mean(prep.iter().map(|p| (p.volume, p.mle)));

    let solved = if balance_denominator <= 0.0 {
        None
    } else {
        let balance_constant = j / (j - 1.0) / balance_denominator;
        let between_update =
            |mean: f64| balance_constant * (t_statistic - j * mean / total_volume);
        let start_mean = volume_weighted_profile();
        let start_between = between_update(start_mean);
        if start_between <= 0.0 {
            None
        } else {
            let update = |p: &StructuralParams| {
                let mean = weighted_mean(prep.iter().map(|c| {
                    (
                        frequency_weight(c.volume, p.collective_mean, p.between_variance),
                        c.mle,
                    )
                }));
                StructuralParams {
                    collective_mean: mean,
                    within_variance: mean,
                    between_variance: between_update(mean),
                }
            };
            let start = StructuralParams {
                collective_mean: start_mean,
                within_variance: start_mean,
                between_variance: start_between,
            };
            let outcome = solve_fixed_point(update, start, settings)?;
            if outcome.hit_boundary {
                None
            } else {
                Some(outcome)
            }
        }
    };

    let (profile_value, between_variance, total_weight, degenerate, iterations) = match &solved {
        Some(outcome) => {
            let params = &outcome.params;
            let total: f64 = prep
                .iter()
                .map(|p| {
                    frequency_weight(p.volume, params.collective_mean, params.between_variance)
                })
                .sum();
            (
                params.collective_mean,
                params.between_variance,
                total,
                false,
                outcome.iterations,
            )
        }
        None => {
            // Truncated between-variance: zero weights, profile falls back to
            // the volume-weighted mean and W to the total volume.
            (volume_weighted_profile(), 0.0, total_volume, true, 1)
        }
    };

    let cells = prep
        .into_iter()
        .map(|p| {
            let weight = frequency_weight(p.volume, profile_value, between_variance);
            let credibility = credibility_combine(p.mle, profile_value, weight)
                .expect("frequency weight lies in [0,1]");
            FrequencyCellEstimate {
                key: p.key,
                years: p.years,
                total_count: p.total_count,
                threshold: p.threshold,
                scale: p.scale,
                volume: p.volume,
                mle: p.mle,
                weight,
                credibility,
                arrival_rate: p.scale * credibility,
                adjusted_credibility: None,
                adjusted_arrival_rate: None,
            }
        })
        .collect();

    Ok(FrequencyBankFit {
        profile: FrequencyBankProfile {
            bank_id,
            profile: profile_value,
            between_variance,
            total_weight,
            total_volume,
            degenerate,
            iterations,
            bank_weight: None,
            adjusted_profile: None,
        },
        cells,
    })
}

/// Fits one bank's frequency hierarchy: per-cell rate MLEs, the structural
/// fixed point for (profile, between-variance), and per-cell credibility
/// estimates.
///
/// The panel must contain exactly one bank with at least two cells sharing
/// one threshold.  If the between-variance estimate truncates at zero, all
/// cell weights are zero and the profile is the volume-weighted mean of cell
/// MLEs, folded in cell-key order.
pub fn fit_bank_frequency(
    panel: &CountPanel,
    settings: &FixedPointSettings,
) -> Result<FrequencyBankFit> {
    settings.validate()?;
    let banks = panel.banks();
    match banks.len() {
        0 => Err(Error::InsufficientData("empty count panel".into())),
        1 => bank_fit_from_prep(banks.into_iter().next().unwrap(), prep_cells(panel)?, settings),
        n => Err(Error::Validation(format!(
            "bank-level frequency fit expects a single bank, got {n}"
        ))),
    }
}

/// Wraps externally supplied industry rate parameters so the top-down
/// adjustment can run on a single bank's fit.
pub fn industry_rate_injection(profile: f64, variance: f64) -> Result<FrequencyIndustryProfile> {
    if !(profile > 0.0 && profile.is_finite()) {
        return Err(Error::Domain(format!(
            "industry rate must be > 0, got {profile}"
        )));
    }
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::Domain(format!(
            "industry variance must be >= 0, got {variance}"
        )));
    }
    Ok(FrequencyIndustryProfile {
        collective: profile,
        collective_variance: variance,
        normalizer: None,
        pooled_variance: None,
        total_volume: None,
        balance_constant: None,
        truncated: false,
        injected: true,
    })
}

/// Top-down pass for one bank: bank weight rho against the collective, the
/// adjusted bank profile, and per-cell adjusted estimates with the same
/// gamma_j as the bottom-up fit.
///
/// A zero collective variance forces rho = 0.
pub fn apply_industry_frequency(fit: &mut FrequencyBankFit, industry: &FrequencyIndustryProfile) {
    let w = fit.profile.total_weight;
    let rho = if industry.collective_variance > 0.0 {
        w / (w + fit.profile.between_variance / industry.collective_variance)
    } else {
        0.0
    };
    let adjusted = credibility_combine(fit.profile.profile, industry.collective, rho)
        .expect("bank weight lies in [0,1]");
    fit.profile.bank_weight = Some(rho);
    fit.profile.adjusted_profile = Some(adjusted);
    for cell in &mut fit.cells {
        let credibility = credibility_combine(cell.mle, adjusted, cell.weight)
            .expect("cell weight lies in [0,1]");
        cell.adjusted_credibility = Some(credibility);
        cell.adjusted_arrival_rate = Some(cell.scale * credibility);
    }
}

/// Full two-level frequency fit over a multi-bank panel: per-bank bottom-up
/// fits (in parallel), industry aggregation, then the top-down adjustment.
///
/// Banks with fewer than two cells are excluded from structural estimation;
/// their cells are fully shrunk to the collective and listed separately.
pub fn fit_industry_frequency(
    panel: &CountPanel,
    settings: &FixedPointSettings,
) -> Result<FrequencyIndustryFit> {
    settings.validate()?;
    let bank_ids = panel.banks();
    if bank_ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "industry frequency fit needs at least 2 banks, got {}",
            bank_ids.len()
        )));
    }

    let preps = bank_ids
        .iter()
        .map(|bank| Ok((bank.clone(), prep_cells(&panel.restrict(bank))?)))
        .collect::<Result<Vec<_>>>()?;

    let fits: Vec<(String, Option<FrequencyBankFit>, Vec<CellPrep>)> = preps
        .into_par_iter()
        .map(|(bank, prep)| {
            if prep.len() < 2 {
                return Ok((bank, None, prep));
            }
            let fit = bank_fit_from_prep(bank.clone(), prep, settings)?;
            Ok((bank, Some(fit), Vec::new()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut included = Vec::new();
    let mut left_out = Vec::new();
    for (bank, fit, prep) in fits {
        match fit {
            Some(fit) => included.push(fit),
            None => left_out.push((bank, prep)),
        }
    }
    if included.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "industry frequency fit needs at least 2 banks with 2 cells each, got {}",
            included.len()
        )));
    }

    let summaries: Vec<BankSummary> = included
        .iter()
        .map(|fit| BankSummary {
            profile: fit.profile.profile,
            between_variance: fit.profile.between_variance,
            weight: fit.profile.total_weight,
        })
        .collect();
    let aggregation = aggregate_industry(&summaries)?;
    let industry = FrequencyIndustryProfile {
        collective: aggregation.collective,
        collective_variance: aggregation.collective_variance,
        normalizer: Some(aggregation.normalizer),
        pooled_variance: Some(aggregation.pooled_variance),
        total_volume: Some(aggregation.total_volume),
        balance_constant: Some(aggregation.balance_constant),
        truncated: aggregation.truncated,
        injected: false,
    };

    for fit in &mut included {
        apply_industry_frequency(fit, &industry);
    }

    let excluded = left_out
        .into_iter()
        .map(|(bank, prep)| {
            let count = prep.len();
            let cells = prep
                .into_iter()
                .map(|p| FrequencyCellEstimate {
                    key: p.key,
                    years: p.years,
                    total_count: p.total_count,
                    threshold: p.threshold,
                    scale: p.scale,
                    volume: p.volume,
                    mle: p.mle,
                    weight: 0.0,
                    credibility: industry.collective,
                    arrival_rate: p.scale * industry.collective,
                    adjusted_credibility: Some(industry.collective),
                    adjusted_arrival_rate: Some(p.scale * industry.collective),
                })
                .collect();
            ExcludedBank {
                bank_id: bank,
                reason: format!(
                    "{count} cells with count data (needs at least 2); cells shrunk fully to \
                     the industry collective"
                ),
                cells,
            }
        })
        .collect();

    Ok(FrequencyIndustryFit {
        industry,
        banks: included,
        excluded,
    })
}
