//! Pareto severity stack: per-cell tail-parameter MLEs, bank-level
//! credibility, and the two-level industry hierarchy.
//!
//! Losses above a cell's threshold L are modelled Pareto with tail parameter
//! xi_j = a_j * theta_j, where a_j is the cell's a priori severity scale and
//! theta_j the latent risk profile.  Cell profiles are shrunk toward the bank
//! profile, bank profiles toward the industry collective.

use rayon::prelude::*;

use crate::credibility::{
    aggregate_industry, credibility_combine, solve_fixed_point, weighted_mean, BankSummary,
    FixedPointSettings, StructuralParams,
};
use crate::domain::{CellKey, LossPanel};
use crate::error::{Error, Result};

/// Severity estimates for one cell.  `credibility`/`tail_parameter` are the
/// bank-level tier; the `adjusted_*` fields are filled by the industry pass.
#[derive(Clone, Debug)]
pub struct SeverityCellEstimate {
    pub key: CellKey,
    /// Number of losses K_j.
    pub observations: usize,
    pub threshold: f64,
    /// A priori severity scale a_j.
    pub scale: f64,
    /// Biased profile MLE; None when the cell has fewer than 2 losses.
    pub raw_mle: Option<f64>,
    /// Unbiased profile estimate, ((K-1)/K) * raw_mle.
    pub mle: Option<f64>,
    /// Credibility weight alpha_j in [0,1); 0 when K < 3 or the bank fit
    /// degenerated.
    pub weight: f64,
    /// Bank-tier credibility estimate of the cell profile.
    pub credibility: f64,
    /// Bank-tier tail parameter, scale * credibility.
    pub tail_parameter: f64,
    /// Industry-tier credibility estimate (same alpha_j, improved bank
    /// profile).
    pub adjusted_credibility: Option<f64>,
    pub adjusted_tail_parameter: Option<f64>,
}

impl SeverityCellEstimate {
    /// Industry tier when present, bank tier otherwise.
    pub fn final_credibility(&self) -> f64 {
        self.adjusted_credibility.unwrap_or(self.credibility)
    }

    pub fn final_tail_parameter(&self) -> f64 {
        self.adjusted_tail_parameter.unwrap_or(self.tail_parameter)
    }
}

/// One bank's structural severity estimates.
#[derive(Clone, Debug)]
pub struct SeverityBankProfile {
    pub bank_id: String,
    /// Bank risk profile (bottom-up tier).
    pub profile: f64,
    /// Between-cell variance; 0 when the estimate truncated.
    pub between_variance: f64,
    /// Sum of cell credibility weights; the raw volume sum (K_j - 2) when the
    /// fit degenerated.
    pub total_weight: f64,
    /// The between-variance estimate truncated at zero and the fallback
    /// volume-weighted profile was used.
    pub degenerate: bool,
    /// Iterations the structural solver took (1 on the direct fallback).
    pub iterations: u32,
    /// Bank credibility weight beta against the industry collective; set by
    /// the industry pass.
    pub bank_weight: Option<f64>,
    /// Industry-adjusted bank profile; set by the industry pass.
    pub adjusted_profile: Option<f64>,
}

impl SeverityBankProfile {
    pub fn final_profile(&self) -> f64 {
        self.adjusted_profile.unwrap_or(self.profile)
    }
}

/// Result of fitting one bank: its profile plus all cell estimates in key
/// order.
#[derive(Clone, Debug)]
pub struct SeverityBankFit {
    pub profile: SeverityBankProfile,
    pub cells: Vec<SeverityCellEstimate>,
}

/// Industry-level severity parameters, either estimated from bank fits or
/// injected a priori (e.g. regulator-published).
#[derive(Clone, Debug)]
pub struct SeverityIndustryProfile {
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

/// A bank left out of industry structural estimation (fewer than 2 qualified
/// cells); its cells are fully shrunk to the collective.
#[derive(Clone, Debug)]
pub struct ExcludedBank {
    pub bank_id: String,
    pub reason: String,
    pub cells: Vec<SeverityCellEstimate>,
}

/// Full two-level fit over an industry panel.
#[derive(Clone, Debug)]
pub struct SeverityIndustryFit {
    pub industry: SeverityIndustryProfile,
    pub banks: Vec<SeverityBankFit>,
    pub excluded: Vec<ExcludedBank>,
}

/// Pareto tail MLE above a threshold: returns the biased estimator
/// `[ (a/K) sum ln(x/L) ]^{-1}` and its unbiased correction `(K-1)/K` times
/// that.  Needs K >= 2 and at least one loss strictly above the threshold.
pub fn pareto_mle(losses: &[f64], threshold: f64, scale: f64) -> Result<(f64, f64)> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Domain(format!(
            "threshold must be > 0, got {threshold}"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!(
            "severity scale must be > 0, got {scale}"
        )));
    }
    let k = losses.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!(
            "tail estimation needs at least 2 losses, got {k}"
        )));
    }
    let mut log_sum = 0.0;
    for &x in losses {
        if !(x >= threshold) {
            return Err(Error::Domain(format!(
                "loss {x} below threshold {threshold}"
            )));
        }
        log_sum += (x / threshold).ln();
    }
    if log_sum <= 0.0 {
        return Err(Error::Domain(
            "all losses sit exactly at the threshold; tail estimator diverges".into(),
        ));
    }
    let k_f = k as f64;
    let raw = (scale / k_f * log_sum).recip();
    let mle = raw * (k_f - 1.0) / k_f;
    Ok((raw, mle))
}

/// Cell credibility weight alpha_j = (K-2) / (K-1 + (profile/between_sd)^2).
///
/// Returns 0 for K < 3 (conditional variance of the MLE is undefined) and for
/// a zero between-cell standard deviation (degenerate branch).
pub fn severity_weight(observations: usize, profile: f64, between_sd: f64) -> f64 {
    if observations < 3 || !(between_sd > 0.0) {
        return 0.0;
    }
    let k = observations as f64;
    let ratio = profile / between_sd;
    (k - 2.0) / (k - 1.0 + ratio * ratio)
}

// Per-cell inputs shared by the bank fit and the excluded-bank path.
struct CellPrep {
    key: CellKey,
    observations: usize,
    threshold: f64,
    scale: f64,
    raw_mle: Option<f64>,
    mle: Option<f64>,
}

fn prep_cells(panel: &LossPanel) -> Result<Vec<CellPrep>> {
    let mut prep = Vec::with_capacity(panel.len());
    for (key, cell) in panel.cells() {
        let observations = cell.amounts.len();
        let (raw_mle, mle) = if observations >= 2 {
            let (raw, unbiased) = pareto_mle(
                &cell.amounts,
                cell.config.threshold,
                cell.config.severity_scale,
            )?;
            (Some(raw), Some(unbiased))
        } else {
            (None, None)
        };
        prep.push(CellPrep {
            key: key.clone(),
            observations,
            threshold: cell.config.threshold,
            scale: cell.config.severity_scale,
            raw_mle,
            mle,
        });
    }
    Ok(prep)
}

// Qualified cells (K >= 3) as (observations, unbiased MLE), key order.
fn qualified(prep: &[CellPrep]) -> Vec<(usize, f64)> {
    prep.iter()
        .filter(|p| p.observations >= 3)
        .map(|p| (p.observations, p.mle.expect("K >= 3 implies an MLE")))
        .collect()
}

fn bank_fit_from_prep(
    bank_id: String,
    prep: Vec<CellPrep>,
    settings: &FixedPointSettings,
) -> Result<SeverityBankFit> {
    let cells = qualified(&prep);
    if cells.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "bank {bank_id}: {} cells qualify for severity credibility (needs at least 2)",
            cells.len()
        )));
    }
    let j = cells.len() as f64;

    // Start from the raw-volume weighting w_j = K_j - 2.
    let start_mean = weighted_mean(cells.iter().map(|&(k, v)| ((k - 2) as f64, v)));
    let start_between = cells
        .iter()
        .map(|&(k, v)| (k - 2) as f64 * (v - start_mean) * (v - start_mean))
        .sum::<f64>()
        / (j - 1.0);

    let solved = if start_between <= 0.0 {
        None
    } else {
        let update = |p: &StructuralParams| {
            let sd = p.between_variance.sqrt();
            let weights: Vec<f64> = cells
                .iter()
                .map(|&(k, _)| severity_weight(k, p.collective_mean, sd))
                .collect();
            let mean = weighted_mean(
                weights
                    .iter()
                    .copied()
                    .zip(cells.iter().map(|&(_, v)| v)),
            );
            let between = weights
                .iter()
                .zip(&cells)
                .map(|(&a, &(_, v))| a * (v - mean) * (v - mean))
                .sum::<f64>()
                / (j - 1.0);
            StructuralParams {
                collective_mean: mean,
                within_variance: mean * mean,
                between_variance: between,
            }
        };
        let start = StructuralParams {
            collective_mean: start_mean,
            within_variance: start_mean * start_mean,
            between_variance: start_between,
        };
        let outcome = solve_fixed_point(update, start, settings)?;
        if outcome.hit_boundary {
            None
        } else {
            Some(outcome)
        }
    };

    let (profile_value, between_variance, total_weight, degenerate, iterations) = match &solved {
        Some(outcome) => {
            let params = &outcome.params;
            let sd = params.between_variance.sqrt();
            let total: f64 = cells
                .iter()
                .map(|&(k, _)| severity_weight(k, params.collective_mean, sd))
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
            // the (K-2)-weighted mean and W to the raw volume sum.
            let profile = weighted_mean(cells.iter().map(|&(k, v)| ((k - 2) as f64, v)));
            let total: f64 = cells.iter().map(|&(k, _)| (k - 2) as f64).sum();
            (profile, 0.0, total, true, 1)
        }
    };

    let between_sd = between_variance.sqrt();
    let cell_estimates = prep
        .into_iter()
        .map(|p| {
            let weight = severity_weight(p.observations, profile_value, between_sd);
            let individual = p.mle.unwrap_or(profile_value);
            let credibility = credibility_combine(individual, profile_value, weight)
                .expect("severity weight lies in [0,1)");
            SeverityCellEstimate {
                key: p.key,
                observations: p.observations,
                threshold: p.threshold,
                scale: p.scale,
                raw_mle: p.raw_mle,
                mle: p.mle,
                weight,
                credibility,
                tail_parameter: p.scale * credibility,
                adjusted_credibility: None,
                adjusted_tail_parameter: None,
            }
        })
        .collect();

    Ok(SeverityBankFit {
        profile: SeverityBankProfile {
            bank_id,
            profile: profile_value,
            between_variance,
            total_weight,
            degenerate,
            iterations,
            bank_weight: None,
            adjusted_profile: None,
        },
        cells: cell_estimates,
    })
}

/// Fits one bank's severity hierarchy: per-cell MLEs, the structural fixed
/// point for (profile, between-variance), and per-cell credibility estimates.
///
/// The panel must contain exactly one bank with at least two qualified cells
/// (K >= 3).  If the between-variance estimate truncates at zero, all cell
/// weights are zero and the profile is the (K-2)-weighted mean of cell MLEs,
/// folded in cell-key order.
pub fn fit_bank_severity(
    panel: &LossPanel,
    settings: &FixedPointSettings,
) -> Result<SeverityBankFit> {
    settings.validate()?;
    let banks = panel.banks();
    match banks.len() {
        0 => Err(Error::InsufficientData("empty loss panel".into())),
        1 => bank_fit_from_prep(banks.into_iter().next().unwrap(), prep_cells(panel)?, settings),
        n => Err(Error::Validation(format!(
            "bank-level severity fit expects a single bank, got {n}"
        ))),
    }
}

/// Wraps externally supplied industry parameters (e.g. regulator-published)
/// so the top-down adjustment can run on a single bank's fit.
pub fn industry_profile_injection(profile: f64, variance: f64) -> Result<SeverityIndustryProfile> {
    if !(profile > 0.0 && profile.is_finite()) {
        return Err(Error::Domain(format!(
            "industry profile must be > 0, got {profile}"
        )));
    }
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::Domain(format!(
            "industry variance must be >= 0, got {variance}"
        )));
    }
    Ok(SeverityIndustryProfile {
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

/// Top-down pass for one bank: computes the bank weight beta against the
/// industry collective, the adjusted bank profile, and per-cell adjusted
/// estimates using the same cell weights as the bottom-up fit.
///
/// A zero collective variance forces beta = 0 (full shrinkage of the bank
/// profile to the collective).
pub fn apply_industry_severity(fit: &mut SeverityBankFit, industry: &SeverityIndustryProfile) {
    let w = fit.profile.total_weight;
    let beta = if industry.collective_variance > 0.0 {
        w / (w + fit.profile.between_variance / industry.collective_variance)
    } else {
        0.0
    };
    let adjusted = credibility_combine(fit.profile.profile, industry.collective, beta)
        .expect("bank weight lies in [0,1]");
    fit.profile.bank_weight = Some(beta);
    fit.profile.adjusted_profile = Some(adjusted);
    for cell in &mut fit.cells {
        let individual = cell.mle.unwrap_or(adjusted);
        let credibility = credibility_combine(individual, adjusted, cell.weight)
            .expect("cell weight lies in [0,1)");
        cell.adjusted_credibility = Some(credibility);
        cell.adjusted_tail_parameter = Some(cell.scale * credibility);
    }
}

/// Full two-level severity fit over a multi-bank panel: per-bank bottom-up
/// fits (in parallel), industry aggregation of (profile, between-variance,
/// weight), then the top-down adjustment of every included bank.
///
/// Banks with fewer than two qualified cells are excluded from structural
/// estimation; their cells are fully shrunk to the collective and listed
/// separately.  At least two included banks are required.
pub fn fit_industry_severity(
    panel: &LossPanel,
    settings: &FixedPointSettings,
) -> Result<SeverityIndustryFit> {
    settings.validate()?;
    let bank_ids = panel.banks();
    if bank_ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "industry severity fit needs at least 2 banks, got {}",
            bank_ids.len()
        )));
    }

    let preps = bank_ids
        .iter()
        .map(|bank| Ok((bank.clone(), prep_cells(&panel.restrict(bank))?)))
        .collect::<Result<Vec<_>>>()?;

    let fits: Vec<(String, Option<SeverityBankFit>, Vec<CellPrep>)> = preps
        .into_par_iter()
        .map(|(bank, prep)| {
            if qualified(&prep).len() < 2 {
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
            "industry severity fit needs at least 2 banks with 2 qualified cells each, got {}",
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
    let industry = SeverityIndustryProfile {
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
        apply_industry_severity(fit, &industry);
    }

    let excluded = left_out
        .into_iter()
        .map(|(bank, prep)| {
            let qualified_count = qualified(&prep).len();
            let cells = prep
                .into_iter()
                .map(|p| SeverityCellEstimate {
                    key: p.key,
                    observations: p.observations,
                    threshold: p.threshold,
                    scale: p.scale,
                    raw_mle: p.raw_mle,
                    mle: p.mle,
                    weight: 0.0,
                    credibility: industry.collective,
                    tail_parameter: p.scale * industry.collective,
                    adjusted_credibility: Some(industry.collective),
                    adjusted_tail_parameter: Some(p.scale * industry.collective),
                })
                .collect();
            ExcludedBank {
                bank_id: bank,
                reason: format!(
                    "{qualified_count} cells qualify for severity credibility (needs at least 2); \
                     cells shrunk fully to the industry collective"
                ),
                cells,
            }
        })
        .collect();

    Ok(SeverityIndustryFit {
        industry,
        banks: included,
        excluded,
    })
}
