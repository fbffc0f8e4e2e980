//! Shared credibility machinery: the convex credibility combination, the
//! nonnegativity truncation of variance estimates, the two-variable fixed
//! point solver used by both estimation stacks, and the industry-level
//! aggregation of bank profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single observation with its volume weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedObservation {
    pub value: f64,
    /// Must be > 0.
    pub weight: f64,
}

/// Collective structural parameters of one estimation level.
///
/// `within_variance` carries the role-specific conditional-variance scale
/// (the squared profile for tail fitting, the profile itself for rate
/// fitting); the fixed point converges on `collective_mean` and
/// `between_variance` only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    pub collective_mean: f64,
    /// >= 0 where applicable.
    pub within_variance: f64,
    /// >= 0.
    pub between_variance: f64,
}

/// Iteration controls for [`solve_fixed_point`].
#[derive(Clone, Copy, Debug)]
pub struct FixedPointSettings {
    /// Scale-aware tolerance: convergence requires
    /// |Δmean| <= tolerance·(1+|mean|) and |Δτ²| <= tolerance·(1+τ²).
    pub tolerance: f64,
    pub max_iterations: u32,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        FixedPointSettings {
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

impl FixedPointSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Domain(format!(
                "solver tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of a fixed-point run.
#[derive(Clone, Copy, Debug)]
pub struct FixedPointOutcome {
    pub params: StructuralParams,
    pub iterations: u32,
    /// The between-variance update landed exactly on 0; callers switch to
    /// their degenerate volume-weighted branch in that case.
    pub hit_boundary: bool,
}

/// Convex combination `weight·individual + (1-weight)·collective`.
///
/// The result always lies in the closed interval spanned by the two inputs.
pub fn credibility_combine(individual: f64, collective: f64, weight: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Domain(format!(
            "credibility weight must lie in [0,1], got {weight}"
        )));
    }
    Ok(weight * individual + (1.0 - weight) * collective)
}

/// Clamps a variance estimate at zero.  The flag reports whether the clamp
/// fired; an estimate of exactly 0 counts as truncated, since zero
/// between-variance sends every credibility weight to the degenerate branch.
pub fn truncate_nonnegative(estimate: f64) -> (f64, bool) {
    if estimate <= 0.0 {
        (0.0, true)
    } else {
        (estimate, false)
    }
}

/// Iterates `update` from `start` until both the collective mean and the
/// between-variance are stable under the scale-aware tolerance, or gives up
/// after `max_iterations` with the last iterate attached to the error.
///
/// The update map is assumed deterministic; identical inputs produce
/// identical iterates.
pub fn solve_fixed_point<F>(
    update: F,
    start: StructuralParams,
    settings: &FixedPointSettings,
) -> Result<FixedPointOutcome>
where
    F: Fn(&StructuralParams) -> StructuralParams,
{
    settings.validate()?;
    let mut current = start;
    for iteration in 1..=settings.max_iterations {
        let next = update(&current);
        if next.between_variance <= 0.0 {
            return Ok(FixedPointOutcome {
                params: next,
                iterations: iteration,
                hit_boundary: true,
            });
        }
        let mean_ok = (next.collective_mean - current.collective_mean).abs()
            <= settings.tolerance * (1.0 + next.collective_mean.abs());
        let var_ok = (next.between_variance - current.between_variance).abs()
            <= settings.tolerance * (1.0 + next.between_variance);
        current = next;
        if mean_ok && var_ok {
            return Ok(FixedPointOutcome {
                params: current,
                iterations: iteration,
                hit_boundary: false,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iterations,
        last: current,
    })
}

/// Volume-weighted mean, folded left to right in input order.
///
/// Every degenerate fallback in the crate funnels through this one fold, so
/// equality checks against an independently recomputed fold are bitwise.
pub fn weighted_mean<I>(pairs: I) -> f64
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (weight, value) in pairs {
        numerator += weight * value;
        denominator += weight;
    }
    numerator / denominator
}

/// One bank's bottom-up summary entering the industry aggregation.
#[derive(Clone, Copy, Debug)]
pub struct BankSummary {
    /// Bottom-up bank profile.
    pub profile: f64,
    /// Bank between-cell variance estimate (0 when the bank fit truncated).
    pub between_variance: f64,
    /// Total credibility weight of the bank's cells (raw volume when the
    /// bank fit truncated).
    pub weight: f64,
}

/// Industry-level structural estimates shared by the severity and frequency
/// stacks; the two differ only in which quantities are substituted in.
#[derive(Clone, Debug)]
pub struct IndustryAggregation {
    pub collective: f64,
    pub collective_variance: f64,
    /// Per-bank credibility weights, in input order; all zero when truncated.
    pub bank_weights: Vec<f64>,
    /// Sum of bank weights.
    pub normalizer: f64,
    /// Unweighted mean of the bank between-variances.
    pub pooled_variance: f64,
    /// Sum of bank weights W_0 entering the balance constant.
    pub total_volume: f64,
    pub balance_constant: f64,
    /// Collective-variance estimate was clamped at 0; the collective is then
    /// the volume-weighted mean of bank profiles and all bank weights are 0.
    pub truncated: bool,
}

/// Estimates the collective profile and between-bank variance from bottom-up
/// bank summaries, then assigns each bank its credibility weight.
///
/// Requires at least two banks.  If the between-bank variance estimate
/// truncates at zero (or the weight layout degenerates), every bank weight is
/// zero and the collective is the weight-weighted mean of bank profiles.
pub fn aggregate_industry(banks: &[BankSummary]) -> Result<IndustryAggregation> {
    let m = banks.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "industry aggregation needs at least 2 banks, got {m}"
        )));
    }
    let m_f = m as f64;
    let pooled_variance = banks.iter().map(|b| b.between_variance).sum::<f64>() / m_f;
    let total_volume: f64 = banks.iter().map(|b| b.weight).sum();
    let grand_mean = banks.iter().map(|b| b.profile).sum::<f64>() / m_f;
    let balance_denominator: f64 = banks
        .iter()
        .map(|b| b.weight / total_volume * (1.0 - b.weight / total_volume))
        .sum();

    let fallback_collective =
        || weighted_mean(banks.iter().map(|b| (b.weight, b.profile)));

    // A single bank holding all the volume leaves the balance constant
    // undefined; treat as degenerate rather than dividing by zero.
    if balance_denominator <= 0.0 {
        return Ok(IndustryAggregation {
            collective: fallback_collective(),
            collective_variance: 0.0,
            bank_weights: vec![0.0; m],
            normalizer: 0.0,
            pooled_variance,
            total_volume,
            balance_constant: 0.0,
            truncated: true,
        });
    }

    let balance_constant = (m_f - 1.0) / m_f / balance_denominator;
    let dispersion: f64 = banks
        .iter()
        .map(|b| b.weight / total_volume * (b.profile - grand_mean).powi(2))
        .sum();
    let raw = balance_constant
        * (m_f / (m_f - 1.0) * dispersion - m_f * pooled_variance / total_volume);
    let (collective_variance, truncated) = truncate_nonnegative(raw);

    if truncated {
        return Ok(IndustryAggregation {
            collective: fallback_collective(),
            collective_variance: 0.0,
            bank_weights: vec![0.0; m],
            normalizer: 0.0,
            pooled_variance,
            total_volume,
            balance_constant,
            truncated: true,
        });
    }

    let bank_weights: Vec<f64> = banks
        .iter()
        .map(|b| b.weight / (b.weight + b.between_variance / collective_variance))
        .collect();
    let normalizer: f64 = bank_weights.iter().sum();
    let collective = bank_weights
        .iter()
        .zip(banks)
        .map(|(beta, b)| beta * b.profile)
        .sum::<f64>()
        / normalizer;

    Ok(IndustryAggregation {
        collective,
        collective_variance,
        bank_weights,
        normalizer,
        pooled_variance,
        total_volume,
        balance_constant,
        truncated: false,
    })
}
