//! Expert-opinion calibration of the a priori scale constants: severity
//! scales from exceedance-probability opinions and frequency scales from
//! expected-count opinions.
//!
//! Scales are defined up to a common factor, so opinions pin down only the
//! relative differences between cells; the reference profile/rate fixes the
//! normalization.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::domain::{CellConfig, CellConfigSet, CellKey};
use crate::error::{Error, Result};

/// Expert opinion on severity: "the probability that a loss exceeds `level`
/// (given it exceeds the cell threshold) is `exceedance_probability`".
#[derive(Clone, Debug, PartialEq)]
pub struct SeverityOpinion {
    pub key: CellKey,
    /// Opinion level T, strictly above the cell threshold.
    pub level: f64,
    /// Exceedance probability in (0,1).
    pub exceedance_probability: f64,
}

/// Expert opinion on frequency: "the expected annual number of losses above
/// the threshold is `expected_count`".
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyOpinion {
    pub key: CellKey,
    /// Expected annual exceedances, > 0.
    pub expected_count: f64,
}

/// Severity scales a_j from exceedance opinions.
///
/// One opinion gives `a = -ln(q) / (profile * ln(T/L))` directly; several
/// opinions on one cell enter a least-squares fit in log-probability space
/// with the closed form `a = -sum(ln q_i * ln(T_i/L)) / (profile * sum(ln(T_i/L)^2))`.
pub fn calibrate_severity_scales(
    opinions: &[SeverityOpinion],
    configs: &CellConfigSet,
    reference_profile: f64,
) -> Result<BTreeMap<CellKey, f64>> {
    if !(reference_profile > 0.0 && reference_profile.is_finite()) {
        return Err(Error::Domain(format!(
            "reference profile must be > 0, got {reference_profile}"
        )));
    }
    let mut grouped: BTreeMap<CellKey, Vec<&SeverityOpinion>> = BTreeMap::new();
    for opinion in opinions {
        grouped.entry(opinion.key.clone()).or_default().push(opinion);
    }
    let mut scales = BTreeMap::new();
    for (key, group) in grouped {
        let config = configs
            .get(&key)
            .ok_or_else(|| Error::Config(format!("no cell config for {key}")))?;
        let threshold = config.threshold;
        for opinion in &group {
            if !(opinion.level > threshold && opinion.level.is_finite()) {
                return Err(Error::Domain(format!(
                    "{key}: opinion level {} must exceed the threshold {threshold}",
                    opinion.level
                )));
            }
            let q = opinion.exceedance_probability;
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Domain(format!(
                    "{key}: exceedance probability must lie in (0,1), got {q}"
                )));
            }
        }
        let scale = if group.len() == 1 {
            let opinion = group[0];
            -opinion.exceedance_probability.ln()
                / (reference_profile * (opinion.level / threshold).ln())
        } else {
            let mut cross = 0.0;
            let mut squares = 0.0;
            for opinion in &group {
                let log_level = (opinion.level / threshold).ln();
                cross += opinion.exceedance_probability.ln() * log_level;
                squares += log_level * log_level;
            }
            -cross / (reference_profile * squares)
        };
        scales.insert(key, scale);
    }
    Ok(scales)
}

/// Frequency scales nu_j from expected-count opinions: nu = n / rate.
/// Multiple opinions on one cell are pooled by averaging the counts.
pub fn calibrate_frequency_scales(
    opinions: &[FrequencyOpinion],
    configs: &CellConfigSet,
    reference_rate: f64,
) -> Result<BTreeMap<CellKey, f64>> {
    if !(reference_rate > 0.0 && reference_rate.is_finite()) {
        return Err(Error::Domain(format!(
            "reference rate must be > 0, got {reference_rate}"
        )));
    }
    let mut grouped: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for opinion in opinions {
        if configs.get(&opinion.key).is_none() {
            return Err(Error::Config(format!("no cell config for {}", opinion.key)));
        }
        if !(opinion.expected_count > 0.0 && opinion.expected_count.is_finite()) {
            return Err(Error::Domain(format!(
                "{}: expected count must be > 0, got {}",
                opinion.key, opinion.expected_count
            )));
        }
        grouped
            .entry(opinion.key.clone())
            .or_default()
            .push(opinion.expected_count);
    }
    Ok(grouped
        .into_iter()
        .map(|(key, counts)| {
            let mean = counts.iter().sum::<f64>() / counts.len() as f64;
            (key, mean / reference_rate)
        })
        .collect())
}

/// Merges calibrated scales into a config set, leaving cells without
/// opinions untouched.  Returns configs in key order.
pub fn updated_configs(
    configs: &CellConfigSet,
    severity_scales: &BTreeMap<CellKey, f64>,
    frequency_scales: &BTreeMap<CellKey, f64>,
) -> Vec<CellConfig> {
    configs
        .iter()
        .map(|(key, config)| {
            let mut out = config.clone();
            if let Some(&scale) = severity_scales.get(key) {
                out.severity_scale = scale;
            }
            if let Some(&scale) = frequency_scales.get(key) {
                out.frequency_scale = scale;
            }
            out
        })
        .collect()
}

#[derive(Deserialize)]
struct OpinionRow {
    bank_id: String,
    cell_id: String,
    kind: String,
    level: Option<f64>,
    probability: Option<f64>,
    expected_count: Option<f64>,
}

/// Loads an opinions JSON file: an array of rows tagged `kind` =
/// "severity" (with `level`, `probability`) or "frequency" (with
/// `expected_count`).
pub fn load_opinions(path: &Path) -> Result<(Vec<SeverityOpinion>, Vec<FrequencyOpinion>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<OpinionRow> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let mut severity = Vec::new();
    let mut frequency = Vec::new();
    for row in rows {
        let key = CellKey::new(row.bank_id, row.cell_id);
        match row.kind.as_str() {
            "severity" => {
                let level = row.level.ok_or_else(|| {
                    Error::Validation(format!("{key}: severity opinion needs a level"))
                })?;
                let probability = row.probability.ok_or_else(|| {
                    Error::Validation(format!("{key}: severity opinion needs a probability"))
                })?;
                severity.push(SeverityOpinion {
                    key,
                    level,
                    exceedance_probability: probability,
                });
            }
            "frequency" => {
                let expected_count = row.expected_count.ok_or_else(|| {
                    Error::Validation(format!("{key}: frequency opinion needs an expected_count"))
                })?;
                frequency.push(FrequencyOpinion { key, expected_count });
            }
            other => {
                return Err(Error::Validation(format!(
                    "{key}: unknown opinion kind {other:?} (expected \"severity\" or \
                     \"frequency\")"
                )));
            }
        }
    }
    Ok((severity, frequency))
}
