//! Report assembly: serializable views of fit and simulation results plus
//! fixed-precision text rendering.
//!
//! JSON reports carry full floating precision and embed a [`RunManifest`];
//! they contain no timestamps, so identical runs are byte-identical.  Text
//! reports round to 3 decimals and show all estimation tiers side by side.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capital::{CapitalResult, CellCapital, SampleSummary};
use crate::credibility::FixedPointSettings;
use crate::error::{Error, Result};
use crate::frequency::{FrequencyBankFit, FrequencyIndustryFit, FrequencyIndustryProfile};
use crate::severity::{SeverityBankFit, SeverityIndustryFit, SeverityIndustryProfile};

/// Provenance header embedded in every report: what ran, on which inputs,
/// with which settings.  Deliberately excludes timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub inputs: Vec<String>,
    pub tolerance: f64,
    pub max_iterations: u32,
    pub seed: Option<u64>,
    pub flags: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        let defaults = FixedPointSettings::default();
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            inputs: Vec::new(),
            tolerance: defaults.tolerance,
            max_iterations: defaults.max_iterations,
            seed: None,
            flags: BTreeMap::new(),
        }
    }
}

/// Industry tier of a report; shared by severity and frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndustryReport {
    pub collective: f64,
    pub collective_variance: f64,
    pub normalizer: Option<f64>,
    pub pooled_variance: Option<f64>,
    pub total_volume: Option<f64>,
    pub balance_constant: Option<f64>,
    pub truncated: bool,
    pub injected: bool,
}

impl From<&SeverityIndustryProfile> for IndustryReport {
    fn from(p: &SeverityIndustryProfile) -> Self {
        IndustryReport {
            collective: p.collective,
            collective_variance: p.collective_variance,
            normalizer: p.normalizer,
            pooled_variance: p.pooled_variance,
            total_volume: p.total_volume,
            balance_constant: p.balance_constant,
            truncated: p.truncated,
            injected: p.injected,
        }
    }
}

impl From<&FrequencyIndustryProfile> for IndustryReport {
    fn from(p: &FrequencyIndustryProfile) -> Self {
        IndustryReport {
            collective: p.collective,
            collective_variance: p.collective_variance,
            normalizer: p.normalizer,
            pooled_variance: p.pooled_variance,
            total_volume: p.total_volume,
            balance_constant: p.balance_constant,
            truncated: p.truncated,
            injected: p.injected,
        }
    }
}

/// One bank row.  `profile` is null for banks excluded from structural
/// estimation; their cells shrink fully to the collective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankReport {
    pub bank_id: String,
    pub profile: Option<f64>,
    pub between_variance: Option<f64>,
    pub total_weight: Option<f64>,
    /// Frequency fits only: total credibility volume.
    pub total_volume: Option<f64>,
    pub degenerate: Option<bool>,
    pub iterations: Option<u32>,
    /// Credibility weight of the bank against the industry collective.
    pub bank_weight: Option<f64>,
    pub adjusted_profile: Option<f64>,
    pub excluded: bool,
    pub note: Option<String>,
}

/// One severity cell row.  `credibility`/`tail_parameter` hold the final
/// tier (industry-adjusted when that pass ran, bank-level otherwise); the
/// per-tier columns sit alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeverityCellReport {
    pub bank_id: String,
    pub cell_id: String,
    pub observations: usize,
    pub threshold: f64,
    pub scale: f64,
    pub mle: Option<f64>,
    pub weight: f64,
    pub bank_credibility: f64,
    pub bank_tail_parameter: f64,
    pub industry_credibility: Option<f64>,
    pub industry_tail_parameter: Option<f64>,
    pub credibility: f64,
    pub tail_parameter: f64,
}

/// One frequency cell row; same tier layout as severity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCellReport {
    pub bank_id: String,
    pub cell_id: String,
    pub years: usize,
    pub total_count: u64,
    pub threshold: f64,
    pub scale: f64,
    pub volume: f64,
    pub mle: f64,
    pub weight: f64,
    pub bank_credibility: f64,
    pub bank_arrival_rate: f64,
    pub industry_credibility: Option<f64>,
    pub industry_arrival_rate: Option<f64>,
    pub credibility: f64,
    pub arrival_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeverityReport {
    pub manifest: RunManifest,
    pub industry: Option<IndustryReport>,
    pub banks: Vec<BankReport>,
    pub cells: Vec<SeverityCellReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub manifest: RunManifest,
    pub industry: Option<IndustryReport>,
    pub banks: Vec<BankReport>,
    pub cells: Vec<FrequencyCellReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapitalReport {
    pub manifest: RunManifest,
    pub paths: u64,
    pub seed: u64,
    pub cells: Vec<CellCapital>,
    pub bank: SampleSummary,
    pub infinite_mean: bool,
    pub warnings: Vec<String>,
}

fn severity_bank_row(fit: &SeverityBankFit) -> BankReport {
    let p = &fit.profile;
    BankReport {
        bank_id: p.bank_id.clone(),
        profile: Some(p.profile),
        between_variance: Some(p.between_variance),
        total_weight: Some(p.total_weight),
        total_volume: None,
        degenerate: Some(p.degenerate),
        iterations: Some(p.iterations),
        bank_weight: p.bank_weight,
        adjusted_profile: p.adjusted_profile,
        excluded: false,
        note: None,
    }
}

fn severity_cell_rows(fit: &SeverityBankFit, out: &mut Vec<SeverityCellReport>) {
    for cell in &fit.cells {
        out.push(SeverityCellReport {
            bank_id: cell.key.bank_id.clone(),
            cell_id: cell.key.cell_id.clone(),
            observations: cell.observations,
            threshold: cell.threshold,
            scale: cell.scale,
            mle: cell.mle,
            weight: cell.weight,
            bank_credibility: cell.credibility,
            bank_tail_parameter: cell.tail_parameter,
            industry_credibility: cell.adjusted_credibility,
            industry_tail_parameter: cell.adjusted_tail_parameter,
            credibility: cell.final_credibility(),
            tail_parameter: cell.final_tail_parameter(),
        });
    }
}

impl SeverityReport {
    /// Single-bank report; `industry` carries injected parameters when the
    /// top-down pass ran against them.
    pub fn from_bank(
        manifest: RunManifest,
        fit: &SeverityBankFit,
        industry: Option<&SeverityIndustryProfile>,
    ) -> Self {
        let mut cells = Vec::new();
        severity_cell_rows(fit, &mut cells);
        SeverityReport {
            manifest,
            industry: industry.map(IndustryReport::from),
            banks: vec![severity_bank_row(fit)],
            cells,
        }
    }

    /// Full two-level report: every included bank, every excluded bank
    /// (profile null), and all cells sorted by (bank, cell).
    pub fn from_industry(manifest: RunManifest, fit: &SeverityIndustryFit) -> Self {
        let mut banks: Vec<BankReport> = fit.banks.iter().map(severity_bank_row).collect();
        let mut cells = Vec::new();
        for bank in &fit.banks {
            severity_cell_rows(bank, &mut cells);
        }
        for excluded in &fit.excluded {
            banks.push(BankReport {
                bank_id: excluded.bank_id.clone(),
                profile: None,
                between_variance: None,
                total_weight: None,
                total_volume: None,
                degenerate: None,
                iterations: None,
                bank_weight: Some(0.0),
                adjusted_profile: Some(fit.industry.collective),
                excluded: true,
                note: Some(excluded.reason.clone()),
            });
            for cell in &excluded.cells {
                cells.push(SeverityCellReport {
                    bank_id: cell.key.bank_id.clone(),
                    cell_id: cell.key.cell_id.clone(),
                    observations: cell.observations,
                    threshold: cell.threshold,
                    scale: cell.scale,
                    mle: cell.mle,
                    weight: cell.weight,
                    bank_credibility: cell.credibility,
                    bank_tail_parameter: cell.tail_parameter,
                    industry_credibility: cell.adjusted_credibility,
                    industry_tail_parameter: cell.adjusted_tail_parameter,
                    credibility: cell.final_credibility(),
                    tail_parameter: cell.final_tail_parameter(),
                });
            }
        }
        banks.sort_by(|a, b| a.bank_id.cmp(&b.bank_id));
        cells.sort_by(|a, b| (&a.bank_id, &a.cell_id).cmp(&(&b.bank_id, &b.cell_id)));
        SeverityReport {
            manifest,
            industry: Some(IndustryReport::from(&fit.industry)),
            banks,
            cells,
        }
    }
}

fn frequency_bank_row(fit: &FrequencyBankFit) -> BankReport {
    let p = &fit.profile;
    BankReport {
        bank_id: p.bank_id.clone(),
        profile: Some(p.profile),
        between_variance: Some(p.between_variance),
        total_weight: Some(p.total_weight),
        total_volume: Some(p.total_volume),
        degenerate: Some(p.degenerate),
        iterations: Some(p.iterations),
        bank_weight: p.bank_weight,
        adjusted_profile: p.adjusted_profile,
        excluded: false,
        note: None,
    }
}

fn frequency_cell_rows(fit: &FrequencyBankFit, out: &mut Vec<FrequencyCellReport>) {
    for cell in &fit.cells {
        out.push(FrequencyCellReport {
            bank_id: cell.key.bank_id.clone(),
            cell_id: cell.key.cell_id.clone(),
            years: cell.years,
            total_count: cell.total_count,
            threshold: cell.threshold,
            scale: cell.scale,
            volume: cell.volume,
            mle: cell.mle,
            weight: cell.weight,
            bank_credibility: cell.credibility,
            bank_arrival_rate: cell.arrival_rate,
            industry_credibility: cell.adjusted_credibility,
            industry_arrival_rate: cell.adjusted_arrival_rate,
            credibility: cell.final_credibility(),
            arrival_rate: cell.final_arrival_rate(),
        });
    }
}

impl FrequencyReport {
    pub fn from_bank(
        manifest: RunManifest,
        fit: &FrequencyBankFit,
        industry: Option<&FrequencyIndustryProfile>,
    ) -> Self {
        let mut cells = Vec::new();
        frequency_cell_rows(fit, &mut cells);
        FrequencyReport {
            manifest,
            industry: industry.map(IndustryReport::from),
            banks: vec![frequency_bank_row(fit)],
            cells,
        }
    }

    pub fn from_industry(manifest: RunManifest, fit: &FrequencyIndustryFit) -> Self {
        let mut banks: Vec<BankReport> = fit.banks.iter().map(frequency_bank_row).collect();
        let mut cells = Vec::new();
        for bank in &fit.banks {
            frequency_cell_rows(bank, &mut cells);
        }
        for excluded in &fit.excluded {
            banks.push(BankReport {
                bank_id: excluded.bank_id.clone(),
                profile: None,
                between_variance: None,
                total_weight: None,
                total_volume: None,
                degenerate: None,
                iterations: None,
                bank_weight: Some(0.0),
                adjusted_profile: Some(fit.industry.collective),
                excluded: true,
                note: Some(excluded.reason.clone()),
            });
            for cell in &excluded.cells {
                cells.push(FrequencyCellReport {
                    bank_id: cell.key.bank_id.clone(),
                    cell_id: cell.key.cell_id.clone(),
                    years: cell.years,
                    total_count: cell.total_count,
                    threshold: cell.threshold,
                    scale: cell.scale,
                    volume: cell.volume,
                    mle: cell.mle,
                    weight: cell.weight,
                    bank_credibility: cell.credibility,
                    bank_arrival_rate: cell.arrival_rate,
                    industry_credibility: cell.adjusted_credibility,
                    industry_arrival_rate: cell.adjusted_arrival_rate,
                    credibility: cell.final_credibility(),
                    arrival_rate: cell.final_arrival_rate(),
                });
            }
        }
        banks.sort_by(|a, b| a.bank_id.cmp(&b.bank_id));
        cells.sort_by(|a, b| (&a.bank_id, &a.cell_id).cmp(&(&b.bank_id, &b.cell_id)));
        FrequencyReport {
            manifest,
            industry: Some(IndustryReport::from(&fit.industry)),
            banks,
            cells,
        }
    }
}

impl CapitalReport {
    pub fn new(manifest: RunManifest, result: &CapitalResult) -> Self {
        CapitalReport {
            manifest,
            paths: result.paths,
            seed: result.seed,
            cells: result.cells.clone(),
            bank: result.bank.clone(),
            infinite_mean: result.infinite_mean,
            warnings: result.warnings.clone(),
        }
    }
}

/// Writes pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("report serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt3(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:10.3}"),
        None => format!("{:>10}", "-"),
    }
}

fn header(out: &mut String, manifest: &RunManifest, title: &str) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "tool version {}   command {}",
        manifest.tool_version, manifest.command
    );
    if !manifest.inputs.is_empty() {
        let _ = writeln!(out, "inputs: {}", manifest.inputs.join(", "));
    }
    let _ = writeln!(out);
}

fn industry_section(out: &mut String, industry: &IndustryReport, variance_label: &str) {
    let _ = writeln!(out, "industry");
    let _ = writeln!(out, "  collective        {:10.3}", industry.collective);
    let _ = writeln!(
        out,
        "  {variance_label}  {:10.3}",
        industry.collective_variance
    );
    if let Some(a) = industry.normalizer {
        let _ = writeln!(out, "  weight sum        {a:10.3}");
    }
    if industry.truncated {
        let _ = writeln!(out, "  note: between-bank variance truncated at zero");
    }
    if industry.injected {
        let _ = writeln!(out, "  note: parameters injected, not estimated");
    }
    let _ = writeln!(out);
}

/// Renders a severity report as fixed-width text, 3 decimals.
pub fn render_severity_text(report: &SeverityReport) -> String {
    let mut out = String::new();
    header(&mut out, &report.manifest, "severity credibility fit");
    if let Some(industry) = &report.industry {
        industry_section(&mut out, industry, "profile variance");
    }
    for bank in &report.banks {
        let _ = writeln!(
            &mut out,
            "bank {}  profile {}  between-variance {}  weight {}  bank-weight {}  adjusted {}",
            bank.bank_id,
            opt3(bank.profile).trim_start(),
            opt3(bank.between_variance).trim_start(),
            opt3(bank.total_weight).trim_start(),
            opt3(bank.bank_weight).trim_start(),
            opt3(bank.adjusted_profile).trim_start(),
        );
        if let Some(note) = &bank.note {
            let _ = writeln!(&mut out, "  note: {note}");
        }
        let _ = writeln!(
            &mut out,
            "  {:<12} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "cell", "obs", "mle", "weight", "bank", "industry", "tail"
        );
        for cell in report.cells.iter().filter(|c| c.bank_id == bank.bank_id) {
            let _ = writeln!(
                &mut out,
                "  {:<12} {:>5} {} {:10.3} {:10.3} {} {:10.3}",
                cell.cell_id,
                cell.observations,
                opt3(cell.mle),
                cell.weight,
                cell.bank_credibility,
                opt3(cell.industry_credibility),
                cell.tail_parameter,
            );
        }
        let _ = writeln!(&mut out);
    }
    out
}

/// Renders a frequency report as fixed-width text, 3 decimals.
pub fn render_frequency_text(report: &FrequencyReport) -> String {
    let mut out = String::new();
    header(&mut out, &report.manifest, "frequency credibility fit");
    if let Some(industry) = &report.industry {
        industry_section(&mut out, industry, "profile variance");
    }
    for bank in &report.banks {
        let _ = writeln!(
            &mut out,
            "bank {}  profile {}  between-variance {}  weight {}  volume {}  bank-weight {}  adjusted {}",
            bank.bank_id,
            opt3(bank.profile).trim_start(),
            opt3(bank.between_variance).trim_start(),
            opt3(bank.total_weight).trim_start(),
            opt3(bank.total_volume).trim_start(),
            opt3(bank.bank_weight).trim_start(),
            opt3(bank.adjusted_profile).trim_start(),
        );
        if let Some(note) = &bank.note {
            let _ = writeln!(&mut out, "  note: {note}");
        }
        let _ = writeln!(
            &mut out,
            "  {:<12} {:>5} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "cell", "years", "count", "mle", "weight", "bank", "industry", "rate"
        );
        for cell in report.cells.iter().filter(|c| c.bank_id == bank.bank_id) {
            let _ = writeln!(
                &mut out,
                "  {:<12} {:>5} {:>6} {:10.3} {:10.3} {:10.3} {} {:10.3}",
                cell.cell_id,
                cell.years,
                cell.total_count,
                cell.mle,
                cell.weight,
                cell.bank_credibility,
                opt3(cell.industry_credibility),
                cell.arrival_rate,
            );
        }
        let _ = writeln!(&mut out);
    }
    out
}

fn summary_section(out: &mut String, label: &str, summary: &SampleSummary) {
    let _ = writeln!(out, "{label}");
    let _ = writeln!(out, "  mean     {:14.3}", summary.mean);
    let _ = writeln!(out, "  std dev  {:14.3}", summary.std_dev);
    let _ = writeln!(out, "  max      {:14.3}", summary.max);
    for q in &summary.quantiles {
        let _ = writeln!(
            out,
            "  quantile {:7.5}  value {:14.3}  95% band [{:.3}, {:.3}]",
            q.probability, q.value, q.lower, q.upper
        );
    }
}

/// Renders a capital report as fixed-width text, 3 decimals.
pub fn render_capital_text(report: &CapitalReport) -> String {
    let mut out = String::new();
    header(&mut out, &report.manifest, "capital simulation");
    let _ = writeln!(&mut out, "paths {}   seed {}", report.paths, report.seed);
    let _ = writeln!(&mut out);
    summary_section(&mut out, "bank annual loss", &report.bank);
    let _ = writeln!(&mut out);
    for cell in &report.cells {
        let _ = writeln!(
            &mut out,
            "{}   rate {:.3}   tail {:.3}   threshold {:.3}{}",
            cell.key,
            cell.rate,
            cell.tail,
            cell.threshold,
            if cell.infinite_mean {
                "   [infinite mean]"
            } else {
                ""
            }
        );
        summary_section(&mut out, "  annual loss", &cell.summary);
        let _ = writeln!(&mut out);
    }
    for warning in &report.warnings {
        let _ = writeln!(&mut out, "warning: {warning}");
    }
    out
}
