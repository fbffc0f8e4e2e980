//! Data model for multi-bank, multi-cell loss and count panels: record
//! types, cell configuration, CSV/JSON ingestion with validation, and the
//! report-only panel checks.
//!
//! Panels are immutable after construction and safe to share across
//! estimation tasks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Key of one risk cell within the industry: (bank, cell) identifiers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub bank_id: String,
    pub cell_id: String,
}

impl CellKey {
    pub fn new(bank_id: impl Into<String>, cell_id: impl Into<String>) -> Self {
        CellKey {
            bank_id: bank_id.into(),
            cell_id: cell_id.into(),
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bank {} cell {}", self.bank_id, self.cell_id)
    }
}

/// One loss above its cell's threshold, in the panel's currency unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub bank_id: String,
    pub cell_id: String,
    /// Must satisfy amount/threshold >= 1 for the cell it belongs to.
    pub amount: f64,
}

/// Annual event count of one cell in one calendar year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub bank_id: String,
    pub cell_id: String,
    pub year: i32,
    pub count: u64,
}

fn default_scale() -> f64 {
    1.0
}

/// A priori configuration of one cell: reporting threshold and the relative
/// severity/frequency scale constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub bank_id: String,
    pub cell_id: String,
    /// Threshold above which losses are recorded; > 0.
    pub threshold: f64,
    /// Relative a priori severity scale; > 0, defaults to 1.
    #[serde(default = "default_scale")]
    pub severity_scale: f64,
    /// Relative a priori frequency scale; > 0, defaults to 1.
    #[serde(default = "default_scale")]
    pub frequency_scale: f64,
}

impl CellConfig {
    pub fn key(&self) -> CellKey {
        CellKey::new(self.bank_id.clone(), self.cell_id.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let key = self.key();
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "{key}: threshold must be > 0, got {}",
                self.threshold
            )));
        }
        if !(self.severity_scale > 0.0 && self.severity_scale.is_finite()) {
            return Err(Error::Config(format!(
                "{key}: severity_scale must be > 0, got {}",
                self.severity_scale
            )));
        }
        if !(self.frequency_scale > 0.0 && self.frequency_scale.is_finite()) {
            return Err(Error::Config(format!(
                "{key}: frequency_scale must be > 0, got {}",
                self.frequency_scale
            )));
        }
        Ok(())
    }
}

/// Validated set of cell configurations, keyed by (bank, cell).
#[derive(Clone, Debug, Default)]
pub struct CellConfigSet {
    map: BTreeMap<CellKey, CellConfig>,
}

impl CellConfigSet {
    pub fn new(configs: Vec<CellConfig>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for config in configs {
            config.validate()?;
            let key = config.key();
            if map.insert(key.clone(), config).is_some() {
                return Err(Error::Config(format!("duplicate cell config for {key}")));
            }
        }
        Ok(CellConfigSet { map })
    }

    pub fn get(&self, key: &CellKey) -> Option<&CellConfig> {
        self.map.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &CellConfig)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn into_configs(self) -> Vec<CellConfig> {
        self.map.into_values().collect()
    }
}

/// Loads a cell-config JSON file: an array of config objects.
pub fn load_configs(path: &Path) -> Result<CellConfigSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let configs: Vec<CellConfig> = serde_json::from_str(&text).map_err(|e| {
        Error::Parse {
            path: path.display().to_string(),
            line: e.line() as u64,
            message: e.to_string(),
        }
    })?;
    CellConfigSet::new(configs)
}

/// Writes a cell-config set back to JSON (pretty-printed, key order stable).
pub fn write_configs(configs: &[CellConfig], path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(configs).expect("configs serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One cell's losses, in input order, with its configuration attached.
#[derive(Clone, Debug)]
pub struct LossCell {
    pub config: CellConfig,
    pub amounts: Vec<f64>,
}

/// One cell's annual counts, sorted by year, with its configuration attached.
#[derive(Clone, Debug)]
pub struct CountCell {
    pub config: CellConfig,
    /// (year, count), strictly increasing in year.
    pub entries: Vec<(i32, u64)>,
}

impl CountCell {
    pub fn years(&self) -> usize {
        self.entries.len()
    }

    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|(_, c)| c).sum()
    }
}

/// Severity observations keyed by (bank, cell).
#[derive(Clone, Debug, Default)]
pub struct LossPanel {
    cells: BTreeMap<CellKey, LossCell>,
}

/// Count observations keyed by (bank, cell).
#[derive(Clone, Debug, Default)]
pub struct CountPanel {
    cells: BTreeMap<CellKey, CountCell>,
}

impl LossPanel {
    /// Builds a panel from records, validating thresholds and config
    /// coverage.  Record order within a cell is preserved.
    pub fn from_records(records: &[LossRecord], configs: &CellConfigSet) -> Result<Self> {
        let mut cells: BTreeMap<CellKey, LossCell> = BTreeMap::new();
        for record in records {
            let key = CellKey::new(record.bank_id.clone(), record.cell_id.clone());
            let config = configs
                .get(&key)
                .ok_or_else(|| Error::Config(format!("no cell config for {key}")))?;
            check_amount(record.amount, config, &key, None)?;
            cells
                .entry(key)
                .or_insert_with(|| LossCell {
                    config: config.clone(),
                    amounts: Vec::new(),
                })
                .amounts
                .push(record.amount);
        }
        Ok(LossPanel { cells })
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &LossCell)> {
        self.cells.iter()
    }

    pub fn get(&self, key: &CellKey) -> Option<&LossCell> {
        self.cells.get(key)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Distinct bank ids, ascending.
    pub fn banks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for key in self.cells.keys() {
            if out.last().map(|b| b.as_str()) != Some(key.bank_id.as_str()) {
                out.push(key.bank_id.clone());
            }
        }
        out
    }

    /// Sub-panel holding only the given bank's cells.
    pub fn restrict(&self, bank_id: &str) -> LossPanel {
        LossPanel {
            cells: self
                .cells
                .iter()
                .filter(|(k, _)| k.bank_id == bank_id)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Report-only check: observation counts, severity qualification
    /// (at least 3 losses), and per-record threshold consistency.
    pub fn validate(&self) -> ValidationReport {
        let cells = self
            .cells
            .iter()
            .map(|(key, cell)| {
                let observations = cell.amounts.len();
                let qualified = observations >= 3;
                let mut notes = Vec::new();
                if !qualified {
                    notes.push(
                        "excluded from severity credibility (needs at least 3 losses)".into(),
                    );
                }
                CellValidation {
                    key: key.clone(),
                    observations,
                    qualified,
                    notes,
                }
            })
            .collect();
        ValidationReport {
            cells,
            bank_issues: Vec::new(),
        }
    }
}

impl CountPanel {
    /// Builds a panel from records; duplicate (bank, cell, year) rows are
    /// rejected and year lists come out sorted.
    pub fn from_records(records: &[CountRecord], configs: &CellConfigSet) -> Result<Self> {
        let mut cells: BTreeMap<CellKey, CountCell> = BTreeMap::new();
        for record in records {
            let key = CellKey::new(record.bank_id.clone(), record.cell_id.clone());
            let config = configs
                .get(&key)
                .ok_or_else(|| Error::Config(format!("no cell config for {key}")))?;
            let cell = cells.entry(key.clone()).or_insert_with(|| CountCell {
                config: config.clone(),
                entries: Vec::new(),
            });
            if cell.entries.iter().any(|(y, _)| *y == record.year) {
                return Err(Error::Validation(format!(
                    "duplicate count record for {key} year {}",
                    record.year
                )));
            }
            cell.entries.push((record.year, record.count));
        }
        for cell in cells.values_mut() {
            cell.entries.sort_by_key(|(year, _)| *year);
        }
        Ok(CountPanel { cells })
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &CountCell)> {
        self.cells.iter()
    }

    pub fn get(&self, key: &CellKey) -> Option<&CountCell> {
        self.cells.get(key)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn banks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for key in self.cells.keys() {
            if out.last().map(|b| b.as_str()) != Some(key.bank_id.as_str()) {
                out.push(key.bank_id.clone());
            }
        }
        out
    }

    pub fn restrict(&self, bank_id: &str) -> CountPanel {
        CountPanel {
            cells: self
                .cells
                .iter()
                .filter(|(k, _)| k.bank_id == bank_id)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Report-only check: year counts per cell and per-bank threshold
    /// consistency (the frequency model assumes one threshold per bank).
    pub fn validate(&self) -> ValidationReport {
        let cells = self
            .cells
            .iter()
            .map(|(key, cell)| CellValidation {
                key: key.clone(),
                observations: cell.years(),
                qualified: cell.years() >= 1,
                notes: Vec::new(),
            })
            .collect();
        let mut bank_issues = Vec::new();
        let mut thresholds: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (key, cell) in &self.cells {
            let seen = thresholds.entry(key.bank_id.as_str()).or_default();
            if !seen.contains(&cell.config.threshold) {
                seen.push(cell.config.threshold);
            }
        }
        for (bank, seen) in thresholds {
            if seen.len() > 1 {
                bank_issues.push(format!(
                    "bank {bank}: cells carry {} distinct thresholds under the frequency model",
                    seen.len()
                ));
            }
        }
        ValidationReport { cells, bank_issues }
    }
}

fn check_amount(amount: f64, config: &CellConfig, key: &CellKey, line: Option<u64>) -> Result<()> {
    if !amount.is_finite() {
        return Err(Error::Validation(format!(
            "{key}: non-finite loss amount{}",
            line_suffix(line)
        )));
    }
    if amount < config.threshold {
        return Err(Error::Validation(format!(
            "{key}: loss amount {amount} below threshold {}{}",
            config.threshold,
            line_suffix(line)
        )));
    }
    Ok(())
}

fn line_suffix(line: Option<u64>) -> String {
    match line {
        Some(l) => format!(" (row at line {l})"),
        None => String::new(),
    }
}

fn parse_error(path: &Path, line: u64, err: impl fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: err.to_string(),
    }
}

/// Loads a loss CSV (`bank_id,cell_id,amount`) against a config set.
pub fn load_losses(path: &Path, configs: &CellConfigSet) -> Result<LossPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_error(path, 1, format!("{other:?}")),
        })?;
    let mut cells: BTreeMap<CellKey, LossCell> = BTreeMap::new();
    // Header occupies line 1; data rows are enumerated from line 2.
    for (index, row) in reader.deserialize::<LossRecord>().enumerate() {
        let line = index as u64 + 2;
        let record = row.map_err(|e| parse_error(path, line, e))?;
        let key = CellKey::new(record.bank_id.clone(), record.cell_id.clone());
        let config = configs.get(&key).ok_or_else(|| {
            Error::Config(format!("no cell config for {key} (row at line {line})"))
        })?;
        check_amount(record.amount, config, &key, Some(line))?;
        cells
            .entry(key)
            .or_insert_with(|| LossCell {
                config: config.clone(),
                amounts: Vec::new(),
            })
            .amounts
            .push(record.amount);
    }
    Ok(LossPanel { cells })
}

/// Loads a count CSV (`bank_id,cell_id,year,count`) against a config set.
pub fn load_counts(path: &Path, configs: &CellConfigSet) -> Result<CountPanel> {
    #[derive(Deserialize)]
    struct Row {
        bank_id: String,
        cell_id: String,
        year: i32,
        count: i64,
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_error(path, 1, format!("{other:?}")),
        })?;
    let mut records = Vec::new();
    for (index, row) in reader.deserialize::<Row>().enumerate() {
        let line = index as u64 + 2;
        let row = row.map_err(|e| parse_error(path, line, e))?;
        if row.count < 0 {
            return Err(Error::Validation(format!(
                "bank {} cell {}: negative count {} (row at line {line})",
                row.bank_id, row.cell_id, row.count
            )));
        }
        records.push(CountRecord {
            bank_id: row.bank_id,
            cell_id: row.cell_id,
            year: row.year,
            count: row.count as u64,
        });
    }
    CountPanel::from_records(&records, configs)
}

/// Writes a loss panel back to CSV, cells in key order, amounts at full
/// precision.  Round-trips with [`load_losses`] up to row order.
pub fn write_losses(panel: &LossPanel, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let write = |out: &mut dyn std::io::Write| -> std::io::Result<()> {
        writeln!(out, "bank_id,cell_id,amount")?;
        for (key, cell) in panel.cells() {
            for amount in &cell.amounts {
                writeln!(out, "{},{},{}", key.bank_id, key.cell_id, amount)?;
            }
        }
        Ok(())
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Writes a count panel back to CSV, cells in key order, years ascending.
pub fn write_counts(panel: &CountPanel, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let write = |out: &mut dyn std::io::Write| -> std::io::Result<()> {
        writeln!(out, "bank_id,cell_id,year,count")?;
        for (key, cell) in panel.cells() {
            for (year, count) in &cell.entries {
                writeln!(out, "{},{},{},{}", key.bank_id, key.cell_id, year, count)?;
            }
        }
        Ok(())
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Per-cell findings of a panel check.
#[derive(Clone, Debug)]
pub struct CellValidation {
    pub key: CellKey,
    /// Number of losses (loss panel) or observed years (count panel).
    pub observations: usize,
    /// Loss panels: qualifies for severity credibility (>= 3 losses).
    /// Count panels: has at least one observed year.
    pub qualified: bool,
    pub notes: Vec<String>,
}

/// Outcome of the report-only panel checks.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub cells: Vec<CellValidation>,
    /// Bank-level inconsistencies (e.g. mixed thresholds under the
    /// frequency model).
    pub bank_issues: Vec<String>,
}

impl ValidationReport {
    pub fn excluded_cells(&self) -> impl Iterator<Item = &CellValidation> {
        self.cells.iter().filter(|c| !c.qualified)
    }
}
