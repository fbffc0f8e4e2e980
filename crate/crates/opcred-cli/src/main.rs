//! Command-line front end: hierarchical severity/frequency fits, expert
//! calibration, synthetic panel generation, and capital simulation.
//!
//! Exit codes: 0 success, 1 validation error, 2 solver non-convergence,
//! 3 I/O error.  Reports embed their run manifest; re-running a command with
//! the same inputs reproduces the report files byte for byte.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use opcred::calibration::{calibrate_frequency_scales, calibrate_severity_scales, load_opinions};
use opcred::capital::{
    build_models_from_fits, run_capital, write_sample_binary, CapitalConfig, FrequencyModelInput,
    HighFrequencyModel, SeverityModelInput,
};
use opcred::credibility::FixedPointSettings;
use opcred::domain::{
    load_configs, load_counts, load_losses, write_configs, write_counts, write_losses, CellConfigSet,
    CellKey, CountPanel, LossPanel, ValidationReport,
};
use opcred::error::Error;
use opcred::frequency::{
    apply_industry_frequency, fit_bank_frequency, fit_industry_frequency, industry_rate_injection,
};
use opcred::report::{
    render_capital_text, render_frequency_text, render_severity_text, write_json, CapitalReport,
    FrequencyReport, RunManifest, SeverityReport,
};
use opcred::severity::{
    apply_industry_severity, fit_bank_severity, fit_industry_severity, industry_profile_injection,
};
use opcred::synth::{generate, SynthConfig};
use opcred::Result;

#[derive(Parser)]
#[command(
    name = "opcred",
    version,
    about = "Hierarchical credibility estimation and capital simulation for operational risk panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit Pareto tail parameters with cell/bank/industry credibility.
    FitSeverity(FitSeverityArgs),
    /// Fit Poisson arrival rates with cell/bank/industry credibility.
    FitFrequency(FitFrequencyArgs),
    /// Simulate compound annual losses from fitted reports and estimate VaR.
    Capital(CapitalArgs),
    /// Generate a synthetic multi-bank panel with recorded ground truth.
    Synth(SynthArgs),
    /// Turn expert opinions into per-cell a priori scales.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Convergence tolerance of the structural fixed point.
    #[arg(long = "tol", default_value_t = FixedPointSettings::default().tolerance)]
    tolerance: f64,
    /// Iteration cap of the structural fixed point.
    #[arg(long = "max-iter", default_value_t = FixedPointSettings::default().max_iterations)]
    max_iterations: u32,
}

impl SolverArgs {
    fn settings(&self) -> FixedPointSettings {
        FixedPointSettings {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Args)]
struct FitSeverityArgs {
    /// Loss CSV: bank_id,cell_id,amount.
    losses: PathBuf,
    /// Cell configuration JSON.
    config: PathBuf,
    /// A priori industry severity profile (single-bank panels only).
    #[arg(long = "industry-profile")]
    industry_profile: Option<f64>,
    /// A priori industry between-bank variance.
    #[arg(long = "industry-var")]
    industry_var: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Directory for severity_report.json / severity_report.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitFrequencyArgs {
    /// Count CSV: bank_id,cell_id,year,count.
    counts: PathBuf,
    /// Cell configuration JSON.
    config: PathBuf,
    /// A priori industry arrival-rate profile (single-bank panels only).
    #[arg(long = "industry-rate")]
    industry_rate: Option<f64>,
    /// A priori industry between-bank variance.
    #[arg(long = "industry-var")]
    industry_var: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Directory for frequency_report.json / frequency_report.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CapitalArgs {
    /// severity_report.json from fit-severity.
    severity_report: PathBuf,
    /// frequency_report.json from fit-frequency.
    frequency_report: PathBuf,
    /// Below-threshold lognormal overlay (JSON: rate, log_mean, log_sd).
    #[arg(long)]
    hf: Option<PathBuf>,
    /// Number of simulated annual paths.
    #[arg(long, default_value_t = 1_000_000)]
    paths: u64,
    /// Base seed of the per-cell substream generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Quantile to report (repeatable; default 0.999).
    #[arg(long = "quantile")]
    quantiles: Vec<f64>,
    /// Also write the sorted bank totals as little-endian f64 binary.
    #[arg(long = "dump-sample")]
    dump_sample: Option<PathBuf>,
    /// Directory for capital_report.json / capital_report.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of banks.
    #[arg(long, default_value_t = SynthConfig::default().banks)]
    banks: usize,
    /// Risk cells per bank.
    #[arg(long, default_value_t = SynthConfig::default().cells)]
    cells: usize,
    /// Observed years per cell.
    #[arg(long, default_value_t = SynthConfig::default().years)]
    years: usize,
    /// Recorded losses per cell.
    #[arg(long = "losses-per-cell", default_value_t = SynthConfig::default().losses_per_cell)]
    losses_per_cell: usize,
    /// Reporting threshold shared by all cells.
    #[arg(long, default_value_t = SynthConfig::default().threshold)]
    threshold: f64,
    /// Mean of the industry severity-profile mixing law.
    #[arg(long = "severity-mean", default_value_t = SynthConfig::default().severity_mean)]
    severity_mean: f64,
    /// Between-bank variance of severity profiles.
    #[arg(long = "severity-between", default_value_t = SynthConfig::default().severity_between)]
    severity_between: f64,
    /// Between-cell variance of severity profiles within a bank.
    #[arg(long = "severity-within", default_value_t = SynthConfig::default().severity_within)]
    severity_within: f64,
    /// Mean of the industry arrival-rate mixing law.
    #[arg(long = "frequency-mean", default_value_t = SynthConfig::default().frequency_mean)]
    frequency_mean: f64,
    /// Between-bank variance of rate profiles.
    #[arg(long = "frequency-between", default_value_t = SynthConfig::default().frequency_between)]
    frequency_between: f64,
    /// Between-cell variance of rate profiles within a bank.
    #[arg(long = "frequency-within", default_value_t = SynthConfig::default().frequency_within)]
    frequency_within: f64,
    /// Generator seed.
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
    /// Directory for losses.csv, counts.csv, cells.json, truth.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Opinions JSON: [{bank_id, cell_id, kind, level?, probability?, expected_count?}].
    opinions: PathBuf,
    /// Cell configuration JSON to update.
    config: PathBuf,
    /// Severity profile the scales are calibrated against.
    #[arg(long = "reference-profile", default_value_t = 1.0)]
    reference_profile: f64,
    /// Arrival-rate profile the scales are calibrated against.
    #[arg(long = "reference-rate", default_value_t = 1.0)]
    reference_rate: f64,
    /// Directory for calibrated_cells.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitSeverity(args) => cmd_fit_severity(args),
        Command::FitFrequency(args) => cmd_fit_frequency(args),
        Command::Capital(args) => cmd_capital(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn ensure_out_dir(path: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Panel findings are advisory: cells below the observation floor still
/// appear in reports, fully shrunk to the profile.
fn report_panel_notes(report: &ValidationReport) {
    for cell in report.excluded_cells() {
        let why = if cell.notes.is_empty() {
            "insufficient observations for a cell-level weight".to_string()
        } else {
            cell.notes.join("; ")
        };
        eprintln!("note: cell {}: {why}", cell.key);
    }
    for issue in &report.bank_issues {
        eprintln!("note: {issue}");
    }
}

fn cmd_fit_severity(args: FitSeverityArgs) -> Result<()> {
    let configs = load_configs(&args.config)?;
    let panel = load_losses(&args.losses, &configs)?;
    report_panel_notes(&panel.validate());
    let settings = args.solver.settings();
    let injection = match (args.industry_profile, args.industry_var) {
        (Some(profile), Some(variance)) => Some(industry_profile_injection(profile, variance)?),
        (None, None) => None,
        _ => {
            return Err(Error::Validation(
                "--industry-profile and --industry-var must be given together".into(),
            ))
        }
    };

    let mut manifest = RunManifest::new("fit-severity");
    manifest.inputs = vec![display(&args.losses), display(&args.config)];
    manifest.tolerance = settings.tolerance;
    manifest.max_iterations = settings.max_iterations;
    if let Some(profile) = args.industry_profile {
        manifest.flags.insert("industry-profile".into(), profile.to_string());
    }
    if let Some(variance) = args.industry_var {
        manifest.flags.insert("industry-var".into(), variance.to_string());
    }

    let report = if panel.banks().len() == 1 {
        let mut fit = fit_bank_severity(&panel, &settings)?;
        match &injection {
            Some(industry) => {
                apply_industry_severity(&mut fit, industry);
                SeverityReport::from_bank(manifest, &fit, Some(industry))
            }
            None => SeverityReport::from_bank(manifest, &fit, None),
        }
    } else {
        if injection.is_some() {
            return Err(Error::Validation(
                "a multi-bank panel estimates its own industry parameters; \
                 --industry-profile/--industry-var apply to single-bank fits only"
                    .into(),
            ));
        }
        let fit = fit_industry_severity(&panel, &settings)?;
        SeverityReport::from_industry(manifest, &fit)
    };

    let out = ensure_out_dir(&args.out)?;
    write_json(&report, &out.join("severity_report.json"))?;
    let text = render_severity_text(&report);
    write_text(&text, &out.join("severity_report.txt"))?;
    print!("{text}");
    Ok(())
}

fn cmd_fit_frequency(args: FitFrequencyArgs) -> Result<()> {
    let configs = load_configs(&args.config)?;
    let panel = load_counts(&args.counts, &configs)?;
    report_panel_notes(&panel.validate());
    let settings = args.solver.settings();
    let injection = match (args.industry_rate, args.industry_var) {
        (Some(rate), Some(variance)) => Some(industry_rate_injection(rate, variance)?),
        (None, None) => None,
        _ => {
            return Err(Error::Validation(
                "--industry-rate and --industry-var must be given together".into(),
            ))
        }
    };

    let mut manifest = RunManifest::new("fit-frequency");
    manifest.inputs = vec![display(&args.counts), display(&args.config)];
    manifest.tolerance = settings.tolerance;
    manifest.max_iterations = settings.max_iterations;
    if let Some(rate) = args.industry_rate {
        manifest.flags.insert("industry-rate".into(), rate.to_string());
    }
    if let Some(variance) = args.industry_var {
        manifest.flags.insert("industry-var".into(), variance.to_string());
    }

    let report = if panel.banks().len() == 1 {
        let mut fit = fit_bank_frequency(&panel, &settings)?;
        match &injection {
            Some(industry) => {
                apply_industry_frequency(&mut fit, industry);
                FrequencyReport::from_bank(manifest, &fit, Some(industry))
            }
            None => FrequencyReport::from_bank(manifest, &fit, None),
        }
    } else {
        if injection.is_some() {
            return Err(Error::Validation(
                "a multi-bank panel estimates its own industry parameters; \
                 --industry-rate/--industry-var apply to single-bank fits only"
                    .into(),
            ));
        }
        let fit = fit_industry_frequency(&panel, &settings)?;
        FrequencyReport::from_industry(manifest, &fit)
    };

    let out = ensure_out_dir(&args.out)?;
    write_json(&report, &out.join("frequency_report.json"))?;
    let text = render_frequency_text(&report);
    write_text(&text, &out.join("frequency_report.txt"))?;
    print!("{text}");
    Ok(())
}

fn cmd_capital(args: CapitalArgs) -> Result<()> {
    let severity: SeverityReport = read_json(&args.severity_report)?;
    let frequency: FrequencyReport = read_json(&args.frequency_report)?;
    let hf: Option<HighFrequencyModel> = match &args.hf {
        Some(path) => Some(read_json(path)?),
        None => None,
    };

    let severity_inputs: Vec<SeverityModelInput> = severity
        .cells
        .iter()
        .map(|cell| SeverityModelInput {
            key: CellKey::new(cell.bank_id.clone(), cell.cell_id.clone()),
            threshold: cell.threshold,
            tail_parameter: cell.tail_parameter,
        })
        .collect();
    let frequency_inputs: Vec<FrequencyModelInput> = frequency
        .cells
        .iter()
        .map(|cell| FrequencyModelInput {
            key: CellKey::new(cell.bank_id.clone(), cell.cell_id.clone()),
            threshold: cell.threshold,
            arrival_rate: cell.arrival_rate,
        })
        .collect();
    let (models, join_warnings) =
        build_models_from_fits(&severity_inputs, &frequency_inputs, hf.as_ref())?;
    // A cell known to only one fit means the two reports describe different
    // panels; refuse rather than silently dropping it.
    if !join_warnings.is_empty() {
        return Err(Error::Validation(join_warnings.join("; ")));
    }

    let quantiles = if args.quantiles.is_empty() {
        CapitalConfig::default().quantiles
    } else {
        args.quantiles.clone()
    };
    let config = CapitalConfig {
        paths: args.paths,
        seed: args.seed,
        quantiles,
    };
    let result = run_capital(&models, &config)?;
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }

    let mut manifest = RunManifest::new("capital");
    manifest.inputs = vec![display(&args.severity_report), display(&args.frequency_report)];
    if let Some(path) = &args.hf {
        manifest.inputs.push(display(path));
    }
    manifest.seed = Some(args.seed);
    manifest.flags.insert("paths".into(), args.paths.to_string());
    manifest.flags.insert(
        "quantiles".into(),
        config
            .quantiles
            .iter()
            .map(|q| q.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );

    let report = CapitalReport::new(manifest, &result);
    let out = ensure_out_dir(&args.out)?;
    write_json(&report, &out.join("capital_report.json"))?;
    let text = render_capital_text(&report);
    write_text(&text, &out.join("capital_report.txt"))?;
    print!("{text}");
    if let Some(path) = &args.dump_sample {
        write_sample_binary(&result.bank_sample, path)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        banks: args.banks,
        cells: args.cells,
        years: args.years,
        losses_per_cell: args.losses_per_cell,
        threshold: args.threshold,
        severity_mean: args.severity_mean,
        severity_between: args.severity_between,
        severity_within: args.severity_within,
        frequency_mean: args.frequency_mean,
        frequency_between: args.frequency_between,
        frequency_within: args.frequency_within,
        seed: args.seed,
    };
    let data = generate(&config)?;
    let configs = CellConfigSet::new(data.configs.clone())?;
    let losses = LossPanel::from_records(&data.losses, &configs)?;
    let counts = CountPanel::from_records(&data.counts, &configs)?;

    let out = ensure_out_dir(&args.out)?;
    write_losses(&losses, &out.join("losses.csv"))?;
    write_counts(&counts, &out.join("counts.csv"))?;
    write_configs(&data.configs, &out.join("cells.json"))?;
    write_json(&data.truth, &out.join("truth.json"))?;

    let mut manifest = RunManifest::new("synth");
    manifest.seed = Some(args.seed);
    let flags: [(&str, String); 11] = [
        ("banks", config.banks.to_string()),
        ("cells", config.cells.to_string()),
        ("years", config.years.to_string()),
        ("losses-per-cell", config.losses_per_cell.to_string()),
        ("threshold", config.threshold.to_string()),
        ("severity-mean", config.severity_mean.to_string()),
        ("severity-between", config.severity_between.to_string()),
        ("severity-within", config.severity_within.to_string()),
        ("frequency-mean", config.frequency_mean.to_string()),
        ("frequency-between", config.frequency_between.to_string()),
        ("frequency-within", config.frequency_within.to_string()),
    ];
    for (name, value) in flags {
        manifest.flags.insert(name.into(), value);
    }
    write_json(&manifest, &out.join("manifest.json"))?;

    println!(
        "wrote losses.csv, counts.csv, cells.json, truth.json, manifest.json under {}",
        out.display()
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let configs = load_configs(&args.config)?;
    let (severity_opinions, frequency_opinions) = load_opinions(&args.opinions)?;
    let out = ensure_out_dir(&args.out)?;
    let target = out.join("calibrated_cells.json");

    if severity_opinions.is_empty() && frequency_opinions.is_empty() {
        eprintln!(
            "warning: no opinions in {}; configuration written unchanged",
            args.opinions.display()
        );
        write_configs(&configs.into_configs(), &target)?;
        println!("wrote {}", target.display());
        return Ok(());
    }

    let severity_scales = if severity_opinions.is_empty() {
        Default::default()
    } else {
        calibrate_severity_scales(&severity_opinions, &configs, args.reference_profile)?
    };
    let frequency_scales = if frequency_opinions.is_empty() {
        Default::default()
    } else {
        calibrate_frequency_scales(&frequency_opinions, &configs, args.reference_rate)?
    };

    let mut updated = configs.into_configs();
    let mut touched = 0usize;
    for config in &mut updated {
        let key = config.key();
        if let Some(&scale) = severity_scales.get(&key) {
            config.severity_scale = scale;
            touched += 1;
        }
        if let Some(&scale) = frequency_scales.get(&key) {
            config.frequency_scale = scale;
            touched += 1;
        }
    }
    write_configs(&updated, &target)?;
    println!("updated {touched} scale(s); wrote {}", target.display());
    Ok(())
}
