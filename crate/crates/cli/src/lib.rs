//! Experiment runner: sweeps, CSV output and fit summaries.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod measure;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nvsim_core::optics::CalibrationAnchor;
use thiserror::Error;

use crate::config::{mode_name, parse_anchor, parse_mode, ConfigError, ExperimentConfig};
use crate::measure::Runner;
use crate::output::Report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("validation: {0}")]
    Validation(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation_from!(
    nvsim_core::pulseseq::SequenceError,
    nvsim_core::pulseseq::EngineError,
    nvsim_core::readout::ReadoutError,
    nvsim_core::fitkit::FitError,
    nvsim_core::optics::OpticsError
);

#[derive(Debug, Parser)]
#[command(name = "nvsim", version, about = "NV-center effective-field experiment simulator")]
pub struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV and summary files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Master seed (overrides [engine] seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Shots per point (overrides [readout] shots).
    #[arg(long, global = true)]
    pub shots: Option<u64>,
    /// Engine mode: analytic or mc.
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<nvsim_core::pulseseq::EngineMode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rabi nutation sweep and T2* fit.
    Rabi,
    /// Hahn-echo sweep, revivals and T2 fit.
    Echo,
    /// Double-PSD visibility against exposure time.
    PsdDecoherence,
    /// Effective field against power.
    BeffPower,
    /// Effective field against QWP angle.
    BeffQwp,
    /// Effective-field spectrum.
    BeffWavelength,
    /// Solve C_cal from anchors and print the calibration section.
    Calibrate {
        /// P_mW,theta_deg,lambda_nm,B_nT; repeatable.
        #[arg(long, value_parser = parse_anchor, allow_hyphen_values = true)]
        anchor: Vec<CalibrationAnchor>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rabi => "rabi",
            Command::Echo => "echo",
            Command::PsdDecoherence => "psd-decoherence",
            Command::BeffPower => "beff-power",
            Command::BeffQwp => "beff-qwp",
            Command::BeffWavelength => "beff-wavelength",
            Command::Calibrate { .. } => "calibrate",
        }
    }

    fn summary_file(&self) -> String {
        format!("{}_summary.txt", self.name().replace('-', "_"))
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.engine.seed = s;
    }
    if let Some(n) = cli.shots {
        cfg.readout.shots = n;
    }
    if let Some(m) = cli.mode {
        cfg.engine.mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(command: &Command, cfg: ExperimentConfig) -> Result<Report, CliError> {
    let r = Runner::new(cfg);
    match command {
        Command::Rabi => commands::cmd_rabi(&r),
        Command::Echo => commands::cmd_echo(&r),
        Command::PsdDecoherence => commands::cmd_psd_decoherence(&r),
        Command::BeffPower => commands::cmd_beff_power(&r),
        Command::BeffQwp => commands::cmd_beff_qwp(&r),
        Command::BeffWavelength => commands::cmd_beff_wavelength(&r),
        Command::Calibrate { anchor } => commands::cmd_calibrate(&r, anchor),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs a parsed invocation; `argv` is echoed into the summary.
pub fn run(cli: &Cli, argv: &[String]) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    let meta = format!(
        "nvsim {} command={} mode={} seed={} shots={}",
        env!("CARGO_PKG_VERSION"),
        cli.command.name(),
        mode_name(cfg.engine.mode),
        cfg.engine.seed,
        cfg.readout.shots
    );
    let mut report = execute(&cli.command, cfg.clone())?;

    let mut head = output::Summary::default();
    head.put("command_line", argv.join(" "));
    head.put("version", env!("CARGO_PKG_VERSION"));
    head.put("command", cli.command.name());
    head.put("seed", cfg.engine.seed);
    head.put("mode", mode_name(cfg.engine.mode));
    head.put("shots", cfg.readout.shots);
    let mut text = head.render();
    text.push_str(&report.summary.render());

    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(format!("{}: {e}", cli.out.display())))?;
    for t in &report.tables {
        write(&cli.out.join(&t.name), &t.render(&meta))?;
    }
    for (name, body) in report.files.drain(..) {
        write(&cli.out.join(&name), &body)?;
        text.push_str(&body);
    }
    write(&cli.out.join(cli.command.summary_file()), &text)?;
    Ok(text)
}

/// Applies `NVSIM_THREADS` to the global thread pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("NVSIM_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Usage(format!("NVSIM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}
