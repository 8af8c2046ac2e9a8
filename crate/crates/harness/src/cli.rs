//! The `nnsp` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{CommandFactory, Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind, Preset};
use crate::output::OutputDir;
use crate::{ek_check, ergodicity, n_sweep, single, width_sweep};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nnsp", version, about = "Finite-width corrections to wide-network GP predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Key-value config file (`section.key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `experiment.output`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Master seed; overrides `experiment.seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Reduced grids that finish in minutes (the default).
    #[arg(long, global = true, conflicts_with = "full")]
    quick: bool,

    /// Full-size grids; runs take hours.
    #[arg(long, global = true)]
    full: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// NNGP kernel over the training inputs.
    Kernel,
    /// Fourth cumulant over the training inputs.
    Cumulant,
    /// GP and finite-width predictions on the test set.
    FwcPredict,
    /// Train one width and compare with theory.
    Train,
    /// Relative MSEs and slope fits across widths.
    SweepWidth,
    /// Corrections and GP error across training-set sizes.
    SweepN,
    /// Equivalent Kernel against averaged GP regression.
    Ek,
    /// Variance of block means of trained outputs.
    Ergodicity,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::SweepWidth => ExperimentKind::WidthSweep,
            Command::SweepN => ExperimentKind::NSweep,
            Command::Ek => ExperimentKind::EkCheck,
            Command::Ergodicity => ExperimentKind::Ergodicity,
            Command::Kernel | Command::Cumulant | Command::FwcPredict | Command::Train => ExperimentKind::SinglePredict,
        }
    }
}

fn usage() -> String {
    Cli::command().render_usage().to_string()
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let preset = if cli.full { Preset::Full } else { Preset::Quick };
    let mut cfg = ExperimentConfig::preset(preset);
    if let Some(path) = &cli.config {
        cfg = ExperimentConfig::load(cfg, path)?;
    }
    cfg.kind = cli.command.kind();
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: Command, cfg: &ExperimentConfig, err: &mut dyn Write) -> nnsp_core::Result<(OutputDir, Vec<(String, String)>)> {
    let mut out = OutputDir::create(&cfg.output)?;
    let summary = match cmd {
        Command::Kernel => single::write_kernel_files(cfg, &mut out)?,
        Command::Cumulant => single::write_cumulant_files(cfg, &mut out)?,
        Command::FwcPredict => single::write_prediction(cfg, &mut out)?,
        Command::Train => single::write_training(cfg, &mut out, err)?,
        Command::SweepWidth => {
            let r = width_sweep::run_width_sweep(cfg)?;
            for w in &r.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            width_sweep::write_width_sweep(&r, &mut out)?
        }
        Command::SweepN => n_sweep::write_n_sweep(&n_sweep::run_n_sweep(cfg)?, &mut out)?,
        Command::Ek => ek_check::write_ek_check(&ek_check::run_ek_check(cfg)?, &mut out)?,
        Command::Ergodicity => {
            let r = ergodicity::run_ergodicity(cfg)?;
            for w in &r.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            ergodicity::write_ergodicity(&r, &mut out)?
        }
    };
    Ok((out, summary))
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}\n\n{}", usage());
            return EXIT_USAGE;
        }
    };
    match execute(cli.command, &cfg, stderr) {
        Ok((out, summary)) => {
            for (k, v) in &summary {
                let _ = writeln!(stdout, "{k}: {v}");
            }
            match out.finish(&cfg, &summary) {
                Ok(path) => {
                    let _ = writeln!(stdout, "manifest: {}", path.display());
                    EXIT_OK
                }
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    EXIT_NUMERICAL
                }
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_NUMERICAL
        }
    }
}
