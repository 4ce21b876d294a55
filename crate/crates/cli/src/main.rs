//! `hsi-pest` command-line driver.
//!
//! Exit codes: 0 on success, 1 for user or configuration errors, 2 for
//! internal failures (numerical breakdown, divergence).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Ctx, GridFlags, UnetFlags};
use config::RunConfig;
use hsi_pest::pipeline::SampleSource;

/// A configuration or usage problem the user can fix.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

#[derive(Parser)]
#[command(name = "hsi-pest", version, about = "Hyperspectral pest detection pipeline")]
struct Cli {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (ENVI cubes plus truth masks).
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dark-background exclusion and PCA score masks per cube.
    Mask {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract representative spectra into a CSV table.
    Sample {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory written by `mask`.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, value_enum)]
        source: Option<Source>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a classifier.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Print a band set from a preset or a sparse model.
    Bands {
        /// full, selection1 or selection2.
        #[arg(long)]
        preset: Option<String>,
        /// Sparse model JSON.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Cube supplying the wavelength axis (default: built-in grid).
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a PGM prediction image per cube.
    Predict {
        /// Soft PLS-DA model (.json) or U-Net model (.bin).
        model: PathBuf,
        /// ENVI headers.
        cubes: Vec<PathBuf>,
        /// U-Net band set; defaults to `<model>_bands.csv` when present.
        #[arg(long)]
        bands: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection report of prediction images against the truth masks.
    Evaluate {
        #[arg(value_enum)]
        level: Level,
        /// Directory of `<id>_pred.pgm` files.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Model column of the report (default: prediction directory name).
        #[arg(long)]
        model_name: Option<String>,
        #[arg(long, default_value = "full")]
        band_set: String,
        /// Report CSV path; matches.csv goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Whole synthetic pipeline end to end.
    Repro {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also train the U-Nets of the `[unet]` section.
        #[arg(long)]
        unet: bool,
        /// Also fit the dense Soft PLS-DA.
        #[arg(long)]
        dense: bool,
    },
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Dense Soft PLS-DA.
    Plsda(PlsArgs),
    /// Sparse Soft PLS-DA.
    Splsda(PlsArgs),
    /// U-Net on the training-group cubes.
    Unet {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// full, selection1, selection2, file:<bands.csv> or model:<model.json>.
        #[arg(long, default_value = "full")]
        bands: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        base_filters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PlsArgs {
    /// SpectraTable CSV.
    #[arg(long)]
    spectra: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated, e.g. `snv+mc,d1+mc`.
    #[arg(long, value_delimiter = ',')]
    preprocess: Option<Vec<String>>,
    #[arg(long)]
    lv_max: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Score,
    Truth,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Pixel,
    Object,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ctx = Ctx { cfg, json: cli.json };
    match cli.command {
        Command::Synth { out } => commands::synth(&ctx, out),
        Command::Mask { corpus, out } => commands::mask(&ctx, corpus, out),
        Command::Sample { corpus, masks, source, out } => {
            let source = source.map(|s| match s {
                Source::Score => SampleSource::Score,
                Source::Truth => SampleSource::Truth,
            });
            commands::sample(&ctx, corpus, masks, source, out)
        }
        Command::Train(t) => match t {
            TrainCommand::Plsda(a) => train_pls(&ctx, false, a),
            TrainCommand::Splsda(a) => train_pls(&ctx, true, a),
            TrainCommand::Unet { corpus, bands, epochs, base_filters, out } => {
                commands::train_unet(&ctx, corpus, out, UnetFlags { bands, epochs, base_filters })
            }
        },
        Command::Bands { preset, model, cube, out } => commands::bands(&ctx, preset, model, cube, out),
        Command::Predict { model, cubes, bands, out } => commands::predict(&ctx, model, bands, cubes, out),
        Command::Evaluate { level, pred, corpus, model_name, band_set, out } => {
            commands::evaluate(&ctx, matches!(level, Level::Object), pred, corpus, model_name, band_set, out)
        }
        Command::Repro { out, unet, dense } => commands::repro(&ctx, out, unet, dense),
    }
}

fn train_pls(ctx: &Ctx, sparse: bool, a: PlsArgs) -> anyhow::Result<()> {
    let flags = GridFlags { preprocess: a.preprocess, lv_max: a.lv_max, k_grid: a.k_grid, folds: a.folds };
    commands::train_pls(ctx, sparse, a.spectra, a.out, flags)
}

/// 1 for problems with the input, 2 for failures inside the numerics.
fn exit_code(err: &anyhow::Error) -> u8 {
    use hsi_pest::Error as E;
    for cause in err.chain() {
        if cause.is::<UserError>() || cause.is::<std::io::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NoConvergence { .. } | E::Divergence { .. } | E::Degenerate(_) | E::DegenerateClass { .. } => 2,
                _ => 1,
            };
        }
    }
    2
}

fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = e.print();
                return ExitCode::from(1);
            }
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("error: bad arguments"));
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
