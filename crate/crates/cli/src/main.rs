//! `builtup`: synthetic zones, training, tiled prediction, transfer and
//! evaluation from the command line. Every run except `inspect` writes a
//! JSON manifest, also when it fails.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use builtup::model::Preset;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::manifest::{ErrorRecord, RunManifest, RunStatus};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PARTIAL: u8 = 12;

/// Exit code of a failed run, keyed by the error class.
pub fn exit_code(class: &str) -> u8 {
    match class {
        "io" => 3,
        "format" => 4,
        "config" => 5,
        "shape" => 6,
        "numeric" => 7,
        "data" => 8,
        "statistic" => 9,
        "registry" => 10,
        "generation" => 11,
        _ => 1,
    }
}

#[derive(Parser, Debug)]
#[command(name = "builtup", version, about = "Built-up probability mapping with a patch CNN")]
struct Cli {
    /// Where to write the run manifest; each command has its own default.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// More log output; repeat for trace level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic zones (composite, labels, footprints).
    Synth(SynthArgs),
    /// Train one zone's model.
    Train(TrainArgs),
    /// Predict every tile of a zone with a model file.
    Predict(PredictArgs),
    /// Predict a zone with another zone's registered model.
    Transfer(TransferArgs),
    /// Score probability tiles against reference footprints.
    Evaluate(EvaluateArgs),
    /// Print the header of a raster or model file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output root; zones go to `<out>/<zone id>`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub zones: usize,
    /// Scene parameters (TOML or JSON); flags override.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tile_size: Option<usize>,
    /// Seed of the first zone; zone `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub nodata_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LabelRuleArg {
    Block,
    Centre,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub zone: String,
    /// Root holding zone directories.
    #[arg(long)]
    pub data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training settings (TOML or JSON); flags override.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub non_bu_rate: Option<f64>,
    #[arg(long)]
    pub tile_fraction: Option<f64>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Reflectance divisor.
    #[arg(long)]
    pub divisor: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub label_rule: Option<LabelRuleArg>,
    /// Stop when validation loss stalls and keep the best epoch.
    #[arg(long)]
    pub early_stopping: bool,
    /// Zone registry; defaults to `<data>/registry.json`.
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub zone: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for `prob_*.ghsr` and `q_*.ghsr` tiles.
    #[arg(long)]
    pub out: PathBuf,
    /// Tile workers; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Reflectance divisor; defaults to the model's.
    #[arg(long)]
    pub divisor: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Zone whose registered model is applied.
    #[arg(long)]
    pub source_zone: String,
    /// Zone to predict.
    #[arg(long)]
    pub zone: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub divisor: Option<f64>,
    /// Zone registry; defaults to `<data>/registry.json`.
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of probability tiles written by `predict` or `transfer`.
    #[arg(long)]
    pub probs: PathBuf,
    /// Zone directory with the layout and footprints.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5])]
    pub thresholds: Vec<f64>,
    /// JSON report to write.
    #[arg(long)]
    pub report: PathBuf,
    /// Also write the report as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Sub-cell size of the density rasterization, metres.
    #[arg(long, default_value_t = 1.0)]
    pub fine_res: f64,
    /// Report name; defaults to the zone id.
    #[arg(long)]
    pub aoi_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub path: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Transfer(_) => "transfer",
            Command::Evaluate(_) => "evaluate",
            Command::Inspect(_) => "inspect",
        }
    }

    fn default_manifest(&self) -> Option<PathBuf> {
        match self {
            Command::Synth(a) => Some(a.out.join("manifest.json")),
            Command::Train(a) => Some(a.out.with_extension("manifest.json")),
            Command::Predict(a) => Some(a.out.join("manifest.json")),
            Command::Transfer(a) => Some(a.out.join("manifest.json")),
            Command::Evaluate(a) => Some(a.report.with_extension("manifest.json")),
            Command::Inspect(_) => None,
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
}

fn report_error(class: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error_class": class, "message": message }));
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            report_error("usage", &e.kind().to_string());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    init_logging(cli.verbose, cli.quiet);

    let manifest_path = cli.manifest.clone().or_else(|| cli.command.default_manifest());
    let mut manifest = RunManifest::new(cli.command.name(), argv);
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a, &mut manifest),
        Command::Train(a) => commands::train(a, &mut manifest),
        Command::Predict(a) => commands::predict(a, &mut manifest),
        Command::Transfer(a) => commands::transfer(a, &mut manifest),
        Command::Evaluate(a) => commands::evaluate(a, &mut manifest),
        Command::Inspect(a) => commands::inspect(a),
    };

    let code = match &result {
        Ok(()) if matches!(manifest.status, RunStatus::Partial) => {
            let failed = manifest.tiles.iter().filter(|t| !t.ok).count();
            report_error("partial", &format!("{failed} tile(s) failed; see the manifest"));
            EXIT_PARTIAL
        }
        Ok(()) => 0,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(ErrorRecord { class: e.class().to_string(), message: e.to_string() });
            report_error(e.class(), &e.to_string());
            exit_code(e.class())
        }
    };
    if let Some(path) = manifest_path {
        if let Err(e) = manifest.write(&path) {
            report_error("io", &format!("could not write manifest {}: {e}", path.display()));
            return ExitCode::from(if code == 0 { exit_code("io") } else { code });
        }
    }
    ExitCode::from(code)
}
