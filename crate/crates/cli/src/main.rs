//! `ankle-msk`: EMG-driven ankle torque estimation. Calibrate MVC constants,
//! fit model parameters, predict and evaluate torque, generate synthetic
//! trials, and run the streaming controller service.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

mod commands;
mod table;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "ankle-msk",
    version,
    about = "EMG-driven ankle torque estimation and streaming control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate MVC normalization constants from a maximal-effort recording
    Mvc(MvcArgs),
    /// Fit model parameters to recorded trials by multi-start optimization
    Fit(FitArgs),
    /// Predict ankle torque for a trial with a fitted model
    Predict(PredictArgs),
    /// Score a prediction against the reference torque
    Eval(EvalArgs),
    /// Generate a synthetic trial with known ground truth
    Synth(SynthArgs),
    /// Run the streaming controller service over TCP
    Serve(ServeArgs),
    /// Stream a recorded trial through a running service
    Replay(ReplayArgs),
}

#[derive(Args)]
pub struct MvcArgs {
    /// Calibration trial CSV with three separated maximal bursts per channel
    #[arg(long)]
    pub data: PathBuf,
    /// Output MVC document (TOML)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// Training trial CSV; repeat the flag to fit several trials jointly
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Output model document (TOML)
    #[arg(long)]
    pub out: PathBuf,
    /// Fit report path (default: the model path with a .report.toml extension)
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// MVC calibration baked into the fitted model's pipeline
    #[arg(long)]
    pub mvc: Option<PathBuf>,
    /// Number of optimization starts
    #[arg(long, default_value_t = 64)]
    pub starts: usize,
    /// Seed for start placement; fixed default, never time-based
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Also fit the shared activation shape factor
    #[arg(long)]
    pub fit_shape: bool,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Trial CSV to predict over
    #[arg(long)]
    pub data: PathBuf,
    /// Model document (TOML)
    #[arg(long)]
    pub model: PathBuf,
    /// Output prediction CSV (time, tau_pred, a_ta, a_gas)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Reference trial CSV; must contain ankle_torque_ref
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction CSV from `predict` (tau_pred) or `replay` (tau_cmd)
    #[arg(long)]
    pub pred: PathBuf,
    /// Output metrics report (TOML)
    #[arg(long)]
    pub out: PathBuf,
    /// Leading transient excluded from the metrics (ms)
    #[arg(long, default_value_t = 0.0)]
    pub skip_ms: f64,
    /// Repetition boundary source for n_repetitions and --curves
    #[arg(long, value_enum)]
    pub segment: Option<SegmentArg>,
    /// Write mean±SD repetition curves (CSV over the percent axis)
    #[arg(long, requires = "segment")]
    pub curves: Option<PathBuf>,
    /// Task label recorded in the report (default: the data file stem)
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SegmentArg {
    /// Heel strikes from the vertical ground-reaction force
    Grf,
    /// Rising crossings of the mean ankle angle
    Angle,
    /// Nonzero markers in the event column
    Event,
}

impl From<SegmentArg> for ankle_msk::SegmentMethod {
    fn from(arg: SegmentArg) -> Self {
        match arg {
            SegmentArg::Grf => Self::Grf,
            SegmentArg::Angle => Self::Angle,
            SegmentArg::Event => Self::Event,
        }
    }
}

#[derive(Args)]
pub struct SynthArgs {
    /// Model document (TOML); omitted means the built-in parameter set
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Motion/effort profile (TOML); omitted means the built-in profile
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Output trial CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for measurement noise; fixed default, never time-based
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Also write the model document the trial was generated from
    #[arg(long)]
    pub emit_model: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Model document (TOML) to serve
    #[arg(long)]
    pub model: PathBuf,
    /// Control rate (Hz); clients must declare the same rate
    #[arg(long, default_value_t = 1000.0)]
    pub rate: f64,
    /// Bind address
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// TCP port; 0 picks an ephemeral port, printed on stdout
    #[arg(long, default_value_t = 7070)]
    pub port: u16,
    /// Virtual plant behavior
    #[arg(long, value_enum, default_value_t = PlantArg::Torque)]
    pub plant: PlantArg,
    /// Plant actuator lag (ms)
    #[arg(long, default_value_t = 20.0)]
    pub lag_ms: f64,
    /// Plant torque saturation (N·m)
    #[arg(long, default_value_t = 150.0)]
    pub saturation_nm: f64,
    /// Impedance stiffness (N·m/deg)
    #[arg(long, default_value_t = 2.0)]
    pub stiffness: f64,
    /// Impedance neutral angle (deg)
    #[arg(long, default_value_t = 90.0)]
    pub neutral_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantArg {
    /// First-order torque tracking at a fixed angle
    Torque,
    /// Torque tracking plus an impedance angle response
    Impedance,
}

#[derive(Args)]
pub struct ReplayArgs {
    /// Trial CSV to stream
    #[arg(long)]
    pub data: PathBuf,
    /// Service address, host:port
    #[arg(long)]
    pub addr: String,
    /// Output response CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Handshake rate (Hz); defaults to the trial's sample rate
    #[arg(long)]
    pub rate: Option<f64>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("ANKLE_MSK_LOG", "warn"),
    )
    .format_timestamp(None)
    .init();

    let result = match &cli.command {
        Command::Mvc(args) => commands::mvc(args),
        Command::Fit(args) => commands::fit_cmd(args),
        Command::Predict(args) => commands::predict(args),
        Command::Eval(args) => commands::eval(args),
        Command::Synth(args) => commands::synth(args),
        Command::Serve(args) => commands::serve_cmd(args),
        Command::Replay(args) => commands::replay(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
