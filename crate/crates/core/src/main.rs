use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trajex::config::parse_config;
use trajex::frame_io::{load_sequence, FrameSequence};
use trajex::pipeline::{
    self, exit, make_tracker, run_pipeline, stage_filter, stage_interpolate, stage_propose, stage_retarget,
    stage_track, PipelineError, TrackerChoice,
};
use trajex::proposal::http::ChatCompletionsBackend;
use trajex::proposal::mock::MockBackend;
use trajex::proposal::{ProposalBackend, ProposalError};
use trajex::trajstore::{
    self, export_csv, export_end_effector_csv, load_bundle, render_overlay, save_bundle, ImageFormat,
};
use trajex::PipelineConfig;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (bundle schema 1)");

#[derive(Parser)]
#[command(name = "trajex", version = VERSION, about = "Keypoint trajectory extraction from manipulation videos")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    /// Answer model queries from a fixture file instead of the network.
    #[arg(long, value_name = "FIXTURE")]
    mock_backend: Option<PathBuf>,
}

#[derive(Args)]
struct TrackerArgs {
    /// Run tracking in a child process (program and arguments).
    #[arg(long, value_name = "CMD", num_args = 1.., allow_hyphen_values = true)]
    tracker_cmd: Option<Vec<String>>,
}

impl TrackerArgs {
    fn choice(&self) -> TrackerChoice {
        self.tracker_cmd.clone().map_or(TrackerChoice::Builtin, TrackerChoice::External)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline; writes OUT/bundle.json.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        tracker: TrackerArgs,
    },
    /// Seed selection and keypoint proposal into a new bundle.
    Propose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Forward and backward tracking of a proposed bundle.
    Track {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tracker: TrackerArgs,
    },
    /// Cycle-consistency filtering.
    Filter {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gap interpolation (and smoothing if configured).
    Interp {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wrist retargeting and resampling.
    Retarget {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Overlay tracks on the frames.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write PNG instead of PPM.
        #[arg(long)]
        png: bool,
    },
    /// Track table as CSV.
    Export {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the end-effector trajectory here.
        #[arg(long, value_name = "CSV")]
        end_effector: Option<PathBuf>,
    },
    /// Serve the built-in tracker over stdin/stdout.
    #[command(hide = true)]
    ServeTracker {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn backend(args: &BackendArgs, cfg: &PipelineConfig) -> Result<Box<dyn ProposalBackend>, PipelineError> {
    let b: Box<dyn ProposalBackend> = match &args.mock_backend {
        Some(path) => Box::new(MockBackend::from_path(path).map_err(ProposalError::from)?),
        None => Box::new(ChatCompletionsBackend::from_env(&cfg.backend).map_err(ProposalError::from)?),
    };
    Ok(b)
}

fn sequence_for(input: &Path, bundle: &trajstore::TrajectoryBundle) -> Result<FrameSequence, PipelineError> {
    Ok(load_sequence(input, &bundle.config)?)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Run { input, config, out, backend: b, tracker } => {
            let cfg = parse_config(&config)?;
            let backend = backend(&b, &cfg)?;
            let bundle = run_pipeline(&input, &cfg, &out, backend.as_ref(), &tracker.choice())?;
            log::info!("wrote {} ({} tracks)", out.join(pipeline::BUNDLE_FILE).display(), bundle.tracks.len());
        }
        Command::Propose { input, config, out, backend: b } => {
            let cfg = parse_config(&config)?;
            let backend = backend(&b, &cfg)?;
            let seq = load_sequence(&input, &cfg)?;
            save_bundle(&stage_propose(&seq, backend.as_ref(), &cfg)?, &out)?;
        }
        Command::Track { input, bundle, out, tracker } => {
            let bundle = load_bundle(&bundle)?;
            let seq = sequence_for(&input, &bundle)?;
            let t = make_tracker(&tracker.choice(), &seq, &bundle.config)?;
            save_bundle(&stage_track(&seq, bundle, t.as_ref())?, &out)?;
        }
        Command::Filter { bundle, out } => save_bundle(&stage_filter(load_bundle(&bundle)?)?, &out)?,
        Command::Interp { bundle, out } => save_bundle(&stage_interpolate(load_bundle(&bundle)?)?, &out)?,
        Command::Retarget { bundle, out } => save_bundle(&stage_retarget(load_bundle(&bundle)?)?, &out)?,
        Command::Render { input, bundle, out, png } => {
            let bundle = load_bundle(&bundle)?;
            let seq = sequence_for(&input, &bundle)?;
            let format = if png { ImageFormat::Png } else { ImageFormat::Ppm };
            let n = render_overlay(&seq, &bundle, &out, &bundle.config, format)?;
            log::info!("rendered {n} frames into {}", out.display());
        }
        Command::Export { bundle, out, end_effector } => {
            let bundle = load_bundle(&bundle)?;
            export_csv(&bundle, &out)?;
            if let Some(path) = end_effector {
                let traj = bundle
                    .end_effector
                    .as_ref()
                    .ok_or_else(|| PipelineError::Usage("bundle has no end-effector trajectory".into()))?;
                export_end_effector_csv(traj, &path)?;
            }
        }
        Command::ServeTracker { input, config } => {
            let cfg = parse_config(&config)?;
            let seq = load_sequence(&input, &cfg)?;
            trajex::tracker::external::serve(
                &seq,
                &cfg.tracker,
                BufReader::new(io::stdin().lock()),
                io::stdout().lock(),
            )
            .map_err(|e| trajstore::StoreError::Io { path: PathBuf::from("<stdio>"), reason: e.to_string() })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRAJEX_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(exit::IO as u8);
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
