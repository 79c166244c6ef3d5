use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plumbline::distortion::DistortionParams;
use plumbline_cli::commands::{cmd_calibrate, cmd_detect, cmd_eval, cmd_export, cmd_synth, write_json};
use plumbline_cli::server::{serve, AppState};
use plumbline_cli::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(name = "plumbline", version, about = "Straight edge-segment detection and plumb-line calibration")]
struct Cli {
    /// Pipeline configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect candidate straight edge-segments, one segment file per image
    Detect {
        /// Output directory (default: paths.output, then the current directory)
        #[arg(long)]
        out: Option<PathBuf>,
        images: Vec<PathBuf>,
    },
    /// Estimate distortion from the segments of one or more segment files
    Calibrate {
        #[arg(long, default_value = "calibration.json")]
        out: PathBuf,
        files: Vec<PathBuf>,
    },
    /// Score detections against ground truth and draw overlays
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        detected: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        truth: Vec<PathBuf>,
        /// Directory the images are found in (default: next to the truth files)
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Write confirmed-only copies of a dataset's segment files
    Export {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the review API and UI assets for a dataset directory
    Serve {
        dataset: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Render the built-in synthetic scene with its ground truth
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = -0.25, allow_negative_numbers = true)]
        k1: f64,
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        k2: f64,
        #[arg(long, default_value_t = 1024)]
        width: u32,
        #[arg(long, default_value_t = 768)]
        height: u32,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Detect { out, images } => {
            let images = if images.is_empty() {
                cfg.paths.input.clone().into_iter().collect()
            } else {
                images
            };
            let out = out.or_else(|| cfg.paths.output.clone()).unwrap_or_else(|| PathBuf::from("."));
            for path in cmd_detect(&images, &out, &cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Calibrate { out, files } => {
            let report = cmd_calibrate(&files, &cfg)?;
            write_json(&out, &report)?;
            println!(
                "k1 = {:.6}, k2 = {:.6}, {} of {} segments inlying",
                report.params.k1, report.params.k2, report.inliers, report.segments
            );
        }
        Command::Eval {
            detected,
            truth,
            images,
            out,
        } => {
            let agg = cmd_eval(&detected, &truth, images.as_deref(), &out, &cfg)?;
            let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
            println!(
                "tp {} fp {} fn {} precision {} recall {}",
                agg.tp,
                agg.fp,
                agg.fn_,
                fmt(agg.precision),
                fmt(agg.recall)
            );
        }
        Command::Export { dataset, out } => {
            for path in cmd_export(&dataset, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Serve { dataset, port, assets } => serve_blocking(&dataset, port, assets)?,
        Command::Synth {
            out,
            k1,
            k2,
            width,
            height,
        } => {
            let params = DistortionParams {
                k1,
                k2,
                ..DistortionParams::identity(width, height)
            };
            let (image, truth) = cmd_synth(&out, &params)?;
            println!("{}\n{}", image.display(), truth.display());
        }
    }
    Ok(())
}

fn serve_blocking(dataset: &Path, port: u16, assets: Option<PathBuf>) -> Result<(), CliError> {
    let state = AppState::load(dataset)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        println!("serving {} on http://{}", dataset.display(), listener.local_addr()?);
        serve(listener, state, assets).await
    })?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
