//! `coopsim` command-line entry point.
//!
//! Exit codes: 0 success, 1 internal failure, 2 invalid scenario or missing
//! inputs, 3 file-system failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coopsim::pipeline::{
    run_pipeline, simulate, summary_text, PipelineError, PipelineOptions, PipelineSelector,
    StageOrder,
};
use coopsim::scenario::{bundled_names, load_bundled, load_scenario, ScenarioConfig};
use coopsim::stream_export::server;

#[derive(Parser)]
#[command(
    name = "coopsim",
    version,
    about = "Vehicle–road cooperative perception simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate LiDAR sweeps and write KITTI-layout directories per sensor.
    Simulate {
        /// Scenario file, or `builtin:NAME` for a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Detect, fuse, track, evaluate and export a scene.
    Pipeline {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "both")]
        pipeline: PipelineSelector,
        /// fuse_then_track or track_then_fuse, for the cooperative variant.
        #[arg(long, default_value = "fuse_then_track")]
        order: StageOrder,
        /// Read sweeps and oxts from a `simulate` output instead of scanning.
        #[arg(long)]
        sim_dir: Option<PathBuf>,
        /// External detections as `{dir}/{sensor}/label/0000.txt`; skips the detector.
        #[arg(long)]
        labels_dir: Option<PathBuf>,
        /// Consecutive frames a target must be matched to count as detected.
        #[arg(long, default_value_t = 1)]
        sustain: usize,
        /// Extra copy of the machine-readable report.
        #[arg(long)]
        report_json: Option<PathBuf>,
        /// Extra copy of the text summary.
        #[arg(long)]
        report_text: Option<PathBuf>,
    },
    /// Serve an exported scene over HTTP until Ctrl-C.
    Serve {
        /// Scene directory (holding manifest.json).
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 8030)]
        port: u16,
    },
    /// Parse and check a scenario.
    Validate {
        #[arg(long)]
        scenario: String,
    },
}

enum Failure {
    Input(String),
    Io(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Input(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Io(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            match e {
                PipelineError::Scenario(_)
                | PipelineError::MissingInput(_)
                | PipelineError::Config(_) => Failure::Input(e.to_string()),
                PipelineError::Kitti { .. } | PipelineError::Perception(_) => {
                    Failure::Input(e.to_string())
                }
                other => Failure::Internal(other.to_string()),
            }
        }
    }
}

fn load(source: &str) -> Result<ScenarioConfig, Failure> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return load_bundled(name).map_err(|e| {
            let names: Vec<_> = bundled_names().collect();
            Failure::Input(format!("{e} (available: {})", names.join(", ")))
        });
    }
    let text = std::fs::read_to_string(source)
        .map_err(|e| Failure::Input(format!("cannot read scenario {source}: {e}")))?;
    load_scenario(&text).map_err(|e| Failure::Input(format!("{source}: {e}")))
}

fn copy_to(src: &Path, dst: Option<&PathBuf>) -> Result<(), Failure> {
    if let Some(dst) = dst {
        std::fs::copy(src, dst).map_err(|e| Failure::Io(format!("{}: {e}", dst.display())))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { scenario } => {
            let config = load(&scenario)?;
            eprintln!(
                "{}: ok ({} actors, {} sensors, {} frames)",
                config.name,
                config.actors.len(),
                config.sensors.len(),
                config.frame_count
            );
        }
        Command::Simulate {
            scenario,
            out,
            seed,
        } => {
            let config = load(&scenario)?;
            let seed = seed.unwrap_or(config.seed);
            let summary = simulate(&config, &out, seed)?;
            eprintln!(
                "simulated {} frames for {} into {} (mean simulate {:.2} ms/frame)",
                summary.frames,
                summary.sensors.join(", "),
                out.display(),
                summary.mean_simulate_seconds * 1e3
            );
        }
        Command::Pipeline {
            scenario,
            out,
            seed,
            pipeline,
            order,
            sim_dir,
            labels_dir,
            sustain,
            report_json,
            report_text,
        } => {
            let config = load(&scenario)?;
            for dir in sim_dir.iter().chain(&labels_dir) {
                if !dir.is_dir() {
                    return Err(Failure::Input(format!(
                        "missing input directory {}",
                        dir.display()
                    )));
                }
            }
            let options = PipelineOptions {
                selector: pipeline,
                order,
                seed: seed.unwrap_or(config.seed),
                sim_dir,
                labels_dir,
                sustain,
                ..PipelineOptions::default()
            };
            let report = run_pipeline(&config, &options, &out)?;
            copy_to(&out.join("metrics/report.json"), report_json.as_ref())?;
            copy_to(&out.join("metrics/summary.txt"), report_text.as_ref())?;
            eprint!("{}", summary_text(&report));
        }
        Command::Serve { dir, port } => {
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
            runtime.block_on(async {
                let router = server::router(&dir)
                    .map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
                let listener = server::bind(([0, 0, 0, 0], port).into())
                    .await
                    .map_err(|e| Failure::Io(e.to_string()))?;
                eprintln!(
                    "serving {} on http://{}",
                    dir.display(),
                    listener
                        .local_addr()
                        .map_err(|e| Failure::Io(e.to_string()))?
                );
                server::serve_with_shutdown(router, listener, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
                .map_err(|e| Failure::Internal(e.to_string()))
            })?;
            eprintln!("shut down");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
