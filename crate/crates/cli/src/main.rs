use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bsst_cli::commands::{self, FlopsRequest, RunInputs, RunRequest};
use bsst_cli::media::FrameFormat;
use bsst_cli::{CliError, Result};
use bsst_core::AttentionMode;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "bsst",
    version,
    about = "Blur-aware sparse video transformer forward pass"
)]
struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic moving-box clip with its feature-resolution flows.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write blur maps as PGM plus per-frame statistics.
    Blurmap {
        #[arg(
            long,
            conflicts_with = "synthetic",
            required_unless_present = "synthetic"
        )]
        flows: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full forward pass over a directory of frames.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "from_manifest")]
        frames: Option<PathBuf>,
        #[arg(long, required_unless_present = "from_manifest")]
        flows: Option<PathBuf>,
        /// Output directory; with --from-manifest, defaults to the recorded one.
        #[arg(long, required_unless_present = "from_manifest")]
        out: Option<PathBuf>,
        /// Weight snapshot directory; seeded weights when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "png")]
        format: FrameFormat,
        /// Repeat a previous run from its manifest.
        #[arg(long, conflicts_with_all = ["config", "frames", "flows", "weights"])]
        from_manifest: Option<PathBuf>,
    },
    /// Transformer MAC sweep as CSV, assuming every window is blurry.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "12,24,36,48")]
        frames: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "dense,sparse")]
        modes: Vec<String>,
        /// Token grid `M,N`; one window when absent.
        #[arg(long, value_delimiter = ',')]
        tokens: Option<Vec<usize>>,
        /// Also run small counted forwards and append their rows.
        #[arg(long)]
        instrumented: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer window and query-token selection for a flow directory.
    SparsityStats {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<AttentionMode> {
    match s {
        "dense" => Ok(AttentionMode::Dense),
        "sparse" => Ok(AttentionMode::Sparse),
        other => Err(CliError::Usage(format!(
            "unknown mode {other:?}, expected dense or sparse"
        ))),
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BSST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!("BSST_THREADS={raw:?} is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<Value> {
    init_threads()?;
    let seed = cli.seed;
    match cli.command {
        Command::Synth { spec, out } => commands::cmd_synth(&spec, &out),
        Command::Blurmap {
            flows,
            synthetic,
            out,
        } => commands::cmd_blurmap(flows.as_deref(), synthetic.as_deref(), &out),
        Command::Run {
            config,
            frames,
            flows,
            out,
            weights,
            format,
            from_manifest,
        } => {
            let mut req = match from_manifest {
                Some(path) => RunRequest::from_manifest(&path, out)?,
                None => RunRequest {
                    config: commands::load_config(config.as_deref(), None)?,
                    inputs: RunInputs {
                        config,
                        frames: frames.expect("required by clap"),
                        flows: flows.expect("required by clap"),
                        weights,
                    },
                    out: out.expect("required by clap"),
                    format,
                },
            };
            if let Some(s) = seed {
                req.config.seed = s;
            }
            let manifest = commands::cmd_run(&req)?;
            Ok(
                json!({ "out": manifest.out, "outputs": manifest.outputs.len(), "seed": manifest.seed }),
            )
        }
        Command::Flops {
            config,
            frames,
            modes,
            tokens,
            instrumented,
            out,
        } => {
            let req = FlopsRequest {
                config: commands::load_config(config.as_deref(), seed)?,
                frames,
                modes: modes.iter().map(|m| parse_mode(m)).collect::<Result<_>>()?,
                tokens: match tokens.as_deref() {
                    None => None,
                    Some(&[m, n]) => Some([m, n]),
                    Some(other) => {
                        return Err(CliError::Usage(format!(
                            "--tokens wants M,N, got {other:?}"
                        )))
                    }
                },
                instrumented,
            };
            match out {
                Some(path) => {
                    let file = File::create(&path).map_err(CliError::io(&path))?;
                    let mut w = BufWriter::new(file);
                    let reports = commands::cmd_flops(&req, &mut w)?;
                    w.flush().map_err(CliError::io(&path))?;
                    Ok(json!({ "rows": reports.len(), "out": path }))
                }
                None => {
                    commands::cmd_flops(&req, &mut io::stdout().lock())?;
                    Ok(Value::Null)
                }
            }
        }
        Command::SparsityStats { config, flows, out } => {
            let config = commands::load_config(config.as_deref(), seed)?;
            let stats = commands::cmd_sparsity_stats(&config, &flows)?;
            match out {
                Some(path) => {
                    let text =
                        serde_json::to_string_pretty(&stats).map_err(CliError::json(&path))?;
                    std::fs::write(&path, text).map_err(CliError::io(&path))?;
                    Ok(json!({ "out": path }))
                }
                None => Ok(stats),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(summary) => {
            // a closed pipe (e.g. `| head`) is not a failure
            let _ = writeln!(io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
