use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use drumcritic::audio::synth::write_synth_library;
use drumcritic::session::ProxyRater;
use drumcritic_service::{api, commands, ServiceConfig};

#[derive(Parser)]
#[command(name = "drumcritic", version, about = "Drum loop preference learning: server and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API (and the client bundle, if `static_dir` is set).
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run complete proxy-rated sessions and report theta per seed.
    Simulate {
        /// always_like, always_dislike or density
        #[arg(long, default_value = "density")]
        proxy: String,
        /// Number of seeds, run as first-seed, first-seed + 1, ...
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the JSON summary here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Rank loops by the mean score of several critics and export the extremes.
    Rank {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        loops: PathBuf,
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(long, default_value_t = 5)]
        bottom: usize,
        #[arg(long, default_value = "ranked")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-render every loop of a persisted session to WAV.
    Export {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
    /// Write the synthetic sample kit as WAV files.
    MakeLibrary {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        per_kind: usize,
        #[arg(long, default_value_t = 4)]
        harsh: usize,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the fully resolved configuration as TOML.
    Dump {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>) -> Result<ServiceConfig> {
    ServiceConfig::load(path.map(PathBuf::as_path)).context("loading configuration")
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { config } => {
            let cfg = load(config.as_ref())?;
            let library = cfg.library().context("loading the sample library")?;
            tokio::runtime::Runtime::new()?
                .block_on(api::serve(cfg, library))
                .context("server failed")?;
        }
        Command::Simulate {
            proxy,
            seeds,
            first_seed,
            config,
            json,
        } => {
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let cfg = load(config.as_ref())?;
            let rater = ProxyRater::by_name(&proxy)?;
            let list: Vec<u64> = (first_seed..first_seed + seeds).collect();
            let summary = commands::simulate(&cfg, &rater, &list, |_, row| {
                eprintln!(
                    "seed {}: theta_init {:.3} theta_final {:.3} delta {:+.3}",
                    row.seed, row.theta_init, row.theta_final, row.delta_theta
                );
            })?;
            print!("{}", commands::format_table(&summary));
            let text = serde_json::to_string_pretty(&summary)?;
            println!("{text}");
            if let Some(path) = json {
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Rank {
            checkpoints,
            loops,
            top,
            bottom,
            out,
            config,
        } => {
            let cfg = load(config.as_ref())?;
            let rows = commands::rank(&cfg, &checkpoints, &loops, top, bottom, &out)?;
            for r in &rows {
                let wav = r.wav.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
                println!("{:>4}  {:.6}  {}  {}", r.rank, r.mean_score, r.loop_id, wav);
            }
        }
        Command::Export { session, out, config } => {
            let cfg = load(config.as_ref())?;
            let written = commands::export(&cfg, &session, out.as_deref())?;
            println!("wrote {} WAV files", written.len());
        }
        Command::Config {
            action: ConfigAction::Dump { config },
        } => {
            print!("{}", load(config.as_ref())?.to_toml());
        }
        Command::MakeLibrary {
            out,
            seed,
            per_kind,
            harsh,
        } => {
            let ids = write_synth_library(&out, seed, per_kind, harsh)?;
            println!("wrote {} samples to {}", ids.len(), out.display());
        }
    }
    Ok(())
}
