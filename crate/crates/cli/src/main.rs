use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isoseq_cli::{cmd_annotate, cmd_inspect, cmd_latent_grid, cmd_synth, cmd_train, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "isoseq", version, about = "Isovist sequences, VAE training and latent trajectory annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all commands. Any flag given here overrides the value
/// from `--config`.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// `key = value` configuration file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Floor plan (PNG/PGM image or IGRD grid); repeat for several maps
    #[arg(long = "map")]
    maps: Vec<PathBuf>,
    #[arg(long)]
    map_scale: Option<f64>,
    /// Frames per sequence (odd)
    #[arg(long)]
    t: Option<usize>,
    /// Spacing between frames in trajectory steps
    #[arg(long)]
    s: Option<usize>,
    /// Isovist radius in cells
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Random trajectories per map
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Latent samples in a latent grid
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<f64>,
    /// Pixels per cell in overlays
    #[arg(long)]
    scale: Option<u32>,
    /// Run every loop on the calling thread
    #[arg(long)]
    sequential: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if !self.maps.is_empty() {
            cfg.maps = self.maps.clone();
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(map_scale => map_scale, t => t, s => s, radius => radius, latent => latent, hidden => hidden,
             beta => beta, epochs => epochs, batch_size => batch_size, learning_rate => learning_rate,
             trajectories => trajectories, out_dir => out_dir, k => grid_k, lo => grid_lo, hi => grid_hi,
             scale => overlay_scale);
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.sequential {
            cfg.parallel = false;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories on floor plans and write an isovist-sequence dataset
    Synth {
        #[command(flatten)]
        opts: Overrides,
        /// Dataset file [default: <out_dir>/dataset.isq]
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Train a model on a dataset; writes a checkpoint and a loss log
    Train {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint file [default: <out_dir>/model.ivae]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Loss log [default: <out_dir>/loss.log]
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Colour hand-drawn trajectories by their latent codes
    Annotate {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trajectory text file (`x,y` per line); repeatable
        #[arg(long = "trajectory", required = true)]
        walks: Vec<PathBuf>,
        /// Overlay PNG [default: <out_dir>/overlay.png]; the sidecar goes next to it as .txt
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Decode evenly spaced latent values into a strip image
    LatentGrid {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Strip PNG [default: <out_dir>/latent_grid.png]
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print the header of dataset, checkpoint or map files
    Inspect { files: Vec<PathBuf> },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { opts, output } => {
            let cfg = opts.resolve()?;
            let out = output.unwrap_or_else(|| cfg.out_dir.join("dataset.isq"));
            let s = cmd_synth(&cfg, &out)?;
            println!(
                "{} maps, {} trajectories ({} too short), {} sequences -> {}",
                s.maps,
                s.trajectories,
                s.skipped,
                s.sequences,
                out.display()
            );
        }
        Command::Train { opts, dataset, checkpoint, loss_log } => {
            let cfg = opts.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join("model.ivae"));
            let log = loss_log.unwrap_or_else(|| cfg.out_dir.join("loss.log"));
            let s = cmd_train(&cfg, &dataset, &ckpt, &log)?;
            if let Some(last) = s.trace.last() {
                println!(
                    "trained {} parameters on {} sequences; epoch {} loss {:.5} (bce {:.5}, kl {:.4})",
                    s.parameters, s.sequences, last.epoch, last.loss, last.bce, last.kl
                );
            }
            println!("checkpoint -> {}, loss log -> {}", ckpt.display(), log.display());
        }
        Command::Annotate { opts, checkpoint, walks, output } => {
            let cfg = opts.resolve()?;
            let map = cfg
                .maps
                .first()
                .cloned()
                .ok_or_else(|| CliError::Usage("no map given (set `map` or pass --map)".into()))?;
            let out = output.unwrap_or_else(|| cfg.out_dir.join("overlay.png"));
            let s = cmd_annotate(&cfg, &checkpoint, &map, &walks, &out)?;
            println!("{} points -> {}, {}", s.points, out.display(), s.sidecar.display());
        }
        Command::LatentGrid { opts, checkpoint, output } => {
            let cfg = opts.resolve()?;
            let out = output.unwrap_or_else(|| cfg.out_dir.join("latent_grid.png"));
            let k = cmd_latent_grid(&cfg, &checkpoint, &out)?;
            println!("{k} latent samples -> {}", out.display());
        }
        Command::Inspect { files } => {
            if files.is_empty() {
                return Err(CliError::Usage("no files to inspect".into()));
            }
            for f in files {
                print!("{}", cmd_inspect(&f)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
