//! Command implementations behind the `isoseq` binary. Each command is a
//! function of a [`RunConfig`] and explicit input/output paths, so the same
//! code drives the binary and the test suites.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use isoseq::annotate::{self, AnnotateError};
use isoseq::exec::mix_seed;
use isoseq::gridworld::{self, GridError, OccupancyGrid};
use isoseq::neuralnet::Parameters;
use isoseq::pathgen::{parse_trajectory_text, sample_random_trajectories, PathError, Trajectory};
use isoseq::sequences::{extract_sequences, Dataset, SequenceError, SequenceParams, DATASET_MAGIC};
use isoseq::vae::{self, EpochStats, TrainConfig, VaeConfig, VaeError, VaeModel, CHECKPOINT_MAGIC};

pub use config::RunConfig;

/// Failure of a command, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Input files that are malformed or inconsistent (exit 3).
    #[error("{0}")]
    Data(String),
    /// Files that cannot be read or written (exit 4).
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(io_err(path))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn data(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn vae_err(path: &Path, e: VaeError) -> CliError {
    match e {
        VaeError::InvalidConfig(m) => CliError::Usage(m),
        other => data(path, other),
    }
}

fn annotate_err(path: &Path, e: AnnotateError) -> CliError {
    match e {
        AnnotateError::InvalidCount(_) | AnnotateError::InvalidRange(..) | AnnotateError::InvalidScale => {
            CliError::Usage(e.to_string())
        }
        AnnotateError::Model(v) => vae_err(path, v),
        other => data(path, other),
    }
}

pub fn load_grid(path: &Path, scale: f64) -> Result<OccupancyGrid, CliError> {
    let bytes = read(path)?;
    gridworld::load_map_scaled(&bytes, scale).map_err(|e| match e {
        GridError::BadScale(_) => CliError::Usage(e.to_string()),
        other => data(path, other),
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::from_bytes(&read(path)?).map_err(|e| data(path, e))
}

pub fn load_model(path: &Path) -> Result<VaeModel, CliError> {
    VaeModel::from_bytes(&read(path)?).map_err(|e| vae_err(path, e))
}

/// Hand-drawn trajectory file: one `x,y` waypoint per line. Waypoints that
/// are not neighbours are joined by straight cell lines.
pub fn load_trajectory(path: &Path, grid: &OccupancyGrid) -> Result<Trajectory, CliError> {
    let text = String::from_utf8(read(path)?).map_err(|e| data(path, e))?;
    let points = parse_trajectory_text(&text).map_err(|e| data(path, e))?;
    Trajectory::from_waypoints(&points, grid).map_err(|e: PathError| data(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthSummary {
    pub maps: usize,
    pub trajectories: usize,
    /// Sampled trajectories shorter than the sequence footprint.
    pub skipped: usize,
    pub sequences: usize,
}

/// Floor plans → random trajectories → isovist sequences → ISQ1 file.
pub fn cmd_synth(cfg: &RunConfig, output: &Path) -> Result<SynthSummary, CliError> {
    let seed = cfg.seed()?;
    let params = cfg.sequence_params()?;
    if cfg.maps.is_empty() {
        return Err(CliError::Usage("no map given (set `map` or pass --map)".into()));
    }
    if cfg.trajectories == 0 {
        return Err(CliError::Usage("trajectories must be positive".into()));
    }
    let exec = cfg.exec();
    let mut dataset = Dataset::for_params(params);
    let mut summary = SynthSummary { maps: cfg.maps.len(), trajectories: 0, skipped: 0, sequences: 0 };
    for (i, path) in cfg.maps.iter().enumerate() {
        let grid = load_grid(path, cfg.map_scale)?;
        let trajs = sample_random_trajectories(&grid, cfg.trajectories, mix_seed(seed, i as u64), exec)
            .map_err(|e| data(path, e))?;
        for traj in &trajs {
            summary.trajectories += 1;
            match extract_sequences(traj, &grid, params, exec) {
                Ok(seqs) => dataset.extend(&seqs).map_err(|e| data(path, e))?,
                Err(SequenceError::TrajectoryTooShort { .. }) => summary.skipped += 1,
                Err(e) => return Err(data(path, e)),
            }
        }
    }
    summary.sequences = dataset.len();
    write(output, &dataset.to_bytes())?;
    Ok(summary)
}

pub fn format_loss_line(s: &EpochStats) -> String {
    format!("{} {} {} {}\n", s.epoch, s.loss, s.bce, s.kl)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub trace: Vec<EpochStats>,
    pub sequences: usize,
    pub parameters: usize,
}

/// Trains a fresh model on a dataset. After every epoch the checkpoint is
/// rewritten and a `epoch loss bce kl` line is appended to the loss log.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoint: &Path,
    loss_log: &Path,
) -> Result<TrainSummary, CliError> {
    let seed = cfg.seed()?;
    let ds = load_dataset(dataset)?;
    let model_cfg =
        VaeConfig { t: cfg.t, window: 2 * cfg.radius + 1, hidden: cfg.hidden, latent: cfg.latent, beta: cfg.beta };
    let mut model = VaeModel::new(model_cfg, seed).map_err(|e| vae_err(dataset, e))?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed,
        exec: cfg.exec(),
    };
    write(loss_log, b"# epoch loss bce kl\n")?;
    let mut log = String::from("# epoch loss bce kl\n");
    let mut io_failure = None;
    let result = vae::train(&mut model, &ds, &train_cfg, |m, stats| {
        log.push_str(&format_loss_line(stats));
        let saved = write(checkpoint, &m.to_bytes()).and_then(|_| write(loss_log, log.as_bytes()));
        saved.map_err(|e| {
            let msg = e.to_string();
            io_failure = Some(e);
            VaeError::Format(msg)
        })
    });
    if let Some(e) = io_failure {
        return Err(e);
    }
    let trace = result.map_err(|e| vae_err(dataset, e))?;
    if trace.is_empty() {
        write(checkpoint, &model.to_bytes())?;
    }
    Ok(TrainSummary { trace, sequences: ds.len(), parameters: model.param_count() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotateSummary {
    pub points: usize,
    pub sidecar: PathBuf,
}

/// Colours hand-drawn trajectories by their latent codes; writes an overlay
/// PNG and a `.txt` sidecar next to it.
pub fn cmd_annotate(
    cfg: &RunConfig,
    checkpoint: &Path,
    map: &Path,
    trajectories: &[PathBuf],
    output: &Path,
) -> Result<AnnotateSummary, CliError> {
    if trajectories.is_empty() {
        return Err(CliError::Usage("no trajectory files given".into()));
    }
    let model = load_model(checkpoint)?;
    let grid = load_grid(map, cfg.map_scale)?;
    let mc = model.config();
    let params = SequenceParams::new(mc.t, cfg.s, (mc.window - 1) / 2).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut trajs = Vec::with_capacity(trajectories.len());
    for path in trajectories {
        let traj = load_trajectory(path, &grid)?;
        if traj.len() < params.footprint() {
            return Err(data(
                path,
                format!(
                    "trajectory has {} points, fewer than the sequence footprint {}",
                    traj.len(),
                    params.footprint()
                ),
            ));
        }
        trajs.push(traj);
    }
    let points =
        annotate::annotate_trajectories(&model, &grid, &trajs, params, cfg.exec()).map_err(|e| annotate_err(map, e))?;
    let png = annotate::render_overlay(&grid, &points, cfg.overlay_scale).map_err(|e| annotate_err(map, e))?;
    write(output, &png)?;
    let sidecar = output.with_extension("txt");
    write(&sidecar, annotate::format_sidecar(&points).as_bytes())?;
    Ok(AnnotateSummary { points: points.len(), sidecar })
}

/// Strip of decoded sequences at evenly spaced latent values.
pub fn cmd_latent_grid(cfg: &RunConfig, checkpoint: &Path, output: &Path) -> Result<usize, CliError> {
    if cfg.grid_k < 2 {
        return Err(CliError::Usage(format!("latent grid needs at least 2 samples, got {}", cfg.grid_k)));
    }
    let model = load_model(checkpoint)?;
    let png = annotate::render_latent_grid(&model, cfg.grid_k, cfg.grid_lo, cfg.grid_hi)
        .map_err(|e| annotate_err(checkpoint, e))?;
    write(output, &png)?;
    Ok(cfg.grid_k)
}

/// Human-readable header of a dataset, checkpoint, grid or floor-plan file.
pub fn cmd_inspect(path: &Path) -> Result<String, CliError> {
    let bytes = read(path)?;
    let mut out = format!("{}\n", path.display());
    if bytes.starts_with(DATASET_MAGIC) {
        let ds = Dataset::from_bytes(&bytes).map_err(|e| data(path, e))?;
        let h = ds.header();
        let _ = writeln!(out, "  dataset: t={} s={} window={} sequences={}", h.t, h.s, h.window, h.count);
    } else if bytes.starts_with(CHECKPOINT_MAGIC) {
        let m = VaeModel::from_bytes(&bytes).map_err(|e| vae_err(path, e))?;
        let c = m.config();
        let _ = writeln!(
            out,
            "  checkpoint: t={} window={} hidden={} latent={} beta={} parameters={}",
            c.t,
            c.window,
            c.hidden,
            c.latent,
            c.beta,
            m.param_count()
        );
    } else {
        let g = gridworld::load_map(&bytes).map_err(|e| data(path, e))?;
        let _ = writeln!(out, "  grid: {}x{} floor={}", g.width(), g.height(), g.floor_count());
    }
    Ok(out)
}
