//! Run configuration as line-oriented `key = value` text.
//!
//! Blank lines and `#` comments are ignored. `map` takes a comma-separated
//! list of paths. Every key is optional in the file except `seed`, which must
//! be set either there or on the command line before a command runs.

use std::fmt;
use std::path::PathBuf;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub maps: Vec<PathBuf>,
    /// Resampling factor applied to floor-plan images on load.
    pub map_scale: f64,
    pub t: usize,
    pub s: usize,
    pub radius: usize,
    pub latent: usize,
    pub hidden: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub trajectories: usize,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Samples along the latent axis for `latent-grid`.
    pub grid_k: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    /// Pixels per grid cell in overlays.
    pub overlay_scale: u32,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            maps: Vec::new(),
            map_scale: 1.0,
            t: 5,
            s: 2,
            radius: 16,
            latent: 1,
            hidden: isoseq::vae::DEFAULT_HIDDEN,
            beta: 1.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            trajectories: 100,
            seed: None,
            out_dir: PathBuf::from("out"),
            grid_k: 25,
            grid_lo: -3.0,
            grid_hi: 3.0,
            overlay_scale: 4,
            parallel: true,
        }
    }
}

const KEYS: &[&str] = &[
    "map",
    "map_scale",
    "t",
    "s",
    "radius",
    "latent",
    "hidden",
    "beta",
    "epochs",
    "batch_size",
    "learning_rate",
    "trajectories",
    "seed",
    "out_dir",
    "grid_k",
    "grid_lo",
    "grid_hi",
    "overlay_scale",
    "parallel",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("config line {line}: `{value}` is not a valid value for `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim(), n + 1)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text value; `line` is used in error messages.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), CliError> {
        match key {
            "map" => self.maps = value.split(',').map(str::trim).filter(|p| !p.is_empty()).map(PathBuf::from).collect(),
            "map_scale" => self.map_scale = parse_num(key, value, line)?,
            "t" => self.t = parse_num(key, value, line)?,
            "s" => self.s = parse_num(key, value, line)?,
            "radius" => self.radius = parse_num(key, value, line)?,
            "latent" => self.latent = parse_num(key, value, line)?,
            "hidden" => self.hidden = parse_num(key, value, line)?,
            "beta" => self.beta = parse_num(key, value, line)?,
            "epochs" => self.epochs = parse_num(key, value, line)?,
            "batch_size" => self.batch_size = parse_num(key, value, line)?,
            "learning_rate" => self.learning_rate = parse_num(key, value, line)?,
            "trajectories" => self.trajectories = parse_num(key, value, line)?,
            "seed" => self.seed = Some(parse_num(key, value, line)?),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "grid_k" => self.grid_k = parse_num(key, value, line)?,
            "grid_lo" => self.grid_lo = parse_num(key, value, line)?,
            "grid_hi" => self.grid_hi = parse_num(key, value, line)?,
            "overlay_scale" => self.overlay_scale = parse_num(key, value, line)?,
            "parallel" => self.parallel = parse_num(key, value, line)?,
            other => {
                return Err(CliError::Usage(format!(
                    "config line {line}: unknown key `{other}` (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Usage("a seed is required (set `seed` in the config or pass --seed)".into()))
    }

    pub fn exec(&self) -> isoseq::Execution {
        if self.parallel {
            isoseq::Execution::Parallel
        } else {
            isoseq::Execution::Sequential
        }
    }

    pub fn sequence_params(&self) -> Result<isoseq::sequences::SequenceParams, CliError> {
        isoseq::sequences::SequenceParams::new(self.t, self.s, self.radius).map_err(|e| CliError::Usage(e.to_string()))
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let maps: Vec<String> = self.maps.iter().map(|p| p.display().to_string()).collect();
        writeln!(f, "map = {}", maps.join(", "))?;
        writeln!(f, "map_scale = {}", self.map_scale)?;
        writeln!(f, "t = {}", self.t)?;
        writeln!(f, "s = {}", self.s)?;
        writeln!(f, "radius = {}", self.radius)?;
        writeln!(f, "latent = {}", self.latent)?;
        writeln!(f, "hidden = {}", self.hidden)?;
        writeln!(f, "beta = {}", self.beta)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "trajectories = {}", self.trajectories)?;
        if let Some(seed) = self.seed {
            writeln!(f, "seed = {seed}")?;
        }
        writeln!(f, "out_dir = {}", self.out_dir.display())?;
        writeln!(f, "grid_k = {}", self.grid_k)?;
        writeln!(f, "grid_lo = {}", self.grid_lo)?;
        writeln!(f, "grid_hi = {}", self.grid_hi)?;
        writeln!(f, "overlay_scale = {}", self.overlay_scale)?;
        writeln!(f, "parallel = {}", self.parallel)
    }
}
