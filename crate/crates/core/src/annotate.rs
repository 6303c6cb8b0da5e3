//! Visual products of a trained model: latent-coloured trajectory overlays,
//! strips of decoded sequences sampled along the latent axis, and
//! input-versus-reconstruction comparisons.

use std::fmt::Write as _;
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage, Rgba, RgbaImage};

use crate::exec::Execution;
use crate::gridworld::{GridCoord, OccupancyGrid};
use crate::neuralnet::Tensor;
use crate::pathgen::Trajectory;
use crate::sequences::{extract_sequences, SequenceError, SequenceParams, SequenceRecord};
use crate::vae::{record_tensor, VaeError, VaeModel};

/// Hue reached by a normalised latent value of 1 (pink); 0 is red.
pub const HUE_MAX_DEGREES: f64 = 330.0;
/// Default latent range for grid sampling.
pub const DEFAULT_LATENT_RANGE: (f64, f64) = (-3.0, 3.0);
/// Height in pixels of the colour-key row under a strip.
pub const KEY_ROW_HEIGHT: u32 = 4;
const GAP: u32 = 1;
const GAP_COLOR: [u8; 3] = [96, 96, 96];

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("trajectory {index} has {len} points, fewer than the sequence footprint {footprint}")]
    TrajectoryTooShort { index: usize, len: usize, footprint: usize },
    #[error("nothing to annotate or render")]
    EmptyInput,
    #[error("latent grid sampling needs a one-dimensional latent space, model has {0}")]
    UnsupportedLatentDim(usize),
    #[error("latent grid needs at least 2 samples, got {0}")]
    InvalidCount(usize),
    #[error("invalid latent range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("point {0} lies outside the grid")]
    OutOfBounds(GridCoord),
    #[error("scale must be at least 1")]
    InvalidScale,
    #[error("sequence parameters t={t}, W={window} do not match the model (t={model_t}, W={model_window})")]
    ParamsMismatch { t: usize, window: usize, model_t: usize, model_window: usize },
    #[error("sequences in one strip must share a shape")]
    MixedShapes,
    #[error(transparent)]
    Model(#[from] VaeError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// A sequence centre with its latent code and display colour.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedPoint {
    pub position: GridCoord,
    pub latent: Vec<f64>,
    pub color: [u8; 4],
}

/// Full-saturation hue sweep from red (0) to pink (1), opaque.
pub fn hue_color(v: f64) -> [u8; 4] {
    let h = v.clamp(0.0, 1.0) * HUE_MAX_DEGREES / 60.0;
    let sector = (h.floor() as usize).min(5);
    let f = h - sector as f64;
    let (r, g, b) = match sector {
        0 => (1.0, f, 0.0),
        1 => (1.0 - f, 1.0, 0.0),
        2 => (0.0, 1.0, f),
        3 => (0.0, 1.0 - f, 1.0),
        4 => (f, 0.0, 1.0),
        _ => (1.0, 0.0, 1.0 - f),
    };
    let q = |c: f64| (c * 255.0).round() as u8;
    [q(r), q(g), q(b), 255]
}

/// Min–max normalisation per latent dimension over the whole set. A
/// dimension with no spread maps to 0.5.
pub fn normalize_latents(latents: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = latents.first().map_or(0, Vec::len);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for z in latents {
        for (i, &v) in z.iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    latents
        .iter()
        .map(|z| {
            z.iter()
                .enumerate()
                .map(|(i, &v)| if hi[i] > lo[i] { (v - lo[i]) / (hi[i] - lo[i]) } else { 0.5 })
                .collect()
        })
        .collect()
}

/// Colours of a complete latent set: the hue map for one dimension, the
/// first two or three normalised dimensions as RGB otherwise.
pub fn latent_colors(latents: &[Vec<f64>]) -> Vec<[u8; 4]> {
    let q = |c: f64| (c * 255.0).round() as u8;
    normalize_latents(latents)
        .into_iter()
        .map(|n| match n.len() {
            1 => hue_color(n[0]),
            2 => [q(n[0]), q(n[1]), 0, 255],
            _ => [q(n[0]), q(n[1]), q(n[2]), 255],
        })
        .collect()
}

/// Encodes every sequence along every trajectory and colours the sequence
/// centres.
pub fn annotate_trajectories(
    model: &VaeModel,
    grid: &OccupancyGrid,
    trajectories: &[Trajectory],
    params: SequenceParams,
    exec: Execution,
) -> Result<Vec<AnnotatedPoint>, AnnotateError> {
    let cfg = model.config();
    if params.t != cfg.t || params.window() != cfg.window {
        return Err(AnnotateError::ParamsMismatch {
            t: params.t,
            window: params.window(),
            model_t: cfg.t,
            model_window: cfg.window,
        });
    }
    if trajectories.is_empty() {
        return Err(AnnotateError::EmptyInput);
    }
    let mut records = Vec::new();
    for (index, traj) in trajectories.iter().enumerate() {
        match extract_sequences(traj, grid, params, exec) {
            Ok(seqs) => records.extend(seqs.iter().map(SequenceRecord::from)),
            Err(SequenceError::TrajectoryTooShort { len, footprint }) => {
                return Err(AnnotateError::TrajectoryTooShort { index, len, footprint })
            }
            Err(e) => return Err(e.into()),
        }
    }
    let latents =
        exec.try_map(records.len(), |i| model.predict_latent(&record_tensor(&records[i])).map(Tensor::into_data))?;
    let colors = latent_colors(&latents);
    Ok(records
        .iter()
        .zip(latents)
        .zip(colors)
        .map(|((r, latent), color)| AnnotatedPoint { position: r.center, latent, color })
        .collect())
}

/// The floor plan (floor white, walls black) with each point painted as a
/// `scale × scale` square, encoded as RGBA PNG.
pub fn render_overlay(grid: &OccupancyGrid, points: &[AnnotatedPoint], scale: u32) -> Result<Vec<u8>, AnnotateError> {
    if scale == 0 {
        return Err(AnnotateError::InvalidScale);
    }
    let (w, h) = (grid.width() as u32, grid.height() as u32);
    let mut img = RgbaImage::new(w * scale, h * scale);
    for (i, cell) in grid.cells().iter().enumerate() {
        let p = grid.coord_of(i);
        let v = if *cell == crate::gridworld::Cell::Floor { 255 } else { 0 };
        paint(&mut img, p, scale, [v, v, v, 255]);
    }
    for pt in points {
        if !grid.in_bounds(pt.position) {
            return Err(AnnotateError::OutOfBounds(pt.position));
        }
        paint(&mut img, pt.position, scale, pt.color);
    }
    Ok(encode(|buf| img.write_to(buf, ImageFormat::Png)))
}

fn paint(img: &mut RgbaImage, p: GridCoord, scale: u32, color: [u8; 4]) {
    for dy in 0..scale {
        for dx in 0..scale {
            img.put_pixel(p.x as u32 * scale + dx, p.y as u32 * scale + dy, Rgba(color));
        }
    }
}

fn encode(write: impl FnOnce(&mut Cursor<Vec<u8>>) -> image::ImageResult<()>) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    write(&mut buf).expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}

/// One line per point: `x,y,z_0,…,z_{d−1},#RRGGBBAA`.
pub fn format_sidecar(points: &[AnnotatedPoint]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = write!(out, "{},{}", p.position.x, p.position.y);
        for z in &p.latent {
            let _ = write!(out, ",{z}");
        }
        let [r, g, b, a] = p.color;
        let _ = writeln!(out, ",#{r:02X}{g:02X}{b:02X}{a:02X}");
    }
    out
}

/// Black at 0, pure green at 0.5, white at 1, linear in between.
pub fn certainty_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let q = |c: f64| (c * 255.0).round() as u8;
    if v <= 0.5 {
        [0, q(2.0 * v), 0]
    } else {
        let w = q(2.0 * (v - 0.5));
        [w, 255, w]
    }
}

/// `k` evenly spaced latent values from `lo` to `hi` inclusive.
pub fn latent_grid_values(k: usize, lo: f64, hi: f64) -> Result<Vec<f64>, AnnotateError> {
    if k < 2 {
        return Err(AnnotateError::InvalidCount(k));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(AnnotateError::InvalidRange(lo, hi));
    }
    let step = (hi - lo) / (k - 1) as f64;
    Ok((0..k).map(|i| if i == k - 1 { hi } else { lo + i as f64 * step }).collect())
}

/// Decodes the model at `k` evenly spaced points of a one-dimensional latent
/// range. Returns `(z, frames)` pairs in increasing `z`.
pub fn sample_latent_grid(model: &VaeModel, k: usize, lo: f64, hi: f64) -> Result<Vec<(f64, Tensor)>, AnnotateError> {
    let d = model.config().latent;
    if d != 1 {
        return Err(AnnotateError::UnsupportedLatentDim(d));
    }
    latent_grid_values(k, lo, hi)?
        .into_iter()
        .map(|z| Ok((z, model.decode(&Tensor::from_vec(&[1], vec![z]).expect("one value"))?)))
        .collect()
}

/// Pixel geometry of a strip of `columns` sequences of `t` frames of side `w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StripLayout {
    pub columns: u32,
    pub t: u32,
    pub window: u32,
    pub has_key: bool,
}

impl StripLayout {
    pub fn width(&self) -> u32 {
        self.columns * self.window + (self.columns - 1) * GAP
    }

    pub fn height(&self) -> u32 {
        let frames = self.t * self.window + (self.t - 1) * GAP;
        frames + if self.has_key { GAP + KEY_ROW_HEIGHT } else { 0 }
    }

    /// Left edge of column `c`.
    pub fn column_x(&self, c: u32) -> u32 {
        c * (self.window + GAP)
    }

    /// Top edge of frame `j`; frame 0 (earliest) is the bottom one.
    pub fn frame_y(&self, j: u32) -> u32 {
        (self.t - 1 - j) * (self.window + GAP)
    }

    pub fn key_y(&self) -> Option<u32> {
        self.has_key.then(|| self.t * self.window + self.t * GAP)
    }
}

/// Renders sequences side by side, one column each, frames stacked with
/// the earliest at the bottom and coloured by [`certainty_color`]. With
/// `key`, a row of the given colours runs under the columns. Returns RGB PNG.
pub fn render_strip(columns: &[Tensor], key: Option<&[[u8; 4]]>) -> Result<Vec<u8>, AnnotateError> {
    let first = columns.first().ok_or(AnnotateError::EmptyInput)?;
    let &[t, 1, w, w2] = first.shape() else {
        return Err(AnnotateError::MixedShapes);
    };
    if w != w2 || t == 0 || w == 0 || columns.iter().any(|c| c.shape() != first.shape()) {
        return Err(AnnotateError::MixedShapes);
    }
    if key.is_some_and(|k| k.len() != columns.len()) {
        return Err(AnnotateError::MixedShapes);
    }
    let layout = StripLayout { columns: columns.len() as u32, t: t as u32, window: w as u32, has_key: key.is_some() };
    let mut img = RgbImage::from_pixel(layout.width(), layout.height(), Rgb(GAP_COLOR));
    for (c, seq) in columns.iter().enumerate() {
        let x0 = layout.column_x(c as u32);
        for (j, frame) in seq.data().chunks_exact(w * w).enumerate() {
            let y0 = layout.frame_y(j as u32);
            for (i, &v) in frame.iter().enumerate() {
                let (u, v_) = ((i % w) as u32, (i / w) as u32);
                img.put_pixel(x0 + u, y0 + v_, Rgb(certainty_color(v)));
            }
        }
        if let (Some(keys), Some(ky)) = (key, layout.key_y()) {
            let [r, g, b, _] = keys[c];
            for dy in 0..KEY_ROW_HEIGHT {
                for dx in 0..layout.window {
                    img.put_pixel(x0 + dx, ky + dy, Rgb([r, g, b]));
                }
            }
        }
    }
    Ok(encode(|buf| img.write_to(buf, ImageFormat::Png)))
}

/// Strip of `k` decoded latent samples over `[lo, hi]`, keyed with the hue
/// each latent value would receive in an annotation spanning that range.
pub fn render_latent_grid(model: &VaeModel, k: usize, lo: f64, hi: f64) -> Result<Vec<u8>, AnnotateError> {
    let samples = sample_latent_grid(model, k, lo, hi)?;
    let keys: Vec<[u8; 4]> = samples.iter().map(|(z, _)| hue_color((z - lo) / (hi - lo))).collect();
    let frames: Vec<Tensor> = samples.into_iter().map(|(_, f)| f).collect();
    render_strip(&frames, Some(&keys))
}

/// Input sequence beside its reconstruction, as a two-column strip.
pub fn render_comparison(model: &VaeModel, input: &Tensor) -> Result<Vec<u8>, AnnotateError> {
    let recon = model.reconstruct(input)?;
    render_strip(&[input.clone(), recon], None)
}
