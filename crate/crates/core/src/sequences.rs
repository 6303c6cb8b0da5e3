//! Isovist sequences along trajectories and the `ISQ1` dataset file.
//!
//! A sequence of `t = 2m + 1` frames spaced `s` trajectory steps apart covers
//! `t·s − (s − 1)` consecutive trajectory points (its footprint). Windows
//! advance one point at a time, and each sequence is labelled with the point
//! at 0-based offset `(footprint − 1) / 2`, the middle frame's position.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::exec::Execution;
use crate::gridworld::{GridCoord, OccupancyGrid};
use crate::pathgen::Trajectory;
use crate::visibility::{compute_isovist, rotate_isovist, Isovist, VisibilityError};

pub const DATASET_MAGIC: &[u8; 4] = b"ISQ1";
pub const DATASET_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("invalid sequence parameters: {0}")]
    InvalidParams(String),
    #[error("trajectory of length {len} is shorter than the sequence footprint {footprint}")]
    TrajectoryTooShort { len: usize, footprint: usize },
    #[error("sequence does not match dataset header: {0}")]
    HeaderMismatch(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Visibility(#[from] VisibilityError),
}

/// Trajectory points covered by one sequence: `t·s − (s − 1)`.
pub fn footprint(t: usize, s: usize) -> Result<usize, SequenceError> {
    if t == 0 || t.is_multiple_of(2) {
        return Err(SequenceError::InvalidParams(format!("sequence length must be odd and positive, got {t}")));
    }
    if s == 0 {
        return Err(SequenceError::InvalidParams("spacing must be at least 1".into()));
    }
    Ok(t * s - (s - 1))
}

/// Shape of the sequences cut from trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SequenceParams {
    /// Frames per sequence, odd.
    pub t: usize,
    /// Trajectory steps between consecutive frames.
    pub s: usize,
    /// Isovist radius; windows are `2R + 1` wide.
    pub radius: usize,
}

impl SequenceParams {
    pub fn new(t: usize, s: usize, radius: usize) -> Result<Self, SequenceError> {
        footprint(t, s)?;
        if radius == 0 {
            return Err(SequenceError::InvalidParams("radius must be at least 1".into()));
        }
        Ok(Self { t, s, radius })
    }

    pub fn footprint(&self) -> usize {
        self.t * self.s - (self.s - 1)
    }

    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    /// Number of sequences cut from a trajectory of `len` points.
    pub fn sequence_count(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.footprint())
    }
}

/// `t` heading-aligned isovists in time order, labelled by the middle frame.
#[derive(Clone, Debug, PartialEq)]
pub struct IsovistSequence {
    pub frames: Vec<Isovist>,
    pub center: GridCoord,
    pub heading: f64,
    pub t: usize,
    pub s: usize,
}

impl IsovistSequence {
    pub fn window(&self) -> usize {
        self.frames.first().map_or(0, Isovist::size)
    }
}

/// Cuts every stride-1 window of the trajectory into a sequence. Frame `j` of
/// the window starting at `k` is the isovist at point `k + j·s`, rotated by
/// the heading at that point.
pub fn extract_sequences(
    traj: &Trajectory,
    grid: &OccupancyGrid,
    params: SequenceParams,
    exec: Execution,
) -> Result<Vec<IsovistSequence>, SequenceError> {
    let fp = params.footprint();
    let len = traj.len();
    if len < fp {
        return Err(SequenceError::TrajectoryTooShort { len, footprint: fp });
    }
    let points = traj.points();
    let aligned = exec.try_map(len, |i| {
        compute_isovist(grid, points[i], params.radius).map(|iso| rotate_isovist(&iso, traj.heading_at(i)))
    })?;
    let half = (fp - 1) / 2;
    Ok((0..params.sequence_count(len))
        .map(|k| IsovistSequence {
            frames: (0..params.t).map(|j| aligned[k + j * params.s].clone()).collect(),
            center: points[k + half],
            heading: traj.heading_at(k + half),
            t: params.t,
            s: params.s,
        })
        .collect())
}

/// `ISQ1` header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DatasetHeader {
    pub t: u32,
    pub s: u32,
    pub window: u32,
    pub count: u32,
}

impl DatasetHeader {
    fn frame_bytes(&self) -> usize {
        (self.window as usize * self.window as usize).div_ceil(8)
    }

    fn record_bytes(&self) -> usize {
        8 + 8 + self.t as usize * self.frame_bytes()
    }
}

/// One stored sequence. Frames are `W·W` 0/1 bytes, row-major, time order.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub center: GridCoord,
    pub heading: f64,
    pub frames: Vec<Vec<u8>>,
}

impl SequenceRecord {
    /// All frames flattened to `t·W·W` values in {0, 1}.
    pub fn values(&self) -> Vec<f64> {
        self.frames.iter().flatten().map(|&b| b as f64).collect()
    }
}

impl From<&IsovistSequence> for SequenceRecord {
    fn from(seq: &IsovistSequence) -> Self {
        Self {
            center: seq.center,
            heading: seq.heading,
            frames: seq.frames.iter().map(|f| f.window().to_vec()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    header: DatasetHeader,
    records: Vec<SequenceRecord>,
}

impl Dataset {
    pub fn new(t: usize, s: usize, window: usize) -> Self {
        Self {
            header: DatasetHeader { t: t as u32, s: s as u32, window: window as u32, count: 0 },
            records: Vec::new(),
        }
    }

    pub fn for_params(params: SequenceParams) -> Self {
        Self::new(params.t, params.s, params.window())
    }

    /// Collects like-shaped sequences; fails on an empty or mixed input.
    pub fn from_sequences(sequences: &[IsovistSequence]) -> Result<Self, SequenceError> {
        let first = sequences
            .first()
            .ok_or_else(|| SequenceError::HeaderMismatch("no sequences to infer a header from".into()))?;
        let mut ds = Self::new(first.t, first.s, first.window());
        for seq in sequences {
            ds.push(seq)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, seq: &IsovistSequence) -> Result<(), SequenceError> {
        let h = &self.header;
        if seq.t as u32 != h.t || seq.s as u32 != h.s || seq.frames.len() != seq.t {
            return Err(SequenceError::HeaderMismatch(format!(
                "sequence t={} s={} ({} frames), dataset t={} s={}",
                seq.t,
                seq.s,
                seq.frames.len(),
                h.t,
                h.s
            )));
        }
        if let Some(f) = seq.frames.iter().find(|f| f.size() as u32 != h.window) {
            return Err(SequenceError::HeaderMismatch(format!(
                "frame window {} vs dataset window {}",
                f.size(),
                h.window
            )));
        }
        self.records.push(seq.into());
        self.header.count += 1;
        Ok(())
    }

    pub fn extend<'a>(&mut self, seqs: impl IntoIterator<Item = &'a IsovistSequence>) -> Result<(), SequenceError> {
        seqs.into_iter().try_for_each(|s| self.push(s))
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }

    pub fn records(&self) -> &[SequenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Splits off the records from `at` onwards into a second dataset.
    pub fn split_at(mut self, at: usize) -> (Dataset, Dataset) {
        let tail = self.records.split_off(at.min(self.records.len()));
        self.header.count = self.records.len() as u32;
        let tail_header = DatasetHeader { count: tail.len() as u32, ..self.header };
        (self, Dataset { header: tail_header, records: tail })
    }

    /// Encodes as `ISQ1`: magic, version byte, then `t`, `s`, `W` and the
    /// record count as u32 LE. Each record is the centre as two i32 LE, the
    /// heading as f64 LE, then its `t` frames, each bit-packed row-major
    /// LSB-first into `ceil(W² / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(21 + self.records.len() * h.record_bytes());
        out.extend_from_slice(DATASET_MAGIC);
        out.push(DATASET_VERSION);
        for v in [h.t, h.s, h.window, h.count] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let fb = h.frame_bytes();
        for r in &self.records {
            out.extend_from_slice(&r.center.x.to_le_bytes());
            out.extend_from_slice(&r.center.y.to_le_bytes());
            out.extend_from_slice(&r.heading.to_le_bytes());
            for frame in &r.frames {
                let mut packed = vec![0u8; fb];
                for (i, _) in frame.iter().enumerate().filter(|(_, &b)| b != 0) {
                    packed[i / 8] |= 1 << (i % 8);
                }
                out.extend_from_slice(&packed);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SequenceError> {
        let fmt = |m: String| SequenceError::Format(m);
        if bytes.len() < 21 {
            return Err(fmt(format!("{} bytes is too short for a header", bytes.len())));
        }
        if &bytes[..4] != DATASET_MAGIC {
            return Err(fmt("bad magic, expected ISQ1".into()));
        }
        if bytes[4] != DATASET_VERSION {
            return Err(fmt(format!("unsupported version {}", bytes[4])));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap());
        let header = DatasetHeader { t: word(0), s: word(1), window: word(2), count: word(3) };
        if header.t == 0 || header.window == 0 {
            return Err(fmt("zero sequence length or window".into()));
        }
        let body = &bytes[21..];
        let rb = header.record_bytes();
        if body.len() != rb * header.count as usize {
            return Err(fmt(format!(
                "expected {} record bytes for {} records, found {}",
                rb * header.count as usize,
                header.count,
                body.len()
            )));
        }
        let (fb, cells) = (header.frame_bytes(), (header.window * header.window) as usize);
        let records = body
            .chunks_exact(rb)
            .map(|r| {
                let x = i32::from_le_bytes(r[0..4].try_into().unwrap());
                let y = i32::from_le_bytes(r[4..8].try_into().unwrap());
                let heading = f64::from_le_bytes(r[8..16].try_into().unwrap());
                let frames =
                    r[16..].chunks_exact(fb).map(|p| (0..cells).map(|i| p[i / 8] >> (i % 8) & 1).collect()).collect();
                SequenceRecord { center: GridCoord::new(x, y), heading, frames }
            })
            .collect();
        Ok(Self { header, records })
    }
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), SequenceError> {
    Ok(fs::write(path, dataset.to_bytes())?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, SequenceError> {
    Dataset::from_bytes(&fs::read(path)?)
}
