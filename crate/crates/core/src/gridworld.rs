//! Binary floor plans.
//!
//! Coordinates follow image conventions: origin at the top-left, `x` grows to
//! the right, `y` grows downward, cells are stored row-major. Every grid built
//! by this module carries a one-cell WALL border, so any walk outward from a
//! FLOOR cell hits a wall before it can leave the raster.

use std::io::Cursor;

use image::{imageops::FilterType, GrayImage, ImageFormat, Luma};
use thiserror::Error;

/// Column/row position in a grid. Signed so that off-grid neighbours can be
/// represented and rejected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCoord {
    pub x: i32,
    pub y: i32,
}

impl GridCoord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    /// Chebyshev (king-move) distance.
    pub fn chebyshev(self, other: GridCoord) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

impl std::fmt::Display for GridCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Floor,
    Wall,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("could not decode floor plan image: {0}")]
    Decode(String),
    #[error("floor plan image has zero width or height")]
    EmptyImage,
    #[error("coordinate {0} lies outside the {1}x{2} grid")]
    OutOfBounds(GridCoord, usize, usize),
    #[error("malformed grid file: {0}")]
    Format(String),
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("scale factor must be finite and positive, got {0}")]
    BadScale(f64),
}

/// Magic bytes of the saved grid format.
pub const GRID_MAGIC: &[u8; 4] = b"IGRD";

/// Immutable binary raster of FLOOR and WALL cells.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    /// Builds a grid from raw cells. Border cells must already be WALL and
    /// both sides must be at least 3 cells.
    pub fn from_cells(width: usize, height: usize, cells: Vec<Cell>) -> Result<Self, GridError> {
        if width < 3 || height < 3 {
            return Err(GridError::Invalid(format!("grid must be at least 3x3, got {width}x{height}")));
        }
        if cells.len() != width * height {
            return Err(GridError::Invalid(format!("expected {} cells, got {}", width * height, cells.len())));
        }
        let grid = Self { width, height, cells };
        let border_ok = (0..width)
            .all(|x| grid.cells[x] == Cell::Wall && grid.cells[(height - 1) * width + x] == Cell::Wall)
            && (0..height)
                .all(|y| grid.cells[y * width] == Cell::Wall && grid.cells[y * width + width - 1] == Cell::Wall);
        if !border_ok {
            return Err(GridError::Invalid("border cells must be WALL".into()));
        }
        Ok(grid)
    }

    /// Surrounds an unpadded raster with a one-cell WALL border.
    pub fn from_unpadded(width: usize, height: usize, floor: &[bool]) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyImage);
        }
        if floor.len() != width * height {
            return Err(GridError::Invalid(format!("expected {} cells, got {}", width * height, floor.len())));
        }
        let (pw, ph) = (width + 2, height + 2);
        let mut cells = vec![Cell::Wall; pw * ph];
        for y in 0..height {
            for x in 0..width {
                if floor[y * width + x] {
                    cells[(y + 1) * pw + x + 1] = Cell::Floor;
                }
            }
        }
        Ok(Self { width: pw, height: ph, cells })
    }

    /// Parses an ASCII picture: `.` (or space) is FLOOR, anything else WALL.
    /// All lines must have equal length. The border is added automatically.
    pub fn from_ascii(rows: &[&str]) -> Result<Self, GridError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(GridError::Invalid("ragged ascii rows".into()));
        }
        let floor: Vec<bool> = rows.iter().flat_map(|r| r.chars().map(|c| c == '.' || c == ' ')).collect();
        Self::from_unpadded(width, height, &floor)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn in_bounds(&self, p: GridCoord) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    /// Row-major index of an in-bounds coordinate.
    pub fn index_of(&self, p: GridCoord) -> Result<usize, GridError> {
        if self.in_bounds(p) {
            Ok(p.y as usize * self.width + p.x as usize)
        } else {
            Err(GridError::OutOfBounds(p, self.width, self.height))
        }
    }

    pub fn coord_of(&self, index: usize) -> GridCoord {
        GridCoord::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn cell(&self, p: GridCoord) -> Result<Cell, GridError> {
        Ok(self.cells[self.index_of(p)?])
    }

    pub fn is_floor(&self, p: GridCoord) -> Result<bool, GridError> {
        Ok(self.cell(p)? == Cell::Floor)
    }

    /// Out-of-bounds coordinates count as walls.
    pub(crate) fn floor_or_false(&self, p: GridCoord) -> bool {
        self.in_bounds(p) && self.cells[p.y as usize * self.width + p.x as usize] == Cell::Floor
    }

    pub fn floor_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Floor).count()
    }

    /// All FLOOR coordinates in row-major order.
    pub fn floor_cells(&self) -> Vec<GridCoord> {
        self.cells.iter().enumerate().filter(|(_, &c)| c == Cell::Floor).map(|(i, _)| self.coord_of(i)).collect()
    }

    /// Copy with one cell changed. Border cells cannot be opened.
    pub fn with_cell(&self, p: GridCoord, cell: Cell) -> Result<Self, GridError> {
        let idx = self.index_of(p)?;
        let border = p.x == 0 || p.y == 0 || p.x as usize == self.width - 1 || p.y as usize == self.height - 1;
        if border && cell == Cell::Floor {
            return Err(GridError::Invalid(format!("cannot open border cell {p}")));
        }
        let mut out = self.clone();
        out.cells[idx] = cell;
        Ok(out)
    }

    /// FLOOR as white (255), WALL as black (0), border included.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            match self.cells[y as usize * self.width + x as usize] {
                Cell::Floor => Luma([255]),
                Cell::Wall => Luma([0]),
            }
        })
    }

    /// Serializes to the `IGRD` format: magic, width and height as u32 LE,
    /// a padding-flag byte (1 = border already present), then each row
    /// bit-packed LSB-first into `ceil(width / 8)` bytes with 1 = FLOOR.
    pub fn to_grid_bytes(&self) -> Vec<u8> {
        let row_bytes = self.width.div_ceil(8);
        let mut out = Vec::with_capacity(13 + row_bytes * self.height);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.push(1);
        for row in self.cells.chunks(self.width) {
            let mut packed = vec![0u8; row_bytes];
            for (x, &c) in row.iter().enumerate() {
                if c == Cell::Floor {
                    packed[x / 8] |= 1 << (x % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        out
    }

    /// Parses the `IGRD` format. A cleared padding flag means the stored
    /// raster lacks the border, which is then added.
    pub fn from_grid_bytes(bytes: &[u8]) -> Result<Self, GridError> {
        if bytes.len() < 13 || &bytes[..4] != GRID_MAGIC {
            return Err(GridError::Format("missing IGRD header".into()));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let padded = match bytes[12] {
            0 => false,
            1 => true,
            f => return Err(GridError::Format(format!("bad padding flag {f}"))),
        };
        let row_bytes = width.div_ceil(8);
        let body = &bytes[13..];
        if body.len() != row_bytes * height {
            return Err(GridError::Format(format!(
                "expected {} raster bytes, found {}",
                row_bytes * height,
                body.len()
            )));
        }
        let floor: Vec<bool> = (0..height)
            .flat_map(|y| {
                let row = &body[y * row_bytes..(y + 1) * row_bytes];
                (0..width).map(move |x| row[x / 8] >> (x % 8) & 1 == 1)
            })
            .collect();
        if padded {
            let cells = floor.into_iter().map(|f| if f { Cell::Floor } else { Cell::Wall }).collect();
            Self::from_cells(width, height, cells)
        } else {
            Self::from_unpadded(width, height, &floor)
        }
    }
}

/// Decodes a PNG or binary PGM floor plan. Pixels with luminance ≥ 0.5 become
/// FLOOR, the rest WALL, and a WALL border is added.
pub fn load_floorplan(image_bytes: &[u8]) -> Result<OccupancyGrid, GridError> {
    load_floorplan_scaled(image_bytes, 1.0)
}

/// Like [`load_floorplan`], resizing the image by `scale` (nearest neighbour)
/// before thresholding.
pub fn load_floorplan_scaled(image_bytes: &[u8], scale: f64) -> Result<OccupancyGrid, GridError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(GridError::BadScale(scale));
    }
    let img = image::load_from_memory(image_bytes).map_err(|e| GridError::Decode(e.to_string()))?;
    let mut luma = img.to_luma8();
    if luma.width() == 0 || luma.height() == 0 {
        return Err(GridError::EmptyImage);
    }
    if scale != 1.0 {
        let w = ((luma.width() as f64 * scale).round() as u32).max(1);
        let h = ((luma.height() as f64 * scale).round() as u32).max(1);
        luma = image::imageops::resize(&luma, w, h, FilterType::Nearest);
    }
    let floor: Vec<bool> = luma.pixels().map(|p| p.0[0] as f64 / 255.0 >= 0.5).collect();
    OccupancyGrid::from_unpadded(luma.width() as usize, luma.height() as usize, &floor)
}

/// Loads either an `IGRD` grid file or a floor-plan image, by content.
pub fn load_map(bytes: &[u8]) -> Result<OccupancyGrid, GridError> {
    load_map_scaled(bytes, 1.0)
}

pub fn load_map_scaled(bytes: &[u8], scale: f64) -> Result<OccupancyGrid, GridError> {
    if bytes.starts_with(GRID_MAGIC) {
        OccupancyGrid::from_grid_bytes(bytes)
    } else {
        load_floorplan_scaled(bytes, scale)
    }
}

/// PNG bytes of the grid as rendered by [`OccupancyGrid::to_image`].
pub fn encode_png_gray(img: &GrayImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}

/// A fixed 64×64 office floor: a 3×3 block of rooms joined by doors, with
/// a few pillars and a partition so that views differ from room to room.
/// Useful as a small reproducible training map.
pub fn toy_floorplan() -> OccupancyGrid {
    const N: usize = 64;
    let mut floor = vec![true; N * N];
    let mut wall = |x: usize, y: usize| floor[y * N + x] = false;
    for k in 0..N {
        wall(k, 0);
        wall(k, N - 1);
        wall(0, k);
        wall(N - 1, k);
    }
    // dividers at 21 and 42 in both directions; doorways as (start, width)
    let vertical: [(usize, [(usize, usize); 3]); 2] =
        [(21, [(8, 3), (30, 4), (50, 3)]), (42, [(12, 4), (27, 3), (54, 3)])];
    let horizontal: [(usize, [(usize, usize); 3]); 2] =
        [(21, [(4, 3), (33, 3), (47, 4)]), (42, [(15, 3), (25, 4), (56, 3)])];
    let is_door = |doors: &[(usize, usize)], k: usize| doors.iter().any(|&(s, w)| (s..s + w).contains(&k));
    for (x, doors) in vertical {
        (0..N).filter(|&k| !is_door(&doors, k)).for_each(|y| wall(x, y));
    }
    for (y, doors) in horizontal {
        (0..N).filter(|&k| !is_door(&doors, k)).for_each(|x| wall(x, y));
    }
    // pillars in the centre room and partitions in two corner rooms
    for (px, py) in [(27, 27), (35, 27), (27, 35), (35, 35)] {
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            wall(px + dx, py + dy);
        }
    }
    (48..58).for_each(|x| wall(x, 50));
    (50..58).for_each(|y| wall(48, y));
    (6..14).for_each(|y| wall(10, y));
    let cells = floor.iter().map(|&f| if f { Cell::Floor } else { Cell::Wall }).collect();
    OccupancyGrid::from_cells(N, N, cells).expect("toy plan has a closed border")
}
