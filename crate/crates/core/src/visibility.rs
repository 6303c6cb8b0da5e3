//! Isovists on occupancy grids.
//!
//! [`compute_isovist`] runs recursive shadow casting over the eight octants
//! around the observer. Each wall square casts a closed shadow cone bounded by
//! its two outer corners, and a floor cell is visible when the ray to its
//! centre stays in a lit wedge. Corner contact blocks sight, so diagonal gaps
//! between two walls are opaque.
//!
//! [`line_of_sight`] is the independent reference: a centre-to-centre ray
//! that is blocked by any WALL cell on its supercover line, corners included.

use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_2;

use crate::gridworld::{GridCoord, GridError, OccupancyGrid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VisibilityError {
    #[error("isovist origin {0} is not a floor cell")]
    OriginNotFloor(GridCoord),
    #[error("isovist radius must be at least 1")]
    BadRadius,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Binary visibility window of side `2 * radius + 1`, centred on `origin`.
/// Cell `(u, v)` covers grid cell `origin + (u - radius, v - radius)`; 1 marks
/// visible floor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Isovist {
    radius: usize,
    origin: GridCoord,
    window: Vec<u8>,
}

impl Isovist {
    pub fn empty(radius: usize, origin: GridCoord) -> Self {
        let size = 2 * radius + 1;
        Self { radius, origin, window: vec![0; size * size] }
    }

    /// Wraps an existing 0/1 window. Panics if the length is not `(2r+1)^2`.
    pub fn from_window(radius: usize, origin: GridCoord, window: Vec<u8>) -> Self {
        let size = 2 * radius + 1;
        assert_eq!(window.len(), size * size, "window length must be (2r+1)^2");
        Self { radius, origin, window }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Side length `W = 2R + 1`.
    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn origin(&self) -> GridCoord {
        self.origin
    }

    pub fn window(&self) -> &[u8] {
        &self.window
    }

    pub fn into_window(self) -> Vec<u8> {
        self.window
    }

    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.window[v * self.size() + u]
    }

    fn set(&mut self, u: usize, v: usize) {
        let size = self.size();
        self.window[v * size + u] = 1;
    }

    pub fn visible_count(&self) -> usize {
        self.window.iter().filter(|&&c| c != 0).count()
    }

    /// Grid coordinate covered by window cell `(u, v)`.
    pub fn world_of(&self, u: usize, v: usize) -> GridCoord {
        let r = self.radius as i32;
        self.origin.offset(u as i32 - r, v as i32 - r)
    }
}

/// Cells a straight segment between two cell centres passes through. Where
/// the segment crosses a cell corner exactly, both side cells are included.
/// Consecutive cells are 8-adjacent; the list starts at `a` and ends at `b`.
pub fn supercover_line(a: GridCoord, b: GridCoord) -> Vec<GridCoord> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (nx, ny) = (dx.abs() as i64, dy.abs() as i64);
    let (sx, sy) = (dx.signum(), dy.signum());
    let mut p = a;
    let mut out = vec![p];
    let (mut ix, mut iy) = (0i64, 0i64);
    while ix < nx || iy < ny {
        match ((1 + 2 * ix) * ny).cmp(&((1 + 2 * iy) * nx)) {
            Ordering::Equal => {
                out.push(p.offset(sx, 0));
                out.push(p.offset(0, sy));
                p = p.offset(sx, sy);
                ix += 1;
                iy += 1;
            }
            Ordering::Less => {
                p = p.offset(sx, 0);
                ix += 1;
            }
            Ordering::Greater => {
                p = p.offset(0, sy);
                iy += 1;
            }
        }
        out.push(p);
    }
    out
}

/// Reference visibility test between two cells.
pub fn line_of_sight(grid: &OccupancyGrid, a: GridCoord, b: GridCoord) -> Result<bool, GridError> {
    grid.index_of(a)?;
    grid.index_of(b)?;
    if !grid.is_floor(b)? {
        return Ok(false);
    }
    let line = supercover_line(a, b);
    Ok(line[..line.len() - 1].iter().all(|&p| grid.floor_or_false(p)))
}

/// Isovist built cell by cell from [`line_of_sight`], with the same distance
/// cutoff as [`compute_isovist`]. Quadratic in the window size; meant for
/// verification.
pub fn oracle_isovist(grid: &OccupancyGrid, origin: GridCoord, radius: usize) -> Result<Isovist, VisibilityError> {
    check_origin(grid, origin, radius)?;
    let mut iso = Isovist::empty(radius, origin);
    let size = iso.size();
    for v in 0..size {
        for u in 0..size {
            let p = iso.world_of(u, v);
            let (du, dv) = (p.x - origin.x, p.y - origin.y);
            if within_radius(du, dv, radius) && grid.in_bounds(p) && line_of_sight(grid, origin, p)? {
                iso.set(u, v);
            }
        }
    }
    Ok(iso)
}

fn check_origin(grid: &OccupancyGrid, origin: GridCoord, radius: usize) -> Result<(), VisibilityError> {
    if radius == 0 {
        return Err(VisibilityError::BadRadius);
    }
    if !grid.is_floor(origin)? {
        return Err(VisibilityError::OriginNotFloor(origin));
    }
    Ok(())
}

/// Euclidean cutoff `R + 0.5`, in integers.
fn within_radius(dx: i32, dy: i32, radius: usize) -> bool {
    let (dx, dy, r) = (dx as i64, dy as i64, radius as i64);
    4 * (dx * dx + dy * dy) <= (2 * r + 1) * (2 * r + 1)
}

// Octant transforms: world offset = (col * xx + row * xy, col * yx + row * yy).
const OCTANTS: [[i32; 4]; 8] = [
    [1, 0, 0, 1],
    [0, 1, 1, 0],
    [0, -1, 1, 0],
    [-1, 0, 0, 1],
    [-1, 0, 0, -1],
    [0, -1, -1, 0],
    [0, 1, -1, 0],
    [1, 0, 0, -1],
];

/// Rational slope `num / den` with `den > 0`, plus whether the bound itself
/// is lit.
#[derive(Clone, Copy, Debug)]
struct Bound {
    num: i64,
    den: i64,
    closed: bool,
}

impl Bound {
    fn cmp_slope(&self, other: &Bound) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }

    /// Whether slope `col / row` lies on the lit side of this bound taken as
    /// a lower limit.
    fn admits_from_below(&self, col: i64, row: i64) -> bool {
        let c = (col * self.den).cmp(&(row * self.num));
        c == Ordering::Greater || (self.closed && c == Ordering::Equal)
    }

    fn admits_from_above(&self, col: i64, row: i64) -> bool {
        let c = (col * self.den).cmp(&(row * self.num));
        c == Ordering::Less || (self.closed && c == Ordering::Equal)
    }

    /// Lowest slope touched by the square of cell `(col, row)`: its corner
    /// `(col - 1/2, row + 1/2)`.
    fn square_low(col: i64, row: i64) -> Self {
        Self { num: 2 * col - 1, den: 2 * row + 1, closed: false }
    }

    /// Highest slope touched by the square: corner `(col + 1/2, row - 1/2)`.
    fn square_high(col: i64, row: i64) -> Self {
        Self { num: 2 * col + 1, den: 2 * row - 1, closed: false }
    }
}

struct Caster<'a> {
    grid: &'a OccupancyGrid,
    origin: GridCoord,
    radius: i64,
    octant: [i32; 4],
    hits: Vec<u8>,
}

impl Caster<'_> {
    fn offset(&self, row: i64, col: i64) -> (i64, i64) {
        let [xx, xy, yx, yy] = self.octant.map(|m| m as i64);
        (col * xx + row * xy, col * yx + row * yy)
    }

    fn is_wall(&self, row: i64, col: i64) -> bool {
        let (dx, dy) = self.offset(row, col);
        !self.grid.floor_or_false(self.origin.offset(dx as i32, dy as i32))
    }

    fn reveal(&mut self, row: i64, col: i64) {
        let (dx, dy) = self.offset(row, col);
        if within_radius(dx as i32, dy as i32, self.radius as usize) {
            let size = 2 * self.radius + 1;
            self.hits[((dy + self.radius) * size + dx + self.radius) as usize] += 1;
        }
    }

    /// Scans one row of the lit wedge `[start, end]` and recurses into the
    /// next row for every sub-wedge that stays lit. Shadows are the closed
    /// cones of wall squares, so rays touching a wall corner are blocked.
    fn scan(&mut self, row: i64, mut start: Bound, end: Bound) {
        if row > self.radius || start.cmp_slope(&end) == Ordering::Greater {
            return;
        }
        // columns whose squares touch the wedge
        let min_col = (start.num * (2 * row - 1) - start.den).div_euclid(2 * start.den).max(0);
        let min_col = if (min_col * 2 + 1) * start.den < start.num * (2 * row - 1) { min_col + 1 } else { min_col };
        let max_col = (end.num * (2 * row + 1) + end.den).div_euclid(2 * end.den).min(row);
        let mut prev_wall: Option<bool> = None;
        for col in min_col..=max_col {
            let wall = self.is_wall(row, col);
            if !wall
                && start.admits_from_below(col, row)
                && end.admits_from_above(col, row)
                && (col < row || !self.is_wall(row, col - 1))
            {
                self.reveal(row, col);
            }
            match (prev_wall, wall) {
                (Some(true), false) => start = Bound::square_high(col - 1, row),
                (Some(false), true) => self.scan(row + 1, start, Bound::square_low(col, row)),
                _ => {}
            }
            prev_wall = Some(wall);
        }
        if prev_wall == Some(false) {
            self.scan(row + 1, start, end);
        }
    }
}

/// Visible floor around `origin` within Euclidean distance `radius + 0.5`.
pub fn compute_isovist(grid: &OccupancyGrid, origin: GridCoord, radius: usize) -> Result<Isovist, VisibilityError> {
    check_origin(grid, origin, radius)?;
    let size = 2 * radius + 1;
    let mut caster = Caster { grid, origin, radius: radius as i64, octant: OCTANTS[0], hits: vec![0; size * size] };
    for octant in OCTANTS {
        caster.octant = octant;
        caster.scan(1, Bound { num: 0, den: 1, closed: true }, Bound { num: 1, den: 1, closed: true });
    }
    // Axis and diagonal cells belong to two octants; each must agree.
    let mut iso = Isovist::empty(radius, origin);
    let r = radius as i64;
    for v in 0..size {
        for u in 0..size {
            let (dx, dy) = (u as i64 - r, v as i64 - r);
            let owners = if dx == 0 || dy == 0 || dx.abs() == dy.abs() { 2 } else { 1 };
            if caster.hits[v * size + u] >= owners {
                iso.set(u, v);
            }
        }
    }
    iso.set(radius, radius);
    Ok(iso)
}

/// Rotates the window about its centre so that direction `heading` (image
/// coordinates, `atan2(dy, dx)`) ends up pointing along +x. Output cell
/// `(u, v)` takes the nearest input cell at its offset rotated by `+heading`;
/// samples falling outside the window are 0.
pub fn rotate_isovist(iso: &Isovist, heading: f64) -> Isovist {
    let r = iso.radius as i64;
    let size = iso.size();
    let quarter = heading / FRAC_PI_2;
    let (sin, cos) = if (quarter - quarter.round()).abs() < 1e-12 {
        // exact permutation for multiples of pi/2
        match (quarter.round() as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        heading.sin_cos()
    };
    let mut out = Isovist::empty(iso.radius, iso.origin);
    for v in 0..size {
        for u in 0..size {
            let (du, dv) = ((u as i64 - r) as f64, (v as i64 - r) as f64);
            let su = (du * cos - dv * sin).round() as i64 + r;
            let sv = (du * sin + dv * cos).round() as i64 + r;
            if (0..size as i64).contains(&su)
                && (0..size as i64).contains(&sv)
                && iso.get(su as usize, sv as usize) != 0
            {
                out.set(u, v);
            }
        }
    }
    out
}
