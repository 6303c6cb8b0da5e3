//! Routing over floor cells and synthetic trajectories.
//!
//! The route graph joins every FLOOR cell to its 8 neighbours: orthogonal
//! steps cost 1, diagonal steps cost √2 and are only allowed when both
//! orthogonal cells beside the step are FLOOR. Path costs are kept as exact
//! `a + b√2` pairs so that equal-length routes compare equal.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::{mix_seed, Execution};
use crate::gridworld::{GridCoord, GridError, OccupancyGrid};
use crate::visibility::supercover_line;

/// Attempts per trajectory before sampling gives up.
pub const MAX_SAMPLE_RETRIES: usize = 64;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("the grid has no floor cells")]
    NoFloor,
    #[error("need at least two floor cells to sample trajectories")]
    NotEnoughFloor,
    #[error("{0} is not a floor cell")]
    NotFloor(GridCoord),
    #[error("no route from {0} to {1}")]
    Unreachable(GridCoord, GridCoord),
    #[error("trajectory {index}: no reachable start/goal pair after {MAX_SAMPLE_RETRIES} attempts")]
    ExhaustedRetries { index: usize },
    #[error("trajectory needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("points {0} and {1} are not 8-adjacent")]
    NotAdjacent(GridCoord, GridCoord),
    #[error("trajectory file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("trajectory count must be at least 1")]
    ZeroCount,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Exact path length `straight + diagonal·√2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub const ZERO: PathCost = PathCost { straight: 0, diagonal: 0 };

    pub fn new(straight: u32, diagonal: u32) -> Self {
        Self { straight, diagonal }
    }

    pub fn weight(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn step(self, diagonal: bool) -> Self {
        if diagonal {
            Self::new(self.straight, self.diagonal + 1)
        } else {
            Self::new(self.straight + 1, self.diagonal)
        }
    }
}

impl Ord for PathCost {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of (a1 - a2) - (b2 - b1)·√2
        let da = self.straight as i64 - other.straight as i64;
        let db = other.diagonal as i64 - self.diagonal as i64;
        match (da.signum(), db.signum()) {
            (0, 0) => Ordering::Equal,
            (a, b) if a >= 0 && b <= 0 => Ordering::Greater,
            (a, b) if a <= 0 && b >= 0 => Ordering::Less,
            (1, _) => (da * da).cmp(&(2 * db * db)),
            _ => (2 * db * db).cmp(&(da * da)),
        }
    }
}

impl PartialOrd for PathCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected graph over the FLOOR cells of a grid. Node ids follow
/// row-major order, i.e. lexicographic `(y, x)`.
#[derive(Clone, Debug)]
pub struct RouteGraph {
    width: usize,
    nodes: Vec<GridCoord>,
    node_of_cell: Vec<Option<u32>>,
    adjacency: Vec<Vec<(u32, bool)>>,
}

const NEIGHBOURS: [(i32, i32); 8] = [(0, -1), (-1, 0), (1, 0), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1)];

impl RouteGraph {
    pub fn build(grid: &OccupancyGrid) -> Result<Self, PathError> {
        let nodes = grid.floor_cells();
        if nodes.is_empty() {
            return Err(PathError::NoFloor);
        }
        let mut node_of_cell = vec![None; grid.width() * grid.height()];
        for (id, &p) in nodes.iter().enumerate() {
            node_of_cell[grid.index_of(p)?] = Some(id as u32);
        }
        let adjacency = nodes
            .iter()
            .map(|&p| {
                NEIGHBOURS
                    .iter()
                    .filter_map(|&(dx, dy)| {
                        let q = p.offset(dx, dy);
                        let diagonal = dx != 0 && dy != 0;
                        let open = grid.floor_or_false(q)
                            && (!diagonal
                                || (grid.floor_or_false(p.offset(dx, 0)) && grid.floor_or_false(p.offset(0, dy))));
                        open.then(|| (node_of_cell[q.y as usize * grid.width() + q.x as usize].unwrap(), diagonal))
                    })
                    .collect()
            })
            .collect();
        Ok(Self { width: grid.width(), nodes, node_of_cell, adjacency })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn diagonal_edge_count(&self) -> usize {
        self.adjacency.iter().map(|a| a.iter().filter(|(_, d)| *d).count()).sum::<usize>() / 2
    }

    pub fn nodes(&self) -> &[GridCoord] {
        &self.nodes
    }

    pub fn node_id(&self, p: GridCoord) -> Option<usize> {
        if p.x < 0 || p.y < 0 || p.x as usize >= self.width {
            return None;
        }
        self.node_of_cell.get(p.y as usize * self.width + p.x as usize).copied().flatten().map(|id| id as usize)
    }

    /// Neighbours of a node with the weight of the connecting edge.
    pub fn neighbours(&self, p: GridCoord) -> Vec<(GridCoord, f64)> {
        self.node_id(p)
            .map(|id| {
                self.adjacency[id]
                    .iter()
                    .map(|&(q, d)| (self.nodes[q as usize], if d { SQRT_2 } else { 1.0 }))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn has_edge(&self, a: GridCoord, b: GridCoord) -> bool {
        match (self.node_id(a), self.node_id(b)) {
            (Some(a), Some(b)) => self.adjacency[a].iter().any(|&(q, _)| q as usize == b),
            _ => false,
        }
    }

    fn require(&self, p: GridCoord) -> Result<usize, PathError> {
        self.node_id(p).ok_or(PathError::NotFloor(p))
    }

    /// Minimum-cost path. Queue ties are broken by `(y, x)` order.
    pub fn shortest_path(&self, start: GridCoord, goal: GridCoord) -> Result<ShortestPath, PathError> {
        let (s, g) = (self.require(start)?, self.require(goal)?);
        let mut cost: Vec<Option<PathCost>> = vec![None; self.nodes.len()];
        let mut prev = vec![u32::MAX; self.nodes.len()];
        let mut done = vec![false; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        cost[s] = Some(PathCost::ZERO);
        heap.push(Reverse((PathCost::ZERO, s as u32)));
        while let Some(Reverse((c, u))) = heap.pop() {
            let u = u as usize;
            if done[u] {
                continue;
            }
            done[u] = true;
            if u == g {
                let mut points = vec![self.nodes[g]];
                let mut at = g;
                while at != s {
                    at = prev[at] as usize;
                    points.push(self.nodes[at]);
                }
                points.reverse();
                return Ok(ShortestPath { points, cost: c });
            }
            for &(v, diagonal) in &self.adjacency[u] {
                let v = v as usize;
                let next = c.step(diagonal);
                if !done[v] && cost[v].is_none_or(|old| next < old) {
                    cost[v] = Some(next);
                    prev[v] = u as u32;
                    heap.push(Reverse((next, v as u32)));
                }
            }
        }
        Err(PathError::Unreachable(start, goal))
    }
}

pub fn build_route_graph(grid: &OccupancyGrid) -> Result<RouteGraph, PathError> {
    RouteGraph::build(grid)
}

pub fn dijkstra_shortest_path(
    graph: &RouteGraph,
    start: GridCoord,
    goal: GridCoord,
) -> Result<ShortestPath, PathError> {
    graph.shortest_path(start, goal)
}

/// Result of a route query; may be a single point when start equals goal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShortestPath {
    pub points: Vec<GridCoord>,
    pub cost: PathCost,
}

impl ShortestPath {
    pub fn weight(&self) -> f64 {
        self.cost.weight()
    }

    pub fn into_trajectory(self) -> Result<Trajectory, PathError> {
        Trajectory::from_adjacent(self.points)
    }
}

/// Ordered walk of 8-adjacent cells, at least two long.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Trajectory {
    points: Vec<GridCoord>,
}

impl Trajectory {
    /// Validates length, adjacency and that every point is FLOOR.
    pub fn new(points: Vec<GridCoord>, grid: &OccupancyGrid) -> Result<Self, PathError> {
        for &p in &points {
            if !grid.is_floor(p)? {
                return Err(PathError::NotFloor(p));
            }
        }
        Self::from_adjacent(points)
    }

    fn from_adjacent(points: Vec<GridCoord>) -> Result<Self, PathError> {
        if points.len() < 2 {
            return Err(PathError::TooShort(points.len()));
        }
        if let Some(w) = points.windows(2).find(|w| w[0].chebyshev(w[1]) != 1) {
            return Err(PathError::NotAdjacent(w[0], w[1]));
        }
        Ok(Self { points })
    }

    /// Joins waypoints with supercover segments, dropping repeated points,
    /// then validates as [`Trajectory::new`]. Waypoints that are already
    /// 8-adjacent are joined directly.
    pub fn from_waypoints(waypoints: &[GridCoord], grid: &OccupancyGrid) -> Result<Self, PathError> {
        let mut points: Vec<GridCoord> = Vec::new();
        for &w in waypoints {
            match points.last() {
                None => points.push(w),
                Some(&last) if last == w => {}
                Some(&last) if last.chebyshev(w) == 1 => points.push(w),
                Some(&last) => points.extend(supercover_line(last, w).into_iter().skip(1)),
            }
        }
        Self::new(points, grid)
    }

    pub fn points(&self) -> &[GridCoord] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Walking direction at `index`, `atan2(dy, dx)` in image coordinates.
    /// Interior points use the central difference; endpoints, and interior
    /// points whose neighbours coincide, use their adjacent segment.
    pub fn heading_at(&self, index: usize) -> f64 {
        let p = &self.points;
        let last = p.len() - 1;
        let (a, b) = match index {
            0 => (p[0], p[1]),
            i if i >= last => (p[last - 1], p[last]),
            i if p[i - 1] == p[i + 1] => (p[i], p[i + 1]),
            i => (p[i - 1], p[i + 1]),
        };
        ((b.y - a.y) as f64).atan2((b.x - a.x) as f64)
    }
}

pub fn heading_at(traj: &Trajectory, index: usize) -> f64 {
    traj.heading_at(index)
}

/// Samples `count` shortest paths between uniformly drawn distinct FLOOR
/// cells. Trajectory `i` draws from its own generator seeded with
/// `mix_seed(seed, i)`, so the output does not depend on `exec`.
pub fn sample_random_trajectories(
    grid: &OccupancyGrid,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Trajectory>, PathError> {
    if count == 0 {
        return Err(PathError::ZeroCount);
    }
    let graph = RouteGraph::build(grid)?;
    if graph.node_count() < 2 {
        return Err(PathError::NotEnoughFloor);
    }
    exec.try_map(count, |i| sample_one(&graph, mix_seed(seed, i as u64), i))
}

fn sample_one(graph: &RouteGraph, seed: u64, index: usize) -> Result<Trajectory, PathError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.node_count();
    for _ in 0..MAX_SAMPLE_RETRIES {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        match graph.shortest_path(graph.nodes[a], graph.nodes[b]) {
            Ok(path) => return path.into_trajectory(),
            Err(PathError::Unreachable(..)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(PathError::ExhaustedRetries { index })
}

/// Parses the hand-drawn trajectory text format: one `x,y` pair per line,
/// `#` starts a comment, blank lines are ignored.
pub fn parse_trajectory_text(text: &str) -> Result<Vec<GridCoord>, PathError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| PathError::Format { line: n + 1, message };
        let (x, y) = line.split_once(',').ok_or_else(|| err(format!("expected \"x,y\", got {line:?}")))?;
        let x = x.trim().parse::<i32>().map_err(|e| err(format!("bad x: {e}")))?;
        let y = y.trim().parse::<i32>().map_err(|e| err(format!("bad y: {e}")))?;
        out.push(GridCoord::new(x, y));
    }
    Ok(out)
}

/// Renders waypoints in the format read by [`parse_trajectory_text`].
pub fn format_trajectory_text(points: &[GridCoord]) -> String {
    points.iter().map(|p| format!("{},{}\n", p.x, p.y)).collect()
}
