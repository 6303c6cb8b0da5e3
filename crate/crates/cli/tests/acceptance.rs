//! Acceptance suite. Runs every criterion in turn, prints one PASS/FAIL line
//! each and exits non-zero if any failed.
//!
//! The toy-training hidden size defaults to 64 to keep the run within a few
//! minutes on one core; set `ISOSEQ_ACCEPTANCE_HIDDEN=250` for the full-size
//! network.

use std::cmp::Ordering;
use std::f64::consts::LN_2;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use isoseq::annotate::{certainty_color, hue_color, latent_colors, StripLayout, DEFAULT_LATENT_RANGE};
use isoseq::gridworld::{encode_png_gray, toy_floorplan, Cell, GridCoord, OccupancyGrid};
use isoseq::neuralnet::{
    grad_check, grad_check_piecewise, gru_step_backward, gru_step_cached, maxpool2, maxpool2_backward, Conv2d, Dense,
    GruParams, Parameters, Signature, Tensor,
};
use isoseq::pathgen::{build_route_graph, sample_random_trajectories, PathError};
use isoseq::sequences::{extract_sequences, footprint, Dataset, SequenceParams};
use isoseq::vae::{self, load_checkpoint, record_tensor, save_checkpoint, TrainConfig, VaeConfig, VaeModel};
use isoseq::visibility::compute_isovist;
use isoseq::Execution;
use isoseq_cli::{cmd_synth, cmd_train, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOLERANCE: f64 = 1e-5;
const AGREEMENT_THRESHOLD: f64 = 0.98;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, wall_fraction: f64) -> OccupancyGrid {
    let floor: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() >= wall_fraction).collect();
    OccupancyGrid::from_unpadded(w, h, &floor).unwrap()
}

fn criterion_1() -> Outcome {
    let a = footprint(5, 2).unwrap();
    let b = footprint(9, 2).unwrap();
    Outcome::new(a == 9 && b == 17, format!("footprint(5,2)={a} (want 9), footprint(9,2)={b} (want 17)"))
}

// Line of sight by exact segment/square intersection, independent of the
// library: the segment joining two cell centres is blocked when it meets the
// closed square of any wall cell. Coordinates are doubled so every corner is
// an integer.
fn segment_meets_cell(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> bool {
    let (ax, ay, bx, by) = (2 * a.0, 2 * a.1, 2 * b.0, 2 * b.1);
    let (lo_x, hi_x, lo_y, hi_y) = (2 * c.0 - 1, 2 * c.0 + 1, 2 * c.1 - 1, 2 * c.1 + 1);
    if ax.max(bx) < lo_x || ax.min(bx) > hi_x || ay.max(by) < lo_y || ay.min(by) > hi_y {
        return false;
    }
    let (dx, dy) = (bx - ax, by - ay);
    let side = |x: i64, y: i64| (dx * (y - ay) - dy * (x - ax)).signum();
    let s = [side(lo_x, lo_y), side(hi_x, lo_y), side(lo_x, hi_y), side(hi_x, hi_y)];
    !(s.iter().all(|&v| v > 0) || s.iter().all(|&v| v < 0))
}

fn sees(grid: &OccupancyGrid, o: GridCoord, p: GridCoord) -> bool {
    if !grid.in_bounds(p) || grid.cell(p).unwrap() != Cell::Floor {
        return false;
    }
    for y in o.y.min(p.y)..=o.y.max(p.y) {
        for x in o.x.min(p.x)..=o.x.max(p.x) {
            let c = GridCoord::new(x, y);
            if grid.cell(c).unwrap() == Cell::Wall
                && segment_meets_cell((o.x as i64, o.y as i64), (p.x as i64, p.y as i64), (x as i64, y as i64))
            {
                return false;
            }
        }
    }
    true
}

/// (matching cells, window cells) between the shadow caster and the
/// segment oracle.
fn compare_isovist(grid: &OccupancyGrid, origin: GridCoord, radius: usize) -> (usize, usize) {
    let iso = compute_isovist(grid, origin, radius).unwrap();
    let r = radius as i64;
    let mut agree = 0;
    for v in 0..iso.size() {
        for u in 0..iso.size() {
            let p = iso.world_of(u, v);
            let (du, dv) = (u as i64 - r, v as i64 - r);
            let inside = 4 * (du * du + dv * dv) <= (2 * r + 1) * (2 * r + 1);
            let expected = inside && sees(grid, origin, p);
            agree += usize::from((iso.get(u, v) != 0) == expected);
        }
    }
    (agree, iso.size() * iso.size())
}

fn criterion_2() -> Outcome {
    let sizes = [1usize, 2, 3, 4, 5, 7, 10, 13, 16, 19, 21];
    let mut rooms = 0;
    let mut mismatched_rooms = Vec::new();
    for &w in &sizes {
        for &h in &sizes {
            let g = OccupancyGrid::from_unpadded(w, h, &vec![true; w * h]).unwrap();
            let radius = w.max(h);
            let exact = g.floor_cells().into_iter().all(|o| {
                let (a, n) = compare_isovist(&g, o, radius);
                a == n
            });
            rooms += 1;
            if !exact {
                mismatched_rooms.push(format!("{w}x{h}"));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (grids, origins, radius) = (200, 20, 16);
    let mut rates = Vec::with_capacity(grids * origins);
    for _ in 0..grids {
        let g = random_grid(&mut rng, 64, 64, 0.2);
        let floor = g.floor_cells();
        for _ in 0..origins {
            let o = floor[rng.random_range(0..floor.len())];
            let (a, n) = compare_isovist(&g, o, radius);
            rates.push(a as f64 / n as f64);
        }
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let worst = rates.iter().cloned().fold(1.0, f64::min);
    Outcome::new(
        mismatched_rooms.is_empty() && mean >= AGREEMENT_THRESHOLD,
        format!(
            "{rooms} empty rooms, {} inexact {:?}; random 64x64 at 20% walls: mean agreement {mean:.6} over {} isovists \
             (worst {worst:.4}, need >= {AGREEMENT_THRESHOLD})",
            mismatched_rooms.len(),
            mismatched_rooms,
            rates.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut grids, mut isovists, mut violations) = (0, 0usize, 0usize);
    while grids < 60 {
        let (w, h) = (rng.random_range(4..=14), rng.random_range(4..=14));
        let g = random_grid(&mut rng, w, h, 0.3);
        let interior_walls: Vec<GridCoord> = (1..=h as i32)
            .flat_map(|y| (1..=w as i32).map(move |x| GridCoord::new(x, y)))
            .filter(|&p| g.cell(p).unwrap() == Cell::Wall)
            .collect();
        if interior_walls.is_empty() || g.floor_count() == 0 {
            continue;
        }
        let removed = interior_walls[rng.random_range(0..interior_walls.len())];
        let opened = g.with_cell(removed, Cell::Floor).unwrap();
        for o in g.floor_cells() {
            for radius in [2usize, 5, 9] {
                let before = compute_isovist(&g, o, radius).unwrap();
                let after = compute_isovist(&opened, o, radius).unwrap();
                violations += before.window().iter().zip(after.window()).filter(|&(&b, &a)| b > a).count();
                isovists += 1;
            }
        }
        grids += 1;
    }
    Outcome::new(
        violations == 0,
        format!("{grids} grids, {isovists} isovist pairs checked cell by cell, {violations} cells lost visibility"),
    )
}

/// Exact path length `a + b·√2`, compared without floating point.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Length(i64, i64);

impl Length {
    fn add(self, o: Length) -> Length {
        Length(self.0 + o.0, self.1 + o.1)
    }

    fn cmp(self, o: Length) -> Ordering {
        // sign of p + q·√2
        let (p, q) = (self.0 - o.0, self.1 - o.1);
        match (p.signum(), q.signum()) {
            (0, 0) => Ordering::Equal,
            (a, b) if a >= 0 && b >= 0 => Ordering::Greater,
            (a, b) if a <= 0 && b <= 0 => Ordering::Less,
            (1, _) => (p * p).cmp(&(2 * q * q)),
            _ => (2 * q * q).cmp(&(p * p)),
        }
    }
}

fn floyd_warshall(grid: &OccupancyGrid) -> (Vec<GridCoord>, Vec<Option<Length>>) {
    let nodes = grid.floor_cells();
    let n = nodes.len();
    let floor = |p: GridCoord| grid.in_bounds(p) && grid.cell(p).unwrap() == Cell::Floor;
    let mut d = vec![None; n * n];
    for i in 0..n {
        d[i * n + i] = Some(Length(0, 0));
        for j in 0..n {
            let (a, b) = (nodes[i], nodes[j]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            if i == j || dx.abs() > 1 || dy.abs() > 1 {
                continue;
            }
            if dx != 0 && dy != 0 {
                if floor(a.offset(dx, 0)) && floor(a.offset(0, dy)) {
                    d[i * n + j] = Some(Length(0, 1));
                }
            } else {
                d[i * n + j] = Some(Length(1, 0));
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = d[i * n + k] else { continue };
            for j in 0..n {
                if let Some(kj) = d[k * n + j] {
                    let via = ik.add(kj);
                    if d[i * n + j].is_none_or(|cur: Length| via.cmp(cur) == Ordering::Less) {
                        d[i * n + j] = Some(via);
                    }
                }
            }
        }
    }
    (nodes, d)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (grids, mut queries, mut mismatches, mut unreachable) = (30, 0usize, 0usize, 0usize);
    for _ in 0..grids {
        let (w, h) = (rng.random_range(3..=13), rng.random_range(3..=13));
        let g = random_grid(&mut rng, w, h, 0.25);
        if g.floor_count() == 0 {
            continue;
        }
        let graph = build_route_graph(&g).unwrap();
        let (nodes, dist) = floyd_warshall(&g);
        let n = nodes.len();
        for i in 0..n {
            for j in 0..n {
                queries += 1;
                let ok = match (graph.shortest_path(nodes[i], nodes[j]), dist[i * n + j]) {
                    (Ok(path), Some(want)) => {
                        let walked = path.points.windows(2).fold(Length(0, 0), |acc, s| {
                            let diagonal = s[0].x != s[1].x && s[0].y != s[1].y;
                            acc.add(if diagonal { Length(0, 1) } else { Length(1, 0) })
                        });
                        let got = Length(path.cost.straight as i64, path.cost.diagonal as i64);
                        let edges_ok = path.points.windows(2).all(|s| graph.has_edge(s[0], s[1]));
                        got == want && walked == want && edges_ok
                    }
                    (Err(PathError::Unreachable(..)), None) => {
                        unreachable += 1;
                        true
                    }
                    _ => false,
                };
                mismatches += usize::from(!ok);
            }
        }
    }
    Outcome::new(
        mismatches == 0,
        format!(
            "{grids} grids up to 15x15, {queries} floor-pair queries ({unreachable} unreachable), {mismatches} differ"
        ),
    )
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

struct GradTally {
    name: &'static str,
    seeds: usize,
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl GradTally {
    fn new(name: &'static str) -> Self {
        Self { name, seeds: 0, worst: 0.0, checked: 0, skipped: 0 }
    }

    fn add(&mut self, r: &isoseq::neuralnet::GradCheckReport) {
        self.worst = self.worst.max(r.max_rel_error);
        self.checked += r.checked;
        self.skipped += r.skipped;
    }

    fn ok(&self) -> bool {
        self.seeds >= 10 && self.worst < GRAD_TOLERANCE && self.checked > 10 * self.skipped
    }

    fn summary(&self) -> String {
        format!(
            "{} {:.1e} ({} seeds, {} coords, {} kinks skipped)",
            self.name, self.worst, self.seeds, self.checked, self.skipped
        )
    }
}

fn conv_check(seed: u64, tally: &mut GradTally) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = Conv2d::init(2, 3, &mut rng);
    let x = Tensor::from_vec(&[2, 6, 5], random_vec(60, &mut rng)).unwrap();
    let c = random_vec(3 * 30, &mut rng);
    // L = ½ Σ c·y²
    let loss = |conv: &Conv2d, x: &Tensor| {
        let y = conv.forward(x).unwrap();
        y.data().iter().zip(&c).map(|(y, c)| 0.5 * c * y * y).sum::<f64>()
    };
    let y = conv.forward(&x).unwrap();
    let dy = Tensor::from_vec(y.shape(), y.data().iter().zip(&c).map(|(y, c)| c * y).collect()).unwrap();
    let mut grads = Conv2d::zeros(2, 3);
    let dx = conv.backward(&x, &dy, &mut grads, true).unwrap().unwrap();
    let mut probe = conv.clone();
    tally.add(&grad_check(
        |v| {
            probe.load_flat(v).unwrap();
            loss(&probe, &x)
        },
        &conv.flatten(),
        &grads.flatten(),
        GRAD_TOLERANCE,
    ));
    tally.add(&grad_check(
        |v| loss(&conv, &Tensor::from_vec(&[2, 6, 5], v.to_vec()).unwrap()),
        x.data(),
        dx.data(),
        GRAD_TOLERANCE,
    ));
}

fn pool_check(seed: u64, tally: &mut GradTally) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 5, 7];
    let x = Tensor::from_vec(&shape, random_vec(70, &mut rng)).unwrap();
    let pooled = maxpool2(&x).unwrap();
    let c = random_vec(pooled.output.len(), &mut rng);
    let dy: Vec<f64> = pooled.output.data().iter().zip(&c).map(|(y, c)| c * y).collect();
    let dx = maxpool2_backward(&dy, &pooled.argmax, x.len());
    tally.add(&grad_check_piecewise(
        |v| {
            let p = maxpool2(&Tensor::from_vec(&shape, v.to_vec()).unwrap()).unwrap();
            let mut sig = Signature::new();
            sig.indices(&p.argmax);
            (p.output.data().iter().zip(&c).map(|(y, c)| 0.5 * c * y * y).sum(), sig.finish())
        },
        x.data(),
        &dx,
        GRAD_TOLERANCE,
    ));
}

fn dense_check(seed: u64, tally: &mut GradTally) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = Dense::init(7, 4, 1.0, &mut rng);
    let x = random_vec(7, &mut rng);
    let c = random_vec(4, &mut rng);
    // L = Σ c·tanh(y)
    let loss = |d: &Dense, x: &[f64]| d.forward(x).unwrap().iter().zip(&c).map(|(y, c)| c * y.tanh()).sum::<f64>();
    let y = dense.forward(&x).unwrap();
    let dy: Vec<f64> = y.iter().zip(&c).map(|(y, c)| c * (1.0 - y.tanh().powi(2))).collect();
    let mut grads = Dense::zeros(7, 4);
    let dx = dense.backward(&x, &dy, &mut grads);
    let mut probe = dense.clone();
    tally.add(&grad_check(
        |v| {
            probe.load_flat(v).unwrap();
            loss(&probe, &x)
        },
        &dense.flatten(),
        &grads.flatten(),
        GRAD_TOLERANCE,
    ));
    tally.add(&grad_check(|v| loss(&dense, v), &x, &dx, GRAD_TOLERANCE));
}

fn gru_check(seed: u64, tally: &mut GradTally) {
    let (ni, nh, steps) = (3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = GruParams::init(ni, nh, &mut rng);
    let xs = random_vec(ni * steps, &mut rng);
    let h0 = random_vec(nh, &mut rng);
    let c = random_vec(nh, &mut rng);
    let run = |p: &GruParams, xs: &[f64], h0: &[f64]| {
        let mut h = h0.to_vec();
        let mut caches = Vec::new();
        for x in xs.chunks(ni) {
            let (next, cache) = gru_step_cached(x, &h, p);
            caches.push(cache);
            h = next;
        }
        (h.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>(), caches)
    };
    let (_, caches) = run(&params, &xs, &h0);
    let mut grads = GruParams::zeros(ni, nh);
    let mut dh = c.clone();
    let mut dxs = Vec::new();
    for cache in caches.iter().rev() {
        let (dx, dh_prev) = gru_step_backward(&params, cache, &dh, &mut grads);
        dxs.push(dx);
        dh = dh_prev;
    }
    dxs.reverse();
    let mut probe = params.clone();
    tally.add(&grad_check(
        |v| {
            probe.load_flat(v).unwrap();
            run(&probe, &xs, &h0).0
        },
        &params.flatten(),
        &grads.flatten(),
        GRAD_TOLERANCE,
    ));
    tally.add(&grad_check(|v| run(&params, v, &h0).0, &xs, &dxs.concat(), GRAD_TOLERANCE));
    tally.add(&grad_check(|v| run(&params, &xs, v).0, &h0, &dh, GRAD_TOLERANCE));
}

fn vae_check(seed: u64, tally: &mut GradTally) {
    let cfg = VaeConfig { t: 3, window: 9, hidden: 5, latent: 1, beta: 1.0 };
    let model = VaeModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xACCE);
    let x: Vec<f64> = (0..cfg.input_len()).map(|_| f64::from(rng.random_range(0..2u8))).collect();
    let batch = [Tensor::from_vec(&cfg.input_shape(), x).unwrap()];
    let noise = [Tensor::from_vec(&[1], vec![rng.random_range(-1.5..1.5)]).unwrap()];
    let (_, grads) = model.elbo_loss(&batch, &noise, cfg.beta, Execution::Sequential).unwrap();
    let mut probe = model.clone();
    tally.add(&grad_check_piecewise(
        |v| {
            probe.load_flat(v).unwrap();
            probe.loss_signature(&batch, &noise, cfg.beta).unwrap()
        },
        &model.flatten(),
        &grads.flatten(),
        GRAD_TOLERANCE,
    ));
}

type SeededCheck = fn(u64, &mut GradTally);

fn criterion_5() -> Outcome {
    let checks: [(&'static str, SeededCheck); 5] = [
        ("conv", conv_check),
        ("pool", pool_check),
        ("dense", dense_check),
        ("gru(5 steps)", gru_check),
        ("vae(t=3,W=9,d=1)", vae_check),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, check) in checks {
        let mut tally = GradTally::new(name);
        for seed in 0..10 {
            check(seed, &mut tally);
            tally.seeds += 1;
        }
        pass &= tally.ok();
        parts.push(tally.summary());
    }
    Outcome::new(pass, format!("max rel error (< {GRAD_TOLERANCE:e}): {}", parts.join("; ")))
}

/// Sequences from random trajectories on the toy floor plan.
fn toy_sequences(grid: &OccupancyGrid, params: SequenceParams, trajectories: usize, seed: u64) -> Dataset {
    let mut ds = Dataset::for_params(params);
    for traj in sample_random_trajectories(grid, trajectories, seed, Execution::Parallel).unwrap() {
        if let Ok(seqs) = extract_sequences(&traj, grid, params, Execution::Parallel) {
            ds.extend(&seqs).unwrap();
        }
    }
    ds
}

struct Toy {
    model: VaeModel,
    held_out: Vec<Tensor>,
}

fn criterion_6(toy: &mut Option<Toy>) -> Outcome {
    let hidden = std::env::var("ISOSEQ_ACCEPTANCE_HIDDEN").ok().and_then(|v| v.parse().ok()).unwrap_or(64);
    let grid = toy_floorplan();
    let params = SequenceParams::new(5, 2, 8).unwrap();
    let train_set = toy_sequences(&grid, params, 100, 606);
    let held_out = toy_sequences(&grid, params, 20, 607);
    let cfg = VaeConfig { t: 5, window: 17, hidden, latent: 1, beta: 1.0 };
    let mut model = VaeModel::new(cfg, 6).unwrap();
    let train_cfg = TrainConfig { epochs: 30, batch_size: 64, learning_rate: 1e-3, seed: 6, exec: Execution::Parallel };
    let trace = vae::train(&mut model, &train_set, &train_cfg, |_, s| {
        println!("    epoch {:>2}: loss {:.5} bce {:.5} kl {:.4}", s.epoch, s.loss, s.bce, s.kl);
        Ok(())
    })
    .unwrap();
    let (first, last) = (&trace[0], &trace[trace.len() - 1]);
    let bound = LN_2 - 0.05;
    let pass = train_set.len() >= 2000 && trace.len() == 30 && last.loss < first.loss && last.bce < bound;
    let detail = format!(
        "{}x{} map, {} sequences, hidden {hidden}, 30 epochs: loss {:.4} -> {:.4}, final bce {:.4} (need < {bound:.4})",
        grid.width(),
        grid.height(),
        train_set.len(),
        first.loss,
        last.loss,
        last.bce
    );
    *toy = Some(Toy { model, held_out: held_out.records().iter().map(record_tensor).collect() });
    Outcome::new(pass, detail)
}

fn mean_frame_change(seq: &Tensor) -> f64 {
    let frames: Vec<&[f64]> = seq.data().chunks_exact(seq.shape()[2] * seq.shape()[3]).collect();
    let total: f64 = frames
        .windows(2)
        .map(|w| w[0].iter().zip(w[1]).map(|(a, b)| (a - b).abs()).sum::<f64>() / w[0].len() as f64)
        .sum();
    total / (frames.len() - 1) as f64
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn criterion_7(toy: &Toy) -> Outcome {
    let inputs: Vec<f64> = toy.held_out.iter().map(mean_frame_change).collect();
    let recons: Vec<f64> = toy.held_out.iter().map(|s| mean_frame_change(&toy.model.reconstruct(s).unwrap())).collect();
    let r = pearson(&inputs, &recons);
    Outcome::new(r > 0.0, format!("{} held-out sequences, Pearson r = {r:.4} (need > 0)", inputs.len()))
}

fn criterion_8(toy: &Toy, dir: &Path) -> Outcome {
    let map = dir.join("toy.png");
    fs::write(&map, encode_png_gray(&toy_floorplan().to_image())).unwrap();
    let cfg = RunConfig {
        maps: vec![map],
        t: 5,
        s: 2,
        radius: 8,
        hidden: 12,
        epochs: 3,
        batch_size: 32,
        trajectories: 15,
        seed: Some(808),
        ..RunConfig::default()
    };
    let sequential = RunConfig { parallel: false, ..cfg.clone() };
    let mut notes = Vec::new();
    let mut pass = true;

    let runs = [("a", &cfg), ("b", &cfg), ("seq", &sequential)];
    for (tag, c) in runs {
        let ds = dir.join(format!("{tag}.isq"));
        cmd_synth(c, &ds).unwrap();
        cmd_train(c, &ds, &dir.join(format!("{tag}.ivae")), &dir.join(format!("{tag}.log"))).unwrap();
    }
    let read = |name: &str| fs::read(dir.join(name)).unwrap();
    for (ext, what) in [("isq", "dataset"), ("log", "loss log"), ("ivae", "checkpoint")] {
        let a = read(&format!("a.{ext}"));
        let same_b = a == read(&format!("b.{ext}"));
        let same_seq = a == read(&format!("seq.{ext}"));
        pass &= same_b && same_seq;
        notes.push(format!("{what} {} ({} bytes)", if same_b && same_seq { "identical" } else { "DIFFERS" }, a.len()));
    }

    let path = dir.join("toy.ivae");
    save_checkpoint(&toy.model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let bit_exact = toy.held_out.iter().all(|s| {
        let a = toy.model.predict_latent(s).unwrap();
        let b = loaded.predict_latent(s).unwrap();
        a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    pass &= bit_exact;
    notes.push(format!(
        "reloaded checkpoint latents {} on {} sequences",
        if bit_exact { "bit-identical" } else { "DIFFER" },
        toy.held_out.len()
    ));
    Outcome::new(pass, format!("two parallel runs and one sequential run: {}", notes.join(", ")))
}

fn criterion_9(toy: &Toy) -> Outcome {
    let mut notes = Vec::new();
    let ends = [certainty_color(0.0), certainty_color(0.5), certainty_color(1.0)];
    let bar_ok = ends == [[0, 0, 0], [0, 255, 0], [255, 255, 255]];
    notes.push(format!("colorbar 0/0.5/1 -> {ends:?}"));

    let latents: Vec<Vec<f64>> =
        toy.held_out.iter().map(|s| toy.model.predict_latent(s).unwrap().into_data()).collect();
    let base = latent_colors(&latents);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let planar: Vec<Vec<f64>> = (0..50).map(|_| random_vec(2, &mut rng)).collect();
    let planar_base = latent_colors(&planar);
    let affine_ok = [(3.0, 7.0), (0.25, -2.0), (40.0, 1e3)].iter().all(|&(a, b)| {
        let map = |l: &[Vec<f64>]| l.iter().map(|v| v.iter().map(|x| a * x + b).collect()).collect::<Vec<Vec<f64>>>();
        latent_colors(&map(&latents)) == base && latent_colors(&map(&planar)) == planar_base
    });
    notes.push(format!(
        "colors of {} trained 1-d codes and 50 random 2-d codes unchanged under x -> ax+b: {affine_ok}",
        latents.len()
    ));

    let (lo, hi) = DEFAULT_LATENT_RANGE;
    let png = isoseq::annotate::render_latent_grid(&toy.model, 25, lo, hi).unwrap();
    let img = image::load_from_memory(&png).unwrap().to_rgb8();
    let layout = StripLayout { columns: 25, t: 5, window: 17, has_key: true };
    let key_y = layout.key_y().unwrap();
    let gap = [96u8, 96, 96];
    let mut runs = Vec::new();
    let mut in_run = false;
    for x in 0..img.width() {
        let px = img.get_pixel(x, key_y).0;
        if px != gap && !in_run {
            runs.push(px);
        }
        in_run = px != gap;
    }
    let expected_keys: Vec<[u8; 3]> = (0..25)
        .map(|i| {
            let [r, g, b, _] = hue_color(i as f64 / 24.0);
            [r, g, b]
        })
        .collect();
    let grid_ok = img.width() == layout.width() && img.height() == layout.height() && runs == expected_keys;
    notes.push(format!("latent grid k=25: {} columns in a {}x{} image", runs.len(), img.width(), img.height()));
    let decode_at = |z: f64| toy.model.decode(&Tensor::from_vec(&[1], vec![z]).unwrap()).unwrap();
    let (a, b) = (decode_at(lo), decode_at(hi));
    let spread = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    notes.push(format!("decodes at z={lo} and z={hi} differ by mean {spread:.4}"));
    Outcome::new(bar_ok && affine_ok && grid_ok && spread > 0.0, notes.join("; "))
}

fn run(number: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Outcome::new(false, format!("panicked: {}", msg.unwrap_or_default()))
    });
    println!(
        "criterion {number} {}: {title}: {} [{:.1}s]",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        start.elapsed().as_secs_f64()
    );
    outcome.pass
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let dir: PathBuf = tmp.path().to_path_buf();
    let mut results = vec![
        run(1, "sequence footprint", criterion_1),
        run(2, "visibility against the line-of-sight oracle", criterion_2),
        run(3, "visibility monotonicity", criterion_3),
        run(4, "path optimality", criterion_4),
        run(5, "gradient correctness", criterion_5),
    ];
    let mut toy = None;
    results.push(run(6, "learning signal on the toy corpus", || criterion_6(&mut toy)));
    match &toy {
        Some(toy) => {
            results.push(run(7, "temporal encoding", || criterion_7(toy)));
            results.push(run(8, "determinism", || criterion_8(toy, &dir)));
            results.push(run(9, "visualization contracts", || criterion_9(toy)));
        }
        None => {
            for (n, title) in [(7, "temporal encoding"), (8, "determinism"), (9, "visualization contracts")] {
                println!("criterion {n} FAIL: {title}: no trained toy model");
                results.push(false);
            }
        }
    }
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
