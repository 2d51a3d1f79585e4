//! Spatial statistics of unit activity: rate maps, edge-corrected spatial
//! autocorrelograms (SAC), rotational grid scores and decoding error.
//!
//! Maps are indexed `[iy, ix]` so a CSV dump reads like an image with the
//! `y = 0` row first. SAC lags use the same layout with the zero lag at
//! `[B - 1, B - 1]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::scalar::Scalar;
use crate::trajectory::{ArenaConfig, Trajectory};

pub const DEFAULT_MIN_OVERLAP: usize = 20;
pub const GRID_ANGLES: [f64; 5] = [30.0, 60.0, 90.0, 120.0, 150.0];

/// Time-averaged activity per spatial bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMap {
    pub grid: Array2<f64>,
    pub visit_counts: Array2<u64>,
    pub bin_size: f64,
}

impl RateMap {
    /// Map whose every bin counts as visited once (synthetic patterns).
    pub fn from_grid(grid: Array2<f64>, bin_size: f64) -> Self {
        let visit_counts = Array2::ones(grid.dim());
        Self {
            grid,
            visit_counts,
            bin_size,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.grid.nrows()
    }

    pub fn visited(&self) -> Array2<bool> {
        self.visit_counts.mapv(|c| c > 0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, &self.grid, None)
    }
}

/// Streaming accumulator for the rate maps of a whole population.
#[derive(Debug, Clone)]
pub struct RateMapAccumulator {
    arena: ArenaConfig,
    n_units: usize,
    /// `bins² × n_units`, one row per bin.
    sums: Array2<f64>,
    counts: Vec<u64>,
}

impl RateMapAccumulator {
    pub fn new(arena: &ArenaConfig, n_units: usize) -> Self {
        let b = arena.n_bins();
        Self {
            arena: *arena,
            n_units,
            sums: Array2::zeros((b * b, n_units)),
            counts: vec![0; b * b],
        }
    }

    pub fn add<F: Scalar>(&mut self, position: [f64; 2], rates: ArrayView1<'_, F>) -> Result<()> {
        if rates.len() != self.n_units {
            return Err(Error::Shape(format!(
                "{} rates for {} units",
                rates.len(),
                self.n_units
            )));
        }
        let (ix, iy) = self.arena.bin_of(position).ok_or_else(|| {
            Error::config(format!("position {position:?} lies outside the arena"))
        })?;
        let k = iy * self.arena.n_bins() + ix;
        self.counts[k] += 1;
        for (s, r) in self.sums.row_mut(k).iter_mut().zip(rates) {
            *s += r.as_f64();
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.sums += &other.sums;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn finish(&self) -> Vec<RateMap> {
        let b = self.arena.n_bins();
        let counts = Array2::from_shape_vec((b, b), self.counts.clone()).expect("square");
        (0..self.n_units)
            .map(|u| {
                let col = self.sums.index_axis(Axis(1), u);
                let grid = Array2::from_shape_fn((b, b), |(iy, ix)| {
                    let k = iy * b + ix;
                    match self.counts[k] {
                        0 => 0.0,
                        c => col[k] / c as f64,
                    }
                });
                RateMap {
                    grid,
                    visit_counts: counts.clone(),
                    bin_size: self.arena.bin_size,
                }
            })
            .collect()
    }
}

/// Rate map of one unit; `rates[t]` is the activity at `positions[t]`.
pub fn rate_map_from_positions<F: Scalar>(
    positions: &[[f64; 2]],
    rates: &[F],
    arena: &ArenaConfig,
) -> Result<RateMap> {
    if positions.len() != rates.len() {
        return Err(Error::Shape(format!(
            "{} positions but {} rates",
            positions.len(),
            rates.len()
        )));
    }
    arena.validate()?;
    let mut acc = RateMapAccumulator::new(arena, 1);
    for (p, r) in positions.iter().zip(rates) {
        acc.add(*p, ArrayView1::from(std::slice::from_ref(r)))?;
    }
    Ok(acc.finish().pop().expect("one unit"))
}

/// Rate map along a trajectory, one rate per position (`T + 1` values).
pub fn rate_map<F: Scalar>(
    trajectory: &Trajectory,
    rates: &[F],
    arena: &ArenaConfig,
) -> Result<RateMap> {
    rate_map_from_positions(&trajectory.positions, rates, arena)
}

/// Gaussian blur restricted to visited bins (normalised convolution).
pub fn smooth(map: &RateMap, sigma_bins: f64) -> RateMap {
    if sigma_bins <= 0.0 {
        return map.clone();
    }
    let b = map.n_bins() as isize;
    let radius = (3.0 * sigma_bins).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma_bins * sigma_bins)).exp())
        .collect();
    let mask = map.visit_counts.mapv(|c| if c > 0 { 1.0 } else { 0.0 });
    let masked = &map.grid * &mask;
    let blur = |src: &Array2<f64>| {
        let pass = |src: &Array2<f64>, along_x: bool| {
            Array2::from_shape_fn(src.dim(), |(iy, ix)| {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let d = k as isize - radius;
                    let (y, x) = if along_x {
                        (iy as isize, ix as isize + d)
                    } else {
                        (iy as isize + d, ix as isize)
                    };
                    if (0..b).contains(&x) && (0..b).contains(&y) {
                        acc += w * src[[y as usize, x as usize]];
                    }
                }
                acc
            })
        };
        pass(&pass(src, true), false)
    };
    let num = blur(&masked);
    let den = blur(&mask);
    let grid = Array2::from_shape_fn(map.grid.dim(), |i| {
        if mask[i] > 0.0 && den[i] > 0.0 {
            num[i] / den[i]
        } else {
            0.0
        }
    });
    RateMap {
        grid,
        visit_counts: map.visit_counts.clone(),
        bin_size: map.bin_size,
    }
}

/// Surrogate map: visited-bin values permuted among the visited bins.
pub fn shuffled_map(map: &RateMap, seed: u64, index: u64) -> RateMap {
    let mut rng = rng::stream(seed, &[domain::SHUFFLE, index]);
    let idx: Vec<(usize, usize)> = map
        .visit_counts
        .indexed_iter()
        .filter(|(_, c)| **c > 0)
        .map(|(i, _)| i)
        .collect();
    let mut values: Vec<f64> = idx.iter().map(|i| map.grid[*i]).collect();
    values.shuffle(&mut rng);
    let mut out = map.clone();
    for (i, v) in idx.into_iter().zip(values) {
        out.grid[i] = v;
    }
    out
}

/// Spatial autocorrelogram: lag `(tx, ty)` lives at `[B-1+ty, B-1+tx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sac {
    pub grid: Array2<f64>,
    pub valid: Array2<bool>,
}

impl Sac {
    /// Half width `B - 1`, the index of the zero lag.
    pub fn center(&self) -> usize {
        self.grid.nrows() / 2
    }

    pub fn at(&self, tx: isize, ty: isize) -> Option<f64> {
        let c = self.center() as isize;
        let (r, k) = (c + ty, c + tx);
        let n = self.grid.nrows() as isize;
        if !(0..n).contains(&r) || !(0..n).contains(&k) {
            return None;
        }
        let i = [r as usize, k as usize];
        self.valid[i].then_some(self.grid[i])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, &self.grid, Some(&self.valid))
    }
}

/// Pearson correlation of the map with its shifted copy over bins visited in
/// both, for every lag. Lags with fewer than `min_overlap` bins or a constant
/// side are masked. Only half the lags are computed; the other half is the
/// mirror image, which keeps the result exactly point-symmetric.
pub fn sac(map: &RateMap, min_overlap: usize) -> Result<Sac> {
    let b = map.n_bins();
    if b == 0 || map.grid.ncols() != b {
        return Err(Error::Shape("rate map must be square and non-empty".into()));
    }
    let visited = map.visited();
    if !visited.iter().any(|v| *v) {
        return Err(Error::Degenerate("rate map has no visited bins".into()));
    }
    let n = 2 * b - 1;
    let c = (b - 1) as isize;
    let lags: Vec<(isize, isize)> = (0..=c)
        .flat_map(|ty| (-c..=c).map(move |tx| (tx, ty)))
        .filter(|&(tx, ty)| ty > 0 || tx >= 0)
        .collect();
    let values: Vec<Option<f64>> = lags
        .par_iter()
        .map(|&(tx, ty)| lag_correlation(&map.grid, &visited, tx, ty, min_overlap))
        .collect();
    let mut grid = Array2::zeros((n, n));
    let mut valid = Array2::from_elem((n, n), false);
    for (&(tx, ty), v) in lags.iter().zip(values) {
        if let Some(v) = v {
            for (sx, sy) in [(tx, ty), (-tx, -ty)] {
                let i = [(c + sy) as usize, (c + sx) as usize];
                grid[i] = v;
                valid[i] = true;
            }
        }
    }
    Ok(Sac { grid, valid })
}

fn lag_correlation(
    grid: &Array2<f64>,
    visited: &Array2<bool>,
    tx: isize,
    ty: isize,
    min_overlap: usize,
) -> Option<f64> {
    let b = grid.nrows() as isize;
    let mut pairs = Vec::new();
    for y in 0.max(-ty)..b.min(b - ty) {
        for x in 0.max(-tx)..b.min(b - tx) {
            let i = [y as usize, x as usize];
            let j = [(y + ty) as usize, (x + tx) as usize];
            if visited[i] && visited[j] {
                pairs.push((grid[i], grid[j]));
            }
        }
    }
    if pairs.len() < min_overlap.max(2) {
        return None;
    }
    pearson(&pairs)
}

/// Two-pass Pearson correlation; `None` when either side is constant.
fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let (sx, sy) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut cxy, mut cxx, mut cyy, mut rxx, mut ryy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        cxy += dx * dy;
        cxx += dx * dx;
        cyy += dy * dy;
        rxx += x * x;
        ryy += y * y;
    }
    // a variance this far below the raw second moment is rounding noise
    if cxx <= 1e-12 * rxx || cyy <= 1e-12 * ryy || cxx == 0.0 || cyy == 0.0 {
        return None;
    }
    Some((cxy / (cxx.sqrt() * cyy.sqrt())).clamp(-1.0, 1.0))
}

/// Bilinear lookup at fractional lag `(x, y)`; needs every neighbour that
/// carries weight to be valid.
fn bilinear(sac: &Sac, x: f64, y: f64) -> Option<f64> {
    let c = sac.center() as f64;
    let (gx, gy) = (x + c, y + c);
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    let (gx, gy) = (snap(gx), snap(gy));
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - x0, gy - y0);
    let n = sac.grid.nrows() as isize;
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let (r, k) = (y0 as isize + dy, x0 as isize + dx);
            if !(0..n).contains(&r) || !(0..n).contains(&k) {
                return None;
            }
            let i = [r as usize, k as usize];
            if !sac.valid[i] {
                return None;
            }
            acc += w * sac.grid[i];
        }
    }
    Some(acc)
}

/// Resamples a SAC rotated counter-clockwise by `degrees` about the zero lag.
pub fn rotate_sac(sac: &Sac, degrees: f64) -> Sac {
    let n = sac.grid.nrows();
    let c = sac.center() as f64;
    let (s, co) = degrees.to_radians().sin_cos();
    let mut grid = Array2::zeros((n, n));
    let mut valid = Array2::from_elem((n, n), false);
    for r in 0..n {
        for k in 0..n {
            let (x, y) = (k as f64 - c, r as f64 - c);
            // the value at (x, y) comes from the point rotated back
            if let Some(v) = bilinear(sac, co * x + s * y, -s * x + co * y) {
                grid[[r, k]] = v;
                valid[[r, k]] = true;
            }
        }
    }
    Sac { grid, valid }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridScoreConfig {
    /// Smallest inner radius (bins).
    pub min_inner: f64,
    /// Largest inner radius as a fraction of the SAC width `2B - 1`.
    pub max_inner_fraction: f64,
    /// Step between tested inner radii (bins).
    pub inner_step: f64,
    /// Ring widths (bins).
    pub widths: Vec<f64>,
    /// Minimum number of valid SAC bins inside a ring.
    pub min_points: usize,
}

impl Default for GridScoreConfig {
    fn default() -> Self {
        Self {
            min_inner: 2.0,
            max_inner_fraction: 0.3,
            inner_step: 1.0,
            widths: vec![4.0, 6.0, 8.0],
            min_points: 50,
        }
    }
}

impl GridScoreConfig {
    pub fn annuli(&self, n_bins: usize) -> Vec<(f64, f64)> {
        let max_inner = self.max_inner_fraction * (2 * n_bins - 1) as f64;
        let mut out = Vec::new();
        let mut inner = self.min_inner;
        while inner <= max_inner + 1e-9 {
            for w in &self.widths {
                out.push((inner, inner + w));
            }
            inner += self.inner_step.max(1e-3);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScoreResult {
    /// `None` when no annulus had enough valid bins.
    pub gs: Option<f64>,
    /// `r_θ` at 30, 60, 90, 120 and 150 degrees for the winning annulus.
    pub correlations: Option<[f64; 5]>,
    /// Winning `(inner, outer)` radius in bins.
    pub annulus: Option<(f64, f64)>,
    pub annuli_tested: usize,
    pub annuli_defined: usize,
}

impl GridScoreResult {
    pub fn is_defined(&self) -> bool {
        self.gs.is_some()
    }
}

/// `(r60 + r120)/2 - (r30 + r90 + r150)/3`.
pub fn gs_from_correlations(r: &[f64; 5]) -> f64 {
    (r[1] + r[3]) / 2.0 - (r[0] + r[2] + r[4]) / 3.0
}

/// Rotational correlations and score for a single annulus.
pub fn annulus_score(sac: &Sac, inner: f64, outer: f64, min_points: usize) -> Option<(f64, [f64; 5])> {
    let c = sac.center() as isize;
    let mut pts = Vec::new();
    for ty in -c..=c {
        for tx in -c..=c {
            let d = ((tx * tx + ty * ty) as f64).sqrt();
            if d >= inner && d <= outer {
                if let Some(v) = sac.at(tx, ty) {
                    pts.push((tx as f64, ty as f64, v));
                }
            }
        }
    }
    if pts.len() < min_points {
        return None;
    }
    let mut r = [0.0; 5];
    for (slot, deg) in r.iter_mut().zip(GRID_ANGLES) {
        let (s, co) = deg.to_radians().sin_cos();
        let pairs: Vec<(f64, f64)> = pts
            .iter()
            .filter_map(|&(x, y, v)| bilinear(sac, co * x - s * y, s * x + co * y).map(|w| (v, w)))
            .collect();
        if pairs.len() < min_points {
            return None;
        }
        *slot = pearson(&pairs)?;
    }
    Some((gs_from_correlations(&r), r))
}

/// Maximum score over the configured annulus family.
pub fn grid_score(sac: &Sac, config: &GridScoreConfig) -> GridScoreResult {
    let b = sac.center() + 1;
    let annuli = config.annuli(b);
    let mut best: Option<(f64, [f64; 5], (f64, f64))> = None;
    let mut defined = 0;
    for &(inner, outer) in &annuli {
        if let Some((gs, r)) = annulus_score(sac, inner, outer, config.min_points) {
            defined += 1;
            if best.as_ref().is_none_or(|b| gs > b.0) {
                best = Some((gs, r, (inner, outer)));
            }
        }
    }
    GridScoreResult {
        gs: best.as_ref().map(|b| b.0),
        correlations: best.as_ref().map(|b| b.1),
        annulus: best.as_ref().map(|b| b.2),
        annuli_tested: annuli.len(),
        annuli_defined: defined,
    }
}

/// SAC and grid score of every map, in parallel.
pub fn score_maps(
    maps: &[RateMap],
    min_overlap: usize,
    config: &GridScoreConfig,
) -> Result<Vec<(Sac, GridScoreResult)>> {
    maps.par_iter()
        .map(|m| {
            let s = sac(m, min_overlap)?;
            let g = grid_score(&s, config);
            Ok((s, g))
        })
        .collect()
}

/// Surrogate scores from `n` field shuffles of one map.
pub fn surrogate_scores(
    map: &RateMap,
    n: usize,
    seed: u64,
    min_overlap: usize,
    config: &GridScoreConfig,
) -> Result<Vec<Option<f64>>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| Ok(grid_score(&sac(&shuffled_map(map, seed, i), min_overlap)?, config).gs))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationGridStats {
    pub mean_gs: f64,
    /// Per unit, `None` where undefined.
    pub scores: Vec<Option<f64>>,
    pub n_defined: usize,
    pub n_undefined: usize,
    /// Indices of the highest-scoring units, best first.
    pub top: Vec<usize>,
}

pub fn population_grid_stats(results: &[GridScoreResult], top_k: usize) -> Result<PopulationGridStats> {
    if results.is_empty() {
        return Err(Error::Degenerate("no rate maps".into()));
    }
    let scores: Vec<Option<f64>> = results.iter().map(|r| r.gs).collect();
    let defined: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .collect();
    if defined.is_empty() {
        return Err(Error::Degenerate("every grid score is undefined".into()));
    }
    let mean_gs = defined.iter().map(|d| d.1).sum::<f64>() / defined.len() as f64;
    let mut ranked = defined.clone();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(PopulationGridStats {
        mean_gs,
        n_defined: defined.len(),
        n_undefined: scores.len() - defined.len(),
        top: ranked.into_iter().take(top_k).map(|d| d.0).collect(),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryError {
    /// Euclidean error per trajectory and step (cm).
    pub stepwise: Vec<Vec<f64>>,
    /// Time-mean error per trajectory (cm).
    pub per_trajectory: Vec<f64>,
    /// Mean over trajectories (cm).
    pub mse: f64,
}

pub fn trajectory_mse(truth: &[Vec<[f64; 2]>], decoded: &[Vec<[f64; 2]>]) -> Result<TrajectoryError> {
    if truth.len() != decoded.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "{} true vs {} decoded trajectories",
            truth.len(),
            decoded.len()
        )));
    }
    let mut stepwise = Vec::with_capacity(truth.len());
    for (i, (a, b)) in truth.iter().zip(decoded).enumerate() {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Shape(format!(
                "trajectory {i}: {} true vs {} decoded steps",
                a.len(),
                b.len()
            )));
        }
        stepwise.push(
            a.iter()
                .zip(b)
                .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
                .collect::<Vec<_>>(),
        );
    }
    let per_trajectory: Vec<f64> = stepwise
        .iter()
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .collect();
    let mse = per_trajectory.iter().sum::<f64>() / per_trajectory.len() as f64;
    Ok(TrajectoryError {
        stepwise,
        per_trajectory,
        mse,
    })
}

// ---------------------------------------------------------------------------
// export

/// Writes a matrix as CSV, one row per line; masked entries become `nan`.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>, valid: Option<&Array2<bool>>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 12);
    for (r, row) in m.outer_iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(k, v)| match valid {
                Some(mask) if !mask[[r, k]] => "nan".to_string(),
                _ => v.to_string(),
            })
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapIndexEntry {
    pub neuron_id: usize,
    pub gs: Option<f64>,
    pub annulus: Option<(f64, f64)>,
    pub file: String,
    pub sac_file: String,
}

/// Dumps rate maps, SACs, a JSON index and the population summary CSV.
pub fn export_population(dir: &Path, maps: &[RateMap], scored: &[(Sac, GridScoreResult)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::with_capacity(maps.len());
    let summary_path = dir.join("population_summary.csv");
    let mut summary = fs::File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    writeln!(summary, "neuron_id,gs,defined_flag").map_err(|e| Error::io(&summary_path, e))?;
    for (i, (map, (s, g))) in maps.iter().zip(scored).enumerate() {
        let file = format!("ratemap_{i:04}.csv");
        let sac_file = format!("sac_{i:04}.csv");
        map.write_csv(&dir.join(&file))?;
        s.write_csv(&dir.join(&sac_file))?;
        let (gs, flag) = match g.gs {
            Some(v) => (v.to_string(), 1),
            None => ("nan".to_string(), 0),
        };
        writeln!(summary, "{i},{gs},{flag}").map_err(|e| Error::io(&summary_path, e))?;
        index.push(MapIndexEntry {
            neuron_id: i,
            gs: g.gs,
            annulus: g.annulus,
            file,
            sac_file,
        });
    }
    let index_path = dir.join("index.json");
    fs::write(&index_path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&index_path, e))
}

/// Analytic test patterns.
pub mod synthetic {
    use super::*;
    use rand::Rng;

    /// Sum of three plane waves 60° apart, rescaled to `[0, 1]`.
    pub fn hexagonal(n_bins: usize, period: f64, orientation: f64, phase: [f64; 2]) -> Array2<f64> {
        let k = 4.0 * std::f64::consts::PI / (3.0_f64.sqrt() * period);
        let dirs: Vec<(f64, f64)> = (0..3)
            .map(|i| {
                let a = orientation + i as f64 * std::f64::consts::PI / 3.0;
                (a.cos(), a.sin())
            })
            .collect();
        let raw = Array2::from_shape_fn((n_bins, n_bins), |(iy, ix)| {
            let (x, y) = (ix as f64 - phase[0], iy as f64 - phase[1]);
            dirs.iter().map(|(cx, cy)| (k * (cx * x + cy * y)).cos()).sum::<f64>()
        });
        raw.mapv(|v| (v + 1.5) / 4.5)
    }

    /// Two orthogonal gratings.
    pub fn square(n_bins: usize, period: f64) -> Array2<f64> {
        let k = 2.0 * std::f64::consts::PI / period;
        Array2::from_shape_fn((n_bins, n_bins), |(iy, ix)| {
            ((k * ix as f64).cos() + (k * iy as f64).cos() + 2.0) / 4.0
        })
    }

    /// Cosine grating along x.
    pub fn grating(n_bins: usize, period: f64) -> Array2<f64> {
        let k = 2.0 * std::f64::consts::PI / period;
        Array2::from_shape_fn((n_bins, n_bins), |(_, ix)| (k * ix as f64).cos())
    }

    /// I.i.d. uniform values.
    pub fn noise(n_bins: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::stream(seed, &[domain::SUBSAMPLE]);
        Array2::from_shape_simple_fn((n_bins, n_bins), || rng.random::<f64>())
    }
}
