//! Shape of the population activity: point clouds from rate maps, PCA,
//! Vietoris-Rips persistent homology up to H2, shuffled controls, and the
//! Fourier phase (torus) projection along the three hexagonal axes.
//!
//! Persistence follows the cohomology algorithm popularised by Ripser:
//! simplices are addressed through the combinatorial number system,
//! coboundaries are enumerated on the fly, columns are cleared using the
//! pivots of the previous dimension, and zero-persistence (emergent) pairs are
//! detected without reduction. Coefficients are in Z/2.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::analysis::RateMap;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

pub const DEFAULT_MAX_POINTS: usize = 400;
pub const DEFAULT_CROP_FRACTION: f64 = 0.8;
pub const DEFAULT_PCA_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PopulationActivity,
    ShuffledControl,
    Synthetic,
}

/// `n` samples (rows) in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Array2<f64>,
    pub provenance: Provenance,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, provenance: Provenance) -> Self {
        Self { points, provenance }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

fn column_std(col: ndarray::ArrayView1<'_, f64>) -> f64 {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Rows are the bins of the central crop, columns the units. Units that are
/// constant over the crop are dropped; more than `max_points` rows are
/// subsampled with a seeded draw (row order kept).
pub fn build_point_cloud(
    maps: &[RateMap],
    crop_fraction: f64,
    max_points: usize,
    seed: u64,
) -> Result<PointCloud> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Degenerate("no rate maps".into()))?;
    if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
        return Err(Error::config("crop fraction must lie in (0, 1]"));
    }
    let b = first.n_bins();
    if maps.iter().any(|m| m.n_bins() != b) {
        return Err(Error::Shape("rate maps differ in size".into()));
    }
    let keep = ((b as f64 * crop_fraction).round() as usize).clamp(1, b);
    let lo = (b - keep) / 2;
    let rows: Vec<(usize, usize)> = (lo..lo + keep)
        .flat_map(|iy| (lo..lo + keep).map(move |ix| (iy, ix)))
        .collect();
    let full = Array2::from_shape_fn((rows.len(), maps.len()), |(r, u)| maps[u].grid[rows[r]]);
    let live: Vec<usize> = (0..maps.len())
        .filter(|&u| column_std(full.column(u)) >= 1e-8)
        .collect();
    if live.is_empty() {
        return Err(Error::Degenerate("every unit is constant over the crop".into()));
    }
    let mut sel: Vec<usize> = (0..rows.len()).collect();
    if max_points > 0 && sel.len() > max_points {
        let mut rng = rng::stream(seed, &[domain::SUBSAMPLE]);
        sel = sel.choose_multiple(&mut rng, max_points).copied().collect();
        sel.sort_unstable();
    }
    let points = Array2::from_shape_fn((sel.len(), live.len()), |(r, c)| full[[sel[r], live[c]]]);
    Ok(PointCloud::new(points, Provenance::PopulationActivity))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub cloud: PointCloud,
    /// Fraction of total variance per kept component.
    pub explained: Vec<f64>,
    /// Eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Components kept, at most the requested dimension.
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Mean-centred projection onto the leading principal axes.
pub fn pca_reduce(cloud: &PointCloud, target_dim: usize) -> Result<Pca> {
    let (n, d) = cloud.points.dim();
    if n < 2 || d == 0 || target_dim == 0 {
        return Err(Error::Degenerate(format!(
            "PCA needs at least 2 samples and 1 dimension, got {n}×{d}"
        )));
    }
    let mean = cloud.points.mean_axis(Axis(0)).expect("non-empty");
    let centred = &cloud.points - &mean;
    let cov = centred.t().dot(&centred) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let top = eigenvalues[0];
    let numerical_rank = eigenvalues.iter().filter(|&&v| v > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
    let rank = target_dim.min(numerical_rank).max(1);
    let rank_deficient = rank < target_dim;
    if rank_deficient {
        log::warn!("PCA: data rank {numerical_rank} below target dimension {target_dim}");
    }
    let basis = Array2::from_shape_fn((d, rank), |(i, c)| eig.eigenvectors[(i, order[c])]);
    let points = centred.dot(&basis);
    let explained = eigenvalues[..rank]
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Pca {
        cloud: PointCloud::new(points, cloud.provenance),
        explained,
        eigenvalues,
        rank,
        rank_deficient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    Euclidean,
}

/// Pairwise distances. Cosine distance is `1 - x·y / (|x| |y|)`; zero rows
/// must be removed first (see [`drop_zero_rows`]).
pub fn distance_matrix(cloud: &PointCloud, metric: Metric) -> Result<Array2<f64>> {
    let p = &cloud.points;
    let n = p.nrows();
    let norms: Vec<f64> = p.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|v| *v == 0.0) {
            return Err(Error::Degenerate(format!("row {i} has zero norm")));
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let (a, b) = (p.row(i), p.row(j));
                    match metric {
                        Metric::Euclidean => a
                            .iter()
                            .zip(b)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt(),
                        Metric::Cosine => (1.0 - a.dot(&b) / (norms[i] * norms[j])).max(0.0),
                    }
                })
                .collect()
        })
        .collect();
    // enforce exact symmetry
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            d[[i, j]] = rows[i][j];
            d[[j, i]] = rows[i][j];
        }
    }
    Ok(d)
}

pub fn drop_zero_rows(cloud: &PointCloud) -> (PointCloud, usize) {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| cloud.points.row(i).iter().any(|v| *v != 0.0))
        .collect();
    let dropped = cloud.len() - keep.len();
    let points = cloud.points.select(Axis(0), &keep);
    (PointCloud::new(points, cloud.provenance), dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    pub birth: f64,
    /// `f64::INFINITY` for essential classes.
    pub death: f64,
}

impl PersistencePair {
    pub fn lifetime(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_finite(&self) -> bool {
        self.death.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    /// `pairs[k]` holds the H_k pairs sorted by birth, then death.
    pub pairs: Vec<Vec<PersistencePair>>,
    pub threshold: f64,
}

impl PersistenceDiagram {
    pub fn dim(&self, k: usize) -> &[PersistencePair] {
        self.pairs.get(k).map_or(&[], |v| v.as_slice())
    }

    /// Finite lifetimes of H_k, longest first.
    pub fn lifetimes(&self, k: usize) -> Vec<f64> {
        let mut l: Vec<f64> = self
            .dim(k)
            .iter()
            .filter(|p| p.is_finite())
            .map(|p| p.lifetime())
            .collect();
        l.sort_by(|a, b| b.total_cmp(a));
        l
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("dim,birth,death\n");
        for (k, pairs) in self.pairs.iter().enumerate() {
            for p in pairs {
                let death = if p.death.is_finite() {
                    p.death.to_string()
                } else {
                    "inf".to_string()
                };
                out.push_str(&format!("{k},{},{death}\n", p.birth));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RipsConfig {
    pub max_dim: usize,
    /// Largest simplex diameter; `None` uses the enclosing radius, beyond
    /// which the complex is a cone.
    pub max_filtration: Option<f64>,
    pub max_points: usize,
    /// Keep zero-length H1/H2 pairs (H0 always keeps one bar per vertex).
    pub include_zero_persistence: bool,
}

impl Default for RipsConfig {
    fn default() -> Self {
        Self {
            max_dim: 2,
            max_filtration: None,
            max_points: DEFAULT_MAX_POINTS,
            include_zero_persistence: false,
        }
    }
}

pub fn enclosing_radius(dist: &Array2<f64>) -> f64 {
    dist.outer_iter()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

/// Filtration entry: a simplex index with its diameter.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    diam: f64,
    idx: u64,
}

impl Eq for Entry {}

/// Heap priority: the smallest diameter wins, ties go to the larger index
/// (the simplex that enters the filtration first).
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .diam
            .total_cmp(&self.diam)
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Columns are reduced in reverse filtration order: diameter descending,
/// then index ascending.
fn column_order(a: &Entry, b: &Entry) -> Ordering {
    b.diam.total_cmp(&a.diam).then(a.idx.cmp(&b.idx))
}

struct Rips<'a> {
    dist: &'a [f64],
    n: usize,
    threshold: f64,
    /// `binom[k][v] = C(v, k)`.
    binom: Vec<Vec<u64>>,
}

impl<'a> Rips<'a> {
    fn new(dist: &'a [f64], n: usize, threshold: f64, max_dim: usize) -> Self {
        let kmax = max_dim + 2;
        let mut binom = vec![vec![0u64; n + 1]; kmax + 1];
        for v in 0..=n {
            binom[0][v] = 1;
            for k in 1..=kmax.min(v) {
                binom[k][v] = binom[k - 1][v - 1] + if k <= v - 1 { binom[k][v - 1] } else { 0 };
            }
        }
        Self {
            dist,
            n,
            threshold,
            binom,
        }
    }

    fn c(&self, v: usize, k: usize) -> u64 {
        if k < self.binom.len() && v <= self.n {
            self.binom[k][v]
        } else {
            0
        }
    }

    /// Vertices of simplex `idx` of dimension `dim`, largest first.
    fn vertices(&self, mut idx: u64, dim: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut top = self.n;
        for k in (1..=dim + 1).rev() {
            // largest v < top with C(v, k) <= idx
            let (mut lo, mut hi) = (k - 1, top - 1);
            while lo < hi {
                let mid = (lo + hi).div_ceil(2);
                if self.c(mid, k) <= idx {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            out.push(lo);
            idx -= self.c(lo, k);
            top = lo;
        }
    }

    /// Cofacets of `simplex` (vertices `verts`, largest first) within the
    /// threshold, in decreasing index order.
    fn cofacets(&self, simplex: Entry, verts: &[usize], mut visit: impl FnMut(Entry) -> bool) {
        let mut idx_below = simplex.idx;
        let mut idx_above = 0u64;
        let mut k = verts.len();
        let mut v = self.n as isize - 1;
        while v >= k as isize {
            // skip vertices already in the simplex
            while k > 0 && self.c(v as usize, k) <= idx_below {
                idx_below -= self.c(v as usize, k);
                idx_above += self.c(v as usize, k + 1);
                v -= 1;
                k -= 1;
                if v < k as isize {
                    return;
                }
            }
            let vu = v as usize;
            let mut diam = simplex.diam;
            for &w in verts {
                diam = diam.max(self.dist[vu * self.n + w]);
            }
            let idx = idx_above + self.c(vu, k + 1) + idx_below;
            v -= 1;
            if diam <= self.threshold && !visit(Entry { diam, idx }) {
                return;
            }
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

fn pop_pivot(heap: &mut BinaryHeap<Entry>) -> Option<Entry> {
    while let Some(top) = heap.pop() {
        match heap.peek() {
            Some(next) if next.idx == top.idx => {
                heap.pop();
            }
            _ => return Some(top),
        }
    }
    None
}

fn get_pivot(heap: &mut BinaryHeap<Entry>) -> Option<Entry> {
    let p = pop_pivot(heap);
    if let Some(p) = p {
        heap.push(p);
    }
    p
}

/// Reduces the coboundary columns of one dimension. Returns the pairs and
/// the pivot cofacets, which are cleared from the next dimension.
fn reduce(
    rips: &Rips<'_>,
    columns: &[Entry],
    dim: usize,
    keep_zero: bool,
) -> (Vec<PersistencePair>, FxHashSet<u64>) {
    let mut pairs = Vec::new();
    let mut pivot_of: FxHashMap<u64, usize> = FxHashMap::default();
    // reduction columns other than the trivial `{σ_j}`
    let mut stored: FxHashMap<usize, Vec<Entry>> = FxHashMap::default();
    let mut verts = Vec::with_capacity(dim + 2);
    let mut buf: Vec<Entry> = Vec::new();
    let mut reduction: Vec<Entry> = Vec::new();

    for (j, &sigma) in columns.iter().enumerate() {
        rips.vertices(sigma.idx, dim, &mut verts);
        // the first cofacet of equal diameter is the pivot of the unreduced
        // column; if no other column owns it the pair is final
        buf.clear();
        let mut emergent = None;
        let mut check = true;
        rips.cofacets(sigma, &verts, |tau| {
            buf.push(tau);
            if check && tau.diam == sigma.diam {
                if !pivot_of.contains_key(&tau.idx) {
                    emergent = Some(tau);
                    return false;
                }
                check = false;
            }
            true
        });
        if let Some(tau) = emergent {
            if keep_zero {
                pairs.push(PersistencePair {
                    birth: sigma.diam,
                    death: tau.diam,
                });
            }
            pivot_of.insert(tau.idx, j);
            continue;
        }
        let mut heap = BinaryHeap::from(std::mem::take(&mut buf));
        reduction.clear();
        reduction.push(sigma);
        let mut pivot = get_pivot(&mut heap);
        loop {
            match pivot {
                Some(tau) => match pivot_of.get(&tau.idx) {
                    Some(&i) => {
                        let trivial = [columns[i]];
                        let col = stored.get(&i).map_or(&trivial[..], |v| v.as_slice());
                        for &s in col {
                            reduction.push(s);
                            rips.vertices(s.idx, dim, &mut verts);
                            rips.cofacets(s, &verts, |t| {
                                heap.push(t);
                                true
                            });
                        }
                        pivot = get_pivot(&mut heap);
                    }
                    None => {
                        if keep_zero || tau.diam > sigma.diam {
                            pairs.push(PersistencePair {
                                birth: sigma.diam,
                                death: tau.diam,
                            });
                        }
                        pivot_of.insert(tau.idx, j);
                        if reduction.len() > 1 {
                            stored.insert(j, mod2(&mut reduction));
                        }
                        break;
                    }
                },
                None => {
                    pairs.push(PersistencePair {
                        birth: sigma.diam,
                        death: f64::INFINITY,
                    });
                    break;
                }
            }
        }
        buf = heap.into_vec();
    }
    (pairs, pivot_of.into_keys().collect())
}

/// Z/2 sum: entries appearing an even number of times cancel.
fn mod2(entries: &mut [Entry]) -> Vec<Entry> {
    entries.sort_unstable_by_key(|e| e.idx);
    let mut out = Vec::new();
    let mut i = 0;
    while i < entries.len() {
        let mut c = 1;
        while i + c < entries.len() && entries[i + c].idx == entries[i].idx {
            c += 1;
        }
        if c % 2 == 1 {
            out.push(entries[i]);
        }
        i += c;
    }
    out
}

fn sort_pairs(p: &mut [PersistencePair]) {
    p.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.death.total_cmp(&b.death)));
}

/// Vietoris-Rips persistence of a distance matrix.
pub fn rips_from_distances(dist: &Array2<f64>, config: &RipsConfig) -> Result<PersistenceDiagram> {
    let n = dist.nrows();
    if dist.ncols() != n {
        return Err(Error::Shape("distance matrix must be square".into()));
    }
    if n == 0 {
        return Err(Error::Degenerate("empty point cloud".into()));
    }
    if n > config.max_points {
        return Err(Error::config(format!(
            "{n} points exceed the cap of {}; subsample the cloud first",
            config.max_points
        )));
    }
    if config.max_dim > 2 {
        return Err(Error::config("homology is computed up to dimension 2"));
    }
    if dist.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Degenerate("distances must be finite and non-negative".into()));
    }
    let threshold = config.max_filtration.unwrap_or_else(|| enclosing_radius(dist));
    let flat: Vec<f64> = dist.iter().copied().collect();
    let rips = Rips::new(&flat, n, threshold, config.max_dim);
    let mut pairs = vec![Vec::new(); config.max_dim + 1];

    // H0 by union-find over edges in filtration order
    let mut edges: Vec<Entry> = Vec::new();
    for j in 1..n {
        for i in 0..j {
            let d = dist[[i, j]];
            if d <= threshold {
                edges.push(Entry {
                    diam: d,
                    idx: rips.c(j, 2) + i as u64,
                });
            }
        }
    }
    edges.sort_by(|a, b| column_order(b, a));
    let mut uf = UnionFind {
        parent: (0..n).collect(),
    };
    let mut columns = Vec::new();
    let mut verts = Vec::new();
    for e in &edges {
        rips.vertices(e.idx, 1, &mut verts);
        let (a, b) = (uf.find(verts[0]), uf.find(verts[1]));
        if a != b {
            uf.parent[a.max(b)] = a.min(b);
            pairs[0].push(PersistencePair {
                birth: 0.0,
                death: e.diam,
            });
        } else {
            columns.push(*e);
        }
    }
    let components = (0..n).filter(|&i| uf.find(i) == i).count();
    for _ in 0..components {
        pairs[0].push(PersistencePair {
            birth: 0.0,
            death: f64::INFINITY,
        });
    }

    if config.max_dim >= 1 {
        columns.sort_by(column_order);
        let (p1, cleared) = reduce(&rips, &columns, 1, config.include_zero_persistence);
        pairs[1] = p1;
        if config.max_dim >= 2 {
            let mut tri = Vec::new();
            for c in 2..n {
                for b in 1..c {
                    let dbc = flat[b * n + c];
                    if dbc > threshold {
                        continue;
                    }
                    for a in 0..b {
                        let d = dbc.max(flat[a * n + b]).max(flat[a * n + c]);
                        if d <= threshold {
                            let idx = rips.c(c, 3) + rips.c(b, 2) + a as u64;
                            if !cleared.contains(&idx) {
                                tri.push(Entry { diam: d, idx });
                            }
                        }
                    }
                }
            }
            drop(cleared);
            log::debug!("rips: {} triangle columns after clearing", tri.len());
            tri.par_sort_unstable_by(column_order);
            let (p2, _) = reduce(&rips, &tri, 2, config.include_zero_persistence);
            pairs[2] = p2;
        }
    }
    for p in &mut pairs {
        sort_pairs(p);
    }
    Ok(PersistenceDiagram { pairs, threshold })
}

pub fn rips_persistence(cloud: &PointCloud, metric: Metric, config: &RipsConfig) -> Result<PersistenceDiagram> {
    rips_from_distances(&distance_matrix(cloud, metric)?, config)
}

/// Per-dimension summary of the longest finite bars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarcodeStat {
    pub mean_top: f64,
    pub count: usize,
}

pub fn barcode_stats(diagram: &PersistenceDiagram, k: usize) -> Vec<BarcodeStat> {
    (0..diagram.pairs.len())
        .map(|d| {
            let l = diagram.lifetimes(d);
            let top = &l[..k.min(l.len())];
            BarcodeStat {
                mean_top: if top.is_empty() {
                    0.0
                } else {
                    top.iter().sum::<f64>() / top.len() as f64
                },
                count: top.len(),
            }
        })
        .collect()
}

/// Lifetimes of structure-free surrogates of one cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleControl {
    /// `max_lifetimes[k][s]`: longest finite H_k bar of shuffle `s`.
    pub max_lifetimes: Vec<Vec<f64>>,
    /// `top_means[k][s]`: mean of the three longest H_k bars of shuffle `s`.
    pub top_means: Vec<Vec<f64>>,
}

/// Every column permuted independently across samples.
pub fn shuffle_columns(cloud: &PointCloud, seed: u64, shuffle: u64) -> PointCloud {
    let mut points = cloud.points.clone();
    for (c, mut col) in points.axis_iter_mut(Axis(1)).enumerate() {
        let mut rng = rng::stream(seed, &[domain::SHUFFLE, shuffle, c as u64]);
        let mut v: Vec<f64> = col.to_vec();
        v.shuffle(&mut rng);
        col.iter_mut().zip(v).for_each(|(d, s)| *d = s);
    }
    PointCloud::new(points, Provenance::ShuffledControl)
}

pub fn shuffled_control(
    cloud: &PointCloud,
    n_shuffles: usize,
    seed: u64,
    metric: Metric,
    config: &RipsConfig,
) -> Result<ShuffleControl> {
    if n_shuffles == 0 {
        return Err(Error::config("need at least one shuffle"));
    }
    let diagrams: Vec<PersistenceDiagram> = (0..n_shuffles as u64)
        .map(|s| {
            let sh = shuffle_columns(cloud, seed, s);
            let sh = match metric {
                Metric::Cosine => drop_zero_rows(&sh).0,
                Metric::Euclidean => sh,
            };
            rips_persistence(&sh, metric, config)
        })
        .collect::<Result<_>>()?;
    let dims = config.max_dim + 1;
    let max_lifetimes = (0..dims)
        .map(|k| diagrams.iter().map(|d| d.lifetimes(k).first().copied().unwrap_or(0.0)).collect())
        .collect();
    let top_means = (0..dims)
        .map(|k| diagrams.iter().map(|d| barcode_stats(d, 3)[k].mean_top).collect())
        .collect();
    Ok(ShuffleControl {
        max_lifetimes,
        top_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarcodeReport {
    pub threshold: f64,
    pub stats: Vec<BarcodeStat>,
    pub shuffled: Option<ShuffleControl>,
    pub explained_variance: Vec<f64>,
    pub n_points: usize,
}

pub fn write_barcodes_json(path: &Path, diagram: &PersistenceDiagram, report: &BarcodeReport) -> Result<()> {
    let bars: Vec<Vec<(f64, Option<f64>)>> = diagram
        .pairs
        .iter()
        .map(|ps| ps.iter().map(|p| (p.birth, p.death.is_finite().then_some(p.death))).collect())
        .collect();
    let v = serde_json::json!({ "bars": bars, "summary": report });
    fs::write(path, serde_json::to_string_pretty(&v)?).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Fourier torus

/// 2-D DFT of a real square matrix.
fn fft2(m: &Array2<f64>) -> Array2<Complex64> {
    let (rows, cols) = m.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fr = planner.plan_fft_forward(cols);
    let fc = planner.plan_fft_forward(rows);
    let mut out = m.mapv(|v| Complex64::new(v, 0.0));
    for mut row in out.outer_iter_mut() {
        let mut buf = row.to_vec();
        fr.process(&mut buf);
        row.iter_mut().zip(buf).for_each(|(d, s)| *d = s);
    }
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mut buf = col.to_vec();
        fc.process(&mut buf);
        col.iter_mut().zip(buf).for_each(|(d, s)| *d = s);
    }
    out
}

fn wrap(k: isize, n: usize) -> usize {
    k.rem_euclid(n as isize) as usize
}

/// Population-mean power spectrum of the mean-subtracted maps, symmetrised so
/// that `psd[k] == psd[-k]` exactly. Index `[ky mod B, kx mod B]`.
pub fn population_psd(maps: &[RateMap]) -> Result<Array2<f64>> {
    let first = maps.first().ok_or_else(|| Error::Degenerate("no rate maps".into()))?;
    let b = first.n_bins();
    let spectra: Vec<Array2<f64>> = maps
        .par_iter()
        .map(|m| {
            let mean = m.grid.mean().unwrap_or(0.0);
            fft2(&m.grid.mapv(|v| v - mean)).mapv(|c| c.norm_sqr())
        })
        .collect();
    let mut psd = Array2::<f64>::zeros((b, b));
    for s in &spectra {
        psd += s;
    }
    psd /= maps.len() as f64;
    let sym = Array2::from_shape_fn((b, b), |(r, c)| {
        let (r2, c2) = (wrap(-(r as isize), b), wrap(-(c as isize), b));
        let (x, y) = (psd[[r, c]], psd[[r2, c2]]);
        // order the operands so both halves compute the same sum
        if (r, c) <= (r2, c2) {
            0.5 * (x + y)
        } else {
            0.5 * (y + x)
        }
    });
    Ok(sym)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    /// Integer frequency (cycles per map), `kx, ky ∈ [-B/2, B/2)`.
    pub kx: isize,
    pub ky: isize,
    pub power: f64,
}

impl SpectralPeak {
    fn angle_deg(&self) -> f64 {
        (self.ky as f64).atan2(self.kx as f64).to_degrees().rem_euclid(180.0)
    }

    fn radius(&self) -> f64 {
        (self.kx as f64).hypot(self.ky as f64)
    }
}

fn signed(k: usize, b: usize) -> isize {
    if k < b.div_ceil(2) {
        k as isize
    } else {
        k as isize - b as isize
    }
}

/// Local maxima above `mean + 4 std`, one representative per ± pair (angle in
/// `[0°, 180°)`), strongest first.
pub fn psd_peaks(psd: &Array2<f64>) -> Vec<SpectralPeak> {
    let b = psd.nrows();
    let vals: Vec<f64> = psd.iter().copied().collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cut = mean + 4.0 * std;
    let mut peaks = Vec::new();
    for r in 0..b {
        for c in 0..b {
            let v = psd[[r, c]];
            if (r, c) == (0, 0) || v <= cut {
                continue;
            }
            let is_max = (-1..=1).all(|dr: isize| {
                (-1..=1).all(|dc: isize| {
                    (dr == 0 && dc == 0) || psd[[wrap(r as isize + dr, b), wrap(c as isize + dc, b)]] <= v
                })
            });
            if !is_max {
                continue;
            }
            let p = SpectralPeak {
                kx: signed(c, b),
                ky: signed(r, b),
                power: v,
            };
            // keep the upper half plane member of each pair
            if p.ky > 0 || (p.ky == 0 && p.kx > 0) {
                peaks.push(p);
            }
        }
    }
    peaks.sort_by(|a, b| b.power.total_cmp(&a.power).then((a.kx, a.ky).cmp(&(b.kx, b.ky))));
    peaks
}

/// Three peak pairs closest to a 60° arrangement of similar radius.
pub fn hexagonal_triple(peaks: &[SpectralPeak], tolerance_deg: f64) -> Option<[SpectralPeak; 3]> {
    let cand = &peaks[..peaks.len().min(12)];
    let mut best: Option<(f64, [SpectralPeak; 3])> = None;
    for i in 0..cand.len() {
        for j in i + 1..cand.len() {
            for k in j + 1..cand.len() {
                let mut t = [cand[i], cand[j], cand[k]];
                t.sort_by(|a, b| a.angle_deg().total_cmp(&b.angle_deg()));
                let a: Vec<f64> = t.iter().map(|p| p.angle_deg()).collect();
                let dev = ((a[1] - a[0]) - 60.0).abs() + ((a[2] - a[1]) - 60.0).abs();
                let r: Vec<f64> = t.iter().map(|p| p.radius()).collect();
                let rmax = r.iter().copied().fold(0.0, f64::max);
                let rmin = r.iter().copied().fold(f64::INFINITY, f64::min);
                if dev > tolerance_deg || rmax > 1.25 * rmin {
                    continue;
                }
                let cost = dev - 1e-9 * t.iter().map(|p| p.power).sum::<f64>();
                if best.as_ref().is_none_or(|b| cost < b.0) {
                    best = Some((cost, t));
                }
            }
        }
    }
    best.map(|b| b.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusProjection {
    /// Wave vectors in cycles per cm.
    pub axes: [[f64; 2]; 3],
    /// The same in integer cycles per map.
    pub axes_bins: [[isize; 2]; 3],
    /// Per unit, `(φ1, φ2, φ3)` in `[0, 2π)`.
    pub phases: Vec<[f64; 3]>,
    /// `rings[a][s] = (cos, sin)` of `2π k_a · X_s`.
    pub rings: Vec<Vec<[f64; 2]>>,
    pub positions: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TorusOutcome {
    Found(TorusProjection),
    /// No hexagonal peak triple above the prominence cut.
    NoStructure { peaks: Vec<SpectralPeak> },
}

/// Hexagonal Fourier axes of the population and each unit's phase along them.
///
/// Phases use the convention `map ≈ cos(2π k·x - φ)` with `x` in bins from
/// the map origin, so `φ = -arg F(k)`.
pub fn fourier_torus(maps: &[RateMap], positions: &[[f64; 2]]) -> Result<TorusOutcome> {
    let psd = population_psd(maps)?;
    let peaks = psd_peaks(&psd);
    let Some(triple) = hexagonal_triple(&peaks, 15.0) else {
        return Ok(TorusOutcome::NoStructure { peaks });
    };
    let b = maps[0].n_bins();
    let side = b as f64 * maps[0].bin_size;
    let axes_bins = triple.map(|p| [p.kx, p.ky]);
    let axes = triple.map(|p| [p.kx as f64 / side, p.ky as f64 / side]);
    let phases = maps
        .par_iter()
        .map(|m| {
            let mean = m.grid.mean().unwrap_or(0.0);
            let f = fft2(&m.grid.mapv(|v| v - mean));
            triple.map(|p| {
                let c = f[[wrap(p.ky, b), wrap(p.kx, b)]];
                (-c.arg()).rem_euclid(TAU)
            })
        })
        .collect();
    let rings = axes
        .iter()
        .map(|k| {
            positions
                .iter()
                .map(|x| {
                    let a = TAU * (k[0] * x[0] + k[1] * x[1]);
                    [a.cos(), a.sin()]
                })
                .collect()
        })
        .collect();
    Ok(TorusOutcome::Found(TorusProjection {
        axes,
        axes_bins,
        phases,
        rings,
        positions: positions.to_vec(),
    }))
}

impl TorusProjection {
    /// CSV rows `axis,sample_index,cos,sin,decoded_x,decoded_y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("axis,sample_index,cos,sin,decoded_x,decoded_y\n");
        for (a, ring) in self.rings.iter().enumerate() {
            for (s, (c, x)) in ring.iter().zip(&self.positions).enumerate() {
                out.push_str(&format!("{},{s},{},{},{},{}\n", a + 1, c[0], c[1], x[0], x[1]));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Bilinear rotation of a map about its centre; samples falling outside are
/// filled with the map mean.
pub fn rotate_map(map: &RateMap, degrees: f64) -> RateMap {
    let b = map.n_bins();
    let c = (b as f64 - 1.0) / 2.0;
    let mean = map.grid.mean().unwrap_or(0.0);
    let (s, co) = degrees.to_radians().sin_cos();
    let grid = Array2::from_shape_fn((b, b), |(r, k)| {
        let (x, y) = (k as f64 - c, r as f64 - c);
        let (sx, sy) = (co * x + s * y + c, -s * x + co * y + c);
        if sx < 0.0 || sy < 0.0 || sx > (b - 1) as f64 || sy > (b - 1) as f64 {
            return mean;
        }
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(b - 1), (y0 + 1).min(b - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let g = &map.grid;
        (1.0 - fy) * ((1.0 - fx) * g[[y0, x0]] + fx * g[[y0, x1]]) + fy * ((1.0 - fx) * g[[y1, x0]] + fx * g[[y1, x1]])
    });
    RateMap::from_grid(grid, map.bin_size)
}
