//! Graph construction.
//!
//! Every builder runs the same per-node selection: candidates are visited in
//! increasing `(distance, id)` order and `y` is accepted as a neighbor of `x`
//! iff `δ(x, y) < δ(r, y)` for every neighbor `r` already accepted, until the
//! pool is exhausted or the degree bound is reached. With the full pool and no
//! bound this yields the exact MRNG.
//!
//! Per-node work is independent, so nodes are processed in parallel; results
//! are collected in node order and do not depend on the thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MrngError, Result};
use crate::geometry::Dataset;
use crate::graph::{
    degree_stats, ConflictMap, DegreeBound, GraphMeta, Neighbor, PoolDescriptor, ProximityGraph,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildParams {
    pub degree_bound: DegreeBound,
    pub pool: PoolDescriptor,
    pub record_conflicts: bool,
    /// Provenance only; construction itself is deterministic.
    pub seed: u64,
}

impl BuildParams {
    pub fn exact() -> Self {
        Self {
            degree_bound: DegreeBound::Unbounded,
            pool: PoolDescriptor::Full,
            record_conflicts: false,
            seed: 0,
        }
    }

    pub fn bounded(m: u32) -> Self {
        Self {
            degree_bound: DegreeBound::Bounded(m),
            ..Self::exact()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree_bound == DegreeBound::Bounded(0) {
            return Err(MrngError::InvalidParameter(
                "degree bound must be at least 1".into(),
            ));
        }
        if self.pool == PoolDescriptor::Knn(0) {
            return Err(MrngError::InvalidParameter(
                "kNN pool size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for BuildParams {
    fn default() -> Self {
        Self::exact()
    }
}

/// All pairwise distances, row-major. Row `i` is computed by one scan from
/// node `i`, so filling the matrix costs exactly `n(n-1)` evaluations.
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn compute<T: Scalar>(data: &Dataset<T>) -> Self {
        let n = data.len();
        let mut m = vec![0.0f64; n * n];
        m.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            let p = data.point(i);
            for (j, slot) in row.iter_mut().enumerate() {
                if j != i {
                    *slot = crate::geometry::l2(p, data.point(j));
                }
            }
        });
        Self { n, data: m }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of distance evaluations spent filling the matrix.
    pub fn evaluations(&self) -> u64 {
        (self.n as u64) * (self.n as u64).saturating_sub(1)
    }

    #[inline(always)]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    #[inline]
    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }

    /// All other nodes ordered by `(distance from x, id)`.
    pub fn sorted_row(&self, x: usize) -> Vec<Neighbor> {
        let mut c: Vec<Neighbor> = self
            .row(x)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != x)
            .map(|(j, &d)| Neighbor::new(j as u32, d))
            .collect();
        c.sort_unstable();
        c
    }
}

/// The selection loop for one node over candidates already sorted by
/// `(distance, id)`.
fn select_neighbors(
    sorted: &[Neighbor],
    limit: usize,
    mut dist: impl FnMut(usize, usize) -> f64,
) -> Vec<Neighbor> {
    let mut chosen: Vec<Neighbor> = Vec::new();
    for cand in sorted {
        if chosen.len() >= limit {
            break;
        }
        let y = cand.id as usize;
        if chosen.iter().all(|r| cand.dist < dist(r.id as usize, y)) {
            chosen.push(*cand);
        }
    }
    chosen
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub n: usize,
    pub d: usize,
    pub params: BuildParams,
    /// Node-to-node distance evaluations spent by edge selection.
    pub distance_evals: u64,
    /// Evaluations spent generating candidate pools (kNN pools only).
    pub pool_distance_evals: u64,
    pub conflict_entries: Option<usize>,
    pub edges: usize,
    pub min_degree: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
    pub wall_time_secs: f64,
}

pub struct BuildOutput {
    pub graph: ProximityGraph,
    pub conflicts: Option<ConflictMap>,
    pub report: BuildReport,
}

fn meta_for<T: Scalar>(data: &Dataset<T>, params: &BuildParams, pool: PoolDescriptor) -> GraphMeta {
    GraphMeta {
        degree_bound: params.degree_bound,
        pool,
        seed: params.seed,
        dataset_checksum: data.checksum(),
    }
}

/// Builds with the full pool from a precomputed distance matrix.
pub fn build_from_matrix<T: Scalar>(
    data: &Dataset<T>,
    matrix: &DistanceMatrix,
    params: &BuildParams,
) -> Result<ProximityGraph> {
    params.validate()?;
    if matrix.len() != data.len() {
        return Err(MrngError::InvalidParameter(
            "distance matrix does not match dataset".into(),
        ));
    }
    let limit = params.degree_bound.limit();
    let adjacency: Vec<Vec<Neighbor>> = (0..data.len())
        .into_par_iter()
        .map(|x| select_neighbors(&matrix.sorted_row(x), limit, |a, b| matrix.get(a, b)))
        .collect();
    Ok(ProximityGraph::from_parts_unchecked(
        meta_for(data, params, PoolDescriptor::Full),
        adjacency,
    ))
}

/// The exact MRNG: full candidate pools and no degree bound.
pub fn build_mrng<T: Scalar>(data: &Dataset<T>) -> Result<ProximityGraph> {
    if data.len() < 2 {
        return Err(MrngError::InvalidParameter(
            "an MRNG needs at least two points".into(),
        ));
    }
    build_from_matrix(data, &DistanceMatrix::compute(data), &BuildParams::exact())
}

fn validate_pools(n: usize, pools: &[Vec<u32>]) -> Result<()> {
    if pools.len() != n {
        return Err(MrngError::InvalidParameter(format!(
            "{} pools supplied for {n} nodes",
            pools.len()
        )));
    }
    let mut mark = vec![usize::MAX; n];
    for (x, pool) in pools.iter().enumerate() {
        for &y in pool {
            let y = y as usize;
            if y >= n {
                return Err(MrngError::InvalidParameter(format!(
                    "pool of {x}: id {y} out of range"
                )));
            }
            if y == x {
                return Err(MrngError::InvalidParameter(format!(
                    "pool of {x} contains {x} itself"
                )));
            }
            if mark[y] == x {
                return Err(MrngError::InvalidParameter(format!(
                    "pool of {x}: duplicate id {y}"
                )));
            }
            mark[y] = x;
        }
    }
    Ok(())
}

/// Generalized build over caller-supplied candidate pools, computing
/// distances on demand. Returns the graph and the number of distance
/// evaluations spent.
pub fn build_generalized_counted<T: Scalar>(
    data: &Dataset<T>,
    params: &BuildParams,
    pools: &[Vec<u32>],
) -> Result<(ProximityGraph, u64)> {
    params.validate()?;
    validate_pools(data.len(), pools)?;
    let limit = params.degree_bound.limit();
    let per_node: Vec<(Vec<Neighbor>, u64)> = pools
        .par_iter()
        .enumerate()
        .map(|(x, pool)| {
            let mut evals = pool.len() as u64;
            let mut sorted: Vec<Neighbor> = pool
                .iter()
                .map(|&y| Neighbor::new(y, data.dist(x, y as usize)))
                .collect();
            sorted.sort_unstable();
            let chosen = select_neighbors(&sorted, limit, |a, b| {
                evals += 1;
                data.dist(a, b)
            });
            (chosen, evals)
        })
        .collect();
    let evals = per_node.iter().map(|(_, e)| e).sum();
    let adjacency = per_node.into_iter().map(|(l, _)| l).collect();
    let pool = match params.pool {
        PoolDescriptor::Full if pools.iter().all(|p| p.len() + 1 == data.len()) => {
            PoolDescriptor::Full
        }
        PoolDescriptor::Knn(l) if pools.iter().all(|p| p.len() == l as usize) => {
            PoolDescriptor::Knn(l)
        }
        _ => PoolDescriptor::Custom,
    };
    Ok((
        ProximityGraph::from_parts_unchecked(meta_for(data, params, pool), adjacency),
        evals,
    ))
}

pub fn build_generalized<T: Scalar>(
    data: &Dataset<T>,
    params: &BuildParams,
    pools: &[Vec<u32>],
) -> Result<ProximityGraph> {
    build_generalized_counted(data, params, pools).map(|(g, _)| g)
}

/// `U_x = S \ {x}` for every node.
pub fn full_pools(n: usize) -> Vec<Vec<u32>> {
    (0..n)
        .map(|x| (0..n as u32).filter(|&y| y as usize != x).collect())
        .collect()
}

/// The `l` exact nearest neighbors of every node, by `(distance, id)`,
/// found by brute force.
pub fn knn_pools<T: Scalar>(data: &Dataset<T>, l: usize) -> Result<Vec<Vec<u32>>> {
    let n = data.len();
    if l == 0 || l >= n {
        return Err(MrngError::InvalidParameter(format!(
            "kNN pool size {l} outside 1..={}",
            n.saturating_sub(1)
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|x| {
            let mut all: Vec<Neighbor> = (0..n)
                .filter(|&y| y != x)
                .map(|y| Neighbor::new(y as u32, data.dist(x, y)))
                .collect();
            if l < all.len() {
                all.select_nth_unstable(l - 1);
                all.truncate(l);
            }
            all.sort_unstable();
            all.into_iter().map(|nb| nb.id).collect()
        })
        .collect())
}

/// Builds according to `params`, reporting costs. Full pools go through a
/// shared distance matrix; kNN pools are generated by brute force and their
/// cost is reported separately from edge selection.
pub fn build<T: Scalar>(data: &Dataset<T>, params: &BuildParams) -> Result<BuildOutput> {
    params.validate()?;
    if data.len() < 2 {
        return Err(MrngError::InvalidParameter(
            "need at least two points".into(),
        ));
    }
    let start = Instant::now();
    let n = data.len() as u64;
    let (graph, distance_evals, pool_distance_evals, matrix) = match params.pool {
        PoolDescriptor::Full => {
            let matrix = DistanceMatrix::compute(data);
            let g = build_from_matrix(data, &matrix, params)?;
            (g, matrix.evaluations(), 0, Some(matrix))
        }
        PoolDescriptor::Knn(l) => {
            let pools = knn_pools(data, l as usize)?;
            let (g, evals) = build_generalized_counted(data, params, &pools)?;
            (g, evals, n * (n - 1), None)
        }
        PoolDescriptor::Custom => {
            return Err(MrngError::InvalidParameter(
                "custom pools go through build_generalized".into(),
            ))
        }
    };
    let conflicts = if params.record_conflicts {
        let matrix = matrix.unwrap_or_else(|| DistanceMatrix::compute(data));
        Some(conflicts_from_matrix(&graph, &matrix))
    } else {
        None
    };
    let stats = degree_stats(&graph);
    let report = BuildReport {
        n: data.len(),
        d: data.dim(),
        params: *params,
        distance_evals,
        pool_distance_evals,
        conflict_entries: conflicts.as_ref().map(ConflictMap::total_entries),
        edges: graph.edge_count(),
        min_degree: stats.min,
        mean_degree: stats.mean,
        max_degree: stats.max,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(BuildOutput {
        graph,
        conflicts,
        report,
    })
}

fn check_graph_matches<T: Scalar>(data: &Dataset<T>, g: &ProximityGraph) -> Result<()> {
    let found = data.checksum();
    if found != g.meta().dataset_checksum {
        return Err(MrngError::ChecksumMismatch {
            expected: g.meta().dataset_checksum,
            found,
        });
    }
    if g.len() != data.len() {
        return Err(MrngError::InvalidParameter(
            "graph and dataset sizes differ".into(),
        ));
    }
    Ok(())
}

/// `C(v→u) = { w : u ∈ lune(v, w) }` for every edge, by exhaustive scan.
pub fn compute_conflicts<T: Scalar>(data: &Dataset<T>, g: &ProximityGraph) -> Result<ConflictMap> {
    check_graph_matches(data, g)?;
    Ok(conflicts_from_matrix(g, &DistanceMatrix::compute(data)))
}

fn conflicts_from_matrix(g: &ProximityGraph, m: &DistanceMatrix) -> ConflictMap {
    let lists = (0..g.len())
        .into_par_iter()
        .map(|v| {
            let by_dist = m.sorted_row(v);
            g.neighbors(v)
                .iter()
                .map(|u| {
                    // w must be strictly farther from v than u
                    let from = by_dist.partition_point(|w| w.dist <= u.dist);
                    by_dist[from..]
                        .iter()
                        .filter(|w| m.get(u.id as usize, w.id as usize) < w.dist)
                        .copied()
                        .collect()
                })
                .collect()
        })
        .collect();
    ConflictMap::new(g.meta().dataset_checksum, lists)
        .expect("conflict lists are sorted and in range")
}

/// Distribution of `k_v(w)`: for every pair `(v, w)` where `w` conflicts with
/// at least one out-edge of `v`, the number of out-edges of `v` it conflicts
/// with. Computed without materializing the conflict map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multiplicity {
    pub histogram: BTreeMap<usize, u64>,
    pub pairs: u64,
    pub mean: f64,
}

pub fn conflict_multiplicity<T: Scalar>(
    data: &Dataset<T>,
    g: &ProximityGraph,
) -> Result<Multiplicity> {
    check_graph_matches(data, g)?;
    let m = DistanceMatrix::compute(data);
    Ok(multiplicity_from_matrix(g, &m))
}

pub fn multiplicity_from_matrix(g: &ProximityGraph, m: &DistanceMatrix) -> Multiplicity {
    let n = g.len();
    let partial: Vec<BTreeMap<usize, u64>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let row = m.row(v);
            let mut counts = vec![0usize; n];
            for u in g.neighbors(v) {
                let ui = u.id as usize;
                for w in 0..n {
                    let dvw = row[w];
                    if w != v && u.dist < dvw && m.get(ui, w) < dvw {
                        counts[w] += 1;
                    }
                }
            }
            let mut h = BTreeMap::new();
            for k in counts.into_iter().filter(|&k| k > 0) {
                *h.entry(k).or_insert(0u64) += 1;
            }
            h
        })
        .collect();
    let mut histogram = BTreeMap::new();
    for h in partial {
        for (k, c) in h {
            *histogram.entry(k).or_insert(0) += c;
        }
    }
    let pairs: u64 = histogram.values().sum();
    let weighted: u64 = histogram.iter().map(|(&k, &c)| k as u64 * c).sum();
    Multiplicity {
        mean: if pairs == 0 {
            0.0
        } else {
            weighted as f64 / pairs as f64
        },
        histogram,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::generate_uniform_dataset;

    fn collinear() -> Dataset<f64> {
        Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap()
    }

    fn triple() -> Dataset<f64> {
        Dataset::from_rows(&[vec![0.0, 0.0], vec![2.2, 0.0], vec![2.0, 2.0]]).unwrap()
    }

    #[test]
    fn collinear_mrng() {
        let g = build_mrng(&collinear()).unwrap();
        let expected = [(0, 1), (1, 0), (1, 2), (2, 1)].into_iter().collect();
        assert_eq!(g.edge_set(), expected);
    }

    #[test]
    fn two_points_link_both_ways() {
        let ds = Dataset::from_rows(&[vec![0.0f64], vec![1.0]]).unwrap();
        let g = build_mrng(&ds).unwrap();
        assert_eq!(g.edge_set(), [(0, 1), (1, 0)].into_iter().collect());
        let c = compute_conflicts(&ds, &g).unwrap();
        assert_eq!(c.total_entries(), 0);
    }

    #[test]
    fn blocked_edge_in_triple() {
        let ds = triple();
        let g = build_mrng(&ds).unwrap();
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(0, 2));
        let c = compute_conflicts(&ds, &g).unwrap();
        assert_eq!(
            c.conflicts(0, 0).iter().map(|w| w.id).collect::<Vec<_>>(),
            vec![2]
        );
        let k = conflict_multiplicity(&ds, &g).unwrap();
        // (0, 2) through edge 0 -> 1, and (2, 0) through edge 2 -> 1
        assert_eq!(k.histogram, [(1, 2)].into_iter().collect());
        assert_eq!(
            c.conflicts(2, 0).iter().map(|w| w.id).collect::<Vec<_>>(),
            vec![0]
        );
    }

    #[test]
    fn rejects_bad_input() {
        let one = Dataset::from_rows(&[vec![0.5f64]]).unwrap();
        assert!(build_mrng(&one).is_err());
        let ds = collinear();
        assert!(knn_pools(&ds, 0).is_err());
        assert!(knn_pools(&ds, 3).is_err());
        let p = BuildParams::exact();
        assert!(build_generalized(&ds, &p, &[vec![0], vec![0], vec![0]]).is_err());
        assert!(build_generalized(&ds, &p, &[vec![7], vec![0], vec![0]]).is_err());
        assert!(build_generalized(&ds, &p, &[vec![1, 1], vec![0], vec![0]]).is_err());
        assert!(build_generalized(&ds, &BuildParams::bounded(0), &full_pools(3)).is_err());
    }

    #[test]
    fn knn_pool_examples() {
        let ds = collinear();
        assert_eq!(knn_pools(&ds, 1).unwrap(), vec![vec![1], vec![0], vec![1]]);
        let full = knn_pools(&ds, 2).unwrap();
        assert_eq!(full, vec![vec![1, 2], vec![0, 2], vec![1, 0]]);
    }

    #[test]
    fn generalized_matches_exact_on_full_pools() {
        let ds: Dataset<f32> = generate_uniform_dataset(120, 5, 11).unwrap();
        let exact = build_mrng(&ds).unwrap();
        let n = ds.len();
        let g = build_generalized(&ds, &BuildParams::bounded(n as u32), &full_pools(n)).unwrap();
        assert_eq!(g.edge_set(), exact.edge_set());

        let nn = build_generalized(&ds, &BuildParams::bounded(1), &full_pools(n)).unwrap();
        for x in 0..n {
            let nearest = (0..n)
                .filter(|&y| y != x)
                .min_by(|&a, &b| ds.dist(x, a).total_cmp(&ds.dist(x, b)).then(a.cmp(&b)));
            assert_eq!(nn.neighbors(x)[0].id as usize, nearest.unwrap());
        }
    }

    #[test]
    fn exact_build_counts_every_ordered_pair() {
        let ds: Dataset<f32> = generate_uniform_dataset(50, 3, 2).unwrap();
        let out = build(&ds, &BuildParams::exact()).unwrap();
        assert_eq!(out.report.distance_evals, 50 * 49);
        assert_eq!(out.report.pool_distance_evals, 0);
        let knn = build(
            &ds,
            &BuildParams {
                pool: PoolDescriptor::Knn(8),
                ..BuildParams::exact()
            },
        )
        .unwrap();
        assert_eq!(knn.report.pool_distance_evals, 50 * 49);
        assert!(knn.graph.edges().count() > 0);
        assert_eq!(knn.graph.meta().pool, PoolDescriptor::Knn(8));
    }

    #[test]
    fn exact_conflicts_cover_non_neighbors() {
        let ds: Dataset<f32> = generate_uniform_dataset(80, 4, 5).unwrap();
        let g = build_mrng(&ds).unwrap();
        let c = compute_conflicts(&ds, &g).unwrap();
        assert!(c.matches(&g));
        for v in 0..ds.len() {
            let mut union: Vec<u32> = c.edge_lists(v).iter().flatten().map(|w| w.id).collect();
            union.sort_unstable();
            union.dedup();
            let expected: Vec<u32> = (0..ds.len() as u32)
                .filter(|&w| w as usize != v && !g.has_edge(v, w as usize))
                .collect();
            assert_eq!(union, expected);
        }
    }

    #[test]
    fn conflicts_reject_foreign_dataset() {
        let a: Dataset<f32> = generate_uniform_dataset(20, 3, 1).unwrap();
        let b: Dataset<f32> = generate_uniform_dataset(20, 3, 2).unwrap();
        let g = build_mrng(&a).unwrap();
        assert!(matches!(
            compute_conflicts(&b, &g),
            Err(MrngError::ChecksumMismatch { .. })
        ));
    }
}
