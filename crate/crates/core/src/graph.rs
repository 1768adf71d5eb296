//! Directed proximity graphs, per-edge conflict sets, degree statistics and
//! the binary graph/conflict file formats.
//!
//! Graph file (little-endian): `b"MRNGG"`, version `u8`, `u32` n, `u64`
//! dataset checksum, meta block (`u32` degree bound with `0xFFFF_FFFF` for
//! unbounded, `u8` pool tag, `u32` pool parameter, `u64` seed), then for each
//! node a `u32` out-degree followed by `(u32 id, f64 distance)` pairs.
//!
//! Conflict file: `b"MRNGC"`, version `u8`, `u32` n, `u64` dataset checksum,
//! then for each node a `u32` out-degree and, for each out-edge, a `u32` list
//! length followed by `(u32 id, f64 distance)` pairs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MrngError, Result};
use crate::geometry::Dataset;
use crate::scalar::Scalar;

pub const GRAPH_MAGIC: &[u8; 5] = b"MRNGG";
pub const CONFLICT_MAGIC: &[u8; 5] = b"MRNGC";
pub const FORMAT_VERSION: u8 = 1;
const UNBOUNDED_TAG: u32 = u32::MAX;

/// A node id paired with a distance. Orders by `(distance, id)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub dist: f64,
}

impl Neighbor {
    pub fn new(id: u32, dist: f64) -> Self {
        Self { id, dist }
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.id.cmp(&other.id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegreeBound {
    Unbounded,
    Bounded(u32),
}

impl DegreeBound {
    pub fn limit(self) -> usize {
        match self {
            DegreeBound::Unbounded => usize::MAX,
            DegreeBound::Bounded(m) => m as usize,
        }
    }

    fn encode(self) -> u32 {
        match self {
            DegreeBound::Unbounded => UNBOUNDED_TAG,
            DegreeBound::Bounded(m) => m,
        }
    }

    fn decode(raw: u32) -> Self {
        if raw == UNBOUNDED_TAG {
            DegreeBound::Unbounded
        } else {
            DegreeBound::Bounded(raw)
        }
    }
}

impl std::fmt::Display for DegreeBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DegreeBound::Unbounded => f.write_str("unbounded"),
            DegreeBound::Bounded(m) => write!(f, "{m}"),
        }
    }
}

/// Where each node's candidates came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolDescriptor {
    /// `U_x = S \ {x}`.
    Full,
    /// The `l` exact nearest neighbors of `x`.
    Knn(u32),
    /// Caller-supplied pools.
    Custom,
}

impl PoolDescriptor {
    fn encode(self) -> (u8, u32) {
        match self {
            PoolDescriptor::Full => (0, 0),
            PoolDescriptor::Knn(l) => (1, l),
            PoolDescriptor::Custom => (2, 0),
        }
    }

    fn decode(tag: u8, param: u32) -> Result<Self> {
        match tag {
            0 => Ok(PoolDescriptor::Full),
            1 => Ok(PoolDescriptor::Knn(param)),
            2 => Ok(PoolDescriptor::Custom),
            t => Err(MrngError::Format(format!("unknown pool tag {t}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub degree_bound: DegreeBound,
    pub pool: PoolDescriptor,
    pub seed: u64,
    pub dataset_checksum: u64,
}

/// Out-adjacency lists; each list is sorted by `(distance, id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityGraph {
    meta: GraphMeta,
    adjacency: Vec<Vec<Neighbor>>,
}

impl ProximityGraph {
    /// Checks structural invariants: ids in range, no self-loops, no
    /// duplicate neighbors, lists sorted by `(distance, id)`.
    pub fn new(meta: GraphMeta, adjacency: Vec<Vec<Neighbor>>) -> Result<Self> {
        let n = adjacency.len();
        for (v, list) in adjacency.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for nb in list {
                if nb.id as usize >= n {
                    return Err(MrngError::Format(format!(
                        "node {v}: neighbor {} out of range",
                        nb.id
                    )));
                }
                if nb.id as usize == v {
                    return Err(MrngError::Format(format!("node {v}: self-loop")));
                }
                if !seen.insert(nb.id) {
                    return Err(MrngError::Format(format!(
                        "node {v}: duplicate neighbor {}",
                        nb.id
                    )));
                }
                if !nb.dist.is_finite() || nb.dist < 0.0 {
                    return Err(MrngError::Format(format!(
                        "node {v}: invalid distance {}",
                        nb.dist
                    )));
                }
            }
            if list.windows(2).any(|w| w[0] > w[1]) {
                return Err(MrngError::Format(format!(
                    "node {v}: neighbor list not sorted"
                )));
            }
        }
        Ok(Self { meta, adjacency })
    }

    pub(crate) fn from_parts_unchecked(meta: GraphMeta, adjacency: Vec<Vec<Neighbor>>) -> Self {
        Self { meta, adjacency }
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[Neighbor] {
        &self.adjacency[v]
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, x: usize, y: usize) -> bool {
        self.adjacency[x].iter().any(|nb| nb.id as usize == y)
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(v, list)| list.iter().map(move |nb| (v as u32, nb.id)))
    }

    pub fn edge_set(&self) -> BTreeSet<(u32, u32)> {
        self.edges().collect()
    }

    /// Keeps the first `m` entries of every neighbor list.
    pub fn truncated(&self, m: usize) -> Self {
        let adjacency = self
            .adjacency
            .iter()
            .map(|l| l[..l.len().min(m)].to_vec())
            .collect();
        let meta = GraphMeta {
            degree_bound: DegreeBound::Bounded(m.min(u32::MAX as usize - 1) as u32),
            ..self.meta
        };
        Self { meta, adjacency }
    }

    /// Copy with the edge `x → y` removed (no-op if absent).
    pub fn without_edge(&self, x: usize, y: usize) -> Self {
        let mut g = self.clone();
        g.adjacency[x].retain(|nb| nb.id as usize != y);
        g
    }

    /// Copy with the edge `x → y` inserted at its sorted position.
    pub fn with_edge(&self, x: usize, y: usize, dist: f64) -> Result<Self> {
        if x == y || y >= self.len() || self.has_edge(x, y) {
            return Err(MrngError::InvalidParameter(format!(
                "cannot add edge {x} -> {y}"
            )));
        }
        let mut g = self.clone();
        let nb = Neighbor::new(y as u32, dist);
        let at = g.adjacency[x].partition_point(|e| *e < nb);
        g.adjacency[x].insert(at, nb);
        Ok(g)
    }

    /// Checks that the graph belongs to `data` and that every stored distance
    /// matches the coordinates within `1e-9` relative.
    pub fn validate_against<T: Scalar>(&self, data: &Dataset<T>) -> Result<()> {
        if self.len() != data.len() {
            return Err(MrngError::InvalidParameter(format!(
                "graph has {} nodes, dataset has {}",
                self.len(),
                data.len()
            )));
        }
        let found = data.checksum();
        if found != self.meta.dataset_checksum {
            return Err(MrngError::ChecksumMismatch {
                expected: self.meta.dataset_checksum,
                found,
            });
        }
        for (v, list) in self.adjacency.iter().enumerate() {
            for nb in list {
                let d = data.dist(v, nb.id as usize);
                if (d - nb.dist).abs() > 1e-9 * d.max(1e-300) {
                    return Err(MrngError::InvalidParameter(format!(
                        "stored distance {v} -> {} is {}, coordinates give {d}",
                        nb.id, nb.dist
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(GRAPH_MAGIC)?;
        w.write_all(&[FORMAT_VERSION])?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&self.meta.dataset_checksum.to_le_bytes())?;
        w.write_all(&self.meta.degree_bound.encode().to_le_bytes())?;
        let (tag, param) = self.meta.pool.encode();
        w.write_all(&[tag])?;
        w.write_all(&param.to_le_bytes())?;
        w.write_all(&self.meta.seed.to_le_bytes())?;
        for list in &self.adjacency {
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            write_pairs(w, list)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(GRAPH_MAGIC)?;
        let n = r.u32()? as usize;
        let dataset_checksum = r.u64()?;
        let degree_bound = DegreeBound::decode(r.u32()?);
        let tag = r.u8()?;
        let pool = PoolDescriptor::decode(tag, r.u32()?)?;
        let seed = r.u64()?;
        let mut adjacency = Vec::with_capacity(n.min(bytes.len() / 4));
        for _ in 0..n {
            let deg = r.u32()? as usize;
            adjacency.push(r.pairs(deg)?);
        }
        r.finish()?;
        let meta = GraphMeta {
            degree_bound,
            pool,
            seed,
            dataset_checksum,
        };
        Self::new(meta, adjacency)
    }
}

pub fn save_graph(g: &ProximityGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    g.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<ProximityGraph> {
    ProximityGraph::from_bytes(&read_all(path)?)
}

/// For every directed edge `v → u`, the nodes `w` with `u ∈ lune(v, w)`,
/// each paired with `δ(v, w)` and sorted by that distance.
#[derive(Clone, Debug, PartialEq)]
pub struct ConflictMap {
    dataset_checksum: u64,
    lists: Vec<Vec<Vec<Neighbor>>>,
}

impl ConflictMap {
    pub fn new(dataset_checksum: u64, lists: Vec<Vec<Vec<Neighbor>>>) -> Result<Self> {
        let n = lists.len();
        for (v, per_edge) in lists.iter().enumerate() {
            for list in per_edge {
                if list.iter().any(|w| w.id as usize >= n) {
                    return Err(MrngError::Format(format!(
                        "node {v}: conflict id out of range"
                    )));
                }
                if list.windows(2).any(|w| w[0] > w[1]) {
                    return Err(MrngError::Format(format!(
                        "node {v}: conflict list not sorted"
                    )));
                }
            }
        }
        Ok(Self {
            dataset_checksum,
            lists,
        })
    }

    pub fn dataset_checksum(&self) -> u64 {
        self.dataset_checksum
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Conflict set of the `edge`-th out-edge of `v` (graph list order).
    pub fn conflicts(&self, v: usize, edge: usize) -> &[Neighbor] {
        &self.lists[v][edge]
    }

    pub fn edge_lists(&self, v: usize) -> &[Vec<Neighbor>] {
        &self.lists[v]
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().flatten().map(Vec::len).sum()
    }

    /// True if the per-node edge counts agree with `g` and both describe the
    /// same dataset.
    pub fn matches(&self, g: &ProximityGraph) -> bool {
        self.dataset_checksum == g.meta().dataset_checksum
            && self.lists.len() == g.len()
            && self
                .lists
                .iter()
                .enumerate()
                .all(|(v, l)| l.len() == g.out_degree(v))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CONFLICT_MAGIC)?;
        w.write_all(&[FORMAT_VERSION])?;
        w.write_all(&(self.lists.len() as u32).to_le_bytes())?;
        w.write_all(&self.dataset_checksum.to_le_bytes())?;
        for per_edge in &self.lists {
            w.write_all(&(per_edge.len() as u32).to_le_bytes())?;
            for list in per_edge {
                w.write_all(&(list.len() as u32).to_le_bytes())?;
                write_pairs(w, list)?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(CONFLICT_MAGIC)?;
        let n = r.u32()? as usize;
        let checksum = r.u64()?;
        let mut lists = Vec::with_capacity(n.min(bytes.len() / 4));
        for _ in 0..n {
            let edges = r.u32()? as usize;
            let mut per_edge = Vec::with_capacity(edges.min(bytes.len() / 4));
            for _ in 0..edges {
                let len = r.u32()? as usize;
                per_edge.push(r.pairs(len)?);
            }
            lists.push(per_edge);
        }
        r.finish()?;
        Self::new(checksum, lists)
    }
}

pub fn save_conflicts(c: &ConflictMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    c.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_conflicts(path: impl AsRef<Path>) -> Result<ConflictMap> {
    ConflictMap::from_bytes(&read_all(path)?)
}

fn read_all(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn write_pairs<W: Write>(w: &mut W, list: &[Neighbor]) -> Result<()> {
    for nb in list {
        w.write_all(&nb.id.to_le_bytes())?;
        w.write_all(&nb.dist.to_le_bytes())?;
    }
    Ok(())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MrngError::Format(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 5]) -> Result<()> {
        if self.take(5)? != magic {
            return Err(MrngError::Format("bad magic".into()));
        }
        let version = self.u8()?;
        if version != FORMAT_VERSION {
            return Err(MrngError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn pairs(&mut self, len: usize) -> Result<Vec<Neighbor>> {
        // bound the allocation by what the buffer can actually hold
        let mut out = Vec::with_capacity(len.min((self.bytes.len() - self.at) / 12));
        for _ in 0..len {
            let id = self.u32()?;
            let dist = self.f64()?;
            out.push(Neighbor { id, dist });
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(MrngError::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// degree → number of nodes with that out-degree
    pub histogram: BTreeMap<usize, usize>,
}

pub fn degree_stats(g: &ProximityGraph) -> DegreeStats {
    let mut histogram = BTreeMap::new();
    let mut total = 0usize;
    for v in 0..g.len() {
        let d = g.out_degree(v);
        total += d;
        *histogram.entry(d).or_insert(0) += 1;
    }
    DegreeStats {
        min: histogram.keys().next().copied().unwrap_or(0),
        max: histogram.keys().next_back().copied().unwrap_or(0),
        mean: if g.is_empty() {
            0.0
        } else {
            total as f64 / g.len() as f64
        },
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> GraphMeta {
        GraphMeta {
            degree_bound: DegreeBound::Unbounded,
            pool: PoolDescriptor::Full,
            seed: 0,
            dataset_checksum: 7,
        }
    }

    fn collinear() -> ProximityGraph {
        let nb = Neighbor::new;
        ProximityGraph::new(
            meta(),
            vec![
                vec![nb(1, 1.0)],
                vec![nb(0, 1.0), nb(2, 1.0)],
                vec![nb(1, 1.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn degree_stats_examples() {
        let s = degree_stats(&collinear());
        assert_eq!((s.min, s.max), (1, 2));
        assert!((s.mean - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.histogram.values().sum::<usize>(), 3);

        let empty = ProximityGraph::new(meta(), vec![vec![]; 4]).unwrap();
        let s = degree_stats(&empty);
        assert_eq!((s.min, s.max, s.mean), (0, 0, 0.0));
        assert_eq!(s.histogram[&0], 4);
    }

    #[test]
    fn structural_invariants_enforced() {
        let nb = Neighbor::new;
        assert!(ProximityGraph::new(meta(), vec![vec![nb(0, 0.0)]]).is_err());
        assert!(ProximityGraph::new(meta(), vec![vec![nb(1, 1.0), nb(1, 1.0)], vec![]]).is_err());
        assert!(
            ProximityGraph::new(meta(), vec![vec![nb(2, 1.0), nb(1, 0.5)], vec![], vec![]])
                .is_err()
        );
        assert!(ProximityGraph::new(meta(), vec![vec![nb(5, 1.0)]]).is_err());
    }

    #[test]
    fn graph_round_trip_keeps_meta() {
        let mut g = collinear();
        g.meta.degree_bound = DegreeBound::Bounded(18);
        g.meta.pool = PoolDescriptor::Knn(12);
        g.meta.seed = 0xDEAD_BEEF;
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"MRNGG\x01");
        let back = ProximityGraph::from_bytes(&buf).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.meta().degree_bound, DegreeBound::Bounded(18));
    }

    #[test]
    fn truncated_graph_file_is_rejected() {
        let mut buf = Vec::new();
        collinear().write_to(&mut buf).unwrap();
        for cut in [0, 3, 6, 20, buf.len() - 1] {
            assert!(matches!(
                ProximityGraph::from_bytes(&buf[..cut]),
                Err(MrngError::Format(_))
            ));
        }
        let mut extra = buf.clone();
        extra.push(0);
        assert!(ProximityGraph::from_bytes(&extra).is_err());
        let mut bad = buf.clone();
        bad[5] = 9;
        assert!(matches!(
            ProximityGraph::from_bytes(&bad),
            Err(MrngError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn conflict_round_trip() {
        let nb = Neighbor::new;
        let c = ConflictMap::new(
            7,
            vec![
                vec![vec![nb(2, 2.0)]],
                vec![vec![], vec![]],
                vec![vec![nb(0, 2.0)]],
            ],
        )
        .unwrap();
        assert!(c.matches(&collinear()));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(ConflictMap::from_bytes(&buf).unwrap(), c);
        assert!(ConflictMap::from_bytes(&buf[..buf.len() - 2]).is_err());
    }

    #[test]
    fn edit_helpers() {
        let g = collinear();
        let cut = g.without_edge(1, 2);
        assert!(!cut.has_edge(1, 2));
        assert_eq!(cut.edge_count(), 3);
        let back = cut.with_edge(1, 2, 1.0).unwrap();
        assert_eq!(back, g);
        assert!(g.with_edge(1, 2, 1.0).is_err());
        let t = g.truncated(1);
        assert_eq!(t.neighbors(1), &[Neighbor::new(0, 1.0)]);
        assert_eq!(t.meta().degree_bound, DegreeBound::Bounded(1));
    }
}
