//! Query-time routines over a built graph.
//!
//! Budgets count query-to-node distance evaluations only, each node at most
//! once per query. Node-to-node distances are read from the graph or the
//! conflict map and are free.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{MrngError, Result};
use crate::geometry::{angle_at, f_theta, Dataset};
use crate::graph::{ConflictMap, Neighbor, ProximityGraph};
use crate::scalar::Scalar;

/// Relative slack on both conflict-search filters. Widening a filter only
/// scans more candidates, so this cannot drop the true nearest neighbor
/// through rounding at the threshold.
pub const FILTER_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceAction {
    Expand,
    Visit,
    Escape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: usize,
    pub node: u32,
    pub distance: f64,
    pub action: TraceAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Closest nodes seen, ascending by `(distance, id)`.
    pub candidates: Vec<Neighbor>,
    pub distance_evals: u64,
    /// Nodes in the order they were stepped to (greedy) or expanded (best-first).
    pub path: Vec<u32>,
    pub terminated_at_local_min: bool,
    pub trace: Vec<TraceEvent>,
}

impl SearchResult {
    pub fn top1(&self) -> Option<Neighbor> {
        self.candidates.first().copied()
    }
}

/// Writes the trace as JSON lines.
pub fn write_trace_jsonl<W: Write>(w: &mut W, trace: &[TraceEvent]) -> Result<()> {
    for ev in trace {
        serde_json::to_writer(&mut *w, ev)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn check_node(g: &ProximityGraph, v: usize) -> Result<()> {
    if v >= g.len() {
        return Err(MrngError::InvalidParameter(format!(
            "node {v} out of range (n = {})",
            g.len()
        )));
    }
    Ok(())
}

fn check_inputs<T: Scalar>(g: &ProximityGraph, data: &Dataset<T>, q: &[T]) -> Result<()> {
    if g.len() != data.len() {
        return Err(MrngError::InvalidParameter(
            "graph and dataset sizes differ".into(),
        ));
    }
    data.check_query(q)
}

/// Memoized, budgeted evaluation of query distances plus best-first state.
struct Searcher<'a, T: Scalar> {
    g: &'a ProximityGraph,
    data: &'a Dataset<T>,
    q: &'a [T],
    dist: Vec<f64>,
    seen: Vec<Neighbor>,
    frontier: BinaryHeap<Reverse<Neighbor>>,
    expanded: Vec<bool>,
    on_path: Vec<bool>,
    evals: u64,
    budget: u64,
    path: Vec<u32>,
    trace: Vec<TraceEvent>,
}

impl<'a, T: Scalar> Searcher<'a, T> {
    fn new(g: &'a ProximityGraph, data: &'a Dataset<T>, q: &'a [T], budget: u64) -> Self {
        Self {
            g,
            data,
            q,
            dist: vec![f64::NAN; data.len()],
            seen: Vec::new(),
            frontier: BinaryHeap::new(),
            expanded: vec![false; data.len()],
            on_path: vec![false; data.len()],
            evals: 0,
            budget,
            path: Vec::new(),
            trace: Vec::new(),
        }
    }

    fn known(&self, id: usize) -> Option<f64> {
        let d = self.dist[id];
        (!d.is_nan()).then_some(d)
    }

    fn event(&mut self, node: u32, distance: f64, action: TraceAction) {
        let step = self.trace.len();
        self.trace.push(TraceEvent {
            step,
            node,
            distance,
            action,
        });
    }

    /// Distance from the query to `id`, spending budget only on first sight.
    fn eval(&mut self, id: u32) -> Option<f64> {
        if let Some(d) = self.known(id as usize) {
            return Some(d);
        }
        if self.evals >= self.budget {
            return None;
        }
        let d = self.data.dist_to(id as usize, self.q);
        self.evals += 1;
        self.dist[id as usize] = d;
        self.seen.push(Neighbor::new(id, d));
        self.event(id, d, TraceAction::Visit);
        Some(d)
    }

    fn push(&mut self, nb: Neighbor) {
        if !self.expanded[nb.id as usize] {
            self.frontier.push(Reverse(nb));
        }
    }

    /// Evaluates every unseen out-neighbor of `v`. Returns false if the
    /// budget ran out before `v` was fully expanded.
    fn expand(&mut self, v: Neighbor, limit: u64) -> bool {
        let vi = v.id as usize;
        if !self.on_path[vi] {
            self.on_path[vi] = true;
            self.path.push(v.id);
        }
        self.event(v.id, v.dist, TraceAction::Expand);
        let g = self.g;
        for nb in g.neighbors(vi) {
            if self.known(nb.id as usize).is_some() {
                continue;
            }
            if self.evals >= limit {
                return false;
            }
            let d = self.eval(nb.id).expect("limit never exceeds budget");
            self.push(Neighbor::new(nb.id, d));
        }
        self.expanded[vi] = true;
        true
    }

    /// Expands the closest unexpanded frontier node. Returns false if the
    /// frontier is empty or `limit` ran out mid-expansion.
    fn step(&mut self, limit: u64) -> bool {
        let limit = limit.min(self.budget);
        while let Some(Reverse(c)) = self.frontier.pop() {
            if self.expanded[c.id as usize] {
                continue;
            }
            if !self.expand(c, limit) {
                self.frontier.push(Reverse(c));
                return false;
            }
            return true;
        }
        false
    }

    /// Best-first expansion until the frontier empties or `limit` evaluations
    /// have been spent.
    fn run(&mut self, limit: u64) {
        while self.step(limit) {}
    }

    fn best(&self) -> Option<Neighbor> {
        self.seen.iter().min().copied()
    }

    fn is_local_min(&self, v: Neighbor) -> bool {
        self.g
            .neighbors(v.id as usize)
            .iter()
            .all(|u| self.known(u.id as usize).is_some_and(|d| d >= v.dist))
    }

    fn finish(mut self, k: usize) -> SearchResult {
        let local_min = self.best().is_some_and(|b| self.is_local_min(b));
        self.seen.sort_unstable();
        self.seen.truncate(k);
        SearchResult {
            candidates: self.seen,
            distance_evals: self.evals,
            path: self.path,
            terminated_at_local_min: local_min,
            trace: self.trace,
        }
    }
}

/// Greedy descent: repeatedly move to the out-neighbor closest to `q` among
/// those strictly closer than the current node, stopping at a local minimum.
pub fn closer_and_go<T: Scalar>(
    g: &ProximityGraph,
    data: &Dataset<T>,
    p: u32,
    q: &[T],
) -> Result<SearchResult> {
    check_inputs(g, data, q)?;
    check_node(g, p as usize)?;
    let mut s = Searcher::new(g, data, q, u64::MAX);
    let mut cur = Neighbor::new(p, s.eval(p).unwrap());
    s.path.push(p);
    loop {
        s.event(cur.id, cur.dist, TraceAction::Expand);
        let mut next: Option<Neighbor> = None;
        for u in g.neighbors(cur.id as usize) {
            let d = s.eval(u.id).unwrap();
            let cand = Neighbor::new(u.id, d);
            if d < cur.dist && next.is_none_or(|n| cand < n) {
                next = Some(cand);
            }
        }
        match next {
            Some(n) => {
                s.path.push(n.id);
                cur = n;
            }
            None => break,
        }
    }
    let mut res = s.finish(usize::MAX);
    res.terminated_at_local_min = true;
    Ok(res)
}

fn check_budget(budget: usize, k: usize) -> Result<()> {
    if budget == 0 || k == 0 {
        return Err(MrngError::InvalidParameter(
            "budget and k must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Budgeted best-first search from `entry`: always expands the closest
/// unexpanded node, stopping once `budget` query distances have been
/// evaluated or nothing is left to expand. Returns the `k` closest nodes seen.
pub fn best_first<T: Scalar>(
    g: &ProximityGraph,
    data: &Dataset<T>,
    entry: u32,
    q: &[T],
    budget: usize,
    k: usize,
) -> Result<SearchResult> {
    check_inputs(g, data, q)?;
    check_node(g, entry as usize)?;
    check_budget(budget, k)?;
    let mut s = Searcher::new(g, data, q, budget as u64);
    let d = s.eval(entry).unwrap();
    s.push(Neighbor::new(entry, d));
    s.run(budget as u64);
    Ok(s.finish(k))
}

/// Whether no out-neighbor of `v` is strictly closer to `q` than `v`.
pub fn is_local_minimum<T: Scalar>(g: &ProximityGraph, data: &Dataset<T>, v: u32, q: &[T]) -> bool {
    let dv = data.dist_to(v as usize, q);
    g.neighbors(v as usize)
        .iter()
        .all(|u| data.dist_to(u.id as usize, q) >= dv)
}

/// Details of one conflict-search call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictSearchOutcome {
    pub nearest: Neighbor,
    /// Indices (into the neighbor list of `v`) of edges that passed the angular filter.
    pub scanned_edges: Vec<usize>,
    /// Conflicting nodes whose distance to the query was evaluated.
    pub scanned_nodes: usize,
    pub distance_evals: u64,
}

/// Scans the conflict sets of `v`'s edges that pass the angular filter,
/// restricted to nodes within `2 δ(v,q)` of `v`. `eval` returns `None` to
/// abort (budget exhausted). Returns the best node found, which may be `v`.
fn scan_conflicts<T: Scalar>(
    data: &Dataset<T>,
    g: &ProximityGraph,
    conflicts: &ConflictMap,
    v: Neighbor,
    q: &[T],
    mut eval: impl FnMut(u32) -> Option<f64>,
) -> Result<(Neighbor, Vec<usize>, usize)> {
    let mut best = v;
    let mut passed = Vec::new();
    let mut scanned = 0;
    let r = v.dist;
    if r == 0.0 {
        return Ok((best, passed, scanned));
    }
    let vp = data.point(v.id as usize);
    let reach = 2.0 * r * (1.0 + FILTER_SLACK);
    'edges: for (i, u) in g.neighbors(v.id as usize).iter().enumerate() {
        let theta = angle_at(vp, q, data.point(u.id as usize))?;
        if u.dist >= r * f_theta(theta)? * (1.0 + FILTER_SLACK) {
            continue;
        }
        passed.push(i);
        for w in conflicts.conflicts(v.id as usize, i) {
            if w.dist >= reach {
                break;
            }
            scanned += 1;
            let Some(d) = eval(w.id) else { break 'edges };
            let cand = Neighbor::new(w.id, d);
            if cand < best {
                best = cand;
            }
        }
    }
    Ok((best, passed, scanned))
}

fn check_conflicts(g: &ProximityGraph, conflicts: &ConflictMap) -> Result<()> {
    if !conflicts.matches(g) {
        return Err(MrngError::InvalidParameter(
            "conflict map does not belong to this graph".into(),
        ));
    }
    Ok(())
}

/// Escape from a local minimum `v` through conflict sets. On the exact MRNG
/// with its full conflict map the result is the nearest neighbor of `q`.
pub fn conflict_search_detailed<T: Scalar>(
    data: &Dataset<T>,
    g: &ProximityGraph,
    conflicts: &ConflictMap,
    v: u32,
    q: &[T],
) -> Result<ConflictSearchOutcome> {
    check_inputs(g, data, q)?;
    check_node(g, v as usize)?;
    check_conflicts(g, conflicts)?;
    let dv = data.dist_to(v as usize, q);
    let mut evals = 1u64;
    for u in g.neighbors(v as usize) {
        evals += 1;
        if data.dist_to(u.id as usize, q) < dv {
            return Err(MrngError::NotLocalMinimum {
                node: v,
                closer: u.id,
            });
        }
    }
    let mut seen = HashSet::new();
    let (nearest, scanned_edges, scanned_nodes) =
        scan_conflicts(data, g, conflicts, Neighbor::new(v, dv), q, |w| {
            if seen.insert(w) {
                evals += 1;
            }
            Some(data.dist_to(w as usize, q))
        })?;
    Ok(ConflictSearchOutcome {
        nearest,
        scanned_edges,
        scanned_nodes,
        distance_evals: evals,
    })
}

pub fn conflict_search<T: Scalar>(
    data: &Dataset<T>,
    g: &ProximityGraph,
    conflicts: &ConflictMap,
    v: u32,
    q: &[T],
) -> Result<u32> {
    conflict_search_detailed(data, g, conflicts, v, q).map(|o| o.nearest.id)
}

/// Best-first search that escapes local minima through conflict sets.
pub fn search_with_escape<T: Scalar>(
    g: &ProximityGraph,
    data: &Dataset<T>,
    conflicts: &ConflictMap,
    entry: u32,
    q: &[T],
    budget: usize,
    k: usize,
) -> Result<SearchResult> {
    search_with_escape_split(g, data, conflicts, entry, q, budget, k, None)
}

/// As [`search_with_escape`], but escapes are held back until plain
/// best-first has spent `phase1_budget` evaluations. Conflict-search
/// evaluations draw on the same budget.
#[allow(clippy::too_many_arguments)]
pub fn search_with_escape_split<T: Scalar>(
    g: &ProximityGraph,
    data: &Dataset<T>,
    conflicts: &ConflictMap,
    entry: u32,
    q: &[T],
    budget: usize,
    k: usize,
    phase1_budget: Option<usize>,
) -> Result<SearchResult> {
    check_inputs(g, data, q)?;
    check_node(g, entry as usize)?;
    check_budget(budget, k)?;
    check_conflicts(g, conflicts)?;
    let budget = budget as u64;
    let mut s = Searcher::new(g, data, q, budget);
    let d = s.eval(entry).unwrap();
    s.push(Neighbor::new(entry, d));
    if let Some(p) = phase1_budget {
        s.run(p as u64);
    }

    // Whenever the best node so far is an expanded local minimum, scan its
    // conflict sets once before continuing best-first.
    let mut escaped = HashSet::new();
    loop {
        let v = s.best().expect("entry was evaluated");
        if s.expanded[v.id as usize] && s.is_local_min(v) && escaped.insert(v.id) {
            let (found, _, _) = scan_conflicts(data, g, conflicts, v, q, |w| s.eval(w))?;
            if found.id != v.id {
                s.event(found.id, found.dist, TraceAction::Escape);
                s.push(found);
            }
        }
        if !s.step(budget) {
            break;
        }
    }
    Ok(s.finish(k))
}

/// The point closest to the coordinate centroid, ties by id.
pub fn pick_entry<T: Scalar>(data: &Dataset<T>) -> Result<u32> {
    if data.is_empty() {
        return Err(MrngError::InvalidDataset("dataset is empty".into()));
    }
    let c = data.centroid();
    let best = (0..data.len())
        .map(|i| Neighbor::new(i as u32, crate::geometry::l2(data.point(i), &c)))
        .min()
        .unwrap();
    Ok(best.id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{build_mrng, compute_conflicts};
    use crate::geometry::{generate_uniform_dataset, generate_uniform_queries};

    fn collinear() -> Dataset<f64> {
        Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap()
    }

    fn triple() -> Dataset<f64> {
        Dataset::from_rows(&[vec![0.0, 0.0], vec![2.2, 0.0], vec![2.0, 2.0]]).unwrap()
    }

    #[test]
    fn greedy_collinear_path() {
        let ds = collinear();
        let g = build_mrng(&ds).unwrap();
        let r = closer_and_go(&g, &ds, 0, &[2.0, 0.0]).unwrap();
        assert_eq!(r.path, vec![0, 1, 2]);
        assert!(r.terminated_at_local_min);
        assert_eq!(r.top1().unwrap().id, 2);
        let r = closer_and_go(&g, &ds, 1, &[1.1, 0.0]).unwrap();
        assert_eq!(r.path, vec![1]);
    }

    #[test]
    fn greedy_paths_are_strictly_decreasing() {
        let ds: Dataset<f32> = generate_uniform_dataset(150, 6, 4).unwrap();
        let g = build_mrng(&ds).unwrap();
        for q in generate_uniform_queries::<f32>(30, 6, 4) {
            let r = closer_and_go(&g, &ds, 0, &q).unwrap();
            let d: Vec<f64> = r.path.iter().map(|&v| ds.dist_to(v as usize, &q)).collect();
            assert!(d.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn best_first_budget_edges() {
        let ds: Dataset<f32> = generate_uniform_dataset(200, 4, 8).unwrap();
        let g = build_mrng(&ds).unwrap();
        let q = generate_uniform_queries::<f32>(1, 4, 8).remove(0);
        let one = best_first(&g, &ds, 5, &q, 1, 3).unwrap();
        assert_eq!(one.candidates, vec![Neighbor::new(5, ds.dist_to(5, &q))]);
        assert_eq!(one.distance_evals, 1);

        let all = best_first(&g, &ds, 5, &q, 200, 1).unwrap();
        let truth = (0..200u32)
            .map(|i| Neighbor::new(i, ds.dist_to(i as usize, &q)))
            .min()
            .unwrap();
        assert_eq!(all.top1(), Some(truth));
        assert_eq!(all.distance_evals, 200);

        for budget in [2, 17, 50, 133] {
            let r = best_first(&g, &ds, 5, &q, budget, 10).unwrap();
            assert_eq!(r.distance_evals, budget as u64);
            assert!(r.candidates.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(best_first(&g, &ds, 999, &q, 10, 1).is_err());
        assert!(best_first(&g, &ds, 0, &q, 0, 1).is_err());
        assert!(best_first(&g, &ds, 0, &q[..2], 10, 1).is_err());
    }

    #[test]
    fn conflict_search_finds_blocked_node() {
        let ds = triple();
        let g = build_mrng(&ds).unwrap();
        let c = compute_conflicts(&ds, &g).unwrap();
        let q = [0.5, 1.8];
        assert!(is_local_minimum(&g, &ds, 0, &q));
        let out = conflict_search_detailed(&ds, &g, &c, 0, &q).unwrap();
        assert_eq!(out.nearest.id, 2);
        assert_eq!(out.scanned_edges, vec![0]);
        assert!(matches!(
            conflict_search(&ds, &g, &c, 1, &q),
            Err(MrngError::NotLocalMinimum { node: 1, closer: 2 })
        ));
    }

    #[test]
    fn conflict_search_returns_v_when_v_is_nearest() {
        let ds = triple();
        let g = build_mrng(&ds).unwrap();
        let c = compute_conflicts(&ds, &g).unwrap();
        assert_eq!(conflict_search(&ds, &g, &c, 0, &[-1.0, 0.3]).unwrap(), 0);
        assert_eq!(conflict_search(&ds, &g, &c, 0, &[0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn escape_gets_past_dead_end() {
        let ds = triple();
        let g = build_mrng(&ds).unwrap().without_edge(1, 2);
        let c = compute_conflicts(&ds, &g).unwrap();
        let q = [0.5, 1.8];
        let plain = best_first(&g, &ds, 0, &q, 3, 1).unwrap();
        assert_eq!(plain.top1().unwrap().id, 0);
        assert!(plain.terminated_at_local_min);
        let esc = search_with_escape(&g, &ds, &c, 0, &q, 3, 1).unwrap();
        assert_eq!(esc.top1().unwrap().id, 2);
        assert!(esc.trace.iter().any(|e| e.action == TraceAction::Escape));
        assert!(esc.distance_evals <= 3);

        let once = search_with_escape(&g, &ds, &c, 0, &q, 1, 1).unwrap();
        assert_eq!(once.candidates.len(), 1);
        assert_eq!(once.top1().unwrap().id, 0);
    }

    #[test]
    fn escape_with_unlimited_budget_is_exact() {
        use crate::geometry::{generate_uniform_dataset, generate_uniform_queries};
        use crate::verify::brute_force_knn;
        let ds: Dataset<f32> = generate_uniform_dataset(500, 10, 12).unwrap();
        let g = build_mrng(&ds).unwrap();
        let c = compute_conflicts(&ds, &g).unwrap();
        let entry = pick_entry(&ds).unwrap();
        for q in generate_uniform_queries::<f32>(500, 10, 12) {
            let truth = brute_force_knn(&ds, &q, 1).unwrap()[0];
            let esc = search_with_escape(&g, &ds, &c, entry, &q, usize::MAX, 1).unwrap();
            assert_eq!(esc.top1().unwrap(), truth);
            let split = search_with_escape_split(&g, &ds, &c, entry, &q, 40, 1, Some(25)).unwrap();
            assert!(split.distance_evals <= 40);
        }
    }

    #[test]
    fn entry_is_near_centroid() {
        assert_eq!(pick_entry(&collinear()).unwrap(), 1);
        let pair = Dataset::from_rows(&[vec![1.0f64], vec![-1.0]]).unwrap();
        assert_eq!(pick_entry(&pair).unwrap(), 0);
    }

    #[test]
    fn trace_is_json_lines() {
        let ds = collinear();
        let g = build_mrng(&ds).unwrap();
        let r = best_first(&g, &ds, 0, &[2.0, 0.0], 3, 1).unwrap();
        let mut buf = Vec::new();
        write_trace_jsonl(&mut buf, &r.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["action"], "visit");
        assert_eq!(first["node"], 0);
        assert_eq!(text.lines().count(), r.trace.len());
    }
}
