//! Independent oracles and property checkers.
//!
//! Nothing here calls into the builders or the search routines: distances are
//! recomputed from raw coordinates so the checks stay independent of the code
//! they judge. Counterexamples are the lexicographically smallest violation.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MrngError, Result};
use crate::geometry::{self, angle_at, f_theta, in_lune, seeded_rng, Dataset, THIRD_PI};
use crate::graph::{Neighbor, ProximityGraph};
use crate::scalar::Scalar;

/// Absolute tolerance, in radians, on the 60° separation between out-edges.
pub const ANGLE_TOLERANCE: f64 = 1e-9;
/// Angles within this much above π/3 are counted as near-boundary.
pub const NEAR_BOUNDARY: f64 = 1e-6;
/// Relative width of the band around `δ(v,q)·f(θ)` where sampling may disagree.
pub const LEMMA4_BAND: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Counterexample {
    /// No path from `source` to `target` along which distance to `target` strictly decreases.
    Unreachable { source: u32, target: u32 },
    /// Edge presence disagrees with the lune rule at `(x, y)`. `blocker` is a
    /// neighbor of `x` inside `lune(x, y)`, if any.
    Definition {
        x: u32,
        y: u32,
        edge_present: bool,
        blocker: Option<u32>,
    },
    /// Deleting `x → y` leaves the graph monotonic.
    RedundantEdge { x: u32, y: u32 },
    /// Two out-edges of `v` closer than π/3.
    Angle {
        v: u32,
        u1: u32,
        u2: u32,
        angle: f64,
    },
    /// Sampling and the closed-form threshold disagree outside the band.
    Lemma4 {
        sampled_exists: bool,
        threshold_predicts: bool,
        distance: f64,
        threshold: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckStats {
    pub pairs_checked: u64,
    pub edges_checked: u64,
    pub near_boundary: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub passed: bool,
    pub counterexample: Option<Counterexample>,
    pub stats: CheckStats,
}

impl CheckReport {
    fn new(check: &str, counterexample: Option<Counterexample>, stats: CheckStats) -> Self {
        Self {
            check: check.to_string(),
            passed: counterexample.is_none(),
            counterexample,
            stats,
        }
    }
}

/// Exact `k` nearest neighbors of `q` by linear scan, ordered by `(distance, id)`.
pub fn brute_force_knn<T: Scalar>(data: &Dataset<T>, q: &[T], k: usize) -> Result<Vec<Neighbor>> {
    data.check_query(q)?;
    if k == 0 || k > data.len() {
        return Err(MrngError::InvalidParameter(format!(
            "k = {k} outside 1..={}",
            data.len()
        )));
    }
    let mut all: Vec<Neighbor> = data
        .points()
        .enumerate()
        .map(|(i, p)| Neighbor::new(i as u32, geometry::l2(p, q)))
        .collect();
    if k < all.len() {
        all.select_nth_unstable(k - 1);
        all.truncate(k);
    }
    all.sort_unstable();
    Ok(all)
}

fn reverse_adjacency(g: &ProximityGraph) -> Vec<Vec<u32>> {
    let mut rev = vec![Vec::new(); g.len()];
    for (u, v) in g.edges() {
        rev[v as usize].push(u);
    }
    rev
}

fn distances_to<T: Scalar>(data: &Dataset<T>, t: usize) -> Vec<f64> {
    (0..data.len()).map(|i| data.dist(i, t)).collect()
}

/// Nodes that reach `t` along strictly improving edges, found by walking
/// improving edges backwards from `t`. `skip` removes one edge.
fn improving_ancestors(
    rev: &[Vec<u32>],
    t: usize,
    dt: &[f64],
    skip: Option<(u32, u32)>,
    stop_at: Option<usize>,
) -> Vec<bool> {
    let mut reached = vec![false; rev.len()];
    reached[t] = true;
    let mut queue = VecDeque::from([t]);
    while let Some(v) = queue.pop_front() {
        for &u in &rev[v] {
            let ui = u as usize;
            if reached[ui] || skip == Some((u, v as u32)) || dt[v] >= dt[ui] {
                continue;
            }
            reached[ui] = true;
            if stop_at == Some(ui) {
                return reached;
            }
            queue.push_back(ui);
        }
    }
    reached
}

/// Exact monotonicity decision: for every target `t`, every node must reach
/// `t` through edges that strictly decrease the distance to `t`.
pub fn is_monotonic<T: Scalar>(g: &ProximityGraph, data: &Dataset<T>) -> CheckReport {
    monotonic_report("is_monotonic", g, data)
}

fn monotonic_report<T: Scalar>(name: &str, g: &ProximityGraph, data: &Dataset<T>) -> CheckReport {
    let rev = reverse_adjacency(g);
    let mut worst: Option<(u32, u32)> = None;
    let mut stats = CheckStats::default();
    for t in 0..g.len() {
        let dt = distances_to(data, t);
        let reached = improving_ancestors(&rev, t, &dt, None, None);
        stats.pairs_checked += g.len() as u64;
        if let Some(p) = reached.iter().position(|r| !r) {
            let cand = (p as u32, t as u32);
            if worst.is_none_or(|w| cand < w) {
                worst = Some(cand);
            }
        }
    }
    stats.edges_checked = g.edge_count() as u64;
    CheckReport::new(
        name,
        worst.map(|(source, target)| Counterexample::Unreachable { source, target }),
        stats,
    )
}

/// Checks that `x → y` is an edge exactly when no out-neighbor of `x` lies in
/// `lune(x, y)`, for every ordered pair.
pub fn check_mrng_definition<T: Scalar>(g: &ProximityGraph, data: &Dataset<T>) -> CheckReport {
    let n = g.len();
    let mut stats = CheckStats::default();
    let mut present = vec![false; n];
    for x in 0..n {
        let dx = distances_to(data, x);
        // neighbors by (true distance, id), recomputed rather than trusted
        let mut nbrs: Vec<Neighbor> = g
            .neighbors(x)
            .iter()
            .map(|nb| Neighbor::new(nb.id, dx[nb.id as usize]))
            .collect();
        nbrs.sort_unstable();
        for nb in &nbrs {
            present[nb.id as usize] = true;
        }
        for y in (0..n).filter(|&y| y != x) {
            stats.pairs_checked += 1;
            let dxy = dx[y];
            let blocker = nbrs
                .iter()
                .take_while(|z| z.dist < dxy)
                .find(|z| z.id as usize != y && data.dist(z.id as usize, y) < dxy)
                .map(|z| z.id);
            if present[y] == blocker.is_some() {
                let ce = Counterexample::Definition {
                    x: x as u32,
                    y: y as u32,
                    edge_present: present[y],
                    blocker,
                };
                return CheckReport::new("check_mrng_definition", Some(ce), stats);
            }
        }
        for nb in &nbrs {
            present[nb.id as usize] = false;
        }
    }
    stats.edges_checked = g.edge_count() as u64;
    CheckReport::new("check_mrng_definition", None, stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeSample {
    All,
    /// `count` edges drawn without replacement, reproducibly from `seed`.
    Random {
        count: usize,
        seed: u64,
    },
}

/// For each sampled edge `x → y`, deleting it must break monotonicity. The
/// pair `(x, y)` is tested first; only if `x` still reaches `y` is the whole
/// reduced graph re-checked.
pub fn check_edge_minimality<T: Scalar>(
    g: &ProximityGraph,
    data: &Dataset<T>,
    sample: EdgeSample,
) -> CheckReport {
    let all: Vec<(u32, u32)> = g.edges().collect();
    let mut edges = match sample {
        EdgeSample::Random { count, seed } if count < all.len() => {
            let mut rng = seeded_rng(seed, 0);
            sample_indices(&mut rng, all.len(), count)
                .into_iter()
                .map(|i| all[i])
                .collect()
        }
        _ => all,
    };
    edges.sort_unstable();
    let rev = reverse_adjacency(g);
    let mut stats = CheckStats::default();
    let mut cached_target = usize::MAX;
    let mut dt = Vec::new();
    for &(x, y) in &edges {
        stats.edges_checked += 1;
        if cached_target != y as usize {
            dt = distances_to(data, y as usize);
            cached_target = y as usize;
        }
        let reached = improving_ancestors(&rev, y as usize, &dt, Some((x, y)), Some(x as usize));
        if !reached[x as usize] {
            continue;
        }
        let reduced = g.without_edge(x as usize, y as usize);
        if monotonic_report("", &reduced, data).passed {
            return CheckReport::new(
                "check_edge_minimality",
                Some(Counterexample::RedundantEdge { x, y }),
                stats,
            );
        }
    }
    CheckReport::new("check_edge_minimality", None, stats)
}

/// Every pair of distinct out-edges of a node must be at least π/3 apart.
pub fn check_angle_separation<T: Scalar>(g: &ProximityGraph, data: &Dataset<T>) -> CheckReport {
    let mut stats = CheckStats::default();
    for v in 0..g.len() {
        let mut ids: Vec<u32> = g.neighbors(v).iter().map(|nb| nb.id).collect();
        ids.sort_unstable();
        let vp = data.point(v);
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                stats.pairs_checked += 1;
                let angle = angle_at(vp, data.point(a as usize), data.point(b as usize))
                    .expect("no self-loops, points distinct");
                if angle < THIRD_PI - ANGLE_TOLERANCE {
                    let ce = Counterexample::Angle {
                        v: v as u32,
                        u1: a,
                        u2: b,
                        angle,
                    };
                    return CheckReport::new("check_angle_separation", Some(ce), stats);
                }
                if angle < THIRD_PI + NEAR_BOUNDARY {
                    stats.near_boundary += 1;
                }
            }
        }
    }
    stats.edges_checked = g.edge_count() as u64;
    CheckReport::new("check_angle_separation", None, stats)
}

/// Both sides of the conflict-region criterion for one `(v, q, u)` triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma4Outcome {
    /// Some sampled `w` in the ball `B(q, δ(v,q))` has `u ∈ lune(v, w)`.
    pub sampled_exists: bool,
    /// `δ(v,u) < δ(v,q) · f(θ)`.
    pub threshold_predicts: bool,
    pub distance: f64,
    pub threshold: f64,
    /// `|δ(v,u) − δ(v,q)·f(θ)| < 1e-2 · δ(v,q)`.
    pub in_band: bool,
}

impl Lemma4Outcome {
    pub fn agrees(&self) -> bool {
        self.sampled_exists == self.threshold_predicts
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lune_holds(v: &[f64], w: &[f64], u: &[f64]) -> bool {
    let vw = geometry::l2(v, w);
    vw > 0.0 && geometry::l2(v, u) < vw && geometry::l2(w, u) < vw
}

/// Samples the ball `B(q, δ(v,q))` for a `w` with `u ∈ lune(v, w)`: `samples`
/// points on the boundary circle of the ball within the plane through `v`, `q`
/// and `u`, plus `samples` uniform interior points. Compares the outcome with
/// the closed-form threshold.
pub fn lemma4_predicates(v: &[f64], q: &[f64], u: &[f64], samples: usize) -> Result<Lemma4Outcome> {
    let d = v.len();
    if q.len() != d || u.len() != d {
        return Err(MrngError::DimensionMismatch {
            expected: d,
            got: q.len().max(u.len()),
        });
    }
    let r = geometry::l2(v, q);
    let dvu = geometry::l2(v, u);
    if r == 0.0 || dvu == 0.0 {
        return Err(MrngError::Degenerate("v must differ from q and from u"));
    }
    let theta = angle_at(v, q, u)?;
    let threshold = r * f_theta(theta)?;

    let e1: Vec<f64> = sub(q, v).iter().map(|c| c / r).collect();
    let orth = |x: &[f64]| -> Vec<f64> {
        let p = dot(x, &e1);
        x.iter().zip(&e1).map(|(a, b)| a - p * b).collect()
    };
    let mut e2 = orth(&sub(u, v));
    let mut norm = dot(&e2, &e2).sqrt();
    if norm <= 1e-12 * dvu {
        // collinear: any direction orthogonal to e1 spans a valid plane
        for k in 0..d {
            let mut basis = vec![0.0; d];
            basis[k] = 1.0;
            e2 = orth(&basis);
            norm = dot(&e2, &e2).sqrt();
            if norm > 0.5 {
                break;
            }
        }
    }
    let mut sampled_exists = false;
    if norm > 0.0 {
        e2.iter_mut().for_each(|c| *c /= norm);
        for i in 0..samples {
            let phi = 2.0 * PI * i as f64 / samples as f64;
            let (s, c) = phi.sin_cos();
            let w: Vec<f64> = (0..d).map(|k| q[k] + r * (c * e1[k] + s * e2[k])).collect();
            if lune_holds(v, &w, u) {
                sampled_exists = true;
                break;
            }
        }
    }
    if !sampled_exists {
        let mut rng = seeded_rng(samples as u64, 0);
        for _ in 0..samples {
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let len = dot(&dir, &dir).sqrt();
            if len == 0.0 {
                continue;
            }
            let rad = r * rng.random::<f64>().powf(1.0 / d as f64);
            let w: Vec<f64> = (0..d).map(|k| q[k] + rad * dir[k] / len).collect();
            if lune_holds(v, &w, u) {
                sampled_exists = true;
                break;
            }
        }
    }
    Ok(Lemma4Outcome {
        sampled_exists,
        threshold_predicts: dvu < threshold,
        distance: dvu,
        threshold,
        in_band: (dvu - threshold).abs() < LEMMA4_BAND * r,
    })
}

/// Report form of [`lemma4_predicates`]: passes when the predicates agree or
/// the triple sits inside the tolerance band.
pub fn check_lemma4_sampling(
    v: &[f64],
    q: &[f64],
    u: &[f64],
    samples: usize,
) -> Result<CheckReport> {
    let o = lemma4_predicates(v, q, u, samples)?;
    let stats = CheckStats {
        pairs_checked: 1,
        near_boundary: o.in_band as u64,
        ..Default::default()
    };
    let ce = (!o.agrees() && !o.in_band).then_some(Counterexample::Lemma4 {
        sampled_exists: o.sampled_exists,
        threshold_predicts: o.threshold_predicts,
        distance: o.distance,
        threshold: o.threshold,
    });
    Ok(CheckReport::new("check_lemma4_sampling", ce, stats))
}

/// Grid supremum of `cos(θ + 2α)` over `α ∈ ([-π,-π/3] ∪ [π/3,π])` with
/// `cos(θ + α) ≥ 0`; the interval endpoints are always included.
pub fn numeric_s_supremum(theta: f64, step: f64) -> Option<f64> {
    let steps = (2.0 * PI / step).ceil() as usize;
    (0..=steps)
        .map(|i| (-PI + i as f64 * step).min(PI))
        .chain([-THIRD_PI, THIRD_PI, -PI, PI])
        .filter(|a| a.abs() >= THIRD_PI && (theta + a).cos() >= 0.0)
        .map(|a| (theta + 2.0 * a).cos())
        .reduce(f64::max)
}

impl Counterexample {
    /// Recomputes the violated condition from raw coordinates.
    pub fn reverify<T: Scalar>(&self, g: &ProximityGraph, data: &Dataset<T>) -> bool {
        match *self {
            Counterexample::Unreachable { source, target } => {
                // forward search over improving edges must miss the target
                let t = data.point(target as usize);
                let mut seen = vec![false; g.len()];
                let mut stack = vec![source as usize];
                seen[source as usize] = true;
                while let Some(v) = stack.pop() {
                    if v == target as usize {
                        return false;
                    }
                    let dv = geometry::l2(data.point(v), t);
                    for nb in g.neighbors(v) {
                        let u = nb.id as usize;
                        if !seen[u] && geometry::l2(data.point(u), t) < dv {
                            seen[u] = true;
                            stack.push(u);
                        }
                    }
                }
                true
            }
            Counterexample::Definition {
                x,
                y,
                edge_present,
                blocker,
            } => {
                let (xp, yp) = (data.point(x as usize), data.point(y as usize));
                let blocked = g.neighbors(x as usize).iter().any(|z| {
                    z.id != y && in_lune(xp, yp, data.point(z.id as usize)).unwrap_or(false)
                });
                let blocker_ok = blocker.is_none_or(|z| {
                    g.has_edge(x as usize, z as usize)
                        && in_lune(xp, yp, data.point(z as usize)).unwrap_or(false)
                });
                g.has_edge(x as usize, y as usize) == edge_present
                    && blocked == edge_present
                    && blocker_ok
            }
            Counterexample::RedundantEdge { x, y } => {
                is_monotonic(&g.without_edge(x as usize, y as usize), data).passed
            }
            Counterexample::Angle { v, u1, u2, .. } => {
                let a = angle_at(
                    data.point(v as usize),
                    data.point(u1 as usize),
                    data.point(u2 as usize),
                )
                .unwrap_or(PI);
                g.has_edge(v as usize, u1 as usize)
                    && g.has_edge(v as usize, u2 as usize)
                    && a < THIRD_PI - ANGLE_TOLERANCE
            }
            Counterexample::Lemma4 {
                distance,
                threshold,
                sampled_exists,
                threshold_predicts,
            } => {
                sampled_exists != threshold_predicts && (distance < threshold) == threshold_predicts
            }
        }
    }
}
