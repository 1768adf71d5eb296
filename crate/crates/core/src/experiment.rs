//! Desk-scale experiments: degree distributions, accuracy of best-first
//! search on degree-truncated graphs, and conflict multiplicity.
//!
//! Every record carries the seed, the cell parameters and the crate version.
//! Per-query outcomes are summed as integers, so the output does not depend
//! on how work is split across threads.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construct::{build_from_matrix, multiplicity_from_matrix, BuildParams, DistanceMatrix};
use crate::error::{MrngError, Result};
use crate::geometry::{generate_uniform_dataset, generate_uniform_queries, Dataset};
use crate::graph::{degree_stats, DegreeBound, ProximityGraph};
use crate::search::{best_first, pick_entry};
use crate::verify::brute_force_knn;

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_BUILD_CAP: usize = 6000;
pub const DEFAULT_CONFLICT_CAP: usize = 3000;
pub const DEFAULT_QUERIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Degree,
    Truncation,
    Conflicts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Truncation only.
    pub degree_bounds: Vec<DegreeBound>,
    /// Truncation only.
    pub budgets: Vec<usize>,
    pub n_queries: usize,
    /// Overrides the default cap for the experiment kind.
    pub cap: Option<usize>,
    pub force: bool,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, n: usize, d: usize, seed: u64) -> Self {
        Self {
            kind,
            ns: vec![n],
            ds: vec![d],
            seeds: vec![seed],
            degree_bounds: vec![DegreeBound::Unbounded],
            budgets: vec![n],
            n_queries: DEFAULT_QUERIES,
            cap: None,
            force: false,
        }
    }

    pub fn effective_cap(&self) -> usize {
        self.cap.unwrap_or(match self.kind {
            ExperimentKind::Conflicts => DEFAULT_CONFLICT_CAP,
            _ => DEFAULT_BUILD_CAP,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(MrngError::InvalidParameter(msg.into()));
        if self.ns.is_empty() || self.ds.is_empty() || self.seeds.is_empty() {
            return bad("n, d and seed lists must be nonempty");
        }
        if self.ns.iter().chain(&self.ds).any(|&x| x == 0) {
            return bad("n and d must be positive");
        }
        if self.ns.iter().any(|&n| n < 2) {
            return bad("experiments need at least two points");
        }
        if self.kind == ExperimentKind::Truncation {
            if self.degree_bounds.is_empty() || self.budgets.is_empty() {
                return bad("degree bound and budget lists must be nonempty");
            }
            if self.budgets.contains(&0) || self.degree_bounds.contains(&DegreeBound::Bounded(0)) {
                return bad("budgets and degree bounds must be positive");
            }
            if self.n_queries == 0 {
                return bad("query count must be positive");
            }
        }
        let cap = self.effective_cap();
        if let Some(&n) = self.ns.iter().find(|&&n| n > cap) {
            if !self.force {
                return Err(MrngError::CapExceeded { n, cap });
            }
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(u64, usize, usize)> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &n in &self.ns {
                for &d in &self.ds {
                    out.push((seed, n, d));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeCell {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub min: usize,
    pub mean: f64,
    pub max: usize,
    pub histogram: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub degree_bound: DegreeBound,
    pub budget: usize,
    pub queries: usize,
    pub hits: usize,
    pub accuracy: f64,
}

pub type AccuracyTable = Vec<AccuracyRow>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityCell {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub pairs: u64,
    pub mean: f64,
    pub histogram: BTreeMap<usize, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cells", rename_all = "lowercase")]
pub enum ExperimentResult {
    Degree(Vec<DegreeCell>),
    Truncation(AccuracyTable),
    Conflicts(Vec<MultiplicityCell>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub version: String,
    pub config: ExperimentConfig,
    pub result: ExperimentResult,
}

fn dataset(n: usize, d: usize, seed: u64) -> Result<Dataset<f32>> {
    generate_uniform_dataset(n, d, seed)
}

fn exact_with_matrix(data: &Dataset<f32>, seed: u64) -> Result<(ProximityGraph, DistanceMatrix)> {
    let matrix = DistanceMatrix::compute(data);
    let params = BuildParams {
        seed,
        ..BuildParams::exact()
    };
    let g = build_from_matrix(data, &matrix, &params)?;
    Ok((g, matrix))
}

pub fn run_degree_experiment(cfg: &ExperimentConfig) -> Result<Vec<DegreeCell>> {
    cfg.validate()?;
    cfg.cells()
        .into_iter()
        .map(|(seed, n, d)| {
            let data = dataset(n, d, seed)?;
            let (g, _) = exact_with_matrix(&data, seed)?;
            let s = degree_stats(&g);
            Ok(DegreeCell {
                seed,
                n,
                d,
                min: s.min,
                mean: s.mean,
                max: s.max,
                histogram: s.histogram,
            })
        })
        .collect()
}

/// Builds the exact MRNG once per cell and derives each bounded graph by
/// truncating its neighbor lists. Each truncation is first compared against
/// an independent bounded build; a mismatch aborts the run.
pub fn run_truncation_experiment(cfg: &ExperimentConfig) -> Result<AccuracyTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (seed, n, d) in cfg.cells() {
        let data = dataset(n, d, seed)?;
        let (exact, matrix) = exact_with_matrix(&data, seed)?;
        let mut graphs = Vec::new();
        for &bound in &cfg.degree_bounds {
            let g = match bound {
                DegreeBound::Unbounded => exact.clone(),
                DegreeBound::Bounded(m) => {
                    let truncated = exact.truncated(m as usize);
                    let params = BuildParams {
                        seed,
                        ..BuildParams::bounded(m)
                    };
                    let direct = build_from_matrix(&data, &matrix, &params)?;
                    if direct != truncated {
                        return Err(MrngError::CrossCheck(format!(
                            "bounded build with m = {m} differs from the truncated exact graph"
                        )));
                    }
                    truncated
                }
            };
            graphs.push((bound, g));
        }
        drop(matrix);

        let queries = generate_uniform_queries::<f32>(cfg.n_queries, d, seed);
        let truth: Vec<u32> = queries
            .par_iter()
            .map(|q| brute_force_knn(&data, q, 1).map(|r| r[0].id))
            .collect::<Result<_>>()?;
        let entry = pick_entry(&data)?;
        for (bound, g) in &graphs {
            for &budget in &cfg.budgets {
                let hits: usize = queries
                    .par_iter()
                    .zip(&truth)
                    .map(|(q, &t)| {
                        let res = best_first(g, &data, entry, q, budget, 1)?;
                        Ok(usize::from(res.top1().map(|nb| nb.id) == Some(t)))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .sum();
                rows.push(AccuracyRow {
                    seed,
                    n,
                    d,
                    degree_bound: *bound,
                    budget,
                    queries: queries.len(),
                    hits,
                    accuracy: hits as f64 / queries.len() as f64,
                });
            }
        }
    }
    Ok(rows)
}

pub fn run_conflict_multiplicity_experiment(
    cfg: &ExperimentConfig,
) -> Result<Vec<MultiplicityCell>> {
    cfg.validate()?;
    cfg.cells()
        .into_iter()
        .map(|(seed, n, d)| {
            let data = dataset(n, d, seed)?;
            let (g, matrix) = exact_with_matrix(&data, seed)?;
            let m = multiplicity_from_matrix(&g, &matrix);
            Ok(MultiplicityCell {
                seed,
                n,
                d,
                pairs: m.pairs,
                mean: m.mean,
                histogram: m.histogram,
            })
        })
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let result = match cfg.kind {
        ExperimentKind::Degree => ExperimentResult::Degree(run_degree_experiment(cfg)?),
        ExperimentKind::Truncation => ExperimentResult::Truncation(run_truncation_experiment(cfg)?),
        ExperimentKind::Conflicts => {
            ExperimentResult::Conflicts(run_conflict_multiplicity_experiment(cfg)?)
        }
    };
    Ok(ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        version: VERSION.to_string(),
        config: cfg.clone(),
        result,
    })
}

impl ExperimentRecord {
    /// One header row, then one row per summary cell and one per histogram
    /// bucket (`row` column: `summary` or `histogram`). LF line endings.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let lead = [self.schema_version.to_string(), self.version.clone()];
        let row = |out: &mut csv::Writer<W>, fields: Vec<String>| -> Result<()> {
            out.write_record(lead.iter().cloned().chain(fields))?;
            Ok(())
        };
        match &self.result {
            ExperimentResult::Degree(cells) => {
                out.write_record([
                    "schema_version",
                    "version",
                    "row",
                    "seed",
                    "n",
                    "d",
                    "min",
                    "mean",
                    "max",
                    "degree",
                    "count",
                ])?;
                for c in cells {
                    let cell = [c.seed.to_string(), c.n.to_string(), c.d.to_string()];
                    let mut f = vec!["summary".to_string()];
                    f.extend(cell.iter().cloned());
                    f.extend([c.min.to_string(), c.mean.to_string(), c.max.to_string()]);
                    f.extend([String::new(), String::new()]);
                    row(&mut out, f)?;
                    for (deg, count) in &c.histogram {
                        let mut f = vec!["histogram".to_string()];
                        f.extend(cell.iter().cloned());
                        f.extend([String::new(), String::new(), String::new()]);
                        f.extend([deg.to_string(), count.to_string()]);
                        row(&mut out, f)?;
                    }
                }
            }
            ExperimentResult::Truncation(rows) => {
                out.write_record([
                    "schema_version",
                    "version",
                    "seed",
                    "n",
                    "d",
                    "degree_bound",
                    "budget",
                    "queries",
                    "hits",
                    "accuracy",
                ])?;
                for r in rows {
                    row(
                        &mut out,
                        vec![
                            r.seed.to_string(),
                            r.n.to_string(),
                            r.d.to_string(),
                            r.degree_bound.to_string(),
                            r.budget.to_string(),
                            r.queries.to_string(),
                            r.hits.to_string(),
                            r.accuracy.to_string(),
                        ],
                    )?;
                }
            }
            ExperimentResult::Conflicts(cells) => {
                out.write_record([
                    "schema_version",
                    "version",
                    "row",
                    "seed",
                    "n",
                    "d",
                    "pairs",
                    "mean",
                    "k",
                    "count",
                ])?;
                for c in cells {
                    let cell = [c.seed.to_string(), c.n.to_string(), c.d.to_string()];
                    let mut f = vec!["summary".to_string()];
                    f.extend(cell.iter().cloned());
                    f.extend([
                        c.pairs.to_string(),
                        c.mean.to_string(),
                        String::new(),
                        String::new(),
                    ]);
                    row(&mut out, f)?;
                    for (k, count) in &c.histogram {
                        let mut f = vec!["histogram".to_string()];
                        f.extend(cell.iter().cloned());
                        f.extend([
                            String::new(),
                            String::new(),
                            k.to_string(),
                            count.to_string(),
                        ]);
                        row(&mut out, f)?;
                    }
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_histogram_sums_to_n() {
        let cfg = ExperimentConfig::new(ExperimentKind::Degree, 100, 2, 4);
        let cells = run_degree_experiment(&cfg).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].histogram.values().sum::<usize>(), 100);
        assert!(cells[0].min >= 1 && cells[0].min as f64 <= cells[0].mean);
    }

    #[test]
    fn cap_is_enforced() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Degree, 6001, 2, 0);
        assert!(matches!(
            cfg.validate(),
            Err(MrngError::CapExceeded { n: 6001, cap: 6000 })
        ));
        cfg.force = true;
        assert!(cfg.validate().is_ok());
        let cfg = ExperimentConfig::new(ExperimentKind::Conflicts, 3001, 2, 0);
        assert!(matches!(
            cfg.validate(),
            Err(MrngError::CapExceeded { cap: 3000, .. })
        ));
        let mut cfg = ExperimentConfig::new(ExperimentKind::Truncation, 50, 2, 0);
        cfg.budgets.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn exhaustive_budget_is_exact() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Truncation, 300, 5, 2);
        cfg.degree_bounds = vec![DegreeBound::Unbounded, DegreeBound::Bounded(3)];
        cfg.budgets = vec![20, 300];
        cfg.n_queries = 40;
        let rows = run_truncation_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        let full = rows
            .iter()
            .find(|r| r.degree_bound == DegreeBound::Unbounded && r.budget == 300)
            .unwrap();
        assert_eq!(full.accuracy, 1.0);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    }

    #[test]
    fn two_points_have_no_conflicts() {
        let cfg = ExperimentConfig::new(ExperimentKind::Conflicts, 2, 3, 1);
        let cells = run_conflict_multiplicity_experiment(&cfg).unwrap();
        assert_eq!(cells[0].pairs, 0);
        assert!(cells[0].histogram.is_empty());
    }

    #[test]
    fn csv_is_stable() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Degree, 80, 3, 9);
        cfg.ds = vec![2, 3];
        let a = run_experiment(&cfg).unwrap().to_csv().unwrap();
        let b = run_experiment(&cfg).unwrap().to_csv().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("schema_version,version,row,seed,n,d,"));
        assert!(!a.contains('\r'));
        let json = run_experiment(&cfg).unwrap().to_json().unwrap();
        let back: ExperimentRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config, cfg);
    }
}
