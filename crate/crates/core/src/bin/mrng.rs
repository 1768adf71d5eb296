use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mrng::experiment::{run_experiment, ExperimentConfig, ExperimentKind, DEFAULT_QUERIES};
use mrng::io::{read_dataset, read_queries, write_queries, write_vecbin};
use mrng::search::{search_with_escape, write_trace_jsonl};
use mrng::verify::EdgeSample;
use mrng::{
    best_first, build, check_angle_separation, check_edge_minimality, check_mrng_definition,
    generate_uniform_dataset, generate_uniform_queries, is_monotonic, load_conflicts, load_graph,
    pick_entry, save_conflicts, save_graph, BuildParams, CheckReport, Dataset32, DegreeBound,
    MrngError, PoolDescriptor,
};

#[derive(Parser)]
#[command(
    name = "mrng",
    version,
    about = "Monotonic relative neighborhood graphs"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a uniform dataset (or query set) as a vecbin file.
    Gen(GenArgs),
    /// Build a graph and print the build report as JSON.
    Build(BuildArgs),
    /// Search a graph for each query and print results as JSON.
    Search(SearchArgs),
    /// Run property checks on a graph; exit code 1 if any fails.
    Verify(VerifyArgs),
    /// Run a desk-scale experiment and emit CSV or JSON.
    Experiment(ExperimentArgs),
}

/// `n=1000,d=10,seed=7`
#[derive(Clone, Copy, Debug)]
struct GenSpec {
    n: usize,
    d: usize,
    seed: u64,
}

impl FromStr for GenSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (mut n, mut d, mut seed) = (None, None, 0);
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or(format!("expected key=value, got {part:?}"))?;
            let bad = |_| format!("bad value for {k}: {v:?}");
            match k.trim() {
                "n" => n = Some(v.parse().map_err(bad)?),
                "d" => d = Some(v.parse().map_err(bad)?),
                "seed" => seed = v.parse().map_err(bad)?,
                other => return Err(format!("unknown key {other:?}")),
            }
        }
        Ok(GenSpec {
            n: n.ok_or("missing n")?,
            d: d.ok_or("missing d")?,
            seed,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct PoolArg(PoolDescriptor);

impl FromStr for PoolArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(PoolArg(PoolDescriptor::Full)),
            _ => s
                .strip_prefix("knn:")
                .and_then(|l| l.parse().ok())
                .map(|l| PoolArg(PoolDescriptor::Knn(l)))
                .ok_or_else(|| format!("expected `full` or `knn:L`, got {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BoundArg(DegreeBound);

impl FromStr for BoundArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "unbounded" || s == "exact" {
            return Ok(BoundArg(DegreeBound::Unbounded));
        }
        s.parse()
            .map(|m| BoundArg(DegreeBound::Bounded(m)))
            .map_err(|_| format!("expected a positive integer or `unbounded`, got {s:?}"))
    }
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file (vecbin or per-vector layout).
    #[arg(long, alias = "data", conflicts_with_all = ["gen", "n"])]
    input: Option<PathBuf>,
    /// Generate uniform data: `n=..,d=..,seed=..`.
    #[arg(long, conflicts_with = "n")]
    gen: Option<GenSpec>,
    #[arg(long, requires = "d")]
    n: Option<usize>,
    #[arg(long, requires = "n")]
    d: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DataArgs {
    fn seed(&self) -> u64 {
        self.gen.map_or(self.seed, |g| g.seed)
    }

    fn load(&self) -> Result<Dataset32, Failure> {
        if let Some(path) = &self.input {
            return Ok(read_dataset(path)?);
        }
        let spec = match (self.gen, self.n, self.d) {
            (Some(g), _, _) => g,
            (None, Some(n), Some(d)) => GenSpec {
                n,
                d,
                seed: self.seed,
            },
            _ => return Err(Failure::Usage("give --input, --gen or --n/--d".into())),
        };
        Ok(generate_uniform_dataset(spec.n, spec.d, spec.seed)?)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write this many query points (query stream of the seed) instead of `n` data points.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, conflicts_with = "degree_bound")]
    exact: bool,
    #[arg(long)]
    degree_bound: Option<BoundArg>,
    #[arg(long, default_value = "full")]
    pool: PoolArg,
    /// Also compute conflict sets and write them here.
    #[arg(long)]
    conflicts: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    graph: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, conflicts_with = "queries")]
    query_file: Option<PathBuf>,
    /// Generate this many uniform queries from the query stream of the seed.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Start node (default: the point closest to the centroid).
    #[arg(long)]
    entry: Option<u32>,
    /// Escape local minima through conflict sets (needs --conflicts).
    #[arg(long, requires = "conflicts")]
    escape: bool,
    #[arg(long)]
    conflicts: Option<PathBuf>,
    /// Write search events as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CheckName {
    Definition,
    Monotonic,
    Minimality,
    Angle,
}

#[derive(Args)]
struct VerifyArgs {
    graph: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "definition,monotonic,minimality,angle"
    )]
    checks: Vec<CheckName>,
    /// Check minimality on this many random edges instead of all.
    #[arg(long)]
    sample_edges: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Degree,
    Truncation,
    Conflicts,
}

#[derive(Args)]
struct ExperimentArgs {
    kind: KindArg,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "unbounded")]
    degree_bound: Vec<BoundArg>,
    /// Search budgets (default: n).
    #[arg(long, value_delimiter = ',')]
    budget: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_QUERIES)]
    queries: usize,
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    force: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Io(String),
    Check,
}

impl From<MrngError> for Failure {
    fn from(e: MrngError) -> Self {
        match e {
            MrngError::Io(_)
            | MrngError::Format(_)
            | MrngError::VersionMismatch { .. }
            | MrngError::Csv(_)
            | MrngError::Json(_) => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_json<T: Serialize>(path: &Option<PathBuf>, value: &T) -> Result<(), Failure> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(MrngError::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    match a.queries {
        Some(count) => write_queries(
            &a.output,
            &generate_uniform_queries::<f32>(count, a.d, a.seed),
        )?,
        None => write_vecbin(
            &a.output,
            &generate_uniform_dataset::<f32>(a.n, a.d, a.seed)?,
        )?,
    }
    Ok(())
}

fn cmd_build(a: BuildArgs) -> Result<(), Failure> {
    let data = a.data.load()?;
    let params = BuildParams {
        degree_bound: a.degree_bound.map_or(DegreeBound::Unbounded, |b| b.0),
        pool: a.pool.0,
        record_conflicts: a.conflicts.is_some(),
        seed: a.data.seed(),
    };
    let out = build(&data, &params)?;
    save_graph(&out.graph, &a.output)?;
    if let (Some(path), Some(c)) = (&a.conflicts, &out.conflicts) {
        save_conflicts(c, path)?;
    }
    emit_json(&None, &out.report)
}

#[derive(Serialize)]
struct QueryResult {
    query: usize,
    candidates: Vec<mrng::Neighbor>,
    distance_evals: u64,
    terminated_at_local_min: bool,
}

fn cmd_search(a: SearchArgs) -> Result<(), Failure> {
    let data = a.data.load()?;
    let g = load_graph(&a.graph)?;
    g.validate_against(&data)?;
    let queries = match (&a.query_file, a.queries) {
        (Some(p), _) => read_queries(p)?,
        (None, Some(count)) => generate_uniform_queries(count, data.dim(), a.data.seed()),
        (None, None) => return Err(Failure::Usage("give --query-file or --queries".into())),
    };
    let conflicts = a.conflicts.as_ref().map(load_conflicts).transpose()?;
    let entry = match a.entry {
        Some(e) => e,
        None => pick_entry(&data)?,
    };
    let mut trace = a
        .trace
        .as_ref()
        .map(|p| File::create(p).map(BufWriter::new))
        .transpose()?;
    let mut results = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        let res = match (&conflicts, a.escape) {
            (Some(c), true) => search_with_escape(&g, &data, c, entry, q, a.budget, a.k)?,
            _ => best_first(&g, &data, entry, q, a.budget, a.k)?,
        };
        if let Some(w) = trace.as_mut() {
            write_trace_jsonl(w, &res.trace)?;
        }
        results.push(QueryResult {
            query: i,
            candidates: res.candidates,
            distance_evals: res.distance_evals,
            terminated_at_local_min: res.terminated_at_local_min,
        });
    }
    if let Some(mut w) = trace {
        w.flush()?;
    }
    emit_json(&a.output, &results)
}

#[derive(Serialize)]
struct VerifyOutput {
    passed: bool,
    reports: Vec<CheckReport>,
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    let data = a.data.load()?;
    let g = load_graph(&a.graph)?;
    g.validate_against(&data)?;
    let sample = match a.sample_edges {
        Some(count) => EdgeSample::Random {
            count,
            seed: a.sample_seed,
        },
        None => EdgeSample::All,
    };
    let mut checks = a.checks.clone();
    checks.dedup();
    let reports: Vec<CheckReport> = checks
        .iter()
        .map(|c| match c {
            CheckName::Definition => check_mrng_definition(&g, &data),
            CheckName::Monotonic => is_monotonic(&g, &data),
            CheckName::Minimality => check_edge_minimality(&g, &data, sample),
            CheckName::Angle => check_angle_separation(&g, &data),
        })
        .collect();
    let passed = reports.iter().all(|r| r.passed);
    emit_json(&a.output, &VerifyOutput { passed, reports })?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn cmd_experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let kind = match a.kind {
        KindArg::Degree => ExperimentKind::Degree,
        KindArg::Truncation => ExperimentKind::Truncation,
        KindArg::Conflicts => ExperimentKind::Conflicts,
    };
    let budgets = if a.budget.is_empty() {
        a.n.clone()
    } else {
        a.budget
    };
    let cfg = ExperimentConfig {
        kind,
        ns: a.n,
        ds: a.d,
        seeds: a.seed,
        degree_bounds: a.degree_bound.iter().map(|b| b.0).collect(),
        budgets,
        n_queries: a.queries,
        cap: a.cap,
        force: a.force,
    };
    let record = run_experiment(&cfg)?;
    let mut w = sink(&a.output)?;
    match a.format {
        Format::Csv => record.write_csv(&mut w)?,
        Format::Json => writeln!(w, "{}", record.to_json()?)?,
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Build(a) => cmd_build(a),
        Command::Search(a) => cmd_search(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
