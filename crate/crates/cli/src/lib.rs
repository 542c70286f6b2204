//! Command implementations behind the `utcs` binary.
//!
//! Stages communicate through files in the output directory:
//!
//! ```text
//! graph.bin          canonical temporal graph
//! detemporal.txt     static edge list (internal ids)
//! partition.txt      node -> subgraph
//! node_map.txt       original id -> internal id
//! stats.json         n, m, m̄, t_max, K
//! init.emb           node2vec table
//! embeddings.emb     pre-trained table
//! train_log.jsonl    one record per epoch
//! checkpoints/       epoch_N.emb
//! results.jsonl      search output
//! eval.jsonl         per-run and aggregate evaluation records
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use utcs_core::config::{PipelineConfig, Seeds};
use utcs_core::eval::{run_benchmark, EvalReport, GroundTruth};
use utcs_core::pipeline::{build_partition, check_table, initial_embeddings};
use utcs_core::pretrain::{EpochLog, Trainer};
use utcs_core::{EmbeddingTable, Partition, Query, SearchIndex, TemporalGraph};

/// Environment variable read for the worker thread count.
pub const THREADS_ENV: &str = "UTCS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "utcs", version, about = "Unsupervised temporal community search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load an edge list, partition it and write the graph artifacts
    Ingest(IngestArgs),
    /// Initialize with node2vec and pre-train the embeddings
    Pretrain(PretrainArgs),
    /// Answer queries from a file
    Search(SearchArgs),
    /// Run the benchmark against ground-truth communities
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// base seed; sets leiden=S, init=S+1, train=S+2, eval=S+3
    #[arg(long)]
    pub seed: Option<u64>,
    /// output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// temporal edge list, overrides the config
    #[arg(long)]
    pub edges: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// continue from checkpoints/epoch_N.emb
    #[arg(long)]
    pub resume_from_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// one query per line, comma-separated original node ids
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// result file, defaults to results.jsonl in the output directory
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// temporal edge list, overrides the config
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// ground-truth communities, overrides the config
    #[arg(long)]
    pub communities: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
}

/// Reads the config file (or defaults) and applies the shared overrides.
pub fn resolve_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = Seeds::from_base(s);
    }
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Stats {
    pub nodes: usize,
    pub edges: usize,
    pub static_edges: usize,
    pub t_max: u64,
    pub timestamps: usize,
    pub subgraphs: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn load_graph(dir: &Path) -> Result<TemporalGraph> {
    let path = dir.join("graph.bin");
    TemporalGraph::open(&path).with_context(|| format!("run `utcs ingest` first ({} missing or invalid)", path.display()))
}

fn load_partition(dir: &Path) -> Result<Partition> {
    let path = dir.join("partition.txt");
    let f = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(Partition::read_text(BufReader::new(f))?)
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<Stats> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(e) = &args.edges {
        cfg.data.edges = Some(e.clone());
    }
    let edges = cfg.data.edges.clone().context("no edge file given (--edges or [data].edges)")?;
    let graph = TemporalGraph::load(&edges)?;
    let detemporal = graph.detemporalize();
    let partition = build_partition(&detemporal, &cfg, &cfg.seeds)?;

    let dir = &cfg.output;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    graph.save(dir.join("graph.bin"))?;
    let mut out = create(&dir.join("detemporal.txt"))?;
    detemporal.write_edge_list(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("partition.txt"))?;
    partition.write_text(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("node_map.txt"))?;
    graph.write_node_map(&mut out)?;
    out.flush()?;

    let stats = Stats {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        static_edges: detemporal.edge_count(),
        t_max: graph.t_max(),
        timestamps: graph.distinct_timestamps(),
        subgraphs: partition.subgraph_count(),
    };
    fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    Ok(stats)
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch}.emb"))
}

/// Returns the trained table and the full loss log.
pub fn cmd_pretrain(args: &PretrainArgs) -> Result<(EmbeddingTable, Vec<EpochLog>)> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let dir = cfg.output.clone();
    let graph = load_graph(&dir)?;
    let partition = load_partition(&dir)?;
    let detemporal = graph.detemporalize();
    if partition.node_count() != graph.node_count() {
        bail!(
            "partition.txt covers {} nodes but the graph has {}",
            partition.node_count(),
            graph.node_count()
        );
    }

    let (mut table, mut logs, start) = match args.resume_from_epoch {
        Some(epoch) => {
            if epoch > cfg.train.epochs {
                bail!("cannot resume from epoch {epoch} of {}", cfg.train.epochs);
            }
            let path = checkpoint_path(&dir, epoch);
            let table = EmbeddingTable::open(&path).with_context(|| format!("cannot resume from {}", path.display()))?;
            check_table(&table, &detemporal, &cfg)?;
            let logs = read_log(&dir.join("train_log.jsonl"), epoch)?;
            (table, logs, epoch)
        }
        None => {
            let init = initial_embeddings(&detemporal, &cfg, &cfg.seeds)?;
            init.save(dir.join("init.emb"))?;
            (init, Vec::new(), 0)
        }
    };

    if cfg.train.epochs > start {
        let trainer = Trainer::new(&graph, &partition, cfg.train_config(&cfg.seeds))?;
        let every = cfg.pretrain.checkpoint_every;
        if every > 0 {
            fs::create_dir_all(dir.join("checkpoints"))?;
        }
        let log_path = dir.join("train_log.jsonl");
        write_jsonl(&log_path, &logs)?;
        let mut log_file = fs::OpenOptions::new().append(true).open(&log_path)?;
        let new_logs = trainer.run(&mut table, start, |log, t| {
            log::info!("epoch {} total loss {:.6} ({:.2}s)", log.epoch, log.total, log.wall_time_s);
            let line = serde_json::to_string(log).map_err(|e| utcs_core::Error::Format(e.to_string()))?;
            writeln!(log_file, "{line}").map_err(|e| utcs_core::Error::Format(e.to_string()))?;
            if every > 0 && log.epoch % every == 0 {
                t.save(checkpoint_path(&dir, log.epoch))?;
            }
            Ok(())
        })?;
        logs.extend(new_logs);
    } else {
        write_jsonl(&dir.join("train_log.jsonl"), &logs)?;
    }
    table.save(dir.join("embeddings.emb"))?;
    Ok((table, logs))
}

/// First `epochs` records of an existing training log.
fn read_log(path: &Path, epochs: usize) -> Result<Vec<EpochLog>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut logs = Vec::with_capacity(epochs);
    for line in BufReader::new(f).lines().take(epochs) {
        logs.push(serde_json::from_str(&line?)?);
    }
    if logs.len() < epochs {
        bail!("{} has {} records, expected at least {epochs}", path.display(), logs.len());
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchRecord {
    pub line: usize,
    pub query: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_space: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn parse_query_line(line: &str) -> std::result::Result<Vec<u64>, String> {
    line.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u64>().map_err(|_| format!("invalid node id {t:?}")))
        .collect()
}

pub fn cmd_search(args: &SearchArgs) -> Result<Vec<SearchRecord>> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(k) = args.k {
        cfg.search.k = k;
    }
    let dir = cfg.output.clone();
    let graph = load_graph(&dir)?;
    let partition = load_partition(&dir)?;
    let detemporal = graph.detemporalize();
    let path = dir.join("embeddings.emb");
    let table = EmbeddingTable::open(&path).with_context(|| format!("run `utcs pretrain` first ({})", path.display()))?;
    check_table(&table, &detemporal, &cfg)?;
    let index = SearchIndex::new(&detemporal, &partition, &table)?;

    let f = File::open(&args.queries).with_context(|| format!("cannot open {}", args.queries.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut rec = SearchRecord {
            line: i + 1,
            query: Vec::new(),
            members: None,
            candidate_space: None,
            trace_len: None,
            latency_us: None,
            error: None,
        };
        let outcome = parse_query_line(&line).and_then(|ids| {
            rec.query = ids.clone();
            let nodes = ids
                .iter()
                .map(|&id| graph.node_index(id).ok_or_else(|| format!("unknown node id {id}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let q = Query::new(nodes).map_err(|e| e.to_string())?;
            let start = Instant::now();
            let r = index.search(&q, cfg.search.k).map_err(|e| e.to_string())?;
            Ok((r, start.elapsed().as_secs_f64() * 1e6))
        });
        match outcome {
            Ok((r, us)) => {
                rec.members = Some(r.members.iter().map(|&v| graph.original_id(v)).collect());
                rec.candidate_space = Some(r.candidate_space_size);
                rec.trace_len = Some(r.trace.len());
                rec.latency_us = Some(us);
            }
            Err(e) => {
                log::warn!("query on line {}: {e}", i + 1);
                rec.error = Some(e);
            }
        }
        records.push(rec);
    }
    let out = args.results.clone().unwrap_or_else(|| dir.join("results.jsonl"));
    write_jsonl(&out, &records)?;
    let answered: Vec<f64> = records.iter().filter_map(|r| r.latency_us).collect();
    if !answered.is_empty() {
        log::info!(
            "{} queries, mean latency {:.1} us",
            answered.len(),
            answered.iter().sum::<f64>() / answered.len() as f64
        );
    }
    Ok(records)
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum EvalLine<'a> {
    Query {
        run: usize,
        #[serde(flatten)]
        q: &'a utcs_core::eval::QueryRecord,
    },
    Run {
        run: usize,
        f1: f64,
        jaccard: f64,
        nmi: f64,
        latency_ms: f64,
    },
    Aggregate {
        f1: utcs_core::eval::MeanStd,
        jaccard: utcs_core::eval::MeanStd,
        nmi: utcs_core::eval::MeanStd,
        latency_ms: utcs_core::eval::MeanStd,
    },
}

/// Returns the report and the list of missed thresholds.
pub fn cmd_eval(args: &EvalArgs) -> Result<(EvalReport, Vec<String>)> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(e) = &args.edges {
        cfg.data.edges = Some(e.clone());
    }
    if let Some(c) = &args.communities {
        cfg.data.communities = Some(c.clone());
    }
    if let Some(k) = args.k {
        cfg.search.k = k;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(r) = args.runs {
        cfg.eval.runs = r;
    }
    if let Some(q) = args.queries {
        cfg.eval.queries = q;
    }
    cfg.validate()?;
    let edges = cfg.data.edges.clone().context("no edge file given (--edges or [data].edges)")?;
    let communities = cfg
        .data
        .communities
        .clone()
        .context("no ground-truth file given (--communities or [data].communities)")?;
    let graph = TemporalGraph::load(&edges)?;
    let gt = GroundTruth::load(&communities, &graph)?;
    let report = run_benchmark(&graph, &gt, &cfg)?;

    let dir = &cfg.output;
    fs::create_dir_all(dir)?;
    let mut lines = Vec::new();
    for r in &report.runs {
        lines.extend(r.queries.iter().map(|q| EvalLine::Query { run: r.run, q }));
        lines.push(EvalLine::Run {
            run: r.run,
            f1: r.f1,
            jaccard: r.jaccard,
            nmi: r.nmi,
            latency_ms: r.latency_ms,
        });
    }
    lines.push(EvalLine::Aggregate {
        f1: report.f1,
        jaccard: report.jaccard,
        nmi: report.nmi,
        latency_ms: report.latency_ms,
    });
    write_jsonl(&dir.join("eval.jsonl"), &lines)?;
    let misses = report.misses(&cfg.eval.thresholds);
    Ok((report, misses))
}

/// Builds the global thread pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Runs a parsed command line; the return value is the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    init_threads()?;
    match cli.command {
        Command::Ingest(a) => {
            let s = cmd_ingest(&a)?;
            println!(
                "n={} m={} m̄={} t_max={} K={}",
                s.nodes, s.edges, s.static_edges, s.t_max, s.subgraphs
            );
        }
        Command::Pretrain(a) => {
            let (_, logs) = cmd_pretrain(&a)?;
            match logs.last() {
                Some(l) => println!("trained {} epochs, final loss {:.6}", l.epoch, l.total),
                None => println!("0 epochs, wrote initialization"),
            }
        }
        Command::Search(a) => {
            let records = cmd_search(&a)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            println!("{} queries answered, {failed} failed", records.len() - failed);
        }
        Command::Eval(a) => {
            let (report, misses) = cmd_eval(&a)?;
            print!("{}", report.summary_table());
            if !misses.is_empty() {
                for m in &misses {
                    eprintln!("threshold missed: {m}");
                }
                return Ok(2);
            }
        }
    }
    Ok(0)
}
