use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ivfq::cache::{CachePolicy, DEFAULT_CAPACITY};
use ivfq::engine::ExecMode;
use ivfq::grouping::{GroupingConfig, DEFAULT_THETA};
use ivfq::ivf::{build_index, IvfManifest, DEFAULT_MAX_ITERS};
use ivfq::replay::{replay, trace_cluster_sets, verify_written, write_report, ReplayConfig};
use ivfq::report::{read_csv_file, summarize};
use ivfq::store::{profile_clusters, IoCostModel};
use ivfq::workload::{
    generate_synthetic, ingest_trace, read_corpus, synthetic_corpus, write_vectors, BatchTrace, BatchingConfig,
    Interleave, SyntheticConfig,
};

#[derive(Parser)]
#[command(name = "ivfq", version, about = "Disk-based IVF search with query grouping and prefetching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded Gaussian-mixture corpus in the flat vector format.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        blobs: usize,
        #[arg(long, default_value_t = 0.15)]
        spread: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cluster a corpus file and write the manifest and cluster files.
    BuildIndex {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        nlist: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
    },
    /// Record a read cost for every cluster in the manifest.
    Profile {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, value_enum, default_value_t = CostModelArg::Simulated)]
        cost_model: CostModelArg,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
    /// Generate a synthetic trace, or batch a flat vector file of queries.
    GenWorkload {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ingest these query vectors instead of generating patterns.
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[command(flatten)]
        workload: WorkloadArgs,
    },
    /// Print the group plan of every batch as JSON.
    Group {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 10)]
        nprobe: usize,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
    },
    /// Replay a trace through the selected modes and write reports.
    Replay(ReplayArgs),
    /// Re-summarize a per-query CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0)]
        warmup: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CostModelArg {
    Simulated,
    Real,
}

impl CostModelArg {
    fn model(self) -> IoCostModel {
        match self {
            CostModelArg::Simulated => IoCostModel::simulated(),
            CostModelArg::Real => IoCostModel::real(),
        }
    }
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value_t = 20)]
    min_batch: usize,
    #[arg(long, default_value_t = 100)]
    max_batch: usize,
    #[arg(long, default_value_t = 5)]
    patterns: usize,
    #[arg(long, default_value_t = 0.8)]
    overlap: f64,
    #[arg(long, default_value = "roundrobin")]
    interleave: Interleave,
    /// Noise norm relative to the anchor's probe radius.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 10)]
    nprobe: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl WorkloadArgs {
    fn batching(&self) -> BatchingConfig {
        BatchingConfig {
            min_batch: self.min_batch,
            max_batch: self.max_batch,
            seed: self.seed,
        }
    }

    fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_batches: self.batches,
            batching: self.batching(),
            n_patterns: self.patterns,
            pattern_overlap: self.overlap,
            interleave: self.interleave,
            noise: self.noise,
            nprobe: self.nprobe,
            seed: self.seed,
            ..SyntheticConfig::default()
        }
    }
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    index: PathBuf,
    /// Trace to replay; without it a synthetic trace is generated from --seed.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = ExecMode::ALL)]
    mode: Vec<ExecMode>,
    #[arg(long, default_value_t = 10)]
    nprobe: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_CAPACITY)]
    capacity: usize,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Eviction policy of the grouped modes.
    #[arg(long, default_value_t = CachePolicy::Lru)]
    policy: CachePolicy,
    #[arg(long, default_value_t = CachePolicy::CostAware)]
    baseline_policy: CachePolicy,
    #[arg(long, value_enum, default_value_t = CostModelArg::Simulated)]
    cost_model: CostModelArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "replay-out")]
    out_dir: PathBuf,
    /// Queries excluded from summaries; defaults to the first batch.
    #[arg(long)]
    warmup: Option<usize>,
    /// Idle time between query arrivals that a prefetch can overlap.
    #[arg(long, default_value_t = 0.0)]
    gap_us: f64,
    /// Re-simulate every cache decision from the written CSVs.
    #[arg(long)]
    verify: bool,
    /// Run modes one after another even in simulated mode.
    #[arg(long)]
    sequential: bool,
}

fn load_manifest(dir: &Path) -> Result<IvfManifest> {
    IvfManifest::load(dir).with_context(|| format!("loading index from {}", dir.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenCorpus {
            out,
            count,
            dim,
            blobs,
            spread,
            seed,
        } => {
            let corpus = synthetic_corpus(count, dim, blobs, spread, seed)?;
            let vectors: Vec<Vec<f32>> = corpus.into_iter().map(|r| r.values).collect();
            write_vectors(&out, dim, &vectors)?;
            println!("wrote {count} vectors of dimension {dim} to {}", out.display());
        }
        Command::BuildIndex {
            corpus,
            out_dir,
            nlist,
            seed,
            max_iters,
        } => {
            let records = read_corpus(&corpus)?;
            let manifest = build_index(&records, nlist, seed, max_iters, &out_dir)?;
            println!(
                "indexed {} vectors into {} clusters in {}",
                manifest.total_vectors(),
                manifest.nlist,
                out_dir.display()
            );
        }
        Command::Profile {
            index,
            cost_model,
            repetitions,
        } => {
            let mut manifest = load_manifest(&index)?;
            profile_clusters(&mut manifest, &cost_model.model(), repetitions)?;
            println!("profiled {} clusters", manifest.nlist);
        }
        Command::GenWorkload {
            index,
            out,
            vectors,
            workload,
        } => {
            let manifest = load_manifest(&index)?;
            let trace = match vectors {
                Some(path) => ingest_trace(&path, &workload.batching(), &manifest)?,
                None => generate_synthetic(&workload.synthetic(), &manifest)?,
            };
            trace.save(&out)?;
            println!(
                "wrote {} queries in {} batches to {}",
                trace.query_count(),
                trace.batches.len(),
                out.display()
            );
        }
        Command::Group {
            index,
            trace,
            nprobe,
            theta,
        } => {
            let manifest = load_manifest(&index)?;
            let trace = BatchTrace::load(&trace)?;
            let config = GroupingConfig::with_theta(theta);
            let plans = trace_cluster_sets(&trace, &manifest, nprobe)?
                .iter()
                .map(|batch| ivfq::grouping::plan_queries(batch, &config))
                .collect::<ivfq::Result<Vec<_>>>()?;
            println!("{}", serde_json::to_string_pretty(&plans)?);
        }
        Command::Replay(args) => run_replay(args)?,
        Command::Report { csv, warmup } => {
            let rows = read_csv_file(&csv)?;
            println!("{}", serde_json::to_string_pretty(&summarize(&rows, warmup)?)?);
        }
    }
    Ok(())
}

fn run_replay(args: ReplayArgs) -> Result<()> {
    let manifest = Arc::new(load_manifest(&args.index)?);
    let trace = match &args.trace {
        Some(path) => BatchTrace::load(path)?,
        None => generate_synthetic(
            &SyntheticConfig {
                nprobe: args.nprobe,
                seed: args.seed,
                ..SyntheticConfig::default()
            },
            &manifest,
        )?,
    };
    let config = ReplayConfig {
        k: args.k,
        nprobe: args.nprobe,
        capacity: args.capacity,
        policy: args.policy,
        baseline_policy: args.baseline_policy,
        grouping: GroupingConfig::with_theta(args.theta),
        cost_model: args.cost_model.model(),
        arrival_gap_us: args.gap_us,
        warmup: args.warmup,
        parallel: !args.sequential,
    };
    let mut modes = args.mode.clone();
    modes.sort();
    modes.dedup();
    let report = replay(&trace, Arc::clone(&manifest), &config, &modes)?;
    write_report(&report, &config, &args.out_dir)?;

    println!(
        "{:<9} {:>6} {:>9} {:>12} {:>12} {:>12} {:>14} {:>8}",
        "mode", "policy", "hit_ratio", "mean_us", "p95_us", "p99_us", "bytes_read", "failures"
    );
    for m in &report.modes {
        let s = &m.summary;
        println!(
            "{:<9} {:>6} {:>9.4} {:>12.1} {:>12.1} {:>12.1} {:>14} {:>8}",
            m.mode.as_str(),
            match m.policy {
                CachePolicy::Lru => "lru",
                CachePolicy::CostAware => "cost",
            },
            s.hit_ratio,
            s.mean_latency_us,
            s.p95_us,
            s.p99_us,
            s.total_bytes_read,
            m.failures.len()
        );
    }
    println!("reports written to {}", args.out_dir.display());

    if args.verify {
        if !config.cost_model.is_simulated() {
            bail!("--verify needs the simulated cost model; real prefetches race with demand loads");
        }
        verify_written(&report, &trace, &manifest, &config, &args.out_dir)?;
        println!("verify: cache decisions, byte counters, summaries and results all consistent");
    }
    Ok(())
}
