//! Command-line front end: loads or generates a sparse matrix, runs the
//! kernels, the analysis metrics, or the host microbenchmarks, and emits
//! machine-readable tables (CSV or JSON) for plotting.

mod output;
mod source;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use sparsebench::analysis::{
    block_density_analysis, csr_footprint_bytes, spmv_bandwidth_model, ucld, vector_access_model,
    CacheModelConfig,
};
use sparsebench::bench::{
    microbench_read_sum, microbench_write_fill, sweep, BenchProtocol, BenchResult, KernelFamily,
    ReadElement, SweepGrid,
};
use sparsebench::io::{fetch_matrix, write_matrix_market, MatrixSource};
use sparsebench::kernels::{BlockDims, SchedulePolicy};
use sparsebench::matrix::{gen_stencil5, CsrMatrix};
use sparsebench::ordering::{matrix_bandwidth, rcm_order};

use output::{emit, num, Format, Table};
use source::MatrixRef;

#[derive(Parser)]
#[command(
    name = "sparsebench",
    version,
    about = "Sparse matrix kernels, locality metrics, and memory benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the properties table of a matrix.
    Stats(StatsArgs),
    /// Benchmark parallel SpMV over a schedule sweep.
    Spmv(BenchArgs),
    /// Benchmark SpMM (sparse times tall-skinny dense) over a schedule sweep.
    Spmm(SpmmArgs),
    /// Locality and footprint metrics: UCLD, byte volumes, the cache model,
    /// and register-blocking density.
    Analyze(AnalyzeArgs),
    /// Reverse Cuthill-McKee reordering and its bandwidth effect.
    Rcm(RcmArgs),
    /// Host memory bandwidth across a worker ladder.
    Microbench(MicrobenchArgs),
    /// Download a collection matrix into the local cache.
    Fetch(FetchArgs),
    /// Generate the 5-point stencil matrix and write it as Matrix Market.
    GenStencil(GenStencilArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Matrix: a file path, Group/Name collection entry, or stencil:<s>.
    #[arg(long)]
    matrix: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Matrix: a file path, Group/Name collection entry, or stencil:<s>.
    #[arg(long)]
    matrix: String,
    /// Worker counts to sweep, comma separated. Default: powers of two up
    /// to the host parallelism.
    #[arg(long, value_delimiter = ',')]
    threads: Option<Vec<usize>>,
    /// Chunk sizes (rows per work unit) to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![32usize, 64])]
    chunk: Vec<usize>,
    /// Restrict the sweep to one schedule policy (default: both).
    #[arg(long, value_parser = parse_policy)]
    policy: Option<SchedulePolicy>,
    /// Timed runs per grid point.
    #[arg(long, default_value_t = 70)]
    runs: usize,
    /// Leading runs discarded as warmup.
    #[arg(long, default_value_t = 10)]
    discard: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SpmmArgs {
    #[command(flatten)]
    bench: BenchArgs,
    /// Dense operand width (columns of X).
    #[arg(long, default_value_t = 16)]
    k: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Matrix: a file path, Group/Name collection entry, or stencil:<s>.
    #[arg(long)]
    matrix: String,
    /// Core count for the vector-access model.
    #[arg(long, default_value_t = 61)]
    cores: usize,
    /// Chunk rows for the vector-access model.
    #[arg(long, default_value_t = 64)]
    chunk: usize,
    /// Per-core cache capacity in KB for the finite model.
    #[arg(long = "cache-kb", default_value_t = 512)]
    cache_kb: u64,
    /// Block configurations for the density table, comma separated
    /// (e.g. 8x8,4x8). Default: all seven.
    #[arg(long, value_delimiter = ',', value_parser = parse_blocks)]
    blocks: Option<Vec<BlockDims>>,
    /// Reorder with RCM and report the metric deltas.
    #[arg(long)]
    rcm: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RcmArgs {
    /// Matrix: a file path, Group/Name collection entry, or stencil:<s>.
    #[arg(long)]
    matrix: String,
    /// Also write the permuted matrix here as Matrix Market.
    #[arg(long)]
    permuted: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct MicrobenchArgs {
    /// Worker counts, comma separated. Default: powers of two up to the
    /// host parallelism.
    #[arg(long, value_delimiter = ',')]
    threads: Option<Vec<usize>>,
    /// Per-worker buffer size in MB.
    #[arg(long = "buffer-mb", default_value_t = 16)]
    buffer_mb: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct FetchArgs {
    /// Collection entry as Group/Name.
    #[arg(long)]
    matrix: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct GenStencilArgs {
    /// Grid side length s; the matrix is s^2 x s^2.
    s: usize,
    /// Destination .mtx path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_policy(s: &str) -> Result<SchedulePolicy, String> {
    s.parse().map_err(|_| {
        format!("unknown policy {s:?}; expected \"static\" or \"dynamic\"")
    })
}

fn parse_blocks(s: &str) -> Result<BlockDims, String> {
    s.parse().map_err(|_| {
        let all: Vec<String> = BlockDims::ALL.iter().map(|d| d.to_string()).collect();
        format!("unknown block config {s:?}; expected one of {}", all.join(", "))
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Stats(args) => cmd_stats(args),
        Command::Spmv(args) => cmd_bench(args, KernelFamily::Spmv),
        Command::Spmm(args) => cmd_bench(args.bench, KernelFamily::Spmm { k: args.k }),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Rcm(args) => cmd_rcm(args),
        Command::Microbench(args) => cmd_microbench(args),
        Command::Fetch(args) => cmd_fetch(args),
        Command::GenStencil(args) => cmd_gen_stencil(args),
    }
}

/// Powers of two up to the host parallelism, ending at the host count.
fn default_ladder() -> Vec<usize> {
    let p = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut ladder: Vec<usize> = (0..)
        .map(|e| 1usize << e)
        .take_while(|&w| w < p)
        .collect();
    ladder.push(p);
    ladder.dedup();
    ladder
}

const STATS_COLUMNS: [&str; 8] = [
    "matrix",
    "rows",
    "cols",
    "nonzeros",
    "density",
    "avg_nnz_per_row",
    "max_nnz_per_row",
    "max_nnz_per_col",
];

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let a = MatrixRef::parse(&args.matrix)?.load()?;
    let s = a.stats();
    let mut table = Table::new(&STATS_COLUMNS);
    table.push_row(vec![
        json!(args.matrix),
        json!(s.rows as u64),
        json!(s.cols as u64),
        json!(s.nonzeros as u64),
        json!(s.display_density()),
        json!(s.display_avg_nnz_per_row()),
        json!(s.max_nnz_per_row as u64),
        json!(s.max_nnz_per_col as u64),
    ]);
    emit(&table.render(args.output.format), args.output.out.as_deref())
}

const BENCH_COLUMNS: [&str; 15] = [
    "kernel",
    "matrix",
    "threads",
    "policy",
    "chunk",
    "k",
    "samples_kept",
    "mean_seconds",
    "min_seconds",
    "max_seconds",
    "stddev_seconds",
    "gflops",
    "naive_gbps",
    "application_gbps",
    "estimated_gbps",
];

fn bench_row(r: &BenchResult) -> Vec<Value> {
    vec![
        json!(r.config.kernel),
        json!(r.config.matrix),
        json!(r.config.threads as u64),
        json!(r.config.policy),
        json!(r.config.chunk as u64),
        r.config.k.map_or(Value::Null, |k| json!(k as u64)),
        json!(r.samples_kept as u64),
        num(r.mean_seconds),
        num(r.min_seconds),
        num(r.max_seconds),
        num(r.stddev_seconds),
        num(r.gflops),
        num(r.naive_gbps),
        num(r.application_gbps),
        num(r.estimated_gbps),
    ]
}

fn cmd_bench(args: BenchArgs, family: KernelFamily) -> Result<()> {
    let a = MatrixRef::parse(&args.matrix)?.load()?;
    let grid = SweepGrid {
        threads: args.threads.unwrap_or_else(default_ladder),
        policies: match args.policy {
            Some(p) => vec![p],
            None => vec![SchedulePolicy::Dynamic, SchedulePolicy::Static],
        },
        chunks: args.chunk,
    };
    let protocol = BenchProtocol::new(args.runs, args.discard)?;
    let report = sweep(&a, &args.matrix, family, &grid, &protocol);
    for (config, err) in &report.failures {
        eprintln!(
            "warning: {} threads={} policy={} chunk={}: {err}",
            config.kernel, config.threads, config.policy, config.chunk
        );
    }
    if report.results.is_empty() {
        bail!("every grid point failed");
    }
    let mut table = Table::new(&BENCH_COLUMNS);
    for r in &report.results {
        table.push_row(bench_row(r));
    }
    emit(&table.render(args.output.format), args.output.out.as_deref())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let a = MatrixRef::parse(&args.matrix)?.load()?;
    let s = a.stats();
    let bandwidth = matrix_bandwidth(&a).ok();

    let finite_cfg = CacheModelConfig::new(args.cores, args.chunk, 64, Some(args.cache_kb * 1024))?;
    let infinite_cfg = finite_cfg.with_infinite_cache();
    let infinite = vector_access_model(&a, &infinite_cfg);
    let finite = vector_access_model(&a, &finite_cfg);
    let model = spmv_bandwidth_model(&a, &finite);
    let report = ucld(&a)?;

    let mut doc = serde_json::Map::new();
    doc.insert(
        "matrix".into(),
        json!({
            "source": args.matrix,
            "rows": s.rows as u64,
            "cols": s.cols as u64,
            "nonzeros": s.nonzeros as u64,
            "density": num(s.density),
            "density_display": s.display_density(),
            "avg_nnz_per_row": num(s.avg_nnz_per_row),
            "avg_nnz_per_row_display": s.display_avg_nnz_per_row(),
            "max_nnz_per_row": s.max_nnz_per_row as u64,
            "max_nnz_per_col": s.max_nnz_per_col as u64,
            "bandwidth": bandwidth.map(|b| b as u64),
        }),
    );
    doc.insert(
        "ucld".into(),
        json!({
            "mean": num(report.mean),
            "mean_ratio": report.mean_ratio().map(|(n, d)| format!("{n}/{d}")),
        }),
    );
    doc.insert(
        "bytes".into(),
        json!({
            "flops": 2 * a.nnz() as u64,
            "naive": model.naive_bytes,
            "application": model.application_bytes,
            "estimated_actual": model.estimated_actual_bytes,
            "csr_footprint": csr_footprint_bytes(&a),
        }),
    );
    doc.insert(
        "model".into(),
        json!({
            "cores": args.cores as u64,
            "chunk_rows": args.chunk as u64,
            "cacheline_bytes": 64u64,
            "capacity_bytes": args.cache_kb * 1024,
        }),
    );
    doc.insert(
        "vector_access".into(),
        json!({
            "infinite": {
                "total_bytes": infinite.total_vector_bytes,
                "ratio": num(infinite.vector_access_ratio),
            },
            "finite": {
                "total_bytes": finite.total_vector_bytes,
                "ratio": num(finite.vector_access_ratio),
            },
        }),
    );

    let configs = args.blocks.unwrap_or_else(|| BlockDims::ALL.to_vec());
    let mut blocks = serde_json::Map::new();
    for dims in configs {
        let b = block_density_analysis(&a, dims);
        blocks.insert(
            dims.to_string(),
            json!({
                "num_blocks": b.num_blocks,
                "fill_ratio": num(b.fill_ratio),
                "break_even_nnz": b.break_even_nnz,
                "break_even_density": num(b.break_even_density),
                "blocked_bytes": b.blocked_bytes,
                "saves_memory": b.saves_memory,
            }),
        );
    }
    doc.insert("blocks".into(), Value::Object(blocks));

    if args.rcm {
        let perm = rcm_order(&a)?;
        let permuted = a.permute_symmetric(&perm)?;
        let rcm_finite = vector_access_model(&permuted, &finite_cfg);
        let rcm_ucld = ucld(&permuted)?;
        doc.insert(
            "rcm".into(),
            json!({
                "bandwidth": matrix_bandwidth(&permuted)? as u64,
                "ucld_mean": num(rcm_ucld.mean),
                "ucld_delta": num(rcm_ucld.mean - report.mean),
                "vector_access_ratio": num(rcm_finite.vector_access_ratio),
                "vector_access_delta": num(
                    finite.vector_access_ratio - rcm_finite.vector_access_ratio
                ),
            }),
        );
    }

    let doc = Value::Object(doc);
    let rendered = match args.output.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&doc).expect("plain scalars");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut table = Table::new(&["metric", "value"]);
            flatten(&doc, String::new(), &mut table);
            table.render(Format::Csv)
        }
    };
    emit(&rendered, args.output.out.as_deref())
}

/// Depth-first walk emitting `a.b.c,value` rows in document order.
fn flatten(v: &Value, prefix: String, table: &mut Table) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(child, key, table);
            }
        }
        leaf => table.push_row(vec![json!(prefix), leaf.clone()]),
    }
}

const RCM_COLUMNS: [&str; 5] = [
    "matrix",
    "rows",
    "nonzeros",
    "bandwidth_before",
    "bandwidth_after",
];

fn cmd_rcm(args: RcmArgs) -> Result<()> {
    let a = MatrixRef::parse(&args.matrix)?.load()?;
    let before = matrix_bandwidth(&a)?;
    let perm = rcm_order(&a)?;
    let permuted = a.permute_symmetric(&perm)?;
    let after = matrix_bandwidth(&permuted)?;
    if let Some(path) = &args.permuted {
        write_matrix_market(&permuted, path)?;
    }
    let mut table = Table::new(&RCM_COLUMNS);
    table.push_row(vec![
        json!(args.matrix),
        json!(a.nrows() as u64),
        json!(a.nnz() as u64),
        json!(before as u64),
        json!(after as u64),
    ]);
    emit(&table.render(args.output.format), args.output.out.as_deref())
}

const MICROBENCH_COLUMNS: [&str; 8] = [
    "benchmark",
    "element",
    "workers",
    "buffer_mb",
    "bytes_processed",
    "seconds",
    "gbps",
    "checksum",
];

fn cmd_microbench(args: MicrobenchArgs) -> Result<()> {
    let ladder = args.threads.unwrap_or_else(default_ladder);
    let mut table = Table::new(&MICROBENCH_COLUMNS);
    for element in [ReadElement::Byte, ReadElement::Word32, ReadElement::Wide] {
        for &workers in &ladder {
            let r = microbench_read_sum(args.buffer_mb, workers, element)?;
            table.push_row(vec![
                json!("read"),
                json!(element.to_string()),
                json!(workers as u64),
                json!(args.buffer_mb as u64),
                json!(r.bytes_processed),
                num(r.elapsed_seconds),
                num(r.gbps),
                json!(r.checksum),
            ]);
        }
    }
    for &workers in &ladder {
        let r = microbench_write_fill(args.buffer_mb, workers)?;
        table.push_row(vec![
            json!("write"),
            json!("fill"),
            json!(workers as u64),
            json!(args.buffer_mb as u64),
            json!(r.bytes_processed),
            num(r.elapsed_seconds),
            num(r.gbps),
            json!(r.checksum),
        ]);
    }
    emit(&table.render(args.output.format), args.output.out.as_deref())
}

fn cmd_fetch(args: FetchArgs) -> Result<()> {
    let src = MatrixSource::from_name(&args.matrix)?;
    let path = fetch_matrix(&src).with_context(|| format!("fetching {}", args.matrix))?;
    let bytes = std::fs::metadata(&path)?.len();
    let mut table = Table::new(&["name", "path", "bytes"]);
    table.push_row(vec![
        json!(args.matrix),
        json!(path.display().to_string()),
        json!(bytes),
    ]);
    emit(&table.render(args.output.format), args.output.out.as_deref())
}

fn cmd_gen_stencil(args: GenStencilArgs) -> Result<()> {
    let a: CsrMatrix = gen_stencil5(args.s)?;
    write_matrix_market(&a, &args.out)?;
    eprintln!(
        "wrote stencil:{} ({} rows, {} nonzeros) to {}",
        args.s,
        a.nrows(),
        a.nnz(),
        args.out.display()
    );
    Ok(())
}
