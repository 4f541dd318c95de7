//! The timing harness: repeated-run measurement protocol with cache flushing
//! between runs, host memory microbenchmarks, and schedule sweeps.
//!
//! Measurement follows a fixed recipe: run the kernel `total_runs` times,
//! discard the first `discard_runs`, and report statistics over the rest,
//! with an untimed scratch-buffer sweep between runs to evict the caches.
//! All rates in a [`BenchResult`] are recomputed from `mean_seconds` through
//! the analysis-module formulas, never accumulated separately.

use std::fmt::Display;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    effective_bandwidth, gflops, spmm_bandwidth_model, spmv_bandwidth_model, AnalysisError,
    CacheModelConfig, CacheModelReport,
};
use crate::kernels::{spmm, spmv_parallel, Schedule, SchedulePolicy};
use crate::matrix::{CsrMatrix, DenseMatrix};

#[derive(Error, Debug)]
pub enum BenchError {
    #[error("invalid protocol: discard {discard} must be < total {total}")]
    InvalidProtocol { discard: usize, total: usize },
    #[error("kernel failed on run {run}: {msg}")]
    KernelFailed { run: usize, msg: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("could not allocate {bytes} bytes: {msg}")]
    Allocation { bytes: usize, msg: String },
    #[error("buffer verification failed: {0}")]
    Verification(String),
    #[error("invalid worker/buffer spec: {0}")]
    InvalidSpec(String),
}

/// Monotonic time source; injectable so protocol behavior is testable with
/// scripted clocks.
pub trait Clock {
    /// Elapsed time since an arbitrary fixed epoch.
    fn now(&self) -> Duration;
}

/// The real, monotonic wall clock (nanosecond resolution on mainstream
/// platforms).
pub struct MonotonicClock(Instant);

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Run counts and flushing for one measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchProtocol {
    total_runs: usize,
    discard_runs: usize,
    flush_between: bool,
    flush_buffer_bytes: usize,
}

impl BenchProtocol {
    pub fn new(total_runs: usize, discard_runs: usize) -> Result<Self, BenchError> {
        if discard_runs >= total_runs {
            return Err(BenchError::InvalidProtocol {
                discard: discard_runs,
                total: total_runs,
            });
        }
        Ok(BenchProtocol {
            total_runs,
            discard_runs,
            flush_between: true,
            flush_buffer_bytes: default_flush_bytes(),
        })
    }

    pub fn total_runs(&self) -> usize {
        self.total_runs
    }

    pub fn discard_runs(&self) -> usize {
        self.discard_runs
    }

    /// Samples that survive the warmup discard.
    pub fn kept_runs(&self) -> usize {
        self.total_runs - self.discard_runs
    }

    pub fn flush_between(&self) -> bool {
        self.flush_between
    }

    pub fn flush_buffer_bytes(&self) -> usize {
        self.flush_buffer_bytes
    }

    pub fn with_flush(mut self, on: bool) -> Self {
        self.flush_between = on;
        self
    }

    pub fn with_flush_buffer_bytes(mut self, bytes: usize) -> Self {
        self.flush_buffer_bytes = bytes;
        self
    }
}

impl Default for BenchProtocol {
    /// 70 runs, first 10 discarded, caches flushed between runs.
    fn default() -> Self {
        BenchProtocol::new(70, 10).expect("70/10 is valid")
    }
}

/// Scratch size that defeats the last-level cache: 4x the detected LLC,
/// 128 MiB when the size cannot be read.
fn default_flush_bytes() -> usize {
    static DETECTED: OnceLock<usize> = OnceLock::new();
    *DETECTED.get_or_init(|| {
        detect_llc_bytes()
            .map(|llc| (llc * 4).clamp(16 << 20, 1 << 30))
            .unwrap_or(128 << 20)
    })
}

fn detect_llc_bytes() -> Option<usize> {
    let mut best: Option<(u32, usize)> = None; // (level, bytes)
    for idx in 0..16 {
        let dir = format!("/sys/devices/system/cpu/cpu0/cache/index{idx}");
        let level: u32 = match std::fs::read_to_string(format!("{dir}/level")) {
            Ok(s) => s.trim().parse().ok()?,
            Err(_) => break,
        };
        let size = std::fs::read_to_string(format!("{dir}/size")).ok()?;
        let size = parse_size(size.trim())?;
        if best.is_none_or(|(l, s)| level > l || (level == l && size > s)) {
            best = Some((level, size));
        }
    }
    best.map(|(_, s)| s)
}

fn parse_size(s: &str) -> Option<usize> {
    if let Some(k) = s.strip_suffix('K') {
        Some(k.parse::<usize>().ok()? << 10)
    } else if let Some(m) = s.strip_suffix('M') {
        Some(m.parse::<usize>().ok()? << 20)
    } else {
        s.parse().ok()
    }
}

/// Work and traffic of one kernel invocation, the inputs to every rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunCosts {
    pub flops: u64,
    pub naive_bytes: u64,
    pub application_bytes: u64,
    pub estimated_actual_bytes: u64,
}

impl RunCosts {
    /// SpMV costs: 2 flops per nonzero, bytes from the bandwidth model.
    pub fn spmv(a: &CsrMatrix, cache: &CacheModelReport) -> RunCosts {
        let model = spmv_bandwidth_model(a, cache);
        RunCosts {
            flops: 2 * a.nnz() as u64,
            naive_bytes: model.naive_bytes,
            application_bytes: model.application_bytes,
            estimated_actual_bytes: model.estimated_actual_bytes,
        }
    }

    /// SpMM costs: 2 flops per nonzero per operand column.
    pub fn spmm(a: &CsrMatrix, k: usize, cache: &CacheModelReport) -> RunCosts {
        let model = spmm_bandwidth_model(a, k, cache);
        RunCosts {
            flops: 2 * a.nnz() as u64 * k as u64,
            naive_bytes: model.naive_bytes,
            application_bytes: model.application_bytes,
            estimated_actual_bytes: model.estimated_actual_bytes,
        }
    }
}

/// What was measured: kernel, matrix, and schedule echo.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunConfig {
    pub kernel: String,
    pub matrix: String,
    pub threads: usize,
    pub policy: String,
    pub chunk: usize,
    pub k: Option<usize>,
}

impl RunConfig {
    pub fn new(kernel: &str, matrix: &str, schedule: &Schedule, k: Option<usize>) -> RunConfig {
        RunConfig {
            kernel: kernel.to_string(),
            matrix: matrix.to_string(),
            threads: schedule.threads(),
            policy: schedule.policy().to_string(),
            chunk: schedule.chunk(),
            k,
        }
    }
}

/// Timing statistics over the kept runs plus the rates derived from the
/// mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub config: RunConfig,
    pub costs: RunCosts,
    pub samples_kept: usize,
    pub mean_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub stddev_seconds: f64,
    pub gflops: f64,
    pub naive_gbps: f64,
    pub application_gbps: f64,
    pub estimated_gbps: f64,
}

/// Measures a kernel under the protocol with the real clock and the default
/// scratch-sweep flush.
pub fn time_kernel<E: Display>(
    kernel: impl FnMut() -> Result<(), E>,
    protocol: &BenchProtocol,
    costs: &RunCosts,
    config: RunConfig,
) -> Result<BenchResult, BenchError> {
    let bytes = protocol.flush_buffer_bytes();
    let mut scratch: Vec<u8> = Vec::new();
    let flush = move || {
        if scratch.is_empty() {
            scratch.resize(bytes, 1);
        }
        // one read+write pass evicts whatever the kernel left resident
        for b in scratch.iter_mut() {
            *b = b.wrapping_add(1);
        }
        std::hint::black_box(&scratch);
    };
    time_kernel_with(kernel, protocol, costs, config, &MonotonicClock::default(), flush)
}

/// [`time_kernel`] with an injected clock and flush pass. Only the kernel
/// closure runs between the two clock reads of a sample; the flush is never
/// timed.
pub fn time_kernel_with<E: Display>(
    mut kernel: impl FnMut() -> Result<(), E>,
    protocol: &BenchProtocol,
    costs: &RunCosts,
    config: RunConfig,
    clock: &impl Clock,
    mut flush: impl FnMut(),
) -> Result<BenchResult, BenchError> {
    let mut samples: Vec<Duration> = Vec::with_capacity(protocol.total_runs());
    for run in 0..protocol.total_runs() {
        if protocol.flush_between() {
            flush();
        }
        let start = clock.now();
        kernel().map_err(|e| BenchError::KernelFailed {
            run,
            msg: e.to_string(),
        })?;
        samples.push(clock.now() - start);
    }
    let kept = &samples[protocol.discard_runs()..];

    // Mean from integer nanoseconds: summing f64 seconds would smear even
    // identical samples across ulps.
    let total_nanos: u128 = kept.iter().map(|d| d.as_nanos()).sum();
    let mean = total_nanos as f64 / kept.len() as f64 / 1e9;
    let secs: Vec<f64> = kept.iter().map(|d| d.as_secs_f64()).collect();
    let min = secs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = secs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = secs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / secs.len() as f64;

    Ok(BenchResult {
        config,
        costs: *costs,
        samples_kept: kept.len(),
        mean_seconds: mean,
        min_seconds: min,
        max_seconds: max,
        stddev_seconds: var.sqrt(),
        gflops: gflops(costs.flops, mean)?,
        naive_gbps: effective_bandwidth(costs.naive_bytes, mean)?,
        application_gbps: effective_bandwidth(costs.application_bytes, mean)?,
        estimated_gbps: effective_bandwidth(costs.estimated_actual_bytes, mean)?,
    })
}

/// Buffer element type for the read microbenchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadElement {
    /// Byte-at-a-time sum over a u8 buffer.
    Byte,
    /// 32-bit word sum.
    Word32,
    /// 8 parallel double-precision accumulators, the vector-shaped path.
    Wide,
}

impl Display for ReadElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReadElement::Byte => "8-bit",
            ReadElement::Word32 => "32-bit",
            ReadElement::Wide => "wide",
        })
    }
}

/// One microbenchmark measurement: aggregated bandwidth plus the checksum
/// that keeps the compiler honest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicrobenchResult {
    pub bytes_processed: u64,
    pub elapsed_seconds: f64,
    pub gbps: f64,
    pub checksum: u64,
}

fn alloc_u8(len: usize) -> Result<Vec<u8>, BenchError> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|e| BenchError::Allocation {
        bytes: len,
        msg: e.to_string(),
    })?;
    v.resize(len, 1);
    Ok(v)
}

/// Aggregated read bandwidth: each worker sums a private buffer of
/// `buffer_mb` megabytes, starting from a worker-specific offset and
/// wrapping, so no two workers walk in lockstep. The returned checksum is
/// the wrapped sum of everything read.
pub fn microbench_read_sum(
    buffer_mb: usize,
    workers: usize,
    element: ReadElement,
) -> Result<MicrobenchResult, BenchError> {
    if buffer_mb == 0 || workers == 0 {
        return Err(BenchError::InvalidSpec(
            "buffer_mb and workers must be >= 1".into(),
        ));
    }
    let bytes = buffer_mb << 20;
    // Private all-ones buffers: 1u8, 1u32, or 1.0f64 per element.
    let buffers: Vec<Vec<u8>> = (0..workers)
        .map(|_| match element {
            ReadElement::Byte | ReadElement::Word32 => alloc_u8(bytes),
            ReadElement::Wide => {
                let mut v = alloc_u8(bytes)?;
                for chunk in v.chunks_exact_mut(8) {
                    chunk.copy_from_slice(&1.0f64.to_ne_bytes());
                }
                Ok(v)
            }
        })
        .collect::<Result<_, _>>()?;
    // For Word32 the raw bytes 0x01010101 sum differently than "all-ones
    // elements"; rebuild those buffers as 1u32 patterns.
    let buffers: Vec<Vec<u8>> = if element == ReadElement::Word32 {
        buffers
            .into_iter()
            .map(|mut v| {
                for chunk in v.chunks_exact_mut(4) {
                    chunk.copy_from_slice(&1u32.to_ne_bytes());
                }
                v
            })
            .collect()
    } else {
        buffers
    };

    let start = Instant::now();
    let mut sums = vec![0u64; workers];
    std::thread::scope(|scope| {
        for (w, (buf, sum)) in buffers.iter().zip(sums.iter_mut()).enumerate() {
            scope.spawn(move || {
                *sum = match element {
                    ReadElement::Byte => ring_sum_bytes(buf, w * buf.len() / (workers * 2)),
                    ReadElement::Word32 => {
                        let (_, words, _) = unsafe { buf.align_to::<u32>() };
                        ring_sum_words(words, w * words.len() / (workers * 2))
                    }
                    ReadElement::Wide => {
                        let (_, doubles, _) = unsafe { buf.align_to::<f64>() };
                        ring_sum_wide(doubles, w * doubles.len() / (workers * 2)) as u64
                    }
                };
            });
        }
    });
    let elapsed = start.elapsed().as_secs_f64();

    let checksum = sums
        .iter()
        .fold(0u64, |acc, &s| acc.wrapping_add(std::hint::black_box(s)));
    let bytes_processed = (workers * bytes) as u64;
    Ok(MicrobenchResult {
        bytes_processed,
        elapsed_seconds: elapsed,
        gbps: bytes_processed as f64 / elapsed / 1e9,
        checksum,
    })
}

// The ring traversals visit start..end then 0..start as two contiguous
// streaming passes; per-element index arithmetic would throttle them far
// below the memory system.

fn ring_sum_bytes(buf: &[u8], start: usize) -> u64 {
    let (tail, head) = buf.split_at(start.min(buf.len()));
    let mut sum = 0u64;
    for part in [head, tail] {
        for &b in part {
            sum = sum.wrapping_add(b as u64);
        }
    }
    sum
}

fn ring_sum_words(buf: &[u32], start: usize) -> u64 {
    let (tail, head) = buf.split_at(start.min(buf.len()));
    let mut sum = 0u64;
    for part in [head, tail] {
        for &w in part {
            sum = sum.wrapping_add(w as u64);
        }
    }
    sum
}

fn ring_sum_wide(buf: &[f64], start: usize) -> f64 {
    // 8 independent accumulators so the loop can saturate vector lanes.
    let mut acc = [0.0f64; 8];
    let (tail, head) = buf.split_at(start.min(buf.len()));
    for part in [head, tail] {
        let mut chunks = part.chunks_exact(8);
        for chunk in &mut chunks {
            for (a, &v) in acc.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        for &v in chunks.remainder() {
            acc[0] += v;
        }
    }
    acc.iter().sum()
}

/// Aggregated write bandwidth: each worker fills a private `buffer_mb`
/// megabyte buffer with a fixed value; buffers are verified afterwards so
/// the writes are observable and cannot be elided.
pub fn microbench_write_fill(buffer_mb: usize, workers: usize) -> Result<MicrobenchResult, BenchError> {
    if buffer_mb == 0 || workers == 0 {
        return Err(BenchError::InvalidSpec(
            "buffer_mb and workers must be >= 1".into(),
        ));
    }
    const FILL: u8 = 0xA5;
    let bytes = buffer_mb << 20;
    let mut buffers: Vec<Vec<u8>> = (0..workers)
        .map(|_| alloc_u8(bytes))
        .collect::<Result<_, _>>()?;

    let start = Instant::now();
    std::thread::scope(|scope| {
        for buf in buffers.iter_mut() {
            scope.spawn(move || buf.fill(FILL));
        }
    });
    let elapsed = start.elapsed().as_secs_f64();

    for (w, buf) in buffers.iter().enumerate() {
        if let Some(pos) = buf.iter().position(|&b| b != FILL) {
            return Err(BenchError::Verification(format!(
                "worker {w} buffer byte {pos} is {:#04x}, expected {FILL:#04x}",
                buf[pos]
            )));
        }
    }
    let bytes_processed = (workers * bytes) as u64;
    Ok(MicrobenchResult {
        bytes_processed,
        elapsed_seconds: elapsed,
        gbps: bytes_processed as f64 / elapsed / 1e9,
        checksum: bytes_processed,
    })
}

/// Which kernel family a sweep exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Spmv,
    /// SpMM with the given operand width.
    Spmm { k: usize },
}

/// The cross product of schedules to measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepGrid {
    pub threads: Vec<usize>,
    pub policies: Vec<SchedulePolicy>,
    pub chunks: Vec<usize>,
}

impl Default for SweepGrid {
    /// Both policies at the two reference chunk sizes, single worker.
    fn default() -> Self {
        SweepGrid {
            threads: vec![1],
            policies: vec![SchedulePolicy::Dynamic, SchedulePolicy::Static],
            chunks: vec![32, 64],
        }
    }
}

/// Sweep outcome: successful measurements sorted by GFlop/s descending
/// (best first), plus every failed grid point with its error.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub results: Vec<BenchResult>,
    pub failures: Vec<(RunConfig, String)>,
}

impl SweepReport {
    /// The best-performing configuration, when any point succeeded.
    pub fn best(&self) -> Option<&BenchResult> {
        self.results.first()
    }
}

/// Measures every grid point, recording failures without aborting the rest.
///
/// The estimated-transfer rate models the swept schedule itself: the cache
/// model runs with cores = threads and the grid point's chunk size.
pub fn sweep(
    a: &CsrMatrix,
    matrix_id: &str,
    family: KernelFamily,
    grid: &SweepGrid,
    protocol: &BenchProtocol,
) -> SweepReport {
    let mut report = SweepReport {
        results: Vec::new(),
        failures: Vec::new(),
    };
    let x: Vec<f64> = (0..a.ncols())
        .map(|i| (i % 17) as f64 * 0.25 - 2.0)
        .collect();
    for &threads in &grid.threads {
        for &policy in &grid.policies {
            for &chunk in &grid.chunks {
                let kernel_name = match family {
                    KernelFamily::Spmv => "spmv_parallel",
                    KernelFamily::Spmm { .. } => "spmm",
                };
                let k = match family {
                    KernelFamily::Spmv => None,
                    KernelFamily::Spmm { k } => Some(k),
                };
                let schedule = match Schedule::new(policy, threads, chunk) {
                    Ok(s) => s,
                    Err(e) => {
                        report.failures.push((
                            RunConfig {
                                kernel: kernel_name.to_string(),
                                matrix: matrix_id.to_string(),
                                threads,
                                policy: policy.to_string(),
                                chunk,
                                k,
                            },
                            e.to_string(),
                        ));
                        continue;
                    }
                };
                let config = RunConfig::new(kernel_name, matrix_id, &schedule, k);
                let point = measure_point(a, &x, family, &schedule, protocol, config.clone());
                match point {
                    Ok(result) => report.results.push(result),
                    Err(e) => report.failures.push((config, e.to_string())),
                }
            }
        }
    }
    report
        .results
        .sort_by(|l, r| r.gflops.partial_cmp(&l.gflops).unwrap_or(std::cmp::Ordering::Equal));
    report
}

fn measure_point(
    a: &CsrMatrix,
    x: &[f64],
    family: KernelFamily,
    schedule: &Schedule,
    protocol: &BenchProtocol,
    config: RunConfig,
) -> Result<BenchResult, BenchError> {
    let cache_cfg = CacheModelConfig::new(
        schedule.threads(),
        schedule.chunk(),
        64,
        Some(512 * 1024),
    )
    .map_err(BenchError::Analysis)?;
    let cache = crate::analysis::vector_access_model(a, &cache_cfg);
    match family {
        KernelFamily::Spmv => {
            let costs = RunCosts::spmv(a, &cache);
            time_kernel(
                || {
                    spmv_parallel(a, x, schedule).map(|y| {
                        std::hint::black_box(&y);
                    })
                },
                protocol,
                &costs,
                config,
            )
        }
        KernelFamily::Spmm { k } => {
            let costs = RunCosts::spmm(a, k, &cache);
            let operand = DenseMatrix::from_vec(
                a.ncols(),
                k,
                (0..a.ncols() * k)
                    .map(|i| (i % 13) as f64 * 0.5 - 3.0)
                    .collect(),
            );
            time_kernel(
                || {
                    spmm(a, &operand, schedule).map(|y| {
                        std::hint::black_box(&y);
                    })
                },
                protocol,
                &costs,
                config,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::vector_access_model;
    use crate::matrix::gen_stencil5;
    use std::cell::Cell;

    /// Scripted clock: advances only when the code under test tells it to.
    struct FakeClock {
        nanos: Cell<u64>,
    }

    impl FakeClock {
        fn new() -> Self {
            FakeClock { nanos: Cell::new(0) }
        }

        fn advance_ms(&self, ms: u64) {
            self.nanos.set(self.nanos.get() + ms * 1_000_000);
        }
    }

    impl Clock for FakeClock {
        fn now(&self) -> Duration {
            Duration::from_nanos(self.nanos.get())
        }
    }

    fn dummy_config() -> RunConfig {
        RunConfig::new("spmv_parallel", "test", &Schedule::default(), None)
    }

    fn dummy_costs() -> RunCosts {
        RunCosts {
            flops: 2_000_000,
            naive_bytes: 1_000_000,
            application_bytes: 3_000_000,
            estimated_actual_bytes: 3_000_000,
        }
    }

    #[test]
    fn protocol_validates_and_defaults() {
        assert!(BenchProtocol::new(10, 10).is_err());
        assert!(BenchProtocol::new(5, 6).is_err());
        let p = BenchProtocol::default();
        assert_eq!(p.total_runs(), 70);
        assert_eq!(p.discard_runs(), 10);
        assert_eq!(p.kept_runs(), 60);
        assert!(p.flush_between());
        assert!(p.flush_buffer_bytes() >= 16 << 20);
    }

    #[test]
    fn fake_clock_protocol_keeps_exactly_the_last_sixty() {
        let clock = FakeClock::new();
        let protocol = BenchProtocol::new(70, 10).unwrap(); // flush on
        let mut runs = 0u32;
        let mut flushes = 0u32;
        let result = time_kernel_with(
            || {
                runs += 1;
                clock.advance_ms(1);
                Ok::<(), &str>(())
            },
            &protocol,
            &dummy_costs(),
            dummy_config(),
            &clock,
            || {
                flushes += 1;
                clock.advance_ms(7); // flush is 7x the kernel; must not leak in
            },
        )
        .unwrap();
        assert_eq!(runs, 70);
        assert_eq!(flushes, 70);
        assert_eq!(result.samples_kept, 60);
        assert_eq!(result.mean_seconds, 1e-3);
        assert_eq!(result.min_seconds, 1e-3);
        assert_eq!(result.max_seconds, 1e-3);
        assert_eq!(result.stddev_seconds, 0.0);
        // rates recompute from the mean through the analysis formulas
        assert_eq!(result.gflops, 2.0);
        assert_eq!(result.naive_gbps, 1.0);
        assert_eq!(result.application_gbps, 3.0);
    }

    #[test]
    fn warmup_runs_are_discarded_from_the_stats() {
        let clock = FakeClock::new();
        let protocol = BenchProtocol::new(5, 2).unwrap().with_flush(false);
        let mut run = 0u64;
        let result = time_kernel_with(
            || {
                run += 1;
                // first two runs are slow; kept runs are 1ms each
                clock.advance_ms(if run <= 2 { 50 } else { 1 });
                Ok::<(), &str>(())
            },
            &protocol,
            &dummy_costs(),
            dummy_config(),
            &clock,
            || {},
        )
        .unwrap();
        assert_eq!(result.samples_kept, 3);
        assert_eq!(result.mean_seconds, 1e-3);
        assert_eq!(result.stddev_seconds, 0.0);
    }

    #[test]
    fn single_sample_protocol() {
        let clock = FakeClock::new();
        let protocol = BenchProtocol::new(1, 0).unwrap().with_flush(false);
        let result = time_kernel_with(
            || {
                clock.advance_ms(2);
                Ok::<(), &str>(())
            },
            &protocol,
            &dummy_costs(),
            dummy_config(),
            &clock,
            || {},
        )
        .unwrap();
        assert_eq!(result.samples_kept, 1);
        assert_eq!(result.mean_seconds, 2e-3);
        assert_eq!(result.stddev_seconds, 0.0);
    }

    #[test]
    fn kernel_failure_reports_run_index() {
        let clock = FakeClock::new();
        let protocol = BenchProtocol::new(10, 2).unwrap().with_flush(false);
        let mut run = 0usize;
        let err = time_kernel_with(
            || {
                clock.advance_ms(1);
                run += 1;
                if run == 4 {
                    Err("boom")
                } else {
                    Ok(())
                }
            },
            &protocol,
            &dummy_costs(),
            dummy_config(),
            &clock,
            || {},
        )
        .unwrap_err();
        match err {
            BenchError::KernelFailed { run, msg } => {
                assert_eq!(run, 3); // zero-based index of the failing run
                assert_eq!(msg, "boom");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn real_clock_spmv_smoke() {
        let a = gen_stencil5(16).unwrap();
        let cache = vector_access_model(&a, &CacheModelConfig::default());
        let costs = RunCosts::spmv(&a, &cache);
        let protocol = BenchProtocol::new(5, 1)
            .unwrap()
            .with_flush_buffer_bytes(1 << 20);
        let x = vec![1.0; a.ncols()];
        let result = time_kernel(
            || {
                spmv_parallel(&a, &x, &Schedule::default()).map(|y| {
                    std::hint::black_box(&y);
                })
            },
            &protocol,
            &costs,
            RunConfig::new("spmv_parallel", "stencil:16", &Schedule::default(), None),
        )
        .unwrap();
        assert!(result.mean_seconds > 0.0);
        assert!(result.min_seconds <= result.mean_seconds);
        assert!(result.mean_seconds <= result.max_seconds);
        // rate ratios mirror byte ratios exactly
        let ratio = result.application_gbps / result.naive_gbps;
        let expect = costs.application_bytes as f64 / costs.naive_bytes as f64;
        assert!((ratio - expect).abs() < 1e-9);
    }

    #[test]
    fn spmm_k1_rates_match_spmv_under_fixed_timer() {
        // On a square matrix the k=1 SpMM cost model collapses to the SpMV
        // one, so identical timings must yield identical rates.
        let a = gen_stencil5(6).unwrap();
        let cache = vector_access_model(&a, &CacheModelConfig::default());
        let spmv_costs = RunCosts::spmv(&a, &cache);
        let spmm_costs = RunCosts::spmm(&a, 1, &cache);
        assert_eq!(spmv_costs, spmm_costs);

        let measure = |costs: &RunCosts| {
            let clock = FakeClock::new();
            time_kernel_with(
                || {
                    clock.advance_ms(3);
                    Ok::<(), &str>(())
                },
                &BenchProtocol::new(4, 1).unwrap().with_flush(false),
                costs,
                dummy_config(),
                &clock,
                || {},
            )
            .unwrap()
        };
        let spmv = measure(&spmv_costs);
        let spmm = measure(&spmm_costs);
        assert_eq!(spmv.gflops, spmm.gflops);
        assert_eq!(spmv.application_gbps, spmm.application_gbps);
        assert_eq!(spmv.estimated_gbps, spmm.estimated_gbps);
    }

    #[test]
    fn read_sum_checksums() {
        // 1 MB of 1u32 elements: 262,144 of them
        let r = microbench_read_sum(1, 1, ReadElement::Word32).unwrap();
        assert_eq!(r.checksum, 262_144);
        assert_eq!(r.bytes_processed, 1 << 20);
        assert!(r.gbps > 0.0);

        // byte path: 1,048,576 ones
        let r = microbench_read_sum(1, 1, ReadElement::Byte).unwrap();
        assert_eq!(r.checksum, 1 << 20);

        // wide path: 131,072 doubles of 1.0, summed exactly
        let r = microbench_read_sum(1, 1, ReadElement::Wide).unwrap();
        assert_eq!(r.checksum, 131_072);
    }

    #[test]
    fn read_sum_multiple_workers() {
        let r = microbench_read_sum(1, 3, ReadElement::Word32).unwrap();
        assert_eq!(r.checksum, 3 * 262_144);
        assert_eq!(r.bytes_processed, 3 << 20);
    }

    #[test]
    fn read_sum_rejects_zero_spec() {
        assert!(microbench_read_sum(0, 1, ReadElement::Byte).is_err());
        assert!(microbench_read_sum(1, 0, ReadElement::Byte).is_err());
    }

    #[test]
    fn write_fill_verifies() {
        let r = microbench_write_fill(2, 2).unwrap();
        assert_eq!(r.bytes_processed, 4 << 20);
        assert!(r.gbps > 0.0);
    }

    #[test]
    fn sweep_single_point() {
        let a = gen_stencil5(8).unwrap();
        let protocol = BenchProtocol::new(3, 1).unwrap().with_flush(false);
        let grid = SweepGrid {
            threads: vec![1],
            policies: vec![SchedulePolicy::Dynamic],
            chunks: vec![64],
        };
        let report = sweep(&a, "stencil:8", KernelFamily::Spmv, &grid, &protocol);
        assert_eq!(report.results.len(), 1);
        assert!(report.failures.is_empty());
        assert_eq!(report.best().unwrap().config.chunk, 64);
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let a = gen_stencil5(8).unwrap();
        let protocol = BenchProtocol::new(3, 1).unwrap().with_flush(false);
        let grid = SweepGrid {
            threads: vec![0, 1], // 0 workers is invalid and must be recorded
            policies: vec![SchedulePolicy::Dynamic],
            chunks: vec![32, 64],
        };
        let report = sweep(&a, "stencil:8", KernelFamily::Spmv, &grid, &protocol);
        assert_eq!(report.failures.len(), 2);
        assert_eq!(report.results.len(), 2);
    }

    #[test]
    fn sweep_sorts_by_gflops_descending() {
        let a = gen_stencil5(12).unwrap();
        let protocol = BenchProtocol::new(4, 1).unwrap().with_flush(false);
        let report = sweep(
            &a,
            "stencil:12",
            KernelFamily::Spmm { k: 8 },
            &SweepGrid::default(),
            &protocol,
        );
        assert_eq!(report.results.len(), 4);
        for pair in report.results.windows(2) {
            assert!(pair[0].gflops >= pair[1].gflops);
        }
        let top = report.best().unwrap().gflops;
        assert!(report.results.iter().all(|r| r.gflops <= top));
    }
}
