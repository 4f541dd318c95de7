//! The performance model: useful cacheline density (UCLD), naive /
//! application / estimated-actual byte counts, the per-core vector-access
//! cache model, and register-block density analysis.
//!
//! Everything here is a pure function of the matrix (plus a model
//! configuration); measured time only enters through
//! [`effective_bandwidth`] and [`gflops`].

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::kernels::BlockDims;
use crate::matrix::CsrMatrix;

/// Flops per byte of application traffic for SpMV: 2 flops per nonzero
/// against 12 bytes of matrix data, i.e. a machine moving 180 GB/s tops out
/// at 30 GFlop/s.
pub const SPMV_FLOP_PER_BYTE: f64 = 1.0 / 6.0;

/// Doubles per input-vector cacheline in the UCLD metric (64-byte lines).
const UCLD_LINE_DOUBLES: u64 = 8;

#[derive(Error, Debug)]
pub enum AnalysisError {
    #[error("UCLD is undefined for a matrix with no nonzeros")]
    EmptyMatrix,
    #[error("elapsed time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("invalid cache model config: {0}")]
    InvalidConfig(String),
}

/// One nonempty row's contribution to UCLD: `nnz` nonzeros spread over
/// `line_elems = 8 x #distinct cachelines` input-vector elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RowUcld {
    pub row: u32,
    pub nnz: u64,
    pub line_elems: u64,
}

impl RowUcld {
    pub fn value(&self) -> f64 {
        self.nnz as f64 / self.line_elems as f64
    }

    /// The row's density as a reduced fraction, exact where floats are not.
    pub fn as_ratio(&self) -> (u64, u64) {
        let g = gcd(self.nnz, self.line_elems);
        (self.nnz / g, self.line_elems / g)
    }
}

/// UCLD over a whole matrix: the mean of per-row densities, empty rows
/// excluded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UcldReport {
    pub mean: f64,
    pub rows: Vec<RowUcld>,
}

impl UcldReport {
    /// The mean as an exact reduced fraction, or `None` if the running
    /// numerator or denominator overflows u128.
    pub fn mean_ratio(&self) -> Option<(u128, u128)> {
        let (mut num, mut den) = (0u128, 1u128);
        for row in &self.rows {
            let (n, d) = row.as_ratio();
            let (n, d) = (n as u128, d as u128);
            let lcm = den.checked_mul(d / gcd128(den, d))?;
            num = num
                .checked_mul(lcm / den)?
                .checked_add(n.checked_mul(lcm / d)?)?;
            den = lcm;
        }
        den = den.checked_mul(self.rows.len() as u128)?;
        let g = gcd128(num, den);
        Some((num / g, den / g))
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn gcd128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Useful cacheline density: per nonempty row, nnz divided by the number of
/// input-vector elements in the aligned 64-byte cachelines that row touches;
/// averaged over nonempty rows. Always in [1/8, 1].
pub fn ucld(a: &CsrMatrix) -> Result<UcldReport, AnalysisError> {
    if a.nnz() == 0 {
        return Err(AnalysisError::EmptyMatrix);
    }
    let mut rows = Vec::new();
    let mut sum = 0.0;
    let mut lines: Vec<u32> = Vec::new();
    for i in 0..a.nrows() {
        let (cols, _) = a.row(i);
        if cols.is_empty() {
            continue;
        }
        lines.clear();
        lines.extend(cols.iter().map(|&c| c / UCLD_LINE_DOUBLES as u32));
        lines.dedup(); // cols sorted => lines sorted
        let r = RowUcld {
            row: i as u32,
            nnz: cols.len() as u64,
            line_elems: UCLD_LINE_DOUBLES * lines.len() as u64,
        };
        sum += r.value();
        rows.push(r);
    }
    Ok(UcldReport {
        mean: sum / rows.len() as f64,
        rows,
    })
}

/// Minimum traffic of one SpMV in bytes: `(naive, application)`.
///
/// Naive counts matrix data only: 12 bytes per nonzero (8 value + 4 column
/// id). Application adds each vector once and the row pointers:
/// `8m + 8n + 4(m+1) + 12t`, which for square matrices is the familiar
/// `4 + 20n + 12t`.
pub fn spmv_bytes(a: &CsrMatrix) -> (u64, u64) {
    let tau = a.nnz() as u64;
    let (m, n) = (a.nrows() as u64, a.ncols() as u64);
    let naive = 12 * tau;
    let application = 8 * m + 8 * n + 4 * (m + 1) + 12 * tau;
    (naive, application)
}

/// Minimum application traffic of one SpMM with a dense n x k operand:
/// `8mk + 8nk + 4(n+1) + 12t`.
pub fn spmm_bytes(a: &CsrMatrix, k: usize) -> u64 {
    let tau = a.nnz() as u64;
    let (m, n, k) = (a.nrows() as u64, a.ncols() as u64, k as u64);
    8 * m * k + 8 * n * k + 4 * (n + 1) + 12 * tau
}

/// Rate helpers: both error on nonpositive elapsed time.
pub fn effective_bandwidth(bytes: u64, elapsed_seconds: f64) -> Result<f64, AnalysisError> {
    if elapsed_seconds <= 0.0 {
        return Err(AnalysisError::NonPositiveTime(elapsed_seconds));
    }
    Ok(bytes as f64 / elapsed_seconds / 1e9)
}

pub fn gflops(flops: u64, elapsed_seconds: f64) -> Result<f64, AnalysisError> {
    if elapsed_seconds <= 0.0 {
        return Err(AnalysisError::NonPositiveTime(elapsed_seconds));
    }
    Ok(flops as f64 / elapsed_seconds / 1e9)
}

/// Core count, chunking, and cache geometry for [`vector_access_model`].
///
/// `cache_capacity_bytes = None` models an infinite cache. Defaults model
/// the reference machine: 61 cores, 64-row chunks, 64-byte lines, 512 kB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheModelConfig {
    cores: usize,
    chunk_rows: usize,
    cacheline_bytes: usize,
    cache_capacity_bytes: Option<u64>,
}

impl CacheModelConfig {
    pub fn new(
        cores: usize,
        chunk_rows: usize,
        cacheline_bytes: usize,
        cache_capacity_bytes: Option<u64>,
    ) -> Result<Self, AnalysisError> {
        if cores == 0 || chunk_rows == 0 {
            return Err(AnalysisError::InvalidConfig(
                "cores and chunk_rows must be >= 1".into(),
            ));
        }
        if cacheline_bytes < 8 || !cacheline_bytes.is_multiple_of(8) {
            return Err(AnalysisError::InvalidConfig(format!(
                "cacheline of {cacheline_bytes} bytes cannot hold whole doubles"
            )));
        }
        if let Some(cap) = cache_capacity_bytes {
            if cap == 0 || cap % cacheline_bytes as u64 != 0 {
                return Err(AnalysisError::InvalidConfig(format!(
                    "capacity {cap} is not a positive multiple of the {cacheline_bytes}-byte line"
                )));
            }
        }
        Ok(CacheModelConfig {
            cores,
            chunk_rows,
            cacheline_bytes,
            cache_capacity_bytes,
        })
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn chunk_rows(&self) -> usize {
        self.chunk_rows
    }

    pub fn cacheline_bytes(&self) -> usize {
        self.cacheline_bytes
    }

    pub fn cache_capacity_bytes(&self) -> Option<u64> {
        self.cache_capacity_bytes
    }

    /// Same geometry with an infinite cache.
    pub fn with_infinite_cache(mut self) -> Self {
        self.cache_capacity_bytes = None;
        self
    }

    /// Same geometry with a finite capacity (must respect the invariants).
    pub fn with_capacity(self, bytes: u64) -> Result<Self, AnalysisError> {
        CacheModelConfig::new(self.cores, self.chunk_rows, self.cacheline_bytes, Some(bytes))
    }
}

impl Default for CacheModelConfig {
    fn default() -> Self {
        CacheModelConfig {
            cores: 61,
            chunk_rows: 64,
            cacheline_bytes: 64,
            cache_capacity_bytes: Some(512 * 1024),
        }
    }
}

/// Input-vector traffic predicted by the cache model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheModelReport {
    /// Input-vector cacheline misses per core.
    pub per_core_misses: Vec<u64>,
    /// `cacheline_bytes x total misses`.
    pub total_vector_bytes: u64,
    /// `total_vector_bytes / 8n`: expected number of times the input vector
    /// crosses memory.
    pub vector_access_ratio: f64,
}

/// Exact fully-associative LRU over cacheline ids, O(1) per touch.
struct Lru {
    cap: usize,
    map: HashMap<u32, usize>,
    // nodes[i] = (prev, next, line); an intrusive list, most recent at head
    nodes: Vec<(usize, usize, u32)>,
    head: usize,
    tail: usize,
}

const NIL: usize = usize::MAX;

impl Lru {
    fn new(cap: usize) -> Self {
        Lru {
            cap,
            map: HashMap::new(),
            nodes: Vec::with_capacity(cap),
            head: NIL,
            tail: NIL,
        }
    }

    fn unlink(&mut self, i: usize) {
        let (prev, next, _) = self.nodes[i];
        match prev {
            NIL => self.head = next,
            p => self.nodes[p].1 = next,
        }
        match next {
            NIL => self.tail = prev,
            nx => self.nodes[nx].0 = prev,
        }
    }

    fn push_front(&mut self, i: usize) {
        self.nodes[i].0 = NIL;
        self.nodes[i].1 = self.head;
        if self.head != NIL {
            self.nodes[self.head].0 = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    /// Touches a line; returns true on a miss.
    fn touch(&mut self, line: u32) -> bool {
        if let Some(&i) = self.map.get(&line) {
            if self.head != i {
                self.unlink(i);
                self.push_front(i);
            }
            return false;
        }
        let i = if self.map.len() == self.cap {
            // evict least recently used
            let victim = self.tail;
            self.unlink(victim);
            self.map.remove(&self.nodes[victim].2);
            self.nodes[victim].2 = line;
            victim
        } else {
            self.nodes.push((NIL, NIL, line));
            self.nodes.len() - 1
        };
        self.map.insert(line, i);
        self.push_front(i);
        true
    }
}

/// Predicts per-core input-vector cacheline misses for a chunked row-parallel
/// SpMV.
///
/// Rows are grouped into consecutive chunks of `chunk_rows`; chunk `c` runs
/// on core `c mod cores`. Each core replays its rows in order, touching the
/// input-vector line `col / (line doubles)` for every nonzero. An infinite
/// cache misses once per distinct line; a finite cache is fully-associative
/// LRU over input-vector lines only (matrix and output stream past it).
pub fn vector_access_model(a: &CsrMatrix, cfg: &CacheModelConfig) -> CacheModelReport {
    let doubles_per_line = (cfg.cacheline_bytes / 8) as u32;
    let m = a.nrows();
    let nchunks = m.div_ceil(cfg.chunk_rows);
    let mut per_core_misses = vec![0u64; cfg.cores];

    for (core, misses) in per_core_misses.iter_mut().enumerate() {
        // The replay stream collapses immediate repeats of a line: a repeat
        // is always a hit that leaves the line at the LRU front, and never
        // changes a distinct-line count.
        let mut last: Option<u32> = None;
        let mut replay = |line: u32, sink: &mut dyn FnMut(u32)| {
            if last != Some(line) {
                sink(line);
                last = Some(line);
            }
        };
        match cfg.cache_capacity_bytes {
            None => {
                let mut seen: Vec<u32> = Vec::new();
                let mut sink = |line: u32| seen.push(line);
                for chunk in (core..nchunks).step_by(cfg.cores) {
                    for i in chunk * cfg.chunk_rows..((chunk + 1) * cfg.chunk_rows).min(m) {
                        for &c in a.row(i).0 {
                            replay(c / doubles_per_line, &mut sink);
                        }
                    }
                }
                seen.sort_unstable();
                seen.dedup();
                *misses = seen.len() as u64;
            }
            Some(cap) => {
                let mut lru = Lru::new((cap / cfg.cacheline_bytes as u64) as usize);
                let mut count = 0u64;
                let mut sink = |line: u32| {
                    if lru.touch(line) {
                        count += 1;
                    }
                };
                for chunk in (core..nchunks).step_by(cfg.cores) {
                    for i in chunk * cfg.chunk_rows..((chunk + 1) * cfg.chunk_rows).min(m) {
                        for &c in a.row(i).0 {
                            replay(c / doubles_per_line, &mut sink);
                        }
                    }
                }
                *misses = count;
            }
        }
    }

    let total_vector_bytes = cfg.cacheline_bytes as u64 * per_core_misses.iter().sum::<u64>();
    let vector_bytes = 8 * a.ncols() as u64;
    CacheModelReport {
        per_core_misses,
        total_vector_bytes,
        vector_access_ratio: if vector_bytes > 0 {
            total_vector_bytes as f64 / vector_bytes as f64
        } else {
            0.0
        },
    }
}

/// The three byte counts the reports are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BandwidthModel {
    /// Matrix data only: 12t.
    pub naive_bytes: u64,
    /// Every operand exactly once.
    pub application_bytes: u64,
    /// Application traffic with the input-vector term replaced by the cache
    /// model's prediction.
    pub estimated_actual_bytes: u64,
}

/// Assembles the SpMV model: the `8n` input-vector term of the application
/// count is swapped for the cache model's `total_vector_bytes`.
pub fn spmv_bandwidth_model(a: &CsrMatrix, cache: &CacheModelReport) -> BandwidthModel {
    let (naive_bytes, application_bytes) = spmv_bytes(a);
    BandwidthModel {
        naive_bytes,
        application_bytes,
        estimated_actual_bytes: application_bytes - 8 * a.ncols() as u64
            + cache.total_vector_bytes,
    }
}

/// Assembles the SpMM model. The cache model is single-vector; the dense
/// operand's rows are k doubles wide, so its predicted traffic scales by k
/// (the access pattern, hence the miss ratio, does not depend on k).
pub fn spmm_bandwidth_model(a: &CsrMatrix, k: usize, cache: &CacheModelReport) -> BandwidthModel {
    let application_bytes = spmm_bytes(a, k);
    BandwidthModel {
        naive_bytes: 12 * a.nnz() as u64,
        application_bytes,
        estimated_actual_bytes: application_bytes - 8 * a.ncols() as u64 * k as u64
            + cache.total_vector_bytes * k as u64,
    }
}

/// CSR storage footprint: 12 bytes per nonzero plus the row pointers.
pub fn csr_footprint_bytes(a: &CsrMatrix) -> u64 {
    12 * a.nnz() as u64 + 4 * (a.nrows() as u64 + 1)
}

/// Worthwhileness of one register-blocking configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockDensityReport {
    pub a: usize,
    pub b: usize,
    pub num_blocks: u64,
    /// Fraction of stored block slots holding a source nonzero.
    pub fill_ratio: f64,
    /// Per block: smallest nonzero count z with 12z > 8ab + 4, i.e. where
    /// CSR starts costing more than the dense block (44 for 8x8).
    pub break_even_nnz: u64,
    /// `break_even_nnz / (a*b)`; 68.75% for 8x8, commonly quoted as "70%".
    pub break_even_density: f64,
    pub blocked_bytes: u64,
    pub csr_bytes: u64,
    /// True when the whole blocked footprint undercuts the CSR footprint,
    /// row pointers included on both sides.
    pub saves_memory: bool,
}

/// Counts blocks without materializing them, then sizes the blocked format
/// against CSR for the given configuration.
pub fn block_density_analysis(a: &CsrMatrix, dims: BlockDims) -> BlockDensityReport {
    let block_rows = a.nrows().div_ceil(dims.a());
    let mut num_blocks = 0u64;
    let mut seen: Vec<u32> = Vec::new();
    for br in 0..block_rows {
        seen.clear();
        for i in br * dims.a()..(br * dims.a() + dims.a()).min(a.nrows()) {
            seen.extend(a.row(i).0.iter().map(|&c| c / dims.b() as u32));
        }
        seen.sort_unstable();
        seen.dedup();
        num_blocks += seen.len() as u64;
    }

    let slots = num_blocks * (dims.a() * dims.b()) as u64;
    let per_block = dims.per_block_bytes();
    let break_even_nnz = per_block / 12 + 1;
    let blocked_bytes = num_blocks * per_block + 4 * (block_rows as u64 + 1);
    let csr_bytes = csr_footprint_bytes(a);
    BlockDensityReport {
        a: dims.a(),
        b: dims.b(),
        num_blocks,
        fill_ratio: if slots > 0 {
            a.nnz() as f64 / slots as f64
        } else {
            0.0
        },
        break_even_nnz,
        break_even_density: break_even_nnz as f64 / (dims.a() * dims.b()) as f64,
        blocked_bytes,
        csr_bytes,
        saves_memory: blocked_bytes < csr_bytes,
    }
}
