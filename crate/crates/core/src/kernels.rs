//! Multiplication kernels: serial and parallel SpMV over CSR, SpMM with
//! generic and wide-accumulation paths, and register-blocked (BCRS)
//! conversion plus its SpMV.
//!
//! Parallel kernels are deterministic by construction: every output row has
//! exactly one writer, and the per-row accumulation order never depends on
//! the schedule, so `spmv_parallel` is bitwise-identical to [`spmv_serial`]
//! for every thread count, chunk size, and claiming policy.

use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::matrix::{CsrMatrix, DenseMatrix};

#[derive(Error, Debug)]
pub enum KernelError {
    #[error("input vector has length {got} but the matrix has {want} columns")]
    DimensionMismatch { got: usize, want: usize },
    #[error("dense operand has {got} rows but the matrix has {want} columns")]
    OperandRowMismatch { got: usize, want: usize },
    #[error("unsupported block dimensions {a}x{b}: one side must be 8, the other in {{1, 2, 4, 8}}")]
    InvalidBlockDims { a: usize, b: usize },
    #[error("wide accumulation requires the operand width to be a multiple of 8, got {k}")]
    WideWidth { k: usize },
    #[error("schedule requires threads >= 1 and chunk >= 1")]
    InvalidSchedule,
    #[error("blocked form would store {elems} values, beyond 32-bit index storage")]
    BlockedTooLarge { elems: u128 },
}

/// How parallel kernels hand row chunks to workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulePolicy {
    /// Chunk c goes to worker c mod threads, decided up front.
    Static,
    /// Workers claim the next chunk from a shared counter as they finish.
    Dynamic,
}

impl std::fmt::Display for SchedulePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchedulePolicy::Static => "static",
            SchedulePolicy::Dynamic => "dynamic",
        })
    }
}

impl std::str::FromStr for SchedulePolicy {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, KernelError> {
        match s {
            "static" => Ok(SchedulePolicy::Static),
            "dynamic" => Ok(SchedulePolicy::Dynamic),
            _ => Err(KernelError::InvalidSchedule),
        }
    }
}

/// Worker count, chunk size (rows per claim), and claiming policy for the
/// parallel kernels. The output never depends on the schedule; only the
/// wall time does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    policy: SchedulePolicy,
    threads: usize,
    chunk: usize,
}

impl Schedule {
    pub fn new(policy: SchedulePolicy, threads: usize, chunk: usize) -> Result<Self, KernelError> {
        if threads == 0 || chunk == 0 {
            return Err(KernelError::InvalidSchedule);
        }
        Ok(Schedule {
            policy,
            threads,
            chunk,
        })
    }

    pub fn policy(&self) -> SchedulePolicy {
        self.policy
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn chunk(&self) -> usize {
        self.chunk
    }
}

impl Default for Schedule {
    /// One worker, dynamic claiming, 64-row chunks.
    fn default() -> Self {
        Schedule {
            policy: SchedulePolicy::Dynamic,
            threads: 1,
            chunk: 64,
        }
    }
}

/// Raw output pointer handed to workers. Safe to share because the chunk
/// partition gives every row exactly one writer.
struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    /// # Safety
    /// `idx` must be in bounds and written by exactly one worker.
    #[inline]
    unsafe fn write(&self, idx: usize, v: f64) {
        *self.0.add(idx) = v;
    }

    /// # Safety
    /// `idx..idx + src.len()` must be in bounds and written by exactly one
    /// worker.
    #[inline]
    unsafe fn copy_from(&self, idx: usize, src: &[f64]) {
        std::ptr::copy_nonoverlapping(src.as_ptr(), self.0.add(idx), src.len());
    }
}

/// Runs `work(lo, hi)` over half-open row ranges covering `0..total`, each
/// range claimed by exactly one worker.
fn for_each_chunk<F>(total: usize, s: &Schedule, work: &F)
where
    F: Fn(usize, usize) + Sync,
{
    let chunk = s.chunk;
    let nchunks = total.div_ceil(chunk);
    let span = |c: usize| (c * chunk, ((c + 1) * chunk).min(total));
    if s.threads == 1 || nchunks <= 1 {
        for c in 0..nchunks {
            let (lo, hi) = span(c);
            work(lo, hi);
        }
        return;
    }
    match s.policy {
        SchedulePolicy::Dynamic => {
            let next = AtomicUsize::new(0);
            std::thread::scope(|scope| {
                for _ in 0..s.threads {
                    scope.spawn(|| loop {
                        let c = next.fetch_add(1, Ordering::Relaxed);
                        if c >= nchunks {
                            break;
                        }
                        let (lo, hi) = span(c);
                        work(lo, hi);
                    });
                }
            });
        }
        SchedulePolicy::Static => {
            std::thread::scope(|scope| {
                for t in 0..s.threads {
                    scope.spawn(move || {
                        let mut c = t;
                        while c < nchunks {
                            let (lo, hi) = span(c);
                            work(lo, hi);
                            c += s.threads;
                        }
                    });
                }
            });
        }
    }
}

/// Single row dot product, accumulated left to right in storage order.
/// Serial and parallel SpMV both route through here, which is what makes
/// them bitwise-identical.
#[inline]
fn row_dot(cols: &[u32], vals: &[f64], x: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (&c, &v) in cols.iter().zip(vals) {
        sum += v * x[c as usize];
    }
    sum
}

fn check_vec_len(a: &CsrMatrix, x: &[f64]) -> Result<(), KernelError> {
    if x.len() != a.ncols() {
        return Err(KernelError::DimensionMismatch {
            got: x.len(),
            want: a.ncols(),
        });
    }
    Ok(())
}

/// y = A·x on one thread; 2·nnz flops.
pub fn spmv_serial(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>, KernelError> {
    check_vec_len(a, x)?;
    let mut y = vec![0.0; a.nrows()];
    for (i, out) in y.iter_mut().enumerate() {
        let (cols, vals) = a.row(i);
        *out = row_dot(cols, vals, x);
    }
    Ok(y)
}

/// y = A·x across a worker pool; bitwise-identical to [`spmv_serial`] for
/// every schedule.
pub fn spmv_parallel(a: &CsrMatrix, x: &[f64], s: &Schedule) -> Result<Vec<f64>, KernelError> {
    check_vec_len(a, x)?;
    let mut y = vec![0.0; a.nrows()];
    let out = SendPtr(y.as_mut_ptr());
    for_each_chunk(a.nrows(), s, &|lo, hi| {
        for i in lo..hi {
            let (cols, vals) = a.row(i);
            // SAFETY: row i belongs to exactly one chunk and each chunk is
            // claimed by exactly one worker, so this slot has a single writer.
            unsafe {
                out.write(i, row_dot(cols, vals, x));
            }
        }
    });
    Ok(y)
}

/// Y = A·X with X and Y dense row-major. Dispatches to the wide path when
/// the operand width is a positive multiple of 8, the generic path otherwise;
/// the two are bitwise-interchangeable.
pub fn spmm(a: &CsrMatrix, x: &DenseMatrix, s: &Schedule) -> Result<DenseMatrix, KernelError> {
    if x.cols() > 0 && x.cols().is_multiple_of(8) {
        spmm_wide(a, x, s)
    } else {
        spmm_generic(a, x, s)
    }
}

/// SpMM for any operand width k: a k-length accumulator per row, zeroed and
/// streamed through the row's nonzeros.
pub fn spmm_generic(
    a: &CsrMatrix,
    x: &DenseMatrix,
    s: &Schedule,
) -> Result<DenseMatrix, KernelError> {
    spmm_impl::<false>(a, x, s)
}

/// SpMM processing the accumulator in blocks of 8 adjacent columns, the
/// shape a vector unit consumes. Per-element accumulation order matches the
/// generic path exactly, so results are bitwise-identical; requires
/// k to be a multiple of 8.
pub fn spmm_wide(a: &CsrMatrix, x: &DenseMatrix, s: &Schedule) -> Result<DenseMatrix, KernelError> {
    if !x.cols().is_multiple_of(8) {
        return Err(KernelError::WideWidth { k: x.cols() });
    }
    spmm_impl::<true>(a, x, s)
}

fn spmm_impl<const WIDE: bool>(
    a: &CsrMatrix,
    x: &DenseMatrix,
    s: &Schedule,
) -> Result<DenseMatrix, KernelError> {
    if x.rows() != a.ncols() {
        return Err(KernelError::OperandRowMismatch {
            got: x.rows(),
            want: a.ncols(),
        });
    }
    let (m, k) = (a.nrows(), x.cols());
    let mut y = DenseMatrix::zeros(m, k);
    let out = SendPtr(y.data_mut().as_mut_ptr());
    for_each_chunk(m, s, &|lo, hi| {
        let mut acc = vec![0.0f64; k];
        for i in lo..hi {
            acc.fill(0.0);
            let (cols, vals) = a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let xr = x.row(c as usize);
                if WIDE {
                    for blk in 0..k / 8 {
                        let base = blk * 8;
                        for lane in 0..8 {
                            acc[base + lane] += v * xr[base + lane];
                        }
                    }
                } else {
                    for (aj, &xj) in acc.iter_mut().zip(xr) {
                        *aj += v * xj;
                    }
                }
            }
            // SAFETY: single writer per row, as in spmv_parallel.
            unsafe {
                out.copy_from(i * k, &acc);
            }
        }
    });
    Ok(y)
}

/// Validated register-block dimensions: one side is 8 (the pack width), the
/// other is 1, 2, 4, or 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    a: usize,
    b: usize,
}

impl BlockDims {
    /// The seven supported configurations.
    pub const ALL: [BlockDims; 7] = [
        BlockDims { a: 8, b: 8 },
        BlockDims { a: 8, b: 4 },
        BlockDims { a: 8, b: 2 },
        BlockDims { a: 8, b: 1 },
        BlockDims { a: 4, b: 8 },
        BlockDims { a: 2, b: 8 },
        BlockDims { a: 1, b: 8 },
    ];

    pub fn new(a: usize, b: usize) -> Result<Self, KernelError> {
        if Self::ALL.contains(&BlockDims { a, b }) {
            Ok(BlockDims { a, b })
        } else {
            Err(KernelError::InvalidBlockDims { a, b })
        }
    }

    /// Block rows.
    pub fn a(&self) -> usize {
        self.a
    }

    /// Block columns.
    pub fn b(&self) -> usize {
        self.b
    }

    /// The layout whose contiguous packs run along the size-8 side: blocks
    /// with 8 columns store row-major, blocks with 8 rows store
    /// column-major. 8x8 defaults to row-major.
    pub fn natural_layout(&self) -> BlockLayout {
        if self.a == 8 && self.b < 8 {
            BlockLayout::ColumnMajor
        } else {
            BlockLayout::RowMajor
        }
    }

    /// Storage cost of one block: 8 bytes per slot plus a 4-byte block-column id.
    pub fn per_block_bytes(&self) -> u64 {
        8 * (self.a * self.b) as u64 + 4
    }
}

impl std::str::FromStr for BlockDims {
    type Err = KernelError;

    /// Parses `"8x4"`-style dimension strings.
    fn from_str(s: &str) -> Result<Self, KernelError> {
        let bad = || KernelError::InvalidBlockDims { a: 0, b: 0 };
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        BlockDims::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )
    }
}

impl std::fmt::Display for BlockDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.a, self.b)
    }
}

/// How a block's `a x b` slots are linearized in `bval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLayout {
    RowMajor,
    ColumnMajor,
}

impl BlockLayout {
    #[inline]
    fn slot(&self, dims: BlockDims, r: usize, c: usize) -> usize {
        match self {
            BlockLayout::RowMajor => r * dims.b + c,
            BlockLayout::ColumnMajor => c * dims.a + r,
        }
    }
}

/// Block compressed row storage. The matrix is tiled into `a x b` blocks;
/// every block containing at least one source nonzero is stored dense,
/// zeros explicit, indexed CSR-style by block row and block column.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedMatrix {
    m: usize,
    n: usize,
    dims: BlockDims,
    layout: BlockLayout,
    brptrs: Vec<u32>,
    bcids: Vec<u32>,
    bval: Vec<f64>,
}

impl BlockedMatrix {
    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> BlockDims {
        self.dims
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn num_blocks(&self) -> usize {
        self.bcids.len()
    }

    pub fn block_rows(&self) -> usize {
        self.brptrs.len() - 1
    }

    pub fn bval(&self) -> &[f64] {
        &self.bval
    }
}

/// Tiles a CSR matrix into `dims` blocks. Every source nonzero lands at slot
/// `(i mod a, j mod b)` of block `(i div a, j div b)`; slots no nonzero
/// touches stay 0.0.
pub fn to_blocked(
    a: &CsrMatrix,
    dims: BlockDims,
    layout: BlockLayout,
) -> Result<BlockedMatrix, KernelError> {
    let block_rows = a.nrows().div_ceil(dims.a);
    // Pass 1: distinct block columns per block row, in ascending order.
    let mut brptrs = vec![0u32; block_rows + 1];
    let mut bcids: Vec<u32> = Vec::new();
    let mut seen: Vec<u32> = Vec::new();
    for br in 0..block_rows {
        seen.clear();
        for i in br * dims.a..(br * dims.a + dims.a).min(a.nrows()) {
            let (cols, _) = a.row(i);
            seen.extend(cols.iter().map(|&c| c / dims.b as u32));
        }
        seen.sort_unstable();
        seen.dedup();
        bcids.extend_from_slice(&seen);
        brptrs[br + 1] = bcids.len() as u32;
    }

    let elems = bcids.len() as u128 * (dims.a * dims.b) as u128;
    if elems > u32::MAX as u128 {
        return Err(KernelError::BlockedTooLarge { elems });
    }
    // Pass 2: place values. CSR guarantees unique coordinates, so each slot
    // is written at most once.
    let mut bval = vec![0.0f64; elems as usize];
    let bsize = dims.a * dims.b;
    for i in 0..a.nrows() {
        let br = i / dims.a;
        let row_blocks = &bcids[brptrs[br] as usize..brptrs[br + 1] as usize];
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            let bc = c / dims.b as u32;
            let k = brptrs[br] as usize + row_blocks.binary_search(&bc).unwrap();
            bval[k * bsize + layout.slot(dims, i % dims.a, c as usize % dims.b)] = v;
        }
    }
    Ok(BlockedMatrix {
        m: a.nrows(),
        n: a.ncols(),
        dims,
        layout,
        brptrs,
        bcids,
        bval,
    })
}

/// y = A·x over the blocked form. Mathematically equal to [`spmv_serial`] on
/// the source matrix; the block-wise summation order differs, so compare
/// within relative tolerance (1e-10 covers well-scaled inputs).
pub fn spmv_blocked(bm: &BlockedMatrix, x: &[f64], s: &Schedule) -> Result<Vec<f64>, KernelError> {
    if x.len() != bm.n {
        return Err(KernelError::DimensionMismatch {
            got: x.len(),
            want: bm.n,
        });
    }
    let dims = bm.dims;
    let bsize = dims.a * dims.b;
    let mut y = vec![0.0; bm.m];
    let out = SendPtr(y.as_mut_ptr());
    // Chunks are counted in block rows so ownership stays row-aligned.
    for_each_chunk(bm.block_rows(), s, &|lo, hi| {
        let mut acc = vec![0.0f64; dims.a];
        for br in lo..hi {
            acc.fill(0.0);
            let height = dims.a.min(bm.m - br * dims.a);
            for k in bm.brptrs[br] as usize..bm.brptrs[br + 1] as usize {
                let base = k * bsize;
                let xoff = bm.bcids[k] as usize * dims.b;
                // Right-edge blocks may overhang the matrix; overhanging
                // slots hold zeros and must not read x out of bounds.
                let width = dims.b.min(bm.n - xoff);
                for (r, a_r) in acc.iter_mut().enumerate().take(height) {
                    for c in 0..width {
                        *a_r += bm.bval[base + bm.layout.slot(dims, r, c)] * x[xoff + c];
                    }
                }
            }
            for (r, &a_r) in acc.iter().enumerate().take(height) {
                // SAFETY: block row br has a single writer, rows disjoint.
                unsafe {
                    out.write(br * dims.a + r, a_r);
                }
            }
        }
    });
    Ok(y)
}

/// Total storage of the blocked form:
/// `#blocks x (8ab + 4) + 4 x (#block-rows + 1)`.
///
/// One full 8x8 block costs 516 bytes against 768 for the same 64 nonzeros
/// in CSR.
pub fn blocked_footprint_bytes(bm: &BlockedMatrix) -> u64 {
    bm.num_blocks() as u64 * bm.dims.per_block_bytes() + 4 * (bm.block_rows() as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{gen_stencil5, CooEntries};
    use rand::prelude::*;

    fn sched(policy: SchedulePolicy, threads: usize, chunk: usize) -> Schedule {
        Schedule::new(policy, threads, chunk).unwrap()
    }

    fn random_csr(rng: &mut impl Rng, m: usize, n: usize, nnz: usize) -> CsrMatrix {
        let mut c = CooEntries::new(m, n);
        for _ in 0..nnz {
            c.push(
                rng.gen_range(0..m) as u32,
                rng.gen_range(0..n) as u32,
                rng.gen_range(-1.0..1.0),
            );
        }
        CsrMatrix::from_coo(&c).unwrap()
    }

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_dense(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_vec(rows, cols, random_vec(rng, rows * cols))
    }

    /// Dense oracle: y[i] = sum over all columns, including zeros.
    fn dense_spmv(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
        let d = a.to_dense().unwrap();
        (0..a.nrows())
            .map(|i| (0..a.ncols()).map(|j| d.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Dense GEMM oracle for SpMM.
    fn dense_gemm(a: &CsrMatrix, x: &DenseMatrix) -> DenseMatrix {
        let d = a.to_dense().unwrap();
        let mut y = DenseMatrix::zeros(a.nrows(), x.cols());
        for i in 0..a.nrows() {
            for j in 0..x.cols() {
                let mut sum = 0.0;
                for c in 0..a.ncols() {
                    sum += d.get(i, c) * x.get(c, j);
                }
                y.set(i, j, sum);
            }
        }
        y
    }

    /// Expands a blocked matrix back to dense, zeros included.
    fn blocked_to_dense(bm: &BlockedMatrix) -> DenseMatrix {
        let dims = bm.dims();
        let bsize = dims.a() * dims.b();
        let mut d = DenseMatrix::zeros(bm.nrows(), bm.ncols());
        for br in 0..bm.block_rows() {
            for k in bm.brptrs[br] as usize..bm.brptrs[br + 1] as usize {
                let bc = bm.bcids[k] as usize;
                for r in 0..dims.a() {
                    for c in 0..dims.b() {
                        let (i, j) = (br * dims.a() + r, bc * dims.b() + c);
                        if i < bm.nrows() && j < bm.ncols() {
                            let v = bm.bval[k * bsize + bm.layout().slot(dims, r, c)];
                            if v != 0.0 {
                                d.set(i, j, v);
                            }
                        }
                    }
                }
            }
        }
        d
    }

    fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&u, &v)| {
                let scale = u.abs().max(v.abs()).max(1e-300);
                (u - v).abs() / scale
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn schedule_validates() {
        assert!(Schedule::new(SchedulePolicy::Dynamic, 0, 64).is_err());
        assert!(Schedule::new(SchedulePolicy::Static, 1, 0).is_err());
        assert_eq!(Schedule::default().chunk(), 64);
    }

    #[test]
    fn spmv_identity() {
        let y = spmv_serial(&CsrMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn spmv_two_by_two() {
        let a = CsrMatrix::from_coo(&CooEntries {
            m: 2,
            n: 2,
            entries: vec![(0, 0, 2.0), (1, 0, 1.0), (1, 1, 3.0)],
        })
        .unwrap();
        assert_eq!(spmv_serial(&a, &[1.0, 2.0]).unwrap(), vec![2.0, 7.0]);
    }

    #[test]
    fn spmv_stencil_ones_gives_degrees() {
        let a = gen_stencil5(3).unwrap();
        let y = spmv_serial(&a, &[1.0; 9]).unwrap();
        let degrees: Vec<f64> = (0..9)
            .map(|i| (a.rptrs()[i + 1] - a.rptrs()[i]) as f64)
            .collect();
        assert_eq!(y, degrees);
        assert_eq!(y[4], 5.0); // center cell
        assert_eq!(y[0], 3.0); // corner
    }

    #[test]
    fn spmv_rejects_wrong_length() {
        let a = CsrMatrix::identity(3);
        assert!(matches!(
            spmv_serial(&a, &[1.0]),
            Err(KernelError::DimensionMismatch { got: 1, want: 3 })
        ));
        assert!(spmv_parallel(&a, &[1.0], &Schedule::default()).is_err());
    }

    #[test]
    fn spmv_serial_matches_dense_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = rng.gen_range(1..40);
            let n = rng.gen_range(1..40);
            let nnz = rng.gen_range(0..4 * m.max(n));
            let a = random_csr(&mut rng, m, n, nnz);
            let x = random_vec(&mut rng, n);
            let got = spmv_serial(&a, &x).unwrap();
            let want = dense_spmv(&a, &x);
            assert!(max_rel_diff(&got, &want) <= 1e-12);
        }
    }

    #[test]
    fn spmv_parallel_bitwise_equals_serial() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = random_csr(&mut rng, 1000, 1000, 6000);
        let x = random_vec(&mut rng, 1000);
        let want = spmv_serial(&a, &x).unwrap();
        for policy in [SchedulePolicy::Static, SchedulePolicy::Dynamic] {
            for threads in [1, 2, 4, 8] {
                for chunk in [1, 32, 64] {
                    let got = spmv_parallel(&a, &x, &sched(policy, threads, chunk)).unwrap();
                    assert_eq!(got, want, "{policy:?} t={threads} c={chunk}");
                }
            }
        }
    }

    #[test]
    fn spmv_parallel_stencil64() {
        let a = gen_stencil5(64).unwrap();
        let x: Vec<f64> = (0..a.ncols()).map(|i| (i as f64).sin()).collect();
        let want = spmv_serial(&a, &x).unwrap();
        let got = spmv_parallel(&a, &x, &sched(SchedulePolicy::Dynamic, 4, 64)).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn spmm_k1_equals_spmv_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = random_csr(&mut rng, 60, 45, 300);
        let x = random_vec(&mut rng, 45);
        let xm = DenseMatrix::from_vec(45, 1, x.clone());
        let y = spmm(&a, &xm, &Schedule::default()).unwrap();
        assert_eq!(y.data(), &spmv_serial(&a, &x).unwrap()[..]);
    }

    #[test]
    fn spmm_by_identity_reproduces_matrix() {
        let a = CsrMatrix::from_coo(&CooEntries {
            m: 2,
            n: 2,
            entries: vec![(0, 0, 2.0), (1, 0, 1.0), (1, 1, 3.0)],
        })
        .unwrap();
        let eye = DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let y = spmm(&a, &eye, &Schedule::default()).unwrap();
        assert_eq!(y.data(), &[2.0, 0.0, 1.0, 3.0]);
    }

    #[test]
    fn spmm_matches_gemm_oracle_k16() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = random_csr(&mut rng, 64, 64, 512);
        let x = random_dense(&mut rng, 64, 16);
        let got = spmm(&a, &x, &sched(SchedulePolicy::Dynamic, 4, 8)).unwrap();
        let want = dense_gemm(&a, &x);
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn spmm_generic_equals_wide_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for k in [8, 16, 24] {
            let a = random_csr(&mut rng, 50, 70, 400);
            let x = random_dense(&mut rng, 70, k);
            let s = Schedule::default();
            let generic = spmm_generic(&a, &x, &s).unwrap();
            let wide = spmm_wide(&a, &x, &s).unwrap();
            assert_eq!(generic.data(), wide.data(), "k={k}");
        }
    }

    #[test]
    fn spmm_wide_rejects_odd_width() {
        let a = CsrMatrix::identity(4);
        let x = DenseMatrix::zeros(4, 5);
        assert!(matches!(
            spmm_wide(&a, &x, &Schedule::default()),
            Err(KernelError::WideWidth { k: 5 })
        ));
        // dispatcher falls back to the generic path instead
        assert!(spmm(&a, &x, &Schedule::default()).is_ok());
    }

    #[test]
    fn spmm_rejects_row_mismatch() {
        let a = CsrMatrix::identity(4);
        let x = DenseMatrix::zeros(3, 2);
        assert!(matches!(
            spmm(&a, &x, &Schedule::default()),
            Err(KernelError::OperandRowMismatch { got: 3, want: 4 })
        ));
    }

    #[test]
    fn block_dims_validate() {
        for (a, b) in [(8, 8), (8, 4), (8, 2), (8, 1), (4, 8), (2, 8), (1, 8)] {
            assert!(BlockDims::new(a, b).is_ok());
        }
        for (a, b) in [(4, 4), (8, 3), (16, 8), (8, 0), (0, 8), (1, 1)] {
            assert!(BlockDims::new(a, b).is_err());
        }
        assert_eq!("8x4".parse::<BlockDims>().unwrap(), BlockDims::new(8, 4).unwrap());
        assert!("9x9".parse::<BlockDims>().is_err());
        assert!("8".parse::<BlockDims>().is_err());
    }

    #[test]
    fn natural_layout_follows_the_eight_side() {
        assert_eq!(
            BlockDims::new(8, 1).unwrap().natural_layout(),
            BlockLayout::ColumnMajor
        );
        assert_eq!(
            BlockDims::new(1, 8).unwrap().natural_layout(),
            BlockLayout::RowMajor
        );
        assert_eq!(
            BlockDims::new(8, 8).unwrap().natural_layout(),
            BlockLayout::RowMajor
        );
    }

    #[test]
    fn to_blocked_dense_8x8_single_block() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut c = CooEntries::new(8, 8);
        for i in 0..8u32 {
            for j in 0..8u32 {
                c.push(i, j, rng.gen_range(1.0..2.0));
            }
        }
        let a = CsrMatrix::from_coo(&c).unwrap();
        let dims = BlockDims::new(8, 8).unwrap();
        let bm = to_blocked(&a, dims, dims.natural_layout()).unwrap();
        assert_eq!(bm.num_blocks(), 1);
        assert_eq!(bm.bval().len(), 64);
        assert_eq!(blocked_to_dense(&bm), a.to_dense().unwrap());
    }

    #[test]
    fn to_blocked_diagonal_8x1() {
        let a = CsrMatrix::identity(16);
        let dims = BlockDims::new(8, 1).unwrap();
        let bm = to_blocked(&a, dims, dims.natural_layout()).unwrap();
        assert_eq!(bm.num_blocks(), 16);
        assert_eq!(bm.bval().len(), 16 * 8);
        assert_eq!(bm.bval().iter().filter(|&&v| v != 0.0).count(), 16);
        assert_eq!(blocked_to_dense(&bm), a.to_dense().unwrap());
    }

    #[test]
    fn to_blocked_places_block_column() {
        let a = CsrMatrix::from_coo(&CooEntries {
            m: 8,
            n: 16,
            entries: vec![(0, 9, 5.0)],
        })
        .unwrap();
        let dims = BlockDims::new(8, 8).unwrap();
        let bm = to_blocked(&a, dims, BlockLayout::RowMajor).unwrap();
        assert_eq!(bm.num_blocks(), 1);
        assert_eq!(bm.bcids, vec![1]);
        // slot (0, 9 mod 8 = 1) in row-major layout
        assert_eq!(bm.bval()[1], 5.0);
    }

    #[test]
    fn blocked_roundtrip_all_configs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for dims in BlockDims::ALL {
            for layout in [BlockLayout::RowMajor, BlockLayout::ColumnMajor] {
                // deliberately ragged dims
                let a = random_csr(&mut rng, 13, 21, 60);
                let bm = to_blocked(&a, dims, layout).unwrap();
                assert_eq!(
                    blocked_to_dense(&bm),
                    a.to_dense().unwrap(),
                    "{dims} {layout:?}"
                );
            }
        }
    }

    #[test]
    fn spmv_blocked_identity_exact() {
        let a = CsrMatrix::identity(8);
        let dims = BlockDims::new(8, 1).unwrap();
        let bm = to_blocked(&a, dims, dims.natural_layout()).unwrap();
        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        let y = spmv_blocked(&bm, &x, &Schedule::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn spmv_blocked_matches_csr_within_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for dims in BlockDims::ALL {
            let a = random_csr(&mut rng, 37, 29, 300);
            let x = random_vec(&mut rng, 29);
            let want = spmv_serial(&a, &x).unwrap();
            let bm = to_blocked(&a, dims, dims.natural_layout()).unwrap();
            for threads in [1, 3] {
                let got =
                    spmv_blocked(&bm, &x, &sched(SchedulePolicy::Dynamic, threads, 2)).unwrap();
                assert!(
                    max_rel_diff(&got, &want) <= 1e-10,
                    "{dims} threads={threads}"
                );
            }
        }
    }

    #[test]
    fn spmv_blocked_stencil16() {
        let a = gen_stencil5(16).unwrap();
        let x: Vec<f64> = (0..256).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let want = spmv_serial(&a, &x).unwrap();
        let dims = BlockDims::new(8, 1).unwrap();
        let bm = to_blocked(&a, dims, dims.natural_layout()).unwrap();
        let got = spmv_blocked(&bm, &x, &Schedule::default()).unwrap();
        assert!(max_rel_diff(&got, &want) <= 1e-10);
    }

    #[test]
    fn footprint_headline_numbers() {
        // One full 8x8 block: 8*64 + 4 = 516 bytes/block vs 64 nonzeros in
        // CSR at 12 bytes each = 768.
        let dims = BlockDims::new(8, 8).unwrap();
        assert_eq!(dims.per_block_bytes(), 516);
        assert_eq!(64 * 12, 768);
        assert_eq!(BlockDims::new(8, 1).unwrap().per_block_bytes(), 68);

        let mut c = CooEntries::new(8, 8);
        for i in 0..8u32 {
            for j in 0..8u32 {
                c.push(i, j, 1.0);
            }
        }
        let a = CsrMatrix::from_coo(&c).unwrap();
        let bm = to_blocked(&a, dims, BlockLayout::RowMajor).unwrap();
        // one block plus two block-row pointers
        assert_eq!(blocked_footprint_bytes(&bm), 516 + 4 * 2);
    }

    #[test]
    fn footprint_diag_16() {
        let a = CsrMatrix::identity(16);
        let dims = BlockDims::new(8, 1).unwrap();
        let bm = to_blocked(&a, dims, dims.natural_layout()).unwrap();
        // 16 blocks of 68 bytes, 2 block rows -> 3 pointers
        assert_eq!(blocked_footprint_bytes(&bm), 16 * 68 + 4 * 3);
    }

    #[test]
    fn flops_are_two_tau() {
        // Flop accounting is 2 nnz regardless of path; spot-check the
        // counts the reporting layer uses.
        let a = gen_stencil5(4).unwrap();
        assert_eq!(2 * a.nnz(), 2 * (5 * 16 - 16));
    }
}
