//! Sparse and dense matrix representations, construction, statistics, and
//! permutation.
//!
//! The central type is [`CsrMatrix`]: compressed row storage with 32-bit
//! indices and 64-bit values. Dimensions are validated on construction and
//! every instance is immutable afterwards, so matrices can be shared freely
//! across threads.

use serde::Serialize;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum MatrixError {
    #[error("entry ({row}, {col}) is outside the {m}x{n} matrix")]
    IndexOutOfRange {
        row: u32,
        col: u32,
        m: usize,
        n: usize,
    },
    #[error("invalid row pointers: {0}")]
    InvalidRowPtrs(String),
    #[error("row {row}: column ids must be strictly increasing and < {n}")]
    InvalidColumns { row: usize, n: usize },
    #[error("array length mismatch: {cids} column ids vs {vals} values")]
    LengthMismatch { cids: usize, vals: usize },
    #[error("{rows}x{cols} dense matrix is too large to materialize")]
    DenseTooLarge { rows: usize, cols: usize },
    #[error("stencil side {side} overflows 32-bit index storage")]
    StencilTooLarge { side: usize },
    #[error("stencil side must be at least 1")]
    StencilEmpty,
    #[error("operation requires a square matrix, got {m}x{n}")]
    NotSquare { m: usize, n: usize },
    #[error("permutation has size {perm} but the matrix has {m} rows")]
    PermutationSizeMismatch { perm: usize, m: usize },
    #[error("permutation is not a bijection on [0, {size})")]
    NotBijective { size: usize },
}

/// Unnormalized coordinate-format entries, the ingestion intermediate.
///
/// Entries may appear in any order and may contain duplicate (row, col)
/// pairs; duplicates are summed when converting to CSR. Indices are not
/// validated until conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct CooEntries {
    pub m: usize,
    pub n: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl CooEntries {
    pub fn new(m: usize, n: usize) -> Self {
        CooEntries {
            m,
            n,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: u32, col: u32, value: f64) {
        self.entries.push((row, col, value));
    }
}

/// Compressed row storage for an `m x n` sparse matrix.
///
/// Three arrays: `rptrs` (length m+1) gives the extent of each row inside
/// `cids` and `val` (length nnz each). Column ids within a row are strictly
/// increasing. Values are stored in double precision and indices as 32-bit
/// integers, so nnz is limited to `u32::MAX`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    m: usize,
    n: usize,
    rptrs: Vec<u32>,
    cids: Vec<u32>,
    val: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays, checking every invariant.
    pub fn from_raw(
        m: usize,
        n: usize,
        rptrs: Vec<u32>,
        cids: Vec<u32>,
        val: Vec<f64>,
    ) -> Result<Self, MatrixError> {
        if rptrs.len() != m + 1 {
            return Err(MatrixError::InvalidRowPtrs(format!(
                "length {} for {} rows (expected {})",
                rptrs.len(),
                m,
                m + 1
            )));
        }
        if rptrs[0] != 0 {
            return Err(MatrixError::InvalidRowPtrs("rptrs[0] must be 0".into()));
        }
        if cids.len() != val.len() {
            return Err(MatrixError::LengthMismatch {
                cids: cids.len(),
                vals: val.len(),
            });
        }
        if rptrs[m] as usize != cids.len() {
            return Err(MatrixError::InvalidRowPtrs(format!(
                "rptrs[{}] = {} but {} nonzeros are stored",
                m, rptrs[m], cids.len()
            )));
        }
        for i in 0..m {
            if rptrs[i] > rptrs[i + 1] {
                return Err(MatrixError::InvalidRowPtrs(format!(
                    "decreasing at row {i}"
                )));
            }
            let row = &cids[rptrs[i] as usize..rptrs[i + 1] as usize];
            let increasing = row.windows(2).all(|w| w[0] < w[1]);
            if !increasing || row.iter().any(|&c| c as usize >= n) {
                return Err(MatrixError::InvalidColumns { row: i, n });
            }
        }
        Ok(CsrMatrix {
            m,
            n,
            rptrs,
            cids,
            val,
        })
    }

    /// Normalizes coordinate entries into CSR: validates index ranges, sorts
    /// by (row, col), and sums duplicate coordinates.
    pub fn from_coo(coo: &CooEntries) -> Result<Self, MatrixError> {
        for &(r, c, _) in &coo.entries {
            if r as usize >= coo.m || c as usize >= coo.n {
                return Err(MatrixError::IndexOutOfRange {
                    row: r,
                    col: c,
                    m: coo.m,
                    n: coo.n,
                });
            }
        }
        let mut sorted = coo.entries.clone();
        // Stable sort keeps duplicates in input order so they sum left to right.
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut rptrs = vec![0u32; coo.m + 1];
        let mut cids = Vec::with_capacity(sorted.len());
        let mut val: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(u32, u32)> = None;
        for &(r, c, v) in &sorted {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                cids.push(c);
                val.push(v);
                rptrs[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..coo.m {
            rptrs[i + 1] += rptrs[i];
        }
        Ok(CsrMatrix {
            m: coo.m,
            n: coo.n,
            rptrs,
            cids,
            val,
        })
    }

    /// The n x n identity.
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            m: n,
            n,
            rptrs: (0..=n as u32).collect(),
            cids: (0..n as u32).collect(),
            val: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    pub fn is_square(&self) -> bool {
        self.m == self.n
    }

    /// Number of stored nonzeros (tau).
    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn rptrs(&self) -> &[u32] {
        &self.rptrs
    }

    pub fn cids(&self) -> &[u32] {
        &self.cids
    }

    pub fn values(&self) -> &[f64] {
        &self.val
    }

    /// Column ids and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.rptrs[i] as usize;
        let hi = self.rptrs[i + 1] as usize;
        (&self.cids[lo..hi], &self.val[lo..hi])
    }

    /// Materializes the dense equivalent. Intended for small matrices and
    /// test oracles; refuses sizes that cannot reasonably be allocated.
    pub fn to_dense(&self) -> Result<DenseMatrix, MatrixError> {
        const MAX_DENSE_ELEMS: usize = 1 << 28;
        let elems = self
            .m
            .checked_mul(self.n)
            .filter(|&e| e <= MAX_DENSE_ELEMS)
            .ok_or(MatrixError::DenseTooLarge {
                rows: self.m,
                cols: self.n,
            })?;
        let mut data = vec![0.0; elems];
        for i in 0..self.m {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                data[i * self.n + c as usize] = v;
            }
        }
        Ok(DenseMatrix {
            rows: self.m,
            cols: self.n,
            data,
        })
    }

    /// Applies the same permutation to rows and columns:
    /// `B[p(i)][p(j)] = A[i][j]`.
    pub fn permute_symmetric(&self, p: &Permutation) -> Result<CsrMatrix, MatrixError> {
        if self.m != self.n {
            return Err(MatrixError::NotSquare {
                m: self.m,
                n: self.n,
            });
        }
        if p.size() != self.m {
            return Err(MatrixError::PermutationSizeMismatch {
                perm: p.size(),
                m: self.m,
            });
        }
        let perm = p.as_slice();
        let mut rptrs = vec![0u32; self.m + 1];
        for i in 0..self.m {
            let len = self.rptrs[i + 1] - self.rptrs[i];
            rptrs[perm[i] as usize + 1] = len;
        }
        for i in 0..self.m {
            rptrs[i + 1] += rptrs[i];
        }
        let nnz = self.nnz();
        let mut cids = vec![0u32; nnz];
        let mut val = vec![0.0; nnz];
        let mut scratch: Vec<(u32, f64)> = Vec::new();
        for i in 0..self.m {
            let (cols, vals) = self.row(i);
            scratch.clear();
            scratch.extend(cols.iter().zip(vals).map(|(&c, &v)| (perm[c as usize], v)));
            scratch.sort_unstable_by_key(|&(c, _)| c);
            let lo = rptrs[perm[i] as usize] as usize;
            for (k, &(c, v)) in scratch.iter().enumerate() {
                cids[lo + k] = c;
                val[lo + k] = v;
            }
        }
        Ok(CsrMatrix {
            m: self.m,
            n: self.n,
            rptrs,
            cids,
            val,
        })
    }

    /// Computes the size and sparsity statistics reported for each matrix.
    pub fn stats(&self) -> MatrixStats {
        let mut max_row = 0usize;
        for i in 0..self.m {
            max_row = max_row.max((self.rptrs[i + 1] - self.rptrs[i]) as usize);
        }
        let mut col_counts = vec![0u32; self.n];
        for &c in &self.cids {
            col_counts[c as usize] += 1;
        }
        let max_col = col_counts.iter().copied().max().unwrap_or(0) as usize;
        let cells = (self.m as f64) * (self.n as f64);
        MatrixStats {
            rows: self.m,
            cols: self.n,
            nonzeros: self.nnz(),
            density: if cells > 0.0 {
                self.nnz() as f64 / cells
            } else {
                0.0
            },
            avg_nnz_per_row: if self.m > 0 {
                self.nnz() as f64 / self.m as f64
            } else {
                0.0
            },
            max_nnz_per_row: max_row,
            max_nnz_per_col: max_col,
        }
    }
}

/// Row-major dense matrix; doubles as the SpMM operand/result and the dense
/// test oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Element (i, j) at flat offset `i * cols + j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Contiguous row slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// A bijection on `[0, size)`; `perm[i]` is the new index of old row/column `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Permutation {
    perm: Vec<u32>,
}

impl Permutation {
    pub fn new(perm: Vec<u32>) -> Result<Self, MatrixError> {
        let size = perm.len();
        let mut seen = vec![false; size];
        for &p in &perm {
            if p as usize >= size || seen[p as usize] {
                return Err(MatrixError::NotBijective { size });
            }
            seen[p as usize] = true;
        }
        Ok(Permutation { perm })
    }

    pub fn identity(size: usize) -> Self {
        Permutation {
            perm: (0..size as u32).collect(),
        }
    }

    /// Maps old index i to size-1-i.
    pub fn reversal(size: usize) -> Self {
        Permutation {
            perm: (0..size as u32).rev().collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.perm.len()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.perm
    }

    pub fn apply(&self, old: usize) -> usize {
        self.perm[old] as usize
    }
}

/// Size and sparsity statistics for one matrix.
///
/// `density` and `avg_nnz_per_row` are stored unrounded; the `display_*`
/// helpers produce the truncated forms used in reports (three significant
/// figures for density, two decimals for the average).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixStats {
    pub rows: usize,
    pub cols: usize,
    pub nonzeros: usize,
    pub density: f64,
    pub avg_nnz_per_row: f64,
    pub max_nnz_per_row: usize,
    pub max_nnz_per_col: usize,
}

impl MatrixStats {
    /// Density truncated to three significant figures in scientific notation,
    /// e.g. `1.19e-06`.
    pub fn display_density(&self) -> String {
        if self.density <= 0.0 {
            return "0.00e+00".to_string();
        }
        let mut exp = self.density.log10().floor() as i32;
        let mut mant = self.density / 10f64.powi(exp);
        if mant >= 10.0 {
            mant /= 10.0;
            exp += 1;
        }
        if mant < 1.0 {
            mant *= 10.0;
            exp -= 1;
        }
        let mant = (mant * 100.0).floor() / 100.0;
        format!(
            "{:.2}e{}{:02}",
            mant,
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }

    /// Average nonzeros per row truncated to two decimals, e.g. `4.99`.
    pub fn display_avg_nnz_per_row(&self) -> String {
        format!("{:.2}", (self.avg_nnz_per_row * 100.0).floor() / 100.0)
    }
}

/// Generates the 5-point stencil matrix on an `s x s` 2D mesh.
///
/// Cell (i, j) maps to row/column `i*s + j` and couples to itself and its
/// existing N/S/E/W neighbors with value 1.0, so interior rows hold 5
/// nonzeros, edges 4, and corners 3.
pub fn gen_stencil5(s: usize) -> Result<CsrMatrix, MatrixError> {
    if s == 0 {
        return Err(MatrixError::StencilEmpty);
    }
    let s64 = s as u64;
    // nnz = 5s^2 - 4s; both it and n = s^2 must fit 32-bit index storage.
    if 5 * s64 * s64 > u32::MAX as u64 {
        return Err(MatrixError::StencilTooLarge { side: s });
    }
    let n = s * s;
    let nnz = 5 * n - 4 * s;
    let mut rptrs = Vec::with_capacity(n + 1);
    let mut cids = Vec::with_capacity(nnz);
    let val = vec![1.0; nnz];
    rptrs.push(0u32);
    for i in 0..s {
        for j in 0..s {
            let p = (i * s + j) as u32;
            if i > 0 {
                cids.push(p - s as u32);
            }
            if j > 0 {
                cids.push(p - 1);
            }
            cids.push(p);
            if j + 1 < s {
                cids.push(p + 1);
            }
            if i + 1 < s {
                cids.push(p + s as u32);
            }
            rptrs.push(cids.len() as u32);
        }
    }
    debug_assert_eq!(cids.len(), nnz);
    Ok(CsrMatrix {
        m: n,
        n,
        rptrs,
        cids,
        val,
    })
}
