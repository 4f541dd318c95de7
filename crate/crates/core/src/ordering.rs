//! Reverse Cuthill-McKee reordering and the matrix-bandwidth metric used to
//! evaluate it.
//!
//! RCM permutes a matrix so nonzeros cluster near the diagonal, which shrinks
//! the window of the input vector each row touches. [`matrix_bandwidth`]
//! measures the effect; [`rcm_order`] computes the permutation.

use crate::matrix::{CsrMatrix, MatrixError, Permutation};

/// The symmetrized pattern of a square matrix viewed as an undirected graph.
///
/// Edges come from the pattern of `A + A^T` with self-loops dropped, so
/// `degree(v)` counts distinct off-diagonal neighbors. Neighbor lists are
/// pre-sorted by `(degree, index)`, the visit order Cuthill-McKee uses.
pub struct AdjacencyView {
    offsets: Vec<u32>,
    nbrs: Vec<u32>,
}

impl AdjacencyView {
    pub fn build(a: &CsrMatrix) -> Result<Self, MatrixError> {
        if !a.is_square() {
            return Err(MatrixError::NotSquare {
                m: a.nrows(),
                n: a.ncols(),
            });
        }
        let n = a.nrows();
        // Collect both directions of every off-diagonal nonzero, then dedupe.
        let mut edges: Vec<(u32, u32)> = Vec::with_capacity(2 * a.nnz());
        for i in 0..n {
            let (cols, _) = a.row(i);
            for &c in cols {
                if c as usize != i {
                    edges.push((i as u32, c));
                    edges.push((c, i as u32));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut offsets = vec![0u32; n + 1];
        for &(u, _) in &edges {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut nbrs: Vec<u32> = edges.iter().map(|&(_, v)| v).collect();

        // Re-sort each list by (degree, index) so traversal order is fixed.
        let degree_of = |v: u32| offsets[v as usize + 1] - offsets[v as usize];
        for u in 0..n {
            let lo = offsets[u] as usize;
            let hi = offsets[u + 1] as usize;
            nbrs[lo..hi].sort_unstable_by_key(|&v| (degree_of(v), v));
        }
        Ok(AdjacencyView { offsets, nbrs })
    }

    pub fn order(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn degree(&self, v: usize) -> usize {
        (self.offsets[v + 1] - self.offsets[v]) as usize
    }

    /// Neighbors of `v`, sorted by (degree, index).
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.nbrs[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    /// BFS level of every vertex reachable from `start` (usize::MAX when
    /// unreachable), plus the eccentricity and the vertices of the last level.
    fn level_structure(&self, start: usize) -> (Vec<usize>, usize, Vec<u32>) {
        let mut level = vec![usize::MAX; self.order()];
        level[start] = 0;
        let mut frontier = vec![start as u32];
        let mut ecc = 0;
        let mut last = frontier.clone();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in self.neighbors(u as usize) {
                    if level[v as usize] == usize::MAX {
                        level[v as usize] = level[u as usize] + 1;
                        next.push(v);
                    }
                }
            }
            if !next.is_empty() {
                ecc += 1;
                last = next.clone();
            }
            frontier = next;
        }
        (level, ecc, last)
    }

    /// George-Liu heuristic: walk to a min-degree vertex of the farthest BFS
    /// level while the eccentricity keeps growing.
    fn pseudo_peripheral(&self, seed: usize) -> usize {
        let mut current = seed;
        let (_, mut ecc, mut last) = self.level_structure(current);
        loop {
            let candidate = last
                .iter()
                .copied()
                .min_by_key(|&v| (self.degree(v as usize), v))
                .expect("last BFS level is never empty");
            let (_, cand_ecc, cand_last) = self.level_structure(candidate as usize);
            if cand_ecc > ecc {
                current = candidate as usize;
                ecc = cand_ecc;
                last = cand_last;
            } else {
                return current;
            }
        }
    }
}

/// Maximum distance of any nonzero from the diagonal; 0 for diagonal or
/// empty matrices.
pub fn matrix_bandwidth(a: &CsrMatrix) -> Result<usize, MatrixError> {
    if !a.is_square() {
        return Err(MatrixError::NotSquare {
            m: a.nrows(),
            n: a.ncols(),
        });
    }
    let mut bw = 0i64;
    for i in 0..a.nrows() {
        let (cols, _) = a.row(i);
        for &c in cols {
            bw = bw.max((i as i64 - c as i64).abs());
        }
    }
    Ok(bw as usize)
}

/// Reverse Cuthill-McKee ordering of a square matrix.
///
/// Each connected component of the symmetrized pattern is traversed
/// breadth-first from a pseudo-peripheral vertex, visiting neighbors in
/// ascending (degree, index) order; the concatenated visit order is reversed,
/// and isolated vertices are appended in ascending index order. The result
/// maps old index `i` to its new position, ready for
/// [`CsrMatrix::permute_symmetric`].
pub fn rcm_order(a: &CsrMatrix) -> Result<Permutation, MatrixError> {
    let adj = AdjacencyView::build(a)?;
    let n = adj.order();
    let mut visited = vec![false; n];
    let mut order: Vec<u32> = Vec::with_capacity(n);

    // Components seeded smallest-(degree, index) first for determinism.
    let mut seeds: Vec<u32> = (0..n as u32).filter(|&v| adj.degree(v as usize) > 0).collect();
    seeds.sort_unstable_by_key(|&v| (adj.degree(v as usize), v));
    for &seed in &seeds {
        if visited[seed as usize] {
            continue;
        }
        let start = adj.pseudo_peripheral(seed as usize);
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start as u32]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in adj.neighbors(u as usize) {
                if !visited[v as usize] {
                    visited[v as usize] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order.reverse();
    order.extend((0..n as u32).filter(|&v| adj.degree(v as usize) == 0));

    let mut perm = vec![0u32; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old as usize] = new as u32;
    }
    Permutation::new(perm)
}
