//! Envelope (skyline) Cholesky factorisation with reverse Cuthill-McKee
//! ordering, for the symmetric positive-definite head-correction system.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("matrix not positive definite at row {row}")]
pub struct NotPositiveDefinite {
    /// Row in the caller's (unpermuted) numbering.
    pub row: usize,
}

/// Reverse Cuthill-McKee ordering. Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let root = pseudo_peripheral(adj, seed, &degree);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Start node far from `seed` within its component (a few BFS sweeps).
fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize, degree: &[usize]) -> usize {
    let mut root = seed;
    let mut ecc = 0;
    for _ in 0..4 {
        let levels = bfs_levels(adj, root);
        let max_level = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if max_level <= ecc && ecc > 0 {
            break;
        }
        ecc = max_level;
        let candidate = (0..adj.len())
            .filter(|&i| levels[i] == Some(max_level))
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(root);
        if candidate == root {
            break;
        }
        root = candidate;
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap_or(0);
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

/// Lower-triangular envelope storage of a symmetric matrix, factorised in place.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    /// First stored column of each row (permuted numbering).
    first: Vec<usize>,
    /// Offset of `(i, first[i])` in `data`.
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Builds the envelope for an `n × n` matrix whose off-diagonal
    /// sparsity is given by `edges` (unordered, duplicates allowed).
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, list) in adj.iter().enumerate() {
            let i = inv[old];
            for &o in list {
                let j = inv[o];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut offset = Vec::with_capacity(n);
        let mut total = 0;
        for i in 0..n {
            offset.push(total);
            total += i - first[i] + 1;
        }
        EnvelopeCholesky { n, perm, inv, first, offset, data: vec![0.0; total] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries (envelope size).
    pub fn envelope_len(&self) -> usize {
        self.data.len()
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.offset[i] + (j - self.first[i])
    }

    /// Adds `v` to entry `(a, a)` (caller numbering).
    pub fn add_diag(&mut self, a: usize, v: f64) {
        let i = self.inv[a];
        let k = self.idx(i, i);
        self.data[k] += v;
    }

    /// Adds `v` to the symmetric pair `(a, b)` / `(b, a)`.
    pub fn add_offdiag(&mut self, a: usize, b: usize, v: f64) {
        let (i, j) = (self.inv[a], self.inv[b]);
        let (i, j) = if i > j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// In-place `L Lᵀ` factorisation.
    pub fn factor(&mut self) -> Result<(), NotPositiveDefinite> {
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = self.data[self.idx(i, j)];
                let (oi, oj) = (self.offset[i] + k0 - fi, self.offset[j] + k0 - fj);
                for k in 0..(j - k0) {
                    s -= self.data[oi + k] * self.data[oj + k];
                }
                if j < i {
                    let djj = self.data[self.idx(j, j)];
                    let at = self.idx(i, j);
                    self.data[at] = s / djj;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(NotPositiveDefinite { row: self.perm[i] });
                    }
                    let at = self.idx(i, i);
                    self.data[at] = s.sqrt();
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place using the factor.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i] + (i - fi)];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.data[self.idx(i, i)];
            let xi = y[i];
            let row = &self.data[self.offset[i]..self.offset[i] + (i - fi)];
            for (k, l) in row.iter().enumerate() {
                y[fi + k] -= l * xi;
            }
        }
        for i in 0..n {
            b[self.perm[i]] = y[i];
        }
    }
}
