//! Compressed sparse rows, reverse Cuthill-McKee ordering and an envelope
//! (skyline) Cholesky factorization for symmetric positive definite systems.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Square `n x n` matrix from (row, col, value) triplets; duplicates are
    /// summed and explicit zeros kept, so matrices assembled over the same
    /// elements share a pattern.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> CsrMatrix {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn diagonal_matrix(d: &[f64]) -> CsrMatrix {
        CsrMatrix::from_triplets(d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
    }

    pub fn zeros(n: usize) -> CsrMatrix {
        CsrMatrix::from_triplets(n, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(self.mul_vec(y)).map(|(a, b)| a * b).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Sum of all entries, `1^T A 1`.
    pub fn total(&self) -> f64 {
        self.vals.iter().sum()
    }

    /// `a * self + b * other` with the union pattern.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut vals = Vec::with_capacity(cols.capacity());
        row_ptr.push(0);
        for i in 0..self.n {
            let mut p = self.row(i).peekable();
            let mut q = other.row(i).peekable();
            loop {
                match (p.peek().copied(), q.peek().copied()) {
                    (Some((j, x)), Some((k, y))) if j == k => {
                        cols.push(j);
                        vals.push(a * x + b * y);
                        p.next();
                        q.next();
                    }
                    (Some((j, x)), Some((k, _))) if j < k => {
                        cols.push(j);
                        vals.push(a * x);
                        p.next();
                    }
                    (Some(_), Some((k, y))) => {
                        cols.push(k);
                        vals.push(b * y);
                        q.next();
                    }
                    (Some((j, x)), None) => {
                        cols.push(j);
                        vals.push(a * x);
                        p.next();
                    }
                    (None, Some((k, y))) => {
                        cols.push(k);
                        vals.push(b * y);
                        q.next();
                    }
                    (None, None) => break,
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut m = self.clone();
        m.vals.iter_mut().for_each(|v| *v *= s);
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// Principal submatrix on `keep` (indices in the new numbering follow
    /// the order of `keep`).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            map[i] = k;
        }
        let mut t = Vec::new();
        for (k, &i) in keep.iter().enumerate() {
            for (j, v) in self.row(i) {
                if map[j] != usize::MAX {
                    t.push((k, map[j], v));
                }
            }
        }
        CsrMatrix::from_triplets(keep.len(), t)
    }
}

/// Reverse Cuthill-McKee permutation: `perm[new] = old`.
pub fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, visited: &mut Vec<bool>, out: &mut Vec<usize>| {
        let mut q = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = q.pop_front() {
            out.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (deg[w], w));
            for w in nb {
                visited[w] = true;
                q.push_back(w);
            }
        }
    };
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&v| (deg[v], v));
    for &s in &starts {
        if visited[s] {
            continue;
        }
        // pseudo-peripheral start: the last vertex reached from a min-degree seed
        let mut probe_seen = visited.clone();
        let mut probe = Vec::new();
        bfs(s, &mut probe_seen, &mut probe);
        let far = *probe.last().unwrap();
        bfs(far, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Envelope Cholesky factor `P A P^T = L L^T` of a symmetric positive
/// definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Cholesky> {
        let n = a.n();
        let perm = rcm_order(a);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = iperm[old];
            for (j, _) in a.row(old) {
                let j = iperm[j];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        // symmetric pattern assumed; make the envelope symmetric-safe
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + i - first[i] + 1);
        }
        let mut l = vec![0.0; offset[n]];
        let mut diag = vec![0.0; n];
        for old in 0..n {
            let i = iperm[old];
            for (j, v) in a.row(old) {
                let j = iperm[j];
                if j <= i {
                    l[offset[i] + j - first[i]] += v;
                }
                if j == i {
                    diag[i] = v;
                }
            }
        }
        for i in 0..n {
            let (fi, oi) = (first[i], offset[i]);
            for j in fi..i {
                let (fj, oj) = (first[j], offset[j]);
                let k0 = fi.max(fj);
                let dot: f64 = l[oi + k0 - fi..oi + j - fi]
                    .iter()
                    .zip(&l[oj + k0 - fj..oj + j - fj])
                    .map(|(x, y)| x * y)
                    .sum();
                let ljj = l[oj + j - fj];
                l[oi + j - fi] = (l[oi + j - fi] - dot) / ljj;
            }
            let row = &l[oi..oi + i - fi];
            let d = l[oi + i - fi] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 1e-12 * diag[i].abs()) || !d.is_finite() {
                return Err(Error::Singular(format!(
                    "non-positive pivot {d:e} at row {} of {n}",
                    perm[i]
                )));
            }
            l[oi + i - fi] = d.sqrt();
        }
        Ok(Cholesky {
            n,
            perm,
            first,
            offset,
            l,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let (fi, oi) = (self.first[i], self.offset[i]);
            let dot: f64 = self.l[oi..oi + i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / self.l[oi + i - fi];
        }
        for i in (0..n).rev() {
            let (fi, oi) = (self.first[i], self.offset[i]);
            y[i] /= self.l[oi + i - fi];
            let yi = y[i];
            for (k, &lik) in self.l[oi..oi + i - fi].iter().enumerate() {
                y[fi + k] -= lik * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Solver for `A x = b` with some unknowns prescribed. The free block is
/// factored once; `solve` accepts new right-hand sides and values.
#[derive(Debug, Clone)]
pub struct DirichletSolver {
    n: usize,
    free: Vec<usize>,
    fixed: Vec<bool>,
    chol: Option<Cholesky>,
    a: CsrMatrix,
}

impl DirichletSolver {
    pub fn new(a: &CsrMatrix, fixed: &[bool]) -> Result<DirichletSolver> {
        assert_eq!(fixed.len(), a.n());
        let free: Vec<usize> = (0..a.n()).filter(|&i| !fixed[i]).collect();
        let chol = if free.is_empty() {
            None
        } else {
            Some(Cholesky::factor(&a.submatrix(&free))?)
        };
        Ok(DirichletSolver {
            n: a.n(),
            free,
            fixed: fixed.to_vec(),
            chol,
            a: a.clone(),
        })
    }

    /// `values` supplies the prescribed entries (others ignored).
    pub fn solve(&self, rhs: &[f64], values: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut x: Vec<f64> = (0..self.n).map(|i| if self.fixed[i] { values[i] } else { 0.0 }).collect();
        if let Some(chol) = &self.chol {
            let b: Vec<f64> = self
                .free
                .iter()
                .map(|&i| {
                    rhs[i]
                        - self
                            .a
                            .row(i)
                            .filter(|&(j, _)| self.fixed[j])
                            .map(|(j, v)| v * x[j])
                            .sum::<f64>()
                })
                .collect();
            for (k, v) in chol.solve(&b).into_iter().enumerate() {
                x[self.free[k]] = v;
            }
        }
        x
    }
}
