//! Sparse linear algebra used by the grid operators.
//!
//! Three pieces: a compressed-row matrix assembled from triplets, a Jacobi
//! preconditioned conjugate gradient for one-off SPD solves, and a profile
//! (envelope) factorization for operators that are solved many times with
//! the same matrix. The profile factorization is preceded by a reverse
//! Cuthill-McKee ordering which keeps the envelope close to the grid
//! bandwidth.

use crate::error::{Error, Result};
use std::collections::VecDeque;

/// Square sparse matrix in compressed-row layout with sorted column indices.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix, summing duplicate entries. Explicit zeros are kept
    /// so the pattern stays structurally symmetric when the caller's triplets are.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, c, _) in triplets {
            debug_assert!(r < n && c < n);
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < scratch.len() {
                let c = scratch[k].0;
                let mut v = 0.0;
                while k < scratch.len() && scratch[k].0 == c {
                    v += scratch[k].1;
                    k += 1;
                }
                out_cols.push(c);
                out_vals.push(v);
            }
            row_ptr.push(out_cols.len());
        }
        Self { n, row_ptr, cols: out_cols, vals: out_vals }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let s = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match s.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `alpha * self + beta * other`.
    pub fn add(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n {
            t.extend(self.row(i).map(|(j, v)| (i, j, alpha * v)));
            t.extend(other.row(i).map(|(j, v)| (i, j, beta * v)));
        }
        CsrMatrix::from_triplets(self.n, &t)
    }

    pub fn scale(&self, alpha: f64) -> CsrMatrix {
        let mut m = self.clone();
        m.vals.iter_mut().for_each(|v| *v *= alpha);
        m
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut t = Vec::new();
        for i in 0..self.n {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    t.push((i, j, a * b));
                }
            }
        }
        CsrMatrix::from_triplets(self.n, &t)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            t.extend(self.row(i).map(|(j, v)| (j, i, v)));
        }
        CsrMatrix::from_triplets(self.n, &t)
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Replaces the given rows and columns by the identity.
    pub fn pin(&self, pins: &[usize]) -> CsrMatrix {
        let mut is_pin = vec![false; self.n];
        for &p in pins {
            is_pin[p] = true;
        }
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            if is_pin[i] {
                t.push((i, i, 1.0));
                continue;
            }
            for (j, v) in self.row(i) {
                if !is_pin[j] {
                    t.push((i, j, v));
                }
            }
        }
        CsrMatrix::from_triplets(self.n, &t)
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradient with Jacobi scaling.
///
/// Stops when `||b - A x|| <= tol * ||b||`. For a consistent singular system
/// (e.g. a pure Neumann Laplacian with zero-sum right-hand side) the iteration
/// converges in the range of `A`; the caller removes the kernel component.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveInfo> {
    let n = a.dim();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveInfo { iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.mul_vec_into(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(SolveInfo { iterations: it, relative_residual: res });
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::Breakdown(format!("conjugate gradient curvature {pap:e}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= tol {
        return Ok(SolveInfo { iterations: max_iter, relative_residual: res });
    }
    Err(Error::NotConverged { iterations: max_iter, residual: res })
}

/// Reverse Cuthill-McKee ordering of the (symmetrized) sparsity graph.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(|v| v.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, mark: &mut Vec<bool>| -> (Vec<usize>, usize) {
        // returns visit order and the last node of the deepest level
        let mut seen = mark.clone();
        let mut q = VecDeque::new();
        let mut out = Vec::new();
        seen[start] = true;
        q.push_back(start);
        while let Some(v) = q.pop_front() {
            out.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
        let last = *out.last().unwrap();
        (out, last)
    };

    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: two sweeps of "go to the far end"
        let (_, far) = bfs_levels(seed, &mut visited);
        let (_, far2) = bfs_levels(far, &mut visited);
        let start = far2;
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        let mut nbrs = Vec::new();
        while let Some(v) = q.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            for &w in &nbrs {
                visited[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Direct solver for a fixed sparse matrix with symmetric sparsity pattern.
///
/// Symmetric matrices are factored as `L D L^T`, general ones as `L U`
/// without pivoting (adequate for the diagonally dominant or positive-real
/// systems produced by the time steppers). Storage is row-wise for `L` and
/// column-wise for `U`, restricted to the envelope after RCM reordering.
#[derive(Debug, Clone)]
pub struct ProfileFactor {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    lower: Vec<f64>,
    upper: Option<Vec<f64>>,
    diag: Vec<f64>,
}

impl ProfileFactor {
    /// Factors `a`; `symmetric` selects `L D L^T`.
    pub fn new(a: &CsrMatrix, symmetric: bool) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for (jo, _) in a.row(old) {
                let j = inv[jo];
                if j < i {
                    first[i] = first[i].min(j);
                } else if i < j {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + (i - first[i]));
        }
        let len = offsets[n];
        let mut lower = vec![0.0; len];
        let mut upper = if symmetric { None } else { Some(vec![0.0; len]) };
        let mut diag = vec![0.0; n];
        for old in 0..n {
            let i = inv[old];
            for (jo, v) in a.row(old) {
                let j = inv[jo];
                if j == i {
                    diag[i] += v;
                } else if j < i {
                    lower[offsets[i] + j - first[i]] += v;
                } else if let Some(u) = upper.as_mut() {
                    u[offsets[j] + i - first[j]] += v;
                }
            }
        }
        let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(f64::MIN_POSITIVE);
        let pivot_floor = 1e-13 * scale;

        match upper.as_mut() {
            None => {
                // L D L^T; row i of `lower` holds g_j = L_ij D_j during the sweep, then L_ij.
                let mut g = Vec::new();
                for i in 0..n {
                    let fi = first[i];
                    let oi = offsets[i];
                    g.clear();
                    g.extend_from_slice(&lower[oi..oi + (i - fi)]);
                    for j in fi..i {
                        let fj = first[j];
                        let k0 = fi.max(fj);
                        let oj = offsets[j];
                        let lj = &lower[oj + (k0 - fj)..oj + (j - fj)];
                        let gi = &g[(k0 - fi)..(j - fi)];
                        let s: f64 = gi.iter().zip(lj).map(|(a, b)| a * b).sum();
                        g[j - fi] -= s;
                    }
                    let mut d = diag[i];
                    for j in fi..i {
                        let l = g[j - fi] / diag[j];
                        d -= g[j - fi] * l;
                        lower[oi + j - fi] = l;
                    }
                    if d.abs() <= pivot_floor || !d.is_finite() {
                        return Err(Error::Breakdown(format!(
                            "near-zero pivot {d:e} at row {i} of {n}"
                        )));
                    }
                    diag[i] = d;
                }
            }
            Some(upper) => {
                for i in 0..n {
                    let fi = first[i];
                    let oi = offsets[i];
                    for j in fi..i {
                        let fj = first[j];
                        let k0 = fi.max(fj);
                        let oj = offsets[j];
                        // L_ij = (A_ij - sum_k L_ik U_kj) / U_jj
                        let li = &lower[oi + (k0 - fi)..oi + (j - fi)];
                        let uj = &upper[oj + (k0 - fj)..oj + (j - fj)];
                        let s: f64 = li.iter().zip(uj).map(|(a, b)| a * b).sum();
                        lower[oi + j - fi] = (lower[oi + j - fi] - s) / diag[j];
                        // U_ji = A_ji - sum_k L_jk U_ki
                        let lj = &lower[oj + (k0 - fj)..oj + (j - fj)];
                        let ui = &upper[oi + (k0 - fi)..oi + (j - fi)];
                        let s: f64 = lj.iter().zip(ui).map(|(a, b)| a * b).sum();
                        upper[oi + j - fi] -= s;
                    }
                    let li = &lower[oi..oi + (i - fi)];
                    let ui = &upper[oi..oi + (i - fi)];
                    let s: f64 = li.iter().zip(ui).map(|(a, b)| a * b).sum();
                    let d = diag[i] - s;
                    if d.abs() <= pivot_floor || !d.is_finite() {
                        return Err(Error::Breakdown(format!(
                            "near-zero pivot {d:e} at row {i} of {n}"
                        )));
                    }
                    diag[i] = d;
                }
            }
        }
        Ok(Self { n, perm, first, offsets, lower, upper, diag })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored off-diagonal envelope entries per triangle.
    pub fn envelope_size(&self) -> usize {
        self.offsets[self.n]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        // forward: L y = b (unit lower)
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offsets[i];
            let row = &self.lower[oi..oi + (i - fi)];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] -= s;
        }
        match &self.upper {
            None => {
                for i in 0..n {
                    y[i] /= self.diag[i];
                }
                // backward: L^T x = y, column sweep
                for i in (0..n).rev() {
                    let fi = self.first[i];
                    let oi = self.offsets[i];
                    let xi = y[i];
                    let row = &self.lower[oi..oi + (i - fi)];
                    for (k, l) in row.iter().enumerate() {
                        y[fi + k] -= l * xi;
                    }
                }
            }
            Some(upper) => {
                // backward: U x = y with U stored by columns
                for i in (0..n).rev() {
                    y[i] /= self.diag[i];
                    let fi = self.first[i];
                    let oi = self.offsets[i];
                    let xi = y[i];
                    let col = &upper[oi..oi + (i - fi)];
                    for (k, u) in col.iter().enumerate() {
                        y[fi + k] -= u * xi;
                    }
                }
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
