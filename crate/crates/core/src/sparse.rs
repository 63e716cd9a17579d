//! Symmetric sparse matrices and their Cholesky factorisations.
//!
//! Two regimes: a dense factor (nalgebra) for small systems and an envelope
//! ("skyline") factor under reverse Cuthill–McKee ordering for large ones.
//! Lattice precision matrices are banded after ordering, so the envelope
//! carries essentially no wasted fill.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Dense factorisation is used up to this many unknowns.
pub const DENSE_LIMIT: usize = 5000;

/// Symmetric matrix in CSR form storing both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// Sums duplicate entries. Each off-diagonal triplet is mirrored, so pass
    /// every unordered pair once.
    pub fn from_upper_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *vals.last_mut().expect("previous entry exists") += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
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

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Upper-triangle triplets (i ≤ j) in row-major order.
    pub fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j >= i {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { vals: self.vals.iter().map(|v| v * s).collect(), ..self.clone() }
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> SparseSym {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            pos[i] = k;
        }
        let mut trip = Vec::new();
        for (k, &i) in keep.iter().enumerate() {
            for (j, v) in self.row(i) {
                let pj = pos[j];
                if pj != usize::MAX && pj >= k {
                    trip.push((k, pj, v));
                }
            }
        }
        SparseSym::from_upper_triplets(keep.len(), &trip)
    }

    /// Max |A_ij − A_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Reverse Cuthill–McKee ordering; returns `perm` with perm[new] = old.
pub fn rcm_order(a: &SparseSym) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| j != v && !visited[j]).collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn envelope_size(a: &SparseSym, inv: &[usize]) -> usize {
    (0..a.n())
        .map(|old| {
            let i = inv[old];
            let first = a.row(old).map(|(j, _)| inv[j]).min().unwrap_or(i).min(i);
            i - first + 1
        })
        .sum()
}

/// Envelope Cholesky factor L (row storage) of a permuted SPD matrix.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    n: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Factorises with whichever of natural and RCM ordering has the smaller envelope.
    pub fn factor(a: &SparseSym) -> Result<Self> {
        let n = a.n();
        let natural: Vec<usize> = (0..n).collect();
        let rcm = rcm_order(a);
        let mut rcm_inv = vec![0; n];
        for (k, &old) in rcm.iter().enumerate() {
            rcm_inv[old] = k;
        }
        if envelope_size(a, &rcm_inv) < envelope_size(a, &natural) {
            Self::factor_with(a, rcm)
        } else {
            Self::factor_with(a, natural)
        }
    }

    pub fn factor_with(a: &SparseSym, perm: Vec<usize>) -> Result<Self> {
        let n = a.n();
        let mut inv = vec![0; n];
        for (k, &old) in perm.iter().enumerate() {
            inv[old] = k;
        }
        let mut first = vec![0; n];
        for i in 0..n {
            first[i] = a.row(perm[i]).map(|(j, _)| inv[j]).filter(|&j| j <= i).min().unwrap_or(i);
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            for (j_old, v) in a.row(perm[i]) {
                let j = inv[j_old];
                if j <= i {
                    data[start[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = data.split_at_mut(start[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &done[start[j]..start[j + 1]];
                let dot: f64 = row_i[k0 - fi..j - fi].iter().zip(&row_j[k0 - fj..j - fj]).map(|(x, y)| x * y).sum();
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - dot) / ljj;
            }
            let sq: f64 = row_i[..i - fi].iter().map(|x| x * x).sum();
            let d = row_i[i - fi] - sq;
            // NaN fails `is_finite`.
            if !d.is_finite() || d <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: perm[i], value: d });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self { n, perm, inv, first, start, data })
    }

    pub fn envelope(&self) -> usize {
        self.data.len()
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[self.start[i] + j - self.first[i]]
    }

    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / row[i - fi];
        }
    }

    fn backward(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            x[i] /= row[i - fi];
            let xi = x[i];
            for (k, l) in (fi..i).zip(&row[..i - fi]) {
                x[k] -= l * xi;
            }
        }
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut out = vec![0.0; self.n];
        for (old, &k) in self.inv.iter().enumerate() {
            out[old] = y[k];
        }
        out
    }

    /// Maps z ~ N(0, I) to x ~ N(0, A⁻¹) by solving Lᵀ x = z in the permuted frame.
    pub fn sample(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut out = vec![0.0; self.n];
        for (old, &k) in self.inv.iter().enumerate() {
            out[old] = y[k];
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.l(i, i).ln()).sum()
    }
}

#[derive(Debug, Clone)]
pub enum Factor {
    Dense(Cholesky<f64, Dyn>),
    Skyline(SkylineCholesky),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorKind {
    #[default]
    Auto,
    Dense,
    Skyline,
}

impl Factor {
    pub fn new(a: &SparseSym, kind: FactorKind) -> Result<Self> {
        let dense = match kind {
            FactorKind::Auto => a.n() <= DENSE_LIMIT,
            FactorKind::Dense => true,
            FactorKind::Skyline => false,
        };
        if dense {
            let m = a.to_dense();
            Cholesky::new(m).map(Factor::Dense).ok_or(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN })
        } else {
            SkylineCholesky::factor(a).map(Factor::Skyline)
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Factor::Dense(c) => c.l_dirty().nrows(),
            Factor::Skyline(s) => s.n,
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Factor::Dense(c) => c.solve(&DVector::from_column_slice(b)).as_slice().to_vec(),
            Factor::Skyline(s) => s.solve(b),
        }
    }

    pub fn sample(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Factor::Dense(c) => {
                let l = c.l();
                let x = l
                    .tr_solve_lower_triangular(&DVector::from_column_slice(z))
                    .expect("Cholesky factor has a positive diagonal");
                x.as_slice().to_vec()
            }
            Factor::Skyline(s) => s.sample(z),
        }
    }

    pub fn log_det(&self) -> f64 {
        match self {
            Factor::Dense(c) => c.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum(),
            Factor::Skyline(s) => s.log_det(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// 2-D grid Laplacian plus shift, with a few wrap-around couplings.
    fn sample_matrix(w: usize, shift: f64) -> SparseSym {
        let n = w * w;
        let mut t = Vec::new();
        for x in 0..w {
            for y in 0..w {
                let i = x * w + y;
                t.push((i, i, 4.0 + shift));
                if x + 1 < w {
                    t.push((i, i + w, -1.0));
                }
                if y + 1 < w {
                    t.push((i, i + 1, -1.0));
                }
            }
        }
        for y in 0..w {
            t.push((y, (w - 1) * w + y, -0.5));
        }
        SparseSym::from_upper_triplets(n, &t)
    }

    #[test]
    fn triplets_accumulate_and_mirror() {
        let a = SparseSym::from_upper_triplets(3, &[(0, 1, 2.0), (0, 1, 1.0), (2, 2, 5.0), (0, 0, 1.0), (1, 1, 1.0)]);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 0), 3.0);
        assert_eq!(a.get(2, 2), 5.0);
        assert_eq!(a.get(0, 2), 0.0);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn skyline_matches_dense() {
        let a = sample_matrix(12, 0.3);
        let mut r = rng::stream(1, 0);
        let b: Vec<f64> = (0..a.n()).map(|_| r.sample(StandardNormal)).collect();
        let dense = Factor::new(&a, FactorKind::Dense).unwrap();
        let sky = Factor::new(&a, FactorKind::Skyline).unwrap();
        let xd = dense.solve(&b);
        let xs = sky.solve(&b);
        let resid: f64 = a.matvec(&xs).iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(resid < 1e-10);
        for (p, q) in xd.iter().zip(&xs) {
            assert!((p - q).abs() < 1e-10);
        }
        assert!((dense.log_det() - sky.log_det()).abs() < 1e-9);
        // both samplers implement x = L^{-T} z for their own L; check the covariance identity
        // E[x xᵀ] = A⁻¹ through the quadratic form xᵀ A x = zᵀ z.
        for f in [&dense, &sky] {
            let x = f.sample(&b);
            let q = a.quad_form(&x);
            let zz: f64 = b.iter().map(|v| v * v).sum();
            assert!((q - zz).abs() < 1e-9 * zz);
        }
    }

    #[test]
    fn rcm_is_a_permutation_and_shrinks_envelope() {
        let a = sample_matrix(15, 0.1);
        let p = rcm_order(&a);
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, (0..a.n()).collect::<Vec<_>>());
        let natural = SkylineCholesky::factor_with(&a, (0..a.n()).collect()).unwrap();
        let auto = SkylineCholesky::factor(&a).unwrap();
        assert!(auto.envelope() <= natural.envelope());
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let a = SparseSym::from_upper_triplets(2, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 2.0)]);
        assert!(matches!(SkylineCholesky::factor(&a), Err(Error::NotPositiveDefinite { .. })));
        assert!(Factor::new(&a, FactorKind::Dense).is_err());
    }

    #[test]
    fn submatrix_and_quad_form() {
        let a = sample_matrix(4, 1.0);
        let keep = [3, 0, 7];
        let s = a.submatrix(&keep);
        for (p, &i) in keep.iter().enumerate() {
            for (q, &j) in keep.iter().enumerate() {
                assert_eq!(s.get(p, q), a.get(i, j));
            }
        }
        let x: Vec<f64> = (0..a.n()).map(|i| (i as f64).sin()).collect();
        let dense = a.to_dense();
        let xv = DVector::from_vec(x.clone());
        assert!((a.quad_form(&x) - (xv.transpose() * &dense * &xv)[(0, 0)]).abs() < 1e-12);
    }
}
