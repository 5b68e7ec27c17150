//! Weighted kernel matrices.
//!
//! A kernel `A(x_i, x_j)` acts on grid functions through the measure:
//! `(A f)_i = sum_j A(i, j) w_j f_j`. Composition therefore carries the
//! weights in the middle: `(A B)(i, j) = sum_z A(i, z) w_z B(z, j)`.
//!
//! [`KernelMatrix`] is the support-pruned storage (compressed rows) used for
//! the assembled scale families; [`DenseKernel`] is the working form for
//! products and sums.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

/// Anything that acts on grid functions through the weights.
pub trait WeightedOperator: Sync {
    fn size(&self) -> usize;

    /// `(A f)_i = sum_j A(i, j) w_j f_j`
    fn apply(&self, w: &[f64], f: &[f64]) -> Vec<f64>;

    /// `(A^T f)_j = sum_i w_i A(i, j) f_i`, the adjoint in `L^2_mu`
    /// divided through by the weights.
    fn apply_transpose(&self, w: &[f64], f: &[f64]) -> Vec<f64>;

    /// `sum_j |A(i, j)| w_j` for every row.
    fn row_abs_integrals(&self, w: &[f64]) -> Vec<f64>;

    /// `sum_i w_i |A(i, j)|` for every column.
    fn col_abs_integrals(&self, w: &[f64]) -> Vec<f64>;
}

/// Compressed-row kernel with exact zeros pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        KernelMatrix { n, row_ptr, cols, vals }
    }

    pub fn from_dense(d: &DenseKernel) -> Self {
        let a = &d.0;
        let rows = (0..a.nrows())
            .into_par_iter()
            .map(|i| {
                a.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn to_dense(&self) -> DenseKernel {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                a[[i, *j]] = *x;
            }
        }
        DenseKernel(a)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(p) => v[p],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                rows[*j].push((i, *x));
            }
        }
        Self::from_rows(rows)
    }

    /// `max |A(i,j) - A(j,i)|`.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).fold(0.0f64, |m, (j, x)| m.max((x - self.get(*j, i)).abs()))
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `sum_j A(i,j) w_j` for every row.
    pub fn row_integrals(&self, w: &[f64]) -> Vec<f64> {
        self.apply(w, &vec![1.0; self.n])
    }

    /// `sum_i w_i A(i,j)` for every column.
    pub fn col_integrals(&self, w: &[f64]) -> Vec<f64> {
        self.apply_transpose(w, &vec![1.0; self.n])
    }

    /// `a * self + b * other`, merged row by row. Entries present in only
    /// one operand are scaled but never cancelled to zero.
    pub fn combine(&self, a: f64, other: &KernelMatrix, b: f64) -> KernelMatrix {
        assert_eq!(self.n, other.n, "kernel sizes differ");
        let rows = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (ac, av) = self.row(i);
                let (bc, bv) = other.row(i);
                let (mut p, mut q) = (0, 0);
                let mut out = Vec::with_capacity(ac.len().max(bc.len()));
                while p < ac.len() || q < bc.len() {
                    if q == bc.len() || (p < ac.len() && ac[p] < bc[q]) {
                        out.push((ac[p], a * av[p]));
                        p += 1;
                    } else if p == ac.len() || bc[q] < ac[p] {
                        out.push((bc[q], b * bv[q]));
                        q += 1;
                    } else {
                        out.push((ac[p], a * av[p] + b * bv[q]));
                        p += 1;
                        q += 1;
                    }
                }
                out
            })
            .collect();
        KernelMatrix::from_rows(rows)
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, value: f64) -> bool {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[a..b].binary_search(&j) {
            Ok(p) => {
                self.vals[a + p] = value;
                true
            }
            Err(_) => false,
        }
    }
}

impl WeightedOperator for KernelMatrix {
    fn size(&self) -> usize {
        self.n
    }

    fn apply(&self, w: &[f64], f: &[f64]) -> Vec<f64> {
        let wf: Vec<f64> = w.iter().zip(f).map(|(a, b)| a * b).collect();
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(j, x)| x * wf[*j]).sum()
            })
            .collect()
    }

    fn apply_transpose(&self, w: &[f64], f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let s = w[i] * f[i];
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                out[*j] += x * s;
            }
        }
        out
    }

    fn row_abs_integrals(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(j, x)| x.abs() * w[*j]).sum()
            })
            .collect()
    }

    fn col_abs_integrals(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                out[*j] += w[i] * x.abs();
            }
        }
        out
    }
}

/// Dense kernel; the working form for products.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel(pub Array2<f64>);

const ROW_BLOCK: usize = 128;

impl DenseKernel {
    pub fn zeros(n: usize) -> Self {
        DenseKernel(Array2::zeros((n, n)))
    }

    /// Kernel of the identity operator: `delta_ij / w_j`.
    pub fn identity_on_weights(w: &[f64]) -> Self {
        let mut a = Array2::zeros((w.len(), w.len()));
        for (i, wi) in w.iter().enumerate() {
            a[[i, i]] = 1.0 / wi;
        }
        DenseKernel(a)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    /// Kernel of the composition `self` after `other`:
    /// `sum_z self(i, z) w_z other(z, j)`.
    pub fn compose(&self, other: &DenseKernel, w: &[f64]) -> DenseKernel {
        let wv = ArrayView1::from(w);
        let scaled = &other.0 * &wv.insert_axis(Axis(1));
        DenseKernel(par_matmul(&self.0, &scaled))
    }

    pub fn add(&self, other: &DenseKernel) -> DenseKernel {
        DenseKernel(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &DenseKernel) -> DenseKernel {
        DenseKernel(&self.0 - &other.0)
    }

    pub fn scale(&self, c: f64) -> DenseKernel {
        DenseKernel(&self.0 * c)
    }

    pub fn add_assign(&mut self, other: &DenseKernel) {
        self.0 += &other.0;
    }

    pub fn transpose(&self) -> DenseKernel {
        DenseKernel(self.0.t().to_owned())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let a = &self.0;
        let n = a.nrows();
        (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).fold(0.0f64, |m, j| m.max((a[[i, j]] - a[[j, i]]).abs())))
            .reduce(|| 0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row_integrals(&self, w: &[f64]) -> Vec<f64> {
        self.apply(w, &vec![1.0; self.n()])
    }

    pub fn col_integrals(&self, w: &[f64]) -> Vec<f64> {
        self.apply_transpose(w, &vec![1.0; self.n()])
    }
}

impl WeightedOperator for DenseKernel {
    fn size(&self) -> usize {
        self.n()
    }

    fn apply(&self, w: &[f64], f: &[f64]) -> Vec<f64> {
        let wf: Array1<f64> = w.iter().zip(f).map(|(a, b)| a * b).collect();
        self.0.dot(&wf).to_vec()
    }

    fn apply_transpose(&self, w: &[f64], f: &[f64]) -> Vec<f64> {
        // row-wise accumulation keeps the memory access contiguous
        let mut out = Array1::zeros(self.n());
        for (row, (wi, fi)) in self.0.rows().into_iter().zip(w.iter().zip(f)) {
            out.scaled_add(wi * fi, &row);
        }
        out.to_vec()
    }

    fn row_abs_integrals(&self, w: &[f64]) -> Vec<f64> {
        self.0
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(w).map(|(x, wj)| x.abs() * wj).sum())
            .collect()
    }

    fn col_abs_integrals(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (row, wi) in self.0.rows().into_iter().zip(w) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x.abs() * wi;
            }
        }
        out
    }
}

/// Row-blocked parallel matrix product. Each output entry is produced by a
/// single block, so results do not depend on the thread count.
pub(crate) fn par_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    let a_blocks: Vec<_> = a.axis_chunks_iter(Axis(0), ROW_BLOCK).collect();
    let mut o_blocks: Vec<_> = out.axis_chunks_iter_mut(Axis(0), ROW_BLOCK).collect();
    o_blocks
        .par_iter_mut()
        .zip(a_blocks.par_iter())
        .for_each(|(o, ab)| general_mat_mul(1.0, ab, b, 0.0, o));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> DenseKernel {
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let d = (i as f64 - j as f64).abs();
                if d < 3.0 {
                    a[[i, j]] = 1.0 / (1.0 + d) + 0.01 * i as f64;
                }
            }
        }
        DenseKernel(a)
    }

    #[test]
    fn sparse_dense_agree() {
        let d = sample(40);
        let s = KernelMatrix::from_dense(&d);
        assert_eq!(s.to_dense(), d);
        assert!(s.nnz() < 40 * 40);
        let w: Vec<f64> = (0..40).map(|i| 0.1 + 0.01 * i as f64).collect();
        let f: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let (a, b) = (s.apply(&w, &f), d.apply(&w, &f));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let (a, b) = (s.apply_transpose(&w, &f), d.apply_transpose(&w, &f));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(s.row_abs_integrals(&w).len(), 40);
        assert_eq!(s.get(0, 10), 0.0);
        assert_eq!(s.get(5, 6), d.get(5, 6));
        assert_eq!(s.transpose().to_dense(), d.transpose());
    }

    #[test]
    fn composition_carries_weights() {
        let n = 50;
        let d = sample(n);
        let w: Vec<f64> = (0..n).map(|i| 0.5 + 0.02 * i as f64).collect();
        let f: Vec<f64> = (0..n).map(|i| (0.3 * i as f64).cos()).collect();
        let ab = d.compose(&d.transpose(), &w);
        let direct = d.apply(&w, &d.transpose().apply(&w, &f));
        for (x, y) in ab.apply(&w, &f).iter().zip(&direct) {
            assert!((x - y).abs() < 1e-10);
        }
        let id = DenseKernel::identity_on_weights(&w);
        let same = d.compose(&id, &w);
        assert!(same.sub(&d).max_abs() < 1e-13);
    }

    #[test]
    fn asymmetry_measure() {
        let d = sample(12);
        assert!(d.max_asymmetry() > 0.0);
        let sym = d.add(&d.transpose());
        assert_eq!(sym.max_asymmetry(), 0.0);
        assert_eq!(KernelMatrix::from_dense(&sym).max_asymmetry(), 0.0);
    }
}
