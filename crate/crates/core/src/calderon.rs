//! Operator algebra on a stack: weighted operator norms, almost
//! orthogonality of the blocks, Coifman's banded operator `T_N`, its
//! remainder `R_N` and the Neumann-series inverse behind the reproducing
//! formula.
//!
//! The scale range is finite, so the identity is replaced by the band
//! operator `I_range = P^2` with `P = S_{k_max} - S_{k_min - 1} = sum_k D_k`;
//! `R_N = I_range - T_N`, and reconstructions are compared with `P^2 f`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx_id::AIStack;
use crate::error::{Error, Result};
use crate::fit;
use crate::grid::lp_norm_weighted;
use crate::kernel::{DenseKernel, WeightedOperator};

const POWER_ITERATIONS: usize = 200;
const POWER_TOL: f64 = 1e-8;
const POWER_SEED: u64 = 0x0b5e_55ed;

/// Operator norm on `L^p_mu` for `p` in `{1, 2, inf}`.
///
/// `p = 1` and `p = inf` are the exact weighted column and row maxima;
/// `p = 2` runs power iteration on `A* A` from a fixed random start.
pub fn op_norm<A: WeightedOperator + ?Sized>(w: &[f64], a: &A, p: f64) -> Result<f64> {
    check_p(p)?;
    if p == 1.0 {
        Ok(a.col_abs_integrals(w).into_iter().fold(0.0, f64::max))
    } else if p == f64::INFINITY {
        Ok(a.row_abs_integrals(w).into_iter().fold(0.0, f64::max))
    } else {
        Ok(power_norm(w, a))
    }
}

fn check_p(p: f64) -> Result<()> {
    if p == 1.0 || p == 2.0 || p == f64::INFINITY {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("operator norm for p={p}; only 1, 2 and inf are computed")))
    }
}

fn l2(w: &[f64], f: &[f64]) -> f64 {
    f.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>().sqrt()
}

fn power_norm<A: WeightedOperator + ?Sized>(w: &[f64], a: &A) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Vec<f64> = (0..a.size()).map(|_| rng.gen::<f64>() - 0.5).collect();
    let nv = l2(w, &v);
    if nv == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let u = a.apply(w, &v);
        let s = l2(w, &u);
        if s == 0.0 {
            return 0.0;
        }
        let done = (s - sigma).abs() <= POWER_TOL * s;
        sigma = s;
        if done {
            break;
        }
        let mut z = a.apply_transpose(w, &u);
        let nz = l2(w, &z);
        if nz == 0.0 {
            break;
        }
        z.iter_mut().for_each(|x| *x /= nz);
        v = z;
    }
    sigma
}

/// Norms of the products `D_j D_k` for one exponent, with the fitted
/// geometric envelope `C 2^{-|j-k| eps}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNormTable {
    pub p: f64,
    pub entries: BTreeMap<(i32, i32), f64>,
    /// Decay rate of the per-distance maxima: least-squares slope of
    /// `log2 max_{|j-k|=d} ||D_j D_k||` over `d >= 2`.
    pub fitted_eps: f64,
    /// Least constant with `C 2^{-d eps}` above those maxima for `d >= 2`.
    /// Distances 0 and 1 are not used by the fit.
    pub fitted_c: f64,
}

/// Tolerance of the envelope check: an entry violates when it exceeds the
/// envelope by more than this factor.
pub const ENVELOPE_SLACK: f64 = 1.1;

impl OperatorNormTable {
    pub fn get(&self, j: i32, k: i32) -> f64 {
        self.entries[&(j, k)]
    }

    pub fn envelope(&self, dist: i32) -> f64 {
        self.fitted_c * 2f64.powf(-self.fitted_eps * dist as f64)
    }

    /// Fraction of pairs whose norm exceeds the envelope by more than
    /// [`ENVELOPE_SLACK`].
    pub fn violation_fraction(&self) -> f64 {
        let bad = self
            .entries
            .iter()
            .filter(|((j, k), v)| **v > ENVELOPE_SLACK * self.envelope((j - k).abs()))
            .count();
        bad as f64 / self.entries.len() as f64
    }

    /// Largest norm at each distance `|j - k|`.
    pub fn max_by_distance(&self) -> BTreeMap<i32, f64> {
        let mut m = BTreeMap::new();
        for ((j, k), v) in &self.entries {
            let e = m.entry((j - k).abs()).or_insert(0.0f64);
            *e = e.max(*v);
        }
        m
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("j,k,p,norm\n");
        self.append_rows(&mut s);
        s
    }

    pub(crate) fn append_rows(&self, s: &mut String) {
        for ((j, k), v) in &self.entries {
            let _ = writeln!(s, "{j},{k},{},{v:e}", p_label(self.p));
        }
    }

    fn fit(&mut self) -> Result<()> {
        let maxima = self.max_by_distance();
        let (xs, ys): (Vec<f64>, Vec<f64>) = maxima
            .iter()
            .filter(|(d, v)| **d >= 2 && **v > 0.0)
            .map(|(d, v)| (*d as f64, v.log2()))
            .unzip();
        let (slope, _) = fit::least_squares(&xs, &ys)
            .ok_or_else(|| Error::InsufficientData("need at least two distances |j-k| >= 2".into()))?;
        self.fitted_eps = -slope;
        // smallest constant at this rate that dominates the fitted maxima
        self.fitted_c = xs
            .iter()
            .zip(&ys)
            .map(|(d, y)| 2f64.powf(y + self.fitted_eps * d))
            .fold(0.0, f64::max);
        Ok(())
    }
}

/// `1`, `2` or `inf`.
pub fn p_label(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p}")
    }
}

/// `||D_j D_k||_p` for every pair of scales and each requested `p`.
///
/// Each product with `j <= k` is formed once; the mirrored entry is read
/// from its transpose, so `(j,k,1)` and `(k,j,inf)` agree exactly.
pub fn almost_orthogonality_tables(stack: &AIStack, ps: &[f64]) -> Result<Vec<OperatorNormTable>> {
    if stack.num_scales() < 4 {
        return Err(Error::InsufficientData(format!(
            "almost orthogonality needs at least 4 scales, the stack has {}",
            stack.num_scales()
        )));
    }
    for &p in ps {
        check_p(p)?;
    }
    let w = stack.weights();
    let dense: Vec<DenseKernel> = stack.scales().map(|k| stack.d_dense(k)).collect();
    let mut tables: Vec<OperatorNormTable> = ps
        .iter()
        .map(|&p| OperatorNormTable { p, entries: BTreeMap::new(), fitted_eps: 0.0, fitted_c: 0.0 })
        .collect();
    let k0 = stack.k_min();
    for (a, da) in dense.iter().enumerate() {
        for (b, db) in dense.iter().enumerate().skip(a) {
            let prod = da.compose(db, w);
            let (j, k) = (k0 + a as i32, k0 + b as i32);
            let n1 = op_norm(w, &prod, 1.0)?;
            let ninf = op_norm(w, &prod, f64::INFINITY)?;
            for t in tables.iter_mut() {
                let (v, vt) = if t.p == 1.0 {
                    (n1, ninf)
                } else if t.p.is_infinite() {
                    (ninf, n1)
                } else {
                    let v = op_norm(w, &prod, 2.0)?;
                    (v, v)
                };
                t.entries.insert((j, k), v);
                t.entries.insert((k, j), vt);
            }
        }
    }
    for t in tables.iter_mut() {
        t.fit()?;
    }
    Ok(tables)
}

pub fn almost_orthogonality_table(stack: &AIStack, p: f64) -> Result<OperatorNormTable> {
    Ok(almost_orthogonality_tables(stack, &[p])?.remove(0))
}

/// Largest admissible band width: `T_N` for `N = k_max - k_min` already
/// contains every pair of blocks.
pub fn max_band(stack: &AIStack) -> usize {
    (stack.k_max() - stack.k_min()) as usize
}

fn check_band(stack: &AIStack, n: usize) -> Result<()> {
    if n == 0 || n > max_band(stack).max(1) {
        return Err(Error::Parameter(format!(
            "band width N={n} outside 1..={} for scales {}..={}",
            max_band(stack).max(1),
            stack.k_min(),
            stack.k_max()
        )));
    }
    Ok(())
}

/// `(A + A^T) / 2`; removes rounding asymmetry of kernels that are
/// symmetric in exact arithmetic.
fn symmetrized(a: DenseKernel) -> DenseKernel {
    let t = a.transpose();
    a.add(&t).scale(0.5)
}

/// `T_N = sum_{|j-k| <= N} D_j D_k` over the stack's scales.
pub fn assemble_tn(stack: &AIStack, n: usize) -> Result<DenseKernel> {
    Ok(assemble_tn_sequence(stack, n)?.pop().expect("non-empty"))
}

/// `T_1, ..., T_{n_max}`, adding the diagonals `|j - k| = N` one at a time
/// so that every product is formed once.
pub fn assemble_tn_sequence(stack: &AIStack, n_max: usize) -> Result<Vec<DenseKernel>> {
    check_band(stack, n_max)?;
    let w = stack.weights();
    let dense: Vec<DenseKernel> = stack.scales().map(|k| stack.d_dense(k)).collect();
    let mut acc = DenseKernel::zeros(w.len());
    for d in &dense {
        acc.add_assign(&d.compose(d, w));
    }
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        for a in 0..dense.len().saturating_sub(n) {
            let x = dense[a].compose(&dense[a + n], w);
            acc.add_assign(&x);
            acc.add_assign(&x.transpose());
        }
        out.push(symmetrized(acc.clone()));
    }
    Ok(out)
}

/// `I_range = (S_{k_max} - S_{k_min - 1})^2`.
pub fn band_identity(stack: &AIStack) -> DenseKernel {
    let p = stack.s_dense(stack.k_max()).sub(&stack.s_dense(stack.k_min() - 1));
    symmetrized(p.compose(&p, stack.weights()))
}

/// `D_k^N = sum_{|j| <= N} D_{k+j}`, clipped to the stack; by telescoping
/// this is `S_{min(k+N, k_max)} - S_{max(k-N, k_min) - 1}`.
pub fn apply_dkn(stack: &AIStack, k: i32, n: usize, f: &[f64]) -> Vec<f64> {
    let hi = (k + n as i32).min(stack.k_max());
    let lo = (k - n as i32).max(stack.k_min()) - 1;
    let w = stack.weights();
    let a = stack.s(hi).apply(w, f);
    let b = stack.s(lo).apply(w, f);
    a.iter().zip(&b).map(|(x, y)| x - y).collect()
}

/// Banded operator with its remainder and inversion settings.
#[derive(Debug, Clone)]
pub struct CalderonOperator<'a> {
    stack: &'a AIStack,
    n: usize,
    pub neumann_terms: usize,
    pub residual_tol: f64,
    tn: DenseKernel,
    rn: DenseKernel,
    rn_norm2: f64,
}

pub const DEFAULT_NEUMANN_TERMS: usize = 500;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-10;

impl<'a> CalderonOperator<'a> {
    pub fn new(stack: &'a AIStack, n: usize) -> Result<Self> {
        let tn = assemble_tn(stack, n)?;
        Ok(Self::from_parts(stack, n, tn, &band_identity(stack)))
    }

    /// Operators for every `N` in `1..=n_max` sharing the product work.
    pub fn sequence(stack: &'a AIStack, n_max: usize) -> Result<Vec<Self>> {
        let ident = band_identity(stack);
        Ok(assemble_tn_sequence(stack, n_max)?
            .into_iter()
            .enumerate()
            .map(|(i, tn)| Self::from_parts(stack, i + 1, tn, &ident))
            .collect())
    }

    fn from_parts(stack: &'a AIStack, n: usize, tn: DenseKernel, ident: &DenseKernel) -> Self {
        let rn = ident.sub(&tn);
        let rn_norm2 = power_norm(stack.weights(), &rn);
        CalderonOperator {
            stack,
            n,
            neumann_terms: DEFAULT_NEUMANN_TERMS,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            tn,
            rn,
            rn_norm2,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stack(&self) -> &AIStack {
        self.stack
    }

    pub fn tn(&self) -> &DenseKernel {
        &self.tn
    }

    pub fn rn(&self) -> &DenseKernel {
        &self.rn
    }

    /// `||R_N||` on `L^2_mu`.
    pub fn rn_norm2(&self) -> f64 {
        self.rn_norm2
    }

    pub fn is_contraction(&self) -> bool {
        self.rn_norm2 < 1.0
    }

    pub fn apply_tn(&self, f: &[f64]) -> Vec<f64> {
        self.tn.apply(self.stack.weights(), f)
    }

    /// `(I - R_N) f`.
    pub fn apply_one_minus_rn(&self, f: &[f64]) -> Vec<f64> {
        let r = self.rn.apply(self.stack.weights(), f);
        f.iter().zip(&r).map(|(a, b)| a - b).collect()
    }
}

/// Partial sums `sum_m R^m f` until the increment drops below `tol ||f||`
/// or `max_terms` terms have been added.
///
/// Fails with [`Error::Divergence`] when the increment norm fails to
/// decrease five times in a row.
pub fn neumann_series(
    w: &[f64],
    r: &dyn Fn(&[f64]) -> Vec<f64>,
    f: &[f64],
    max_terms: usize,
    tol: f64,
) -> Result<(Vec<f64>, usize)> {
    let fnorm = l2(w, f);
    let mut sum = f.to_vec();
    if fnorm == 0.0 {
        return Ok((sum, 0));
    }
    let mut term = f.to_vec();
    let mut prev = fnorm;
    let mut streak = 0;
    for m in 1..=max_terms {
        term = r(&term);
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
        let inc = l2(w, &term);
        if inc < tol * fnorm {
            return Ok((sum, m));
        }
        if inc >= prev {
            streak += 1;
            if streak >= 5 {
                return Err(Error::Divergence { terms: m });
            }
        } else {
            streak = 0;
        }
        prev = inc;
    }
    Ok((sum, max_terms))
}

/// `T_N^{-1} f` as a Neumann series in `R_N`; returns the terms used.
pub fn apply_tn_inverse(cal: &CalderonOperator<'_>, f: &[f64]) -> Result<(Vec<f64>, usize)> {
    let w = cal.stack.weights();
    let r = |v: &[f64]| cal.rn.apply(w, v);
    neumann_series(w, &r, f, cal.neumann_terms, cal.residual_tol)
}

/// Outcome of one application of the reproducing formula.
#[derive(Debug, Clone, PartialEq)]
pub struct Reproduction {
    pub reconstruction: Vec<f64>,
    /// `||P^2 f - reconstruction|| / ||P^2 f||` in `L^2_mu`.
    pub residual: f64,
    pub neumann_terms_used: usize,
}

/// `sum_k T_N^{-1} D_k^N D_k f`.
pub fn reproduce(cal: &CalderonOperator<'_>, f: &[f64]) -> Result<Reproduction> {
    let stack = cal.stack;
    let w = stack.weights();
    let target = stack.band_projection(&stack.band_projection(f));
    let tnorm = l2(w, &target);
    if tnorm == 0.0 {
        return Err(Error::DegenerateInput("f has no energy inside the scale band".into()));
    }
    let mut g = vec![0.0; f.len()];
    for k in stack.scales() {
        let dk = stack.apply_d(k, f);
        for (a, b) in g.iter_mut().zip(apply_dkn(stack, k, cal.n, &dk)) {
            *a += b;
        }
    }
    let (rec, used) = apply_tn_inverse(cal, &g)?;
    let diff: Vec<f64> = target.iter().zip(&rec).map(|(a, b)| a - b).collect();
    Ok(Reproduction { residual: l2(w, &diff) / tnorm, reconstruction: rec, neumann_terms_used: used })
}

/// Smallest `N` whose remainder contracts on `L^2_mu`.
pub fn discover_n0(ops: &[CalderonOperator<'_>]) -> Option<usize> {
    ops.iter().find(|c| c.is_contraction()).map(|c| c.n)
}

/// One row of the reproduction report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionRow {
    pub n: usize,
    pub residual: f64,
    pub neumann_terms_used: usize,
    pub rn_norm2: f64,
}

/// Reproduce `f` for every operator; divergent series give an infinite
/// residual.
pub fn reproduction_sweep(ops: &[CalderonOperator<'_>], f: &[f64]) -> Result<Vec<ReproductionRow>> {
    ops.iter()
        .map(|c| {
            let (residual, used) = match reproduce(c, f) {
                Ok(r) => (r.residual, r.neumann_terms_used),
                Err(Error::Divergence { terms }) => (f64::INFINITY, terms),
                Err(e) => return Err(e),
            };
            Ok(ReproductionRow { n: c.n, residual, neumann_terms_used: used, rn_norm2: c.rn_norm2 })
        })
        .collect()
}

pub fn reproduction_csv(rows: &[ReproductionRow]) -> String {
    let mut s = String::from("N,residual,neumann_terms_used,rn_norm2\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{},{:e}", r.n, r.residual, r.neumann_terms_used, r.rn_norm2);
    }
    s
}

/// `L^2_mu` norm; shared with the Besov experiments.
pub fn l2_norm(w: &[f64], f: &[f64]) -> f64 {
    lp_norm_weighted(w, f, 2.0).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn identity_kernel_has_unit_norms() {
        let w = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let id = DenseKernel::identity_on_weights(&w);
        for p in [1.0, 2.0, f64::INFINITY] {
            assert!((op_norm(&w, &id, p).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(op_norm(&w, &DenseKernel::zeros(5), 2.0).unwrap(), 0.0);
        assert!(matches!(op_norm(&w, &id, 3.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn norms_scale_with_constant() {
        let w: Vec<f64> = (0..20).map(|i| 0.05 + 0.01 * i as f64).collect();
        let a = DenseKernel(Array2::from_shape_fn((20, 20), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0));
        for p in [1.0, 2.0, f64::INFINITY] {
            let n1 = op_norm(&w, &a, p).unwrap();
            let n2 = op_norm(&w, &a.scale(-3.0), p).unwrap();
            assert!((n2 - 3.0 * n1).abs() < 1e-6 * n2, "p={p}");
        }
    }

    #[test]
    fn neumann_sums_geometric_series() {
        let w = vec![1.0; 3];
        let r = |v: &[f64]| v.iter().map(|x| 0.5 * x).collect::<Vec<_>>();
        let (s, m) = neumann_series(&w, &r, &[1.0, 2.0, 3.0], 200, 1e-12).unwrap();
        assert!((s[2] - 6.0).abs() < 1e-10);
        assert!(m > 30);
        let grow = |v: &[f64]| v.iter().map(|x| 1.5 * x).collect::<Vec<_>>();
        assert!(matches!(neumann_series(&w, &grow, &[1.0], 200, 1e-12), Err(Error::Divergence { terms: 5 })));
    }
}
