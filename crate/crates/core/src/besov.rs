//! Besov norms built from the blocks of a stack, and the experiments
//! around them: equivalence across stacks, column bounds, duality pairing
//! and synthesis.
//!
//! Every quantity is taken over the stack's finite scale range. Random test
//! functions are in-band: `sum_k D_k` applied to white noise.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::approx_id::AIStack;
use crate::calderon::p_label;
use crate::error::{Error, Result};
use crate::grid::{conjugate, lp_norm_weighted};

/// Smoothness and integrability indices `(alpha, p, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesovParams {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
}

impl BesovParams {
    pub fn new(alpha: f64, p: f64, q: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be finite, got {alpha}")));
        }
        for (name, v) in [("p", p), ("q", q)] {
            if !(v >= 1.0) {
                return Err(Error::Parameter(format!("{name} must lie in [1, inf], got {v}")));
            }
        }
        Ok(BesovParams { alpha, p, q })
    }

    /// The dual indices `(-alpha, p', q')`.
    pub fn dual(&self) -> Self {
        BesovParams { alpha: -self.alpha, p: conjugate(self.p), q: conjugate(self.q) }
    }

    /// `|alpha| < eps / 4`.
    pub fn check_admissible(&self, eps: f64) -> Result<()> {
        let limit = eps / 4.0;
        if self.alpha.abs() < limit {
            Ok(())
        } else {
            Err(Error::Admissibility { alpha: self.alpha, limit, eps })
        }
    }
}

/// `l^q` norm of a finite sequence (`q = inf` gives the maximum).
pub fn lq_norm(values: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        values.iter().map(|v| v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// The blocks `D_k f` of a function with its Besov norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LpDecomposition {
    pub blocks: BTreeMap<i32, Vec<f64>>,
    pub params: BesovParams,
    /// `2^{k alpha} ||D_k f||_{L^p_mu}` per scale.
    pub block_norms: BTreeMap<i32, f64>,
    pub norm: f64,
}

impl LpDecomposition {
    /// Recompute the norm from the stored blocks.
    pub fn recompute(&self, w: &[f64]) -> f64 {
        let v: Vec<f64> = self
            .blocks
            .iter()
            .map(|(k, b)| 2f64.powf(*k as f64 * self.params.alpha) * lp_norm_weighted(w, b, self.params.p).unwrap_or(f64::NAN))
            .collect();
        lq_norm(&v, self.params.q)
    }

    /// Rows `alpha,p,q,k,block_norm,total_norm`, without a header.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for (k, b) in &self.block_norms {
            let _ = writeln!(
                s,
                "{},{},{},{k},{b:e},{:e}",
                self.params.alpha,
                p_label(self.params.p),
                p_label(self.params.q),
                self.norm
            );
        }
        s
    }
}

pub const BESOV_CSV_HEADER: &str = "alpha,p,q,k,block_norm,total_norm";

/// Decompose without the admissibility gate.
fn decompose_raw(stack: &AIStack, f: &[f64], params: &BesovParams) -> Result<LpDecomposition> {
    if f.len() != stack.grid().len() {
        return Err(Error::Structural(format!("function has {} values, grid has {} nodes", f.len(), stack.grid().len())));
    }
    let w = stack.weights();
    let mut blocks = BTreeMap::new();
    let mut block_norms = BTreeMap::new();
    for k in stack.scales() {
        let b = stack.apply_d(k, f);
        let v = 2f64.powf(k as f64 * params.alpha) * lp_norm_weighted(w, &b, params.p)?;
        blocks.insert(k, b);
        block_norms.insert(k, v);
    }
    let vals: Vec<f64> = block_norms.values().copied().collect();
    Ok(LpDecomposition { blocks, params: *params, norm: lq_norm(&vals, params.q), block_norms })
}

pub fn decompose(stack: &AIStack, f: &[f64], params: &BesovParams) -> Result<LpDecomposition> {
    params.check_admissible(stack.eps_fit())?;
    decompose_raw(stack, f, params)
}

/// `(sum_k (2^{k alpha} ||D_k f||_p)^q)^{1/q}` over the stack's scales.
pub fn besov_norm(stack: &AIStack, f: &[f64], params: &BesovParams) -> Result<f64> {
    Ok(decompose(stack, f, params)?.norm)
}

fn besov_norm_raw(stack: &AIStack, f: &[f64], params: &BesovParams) -> Result<f64> {
    Ok(decompose_raw(stack, f, params)?.norm)
}

/// White noise in `[-1/2, 1/2)` from stream `index` of `seed`.
pub fn white_noise(n: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
}

/// `sum_k D_k` applied to white noise.
pub fn in_band_noise(stack: &AIStack, seed: u64, index: u64) -> Vec<f64> {
    stack.band_projection(&white_noise(stack.grid().len(), seed, index))
}

/// Per-column ratios of the column-norm experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnNormReport {
    pub params: BesovParams,
    /// `(k, node, ratio)`
    pub samples: Vec<(i32, usize, f64)>,
    pub max_ratio: f64,
}

/// `besov_norm(D_k(x, .)) / (2^{k alpha} V_k(x)^{1/p - 1})` for `samples`
/// random interior nodes per scale.
pub fn column_norm_check(stack: &AIStack, params: &BesovParams, samples: usize, seed: u64) -> Result<ColumnNormReport> {
    params.check_admissible(stack.eps_fit())?;
    let grid = stack.grid();
    let mut picks = Vec::new();
    for k in stack.scales() {
        let mask: Vec<usize> = grid.interior_mask(k).iter().enumerate().filter(|p| *p.1).map(|p| p.0).collect();
        if mask.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1000);
        for _ in 0..samples {
            picks.push((k, mask[rng.gen_range(0..mask.len())]));
        }
    }
    let expo = 1.0 / params.p - 1.0;
    let out: Vec<(i32, usize, f64)> = picks
        .par_iter()
        .map(|&(k, x)| {
            let (cols, vals) = stack.d(k).row(x);
            let mut col = vec![0.0; grid.len()];
            for (j, v) in cols.iter().zip(vals) {
                col[*j] = *v;
            }
            let num = besov_norm_raw(stack, &col, params)?;
            let den = 2f64.powf(k as f64 * params.alpha) * grid.v_k(x, k).powf(expo);
            Ok((k, x, num / den))
        })
        .collect::<Result<_>>()?;
    let max_ratio = out.iter().map(|s| s.2).fold(0.0, f64::max);
    Ok(ColumnNormReport { params: *params, samples: out, max_ratio })
}

fn check_same_grid(a: &AIStack, b: &AIStack) -> Result<()> {
    if std::sync::Arc::ptr_eq(a.grid(), b.grid()) || a.grid().same_discretization(b.grid()) {
        Ok(())
    } else {
        Err(Error::Structural("the two stacks live on different grids".into()))
    }
}

/// `(|f|_A / |f|_B, |f|_B / |f|_A)`.
pub fn norm_equivalence(a: &AIStack, b: &AIStack, f: &[f64], params: &BesovParams) -> Result<(f64, f64)> {
    check_same_grid(a, b)?;
    let na = besov_norm(a, f, params)?;
    let nb = besov_norm(b, f, params)?;
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("zero Besov norm in the equivalence ratio".into()));
    }
    Ok((na / nb, nb / na))
}

/// Norm ratios over an ensemble of in-band functions (noise band-limited
/// with stack `a`).
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub rows: Vec<(usize, f64, f64)>,
}

impl EquivalenceReport {
    pub fn max_ab(&self) -> f64 {
        self.rows.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn max_ba(&self) -> f64 {
        self.rows.iter().map(|r| r.2).fold(0.0, f64::max)
    }

    /// Smallest `K` with both norms within a factor `K` of each other.
    pub fn constant(&self) -> f64 {
        self.max_ab().max(self.max_ba())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,ratio_ab,ratio_ba\n");
        for (i, ab, ba) in &self.rows {
            let _ = writeln!(s, "{i},{ab:e},{ba:e}");
        }
        s
    }
}

pub fn equivalence_ensemble(
    a: &AIStack,
    b: &AIStack,
    params: &BesovParams,
    size: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    check_same_grid(a, b)?;
    params.check_admissible(a.eps_fit())?;
    params.check_admissible(b.eps_fit())?;
    let rows = (0..size)
        .into_par_iter()
        .map(|i| {
            let f = in_band_noise(a, seed, i as u64);
            let (ab, ba) = norm_equivalence(a, b, &f, params)?;
            Ok((i, ab, ba))
        })
        .collect::<Result<_>>()?;
    Ok(EquivalenceReport { rows })
}

/// Empirical constants of the duality pairing experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    /// `max |<f,g>_mu| / (|f|_{alpha,p,q} |g|_{-alpha,p',q'})`
    pub constant: f64,
    /// The same quotient on the diagonal pairs `g = f`.
    pub self_pair_constant: f64,
    pub pairs_used: usize,
}

/// Pairs share a random fraction `c` of their noise, `g = c f + (1-c) h`
/// with `h` independent, so the ensemble runs from independent to equal
/// pairs. Pairs with a vanishing denominator are skipped.
pub fn duality_pairing_check(stack: &AIStack, params: &BesovParams, ensemble: usize, seed: u64) -> Result<DualityReport> {
    params.check_admissible(stack.eps_fit())?;
    let dual = params.dual();
    let w = stack.weights();
    let res: Vec<Option<(f64, f64)>> = (0..ensemble)
        .into_par_iter()
        .map(|i| {
            let f = in_band_noise(stack, seed, 2 * i as u64);
            let h = in_band_noise(stack, seed, 2 * i as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX - i as u64);
            let c: f64 = rng.gen();
            let g: Vec<f64> = f.iter().zip(&h).map(|(a, b)| c * a + (1.0 - c) * b).collect();
            let pair = |u: &[f64], v: &[f64]| -> Result<Option<f64>> {
                let den = besov_norm_raw(stack, u, params)? * besov_norm_raw(stack, v, &dual)?;
                let ip: f64 = u.iter().zip(v).zip(w).map(|((a, b), wi)| a * b * wi).sum();
                Ok((den > 0.0).then(|| ip.abs() / den))
            };
            let r = pair(&f, &g)?;
            let s = pair(&f, &f)?;
            Ok(r.zip(s))
        })
        .collect::<Result<_>>()?;
    let used: Vec<(f64, f64)> = res.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::DegenerateInput("every pairing sample had a zero denominator".into()));
    }
    Ok(DualityReport {
        constant: used.iter().map(|u| u.0).fold(0.0, f64::max),
        self_pair_constant: used.iter().map(|u| u.1).fold(0.0, f64::max),
        pairs_used: used.len(),
    })
}

/// `g = sum_k D_k g_k` and `|g|_{alpha,p,q} / |{2^{k alpha} ||g_k||_p}|_{l^q}`.
pub fn lp_synthesis(stack: &AIStack, gk: &BTreeMap<i32, Vec<f64>>, params: &BesovParams) -> Result<(Vec<f64>, f64)> {
    params.check_admissible(stack.eps_fit())?;
    let w = stack.weights();
    let n = stack.grid().len();
    let mut g = vec![0.0; n];
    let mut seq = Vec::new();
    for (&k, v) in gk {
        if !stack.scales().contains(&k) {
            return Err(Error::ScaleOutOfRange { k, reason: "no block D_k at this scale".into() });
        }
        if v.len() != n {
            return Err(Error::Structural(format!("g_{k} has {} values, grid has {n} nodes", v.len())));
        }
        seq.push(2f64.powf(k as f64 * params.alpha) * lp_norm_weighted(w, v, params.p)?);
        for (a, b) in g.iter_mut().zip(stack.apply_d(k, v)) {
            *a += b;
        }
    }
    let den = lq_norm(&seq, params.q);
    if den == 0.0 {
        return Err(Error::DegenerateInput("all g_k vanish".into()));
    }
    let num = besov_norm_raw(stack, &g, params)?;
    Ok((g, num / den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lq_monotone_in_q() {
        let v = [3.0, -1.0, 0.5, 2.0];
        let mut prev = f64::INFINITY;
        for q in [1.0, 1.5, 2.0, 4.0, 10.0, f64::INFINITY] {
            let n = lq_norm(&v, q);
            assert!(n <= prev + 1e-12);
            prev = n;
        }
        assert_eq!(lq_norm(&v, f64::INFINITY), 3.0);
        assert_eq!(lq_norm(&v, 1.0), 6.5);
    }

    #[test]
    fn params_validation() {
        assert!(BesovParams::new(0.0, 0.5, 2.0).is_err());
        assert!(BesovParams::new(f64::NAN, 2.0, 2.0).is_err());
        let p = BesovParams::new(0.1, 1.0, f64::INFINITY).unwrap();
        let d = p.dual();
        assert_eq!((d.alpha, d.p, d.q), (-0.1, f64::INFINITY, 1.0));
        assert!(p.check_admissible(0.5).is_ok());
        assert!(matches!(p.check_admissible(0.4), Err(Error::Admissibility { .. })));
    }
}
