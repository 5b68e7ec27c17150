//! Coifman's construction of an approximation to the identity adapted to the
//! sections, and the Littlewood-Paley blocks `D_k = S_k - S_{k-1}`.
//!
//! Scale `k` has section height `2^-k`: `T_k(x, y) = psi(2^k rho_bar(x, y))`
//! and `S_k = M T W T M` with `M = 1 / T(1)` and `W = 1 / T(M)`. Both
//! multipliers are taken from the discrete operators, so every row and
//! column of `S_k` integrates to one against the grid weights up to
//! rounding.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit;
use crate::geometry::{quasi_triangle_constant, Point};
use crate::grid::DiscretizedDomain;
use crate::kernel::{DenseKernel, KernelMatrix, WeightedOperator};

/// Smooth cut-off: one on `[0, r1]`, zero on `[r2, inf)`, quintic
/// smoothstep in between (C^2 at both junctions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpProfile {
    r1: f64,
    r2: f64,
}

impl Default for BumpProfile {
    fn default() -> Self {
        BumpProfile { r1: 1.0, r2: 2.0 }
    }
}

impl BumpProfile {
    /// `0 < r1 < r2 <= 2`. The upper limit keeps the support of `S_k`
    /// inside `S(x, A0 2^{2-k})`.
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        if !(r1 > 0.0 && r1 < r2 && r2 <= 2.0) {
            return Err(Error::Parameter(format!("bump needs 0 < r1 < r2 <= 2, got r1={r1}, r2={r2}")));
        }
        Ok(BumpProfile { r1, r2 })
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::Parameter(format!("bump argument must be >= 0, got {r}")));
        }
        Ok(self.eval_unchecked(r))
    }

    #[inline]
    fn eval_unchecked(&self, r: f64) -> f64 {
        if r <= self.r1 {
            1.0
        } else if r >= self.r2 {
            0.0
        } else {
            let u = (r - self.r1) / (self.r2 - self.r1);
            1.0 - u * u * u * (10.0 + u * (6.0 * u - 15.0))
        }
    }
}

/// The default profile (`r1 = 1`, `r2 = 2`).
pub fn bump(r: f64) -> Result<f64> {
    BumpProfile::default().eval(r)
}

fn check_scale(grid: &DiscretizedDomain, k: i32) -> Result<()> {
    if grid.interior_mask(k).iter().any(|&m| m) {
        Ok(())
    } else {
        Err(Error::ScaleOutOfRange {
            k,
            reason: format!("no node has S(x, 2^{}) inside the domain", 1 - k),
        })
    }
}

/// `T_k(i, j) = psi(2^k rho_bar(x_i, x_j))`.
pub fn assemble_tk(grid: &DiscretizedDomain, k: i32) -> Result<KernelMatrix> {
    assemble_tk_with(grid, &BumpProfile::default(), k)
}

pub fn assemble_tk_with(grid: &DiscretizedDomain, profile: &BumpProfile, k: i32) -> Result<KernelMatrix> {
    check_scale(grid, k)?;
    let scale = 2f64.powi(k);
    let n = grid.len();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter_map(|j| {
                    let v = profile.eval_unchecked(scale * grid.rho_bar(i, j));
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect();
    Ok(KernelMatrix::from_rows(rows))
}

/// `S_k = M T W T M`.
pub fn assemble_sk(grid: &DiscretizedDomain, k: i32) -> Result<KernelMatrix> {
    assemble_sk_with(grid, &BumpProfile::default(), k)
}

pub fn assemble_sk_with(grid: &DiscretizedDomain, profile: &BumpProfile, k: i32) -> Result<KernelMatrix> {
    let t = assemble_tk_with(grid, profile, k)?;
    Ok(coifman(grid, &t, k)?)
}

fn coifman(grid: &DiscretizedDomain, t: &KernelMatrix, k: i32) -> Result<KernelMatrix> {
    let w = grid.weights();
    let n = grid.len();
    let t1 = t.apply(w, &vec![1.0; n]);
    if let Some(i) = t1.iter().position(|&v| v <= 0.0) {
        return Err(Error::ScaleOutOfRange { k, reason: format!("T_k(1) vanishes at node {i}") });
    }
    let m: Vec<f64> = t1.iter().map(|v| 1.0 / v).collect();
    let tm = t.apply(w, &m);
    let c: Vec<f64> = tm.iter().zip(w).map(|(v, wz)| wz / v).collect();
    // S(i,j) = (M_i M_j) sum_z c_z (T_iz T_zj); the factor order makes the
    // result exactly symmetric
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; n];
            let mut touched = vec![false; n];
            let mut cols = Vec::new();
            let (zc, zv) = t.row(i);
            for (&z, &tiz) in zc.iter().zip(zv) {
                let (jc, jv) = t.row(z);
                for (&j, &tzj) in jc.iter().zip(jv) {
                    acc[j] += c[z] * (tiz * tzj);
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                }
            }
            cols.sort_unstable();
            cols.into_iter().map(|j| (j, (m[i] * m[j]) * acc[j])).collect()
        })
        .collect();
    Ok(KernelMatrix::from_rows(rows))
}

/// The family `S_{k_min - 1}, ..., S_{k_max}` with its blocks
/// `D_{k_min}, ..., D_{k_max}`.
#[derive(Debug, Clone)]
pub struct AIStack {
    grid: Arc<DiscretizedDomain>,
    profile: BumpProfile,
    k_min: i32,
    k_max: i32,
    s: Vec<KernelMatrix>,
    d: Vec<KernelMatrix>,
    eps_fit: f64,
    a0: f64,
}

/// Seed of the sampling behind the stack's fitted exponent.
const EPS_FIT_SEED: u64 = 0x5eed_e95f;
const EPS_FIT_SAMPLES: usize = 600;
/// Upper end of `2^k rho_bar(x, x')` used for the exponent fit.
const EPS_FIT_RANGE: f64 = 0.25;

/// Largest resolvable range of scales on a grid.
///
/// `k_max`: the plateau `S(x, 2^-k)` must span at least four cells.
/// `k_min`: the support of `T_{k_min - 1}` must have Euclidean radius at
/// most a quarter of the shortest box side. Radii use the extreme Hessian
/// eigenvalues over the nodes.
pub fn admissible_scale_range(grid: &DiscretizedDomain) -> Result<(i32, i32)> {
    let (k_min, k_max) = scale_limits(grid)?;
    if k_min > k_max {
        return Err(Error::Resolution(format!(
            "no resolvable scale: need k >= {k_min} for the boundary and k <= {k_max} for the grid"
        )));
    }
    Ok((k_min, k_max))
}

/// The two limits behind [`admissible_scale_range`], returned even when
/// they cross on a coarse grid.
pub fn scale_limits(grid: &DiscretizedDomain) -> Result<(i32, i32)> {
    let (lmin, lmax) = grid.hessian_bounds();
    if !(lmin > 0.0) {
        return Err(Error::Unsupported("scale range needs a strictly convex potential".into()));
    }
    let dim = grid.dim();
    let dom = grid.potential().domain();
    let h = (0..dim).map(|a| grid.cell_size()[a]).fold(0.0, f64::max);
    let width = (0..dim).map(|a| dom.side(a)).fold(f64::INFINITY, f64::min);
    // sqrt(2 * 2^-k / lmax) >= 4h
    let k_max = (2.0 / (lmax * 16.0 * h * h)).log2().floor() as i32;
    // sqrt(2 * 2^{2-k} / lmin) <= width / 4
    let k_min = (8.0 * 16.0 / (lmin * width * width)).log2().ceil() as i32;
    Ok((k_min, k_max))
}

pub fn build_stack(grid: Arc<DiscretizedDomain>, k_min: i32, k_max: i32) -> Result<AIStack> {
    build_stack_with(grid, BumpProfile::default(), k_min, k_max)
}

pub fn build_stack_with(
    grid: Arc<DiscretizedDomain>,
    profile: BumpProfile,
    k_min: i32,
    k_max: i32,
) -> Result<AIStack> {
    if k_min > k_max {
        return Err(Error::Parameter(format!("empty scale range {k_min}..{k_max}")));
    }
    let s: Vec<KernelMatrix> = (k_min - 1..=k_max)
        .map(|k| assemble_sk_with(&grid, &profile, k))
        .collect::<Result<_>>()?;
    let d = s.windows(2).map(|p| p[1].combine(1.0, &p[0], -1.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(EPS_FIT_SEED);
    let a0 = quasi_triangle_constant(&grid, 4000, &mut rng).max(1.0);
    let mut stack = AIStack { grid, profile, k_min, k_max, s, d, eps_fit: 0.0, a0 };
    stack.eps_fit = stack.fit_exponent()?;
    Ok(stack)
}

impl AIStack {
    pub fn grid(&self) -> &Arc<DiscretizedDomain> {
        &self.grid
    }

    pub fn profile(&self) -> &BumpProfile {
        &self.profile
    }

    pub fn k_min(&self) -> i32 {
        self.k_min
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    /// Scales carrying a block `D_k`.
    pub fn scales(&self) -> std::ops::RangeInclusive<i32> {
        self.k_min..=self.k_max
    }

    pub fn num_scales(&self) -> usize {
        (self.k_max - self.k_min + 1) as usize
    }

    /// Fitted Holder exponent of the family (in `rho_bar` units).
    pub fn eps_fit(&self) -> f64 {
        self.eps_fit
    }

    /// Quasi-triangle constant used by the support bounds.
    pub fn a0(&self) -> f64 {
        self.a0
    }

    /// `S_k` for `k_min - 1 <= k <= k_max`.
    pub fn s(&self, k: i32) -> &KernelMatrix {
        assert!(k >= self.k_min - 1 && k <= self.k_max, "S_{k} outside the stack");
        &self.s[(k - self.k_min + 1) as usize]
    }

    /// `D_k` for `k_min <= k <= k_max`.
    pub fn d(&self, k: i32) -> &KernelMatrix {
        assert!(self.scales().contains(&k), "D_{k} outside the stack");
        &self.d[(k - self.k_min) as usize]
    }

    pub fn weights(&self) -> &[f64] {
        self.grid.weights()
    }

    /// `D_k f`.
    pub fn apply_d(&self, k: i32, f: &[f64]) -> Vec<f64> {
        self.d(k).apply(self.weights(), f)
    }

    /// `(S_{k_max} - S_{k_min - 1}) f`, the sum of all blocks.
    pub fn band_projection(&self, f: &[f64]) -> Vec<f64> {
        let a = self.s(self.k_max).apply(self.weights(), f);
        let b = self.s(self.k_min - 1).apply(self.weights(), f);
        a.iter().zip(&b).map(|(x, y)| x - y).collect()
    }

    pub fn d_dense(&self, k: i32) -> DenseKernel {
        self.d(k).to_dense()
    }

    pub fn s_dense(&self, k: i32) -> DenseKernel {
        self.s(k).to_dense()
    }

    /// Test hook: overwrite one stored entry of `S_k` (and the blocks built
    /// from it are left untouched). Used to exercise failure paths.
    #[doc(hidden)]
    pub fn perturb_s_entry(&mut self, k: i32, i: usize, j: usize, delta: f64) -> bool {
        let idx = (k - self.k_min + 1) as usize;
        let v = self.s[idx].get(i, j);
        self.s[idx].set(i, j, v + delta)
    }

    /// `V_k` at every node.
    pub fn v_k_all(&self, k: i32) -> Vec<f64> {
        let g = &self.grid;
        (0..g.len()).into_par_iter().map(|i| g.v_k(i, k)).collect()
    }

    fn fit_exponent(&self) -> Result<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for k in self.k_min - 1..=self.k_max {
            let mut rng = ChaCha8Rng::seed_from_u64(EPS_FIT_SEED);
            rng.set_stream(k as u64 + 1000);
            let vk = self.v_k_all(k);
            for hs in holder_samples(self, k, &vk, EPS_FIT_SAMPLES, 1e-3, EPS_FIT_RANGE, &mut rng) {
                if hs.quotient > 0.0 {
                    xs.push(hs.scaled_dist.ln());
                    ys.push(hs.quotient.ln());
                }
            }
        }
        let (slope, _) = fit::envelope_fit(&xs, &ys, 12)
            .ok_or_else(|| Error::InsufficientData("too few Holder samples for the exponent fit".into()))?;
        Ok(slope.clamp(1e-3, 1.0))
    }
}

/// A sampled Holder increment in the first variable.
#[derive(Debug, Clone, Copy)]
pub struct HolderSample {
    pub x: usize,
    pub xp: usize,
    pub y: usize,
    /// `2^k rho_bar(x, x')`
    pub scaled_dist: f64,
    /// `|S_k(x,y) - S_k(x',y)| (V_k(x) + V_k(y))`
    pub quotient: f64,
}

/// A node at roughly `rho_bar(x, .) = tau` in a random direction, from the
/// local quadratic model of `phi`.
pub(crate) fn node_at_height(grid: &DiscretizedDomain, x: usize, tau: f64, rng: &mut ChaCha8Rng) -> Option<usize> {
    let p = grid.node(x);
    let h = grid.potential().hess(p);
    let u: Point = if grid.dim() == 1 {
        [if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, 0.0]
    } else {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        [a.cos(), a.sin()]
    };
    let q = 0.5 * (h[0][0] * u[0] * u[0] + 2.0 * h[0][1] * u[0] * u[1] + h[1][1] * u[1] * u[1]);
    let r = (tau / q).sqrt();
    let target = [p[0] + r * u[0], p[1] + r * u[1]];
    if !grid.potential().domain().contains(grid.dim(), &target) {
        return None;
    }
    let j = grid.nearest_node(&target);
    (j != x).then_some(j)
}

fn random_member(row: (&[usize], &[f64]), rng: &mut ChaCha8Rng) -> Option<usize> {
    (!row.0.is_empty()).then(|| row.0[rng.gen_range(0..row.0.len())])
}

/// Holder increments of `S_k` with `2^k rho_bar(x, x')` log-uniform in
/// `[lo, hi]` and `x` in the interior mask.
pub(crate) fn holder_samples(
    stack: &AIStack,
    k: i32,
    vk: &[f64],
    count: usize,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<HolderSample> {
    let grid = &stack.grid;
    let mask: Vec<usize> = grid.interior_mask(k).iter().enumerate().filter(|p| *p.1).map(|p| p.0).collect();
    if mask.is_empty() {
        return Vec::new();
    }
    let sk = stack.s(k);
    let scale = 2f64.powi(k);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 4 {
        if out.len() == count {
            break;
        }
        let x = mask[rng.gen_range(0..mask.len())];
        let tau = (lo.ln() + rng.gen::<f64>() * (hi / lo).ln()).exp() / scale;
        let Some(xp) = node_at_height(grid, x, tau, rng) else { continue };
        let Some(y) = random_member(sk.row(x), rng) else { continue };
        let q = (sk.get(x, y) - sk.get(xp, y)).abs() * (vk[x] + vk[y]);
        out.push(HolderSample { x, xp, y, scaled_dist: scale * grid.rho_bar(x, xp), quotient: q });
    }
    out
}

/// One line of the property report.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyLine {
    pub property: &'static str,
    pub k: i32,
    pub constant: f64,
    pub exponent: f64,
    pub max_violation: f64,
}

/// Measured constants of the approximation-to-identity properties.
#[derive(Debug, Clone, PartialEq)]
pub struct AIPropertyReport {
    pub lines: Vec<PropertyLine>,
}

/// Property names whose `max_violation` must vanish up to rounding.
pub const EXACT_PROPERTIES: [&str; 5] = ["symmetry", "support", "row_integral", "column_integral", "d_constant"];

impl AIPropertyReport {
    pub fn worst(&self, property: &str) -> f64 {
        self.lines.iter().filter(|l| l.property == property).map(|l| l.max_violation).fold(0.0, f64::max)
    }

    pub fn max_constant(&self, property: &str) -> f64 {
        self.lines.iter().filter(|l| l.property == property).map(|l| l.constant).fold(0.0, f64::max)
    }

    /// Whether every exact identity holds within `tol`.
    pub fn exact_identities_hold(&self, tol: f64) -> bool {
        EXACT_PROPERTIES.iter().all(|p| self.worst(p) <= tol)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("property,scale_k,constant,exponent,max_violation\n");
        for l in &self.lines {
            let _ = writeln!(s, "{},{},{:e},{:e},{:e}", l.property, l.k, l.constant, l.exponent, l.max_violation);
        }
        s
    }
}

/// Measure properties (i)-(vii) of every `S_k` in the stack and the
/// cancellation of every `D_k`.
///
/// Exact identities are checked on all rows of the interior mask. Size,
/// Holder and second-difference constants use `samples` random triples per
/// scale; Holder constants are reported at the stack's fitted exponent.
pub fn verify_ai_properties(stack: &AIStack, samples: usize, seed: u64) -> AIPropertyReport {
    let grid = &stack.grid;
    let w = grid.weights();
    let n = grid.len();
    let eps = stack.eps_fit;
    let mut lines = Vec::new();
    for k in stack.k_min - 1..=stack.k_max {
        let sk = stack.s(k);
        let mask = grid.interior_mask(k);
        let vk = stack.v_k_all(k);
        let scale = 2f64.powi(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1000);

        lines.push(PropertyLine {
            property: "symmetry",
            k,
            constant: 0.0,
            exponent: 0.0,
            max_violation: sk.max_asymmetry(),
        });

        let radius = stack.a0 * 2f64.powi(2 - k);
        let (mut outside, mut size) = (0.0f64, 0.0f64);
        for i in (0..n).filter(|&i| mask[i]) {
            let (c, v) = sk.row(i);
            for (&j, &x) in c.iter().zip(v) {
                if grid.rho_bar(i, j) > radius {
                    outside = outside.max(x.abs());
                }
                size = size.max(x.abs() * (vk[i] + vk[j]));
            }
        }
        lines.push(PropertyLine { property: "support", k, constant: radius, exponent: 0.0, max_violation: outside });
        lines.push(PropertyLine { property: "size", k, constant: size, exponent: 0.0, max_violation: 0.0 });

        let hs = holder_samples(stack, k, &vk, samples, 1e-3, 4.0, &mut rng);
        let (xs, ys): (Vec<f64>, Vec<f64>) = hs
            .iter()
            .filter(|h| h.quotient > 0.0 && h.scaled_dist <= EPS_FIT_RANGE)
            .map(|h| (h.scaled_dist.ln(), h.quotient.ln()))
            .unzip();
        let local_eps = fit::envelope_fit(&xs, &ys, 8).map(|f| f.0).unwrap_or(f64::NAN);
        let holder_c = hs.iter().map(|h| h.quotient / h.scaled_dist.powf(eps)).fold(0.0, f64::max);
        lines.push(PropertyLine { property: "holder_x", k, constant: holder_c, exponent: local_eps, max_violation: 0.0 });
        // same samples read through the second variable; S_k is symmetric
        let holder_y = hs
            .iter()
            .map(|h| (sk.get(h.y, h.x) - sk.get(h.y, h.xp)).abs() * (vk[h.x] + vk[h.y]) / h.scaled_dist.powf(eps))
            .fold(0.0, f64::max);
        lines.push(PropertyLine { property: "holder_y", k, constant: holder_y, exponent: local_eps, max_violation: 0.0 });

        let mut second = 0.0f64;
        for h in &hs {
            let tau = (1e-3f64.ln() + rng.gen::<f64>() * 4000f64.ln()).exp() / scale;
            let Some(yp) = node_at_height(grid, h.y, tau, &mut rng) else { continue };
            let dd = sk.get(h.x, h.y) - sk.get(h.xp, h.y) - sk.get(h.x, yp) + sk.get(h.xp, yp);
            let den = (h.scaled_dist * scale * grid.rho_bar(h.y, yp)).powf(eps);
            second = second.max(dd.abs() * (vk[h.x] + vk[h.y]) / den);
        }
        lines.push(PropertyLine { property: "second_difference", k, constant: second, exponent: eps, max_violation: 0.0 });

        let rows = sk.row_integrals(w);
        let cols = sk.col_integrals(w);
        let dev = |v: &[f64]| (0..n).filter(|&i| mask[i]).map(|i| (v[i] - 1.0).abs()).fold(0.0, f64::max);
        lines.push(PropertyLine { property: "row_integral", k, constant: 1.0, exponent: 0.0, max_violation: dev(&rows) });
        lines.push(PropertyLine { property: "column_integral", k, constant: 1.0, exponent: 0.0, max_violation: dev(&cols) });

        if k >= stack.k_min {
            let d1 = stack.apply_d(k, &vec![1.0; n]);
            let worst = (0..n).filter(|&i| mask[i]).map(|i| d1[i].abs()).fold(0.0, f64::max);
            lines.push(PropertyLine { property: "d_constant", k, constant: 0.0, exponent: 0.0, max_violation: worst });
        }
    }
    AIPropertyReport { lines }
}
