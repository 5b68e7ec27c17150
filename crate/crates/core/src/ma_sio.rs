//! Monge-Ampere singular integrals `H = sum_i H_i` built from kernel
//! families `{k_i}` indexed by section height `2^i`, the measured
//! constants of conditions (D1)-(D7), affine normalization of sections and
//! the boundedness experiments.
//!
//! The families are built from a stack: `D^#_k = D_{-k}` has height `2^k`,
//! so family index `i` corresponds to stack scale `-i`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::approx_id::AIStack;
use crate::besov::{besov_norm, in_band_noise, BesovParams};
use crate::calderon::{l2_norm, op_norm, p_label};
use crate::error::{Error, Result};
use crate::fit;
use crate::geometry::{section_members, Point};
use crate::grid::DiscretizedDomain;
use crate::kernel::{DenseKernel, KernelMatrix, WeightedOperator};

/// Affine map `T(y) = M y + b` normalizing a section:
/// `B(0, r_in) ⊆ T(S) ⊆ B(0, 1)` with `r_in = 1/n`, checked on grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionNormalizer {
    pub center: Point,
    pub scale_t: f64,
    pub matrix: [[f64; 2]; 2],
    pub offset: Point,
    pub inner_radius: f64,
    dim: usize,
}

impl SectionNormalizer {
    pub fn map(&self, y: &Point) -> Point {
        let m = &self.matrix;
        if self.dim == 1 {
            return [m[0][0] * y[0] + self.offset[0], 0.0];
        }
        [
            m[0][0] * y[0] + m[0][1] * y[1] + self.offset[0],
            m[1][0] * y[0] + m[1][1] * y[1] + self.offset[1],
        ]
    }

    /// `|T(u) - T(v)|`
    pub fn distance(&self, u: &Point, v: &Point) -> f64 {
        let (a, b) = (self.map(u), self.map(v));
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// `M^{-1} e`: the displacement whose image is `e`.
    pub fn preimage_step(&self, e: &Point) -> Point {
        let m = &self.matrix;
        if self.dim == 1 {
            return [e[0] / m[0][0], 0.0];
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [(m[1][1] * e[0] - m[0][1] * e[1]) / det, (-m[1][0] * e[0] + m[0][0] * e[1]) / det]
    }
}

fn norm2(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

/// `C^{-1/2}` for a symmetric positive definite 2x2 matrix.
fn inv_sqrt_sym(c: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let (a, b, d) = (c[0][0], c[0][1], c[1][1]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    if !(l2 > 0.0) {
        return None;
    }
    // eigenvector of l1
    let (vx, vy) = if b.abs() > 1e-300 { (l1 - d, b) } else if a >= d { (1.0, 0.0) } else { (0.0, 1.0) };
    let n = (vx * vx + vy * vy).sqrt();
    let (ux, uy) = (vx / n, vy / n);
    let (s1, s2) = (1.0 / l1.sqrt(), 1.0 / l2.sqrt());
    // V diag(s1, s2) V^T with V = [u, u_perp]
    Some([
        [s1 * ux * ux + s2 * uy * uy, (s1 - s2) * ux * uy],
        [(s1 - s2) * ux * uy, s1 * uy * uy + s2 * ux * ux],
    ])
}

/// Affine normalization of `S(x, t)`.
///
/// In 1D the extreme member nodes go to `-1` and `1`. In 2D the map comes
/// from the inertia ellipse of the member nodes (a uniform ellipse
/// `c + A B(0,1)` has covariance `A A^T / 4`), rescaled so every member
/// lands in the unit disk; the construction fails if a non-member node
/// falls inside the disk of radius 1/2.
pub fn normalize_section(grid: &DiscretizedDomain, x: &Point, t: f64) -> Result<SectionNormalizer> {
    let members = section_members(grid, x, t)?;
    if grid.reach_of(x) < t {
        return Err(Error::Normalization(format!("S({:?}, {t}) leaves the domain", &x[..grid.dim()])));
    }
    let dim = grid.dim();
    if members.len() < dim + 1 {
        return Err(Error::Resolution(format!(
            "S({:?}, {t}) holds {} grid nodes, need at least {}",
            &x[..dim],
            members.len(),
            dim + 1
        )));
    }
    let pts: Vec<Point> = members.iter().map(|&j| *grid.node(j)).collect();
    let mut is_member = vec![false; grid.len()];
    members.iter().for_each(|&j| is_member[j] = true);
    let norm = if dim == 1 {
        let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::Resolution(format!("S({}, {t}) spans a single node column", x[0])));
        }
        SectionNormalizer {
            center: *x,
            scale_t: t,
            matrix: [[2.0 / (hi - lo), 0.0], [0.0, 0.0]],
            offset: [-(hi + lo) / (hi - lo), 0.0],
            inner_radius: 1.0,
            dim,
        }
    } else {
        let m = pts.len() as f64;
        let c = [pts.iter().map(|p| p[0]).sum::<f64>() / m, pts.iter().map(|p| p[1]).sum::<f64>() / m];
        let mut cov = [[0.0; 2]; 2];
        for p in &pts {
            let d = [p[0] - c[0], p[1] - c[1]];
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += d[a] * d[b] / m;
                }
            }
        }
        // A = 2 C^{1/2}, so A^{-1} = C^{-1/2} / 2
        let l = inv_sqrt_sym(cov)
            .ok_or_else(|| Error::Resolution(format!("S({:?}, {t}) is flat on the grid", &x[..2])))?;
        let apply = |d: [f64; 2]| [0.5 * (l[0][0] * d[0] + l[0][1] * d[1]), 0.5 * (l[1][0] * d[0] + l[1][1] * d[1])];
        let s = pts.iter().map(|p| norm2(&apply([p[0] - c[0], p[1] - c[1]]))).fold(0.0, f64::max);
        let mm = [[0.5 * l[0][0] / s, 0.5 * l[0][1] / s], [0.5 * l[1][0] / s, 0.5 * l[1][1] / s]];
        let offset = [-(mm[0][0] * c[0] + mm[0][1] * c[1]), -(mm[1][0] * c[0] + mm[1][1] * c[1])];
        SectionNormalizer { center: *x, scale_t: t, matrix: mm, offset, inner_radius: 0.5, dim }
    };
    // sandwich on the grid
    for (j, p) in grid.nodes().iter().enumerate() {
        let r = norm2(&norm.map(p));
        if is_member[j] && r > 1.0 + 1e-12 {
            return Err(Error::Normalization(format!("member node {j} maps outside the unit ball")));
        }
        if !is_member[j] && r < norm.inner_radius {
            return Err(Error::Normalization(format!(
                "node {j} outside S maps inside B(0, {})",
                norm.inner_radius
            )));
        }
    }
    Ok(norm)
}

/// Which family of kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// `k_i = s_i D_{-i}`
    Canonical,
    /// `k_i = s_i (S_{-i} - S'_{-i-1})` with `S'` from a stack using another
    /// bump profile.
    TwoBump,
    /// `k_i = s_i (D_{-i} + MEAN_SHIFT S_{-i})`: cancellation deliberately
    /// broken.
    MeanShifted,
}

/// Mean added to every kernel of the negative-control family.
pub const MEAN_SHIFT: f64 = 0.1;

const MEASURE_SEED: u64 = 0xd6d7_5eed;
const MEASURE_SAMPLES: usize = 300;
/// Upper end of `|T(u) - T(v)|` used for the `gamma` fit.
const GAMMA_FIT_RANGE: f64 = 0.25;

/// Kernels `k_i`, `i_lo <= i <= i_hi`, with their measured constants.
#[derive(Debug, Clone)]
pub struct MAKernelFamily {
    kind: FamilyKind,
    stack: Arc<AIStack>,
    i_lo: i32,
    i_hi: i32,
    signs: Vec<f64>,
    kernels: Vec<KernelMatrix>,
    kernels_t: Vec<KernelMatrix>,
    /// `C` with `supp k_i(x, .) ⊆ S(x, C 2^i)`.
    pub support_constant: f64,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps1: f64,
}

/// Seeded random signs.
pub fn random_signs(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

/// Family indices available from a stack: `-k_max ..= -k_min`.
pub fn family_range(stack: &AIStack) -> (i32, i32) {
    (-stack.k_max(), -stack.k_min())
}

fn check_family_args(stack: &AIStack, signs: &[f64], i_range: (i32, i32)) -> Result<()> {
    let (lo, hi) = family_range(stack);
    if i_range.0 > i_range.1 || i_range.0 < lo || i_range.1 > hi {
        return Err(Error::Parameter(format!(
            "family range {}..={} must lie inside {lo}..={hi}",
            i_range.0, i_range.1
        )));
    }
    let count = (i_range.1 - i_range.0 + 1) as usize;
    if signs.len() != count {
        return Err(Error::Parameter(format!("{} signs given for {count} kernels", signs.len())));
    }
    if signs.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::Parameter("signs must be +1 or -1".into()));
    }
    Ok(())
}

pub fn build_canonical_family(stack: &Arc<AIStack>, signs: &[f64], i_range: (i32, i32)) -> Result<MAKernelFamily> {
    check_family_args(stack, signs, i_range)?;
    let kernels = (i_range.0..=i_range.1)
        .zip(signs)
        .map(|(i, s)| stack.d(-i).combine(*s, stack.d(-i), 0.0))
        .collect();
    MAKernelFamily::assemble(FamilyKind::Canonical, stack, signs, i_range, kernels)
}

pub fn build_two_bump_family(
    stack: &Arc<AIStack>,
    other: &AIStack,
    signs: &[f64],
    i_range: (i32, i32),
) -> Result<MAKernelFamily> {
    check_family_args(stack, signs, i_range)?;
    if !stack.grid().same_discretization(other.grid()) || other.k_min() > stack.k_min() || other.k_max() < stack.k_max() {
        return Err(Error::Structural("second stack must share the grid and cover the scales".into()));
    }
    let kernels = (i_range.0..=i_range.1)
        .zip(signs)
        .map(|(i, s)| stack.s(-i).combine(*s, other.s(-i - 1), -*s))
        .collect();
    MAKernelFamily::assemble(FamilyKind::TwoBump, stack, signs, i_range, kernels)
}

pub fn build_mean_shifted_family(stack: &Arc<AIStack>, signs: &[f64], i_range: (i32, i32)) -> Result<MAKernelFamily> {
    check_family_args(stack, signs, i_range)?;
    let kernels = (i_range.0..=i_range.1)
        .zip(signs)
        .map(|(i, s)| stack.d(-i).combine(*s, stack.s(-i), *s * MEAN_SHIFT))
        .collect();
    MAKernelFamily::assemble(FamilyKind::MeanShifted, stack, signs, i_range, kernels)
}

impl MAKernelFamily {
    fn assemble(
        kind: FamilyKind,
        stack: &Arc<AIStack>,
        signs: &[f64],
        i_range: (i32, i32),
        kernels: Vec<KernelMatrix>,
    ) -> Result<Self> {
        let kernels_t = kernels.iter().map(|k| k.transpose()).collect();
        let mut fam = MAKernelFamily {
            kind,
            stack: stack.clone(),
            i_lo: i_range.0,
            i_hi: i_range.1,
            signs: signs.to_vec(),
            kernels,
            kernels_t,
            // S_{-i-1} reaches rho_bar < A0 2^{3+i}
            support_constant: 8.0 * stack.a0(),
            gamma: 0.0,
            c1: 0.0,
            c2: 0.0,
            eps1: 0.0,
        };
        let w = stack.weights();
        fam.c1 = fam
            .kernels
            .iter()
            .map(|k| {
                let r = op_norm(w, k, f64::INFINITY).unwrap_or(f64::NAN);
                let c = op_norm(w, k, 1.0).unwrap_or(f64::NAN);
                r.max(c)
            })
            .fold(0.0, f64::max);
        let q = fam.holder_quotients(MEASURE_SAMPLES, MEASURE_SEED);
        let (gamma, c2) = fit_gamma(&q)?;
        fam.gamma = gamma;
        fam.c2 = c2;
        fam.eps1 = eps1_proxy(stack.grid(), MEASURE_SAMPLES / 2, MEASURE_SEED)?;
        Ok(fam)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn stack(&self) -> &Arc<AIStack> {
        &self.stack
    }

    pub fn i_range(&self) -> (i32, i32) {
        (self.i_lo, self.i_hi)
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i32> {
        self.i_lo..=self.i_hi
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn kernel(&self, i: i32) -> &KernelMatrix {
        &self.kernels[(i - self.i_lo) as usize]
    }

    fn kernel_t(&self, i: i32) -> &KernelMatrix {
        &self.kernels_t[(i - self.i_lo) as usize]
    }

    /// `K = sum_i k_i` as one kernel.
    pub fn h_matrix(&self) -> KernelMatrix {
        let mut acc = self.kernels[0].clone();
        for k in &self.kernels[1..] {
            acc = acc.combine(1.0, k, 1.0);
        }
        acc
    }

    /// Kernel of the adjoint family `k_i(y, x)`.
    pub fn h_transpose_matrix(&self) -> KernelMatrix {
        self.h_matrix().transpose()
    }

    /// `admissible |alpha|` bound `min(eps, gamma eps1) / 4`.
    pub fn alpha_limit(&self) -> f64 {
        self.smoothness() / 4.0
    }

    /// `min(eps, gamma eps1)` with the stack's fitted `eps`.
    pub fn smoothness(&self) -> f64 {
        self.stack.eps_fit().min(self.gamma * self.eps1)
    }

    /// Holder quotients for (D6) (`transpose = false`, increments in the
    /// first variable, normalizing `S(y, 2^i)`) or (D7).
    fn holder_quotients_one(&self, transpose: bool, samples: usize, seed: u64) -> Vec<(i32, f64, f64)> {
        let grid = self.stack.grid();
        let mut out = Vec::new();
        for i in self.indices() {
            let t = 2f64.powi(i);
            // k_i(., y) is row y of the transpose
            let along = if transpose { self.kernel(i) } else { self.kernel_t(i) };
            let centers: Vec<usize> = (0..grid.len()).filter(|&y| grid.reach(y) >= t).collect();
            if centers.is_empty() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((i + 10_000) as u64 * 2 + transpose as u64);
            let mut got = 0;
            for _ in 0..samples * 4 {
                if got == samples {
                    break;
                }
                let y = centers[rng.gen_range(0..centers.len())];
                let Ok(norm) = normalize_section(grid, grid.node(y), t) else { continue };
                let (cols, _) = along.row(y);
                if cols.is_empty() {
                    continue;
                }
                let u = cols[rng.gen_range(0..cols.len())];
                let delta = (1e-2f64.ln() + rng.gen::<f64>() * 200f64.ln()).exp();
                let e: Point = if grid.dim() == 1 {
                    [if rng.gen_bool(0.5) { delta } else { -delta }, 0.0]
                } else {
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    [delta * a.cos(), delta * a.sin()]
                };
                let step = norm.preimage_step(&e);
                let pu = grid.node(u);
                let target = [pu[0] + step[0], pu[1] + step[1]];
                if !grid.potential().domain().contains(grid.dim(), &target) {
                    continue;
                }
                let v = grid.nearest_node(&target);
                if v == u {
                    continue;
                }
                let mu = grid.section_measure_of_node(y, t);
                let diff = (along.get(y, u) - along.get(y, v)).abs();
                out.push((i, norm.distance(pu, grid.node(v)), diff * mu));
                got += 1;
            }
        }
        out
    }

    fn holder_quotients(&self, samples: usize, seed: u64) -> Vec<(i32, f64, f64)> {
        let mut q = self.holder_quotients_one(false, samples, seed);
        q.extend(self.holder_quotients_one(true, samples, seed));
        q
    }
}

/// `gamma` from the envelope of the normalized Holder quotients at small
/// distances, and `c2 = max quotient / distance^gamma`.
fn fit_gamma(q: &[(i32, f64, f64)]) -> Result<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = q
        .iter()
        .filter(|s| s.1 <= GAMMA_FIT_RANGE && s.2 > 0.0)
        .map(|s| (s.1.ln(), s.2.ln()))
        .unzip();
    let (slope, _) = fit::envelope_fit(&xs, &ys, 10)
        .ok_or_else(|| Error::InsufficientData("too few Holder quotients for gamma".into()))?;
    let gamma = slope.clamp(1e-3, 1.0);
    let c2 = q.iter().map(|s| s.2 / s.1.powf(gamma)).fold(0.0, f64::max);
    Ok((gamma, c2))
}

/// Exponent `eps1` of condition (A), measured: for `x ∈ S(x0, t0)` and
/// `t = t0 2^-m`, the radius of `T(S(x, t))` under the normalization `T`
/// of `S(x0, t0)` is fitted against `t / t0` by its upper envelope.
pub fn eps1_proxy(grid: &DiscretizedDomain, samples: usize, seed: u64) -> Result<f64> {
    let dim = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_reach = (0..grid.len()).map(|i| grid.reach(i)).fold(0.0, f64::max);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..samples * 4 {
        if xs.len() >= samples * 6 {
            break;
        }
        let x0 = rng.gen_range(0..grid.len());
        let t0 = grid.reach(x0).min(0.5 * max_reach) * rng.gen_range(0.3..1.0);
        if !(t0 > 0.0) {
            continue;
        }
        let big = grid.section_of_node(x0, t0);
        if big.len() < 16 * dim * dim {
            continue;
        }
        let Ok(norm) = normalize_section(grid, grid.node(x0), t0) else { continue };
        let x = big[rng.gen_range(0..big.len())];
        for m in 1..=16 {
            let t = t0 * 2f64.powi(-m);
            if grid.reach(x) < t {
                continue;
            }
            let small = grid.section_of_node(x, t);
            if small.len() < 4 * dim * dim {
                break;
            }
            let mapped: Vec<Point> = small.iter().map(|&j| norm.map(grid.node(j))).collect();
            let c = [
                mapped.iter().map(|p| p[0]).sum::<f64>() / mapped.len() as f64,
                mapped.iter().map(|p| p[1]).sum::<f64>() / mapped.len() as f64,
            ];
            let r = mapped.iter().map(|p| norm2(&[p[0] - c[0], p[1] - c[1]])).fold(0.0, f64::max);
            if r > 0.0 {
                xs.push((t / t0).ln());
                ys.push(r.ln());
            }
        }
    }
    let (slope, _) = fit::envelope_fit(&xs, &ys, 10)
        .ok_or_else(|| Error::InsufficientData("too few nested sections for the eps1 fit".into()))?;
    Ok(slope.clamp(1e-3, 1.0))
}

/// One line of the (D1)-(D7) report; `i = None` marks family-wide values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionLine {
    pub condition: &'static str,
    pub i: Option<i32>,
    pub constant: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DConditionReport {
    pub lines: Vec<ConditionLine>,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps1: f64,
}

impl DConditionReport {
    pub fn worst(&self, condition: &str) -> f64 {
        self.lines.iter().filter(|l| l.condition == condition).map(|l| l.max_violation).fold(0.0, f64::max)
    }

    /// Per-condition verdicts: supports exact, cancellation within `tol`,
    /// finite constants and `0 < gamma <= 1`.
    pub fn verdicts(&self, tol: f64) -> BTreeMap<&'static str, bool> {
        let finite = |v: f64| v.is_finite() && v > 0.0;
        let mut m = BTreeMap::new();
        m.insert("D1", self.worst("D1") == 0.0);
        m.insert("D2", self.worst("D2") == 0.0);
        m.insert("D3", self.worst("D3") <= tol);
        m.insert("D4", finite(self.c1));
        m.insert("D5", finite(self.c1));
        m.insert("D6", finite(self.c2) && self.gamma > 0.0 && self.gamma <= 1.0);
        m.insert("D7", finite(self.c2) && self.gamma > 0.0 && self.gamma <= 1.0);
        m
    }

    pub fn all_pass(&self, tol: f64) -> bool {
        self.verdicts(tol).values().all(|&v| v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("condition,i,constant,max_violation\n");
        for l in &self.lines {
            let i = l.i.map_or("all".to_string(), |i| i.to_string());
            let _ = writeln!(s, "{},{i},{:e},{:e}", l.condition, l.constant, l.max_violation);
        }
        s
    }
}

/// Measure (D1)-(D7) for every kernel of the family.
///
/// (D1)-(D3) are checked on every node; (D6)/(D7) use `samples` random
/// increments per kernel and per variable.
pub fn verify_d_conditions(family: &MAKernelFamily, samples: usize, seed: u64) -> Result<DConditionReport> {
    let grid = family.stack.grid();
    let w = grid.weights();
    let n = grid.len();
    let mut lines = Vec::new();
    let q = family.holder_quotients(samples, seed);
    let (gamma, _) = fit_gamma(&q)?;
    let mut c1_all = 0.0f64;
    let mut c2_all = 0.0f64;
    for i in family.indices() {
        let radius = family.support_constant * 2f64.powi(i);
        for (name, k) in [("D1", family.kernel_t(i)), ("D2", family.kernel(i))] {
            // row x of k lists k(x, .), row y of the transpose lists k(., y)
            let worst = (0..n)
                .into_par_iter()
                .map(|x| {
                    let (c, v) = k.row(x);
                    c.iter()
                        .zip(v)
                        .filter(|(j, _)| grid.rho_bar(x, **j) >= radius)
                        .fold(0.0f64, |m, (_, val)| m.max(val.abs()))
                })
                .reduce(|| 0.0, f64::max);
            lines.push(ConditionLine { condition: name, i: Some(i), constant: family.support_constant, max_violation: worst });
        }
        let k = family.kernel(i);
        let rows = k.row_integrals(w);
        let cols = k.col_integrals(w);
        let cancel = rows.iter().chain(&cols).fold(0.0f64, |m, v| m.max(v.abs()));
        lines.push(ConditionLine { condition: "D3", i: Some(i), constant: 0.0, max_violation: cancel });
        let c4 = op_norm(w, k, f64::INFINITY)?;
        let c5 = op_norm(w, k, 1.0)?;
        c1_all = c1_all.max(c4).max(c5);
        lines.push(ConditionLine { condition: "D4", i: Some(i), constant: c4, max_violation: 0.0 });
        lines.push(ConditionLine { condition: "D5", i: Some(i), constant: c5, max_violation: 0.0 });
        for (name, half) in [("D6", 0usize), ("D7", 1)] {
            let part = if half == 0 { &q[..q.len() / 2] } else { &q[q.len() / 2..] };
            let c = part.iter().filter(|s| s.0 == i).map(|s| s.2 / s.1.powf(gamma)).fold(0.0, f64::max);
            c2_all = c2_all.max(c);
            lines.push(ConditionLine { condition: name, i: Some(i), constant: c, max_violation: 0.0 });
        }
    }
    let eps1 = eps1_proxy(grid, samples / 2 + 1, seed)?;
    lines.push(ConditionLine { condition: "c1", i: None, constant: c1_all, max_violation: 0.0 });
    lines.push(ConditionLine { condition: "c2", i: None, constant: c2_all, max_violation: 0.0 });
    lines.push(ConditionLine { condition: "gamma", i: None, constant: gamma, max_violation: 0.0 });
    lines.push(ConditionLine { condition: "eps1", i: None, constant: eps1, max_violation: 0.0 });
    Ok(DConditionReport { lines, gamma, c1: c1_all, c2: c2_all, eps1 })
}

/// `H f = sum_i H_i f`.
pub fn apply_h(family: &MAKernelFamily, f: &[f64]) -> Vec<f64> {
    let w = family.stack.weights();
    let mut out = vec![0.0; f.len()];
    for k in &family.kernels {
        for (o, v) in out.iter_mut().zip(k.apply(w, f)) {
            *o += v;
        }
    }
    out
}

/// Adjoint `H* f = sum_i k_i(y, x)` applied to `f`.
pub fn apply_h_adjoint(family: &MAKernelFamily, f: &[f64]) -> Vec<f64> {
    let w = family.stack.weights();
    let mut out = vec![0.0; f.len()];
    for k in &family.kernels_t {
        for (o, v) in out.iter_mut().zip(k.apply(w, f)) {
            *o += v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct L2BoundReport {
    /// `max ||H f|| / ||f||` over the ensemble
    pub max_ratio: f64,
    /// `||H||` on `L^2_mu` by power iteration
    pub op_norm2: f64,
}

pub fn l2_bound_experiment(family: &MAKernelFamily, ensemble: usize, seed: u64) -> Result<L2BoundReport> {
    let stack = &family.stack;
    let w = stack.weights();
    let max_ratio = (0..ensemble)
        .into_par_iter()
        .map(|i| {
            let f = in_band_noise(stack, seed, i as u64);
            let nf = l2_norm(w, &f);
            if nf == 0.0 {
                0.0
            } else {
                l2_norm(w, &apply_h(family, &f)) / nf
            }
        })
        .reduce(|| 0.0, f64::max);
    let op_norm2 = op_norm(w, &family.h_matrix(), 2.0)?;
    Ok(L2BoundReport { max_ratio, op_norm2 })
}

/// Result of one Besov boundedness run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub params: BesovParams,
    pub seed: u64,
    pub ratio: f64,
}

pub const BOUNDS_CSV_HEADER: &str = "alpha,p,q,seed,ratio";

impl BoundRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e}\n",
            self.params.alpha,
            p_label(self.params.p),
            p_label(self.params.q),
            self.seed,
            self.ratio
        )
    }
}

/// `max |Hf|_{alpha,p,q} / |f|_{alpha,p,q}` over in-band functions.
/// Requires `|alpha| < min(eps, gamma eps1) / 4` with measured constants.
pub fn besov_bound_experiment(
    family: &MAKernelFamily,
    stack: &AIStack,
    params: &BesovParams,
    ensemble: usize,
    seed: u64,
) -> Result<BoundRow> {
    let smooth = stack.eps_fit().min(family.gamma * family.eps1);
    if params.alpha.abs() >= smooth / 4.0 {
        return Err(Error::Admissibility { alpha: params.alpha, limit: smooth / 4.0, eps: smooth });
    }
    let ratios: Vec<f64> = (0..ensemble)
        .into_par_iter()
        .map(|i| {
            let f = in_band_noise(stack, seed, i as u64);
            let den = besov_norm(stack, &f, params)?;
            if den == 0.0 {
                return Ok(0.0);
            }
            Ok(besov_norm(stack, &apply_h(family, &f), params)? / den)
        })
        .collect::<Result<_>>()?;
    Ok(BoundRow { params: *params, seed, ratio: ratios.into_iter().fold(0.0, f64::max) })
}

/// Decay fit for one of the six orderings of `(k, k', j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseFit {
    pub case: usize,
    pub ordering: &'static str,
    /// `(k, k', j, ||D#_k H_j D#_k'||_1)`
    pub samples: Vec<(i32, i32, i32, f64)>,
    /// `-slope` of `log2` norm against the spread `max - min` of the triple.
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseReport {
    /// Largest normalized entry of `D#_k H D#_k'` for each pair.
    pub pair_max: BTreeMap<(i32, i32), f64>,
    pub decay_exponent: f64,
    pub tail_exponent: f64,
    pub diagonal_dominates: bool,
    pub cases: Vec<CaseFit>,
}

impl PointwiseReport {
    pub fn max_by_distance(&self) -> BTreeMap<i32, f64> {
        let mut m = BTreeMap::new();
        for ((k, kp), v) in &self.pair_max {
            let e = m.entry((k - kp).abs()).or_insert(0.0f64);
            *e = e.max(*v);
        }
        m
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,a,b,c,value\n");
        for ((k, kp), v) in &self.pair_max {
            let _ = writeln!(s, "pair,{k},{kp},,{v:e}");
        }
        for c in &self.cases {
            for (k, kp, j, v) in &c.samples {
                let _ = writeln!(s, "case{},{k},{kp},{j},{v:e}", c.case);
            }
            let _ = writeln!(s, "case{}_exponent,,,,{:e}", c.case, c.exponent);
        }
        let _ = writeln!(s, "decay_exponent,,,,{:e}", self.decay_exponent);
        let _ = writeln!(s, "tail_exponent,,,,{:e}", self.tail_exponent);
        s
    }
}

const CASE_NAMES: [&str; 6] = ["j<=k<k'", "j<k'<=k", "k'<=k<j", "k<k'<=j", "k<=j<=k'", "k'<j<k"];

/// Case of the triple: the first ordering that matches, tried in a fixed order.
pub fn ordering_case(k: i32, kp: i32, j: i32) -> usize {
    if j <= k && k < kp {
        1
    } else if j < kp && kp <= k {
        2
    } else if kp <= k && k < j {
        3
    } else if k < kp && kp <= j {
        4
    } else if k <= j && j <= kp {
        5
    } else {
        6
    }
}

/// At most `count` entries of `items`, evenly spaced.
fn evenly_spaced(items: &[usize], count: usize) -> Vec<usize> {
    if count >= items.len() {
        return items.to_vec();
    }
    let mut out: Vec<usize> = (0..count).map(|s| items[s * items.len() / count]).collect();
    out.dedup();
    out
}

/// Sorted `rho_bar(x, .)` with cumulative weights, for `mu(S(x, r))`.
struct MeasureTable {
    dist: Vec<f64>,
    cum: Vec<f64>,
}

impl MeasureTable {
    fn new(grid: &DiscretizedDomain, x: usize) -> Self {
        let mut pairs: Vec<(f64, f64)> = (0..grid.len()).map(|j| (grid.rho_bar(x, j), grid.weight(j))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for p in &pairs {
            acc += p.1;
            cum.push(acc);
        }
        MeasureTable { dist: pairs.into_iter().map(|p| p.0).collect(), cum }
    }

    /// `mu(S(x, r))` (strict inequality).
    fn measure(&self, r: f64) -> f64 {
        let idx = self.dist.partition_point(|&d| d < r);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }
}

/// Pointwise almost orthogonality of `D#_k H D#_k'` with `D#_k = D_{-k}`.
///
/// Entries are multiplied by `V(x) + V(y) + mu(S(x, rho_bar(x,y)))`,
/// `V = mu(S(., 2^{max(k,k')}))`, on at most `rows` evenly spaced interior
/// base points per pair.
/// `per_case` triples are used for each ordering of `(k, k', j)`.
pub fn pointwise_ao_check(family: &MAKernelFamily, stack: &AIStack, rows: usize, per_case: usize) -> Result<PointwiseReport> {
    if stack.num_scales() < 3 {
        return Err(Error::InsufficientData("pointwise check needs at least 3 scales".into()));
    }
    let grid = stack.grid();
    let w = stack.weights();
    let (lo, hi) = family_range(stack);
    let ks: Vec<i32> = (lo..=hi).collect();
    let sharp: BTreeMap<i32, DenseKernel> = ks.iter().map(|&k| (k, stack.d_dense(-k))).collect();
    let h = family.h_matrix().to_dense();
    let hd: BTreeMap<i32, DenseKernel> = ks.iter().map(|&k| (k, h.compose(&sharp[&k], w))).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(MEASURE_SEED);
    let heights: BTreeMap<i32, Vec<f64>> = ks
        .iter()
        .map(|&m| {
            let t = 2f64.powi(m);
            (m, (0..grid.len()).into_par_iter().map(|y| grid.section_measure_of_node(y, t)).collect())
        })
        .collect();
    let mut tables: BTreeMap<usize, MeasureTable> = BTreeMap::new();
    let mut pair_max = BTreeMap::new();
    let mut tail_pts = (Vec::new(), Vec::new());
    let central = ks[ks.len() / 2];
    for &k in &ks {
        for &kp in &ks {
            let m = k.max(kp);
            let t = 2f64.powi(m);
            let prod = sharp[&k].compose(&hd[&kp], w);
            let base: Vec<usize> = (0..grid.len()).filter(|&x| grid.reach(x) >= t).collect();
            let base = if base.is_empty() { (0..grid.len()).collect() } else { base };
            let picks = evenly_spaced(&base, rows);
            for &x in &picks {
                tables.entry(x).or_insert_with(|| MeasureTable::new(grid, x));
            }
            let v = &heights[&m];
            let keep_tail = k == central && kp == central;
            let per_row: Vec<(f64, Vec<(f64, f64)>)> = picks
                .par_iter()
                .map(|&x| {
                    let tab = &tables[&x];
                    let mut best = 0.0f64;
                    let mut tail = Vec::new();
                    for y in 0..grid.len() {
                        let e = prod.get(x, y).abs();
                        if e == 0.0 {
                            continue;
                        }
                        let r = grid.rho_bar(x, y);
                        let val = e * (v[x] + v[y] + tab.measure(r));
                        best = best.max(val);
                        if keep_tail {
                            tail.push(((r / t).ln_1p(), val.ln()));
                        }
                    }
                    (best, tail)
                })
                .collect();
            let mut best = 0.0f64;
            for (b, tail) in per_row {
                best = best.max(b);
                for (a, c) in tail {
                    tail_pts.0.push(a);
                    tail_pts.1.push(c);
                }
            }
            pair_max.insert((k, kp), best);
        }
    }
    let mut by_d: BTreeMap<i32, f64> = BTreeMap::new();
    for ((k, kp), v) in &pair_max {
        let e = by_d.entry((k - kp).abs()).or_insert(0.0f64);
        *e = e.max(*v);
    }
    let (dx, dy): (Vec<f64>, Vec<f64>) = by_d.iter().filter(|p| *p.1 > 0.0).map(|(d, v)| (*d as f64, v.log2())).unzip();
    let decay_exponent = -fit::least_squares(&dx, &dy).map(|f| f.0).unwrap_or(f64::NAN);
    let tail_exponent = -fit::envelope_fit(&tail_pts.0, &tail_pts.1, 10).map(|f| f.0).unwrap_or(f64::NAN);
    let diag = by_d.get(&0).copied().unwrap_or(0.0);
    let off = by_d.iter().filter(|p| *p.0 > 0).map(|p| *p.1).fold(0.0, f64::max);

    // six orderings of (k, k', j)
    let mut triples: Vec<Vec<(i32, i32, i32)>> = vec![Vec::new(); 6];
    for &k in &ks {
        for &kp in &ks {
            for j in family.indices() {
                triples[ordering_case(k, kp, j) - 1].push((k, kp, j));
            }
        }
    }
    let mut cases = Vec::new();
    for (ci, mut list) in triples.into_iter().enumerate() {
        list.shuffle(&mut rng);
        let spread = |t: &(i32, i32, i32)| t.0.max(t.1).max(t.2) - t.0.min(t.1).min(t.2);
        list.sort_by_key(spread);
        let chosen: Vec<(i32, i32, i32)> = if list.len() <= per_case {
            list
        } else {
            (0..per_case).map(|s| list[s * (list.len() - 1) / (per_case - 1).max(1)]).collect()
        };
        let mut samples = Vec::new();
        for (k, kp, j) in chosen {
            let hj = family.kernel(j).to_dense();
            let prod = sharp[&k].compose(&hj.compose(&sharp[&kp], w), w);
            samples.push((k, kp, j, op_norm(w, &prod, 1.0)?));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = samples
            .iter()
            .filter(|s| s.3 > 0.0)
            .map(|s| ((s.0.max(s.1).max(s.2) - s.0.min(s.1).min(s.2)) as f64, s.3.log2()))
            .unzip();
        let exponent = -fit::least_squares(&xs, &ys).map(|f| f.0).unwrap_or(f64::NAN);
        cases.push(CaseFit { case: ci + 1, ordering: CASE_NAMES[ci], samples, exponent });
    }
    Ok(PointwiseReport { pair_max, decay_exponent, tail_exponent, diagonal_dominates: diag >= off, cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_sqrt_of_diagonal_and_rotated() {
        let m = inv_sqrt_sym([[4.0, 0.0], [0.0, 9.0]]).unwrap();
        assert!((m[0][0] - 0.5).abs() < 1e-14 && (m[1][1] - 1.0 / 3.0).abs() < 1e-14);
        let c = [[2.0, 1.0], [1.0, 2.0]];
        let m = inv_sqrt_sym(c).unwrap();
        // m c m = I
        let mc = [
            [m[0][0] * c[0][0] + m[0][1] * c[1][0], m[0][0] * c[0][1] + m[0][1] * c[1][1]],
            [m[1][0] * c[0][0] + m[1][1] * c[1][0], m[1][0] * c[0][1] + m[1][1] * c[1][1]],
        ];
        let id00 = mc[0][0] * m[0][0] + mc[0][1] * m[1][0];
        let id01 = mc[0][0] * m[0][1] + mc[0][1] * m[1][1];
        assert!((id00 - 1.0).abs() < 1e-12 && id01.abs() < 1e-12);
        assert!(inv_sqrt_sym([[1.0, 1.0], [1.0, 1.0]]).is_none());
    }

    #[test]
    fn cases_cover_every_triple() {
        let mut seen = [0usize; 6];
        for k in -3..=3 {
            for kp in -3..=3 {
                for j in -3..=3 {
                    seen[ordering_case(k, kp, j) - 1] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
        assert_eq!(ordering_case(0, 0, 0), 5);
        assert_eq!(ordering_case(0, 1, -1), 1);
        assert_eq!(ordering_case(2, 1, 0), 2);
        assert_eq!(ordering_case(1, 0, 2), 3);
        assert_eq!(ordering_case(0, 1, 2), 4);
        assert_eq!(ordering_case(2, 0, 1), 6);
    }

    #[test]
    fn random_signs_are_deterministic() {
        assert_eq!(random_signs(9, 4), random_signs(9, 4));
        assert!(random_signs(50, 1).iter().all(|s| s.abs() == 1.0));
    }
}
