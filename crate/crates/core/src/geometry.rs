//! Convex potentials and the geometry they generate.
//!
//! A strictly convex potential `phi` on a box induces the asymmetric
//! distance `rho(x, y) = phi(y) - phi(x) - <grad phi(x), y - x>`, its
//! symmetrization `rho_bar`, the sections `S(x, t) = {y : rho_bar(x, y) < t}`
//! and the Monge-Ampere measure `det D^2 phi dx`. Everything downstream is
//! expressed through these objects.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fit;
use crate::grid::DiscretizedDomain;

/// A point of the plane; 1D problems use the first coordinate only.
pub type Point = [f64; 2];

/// Symmetric 2x2 matrix, row-major.
pub type Sym2 = [[f64; 2]; 2];

/// Shorthand for a one-dimensional point.
pub fn pt1(x: f64) -> Point {
    [x, 0.0]
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBox {
    pub lower: Point,
    pub upper: Point,
}

impl DomainBox {
    pub fn new_1d(lo: f64, hi: f64) -> Self {
        DomainBox { lower: [lo, 0.0], upper: [hi, 0.0] }
    }

    pub fn new_2d(lower: Point, upper: Point) -> Self {
        DomainBox { lower, upper }
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn contains(&self, dim: usize, p: &Point) -> bool {
        (0..dim).all(|a| p[a] >= self.lower[a] && p[a] <= self.upper[a])
    }

    fn is_valid(&self, dim: usize) -> bool {
        (0..dim).all(|a| self.lower[a].is_finite() && self.upper[a].is_finite() && self.side(a) > 0.0)
    }
}

type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&Point) -> Sym2 + Send + Sync>;

/// User-supplied potential with explicit derivatives.
#[derive(Clone)]
pub struct CustomPotential {
    pub phi: ScalarFn,
    pub grad: VectorFn,
    pub hess: MatrixFn,
}

/// The potential catalogue.
#[derive(Clone)]
pub enum PotentialKind {
    /// `|x|^2 / 2`
    Quadratic,
    /// `x^2/2 + x^4/12` in every coordinate.
    QuarticReg,
    /// `x1^2/2 + x2^2/2 + x2^4/12` (2D only).
    Anisotropic2d,
    /// `x^4` in every coordinate; Hessian degenerates at the origin.
    QuarticPure,
    Custom(CustomPotential),
}

impl fmt::Debug for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PotentialKind::Quadratic => "Quadratic",
            PotentialKind::QuarticReg => "QuarticReg",
            PotentialKind::Anisotropic2d => "Anisotropic2d",
            PotentialKind::QuarticPure => "QuarticPure",
            PotentialKind::Custom(_) => "Custom",
        };
        f.write_str(s)
    }
}

/// Convex potential on a box: `phi`, its gradient and Hessian.
#[derive(Debug, Clone)]
pub struct ConvexPotential {
    dim: usize,
    domain: DomainBox,
    kind: PotentialKind,
    allow_degenerate: bool,
}

impl ConvexPotential {
    /// Build a catalogue potential by name.
    ///
    /// `quartic_pure` is rejected unless `allow_degenerate` is set.
    pub fn from_name(name: &str, dim: usize, domain: DomainBox, allow_degenerate: bool) -> Result<Self> {
        let kind = match name {
            "quadratic" => PotentialKind::Quadratic,
            "quartic_reg" => PotentialKind::QuarticReg,
            "anisotropic2d" => PotentialKind::Anisotropic2d,
            "quartic_pure" => PotentialKind::QuarticPure,
            other => return Err(Error::Parameter(format!("unknown potential '{other}'"))),
        };
        Self::new(kind, dim, domain, allow_degenerate)
    }

    pub fn new(kind: PotentialKind, dim: usize, domain: DomainBox, allow_degenerate: bool) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Parameter(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !domain.is_valid(dim) {
            return Err(Error::Parameter("empty or non-finite domain box".into()));
        }
        if matches!(kind, PotentialKind::Anisotropic2d) && dim != 2 {
            return Err(Error::Parameter("anisotropic2d is two-dimensional".into()));
        }
        if matches!(kind, PotentialKind::QuarticPure) && !allow_degenerate {
            return Err(Error::Parameter(
                "quartic_pure has a degenerate Hessian; enable the degenerate override".into(),
            ));
        }
        Ok(ConvexPotential { dim, domain, kind, allow_degenerate })
    }

    pub fn quadratic(dim: usize, domain: DomainBox) -> Result<Self> {
        Self::new(PotentialKind::Quadratic, dim, domain, false)
    }

    pub fn quartic_reg(dim: usize, domain: DomainBox) -> Result<Self> {
        Self::new(PotentialKind::QuarticReg, dim, domain, false)
    }

    pub fn anisotropic2d(domain: DomainBox) -> Result<Self> {
        Self::new(PotentialKind::Anisotropic2d, 2, domain, false)
    }

    pub fn quartic_pure(dim: usize, domain: DomainBox) -> Result<Self> {
        Self::new(PotentialKind::QuarticPure, dim, domain, true)
    }

    pub fn custom(dim: usize, domain: DomainBox, custom: CustomPotential) -> Result<Self> {
        Self::new(PotentialKind::Custom(custom), dim, domain, false)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    /// Whether non-positive Hessian determinants are tolerated.
    pub fn allows_degenerate(&self) -> bool {
        self.allow_degenerate
    }

    pub fn phi(&self, x: &Point) -> f64 {
        let d = self.dim;
        match &self.kind {
            PotentialKind::Quadratic => (0..d).map(|a| 0.5 * x[a] * x[a]).sum(),
            PotentialKind::QuarticReg => (0..d).map(|a| quartic_reg_1d(x[a]).0).sum(),
            PotentialKind::Anisotropic2d => 0.5 * x[0] * x[0] + quartic_reg_1d(x[1]).0,
            PotentialKind::QuarticPure => (0..d).map(|a| x[a].powi(4)).sum(),
            PotentialKind::Custom(c) => (c.phi)(x),
        }
    }

    pub fn grad(&self, x: &Point) -> Point {
        let mut g = [0.0; 2];
        match &self.kind {
            PotentialKind::Quadratic => {
                for a in 0..self.dim {
                    g[a] = x[a];
                }
            }
            PotentialKind::QuarticReg => {
                for a in 0..self.dim {
                    g[a] = quartic_reg_1d(x[a]).1;
                }
            }
            PotentialKind::Anisotropic2d => {
                g[0] = x[0];
                g[1] = quartic_reg_1d(x[1]).1;
            }
            PotentialKind::QuarticPure => {
                for a in 0..self.dim {
                    g[a] = 4.0 * x[a].powi(3);
                }
            }
            PotentialKind::Custom(c) => {
                g = (c.grad)(x);
                if self.dim == 1 {
                    g[1] = 0.0;
                }
            }
        }
        g
    }

    pub fn hess(&self, x: &Point) -> Sym2 {
        let mut h = [[0.0; 2]; 2];
        match &self.kind {
            PotentialKind::Quadratic => {
                for a in 0..self.dim {
                    h[a][a] = 1.0;
                }
            }
            PotentialKind::QuarticReg => {
                for a in 0..self.dim {
                    h[a][a] = quartic_reg_1d(x[a]).2;
                }
            }
            PotentialKind::Anisotropic2d => {
                h[0][0] = 1.0;
                h[1][1] = quartic_reg_1d(x[1]).2;
            }
            PotentialKind::QuarticPure => {
                for a in 0..self.dim {
                    h[a][a] = 12.0 * x[a] * x[a];
                }
            }
            PotentialKind::Custom(c) => {
                h = (c.hess)(x);
                if self.dim == 1 {
                    h[0][1] = 0.0;
                    h[1][0] = 0.0;
                    h[1][1] = 0.0;
                }
            }
        }
        h
    }

    /// `det D^2 phi(x)` without domain or positivity checks.
    pub fn density_unchecked(&self, x: &Point) -> f64 {
        let h = self.hess(x);
        if self.dim == 1 {
            h[0][0]
        } else {
            h[0][0] * h[1][1] - h[0][1] * h[1][0]
        }
    }

    /// Smallest and largest Hessian eigenvalue at `x`.
    pub fn hess_eigen_range(&self, x: &Point) -> (f64, f64) {
        let h = self.hess(x);
        if self.dim == 1 {
            return (h[0][0], h[0][0]);
        }
        let tr = h[0][0] + h[1][1];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        (0.5 * tr - disc, 0.5 * tr + disc)
    }

    pub(crate) fn check_inside(&self, x: &Point) -> Result<()> {
        if self.domain.contains(self.dim, x) {
            Ok(())
        } else {
            Err(Error::Domain { point: x[..self.dim].to_vec() })
        }
    }

    /// Largest relative disagreement between the supplied derivatives and
    /// centered finite differences of `phi` at random interior points.
    pub fn derivative_consistency(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let mut x = [0.0; 2];
            for a in 0..d {
                let lo = self.domain.lower[a];
                let hi = self.domain.upper[a];
                let m = 0.05 * (hi - lo);
                x[a] = rng.gen_range(lo + m..hi - m);
            }
            let scale = (0..d).map(|a| self.domain.side(a)).fold(0.0, f64::max);
            let h1 = 1e-5 * scale;
            let h2 = 1e-4 * scale;
            let g = self.grad(&x);
            let hs = self.hess(&x);
            let gnorm = (0..d).map(|a| g[a] * g[a]).sum::<f64>().sqrt().max(1.0);
            let hnorm = (0..d)
                .flat_map(|a| (0..d).map(move |b| (a, b)))
                .map(|(a, b)| hs[a][b] * hs[a][b])
                .sum::<f64>()
                .sqrt()
                .max(1.0);
            for a in 0..d {
                let (xp, xm) = (shift(&x, a, h1), shift(&x, a, -h1));
                let fd = (self.phi(&xp) - self.phi(&xm)) / (2.0 * h1);
                worst = worst.max((fd - g[a]).abs() / gnorm);
                for b in 0..d {
                    let fd2 = if a == b {
                        let (xp, xm) = (shift(&x, a, h2), shift(&x, a, -h2));
                        (self.phi(&xp) - 2.0 * self.phi(&x) + self.phi(&xm)) / (h2 * h2)
                    } else {
                        let pp = shift(&shift(&x, a, h2), b, h2);
                        let pm = shift(&shift(&x, a, h2), b, -h2);
                        let mp = shift(&shift(&x, a, -h2), b, h2);
                        let mm = shift(&shift(&x, a, -h2), b, -h2);
                        (self.phi(&pp) - self.phi(&pm) - self.phi(&mp) + self.phi(&mm)) / (4.0 * h2 * h2)
                    };
                    worst = worst.max((fd2 - hs[a][b]).abs() / hnorm);
                }
            }
        }
        worst
    }
}

fn shift(x: &Point, axis: usize, h: f64) -> Point {
    let mut y = *x;
    y[axis] += h;
    y
}

/// `(phi, phi', phi'')` of `x^2/2 + x^4/12`.
fn quartic_reg_1d(x: f64) -> (f64, f64, f64) {
    let x2 = x * x;
    (0.5 * x2 + x2 * x2 / 12.0, x + x2 * x / 3.0, 1.0 + x2)
}

/// `rho(x, y) = phi(y) - phi(x) - <grad phi(x), y - x>`.
pub fn rho(pot: &ConvexPotential, x: &Point, y: &Point) -> Result<f64> {
    pot.check_inside(x)?;
    pot.check_inside(y)?;
    let g = pot.grad(x);
    let lin: f64 = (0..pot.dim()).map(|a| g[a] * (y[a] - x[a])).sum();
    Ok(pot.phi(y) - pot.phi(x) - lin)
}

/// Symmetrized distance `(rho(x, y) + rho(y, x)) / 2`.
pub fn rho_bar(pot: &ConvexPotential, x: &Point, y: &Point) -> Result<f64> {
    Ok(0.5 * (rho(pot, x, y)? + rho(pot, y, x)?))
}

/// Same value as [`rho_bar`] from gradients alone:
/// `rho(x,y) + rho(y,x) = <grad phi(y) - grad phi(x), y - x>`.
#[inline]
pub(crate) fn rho_bar_from_grads(dim: usize, x: &Point, gx: &Point, y: &Point, gy: &Point) -> f64 {
    let mut s = (gy[0] - gx[0]) * (y[0] - x[0]);
    if dim == 2 {
        s += (gy[1] - gx[1]) * (y[1] - x[1]);
    }
    0.5 * s
}

/// Monge-Ampere density `det D^2 phi(x)`.
pub fn ma_density(pot: &ConvexPotential, x: &Point) -> Result<f64> {
    pot.check_inside(x)?;
    let det = pot.density_unchecked(x);
    if det > 0.0 || (pot.allows_degenerate() && det >= 0.0) {
        Ok(det)
    } else {
        Err(Error::StrictConvexity { point: x[..pot.dim()].to_vec(), det })
    }
}

/// Indices of grid nodes in the section `S(x, t)`.
pub fn section_members(grid: &DiscretizedDomain, x: &Point, t: f64) -> Result<Vec<usize>> {
    if !(t > 0.0) {
        return Err(Error::Parameter(format!("section height must be positive, got {t}")));
    }
    let pot = grid.potential();
    pot.check_inside(x)?;
    let gx = pot.grad(x);
    let d = grid.dim();
    Ok((0..grid.len())
        .filter(|&j| rho_bar_from_grads(d, x, &gx, grid.node(j), grid.grad_at(j)) < t)
        .collect())
}

/// `mu(S(x, t))` as a weighted count of member nodes.
pub fn section_measure(grid: &DiscretizedDomain, x: &Point, t: f64) -> Result<f64> {
    Ok(section_members(grid, x, t)?.iter().map(|&j| grid.weight(j)).sum())
}

/// Empirical structural constants of the sections on a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionConstants {
    /// Quasi-triangle constant of `rho_bar`.
    pub a0: f64,
    /// Engulfing constant.
    pub theta: f64,
    /// `sup mu(S(x,2t)) / mu(S(x,t))` over sections inside the domain.
    pub doubling: f64,
    /// Fitted regularity exponent of `rho_bar`.
    pub eps_reg: f64,
    pub sample_count: usize,
}

/// Sections used for the doubling estimate must hold this many nodes, so
/// that the counting error of the midpoint rule stays near one percent.
pub const MIN_DOUBLING_MEMBERS: usize = 128;

const MIN_VALID_SAMPLES: usize = 10;

/// Estimate `A0`, `theta`, the doubling constant and the regularity
/// exponent of `rho_bar` by sampling grid nodes.
pub fn estimate_constants(grid: &DiscretizedDomain, samples: usize, seed: u64) -> Result<SectionConstants> {
    if samples < 100 {
        return Err(Error::Parameter(format!("need at least 100 samples, got {samples}")));
    }
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let a0 = quasi_triangle_constant(grid, samples, &mut rng);

    // engulfing: tau = max_{z in S(y,t)} rho_bar(x, z) / t
    let mut theta: f64 = 1.0;
    let mut theta_valid = 0usize;
    for s in 0..samples {
        let y = rng.gen_range(0..n);
        let reach = grid.reach(y);
        if !(reach > 0.0) {
            continue;
        }
        let u: f64 = rng.gen_range((0.02f64).ln()..0.0);
        let t = reach * u.exp();
        let members = grid.section_of_node(y, t);
        if members.len() < 3 {
            continue;
        }
        // every other sample pushes x to the rim of the section
        let x = if s % 2 == 0 {
            members[rng.gen_range(0..members.len())]
        } else {
            *members
                .iter()
                .max_by(|&&a, &&b| grid.rho_bar(y, a).total_cmp(&grid.rho_bar(y, b)))
                .expect("non-empty")
        };
        let tau = members.iter().map(|&z| grid.rho_bar(x, z)).fold(0.0, f64::max) / t;
        theta = theta.max(tau);
        theta_valid += 1;
    }

    // doubling on sections S(x,2t) that stay in the box
    let mut doubling: f64 = 0.0;
    let mut doubling_valid = 0usize;
    for _ in 0..samples {
        let x = rng.gen_range(0..n);
        let t_hi = 0.5 * grid.reach(x);
        if !(t_hi > 0.0) {
            continue;
        }
        let u: f64 = rng.gen_range((0.05f64).ln()..0.0);
        let t = t_hi * u.exp();
        let inner = grid.section_of_node(x, t);
        if inner.len() < MIN_DOUBLING_MEMBERS {
            continue;
        }
        let m1: f64 = inner.iter().map(|&j| grid.weight(j)).sum();
        let m2 = grid.section_measure_of_node(x, 2.0 * t);
        doubling = doubling.max(m2 / m1);
        doubling_valid += 1;
    }

    let eps_reg = regularity_exponent(grid, samples, &mut rng);

    if theta_valid < MIN_VALID_SAMPLES || doubling_valid < MIN_VALID_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "only {theta_valid} engulfing and {doubling_valid} doubling samples fit inside the domain"
        )));
    }
    let eps_reg = eps_reg.ok_or_else(|| Error::InsufficientData("regularity fit failed".into()))?;

    Ok(SectionConstants {
        a0,
        theta,
        doubling,
        eps_reg,
        sample_count: theta_valid + doubling_valid,
    })
}

/// Sampled quasi-triangle constant. Each random pair is tested against a
/// random intermediate node and against the node nearest its midpoint.
pub fn quasi_triangle_constant(grid: &DiscretizedDomain, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = grid.len();
    let mut a0: f64 = 1.0;
    for _ in 0..samples {
        let x = rng.gen_range(0..n);
        let y = rng.gen_range(0..n);
        if x == y {
            continue;
        }
        let (px, py) = (grid.node(x), grid.node(y));
        let mid = [0.5 * (px[0] + py[0]), 0.5 * (px[1] + py[1])];
        for z in [rng.gen_range(0..n), grid.nearest_node(&mid)] {
            let den = grid.rho_bar(x, z) + grid.rho_bar(z, y);
            if den > 0.0 {
                a0 = a0.max(grid.rho_bar(x, y) / den);
            }
        }
    }
    a0
}

/// Joint fit of `log|rho_bar(x,y) - rho_bar(x',y)|` against
/// `eps log rho_bar(x,x') + (1 - eps) log(rho_bar(x,y) + rho_bar(x',y))`.
fn regularity_exponent(grid: &DiscretizedDomain, samples: usize, rng: &mut ChaCha8Rng) -> Option<f64> {
    let n = grid.len();
    let res = grid.resolution() as isize;
    let mut xs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    for s in 0..samples * 4 {
        let x = rng.gen_range(0..n);
        let y = rng.gen_range(0..n);
        let xp = if s % 2 == 0 {
            rng.gen_range(0..n)
        } else {
            // nearby node: small rho_bar(x, x')
            let step = rng.gen_range(1..=4isize);
            let idx = x as isize + if rng.gen_bool(0.5) { step } else { -step * if grid.dim() == 2 { res } else { 1 } };
            if idx < 0 || idx >= n as isize {
                continue;
            }
            idx as usize
        };
        let dxx = grid.rho_bar(x, xp);
        let sum = grid.rho_bar(x, y) + grid.rho_bar(xp, y);
        let diff = (grid.rho_bar(x, y) - grid.rho_bar(xp, y)).abs();
        if dxx <= 0.0 || sum <= 0.0 || diff <= 0.0 {
            continue;
        }
        xs.push(dxx.ln() - sum.ln());
        ys.push(diff.ln() - sum.ln());
    }
    let (slope, _) = fit::trimmed_least_squares(&xs, &ys, 0.95)?;
    Some(slope.clamp(f64::EPSILON, 1.0))
}

/// Count engulfing failures for a candidate constant: sampled `x in S(y,t)`
/// with `S(y, theta t)` inside the box, and some `z in S(y,t)` having
/// `rho_bar(x,z) > theta t`.
pub fn engulfing_violations(grid: &DiscretizedDomain, theta: f64, samples: usize, seed: u64) -> (usize, usize) {
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut bad = 0;
    for _ in 0..samples {
        let y = rng.gen_range(0..n);
        let reach = grid.reach(y);
        if !(reach > 0.0) {
            continue;
        }
        let t = reach / theta * rng.gen_range(0.05..1.0);
        let members = grid.section_of_node(y, t);
        if members.len() < 2 {
            continue;
        }
        let x = members[rng.gen_range(0..members.len())];
        checked += 1;
        if members.iter().any(|&z| grid.rho_bar(x, z) > theta * t) {
            bad += 1;
        }
    }
    (bad, checked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn quad1() -> ConvexPotential {
        ConvexPotential::quadratic(1, DomainBox::new_1d(-4.0, 4.0)).unwrap()
    }

    fn qreg1() -> ConvexPotential {
        ConvexPotential::quartic_reg(1, DomainBox::new_1d(-4.0, 4.0)).unwrap()
    }

    #[test]
    fn rho_examples() {
        assert!((rho(&quad1(), &pt1(0.0), &pt1(2.0)).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(rho(&qreg1(), &pt1(0.7), &pt1(0.7)).unwrap(), 0.0);
        assert!((rho(&qreg1(), &pt1(0.0), &pt1(1.0)).unwrap() - 7.0 / 12.0).abs() < 1e-15);
        assert!((rho(&qreg1(), &pt1(1.0), &pt1(0.0)).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rho_bar_examples() {
        assert!((rho_bar(&qreg1(), &pt1(0.0), &pt1(1.0)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let q = ConvexPotential::quadratic(2, DomainBox::new_2d([-1.0, -1.0], [1.0, 1.0])).unwrap();
        let (x, y) = ([0.3, -0.2], [-0.5, 0.9]);
        let e = 0.5 * ((0.8f64).powi(2) + (1.1f64).powi(2));
        assert!((rho_bar(&q, &x, &y).unwrap() - e).abs() < 1e-14);
        assert!((rho(&q, &x, &y).unwrap() - e).abs() < 1e-14);
    }

    #[test]
    fn rho_bar_symmetric_on_random_pairs() {
        let p = ConvexPotential::anisotropic2d(DomainBox::new_2d([-2.0, -2.0], [2.0, 2.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let y = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            assert_eq!(rho_bar(&p, &x, &y).unwrap(), rho_bar(&p, &y, &x).unwrap());
        }
    }

    #[test]
    fn outside_point_is_domain_error() {
        assert!(matches!(rho(&quad1(), &pt1(0.0), &pt1(5.0)), Err(Error::Domain { .. })));
        assert!(matches!(ma_density(&quad1(), &pt1(-4.5)), Err(Error::Domain { .. })));
    }

    #[test]
    fn density_examples() {
        assert_eq!(ma_density(&quad1(), &pt1(1.3)).unwrap(), 1.0);
        assert!((ma_density(&qreg1(), &pt1(2.0)).unwrap() - 5.0).abs() < 1e-15);
        let a = ConvexPotential::anisotropic2d(DomainBox::new_2d([-2.0, -2.0], [2.0, 2.0])).unwrap();
        assert!((ma_density(&a, &[0.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_density_needs_override() {
        let custom = CustomPotential {
            phi: Arc::new(|x: &Point| x[0].powi(4)),
            grad: Arc::new(|x: &Point| [4.0 * x[0].powi(3), 0.0]),
            hess: Arc::new(|x: &Point| [[12.0 * x[0] * x[0], 0.0], [0.0, 0.0]]),
        };
        let p = ConvexPotential::custom(1, DomainBox::new_1d(-1.0, 1.0), custom).unwrap();
        assert!(matches!(ma_density(&p, &pt1(0.0)), Err(Error::StrictConvexity { .. })));
        assert!(ConvexPotential::from_name("quartic_pure", 1, DomainBox::new_1d(-1.0, 1.0), false).is_err());
        let q = ConvexPotential::quartic_pure(1, DomainBox::new_1d(-1.0, 1.0)).unwrap();
        assert_eq!(ma_density(&q, &pt1(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn catalogue_derivatives_match_finite_differences() {
        let b2 = DomainBox::new_2d([-2.0, -1.5], [2.0, 1.5]);
        for p in [
            qreg1(),
            ConvexPotential::quartic_reg(2, b2).unwrap(),
            ConvexPotential::anisotropic2d(b2).unwrap(),
            ConvexPotential::quadratic(2, b2).unwrap(),
        ] {
            assert!(p.derivative_consistency(50, 1) < 1e-5, "{:?}", p.kind());
        }
    }

    #[test]
    fn inconsistent_custom_derivatives_are_detected() {
        let custom = CustomPotential {
            phi: Arc::new(|x: &Point| x[0] * x[0]),
            grad: Arc::new(|x: &Point| [x[0], 0.0]),
            hess: Arc::new(|_: &Point| [[2.0, 0.0], [0.0, 0.0]]),
        };
        let p = ConvexPotential::custom(1, DomainBox::new_1d(-1.0, 1.0), custom).unwrap();
        assert!(p.derivative_consistency(10, 0) > 0.1);
    }

    #[test]
    fn unknown_name_and_bad_dims() {
        let b = DomainBox::new_1d(0.0, 1.0);
        assert!(ConvexPotential::from_name("cubic", 1, b, false).is_err());
        assert!(ConvexPotential::from_name("anisotropic2d", 1, b, false).is_err());
        assert!(ConvexPotential::from_name("quadratic", 3, b, false).is_err());
        assert!(ConvexPotential::from_name("quadratic", 1, DomainBox::new_1d(1.0, 1.0), false).is_err());
    }

    #[test]
    fn sections_of_quadratic_are_intervals() {
        let g = build_grid(&quad1(), 256).unwrap();
        let m = section_members(&g, &pt1(0.0), 0.5).unwrap();
        let expect: Vec<usize> = (0..g.len()).filter(|&j| g.node(j)[0].abs() < 1.0).collect();
        assert_eq!(m, expect);
        // tiny t keeps only the node itself
        let x = *g.node(100);
        assert_eq!(section_members(&g, &x, 1e-12).unwrap(), vec![100]);
        // huge t keeps everything
        assert_eq!(section_members(&g, &x, 1e6).unwrap().len(), g.len());
        assert!(section_members(&g, &x, 0.0).is_err());
    }

    #[test]
    fn section_measure_is_monotone() {
        let g = build_grid(&qreg1(), 128).unwrap();
        let x = pt1(0.3);
        let mut last = 0.0;
        for i in 1..60 {
            let m = section_measure(&g, &x, 0.05 * i as f64).unwrap();
            assert!(m >= last);
            last = m;
        }
    }
}
