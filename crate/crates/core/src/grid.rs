//! Tensor grids carrying the Monge-Ampere measure, and the weighted sums
//! that stand in for every integral against it.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use crate::error::{Error, Result};
use crate::geometry::{ma_density, rho_bar_from_grads, ConvexPotential, Point};

/// Minimum nodes per axis accepted by [`build_grid`].
pub const MIN_RESOLUTION: usize = 16;

/// Midpoint-rule discretization of a box with weights
/// `det D^2 phi(node) * cell_volume`.
#[derive(Debug, Clone)]
pub struct DiscretizedDomain {
    potential: ConvexPotential,
    resolution: usize,
    nodes: Vec<Point>,
    weights: Vec<f64>,
    grads: Vec<Point>,
    cell_size: [f64; 2],
    /// `min rho_bar(node, b)` over the box boundary: the largest `t` with
    /// `S(node, t)` inside the box (sections are star-shaped about their
    /// centre).
    reach: Vec<f64>,
    boundary: Vec<(Point, Point)>,
}

/// Build the tensor grid with `resolution` nodes per axis. Nodes are cell
/// midpoints in row-major order (last axis fastest).
pub fn build_grid(pot: &ConvexPotential, resolution: usize) -> Result<DiscretizedDomain> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::Resolution(format!(
            "resolution {resolution} below the minimum of {MIN_RESOLUTION} nodes per axis"
        )));
    }
    let dim = pot.dim();
    let dom = *pot.domain();
    let mut cell_size = [0.0; 2];
    for a in 0..dim {
        cell_size[a] = dom.side(a) / resolution as f64;
    }
    let coord = |a: usize, i: usize| dom.lower[a] + (i as f64 + 0.5) * cell_size[a];
    let mut nodes = Vec::with_capacity(resolution.pow(dim as u32));
    if dim == 1 {
        for i in 0..resolution {
            nodes.push([coord(0, i), 0.0]);
        }
    } else {
        for i in 0..resolution {
            for j in 0..resolution {
                nodes.push([coord(0, i), coord(1, j)]);
            }
        }
    }
    let vol: f64 = cell_size[..dim].iter().product();
    let mut weights = Vec::with_capacity(nodes.len());
    for p in &nodes {
        let det = ma_density(pot, p)?;
        weights.push(det * vol);
    }
    // a zero weight is only reachable with the degenerate override
    if let Some(i) = weights.iter().position(|&w| w <= 0.0) {
        return Err(Error::StrictConvexity { point: nodes[i][..dim].to_vec(), det: 0.0 });
    }
    let grads: Vec<Point> = nodes.iter().map(|p| pot.grad(p)).collect();

    let boundary: Vec<(Point, Point)> = boundary_samples(pot, resolution, &cell_size)
        .into_iter()
        .map(|b| (b, pot.grad(&b)))
        .collect();
    let reach = nodes.iter().zip(&grads).map(|(p, g)| reach_from(dim, &boundary, p, g)).collect();

    Ok(DiscretizedDomain {
        potential: pot.clone(),
        resolution,
        nodes,
        weights,
        grads,
        cell_size,
        reach,
        boundary,
    })
}

fn reach_from(dim: usize, boundary: &[(Point, Point)], p: &Point, g: &Point) -> f64 {
    boundary
        .iter()
        .map(|(b, gb)| rho_bar_from_grads(dim, p, g, b, gb))
        .fold(f64::INFINITY, f64::min)
}

fn boundary_samples(pot: &ConvexPotential, resolution: usize, cell: &[f64; 2]) -> Vec<Point> {
    let dom = pot.domain();
    if pot.dim() == 1 {
        return vec![[dom.lower[0], 0.0], [dom.upper[0], 0.0]];
    }
    let mut out = Vec::new();
    // two samples per cell along each edge, plus corners
    for i in 0..=2 * resolution {
        let s0 = dom.lower[0] + i as f64 * 0.5 * cell[0];
        let s1 = dom.lower[1] + i as f64 * 0.5 * cell[1];
        out.push([s0, dom.lower[1]]);
        out.push([s0, dom.upper[1]]);
        out.push([dom.lower[0], s1]);
        out.push([dom.upper[0], s1]);
    }
    out
}

impl DiscretizedDomain {
    pub fn potential(&self) -> &ConvexPotential {
        &self.potential
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Point {
        &self.nodes[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub(crate) fn grad_at(&self, i: usize) -> &Point {
        &self.grads[i]
    }

    /// Cell edge lengths per axis.
    pub fn cell_size(&self) -> [f64; 2] {
        self.cell_size
    }

    /// Largest `t` for which `S(node_i, t)` stays inside the box.
    pub fn reach(&self, i: usize) -> f64 {
        self.reach[i]
    }

    /// [`reach`](Self::reach) for an arbitrary point of the box.
    pub fn reach_of(&self, x: &Point) -> f64 {
        reach_from(self.dim(), &self.boundary, x, &self.potential.grad(x))
    }

    #[inline]
    pub fn rho_bar(&self, i: usize, j: usize) -> f64 {
        rho_bar_from_grads(self.dim(), &self.nodes[i], &self.grads[i], &self.nodes[j], &self.grads[j])
    }

    /// Members of `S(node_i, t)`.
    pub fn section_of_node(&self, i: usize, t: f64) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.rho_bar(i, j) < t).collect()
    }

    pub fn section_measure_of_node(&self, i: usize, t: f64) -> f64 {
        (0..self.len()).filter(|&j| self.rho_bar(i, j) < t).map(|j| self.weights[j]).sum()
    }

    /// `V_k(x) = mu(S(x, 2^-k))` at node `i`.
    pub fn v_k(&self, i: usize, k: i32) -> f64 {
        self.section_measure_of_node(i, 2f64.powi(-k))
    }

    /// Nodes whose section `S(x, t)` lies inside the box.
    pub fn mask_for_height(&self, t: f64) -> Vec<bool> {
        self.reach.iter().map(|&r| r >= t).collect()
    }

    /// Interior mask at scale `k`: the support section `S(x, 2^{1-k})` of
    /// the scale-`k` bump stays inside the box.
    pub fn interior_mask(&self, k: i32) -> Vec<bool> {
        self.mask_for_height(2f64.powi(1 - k))
    }

    pub fn nearest_node(&self, p: &Point) -> usize {
        let dim = self.dim();
        let dom = self.potential.domain();
        let idx = |a: usize| {
            let f = (p[a] - dom.lower[a]) / self.cell_size[a] - 0.5;
            (f.round().max(0.0) as usize).min(self.resolution - 1)
        };
        if dim == 1 {
            idx(0)
        } else {
            idx(0) * self.resolution + idx(1)
        }
    }

    /// Smallest and largest Hessian eigenvalue over all nodes.
    pub fn hessian_bounds(&self) -> (f64, f64) {
        self.nodes.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
            let (a, b) = self.potential.hess_eigen_range(p);
            (lo.min(a), hi.max(b))
        })
    }

    /// Same node set and weights.
    pub fn same_discretization(&self, other: &DiscretizedDomain) -> bool {
        self.nodes == other.nodes && self.weights == other.weights
    }
}

/// Values of a function at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        GridFunction { values }
    }

    pub fn constant(grid: &DiscretizedDomain, c: f64) -> Self {
        GridFunction { values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: &DiscretizedDomain, f: impl Fn(&Point) -> f64) -> Self {
        GridFunction { values: grid.nodes().iter().map(f).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with header `node_index,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node_index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            writeln!(s, "{i},{v}").expect("write to string");
        }
        s
    }

    pub fn from_csv<R: Read>(reader: R, expected_len: usize) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::Parameter(e.to_string()))?
            .ok_or_else(|| Error::Parameter("empty grid function file".into()))?;
        if header.trim() != "node_index,value" {
            return Err(Error::Parameter(format!("bad header '{header}'")));
        }
        let mut values = vec![f64::NAN; expected_len];
        for line in lines {
            let line = line.map_err(|e| Error::Parameter(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (i, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Parameter(format!("bad row '{line}'")))?;
            let i: usize = i.trim().parse().map_err(|_| Error::Parameter(format!("bad index in '{line}'")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Parameter(format!("bad value in '{line}'")))?;
            if i >= expected_len {
                return Err(Error::Parameter(format!("node index {i} out of range")));
            }
            values[i] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Parameter("grid function file does not cover every node".into()));
        }
        Ok(GridFunction { values })
    }
}

fn check_len(grid: &DiscretizedDomain, f: &[f64]) -> Result<()> {
    if f.len() != grid.len() {
        return Err(Error::Structural(format!(
            "grid function has {} values, grid has {} nodes",
            f.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// `sum_j f_j w_j`.
pub fn integrate(grid: &DiscretizedDomain, f: &[f64]) -> Result<f64> {
    check_len(grid, f)?;
    Ok(f.iter().zip(grid.weights()).map(|(a, w)| a * w).sum())
}

/// `<f, g>_mu`.
pub fn inner(grid: &DiscretizedDomain, f: &[f64], g: &[f64]) -> Result<f64> {
    check_len(grid, f)?;
    check_len(grid, g)?;
    Ok(f.iter().zip(g).zip(grid.weights()).map(|((a, b), w)| a * b * w).sum())
}

/// Weighted `L^p_mu` norm; `p = f64::INFINITY` takes the max over nodes.
pub fn lp_norm(grid: &DiscretizedDomain, f: &[f64], p: f64) -> Result<f64> {
    check_len(grid, f)?;
    lp_norm_weighted(grid.weights(), f, p)
}

pub(crate) fn lp_norm_weighted(w: &[f64], f: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("L^p norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    if p == 1.0 {
        return Ok(f.iter().zip(w).map(|(a, w)| a.abs() * w).sum());
    }
    if p == 2.0 {
        return Ok(f.iter().zip(w).map(|(a, w)| a * a * w).sum::<f64>().sqrt());
    }
    // scale by the max to avoid overflow for large p
    let m = f.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if m == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = f.iter().zip(w).map(|(a, w)| (a.abs() / m).powf(p) * w).sum();
    Ok(m * s.powf(1.0 / p))
}

/// Conjugate exponent `p'` with `1/p + 1/p' = 1`.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pt1, DomainBox};
    use proptest::prelude::*;

    fn quad01() -> DiscretizedDomain {
        build_grid(&ConvexPotential::quadratic(1, DomainBox::new_1d(0.0, 1.0)).unwrap(), 256).unwrap()
    }

    #[test]
    fn unit_interval_mass() {
        let g = quad01();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-4);
        assert!((integrate(&g, &vec![1.0; g.len()]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(integrate(&g, &vec![0.0; g.len()]).unwrap(), 0.0);
        assert!((lp_norm(&g, &vec![1.0; g.len()], 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quartic_reg_mass() {
        let p = ConvexPotential::quartic_reg(1, DomainBox::new_1d(-1.0, 1.0)).unwrap();
        let g = build_grid(&p, 512).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 8.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn coarse_resolution_rejected() {
        let p = ConvexPotential::quadratic(1, DomainBox::new_1d(0.0, 1.0)).unwrap();
        assert!(matches!(build_grid(&p, 8), Err(Error::Resolution(_))));
    }

    #[test]
    fn row_major_order() {
        let p = ConvexPotential::quadratic(2, DomainBox::new_2d([0.0, 0.0], [1.0, 2.0])).unwrap();
        let g = build_grid(&p, 16).unwrap();
        assert_eq!(g.len(), 256);
        assert_eq!(g.node(1)[0], g.node(0)[0]);
        assert!(g.node(1)[1] > g.node(0)[1]);
        assert!(g.node(16)[0] > g.node(0)[0]);
        assert_eq!(g.nearest_node(g.node(37)), 37);
        assert!((g.weights().iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn indicator_integral_is_section_measure() {
        let g = quad01();
        let x = pt1(0.4);
        let members = crate::geometry::section_members(&g, &x, 0.01).unwrap();
        let mut ind = vec![0.0; g.len()];
        for &j in &members {
            ind[j] = 1.0;
        }
        let m = crate::geometry::section_measure(&g, &x, 0.01).unwrap();
        assert_eq!(integrate(&g, &ind).unwrap(), m);
    }

    #[test]
    fn sup_norm_ignores_weights() {
        let g = quad01();
        let mut f = vec![0.1; g.len()];
        f[17] = -3.0;
        assert_eq!(lp_norm(&g, &f, f64::INFINITY).unwrap(), 3.0);
        assert!(lp_norm(&g, &f, 0.5).is_err());
    }

    #[test]
    fn refinement_consistency() {
        let p = ConvexPotential::quartic_reg(1, DomainBox::new_1d(-1.0, 1.0)).unwrap();
        let f = |x: &Point| (2.0 * x[0]).cos();
        let g1 = build_grid(&p, 64).unwrap();
        let g2 = build_grid(&p, 128).unwrap();
        let i1 = integrate(&g1, &GridFunction::from_fn(&g1, f).values).unwrap();
        let i2 = integrate(&g2, &GridFunction::from_fn(&g2, f).values).unwrap();
        let h = g1.cell_size()[0];
        assert!((i1 - i2).abs() < 2.0 * h * h);
    }

    #[test]
    fn reach_of_quadratic() {
        let g = build_grid(&ConvexPotential::quadratic(1, DomainBox::new_1d(-4.0, 4.0)).unwrap(), 64).unwrap();
        for i in 0..g.len() {
            let x = g.node(i)[0];
            let e = 0.5 * (4.0 - x.abs()).powi(2);
            assert!((g.reach(i) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let f = GridFunction::new(vec![1.5, -2.0, 0.25]);
        let back = GridFunction::from_csv(f.to_csv().as_bytes(), 3).unwrap();
        assert_eq!(back, f);
        assert!(GridFunction::from_csv("node,value\n0,1\n".as_bytes(), 1).is_err());
        assert!(GridFunction::from_csv("node_index,value\n0,1\n".as_bytes(), 2).is_err());
    }

    proptest! {
        #[test]
        fn holder_inequality(seed in 0u64..1000, pi in 0usize..4) {
            use rand::{Rng, SeedableRng};
            let g = build_grid(&ConvexPotential::quartic_reg(1, DomainBox::new_1d(-1.0, 1.0)).unwrap(), 64).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = [1.0, 2.0, 4.0, f64::INFINITY][pi];
            let fg: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a * b).collect();
            let lhs = integrate(&g, &fg).unwrap().abs();
            let rhs = lp_norm(&g, &f, p).unwrap() * lp_norm(&g, &h, conjugate(p)).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn norm_homogeneity(c in -5.0f64..5.0, p in 1.0f64..6.0) {
            let g = build_grid(&ConvexPotential::quadratic(1, DomainBox::new_1d(0.0, 1.0)).unwrap(), 32).unwrap();
            let f: Vec<f64> = g.nodes().iter().map(|x| (7.0 * x[0]).sin()).collect();
            let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
            let a = lp_norm(&g, &cf, p).unwrap();
            let b = c.abs() * lp_norm(&g, &f, p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }
}
