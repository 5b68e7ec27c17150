use std::sync::{Arc, OnceLock};

use mabesov_core::approx_id::admissible_scale_range;
use mabesov_core::besov::{besov_norm, decompose, in_band_noise, lq_norm, BesovParams};
use mabesov_core::calderon::l2_norm;
use mabesov_core::geometry::rho_bar;
use mabesov_core::ma_sio::*;
use mabesov_core::*;
use proptest::prelude::*;

fn stack() -> &'static Arc<AIStack> {
    static STACK: OnceLock<Arc<AIStack>> = OnceLock::new();
    STACK.get_or_init(|| {
        let pot = ConvexPotential::quartic_reg(1, DomainBox::new_1d(-2.0, 2.0)).unwrap();
        let grid = Arc::new(build_grid(&pot, 128).unwrap());
        let (lo, hi) = admissible_scale_range(&grid).unwrap();
        Arc::new(build_stack(grid, lo, hi).unwrap())
    })
}

fn family() -> &'static MAKernelFamily {
    static FAM: OnceLock<MAKernelFamily> = OnceLock::new();
    FAM.get_or_init(|| {
        let s = stack();
        build_canonical_family(s, &random_signs(s.num_scales(), 3), family_range(s)).unwrap()
    })
}

fn aniso_grid() -> &'static DiscretizedDomain {
    static GRID: OnceLock<DiscretizedDomain> = OnceLock::new();
    GRID.get_or_init(|| {
        let pot = ConvexPotential::anisotropic2d(DomainBox::new_2d([-2.0, -2.0], [2.0, 2.0])).unwrap();
        build_grid(&pot, 40).unwrap()
    })
}

fn params() -> BesovParams {
    BesovParams::new(0.0, 2.0, 2.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rho_bar_symmetric_nonnegative(x in -2.0..2.0f64, y in -2.0..2.0f64, u in -2.0..2.0f64, v in -2.0..2.0f64) {
        let pot = aniso_grid().potential();
        let a = rho_bar(pot, &[x, y], &[u, v]).unwrap();
        let b = rho_bar(pot, &[u, v], &[x, y]).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn lq_norm_nonincreasing_in_q(vals in prop::collection::vec(-10.0..10.0f64, 1..12), q1 in 1.0..6.0f64, dq in 0.0..6.0f64) {
        let a = lq_norm(&vals, q1);
        let b = lq_norm(&vals, q1 + dq);
        prop_assert!(b <= a * (1.0 + 1e-12));
        prop_assert!(lq_norm(&vals, f64::INFINITY) <= b * (1.0 + 1e-12));
    }

    #[test]
    fn besov_norm_homogeneous(seed in 0u64..1000, c in -50.0..50.0f64) {
        let s = stack();
        let f = in_band_noise(s, seed, 0);
        let g: Vec<f64> = f.iter().map(|v| c * v).collect();
        let a = besov_norm(s, &f, &params()).unwrap();
        let b = besov_norm(s, &g, &params()).unwrap();
        prop_assert!((b - c.abs() * a).abs() <= 1e-12 * (1.0 + b));
    }

    #[test]
    fn besov_triangle(seed in 0u64..1000, alpha_frac in -0.9..0.9f64, pi in 0usize..3) {
        let s = stack();
        let p = [1.0, 2.0, f64::INFINITY][pi];
        let pr = BesovParams::new(alpha_frac * s.eps_fit() / 4.0, p, p).unwrap();
        let f = in_band_noise(s, seed, 0);
        let g = in_band_noise(s, seed, 1);
        let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let lhs = besov_norm(s, &fg, &pr).unwrap();
        let rhs = besov_norm(s, &f, &pr).unwrap() + besov_norm(s, &g, &pr).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn decomposition_recomputes(seed in 0u64..1000) {
        let s = stack();
        let d = decompose(s, &in_band_noise(s, seed, 2), &params()).unwrap();
        prop_assert!((d.recompute(s.weights()) - d.norm).abs() <= 1e-12 * d.norm);
    }

    #[test]
    fn kernel_combine_is_linear(seed in 0u64..1000, a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let s = stack();
        let (k1, k2) = (s.k_min(), s.k_max());
        let c = s.d(k1).combine(a, s.d(k2), b);
        let f = in_band_noise(s, seed, 3);
        let w = s.weights();
        let lhs = c.apply(w, &f);
        let (x, y) = (s.d(k1).apply(w, &f), s.d(k2).apply(w, &f));
        for i in 0..f.len() {
            prop_assert!((lhs[i] - (a * x[i] + b * y[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn h_adjoint_pairing(seed in 0u64..1000) {
        let s = stack();
        let fam = family();
        let w = s.weights();
        let f = in_band_noise(s, seed, 4);
        let g = in_band_noise(s, seed, 5);
        let hf = apply_h(fam, &f);
        let hg = apply_h_adjoint(fam, &g);
        let lhs: f64 = hf.iter().zip(&g).zip(w).map(|((a, b), c)| a * b * c).sum();
        let rhs: f64 = f.iter().zip(&hg).zip(w).map(|((a, b), c)| a * b * c).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn h_bounded_by_its_l2_norm(seed in 0u64..1000) {
        let s = stack();
        let fam = family();
        let w = s.weights();
        let op = mabesov_core::calderon::op_norm(w, &fam.h_matrix(), 2.0).unwrap();
        let f = in_band_noise(s, seed, 6);
        prop_assert!(l2_norm(w, &apply_h(fam, &f)) <= op * l2_norm(w, &f) * (1.0 + 1e-6));
    }

    #[test]
    fn section_sandwich(x in -1.2..1.2f64, y in -1.2..1.2f64, t in 0.05..0.4f64) {
        let grid = aniso_grid();
        let center = [x, y];
        match normalize_section(grid, &center, t) {
            Ok(n) => {
                for j in 0..grid.len() {
                    let p = n.map(grid.node(j));
                    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                    let inside = rho_bar(grid.potential(), &center, grid.node(j)).unwrap() < t;
                    if inside {
                        prop_assert!(r <= 1.0 + 1e-12);
                    } else {
                        prop_assert!(r >= n.inner_radius);
                    }
                }
            }
            Err(Error::Normalization(_)) | Err(Error::Resolution(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn ordering_case_partition(k in -20i32..20, kp in -20i32..20, j in -20i32..20) {
        let c = ordering_case(k, kp, j);
        prop_assert!((1..=6).contains(&c));
    }
}
