//! Measured constants under grid refinement (512 and 1024 nodes).

use std::sync::Arc;

use mabesov_core::ma_sio::*;
use mabesov_core::*;

fn family(res: usize) -> MAKernelFamily {
    let pot = ConvexPotential::quadratic(1, DomainBox::new_1d(-4.0, 4.0)).unwrap();
    let grid = Arc::new(build_grid(&pot, res).unwrap());
    let stack = Arc::new(build_stack(grid, 1, 9).unwrap());
    build_canonical_family(&stack, &random_signs(9, 11), family_range(&stack)).unwrap()
}

fn close(a: f64, b: f64, factor: f64) -> bool {
    a > 0.0 && b > 0.0 && a.max(b) / a.min(b) <= factor
}

#[test]
fn family_constants_are_refinement_stable() {
    let (a, b) = (family(512), family(1024));
    assert!(close(a.c1, b.c1, 2.0), "c1 {} {}", a.c1, b.c1);
    assert!(close(a.c2, b.c2, 2.0), "c2 {} {}", a.c2, b.c2);
    assert!((a.gamma - b.gamma).abs() < 0.2);
    assert!((a.eps1 - b.eps1).abs() < 0.1);
    assert!(close(a.stack().eps_fit(), b.stack().eps_fit(), 1.25));
    let (la, lb) = (l2_bound_experiment(&a, 20, 2).unwrap(), l2_bound_experiment(&b, 20, 2).unwrap());
    assert!(close(la.max_ratio, lb.max_ratio, 2.0));
    assert!(close(la.op_norm2, lb.op_norm2, 2.0));
}
