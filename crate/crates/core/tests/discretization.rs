use std::sync::Arc;

use glcn_core::sipg::{self, coercivity_bounds};
use glcn_core::{Complex64, DGSpace, Mesh, Rect, SipgConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn space(rect: Rect, n: usize, k: usize) -> DGSpace {
    DGSpace::new(Arc::new(Mesh::build_structured(rect, n).unwrap()), k).unwrap()
}

#[test]
fn default_penalty_is_coercive() {
    for n in [2, 4] {
        for k in 1..=3 {
            let sp = space(Rect::unit_square(), n, k);
            let a = sipg::assemble_stiffness(&sp, &SipgConfig::default_for_degree(k)).unwrap();
            let (lo, hi) = coercivity_bounds(&sp, &a).unwrap();
            assert!(lo > 0.0 && hi >= lo, "n={n} k={k}: {lo} {hi}");
        }
    }
}

#[test]
fn ritz_projection_reproduces_discrete_functions() {
    let rect = Rect::new(-1.0, 1.0, -1.0, 1.0).unwrap();
    let sp = space(rect, 4, 4);
    let cfg = SipgConfig::default_for_degree(4);
    let a = sipg::assemble_stiffness(&sp, &cfg).unwrap();
    let lap = |p: [f64; 2]| {
        let (x, y) = (p[0], p[1]);
        Complex64::new(-2.0 * (1.0 - y * y) - 2.0 * (1.0 - x * x), 0.0)
    };
    let r = sipg::ritz_project(&sp, &cfg, lap).unwrap();
    let lhs = a.apply_complex(&r.coeffs);
    let rhs = sp.load_vector(|p| -lap(p));
    let err = lhs.iter().zip(&rhs).map(|(l, r)| (l - r).norm()).fold(0.0, f64::max);
    let scale = rhs.iter().map(|r| r.norm()).fold(0.0, f64::max);
    assert!(err <= 1e-10 * scale);
    let exact = |p: [f64; 2]| Complex64::new((1.0 - p[0] * p[0]) * (1.0 - p[1] * p[1]), 0.0);
    assert!(sp.l2_error(&r, exact) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn operators_symmetric_and_mass_positive(
        x0 in -2.0f64..2.0, w in 0.2f64..3.0, ht in 0.2f64..3.0, n in 1usize..4, k in 1usize..4, seed in any::<u64>(),
    ) {
        let sp = space(Rect::new(x0, x0 + w, 0.0, ht).unwrap(), n, k);
        let a = sipg::assemble_stiffness(&sp, &SipgConfig::default_for_degree(k)).unwrap();
        let m = sipg::assemble_mass(&sp);
        prop_assert!(a.max_asymmetry() <= 1e-12 * a.norm_inf().max(1.0));
        prop_assert!(m.max_asymmetry() <= 1e-12 * m.norm_inf());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<Complex64> = (0..sp.num_dofs()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mv = m.form(&v, &v);
        prop_assert!(mv.re > 0.0 && mv.im.abs() <= 1e-12 * mv.re);
        let field = glcn_core::ComplexField { coeffs: v.clone() };
        prop_assert!((mv.re.sqrt() - sp.l2_norm(&field)).abs() <= 1e-10 * mv.re.sqrt());
        let av = a.form(&v, &v);
        prop_assert!(av.re > 0.0);
    }
}
