use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ruled_core::basegeom::{BaseKind, BaseManifold, SpectralField};
use ruled_core::config::RunConfig;
use ruled_core::expansion::TOTAL_ORDER;
use ruled_core::pointalg::{choose, contract_j, lambda, FormAtPoint};
use ruled_core::ruledgeom::{fiber_volume, lambda_endo, reproducing_constant, TotalJets};
use ruled_core::{TotalPoint, C64};
use std::sync::OnceLock;

fn hermitian(n: usize, xs: &[f64]) -> DMatrix<C64> {
    let a = DMatrix::from_fn(n, n, |i, j| C64::new(xs[2 * (i * n + j)], xs[2 * (i * n + j) + 1]));
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

fn kahler(n: usize, xs: &[f64]) -> FormAtPoint {
    let a = DMatrix::from_fn(n, n, |i, j| C64::new(xs[2 * (i * n + j)], xs[2 * (i * n + j) + 1]));
    let g = &a * a.adjoint() + DMatrix::identity(n, n) * C64::new(0.5, 0.0);
    FormAtPoint::from_hermitian(&g)
}

fn entries() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 18)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contraction_is_linear_and_real(n in 1usize..=3, a in entries(), b in entries(), w in entries(), s in -2.0..2.0f64) {
        let (al, be, om) = (FormAtPoint::from_hermitian(&hermitian(n, &a)), FormAtPoint::from_hermitian(&hermitian(n, &b)), kahler(n, &w));
        let lhs = lambda(&al.add(&be.scale_re(s)), &om).unwrap();
        let rhs = lambda(&al, &om).unwrap() + lambda(&be, &om).unwrap() * s;
        prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + rhs.norm()));
        prop_assert!(lhs.im.abs() < 1e-12 * (1.0 + lhs.re.abs()));
    }

    #[test]
    fn contraction_satisfies_defining_equation(n in 1usize..=3, j in 0usize..=3, a in entries(), w in entries()) {
        prop_assume!(j <= n);
        let (al, om) = (FormAtPoint::from_hermitian(&hermitian(n, &a)), kahler(n, &w));
        let alj = if j == 0 { FormAtPoint::scalar(n, C64::new(1.0, 0.0)) } else { al.power(j) };
        let c = contract_j(&alj, &om, j).unwrap();
        let lhs = alj.wedge(&om.power(n - j)).unwrap().scale_re(choose(n, j));
        let d = lhs.sub(&om.power(n).scale(c));
        prop_assert!(d.sup_norm() < 1e-10 * (1.0 + lhs.sup_norm()));
    }

    #[test]
    fn wedge_is_associative_and_graded_commutative(a in entries(), b in entries(), c in entries(), i in 0usize..3, j in 0usize..3) {
        let n = 3;
        let (x, y, z) = (
            FormAtPoint::from_hermitian(&hermitian(n, &a)),
            FormAtPoint::from_hermitian(&hermitian(n, &b)),
            FormAtPoint::dz(n, i).add(&FormAtPoint::dzbar(n, j).scale_re(c[0])),
        );
        let l = x.wedge(&y).unwrap().wedge(&z).unwrap();
        let r = x.wedge(&y.wedge(&z).unwrap()).unwrap();
        prop_assert!(l.sub(&r).sup_norm() < 1e-12 * (1.0 + l.sup_norm()));
        prop_assert!(x.wedge(&y).unwrap().sub(&y.wedge(&x).unwrap()).sup_norm() < 1e-12);
        let (p, q) = (FormAtPoint::dz(n, i), FormAtPoint::dzbar(n, j));
        prop_assert!(p.wedge(&q).unwrap().add(&q.wedge(&p).unwrap()).sup_norm() == 0.0);
    }

    #[test]
    fn lambda_endo_is_scale_invariant(v in prop::collection::vec(-1.0..1.0f64, 4), h in entries(), c in (0.1..3.0f64, -3.0..3.0f64)) {
        let v = DVector::from_fn(2, |i, _| C64::new(v[2 * i], v[2 * i + 1]));
        prop_assume!(v.norm() > 1e-3);
        let hm = hermitian(2, &h) * C64::new(0.3, 0.0) + DMatrix::identity(2, 2) * C64::new(1.0, 0.0);
        let a = lambda_endo(&v, &hm).unwrap();
        let b = lambda_endo(&(&v * C64::new(c.0, c.1)), &hm).unwrap();
        prop_assert!((&a - &b).norm() < 1e-12);
        prop_assert!((a.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn ks_validation_matches_ordering(ks in prop::collection::vec(-5.0..200.0f64, 0..6)) {
        let text = serde_json::json!({ "example": "product_p1", "ks": ks }).to_string();
        let ok = ks.len() >= 2 && ks.iter().all(|k| *k > 0.0) && ks.windows(2).all(|w| w[0] < w[1]);
        prop_assert_eq!(RunConfig::from_json(&text).is_ok(), ok);
    }
}

fn perturbed() -> &'static ruled_core::HermitianBundleData {
    static B: OnceLock<ruled_core::HermitianBundleData> = OnceLock::new();
    B.get_or_init(|| {
        RunConfig::from_json(r#"{"example": "hirzebruch1_perturbed"}"#).unwrap().bundle_data().unwrap()
    })
}

fn model_p1() -> &'static BaseManifold {
    static B: OnceLock<BaseManifold> = OnceLock::new();
    B.get_or_init(|| BaseManifold::with_band(BaseKind::ProjectiveLine, 8))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn total_scalars_are_representative_independent(seed in any::<u64>(), c in (0.1..5.0f64, -5.0..5.0f64), k in 5.0..200.0f64) {
        use rand::SeedableRng;
        let bundle = perturbed();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = bundle.random_point(&mut rng);
        let mut f = [C64::new(0.0, 0.0); 2];
        f[p.fiber_chart] = C64::new(1.0, 0.0);
        f[1 - p.fiber_chart] = p.xi[0];
        let cf: Vec<C64> = f.iter().map(|x| x * C64::new(c.0, c.1)).collect();
        let q = TotalPoint::from_functional(p.base.clone(), &cf).unwrap();
        let a = TotalJets::new(bundle, &p, TOTAL_ORDER).unwrap().scal_k(k).unwrap();
        let b = TotalJets::new(bundle, &q, TOTAL_ORDER).unwrap().scal_k(k).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn base_laplacian_is_symmetric(a in prop::collection::vec(-1.0..1.0f64, 16), b in prop::collection::vec(-1.0..1.0f64, 16)) {
        let base = model_p1();
        let f = SpectralField { band: 3, coeffs: a };
        let g = SpectralField { band: 3, coeffs: b };
        let nodes = base.spectral().nodes.clone();
        let lap = |h: &SpectralField| -> Vec<f64> { nodes.iter().map(|p| base.laplacian(h, p).unwrap()).collect() };
        let (fv, gv) = (base.synthesize(&f), base.synthesize(&g));
        let lhs = base.inner(&lap(&f), &gv);
        let rhs = base.inner(&fv, &lap(&g));
        prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + lhs.abs()));
        prop_assert!(base.inner(&lap(&f), &fv) >= -1e-10);
    }
}

#[test]
fn fiber_volume_and_reproducing_constant_differ_by_rank() {
    for r in 2..6 {
        let q = fiber_volume(r) / reproducing_constant(r);
        assert!((q - r as f64).abs() < 1e-12);
    }
}
