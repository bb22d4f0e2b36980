use bandlab::lattice::TorusGeometry;
use bandlab::model::{sample_h, VarianceProfile};
use bandlab::spectral::*;
use bandlab::C64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

proptest! {
    #[test]
    fn m_sc_solves_self_consistent_equation(re in -3.0f64..3.0, im in 1e-4f64..3.0) {
        let z = c(re, im);
        let m = m_sc(z).unwrap();
        prop_assert!((m * m + z * m + 1.0).norm() < 1e-12);
        prop_assert!(m.im > 0.0);
        prop_assert!(m.norm() < 1.0);
    }

    #[test]
    fn flow_translation_roundtrip(re in -1.5f64..1.5, im in 0.05f64..1.0) {
        let z = c(re, im);
        let (t0, e) = target_to_flow(z, 0.5).unwrap();
        prop_assert!((0.0..1.0).contains(&t0));
        let me = m_real(e).unwrap();
        prop_assert!((t0.sqrt() * me - m_sc(z).unwrap()).norm() < 1e-12);
        // z_{t0} = √t0 · z
        let st = SpectralFlowState::new(e, t0, 3).unwrap();
        prop_assert!((st.z_t - t0.sqrt() * z).norm() < 1e-12);
    }

    #[test]
    fn m_t_constant_along_the_flow(e in -1.8f64..1.8, t in 0.0f64..0.95) {
        let st = SpectralFlowState::new(e, t, 3).unwrap();
        prop_assert!((m_t(st.z_t, t).unwrap() - st.m).norm() < 1e-10);
        prop_assert!((st.eta_t - (1.0 - t) * st.m.im).abs() < 1e-15);
    }
}

#[test]
fn ward_identity_random_band() {
    for (w, l) in [(2, 2), (3, 3)] {
        let p = VarianceProfile::new(TorusGeometry::new(3, w, l).unwrap(), 1.0).unwrap();
        let h = sample_h(&p, 4, 0).h;
        for eta in [1e-3, 1e-1] {
            let b = resolve(&h, c(-0.4, eta)).unwrap();
            let r = ward_residual(&b);
            assert!(r.diagonal < 1e-9 && r.off_diagonal < 1e-9, "{r:?}");
            assert!(resolvent_residual(&h, &b) < 1e-9);
        }
    }
}

#[test]
fn adjoint_resolvent_is_conjugate_side() {
    let p = VarianceProfile::new(TorusGeometry::new(3, 2, 2).unwrap(), 1.0).unwrap();
    let h = sample_h(&p, 1, 0).h;
    let z = c(0.3, 0.2);
    let b = resolve(&h, z).unwrap();
    let bc = resolve(&h, z.conj()).unwrap();
    let n = h.nrows();
    for i in 0..n {
        for j in 0..n {
            assert!((b.get(Charge::Minus)[(i, j)] - bc.g[(i, j)]).norm() < 1e-10);
        }
    }
}

#[test]
fn eigensystem_residuals_and_sup_norms() {
    let p = VarianceProfile::new(TorusGeometry::new(3, 2, 2).unwrap(), 1.0).unwrap();
    let h = sample_h(&p, 2, 0).h;
    let es = eigensystem(&h).unwrap();
    let (eig, orth) = es.residuals(&h);
    assert!(eig < 1e-10 && orth < 1e-10);
    assert!(es.values.windows(2).all(|w| w[0] <= w[1]));
    let sup = es.bulk_sup_norms(0.5);
    assert!(!sup.is_empty());
    // N‖ψ‖_∞² ∈ [1, N]
    assert!(sup.iter().all(|&s| (1.0 - 1e-12..=64.0 + 1e-9).contains(&s)));
}

#[test]
fn charges_parse_and_print() {
    let s = parse_charges("+--+").unwrap();
    assert_eq!(charges_to_string(&s), "+--+");
    assert!(parse_charges("+x").is_err());
    assert_eq!(Charge::Plus.flip(), Charge::Minus);
    let m = c(0.1, 0.9);
    assert_eq!(Charge::Minus.apply(m), m.conj());
}

#[test]
fn outside_bulk_rejected() {
    assert!(target_to_flow(c(1.9, 0.1), 0.5).is_err());
    assert!(m_real(2.5).is_err());
}
