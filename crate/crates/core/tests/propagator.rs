use bandlab::lattice::TorusGeometry;
use bandlab::model::VarianceProfile;
use bandlab::primitive::{k2_tensor, KContext};
use bandlab::propagator::*;
use bandlab::spectral::{m_real, parse_charges};
use bandlab::C64;
use proptest::prelude::*;

fn profile(d: usize, l: usize, lambda: f64) -> VarianceProfile {
    VarianceProfile::new(TorusGeometry::new(d, 1, l).unwrap(), lambda).unwrap()
}

/// Θ_ξ by the Neumann series Σ_k ξ^k (S^(B))^k, dense.
fn neumann(p: &VarianceProfile, xi: C64) -> Vec<C64> {
    let nb = p.geo.n_blocks();
    let s: Vec<C64> = p.sb_dense().into_iter().map(|v| C64::new(v, 0.0)).collect();
    let mut term: Vec<C64> = (0..nb * nb).map(|k| if k / nb == k % nb { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect();
    let mut sum = term.clone();
    for _ in 0..2000 {
        term = dense_mul(&term, &s, nb).into_iter().map(|v| v * xi).collect();
        let size = term.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in sum.iter_mut().zip(&term) {
            *a += b;
        }
        if size < 1e-18 {
            break;
        }
    }
    sum
}

#[test]
fn fft_theta_matches_neumann_series() {
    let m = m_real(0.4).unwrap();
    for (d, l) in [(1, 7), (2, 4), (3, 3)] {
        let p = profile(d, l, 1.0);
        for xi in [C64::new(0.5, 0.0), C64::new(0.9, 0.0), 0.8 * m * m, 0.95 * m * m.conj()] {
            let th = theta(&p, xi).unwrap();
            let oracle = neumann(&p, xi);
            let dense = th.dense();
            let err = dense.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "d={d} l={l} xi={xi}: {err}");
        }
    }
}

proptest! {
    #[test]
    fn propagator_algebra(l in 2usize..=8, t in 0.0f64..0.97, lambda in 0.3f64..2.0) {
        let p = profile(3, l, lambda);
        let th = theta(&p, C64::new(t, 0.0)).unwrap();
        prop_assert!(dense_inverse_residual(&p, C64::new(t, 0.0), &th) < 1e-10);
        prop_assert!((th.row_sum() - 1.0 / (1.0 - t)).norm() * (1.0 - t) < 1e-10);
        prop_assert!(th.zero_mode_removed().row_sum().norm() < 1e-10);
        let nb = p.geo.n_blocks();
        let dense = th.dense();
        for a in 0..nb {
            for b in 0..nb {
                prop_assert!((dense[a * nb + b] - dense[b * nb + a]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn propagators_commute(l in 2usize..=5, t in 0.0f64..0.95, u in 0.0f64..0.95) {
        let p = profile(3, l, 1.0);
        let m = m_real(0.2).unwrap();
        let a = theta(&p, C64::new(t, 0.0)).unwrap();
        let b = theta(&p, u * m * m).unwrap();
        let nb = p.geo.n_blocks();
        let ab = dense_mul(&a.dense(), &b.dense(), nb);
        let ba = dense_mul(&b.dense(), &a.dense(), nb);
        let err = ab.iter().zip(&ba).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }
}

#[test]
fn theta_operator_on_k2_is_twice_time_derivative() {
    // the generator carries the S^(B) factor: 𝛩∘K2 = 2∂_t K2, checked by a
    // central difference in t
    let p = profile(3, 3, 1.0);
    let m = m_real(0.3).unwrap();
    let h = 1e-5;
    for s in ["+-", "++", "-+"] {
        let sigma = parse_charges(s).unwrap();
        for t in [0.2, 0.7] {
            let kp = k2_tensor(&KContext::new(&p, t + h, m).unwrap(), &sigma);
            let km = k2_tensor(&KContext::new(&p, t - h, m).unwrap(), &sigma);
            let k0 = k2_tensor(&KContext::new(&p, t, m).unwrap(), &sigma);
            let op = theta_operator(&p, t, &sigma, m, &k0).unwrap();
            let mut fd = kp.clone();
            for (x, y) in fd.data.iter_mut().zip(&km.data) {
                *x = (*x - y) / h;
            }
            assert!(op.rel_diff(&fd) < 1e-7, "{s} t={t}: {}", op.rel_diff(&fd));
            let lit = theta_operator_without_s(&p, t, &sigma, m, &k0).unwrap();
            assert!(lit.rel_diff(&fd) > 1e-2, "the variant without S^(B) should differ");
        }
    }
}

#[test]
fn evolution_kernel_semigroup_and_identity() {
    let p = profile(3, 3, 1.0);
    let m = m_real(-0.5).unwrap();
    let sigma = parse_charges("+-+-").unwrap();
    let a = local_tensor(&p.geo, 4, 1.0);
    let same = evolution_kernel_apply(&p, 0.6, 0.6, &sigma, m, &a).unwrap();
    assert!(same.max_diff(&a) < 1e-12);
    let one = evolution_kernel_apply(&p, 0.1, 0.8, &sigma, m, &a).unwrap();
    let two = evolution_kernel_apply(&p, 0.4, 0.8, &sigma, m, &evolution_kernel_apply(&p, 0.1, 0.4, &sigma, m, &a).unwrap()).unwrap();
    assert!(two.rel_diff(&one) < 1e-12);
}

#[test]
fn leg_decomposition_needs_the_stencil_factor() {
    let p = profile(3, 3, 1.0);
    let m = m_real(0.1).unwrap();
    for xi in [m * m.conj(), m * m] {
        let leg = leg(&p, 0.2, 0.7, xi).unwrap();
        let with_s = leg_decomposition(&p, 0.2, 0.7, xi).unwrap();
        let without = leg_decomposition_without_s(&p, 0.2, 0.7, xi).unwrap();
        let d1 = leg.kernel.iter().zip(&with_s.kernel).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let d2 = leg.kernel.iter().zip(&without.kernel).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d1 < 1e-12);
        assert!(d2 > 1e-3);
    }
}

#[test]
fn decay_fit_bounds_every_shell() {
    for l in [4, 6] {
        let p = profile(3, l, 1.0);
        for t in [0.5, 0.9, 0.99] {
            let r = decay_profile(&p, t).unwrap();
            assert!(r.c > 0.0 && r.big_c.is_finite());
            for row in &r.rows {
                assert!(row.max_abs <= row.bound_value * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn difference_bounds_are_finite_and_symmetric() {
    let p = profile(3, 6, 1.0);
    for t in [0.5, 0.9] {
        let r = difference_checks(&p, t).unwrap();
        assert!(r.first.is_finite() && r.second.is_finite() && r.ring.is_finite());
        assert!(r.second_asymmetry < 1e-12);
    }
}

#[test]
fn kernel_norms_reported_for_both_charge_patterns() {
    let p = profile(3, 4, 1.0);
    let m = m_real(0.3).unwrap();
    let alt = kernel_norm_report(&p, 0.3, 0.9, &parse_charges("+-").unwrap(), m).unwrap();
    let same = kernel_norm_report(&p, 0.3, 0.9, &parse_charges("++").unwrap(), m).unwrap();
    assert!(alt.alternating && !same.alternating);
    assert!(alt.growth.is_finite() && same.growth.is_finite());
    // alternating legs carry the diffusive mode and grow faster
    assert!(alt.growth > same.growth);
}

#[test]
fn tail_composition_constant_is_finite() {
    let g = TorusGeometry::new(3, 1, 5).unwrap();
    for (u, t) in [(0.2, 0.5), (0.5, 0.9)] {
        let c = tail_composition_constant(u, t, &g);
        assert!(c.is_finite() && c > 0.0);
    }
}
