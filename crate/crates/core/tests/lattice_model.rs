use bandlab::lattice::TorusGeometry;
use bandlab::model::{brownian_increment, gaussian_band, rng_for, sample_gue, sample_h, BandMatrix, VarianceProfile};
use proptest::prelude::*;

fn geo_strategy() -> impl Strategy<Value = TorusGeometry> {
    (1usize..=3, 1usize..=3, 2usize..=5).prop_map(|(d, w, l)| TorusGeometry::new(d, w, l).unwrap())
}

proptest! {
    #[test]
    fn site_metric_axioms(g in geo_strategy(), xs in prop::collection::vec(0usize..10_000, 3)) {
        let n = g.n_sites();
        let [x, y, z] = [xs[0] % n, xs[1] % n, xs[2] % n].map(|i| g.site_coords(i));
        prop_assert_eq!(g.dist(&x, &y), g.dist(&y, &x));
        prop_assert!(g.dist(&x, &z) <= g.dist(&x, &y) + g.dist(&y, &z));
        prop_assert_eq!(g.dist(&x, &y) == 0, x == y);
        // translation invariance
        let v: Vec<i64> = z.clone();
        let xv: Vec<i64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
        let yv: Vec<i64> = y.iter().zip(&v).map(|(a, b)| a + b).collect();
        prop_assert_eq!(g.dist(&xv, &yv), g.dist(&x, &y));
    }

    #[test]
    fn block_metric_is_coarse_site_metric(g in geo_strategy(), i in 0usize..10_000, j in 0usize..10_000) {
        let n = g.n_sites();
        let (x, y) = (i % n, j % n);
        let (a, b) = (g.block_of_lin(x), g.block_of_lin(y));
        prop_assert!(g.cells_of(a).contains(&x));
        let db = g.dist_block_lin(a, b);
        let ds = g.dist(&g.site_coords(x), &g.site_coords(y));
        // sites in blocks at distance k are at least W(k−1)+1 apart per axis sum
        prop_assert!(ds >= (g.w as i64) * (db - g.d as i64).max(0));
        prop_assert!(ds <= (g.w as i64) * (db + g.d as i64));
    }

    #[test]
    fn profile_doubly_stochastic_and_kronecker(g in geo_strategy(), lambda in 0.05f64..3.0) {
        let p = VarianceProfile::new(g, lambda).unwrap();
        let n = g.n_sites();
        for x in 0..n {
            let row: f64 = (0..n).map(|y| p.s(x, y)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
            for y in 0..n {
                prop_assert_eq!(p.s(x, y), p.s(y, x));
                let kron = p.sb(g.block_of_lin(x), g.block_of_lin(y)) / g.wd();
                prop_assert!((p.s(x, y) - kron).abs() < 1e-15);
            }
        }
        let sb = p.sb_dense();
        let nb = g.n_blocks();
        for a in 0..nb {
            let row: f64 = sb[a * nb..(a + 1) * nb].iter().sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn sampling_is_deterministic_per_stream() {
    let p = VarianceProfile::new(TorusGeometry::new(3, 2, 2).unwrap(), 1.0).unwrap();
    let a = sample_h(&p, 9, 0).h;
    let b = sample_h(&p, 9, 0).h;
    let c = sample_h(&p, 9, 1).h;
    assert!(a == b);
    assert!(a != c);
}

#[test]
fn entry_variances_match_profile() {
    // pooled over samples: mean |H_xy|²/S_xy = 1 within 3σ, per block class
    let g = TorusGeometry::new(2, 3, 3).unwrap();
    let p = VarianceProfile::new(g, 1.0).unwrap();
    let n = g.n_sites();
    let mut acc = [(0.0f64, 0.0f64, 0usize); 3];
    for seed in 0..200 {
        let h = sample_h(&p, seed, 0).h;
        for y in 0..n {
            for x in 0..=y {
                let s = p.s(x, y);
                if s == 0.0 {
                    assert_eq!(h[(x, y)].norm(), 0.0);
                    continue;
                }
                let k = if x == y { 0 } else if g.block_of_lin(x) == g.block_of_lin(y) { 1 } else { 2 };
                let r = h[(x, y)].norm_sqr() / s;
                acc[k].0 += r;
                acc[k].1 += r * r;
                acc[k].2 += 1;
            }
        }
    }
    for (sum, sq, cnt) in acc {
        let c = cnt as f64;
        let mean = sum / c;
        let se = ((sq / c - mean * mean) / c).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }
}

#[test]
fn brownian_increment_scales_with_dt() {
    let p = VarianceProfile::new(TorusGeometry::new(3, 2, 2).unwrap(), 1.0).unwrap();
    let dh = brownian_increment(&p, 0.25, &mut rng_for(3, 7)).unwrap();
    let h = gaussian_band(&p, 1.0, &mut rng_for(3, 7));
    let n = p.geo.n_sites();
    for i in 0..n {
        for j in 0..n {
            assert!((dh[(i, j)] - 0.5 * h[(i, j)]).norm() < 1e-15);
        }
    }
    assert!(brownian_increment(&p, -1.0, &mut rng_for(0, 0)).is_err());
}

#[test]
fn gue_is_hermitian_with_flat_variance() {
    let n = 60;
    let mut acc = 0.0;
    let mut cnt = 0usize;
    for seed in 0..40 {
        let h = sample_gue(n, &mut rng_for(seed, 5));
        for i in 0..n {
            assert_eq!(h[(i, i)].im, 0.0);
            for j in 0..n {
                assert_eq!(h[(i, j)], h[(j, i)].conj());
                acc += h[(i, j)].norm_sqr() * n as f64;
                cnt += 1;
            }
        }
    }
    assert!((acc / cnt as f64 - 1.0).abs() < 0.02);
}

#[test]
fn dump_roundtrip() {
    let p = VarianceProfile::new(TorusGeometry::new(3, 2, 2).unwrap(), 0.7).unwrap();
    let bm = sample_h(&p, 11, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.bin");
    bm.write_dump(&path).unwrap();
    let back = BandMatrix::read_dump(&path).unwrap();
    assert!(back.h == bm.h);
    assert_eq!((back.seed, back.stream, back.lambda), (11, 2, 0.7));
    assert_eq!(back.hermiticity_residual(), 0.0);
}
