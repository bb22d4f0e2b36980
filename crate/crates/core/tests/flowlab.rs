use bandlab::flowlab::*;
use bandlab::lattice::TorusGeometry;
use bandlab::loops::LoopSignature;
use bandlab::model::VarianceProfile;
use bandlab::primitive::{k_loop, KContext};
use bandlab::spectral::{m_real, parse_charges};
use bandlab::C64;

fn small() -> VarianceProfile {
    VarianceProfile::new(TorusGeometry::new(3, 2, 2).unwrap(), 1.0).unwrap()
}

fn sig(s: &str, blocks: &[usize]) -> LoopSignature {
    LoopSignature::new(parse_charges(s).unwrap(), blocks.to_vec()).unwrap()
}

#[test]
fn loops_at_time_zero_equal_primitive_loops() {
    // H_0 = 0, so G_0 = m and every loop is its deterministic value
    let p = small();
    let e = 0.3;
    let m = m_real(e).unwrap();
    let obs = [sig("+-", &[0, 0]), sig("+-", &[0, 1]), sig("+-+", &[2, 2, 2]), sig("++", &[5, 5])];
    let traj = simulate_flow(&p, e, &[0.0, 0.1], 1, &obs, false).unwrap();
    let ctx = KContext::new(&p, 0.0, m).unwrap();
    for r in traj.records.iter().filter(|r| r.t == 0.0) {
        let s = &obs[r.observable_id];
        let k = k_loop(&ctx, &s.sigma, &s.blocks).unwrap();
        assert!((r.value - k).norm() < 1e-12, "{:?}: {} vs {}", s.sigma, r.value, k);
    }
}

#[test]
fn flow_is_hermitian_and_deterministic() {
    let p = small();
    let obs = [sig("+-", &[0, 1])];
    let a = simulate_flow(&p, 0.1, &[0.2, 0.5], 7, &obs, true).unwrap();
    let b = simulate_flow(&p, 0.1, &[0.2, 0.5], 7, &obs, false).unwrap();
    assert_eq!(a.records.len(), 2);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.value, y.value);
    }
    for h in &a.snapshots {
        let n = h.nrows();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(h[(i, j)], h[(j, i)].conj());
            }
        }
    }
    let end = flow_endpoint(&p, &[0.2, 0.5], 7).unwrap();
    assert!(end == a.snapshots[1]);
}

#[test]
fn flow_variance_grows_linearly() {
    let p = small();
    let n = p.geo.n_sites();
    let t = 0.6;
    let mut m = Moments::default();
    for seed in 0..100 {
        let h = flow_endpoint(&p, &[0.1, 0.35, t], seed).unwrap();
        for x in 0..n {
            for y in 0..n {
                let s = p.s(x, y);
                if s > 0.0 {
                    m.push(h[(x, y)].norm_sqr() / (s * t));
                }
            }
        }
    }
    assert!((m.mean() - 1.0).abs() < 4.0 * m.stderr(), "{} ± {}", m.mean(), m.stderr());
}

#[test]
fn trajectory_csv_has_one_row_per_record() {
    let p = small();
    let traj = simulate_flow(&p, 0.0, &[0.1, 0.2, 0.3], 0, &[sig("+", &[0]), sig("+-", &[0, 0])], false).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&[traj], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "seed,t,observable_id,re,im");
    assert_eq!(lines.len(), 1 + 6);
}

#[test]
fn invalid_grids_rejected() {
    let p = small();
    let obs = [sig("+", &[0])];
    assert!(simulate_flow(&p, 0.0, &[], 0, &obs, false).is_err());
    assert!(simulate_flow(&p, 0.0, &[0.3, 0.2], 0, &obs, false).is_err());
    assert!(simulate_flow(&p, 0.0, &[0.5, 0.99], 0, &obs, false).is_err());
    assert!(simulate_flow(&p, 0.0, &[-0.1, 0.2], 0, &obs, false).is_err());
}

#[test]
fn hierarchy_preconditions() {
    let p = small();
    assert!(hierarchy_residual(&p, 0.2, 0.5, 5e-4, &sig("+-+-", &[0, 1, 2, 3]), 2, 0).is_err());
    assert!(hierarchy_residual(&p, 0.2, 0.5, 1e-2, &sig("+-", &[0, 1]), 2, 0).is_err());
    assert!(hierarchy_residual(&p, 0.2, 0.96, 5e-4, &sig("+-", &[0, 1]), 2, 0).is_err());
    assert!(hierarchy_residual(&p, 0.2, 0.5, 0.0, &sig("+-", &[0, 1]), 2, 0).is_err());
}

#[test]
fn hierarchy_drift_and_variation_small_n() {
    let p = small();
    for (s, blocks) in [("+-", vec![0, 1]), ("++", vec![0, 0]), ("+-+", vec![0, 1, 2])] {
        let r = hierarchy_residual(&p, 0.2, 0.6, 5e-4, &sig(s, &blocks), 200, 100).unwrap();
        assert!(
            r.residual_mean.abs() <= 4.0 * r.residual_stderr,
            "{s}: {} ± {}",
            r.residual_mean,
            r.residual_stderr
        );
        assert!(
            r.qv_residual_mean.abs() <= 4.0 * r.qv_residual_stderr,
            "{s}: qv {} ± {}",
            r.qv_residual_mean,
            r.qv_residual_stderr
        );
        let n = blocks.len() as f64;
        for x in &r.samples {
            assert!(x.qv_exact <= n * x.qv_tensor * (1.0 + 1e-10));
        }
    }
}

#[test]
fn flow_matches_direct_sampling_small_n() {
    let p = small();
    let r = flow_direct_check(&p, C64::new(0.2, 0.2), 0.5, 10, 200, 0).unwrap();
    assert!(r.z_score < 4.0, "{r:?}");
    assert!(flow_direct_check(&p, C64::new(0.2, 0.02), 0.5, 10, 2, 0).is_err());
}

#[test]
fn lightweight_trajectory_starts_at_zero() {
    let p = small();
    let traj = simulate_flow(&p, 0.2, &[0.0, 0.3, 0.6], 3, &[], true).unwrap();
    let lw = lightweight_trajectory(&traj, &p).unwrap();
    assert_eq!(lw.len(), 3);
    assert!(lw[0].1 < 1e-12);
    assert!(lw[2].1 > 0.0);
}
