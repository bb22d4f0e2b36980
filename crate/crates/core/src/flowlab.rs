//! Matrix Brownian motion H_t along the characteristic flow z_t, with
//! Monte-Carlo checks of the loop hierarchy and of the flow/direct
//! equality in distribution.

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loops::{g_loop, lightweight_term, martingale_qv, quadratic_term, qvar_total, LoopSignature};
use crate::model::{brownian_increment, gaussian_band, rng_for, VarianceProfile};
use crate::spectral::{m_sc, resolve, ResolventBundle, SpectralFlowState};
use crate::C64;

/// RNG stream for the Brownian increments of a flow trajectory.
pub const STREAM_FLOW: u64 = 1;
/// RNG stream for H_t sampled directly as √t·H.
pub const STREAM_HT: u64 = 2;
/// RNG stream for the increment ΔH in the hierarchy check.
pub const STREAM_DH: u64 = 3;
/// RNG stream for direct samples of H in two-path comparisons.
pub const STREAM_DIRECT: u64 = 4;

pub const T_MAX: f64 = 0.95;

#[derive(Debug, Clone, Serialize)]
pub struct FlowRecord {
    pub t: f64,
    pub observable_id: usize,
    pub value: C64,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub e: f64,
    pub seed: u64,
    pub t_grid: Vec<f64>,
    pub records: Vec<FlowRecord>,
    /// H_t at each grid point, if requested.
    pub snapshots: Vec<Mat<C64>>,
    /// G_t at z_t for each grid point, if requested.
    pub bundles: Vec<ResolventBundle>,
}

fn add(a: &Mat<C64>, b: &Mat<C64>, s: f64) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + s * b[(i, j)])
}

/// Euler–Maruyama for dH = S^{1/2} ⊙ dB on `t_grid`, resolving at z_t and
/// recording the requested loops at every grid point.
pub fn simulate_flow(
    profile: &VarianceProfile,
    e: f64,
    t_grid: &[f64],
    seed: u64,
    observables: &[LoopSignature],
    keep: bool,
) -> Result<FlowTrajectory> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("t_grid must be non-empty and strictly increasing".into()));
    }
    if t_grid[0] < 0.0 || *t_grid.last().unwrap() > T_MAX {
        return Err(Error::InvalidParameter(format!("t_grid must lie in [0, {T_MAX}]")));
    }
    let geo = profile.geo;
    let n = geo.n_sites();
    let mut rng = rng_for(seed, STREAM_FLOW);
    let mut h = Mat::<C64>::zeros(n, n);
    let mut t_prev = 0.0;
    let mut traj = FlowTrajectory {
        e,
        seed,
        t_grid: t_grid.to_vec(),
        records: Vec::new(),
        snapshots: Vec::new(),
        bundles: Vec::new(),
    };
    for &t in t_grid {
        let dh = brownian_increment(profile, t - t_prev, &mut rng)?;
        h = add(&h, &dh, 1.0);
        t_prev = t;
        let st = SpectralFlowState::new(e, t, geo.l)?;
        let b = resolve(&h, st.z_t)?;
        for (id, sig) in observables.iter().enumerate() {
            traj.records.push(FlowRecord {
                t,
                observable_id: id,
                value: g_loop(&b, &geo, sig),
            });
        }
        if keep {
            traj.snapshots.push(h.clone());
            traj.bundles.push(b);
        }
    }
    Ok(traj)
}

/// H at the last point of `t_grid`, built from the same increments as
/// [`simulate_flow`] without resolving at intermediate points.
pub fn flow_endpoint(profile: &VarianceProfile, t_grid: &[f64], seed: u64) -> Result<Mat<C64>> {
    let n = profile.geo.n_sites();
    let mut rng = rng_for(seed, STREAM_FLOW);
    let mut h = Mat::<C64>::zeros(n, n);
    let mut t_prev = 0.0;
    for &t in t_grid {
        h = add(&h, &brownian_increment(profile, t - t_prev, &mut rng)?, 1.0);
        t_prev = t;
    }
    Ok(h)
}

/// Trajectory log rows (seed, t, observable_id, re, im).
pub fn write_trajectory_csv<W: std::io::Write>(trajs: &[FlowTrajectory], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["seed", "t", "observable_id", "re", "im"])?;
    for tr in trajs {
        for r in &tr.records {
            wr.write_record(&[
                tr.seed.to_string(),
                r.t.to_string(),
                r.observable_id.to_string(),
                format!("{:e}", r.value.re),
                format!("{:e}", r.value.im),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Running mean / standard error accumulator.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Self::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Sample variance with the n − 1 denominator.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Per-seed quantities from one antithetic increment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HierarchySample {
    pub seed: u64,
    /// ((L(H+ΔH) + L(H−ΔH))/2 − L(H)) / dt, real part
    pub increment: f64,
    /// quadratic + light-weight term at time t, real part
    pub drift: f64,
    /// |L(H+ΔH) − L(H−ΔH)|² / (4 dt); even orders in ΔH cancel
    pub sq_increment: f64,
    /// (|L(H+ΔH) − L(H)|² + |L(H−ΔH) − L(H)|²) / (2 dt); biased by the
    /// second-order term at finite dt
    pub sq_increment_one_sided: f64,
    /// exact Σ S_xy |∂_{xy} L|² at time t
    pub qv_exact: f64,
    /// Σ_k (ℰ⊗ℰ)^{M,(n;k)}_{a,a} at time t
    pub qv_tensor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HierarchyReport {
    pub e: f64,
    pub t: f64,
    pub dt: f64,
    pub sigma: String,
    pub blocks: Vec<usize>,
    pub n_samples: usize,
    pub residual_mean: f64,
    pub residual_stderr: f64,
    pub drift_mean: f64,
    pub qv_residual_mean: f64,
    pub qv_residual_stderr: f64,
    pub qv_exact_mean: f64,
    pub qv_tensor_mean: f64,
    pub qv_one_sided_mean: f64,
    pub samples: Vec<HierarchySample>,
}

/// One seed of the hierarchy check: H_t = √t·H directly, antithetic ±ΔH.
pub fn hierarchy_sample(
    profile: &VarianceProfile,
    e: f64,
    t: f64,
    dt: f64,
    sig: &LoopSignature,
    seed: u64,
) -> Result<HierarchySample> {
    let geo = profile.geo;
    let st0 = SpectralFlowState::new(e, t, geo.l)?;
    let st1 = SpectralFlowState::new(e, t + dt, geo.l)?;
    let h = gaussian_band(profile, t.sqrt(), &mut rng_for(seed, STREAM_HT));
    let dh = brownian_increment(profile, dt, &mut rng_for(seed, STREAM_DH))?;
    let b0 = resolve(&h, st0.z_t)?;
    let bp = resolve(&add(&h, &dh, 1.0), st1.z_t)?;
    let bm = resolve(&add(&h, &dh, -1.0), st1.z_t)?;
    let l0 = g_loop(&b0, &geo, sig);
    let lp = g_loop(&bp, &geo, sig);
    let lm = g_loop(&bm, &geo, sig);
    let drift = quadratic_term(&b0, profile, sig)? + lightweight_term(&b0, profile, sig, st0.m);
    Ok(HierarchySample {
        seed,
        increment: ((0.5 * (lp + lm) - l0) / dt).re,
        drift: drift.re,
        sq_increment: (lp - lm).norm_sqr() / (4.0 * dt),
        sq_increment_one_sided: ((lp - l0).norm_sqr() + (lm - l0).norm_sqr()) / (2.0 * dt),
        qv_exact: martingale_qv(&b0, profile, sig),
        qv_tensor: qvar_total(&b0, profile, sig, &sig.blocks)?.re,
    })
}

/// E[ΔL]/dt − (quadratic + light-weight) over seeds `base_seed..`, which must
/// vanish up to O(dt) since the martingale part has mean zero; also the
/// paired comparison of the central-difference E|ΔL|²/dt with the exact
/// quadratic variation.
pub fn hierarchy_residual(
    profile: &VarianceProfile,
    e: f64,
    t: f64,
    dt: f64,
    sig: &LoopSignature,
    n_samples: usize,
    base_seed: u64,
) -> Result<HierarchyReport> {
    if !(2..=3).contains(&sig.n()) {
        return Err(Error::InvalidParameter("hierarchy_residual supports n in {2, 3}".into()));
    }
    if !(dt > 0.0 && dt <= 1e-3) || !(0.0..T_MAX).contains(&t) {
        return Err(Error::InvalidParameter(format!("need 0 < dt <= 1e-3 and t in [0, {T_MAX}), got dt={dt}, t={t}")));
    }
    let samples: Vec<HierarchySample> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| hierarchy_sample(profile, e, t, dt, sig, base_seed + s))
        .collect::<Result<_>>()?;
    let res = Moments::from_slice(&samples.iter().map(|s| s.increment - s.drift).collect::<Vec<_>>());
    let qv = Moments::from_slice(&samples.iter().map(|s| s.sq_increment - s.qv_exact).collect::<Vec<_>>());
    let mean = |f: fn(&HierarchySample) -> f64| samples.iter().map(f).sum::<f64>() / samples.len() as f64;
    Ok(HierarchyReport {
        e,
        t,
        dt,
        sigma: crate::spectral::charges_to_string(&sig.sigma),
        blocks: sig.blocks.clone(),
        n_samples,
        residual_mean: res.mean(),
        residual_stderr: res.stderr(),
        drift_mean: mean(|s| s.drift),
        qv_residual_mean: qv.mean(),
        qv_residual_stderr: qv.stderr(),
        qv_exact_mean: mean(|s| s.qv_exact),
        qv_tensor_mean: mean(|s| s.qv_tensor),
        qv_one_sided_mean: mean(|s| s.sq_increment_one_sided),
        samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoPathReport {
    pub z: C64,
    pub t0: f64,
    pub e: f64,
    pub steps: usize,
    pub flow_mean: f64,
    pub flow_stderr: f64,
    pub direct_mean: f64,
    pub direct_stderr: f64,
    /// |flow − direct| / sqrt(se_flow² + se_direct²)
    pub z_score: f64,
}

/// Im⟨G⟩ = Im Tr G / N.
fn im_avg_trace(b: &ResolventBundle) -> f64 {
    let n = b.n();
    (0..n).map(|i| b.g[(i, i)].im).sum::<f64>() / n as f64
}

/// √t0·G_{t0}(z_{t0}) from a simulated flow against G(z) from direct
/// samples, compared through the mean of Im⟨G⟩ on independent streams.
pub fn flow_direct_check(
    profile: &VarianceProfile,
    z: C64,
    kappa: f64,
    steps: usize,
    n_samples: usize,
    base_seed: u64,
) -> Result<TwoPathReport> {
    let (t0, e) = crate::spectral::target_to_flow(z, kappa)?;
    if t0 > T_MAX {
        return Err(Error::InvalidParameter(format!("t0 = {t0} exceeds {T_MAX}")));
    }
    let grid: Vec<f64> = (1..=steps).map(|k| t0 * k as f64 / steps as f64).collect();
    let st = SpectralFlowState::new(e, t0, profile.geo.l)?;
    let flow: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let h = flow_endpoint(profile, &grid, base_seed + s)?;
            Ok(t0.sqrt() * im_avg_trace(&resolve(&h, st.z_t)?))
        })
        .collect::<Result<_>>()?;
    let direct: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let h = gaussian_band(profile, 1.0, &mut rng_for(base_seed + s, STREAM_DIRECT));
            Ok(im_avg_trace(&resolve(&h, z)?))
        })
        .collect::<Result<_>>()?;
    let f = Moments::from_slice(&flow);
    let d = Moments::from_slice(&direct);
    let se = (f.stderr().powi(2) + d.stderr().powi(2)).sqrt();
    Ok(TwoPathReport {
        z,
        t0,
        e,
        steps,
        flow_mean: f.mean(),
        flow_stderr: f.stderr(),
        direct_mean: d.mean(),
        direct_stderr: d.stderr(),
        z_score: (f.mean() - d.mean()).abs() / se.max(f64::MIN_POSITIVE),
    })
}

/// max_a |⟨(G_t − m)E_a⟩| along a trajectory, one value per grid point.
pub fn lightweight_trajectory(traj: &FlowTrajectory, profile: &VarianceProfile) -> Result<Vec<(f64, f64)>> {
    let geo = profile.geo;
    let m = crate::spectral::m_real(traj.e)?;
    Ok(traj
        .t_grid
        .iter()
        .zip(&traj.bundles)
        .map(|(&t, b)| {
            let worst = crate::loops::one_loops(b, &geo, crate::spectral::Charge::Plus)
                .into_iter()
                .map(|v| (v - m).norm())
                .fold(0.0, f64::max);
            (t, worst)
        })
        .collect())
}

/// m(z) for the target of a flow comparison; re-exported for reports.
pub fn target_m(z: C64) -> Result<C64> {
    m_sc(z)
}
