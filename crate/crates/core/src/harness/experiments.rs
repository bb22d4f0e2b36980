use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::{fmt, percentile, EstimatorResult, ExperimentConfig, ExperimentOutput, Table};
use crate::error::{Error, Result};
use crate::flowlab::{self, Moments};
use crate::lattice::TorusGeometry;
use crate::loops::{
    full_2loop, loop_tensor, loop_ward_residual, one_loops, ward_inequality_check, LoopSignature,
};
use crate::model::{gaussian_band, rng_for, sample_gue, sample_h, VarianceProfile};
use crate::primitive::{
    enumerate_tsp, explicit_tensor, k_bound_report, k_loop_ode, k_tree_tensor, k_ward_residual, mollifier,
    partial_sum, sum_zero, KContext,
};
use crate::propagator::{
    b_param, calb, decay_profile, decay_profile_short, dense_mul, difference_checks, evolution_kernel_apply,
    kernel_norm_report, leg, leg_decomposition, leg_decomposition_without_s, local_tensor, tail, theta,
};
use crate::spectral::{
    eigensystem, m_real, m_sc, median, parse_charges, resolve, ward_residual, Charge,
    SpectralFlowState,
};
use crate::tensor::BlockTensor;
use crate::C64;

/// RNG stream for the GUE baseline.
pub const STREAM_GUE: u64 = 5;
/// RNG stream for sampled loop configurations.
pub const STREAM_CONFIGS: u64 = 6;

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.samples as u64).map(|s| cfg.seed + s).collect()
}

fn par_seeds<T: Send>(cfg: &ExperimentConfig, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    seeds(cfg).into_par_iter().map(f).collect()
}

/// Pairs (a, b) grouped by periodic L¹ block distance.
fn shells(geo: &TorusGeometry) -> Vec<Vec<(usize, usize)>> {
    let nb = geo.n_blocks();
    let mut out: Vec<Vec<(usize, usize)>> = Vec::new();
    for a in 0..nb {
        for b in 0..nb {
            let r = geo.dist_block_lin(a, b) as usize;
            if out.len() <= r {
                out.resize(r + 1, Vec::new());
            }
            out[r].push((a, b));
        }
    }
    out
}

fn shell_avg(t: &BlockTensor, pairs: &[(usize, usize)]) -> C64 {
    pairs.iter().map(|&(a, b)| t.get(&[a, b])).sum::<C64>() / pairs.len() as f64
}

fn sig_of(cfg: &ExperimentConfig) -> Result<Vec<Charge>> {
    parse_charges(&cfg.sigma)
}

fn check_sigma_len(cfg: &ExperimentConfig, sigma: &[Charge]) -> Result<()> {
    if sigma.len() != cfg.n {
        return Err(Error::Config {
            path: "sigma".into(),
            msg: format!("length {} does not match n = {}", sigma.len(), cfg.n),
        });
    }
    Ok(())
}

/// One H sample: hermiticity, entry variances against S, optional dump.
pub fn run_sample(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let profile = cfg.profile()?;
    let geo = profile.geo;
    let n = geo.n_sites();
    let mut table = Table::new("variance", &["seed", "mean_ratio", "stderr", "entries"]);
    let mut herm = 0.0f64;
    for seed in seeds(cfg) {
        let start = Instant::now();
        let bm = sample_h(&profile, seed, 0);
        herm = herm.max(bm.hermiticity_residual());
        let mut ratios = Moments::default();
        for y in 0..n {
            for x in 0..=y {
                let s = profile.s(x, y);
                if s > 0.0 {
                    ratios.push(bm.h[(x, y)].norm_sqr() / s);
                }
            }
        }
        table.push(vec![seed.to_string(), fmt(ratios.mean()), fmt(ratios.stderr()), ratios.n.to_string()]);
        out.push(
            EstimatorResult::within(
                format!("entry_variance_ratio_seed{seed}"),
                ratios.mean(),
                ratios.stderr(),
                ratios.n,
                1.0,
                cfg.tolerances.k_sigma,
                cfg.tolerances.atol,
            )
            .timed(start),
        );
        if let Some(dir) = &cfg.out {
            std::fs::create_dir_all(dir)?;
            bm.write_dump(&dir.join(format!("sample_H_seed{seed}.bin")))?;
        }
    }
    out.push(EstimatorResult::at_most("hermiticity_residual", herm, cfg.samples, 0.0));
    out.tables.push(table);
    Ok(out)
}

/// Entrywise and averaged local law ratios at z and at z + iη.
pub fn run_local_law(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let profile = cfg.profile()?;
    let geo = profile.geo;
    cfg.check_bulk(&geo)?;
    let n = geo.n_sites();
    let z = cfg.z.c64();
    let z2 = C64::new(z.re, 2.0 * z.im);
    let (m, m2) = (m_sc(z)?, m_sc(z2)?);
    let coords: Vec<Vec<i64>> = (0..n).map(|x| geo.site_coords(x)).collect();
    let dist: Vec<u32> = (0..n * n).map(|k| geo.dist(&coords[k / n], &coords[k % n]) as u32).collect();
    let max_d = *dist.iter().max().unwrap() as usize;
    let calb_tab = |eta: f64| -> Vec<f64> { (0..=max_d).map(|k| calb(eta, k as f64, &geo)).collect() };
    let (cb1, cb2) = (calb_tab(z.im), calb_tab(z2.im));
    let start = Instant::now();
    let eval = |h: &faer::Mat<C64>, z: C64, m: C64, cb: &[f64]| -> Result<(f64, f64, f64)> {
        let b = resolve(h, z)?;
        let mut entry = 0.0f64;
        let mut raw = 0.0f64;
        for y in 0..n {
            for x in 0..n {
                let v = if x == y { b.g[(x, y)] - m } else { b.g[(x, y)] };
                let e = v.norm_sqr();
                raw = raw.max(e);
                entry = entry.max(e / cb[dist[x * n + y] as usize]);
            }
        }
        let avg = one_loops(&b, &geo, Charge::Plus)
            .into_iter()
            .map(|v| (v - m).norm())
            .fold(0.0, f64::max)
            / cb[0];
        Ok((entry, avg, raw))
    };
    let rows: Vec<[f64; 6]> = par_seeds(cfg, |seed| {
        let h = sample_h(&profile, seed, 0).h;
        let (e1, a1, r1) = eval(&h, z, m, &cb1)?;
        let (e2, a2, r2) = eval(&h, z2, m2, &cb2)?;
        Ok([e1, a1, r1, e2, a2, r2])
    })?;
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<_>>();
    let slack = cfg.tolerances.slack;
    let ns = cfg.samples;
    out.push(EstimatorResult::at_most("entrywise_ratio_p99", percentile(&col(0), 0.99), ns, slack).timed(start));
    out.push(EstimatorResult::at_most("averaged_ratio_p99", percentile(&col(1), 0.99), ns, slack).timed(start));
    out.push(EstimatorResult::recorded("entrywise_ratio_median", median(&col(0)), ns));
    out.push(EstimatorResult::recorded("averaged_ratio_median", median(&col(1)), ns));
    out.push(EstimatorResult::recorded("entrywise_ratio_p99_2eta", percentile(&col(3), 0.99), ns));
    out.push(EstimatorResult::recorded("averaged_ratio_p99_2eta", percentile(&col(4), 0.99), ns));
    out.push(EstimatorResult::recorded("calb_eta_0", cb1[0], ns));
    out.push(EstimatorResult::recorded("calb_2eta_0", cb2[0], ns));
    // the raw error max|G − mδ|² must not grow when η doubles
    out.push(EstimatorResult::at_most(
        "raw_error_ratio_2eta_over_eta",
        median(&col(5)) / median(&col(2)),
        ns,
        1.0,
    ));
    let mut t = Table::new(
        "ratios",
        &["seed", "entry_ratio", "avg_ratio", "max_sq_error", "entry_ratio_2eta", "avg_ratio_2eta", "max_sq_error_2eta"],
    );
    for (seed, r) in seeds(cfg).into_iter().zip(&rows) {
        let mut row = vec![seed.to_string()];
        row.extend(r.iter().map(|&v| fmt(v)));
        t.push(row);
    }
    out.tables.push(t);
    Ok(out)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DiffusionShell {
    pub shell: usize,
    pub pairs: usize,
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub z_score: f64,
    /// (ℬ_{η,0})^{1/5} ℬ_{η,W·r}
    pub envelope: f64,
}

/// (−,+) and (+,+) 2-loops against W^{-d}(|m|²Θ_{|m|²}) and W^{-d}(m²Θ_{m²}),
/// shell by shell.
pub fn run_diffusion(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let profile = cfg.profile()?;
    let geo = profile.geo;
    cfg.check_bulk(&geo)?;
    let z = cfg.z.c64();
    let eta = z.im;
    let m = m_sc(z)?;
    let wd = geo.wd();
    let th_abs = theta(&profile, C64::new(m.norm_sqr(), 0.0))?;
    let th_sq = theta(&profile, m * m)?;
    let target_abs = BlockTensor::from_fn(2, geo.n_blocks(), |i| th_abs.entry(i[0], i[1]) * m.norm_sqr() / wd);
    let target_sq = BlockTensor::from_fn(2, geo.n_blocks(), |i| th_sq.entry(i[0], i[1]) * m * m / wd);
    let sh = shells(&geo);
    let start = Instant::now();
    // per seed: shell averages of both loops and the Ward row-sum residual
    let per: Vec<(Vec<C64>, Vec<C64>, f64)> = par_seeds(cfg, |seed| {
        let h = sample_h(&profile, seed, 0).h;
        let b = resolve(&h, z)?;
        let la = full_2loop(&b, &geo, Charge::Minus, Charge::Plus);
        let ls = full_2loop(&b, &geo, Charge::Plus, Charge::Plus);
        let l1 = one_loops(&b, &geo, Charge::Plus);
        let nb = geo.n_blocks();
        let mut ward = 0.0f64;
        for a in 0..nb {
            let row: f64 = (0..nb).map(|bb| la.get(&[a, bb]).re).sum();
            let rhs = l1[a].im / (wd * eta);
            ward = ward.max((row - rhs).abs() / rhs.abs());
        }
        Ok((
            sh.iter().map(|p| shell_avg(&la, p)).collect(),
            sh.iter().map(|p| shell_avg(&ls, p)).collect(),
            ward,
        ))
    })?;
    let tol = &cfg.tolerances;
    let mut tables = Vec::new();
    let mut shell_reports = Vec::new();
    for (label, idx, target) in [("abs", 0usize, &target_abs), ("sq", 1, &target_sq)] {
        let mut table = Table::new(
            &format!("shells_{label}"),
            &["shell", "pairs", "part", "mean", "stderr", "target", "z_score", "envelope"],
        );
        for (r, pairs) in sh.iter().enumerate() {
            let tgt = shell_avg(target, pairs);
            let xs: Vec<C64> = per.iter().map(|p| if idx == 0 { p.0[r] } else { p.1[r] }).collect();
            let envelope = calb(eta, 0.0, &geo).powf(0.2) * calb(eta, (geo.w * r) as f64, &geo);
            let parts: &[(&str, fn(C64) -> f64)] = if idx == 0 {
                &[("re", |c| c.re)]
            } else {
                &[("re", |c| c.re), ("im", |c| c.im)]
            };
            for (part, f) in parts {
                let vals: Vec<f64> = xs.iter().map(|&c| f(c)).collect();
                let res = EstimatorResult::from_samples(
                    format!("diffusion_{label}_{part}_shell{r}"),
                    &vals,
                    f(tgt),
                    tol.k_sigma,
                    tol.atol,
                )
                .timed(start);
                let zs = (res.estimate - res.target).abs() / res.stderr.max(f64::MIN_POSITIVE);
                table.push(vec![
                    r.to_string(),
                    pairs.len().to_string(),
                    part.to_string(),
                    fmt(res.estimate),
                    fmt(res.stderr),
                    fmt(res.target),
                    fmt(zs),
                    fmt(envelope),
                ]);
                if idx == 0 {
                    shell_reports.push(DiffusionShell {
                        shell: r,
                        pairs: pairs.len(),
                        mean: res.estimate,
                        stderr: res.stderr,
                        target: res.target,
                        z_score: zs,
                        envelope,
                    });
                }
                out.push(res);
            }
        }
        tables.push(table);
    }
    let ward = per.iter().map(|p| p.2).fold(0.0, f64::max);
    out.push(EstimatorResult::at_most("row_sum_ward_identity", ward, cfg.samples, tol.ward));
    // Σ_b target(a, b) = W^{-d} |m|²/(1 − |m|²) = W^{-d} Im m / η
    let nb = geo.n_blocks();
    let row_t: f64 = (0..nb).map(|b| target_abs.get(&[0, b]).re).sum();
    let rhs = m.im / (wd * eta);
    out.push(EstimatorResult::at_most("target_row_sum_identity", (row_t - rhs).abs() / rhs, 1, tol.ward));
    out.tables.extend(tables);
    out.report("shells_abs", &shell_reports)?;
    Ok(out)
}

/// Max bulk N‖ψ_k‖_∞² per sample, against C(ln N)² and a GUE baseline of
/// equal size.
pub fn run_deloc(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let sizes = if cfg.sizes.is_empty() { vec![cfg.geo] } else { cfg.sizes.clone() };
    let mut table = Table::new("sup_norms", &["n", "seed", "band", "gue"]);
    let mut ratios = Vec::new();
    for g in &sizes {
        let start = Instant::now();
        let profile = VarianceProfile::new(g.geometry()?, cfg.lambda)?;
        let n = profile.geo.n_sites();
        let rows: Vec<(f64, f64)> = par_seeds(cfg, |seed| {
            let h = sample_h(&profile, seed, 0).h;
            let band = eigensystem(&h)?.bulk_sup_norms(cfg.kappa).into_iter().fold(0.0, f64::max);
            let hg = sample_gue(n, &mut rng_for(seed, STREAM_GUE));
            let gue = eigensystem(&hg)?.bulk_sup_norms(cfg.kappa).into_iter().fold(0.0, f64::max);
            Ok((band, gue))
        })?;
        for (seed, r) in seeds(cfg).into_iter().zip(&rows) {
            table.push(vec![n.to_string(), seed.to_string(), fmt(r.0), fmt(r.1)]);
        }
        let band: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let gue: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let (mb, mg) = (median(&band), median(&gue));
        let bound = cfg.tolerances.deloc_c * (n as f64).ln().powi(2);
        out.push(EstimatorResult::at_most(format!("deloc_median_N{n}"), mb, cfg.samples, bound).timed(start));
        out.push(EstimatorResult::recorded(format!("deloc_max_N{n}"), band.iter().cloned().fold(0.0, f64::max), cfg.samples));
        out.push(EstimatorResult::recorded(format!("gue_median_N{n}"), mg, cfg.samples));
        out.push(EstimatorResult::recorded(format!("band_over_gue_N{n}"), mb / mg, cfg.samples));
        ratios.push(mb / mg);
    }
    if ratios.len() >= 2 {
        out.push(EstimatorResult::recorded(
            "band_over_gue_trend_last_over_first",
            ratios[ratios.len() - 1] / ratios[0],
            cfg.samples,
        ));
    }
    out.tables.push(table);
    Ok(out)
}

/// L^(n) − K^(n) at flow coordinates (E, t), with H_t = √t·H.
pub fn run_lk(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let profile = cfg.profile()?;
    let geo = profile.geo;
    let st = SpectralFlowState::new(cfg.e, cfg.t, geo.l)?;
    let ctx = KContext::new(&profile, cfg.t, st.m)?;
    let scale = b_param(cfg.t, 0.0, &geo) / geo.wd();
    let tol = &cfg.tolerances;
    let n = cfg.n;
    if !(1..=3).contains(&n) {
        return Err(Error::Config {
            path: "n".into(),
            msg: format!("lk supports n in 1..=3, got {n}"),
        });
    }
    let sigma = if n == 1 { vec![Charge::Plus] } else { sig_of(cfg)? };
    check_sigma_len(cfg, &sigma)?;
    let k = explicit_tensor(&ctx, &sigma)?;
    let start = Instant::now();
    let resolve_t = |seed: u64| {
        let h = gaussian_band(&profile, cfg.t.sqrt(), &mut rng_for(seed, flowlab::STREAM_HT));
        resolve(&h, st.z_t)
    };
    let diffs: Vec<BlockTensor> = par_seeds(cfg, |seed| {
        let b = resolve_t(seed)?;
        let mut l = loop_tensor(&b, &geo, &sigma)?;
        for (x, y) in l.data.iter_mut().zip(&k.data) {
            *x -= y;
        }
        Ok(l)
    })?;
    let ratios: Vec<f64> = diffs.iter().map(|d| d.max_abs() / scale.powi(n as i32)).collect();
    out.push(EstimatorResult::recorded("lk_max_ratio_median", median(&ratios), cfg.samples));
    out.push(EstimatorResult::recorded("lk_scale", scale.powi(n as i32), cfg.samples));
    let p99 = percentile(&ratios, 0.99);
    if n == 1 {
        out.push(EstimatorResult::at_most("lk1_ratio_p99", p99, cfg.samples, tol.slack).timed(start));
    } else {
        out.push(EstimatorResult::recorded("lk_max_ratio_p99", p99, cfg.samples));
    }
    if n == 2 {
        let sh = shells(&geo);
        let mut table = Table::new(
            "shells",
            &["shell", "mean_re", "mean_im", "stderr_re", "stderr_im", "mean_abs", "k_shell", "tail", "scale2"],
        );
        for (r, pairs) in sh.iter().enumerate() {
            let avg: Vec<C64> = diffs.iter().map(|d| shell_avg(d, pairs)).collect();
            let abs: Vec<f64> = diffs
                .iter()
                .map(|d| pairs.iter().map(|&(a, b)| d.get(&[a, b]).norm()).sum::<f64>() / pairs.len() as f64)
                .collect();
            let re = Moments::from_slice(&avg.iter().map(|c| c.re).collect::<Vec<_>>());
            let im = Moments::from_slice(&avg.iter().map(|c| c.im).collect::<Vec<_>>());
            let ks = shell_avg(&k, pairs);
            table.push(vec![
                r.to_string(),
                fmt(re.mean()),
                fmt(im.mean()),
                fmt(re.stderr()),
                fmt(im.stderr()),
                fmt(abs.iter().sum::<f64>() / abs.len() as f64),
                fmt(ks.re),
                fmt(tail(cfg.t, r as f64, &geo)),
                fmt(scale * scale),
            ]);
            // distant shells only: adjacent blocks carry the O(W^{-d}) bias
            if r >= 2 {
                out.push(
                    EstimatorResult::within(format!("lk2_mean_re_shell{r}"), re.mean(), re.stderr(), cfg.samples, 0.0, tol.k_sigma, tol.atol)
                        .timed(start),
                );
                out.push(
                    EstimatorResult::within(format!("lk2_mean_im_shell{r}"), im.mean(), im.stderr(), cfg.samples, 0.0, tol.k_sigma, tol.atol)
                        .timed(start),
                );
            }
        }
        out.tables.push(table);
    }
    let mut t = Table::new("ratios", &["seed", "max_abs_diff", "ratio"]);
    for ((seed, d), r) in seeds(cfg).into_iter().zip(&diffs).zip(&ratios) {
        t.push(vec![seed.to_string(), fmt(d.max_abs()), fmt(*r)]);
    }
    out.tables.push(t);
    Ok(out)
}

/// K^(n) from the ODE hierarchy against the explicit forms (n ≤ 3) and the
/// tree representation (n ≥ 3).
pub fn run_kloop(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let profile = cfg.profile()?;
    let sigma = sig_of(cfg)?;
    check_sigma_len(cfg, &sigma)?;
    let n = sigma.len();
    let m = m_real(cfg.e)?;
    let ctx = KContext::new(&profile, cfg.t, m)?;
    let tol = &cfg.tolerances;
    let mut table = Table::new("comparison", &["route", "reference", "rel_err", "max_abs"]);
    let tree = if n >= 3 {
        let trees = enumerate_tsp(n)?;
        out.push(EstimatorResult::recorded(format!("tree_count_n{n}"), trees.len() as f64, 1));
        out.report("trees", &trees)?;
        Some(k_tree_tensor(&ctx, &sigma)?)
    } else {
        None
    };
    if n <= 5 {
        let start = Instant::now();
        let ode = k_loop_ode(&profile, m, &[sigma.clone()], cfg.t, cfg.steps)?;
        let k_ode = ode
            .family
            .get(&sigma)
            .ok_or_else(|| Error::Precondition("ODE family lacks the requested signature".into()))?;
        out.push(EstimatorResult::recorded("ode_halving_error", ode.halving_error, cfg.steps));
        if n <= 3 {
            let ex = explicit_tensor(&ctx, &sigma)?;
            let rel = k_ode.rel_diff(&ex);
            table.push(vec!["ode".into(), "explicit".into(), fmt(rel), fmt(ex.max_abs())]);
            out.push(EstimatorResult::at_most(format!("k{n}_explicit_vs_ode"), rel, 1, tol.explicit_ode).timed(start));
        }
        if let Some(tr) = &tree {
            let rel = tr.rel_diff(k_ode);
            table.push(vec!["tree".into(), "ode".into(), fmt(rel), fmt(tr.max_abs())]);
            out.push(EstimatorResult::at_most(format!("k{n}_tree_vs_ode"), rel, 1, tol.tree_ode).timed(start));
        }
    }
    if n == 3 {
        let rel = tree.as_ref().unwrap().rel_diff(&explicit_tensor(&ctx, &sigma)?);
        table.push(vec!["tree".into(), "explicit".into(), fmt(rel), String::new()]);
        out.push(EstimatorResult::at_most("k3_tree_vs_explicit", rel, 1, tol.explicit_ode));
    }
    out.tables.push(table);
    Ok(out)
}

fn random_config<R: Rng>(rng: &mut R, nb: usize) -> (LoopSignature, usize) {
    let n = rng.random_range(2..=4usize);
    let sigma: Vec<Charge> = (0..n)
        .map(|_| if rng.random_bool(0.5) { Charge::Plus } else { Charge::Minus })
        .collect();
    let blocks: Vec<usize> = (0..n).map(|_| rng.random_range(0..nb)).collect();
    let k = rng.random_range(1..n);
    (LoopSignature { sigma, blocks }, k)
}

/// Exact identities on sampled H: resolvent Ward, loop and K-loop Ward
/// identities, and the Cauchy–Schwarz Ward inequality.
pub fn run_ward_check(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let tol = &cfg.tolerances;
    let sizes = if cfg.sizes.is_empty() { vec![cfg.geo] } else { cfg.sizes.clone() };
    let z = cfg.z.c64();
    let sigmas = ["+-", "-+", "+--", "-++", "++-", "--+"];
    let mut table = Table::new("residuals", &["check", "n_sites", "sigma", "residual"]);
    let mut last = None;
    for g in &sizes {
        let profile = VarianceProfile::new(g.geometry()?, cfg.lambda)?;
        let geo = profile.geo;
        let n = geo.n_sites();
        let start = Instant::now();
        let h = sample_h(&profile, cfg.seed, 0).h;
        let b = resolve(&h, z)?;
        let w = ward_residual(&b);
        let r = w.diagonal.max(w.off_diagonal);
        table.push(vec!["resolvent_ward".into(), n.to_string(), String::new(), fmt(r)]);
        out.push(EstimatorResult::at_most(format!("resolvent_ward_N{n}"), r, 1, tol.ward).timed(start));
        for s in sigmas {
            let start = Instant::now();
            let r = loop_ward_residual(&b, &geo, &parse_charges(s)?, z.im)?;
            table.push(vec!["loop_ward".into(), n.to_string(), s.into(), fmt(r)]);
            out.push(EstimatorResult::at_most(format!("loop_ward_{s}_N{n}"), r, 1, tol.loop_ward).timed(start));
        }
        last = Some((profile, b));
    }
    let (profile, b) = last.unwrap();
    let geo = profile.geo;
    let m = m_real(cfg.e)?;
    let ctx = KContext::new(&profile, cfg.t, m)?;
    for s in sigmas {
        let r = k_ward_residual(&ctx, &parse_charges(s)?)?;
        table.push(vec!["k_ward".into(), String::new(), s.into(), fmt(r)]);
        out.push(EstimatorResult::at_most(format!("k_ward_{s}"), r, 1, tol.loop_ward));
    }
    let start = Instant::now();
    let mut rng = rng_for(cfg.seed, STREAM_CONFIGS);
    let mut fails = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..cfg.samples {
        let (sig, k) = random_config(&mut rng, geo.n_blocks());
        let w = ward_inequality_check(&b, &geo, &sig, k, tol.inequality_slack)?;
        if !w.holds {
            fails += 1;
        }
        if w.rhs > 0.0 {
            worst = worst.max(w.lhs / w.rhs);
        }
    }
    out.push(EstimatorResult::at_most("ward_inequality_failures", fails as f64, cfg.samples, 0.0).timed(start));
    out.push(EstimatorResult::recorded("ward_inequality_max_lhs_over_rhs", worst, cfg.samples));
    out.tables.push(table);
    Ok(out)
}

fn max_kernel_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MeasuredConstants {
    pub l: usize,
    pub t: f64,
    pub decay_c: f64,
    pub decay_big_c: f64,
    pub short_decay_c: f64,
    pub first_difference: f64,
    pub second_difference: f64,
    pub ring: f64,
    pub kernel_growth_alternating: f64,
    pub kernel_growth_same: f64,
    pub k3_bound_ratio: f64,
}

/// Propagator algebra, evolution-kernel identities, mollifier identities,
/// and measured constants compared across sizes.
pub fn run_decay(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let tol = &cfg.tolerances;
    let sizes = if cfg.sizes.is_empty() { vec![cfg.geo] } else { cfg.sizes.clone() };
    let t_grid = if cfg.t_grid.is_empty() { vec![cfg.t] } else { cfg.t_grid.clone() };
    let m = m_real(cfg.e)?;
    let mut consts: Vec<MeasuredConstants> = Vec::new();
    let mut table = Table::new(
        "constants",
        &["l", "t", "decay_c", "decay_big_c", "short_decay_c", "first", "second", "ring", "growth_alt", "growth_same", "k3_ratio"],
    );
    for g in &sizes {
        let profile = VarianceProfile::new(g.geometry()?, cfg.lambda)?;
        let geo = profile.geo;
        let l = geo.l;
        let nb = geo.n_blocks();
        for &t in &t_grid {
            let start = Instant::now();
            let tag = format!("L{l}_t{t}");
            let xi_r = C64::new(t, 0.0);
            let xi_c = t * m * m;
            let th = theta(&profile, xi_r)?;
            let thc = theta(&profile, xi_c)?;
            let inv = crate::propagator::dense_inverse_residual(&profile, xi_r, &th)
                .max(crate::propagator::dense_inverse_residual(&profile, xi_c, &thc));
            out.push(EstimatorResult::at_most(format!("theta_inverse_{tag}"), inv, 1, tol.algebra).timed(start));
            let (a, b) = (th.dense(), thc.dense());
            let comm = max_kernel_diff(&dense_mul(&a, &b, nb), &dense_mul(&b, &a, nb));
            out.push(EstimatorResult::at_most(format!("theta_commute_{tag}"), comm, 1, tol.algebra));
            let rs = (th.row_sum() - 1.0 / (1.0 - t)).norm() * (1.0 - t);
            out.push(EstimatorResult::at_most(format!("theta_row_sum_{tag}"), rs, 1, tol.algebra));
            let zm = th.zero_mode_removed().row_sum().norm();
            out.push(EstimatorResult::at_most(format!("theta_ring_row_sum_{tag}"), zm, 1, tol.algebra));

            // evolution kernel legs, U_{t,t} and the semigroup property
            let s = 0.5 * t;
            let mut legd = 0.0f64;
            let mut legd_lit = 0.0f64;
            for xi in [m * m.conj(), m * m] {
                let lg = leg(&profile, s, t, xi)?;
                legd = legd.max(max_kernel_diff(&lg.kernel, &leg_decomposition(&profile, s, t, xi)?.kernel));
                legd_lit = legd_lit.max(max_kernel_diff(&lg.kernel, &leg_decomposition_without_s(&profile, s, t, xi)?.kernel));
            }
            out.push(EstimatorResult::at_most(format!("leg_decomposition_{tag}"), legd, 1, tol.kernel));
            out.push(EstimatorResult::recorded(format!("leg_decomposition_without_s_{tag}"), legd_lit, 1));
            let sigma = parse_charges("+-+")?;
            let a3 = local_tensor(&geo, 3, 1.0);
            let same = evolution_kernel_apply(&profile, t, t, &sigma, m, &a3)?;
            out.push(EstimatorResult::at_most(format!("kernel_identity_{tag}"), same.max_diff(&a3), 1, tol.kernel));
            let u = 0.5 * (s + t);
            let two = evolution_kernel_apply(&profile, u, t, &sigma, m, &evolution_kernel_apply(&profile, s, u, &sigma, m, &a3)?)?;
            let one = evolution_kernel_apply(&profile, s, t, &sigma, m, &a3)?;
            out.push(EstimatorResult::at_most(format!("kernel_semigroup_{tag}"), two.rel_diff(&one), 1, tol.kernel));

            // mollifier and sum-zero
            let chi = mollifier(&geo, t, 3)?;
            let norm = partial_sum(&chi)?.iter().map(|v| (v - 1.0).norm()).fold(0.0, f64::max);
            out.push(EstimatorResult::at_most(format!("mollifier_normalization_{tag}"), norm, 1, tol.kernel));
            let a = BlockTensor::from_fn(3, nb, |i| C64::new(((i[0] * 7 + i[1] * 3 + i[2]) % 5) as f64, (i[1] as f64).sin()));
            let scale = partial_sum(&a)?.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let pq = partial_sum(&sum_zero(&a, &chi)?)?.iter().map(|v| v.norm()).fold(0.0, f64::max) / scale;
            out.push(EstimatorResult::at_most(format!("sum_zero_{tag}"), pq, 1, tol.kernel));

            // measured constants
            let dp = decay_profile(&profile, t)?;
            let ds = decay_profile_short(&profile, t, m)?;
            let dc = difference_checks(&profile, t)?;
            let ka = kernel_norm_report(&profile, s, t, &parse_charges("+-")?, m)?;
            let kn = kernel_norm_report(&profile, s, t, &parse_charges("++")?, m)?;
            let kb = k_bound_report(&profile, m, &sigma, &[t], 4096)?;
            let c = MeasuredConstants {
                l,
                t,
                decay_c: dp.c,
                decay_big_c: dp.big_c,
                short_decay_c: ds.c,
                first_difference: dc.first,
                second_difference: dc.second,
                ring: dc.ring,
                kernel_growth_alternating: ka.growth,
                kernel_growth_same: kn.growth,
                k3_bound_ratio: kb[0].ratio,
            };
            table.push(vec![
                l.to_string(),
                t.to_string(),
                fmt(c.decay_c),
                fmt(c.decay_big_c),
                fmt(c.short_decay_c),
                fmt(c.first_difference),
                fmt(c.second_difference),
                fmt(c.ring),
                fmt(c.kernel_growth_alternating),
                fmt(c.kernel_growth_same),
                fmt(c.k3_bound_ratio),
            ]);
            out.push(EstimatorResult::at_most(format!("decay_rate_positive_{tag}"), -c.decay_c, 1, 0.0));
            consts.push(c);
        }
    }
    // stability: every constant finite, and within the allowed factor
    // between the smallest and largest size at each t
    let names: [(&str, fn(&MeasuredConstants) -> f64); 9] = [
        ("decay_c", |c| c.decay_c),
        ("decay_big_c", |c| c.decay_big_c),
        ("short_decay_c", |c| c.short_decay_c),
        ("first_difference", |c| c.first_difference),
        ("second_difference", |c| c.second_difference),
        ("ring", |c| c.ring),
        ("kernel_growth_alternating", |c| c.kernel_growth_alternating),
        ("kernel_growth_same", |c| c.kernel_growth_same),
        ("k3_bound_ratio", |c| c.k3_bound_ratio),
    ];
    let finite = consts.iter().all(|c| names.iter().all(|(_, f)| f(c).is_finite()));
    out.push(EstimatorResult::at_most("constants_finite", if finite { 0.0 } else { 1.0 }, consts.len(), 0.0));
    if sizes.len() >= 2 {
        for &t in &t_grid {
            let at_t: Vec<&MeasuredConstants> = consts.iter().filter(|c| c.t == t).collect();
            for (name, f) in names {
                let vals: Vec<f64> = at_t.iter().map(|c| f(c).abs()).collect();
                let hi = vals.iter().cloned().fold(0.0, f64::max);
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let ratio = if hi == 0.0 { 1.0 } else { hi / lo };
                out.push(EstimatorResult::at_most(format!("stability_{name}_t{t}"), ratio, vals.len(), tol.stability));
            }
        }
    }
    out.tables.push(table);
    out.report("constants", &consts)?;
    Ok(out)
}

/// Hierarchy residual, quadratic variation, the flow/direct two-path check
/// and the light-weight trajectory scale.
pub fn run_flow_check(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(cfg);
    let profile = cfg.profile()?;
    let geo = profile.geo;
    let tol = &cfg.tolerances;
    let sigma = sig_of(cfg)?;
    if cfg.blocks.len() != sigma.len() || cfg.blocks.iter().any(|&a| a >= geo.n_blocks()) {
        return Err(Error::Config {
            path: "blocks".into(),
            msg: format!("need {} block indices below {}", sigma.len(), geo.n_blocks()),
        });
    }
    let sig = LoopSignature::new(sigma.clone(), cfg.blocks.clone())?;
    let start = Instant::now();
    let rep = flowlab::hierarchy_residual(&profile, cfg.e, cfg.t, cfg.dt, &sig, cfg.samples, cfg.seed)?;
    let ns = rep.n_samples;
    out.push(EstimatorResult::within("hierarchy_residual", rep.residual_mean, rep.residual_stderr, ns, 0.0, tol.k_sigma, tol.atol).timed(start));
    out.push(EstimatorResult::recorded("hierarchy_drift_mean", rep.drift_mean, ns));
    out.push(EstimatorResult::within("qvar_vs_exact", rep.qv_residual_mean, rep.qv_residual_stderr, ns, 0.0, tol.k_sigma, tol.atol).timed(start));
    out.push(EstimatorResult::recorded("qvar_exact_mean", rep.qv_exact_mean, ns));
    out.push(EstimatorResult::recorded("qvar_tensor_mean", rep.qv_tensor_mean, ns));
    out.push(EstimatorResult::recorded("qvar_one_sided_mean", rep.qv_one_sided_mean, ns));
    let nf = sig.n() as f64;
    let cs = rep
        .samples
        .iter()
        .map(|s| s.qv_exact / (nf * s.qv_tensor))
        .fold(0.0, f64::max);
    out.push(EstimatorResult::at_most("qvar_exact_over_n_tensor", cs, ns, 1.0 + 1e-10));
    let mut t = Table::new("hierarchy", &["seed", "increment", "drift", "sq_increment", "sq_increment_one_sided", "qv_exact", "qv_tensor"]);
    for s in &rep.samples {
        t.push(vec![
            s.seed.to_string(),
            fmt(s.increment),
            fmt(s.drift),
            fmt(s.sq_increment),
            fmt(s.sq_increment_one_sided),
            fmt(s.qv_exact),
            fmt(s.qv_tensor),
        ]);
    }
    out.tables.push(t);

    let start = Instant::now();
    let tp = flowlab::flow_direct_check(&profile, cfg.z.c64(), cfg.kappa, cfg.steps, cfg.samples, cfg.seed)?;
    let se = (tp.flow_stderr.powi(2) + tp.direct_stderr.powi(2)).sqrt();
    out.push(EstimatorResult::within("flow_direct_im_trace", tp.flow_mean, se, cfg.samples, tp.direct_mean, tol.k_sigma, tol.atol).timed(start));
    out.report("two_path", &tp)?;

    if !cfg.t_grid.is_empty() {
        let start = Instant::now();
        let n_traj = cfg.samples.min(8);
        let mut worst = 0.0f64;
        let mut t = Table::new("lightweight", &["seed", "t", "max_abs", "scale", "ratio"]);
        for seed in cfg.seed..cfg.seed + n_traj as u64 {
            let tr = flowlab::simulate_flow(&profile, cfg.e, &cfg.t_grid, seed, &[], true)?;
            for (tt, v) in flowlab::lightweight_trajectory(&tr, &profile)? {
                let scale = b_param(tt, 0.0, &geo) / geo.wd();
                worst = worst.max(v / scale);
                t.push(vec![seed.to_string(), tt.to_string(), fmt(v), fmt(scale), fmt(v / scale)]);
            }
        }
        out.push(EstimatorResult::at_most("lightweight_trajectory_ratio", worst, n_traj, tol.slack).timed(start));
        out.tables.push(t);
    }
    Ok(out)
}
