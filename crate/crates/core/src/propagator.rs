//! Circulant algebra on the block lattice: propagators Θ_ξ = (1 − ξS^(B))^{-1},
//! the zero-mode-removed Θ̊, control parameters, tail functions, the
//! linearised loop operator 𝛩 and the evolution kernels U_{s,t,σ}.
//!
//! Every circulant here is a function of S^(B), hence symmetric and
//! translation invariant; it is stored as its kernel `k[lin(b − a)]` together
//! with its Fourier symbol.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;
use crate::model::VarianceProfile;
use crate::spectral::Charge;
use crate::tensor::BlockTensor;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// d-dimensional FFT over L^d row-major arrays, applied axis by axis.
#[derive(Clone)]
pub struct BlockFft {
    d: usize,
    l: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for BlockFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BlockFft(d={}, l={})", self.d, self.l)
    }
}

impl BlockFft {
    pub fn new(d: usize, l: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            d,
            l,
            fwd: p.plan_fft_forward(l),
            inv: p.plan_fft_inverse(l),
        }
    }

    fn run(&self, data: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        let l = self.l;
        let n = l.pow(self.d as u32);
        assert_eq!(data.len(), n);
        let mut line = vec![ZERO; l];
        let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
        for axis in 0..self.d {
            let stride = l.pow((self.d - 1 - axis) as u32);
            for outer in (0..n).step_by(stride * l) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[base + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
    }

    /// Unnormalised forward transform.
    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &self.fwd);
    }

    /// Inverse transform normalised by 1/L^d.
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &self.inv);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

/// Symmetric translation-invariant operator on C^{Z_L^d}.
#[derive(Debug, Clone)]
pub struct Circulant {
    pub geo: TorusGeometry,
    /// `kernel[lin(b − a)]` = entry (a, b).
    pub kernel: Vec<C64>,
    /// Eigenvalue on the Fourier mode k, `symbol[lin(k)]`.
    pub symbol: Vec<C64>,
}

impl Circulant {
    pub fn from_kernel(geo: TorusGeometry, kernel: Vec<C64>) -> Self {
        let mut symbol = kernel.clone();
        BlockFft::new(geo.d, geo.l).forward(&mut symbol);
        Self { geo, kernel, symbol }
    }

    pub fn from_symbol(geo: TorusGeometry, symbol: Vec<C64>) -> Self {
        let mut kernel = symbol.clone();
        BlockFft::new(geo.d, geo.l).inverse(&mut kernel);
        Self { geo, kernel, symbol }
    }

    pub fn identity(geo: TorusGeometry) -> Self {
        let nb = geo.n_blocks();
        let mut kernel = vec![ZERO; nb];
        kernel[0] = ONE;
        Self {
            geo,
            kernel,
            symbol: vec![ONE; nb],
        }
    }

    /// S^(B) as a circulant.
    pub fn stencil(profile: &VarianceProfile) -> Self {
        let kernel = profile.stencil().iter().map(|&s| C64::new(s, 0.0)).collect();
        Self::from_kernel(profile.geo, kernel)
    }

    pub fn nb(&self) -> usize {
        self.kernel.len()
    }

    #[inline]
    pub fn entry(&self, a: usize, b: usize) -> C64 {
        self.kernel[self.geo.block_diff_lin(a, b)]
    }

    /// Row-major dense copy.
    pub fn dense(&self) -> Vec<C64> {
        let nb = self.nb();
        let mut out = vec![ZERO; nb * nb];
        for a in 0..nb {
            for b in 0..nb {
                out[a * nb + b] = self.entry(a, b);
            }
        }
        out
    }

    /// Common row sum Σ_b C(a, b) (the zero-mode eigenvalue).
    pub fn row_sum(&self) -> C64 {
        self.kernel.iter().sum()
    }

    /// ∞→∞ operator norm, max_a Σ_b |C(a, b)|.
    pub fn inf_norm(&self) -> f64 {
        self.kernel.iter().map(|v| v.norm()).sum()
    }

    /// Product of two circulants (they commute).
    pub fn compose(&self, other: &Self) -> Self {
        let symbol = self.symbol.iter().zip(&other.symbol).map(|(a, b)| a * b).collect();
        Self::from_symbol(self.geo, symbol)
    }

    pub fn map_symbol(&self, f: impl Fn(C64) -> C64) -> Self {
        Self::from_symbol(self.geo, self.symbol.iter().map(|&s| f(s)).collect())
    }

    /// self − I.
    pub fn minus_identity(&self) -> Self {
        let mut out = self.clone();
        out.kernel[0] -= ONE;
        for s in &mut out.symbol {
            *s -= ONE;
        }
        out
    }

    /// Matrix-vector product via FFT.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let fft = BlockFft::new(self.geo.d, self.geo.l);
        let mut w = v.to_vec();
        fft.forward(&mut w);
        for (x, s) in w.iter_mut().zip(&self.symbol) {
            *x *= s;
        }
        fft.inverse(&mut w);
        w
    }

    /// Matrix-vector product by direct summation.
    pub fn apply_direct(&self, v: &[C64]) -> Vec<C64> {
        let nb = self.nb();
        (0..nb)
            .map(|a| (0..nb).map(|b| self.entry(a, b) * v[b]).sum())
            .collect()
    }

    /// Zero-mode-removed variant: C(a,b) − L^{-2d} Σ_{a',b'} C(a',b').
    pub fn zero_mode_removed(&self) -> Self {
        let shift = self.row_sum() / self.nb() as f64;
        let kernel = self.kernel.iter().map(|&k| k - shift).collect();
        Self::from_kernel(self.geo, kernel)
    }
}

/// Θ_ξ = (1 − ξS^(B))^{-1}, computed on the Fourier side.
pub fn theta(profile: &VarianceProfile, xi: C64) -> Result<Circulant> {
    let s = Circulant::stencil(profile);
    let mut min_den = f64::INFINITY;
    let symbol: Vec<C64> = s
        .symbol
        .iter()
        .map(|&sh| {
            let den = ONE - xi * sh;
            min_den = min_den.min(den.norm());
            ONE / den
        })
        .collect();
    if min_den < 1e-12 {
        return Err(Error::NearSingular(format!(
            "min |1 - xi*s(k)| = {min_den:e} at xi = {xi}"
        )));
    }
    Ok(Circulant::from_symbol(profile.geo, symbol))
}

/// Zero-mode-removed propagator Θ̊_ξ.
pub fn theta_ring(profile: &VarianceProfile, xi: C64) -> Result<Circulant> {
    Ok(theta(profile, xi)?.zero_mode_removed())
}

/// B_{t,K} = (K+1)^{-(d-2)} + (L^d |1 − t|)^{-1}.
pub fn b_param(t: f64, k: f64, geo: &TorusGeometry) -> f64 {
    (k + 1.0).powi(-(geo.d as i32 - 2)) + 1.0 / (geo.n_blocks() as f64 * (1.0 - t).abs())
}

/// ℓ_t = min(|1 − t|^{-1/2}, L).
pub fn ell(t: f64, geo: &TorusGeometry) -> f64 {
    crate::spectral::ell(t, geo.l)
}

/// Tail function 𝒯_t(r) = ((r^{d-2}+1)^{-1} + (L^d|1−t|)^{-1}) exp(−(r/ℓ_t)^{1/2}).
pub fn tail(t: f64, r: f64, geo: &TorusGeometry) -> f64 {
    let pre = 1.0 / (r.powi(geo.d as i32 - 2) + 1.0) + 1.0 / (geo.n_blocks() as f64 * (1.0 - t).abs());
    pre * (-(r / ell(t, geo)).sqrt()).exp()
}

/// Truncated tail max(𝒯_t(min(r, ℓ)), W^{-D}).
pub fn tail_trunc(t: f64, r: f64, ell_cut: f64, big_d: f64, geo: &TorusGeometry) -> f64 {
    tail(t, r.min(ell_cut), geo).max((geo.w as f64).powf(-big_d))
}

/// The local-law control parameter ℬ_{η,K} = W^{-2}(K+W)^{-(d-2)} + (Nη)^{-1}.
pub fn calb(eta: f64, k: f64, geo: &TorusGeometry) -> f64 {
    let w = geo.w as f64;
    1.0 / (w * w * (k + w).powi(geo.d as i32 - 2)) + 1.0 / (geo.n_sites() as f64 * eta)
}

/// Measured constant in Σ_c 𝒯_u(|a−c|)𝒯_t(|c−b|) ≤ C/(1−u) 𝒯_t(|a−b|),
/// maximised over b with a = 0.
pub fn tail_composition_constant(u: f64, t: f64, geo: &TorusGeometry) -> f64 {
    let nb = geo.n_blocks();
    let dist: Vec<f64> = (0..nb).map(|c| geo.dist_block_lin(0, c) as f64).collect();
    let mut worst = 0.0f64;
    for b in 0..nb {
        let mut s = 0.0;
        for c in 0..nb {
            s += tail(u, dist[c], geo) * tail(t, geo.dist_block_lin(c, b) as f64, geo);
        }
        worst = worst.max(s * (1.0 - u) / tail(t, dist[b], geo));
    }
    worst
}

/// One row of a decay table.
#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub shell_radius: i64,
    pub max_abs: f64,
    pub bound_value: f64,
}

/// Tabulated decay of |Θ_ξ(0, a)| over L¹ shells with fitted constants.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub t: f64,
    pub xi_kind: String,
    pub ell_t: f64,
    /// Fitted rate c in exp(−c|a|/ℓ_t) (or exp(−c|a|) for the short kind).
    pub c: f64,
    /// Smallest C making the bound hold on every shell with the fitted c.
    pub big_c: f64,
    pub rows: Vec<DecayRow>,
}

/// Max of |kernel| on each L¹ shell around the origin.
pub fn shell_max(circ: &Circulant) -> Vec<(i64, f64)> {
    let geo = circ.geo;
    let mut by_r = std::collections::BTreeMap::<i64, f64>::new();
    for a in 0..circ.nb() {
        let r = geo.dist_block_lin(0, a);
        let e = by_r.entry(r).or_insert(0.0);
        *e = e.max(circ.kernel[a].norm());
    }
    by_r.into_iter().collect()
}

fn fit_rate(points: &[(f64, f64)]) -> f64 {
    // least-squares slope of y against x
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return f64::NAN;
    }
    -sxy / sxx
}

/// Decay profile of Θ_t (`xi_kind = "t"`) against B_{t,|a|} exp(−c|a|/ℓ_t).
pub fn decay_profile(profile: &VarianceProfile, t: f64) -> Result<DecayReport> {
    let geo = profile.geo;
    let th = theta(profile, C64::new(t, 0.0))?;
    let l = ell(t, &geo);
    let shells = shell_max(&th);
    let pts: Vec<(f64, f64)> = shells
        .iter()
        .filter(|(r, v)| *r >= 1 && *v > 0.0)
        .map(|&(r, v)| (r as f64 / l, (v / b_param(t, r as f64, &geo)).ln()))
        .collect();
    let c = fit_rate(&pts);
    if !c.is_finite() {
        return Err(Error::Precondition(format!("decay fit failed at t = {t}")));
    }
    let mut big_c = 0.0f64;
    for &(r, v) in &shells {
        let env = b_param(t, r as f64, &geo) * (-c * r as f64 / l).exp();
        big_c = big_c.max(v / env);
    }
    let rows = shells
        .iter()
        .map(|&(r, v)| DecayRow {
            shell_radius: r,
            max_abs: v,
            bound_value: big_c * b_param(t, r as f64, &geo) * (-c * r as f64 / l).exp(),
        })
        .collect();
    Ok(DecayReport {
        t,
        xi_kind: "t".into(),
        ell_t: l,
        c,
        big_c,
        rows,
    })
}

/// Decay of the short propagator Θ_{tm²} against C exp(−c|a|).
pub fn decay_profile_short(profile: &VarianceProfile, t: f64, m: C64) -> Result<DecayReport> {
    let geo = profile.geo;
    let th = theta(profile, t * m * m)?;
    let shells = shell_max(&th);
    let pts: Vec<(f64, f64)> = shells
        .iter()
        .filter(|(_, v)| *v > 1e-300)
        .map(|&(r, v)| (r as f64, v.ln()))
        .collect();
    let c = fit_rate(&pts);
    if !c.is_finite() {
        return Err(Error::Precondition(format!("short decay fit failed at t = {t}")));
    }
    let big_c = shells
        .iter()
        .map(|&(r, v)| v * (c * r as f64).exp())
        .fold(0.0, f64::max);
    let rows = shells
        .iter()
        .map(|&(r, v)| DecayRow {
            shell_radius: r,
            max_abs: v,
            bound_value: big_c * (-c * r as f64).exp(),
        })
        .collect();
    Ok(DecayReport {
        t,
        xi_kind: "tm2".into(),
        ell_t: ell(t, &geo),
        c,
        big_c,
        rows,
    })
}

/// Measured constants for the first/second-difference and Θ̊ bounds.
#[derive(Debug, Clone, Serialize)]
pub struct DifferenceReport {
    pub t: f64,
    /// max |Θ(0,a+r) − Θ(0,a)| (|a|+1)^{d-1} / |r| over 0 < |r| ≤ |a|/2
    pub first: f64,
    /// max |Θ(0,a+r) + Θ(0,a−r) − 2Θ(0,a)| (|a|+1)^d / |r|² over 0 < |r| ≤ |a|/2
    pub second: f64,
    /// max |Θ̊(0,a)| (|a|+1)^{d-2}
    pub ring: f64,
    /// max second-difference asymmetry under r → −r (zero by symmetry)
    pub second_asymmetry: f64,
}

pub fn difference_checks(profile: &VarianceProfile, t: f64) -> Result<DifferenceReport> {
    let geo = profile.geo;
    let d = geo.d as i32;
    let th = theta(profile, C64::new(t, 0.0))?;
    let ring = th.zero_mode_removed();
    let nb = geo.n_blocks();
    let coords: Vec<Vec<i64>> = (0..nb).map(|a| geo.block_coords(a)).collect();
    let norm: Vec<i64> = (0..nb).map(|a| geo.dist_block_lin(0, a)).collect();
    let add = |a: usize, r: usize, sign: i64| -> usize {
        let v: Vec<i64> = coords[a].iter().zip(&coords[r]).map(|(x, y)| x + sign * y).collect();
        geo.block_lin(&v)
    };
    let (mut first, mut second, mut asym) = (0.0f64, 0.0f64, 0.0f64);
    for a in 0..nb {
        let na = norm[a];
        for r in 1..nb {
            let nr = norm[r];
            if 2 * nr > na {
                continue;
            }
            let t0 = th.kernel[a];
            let tp = th.kernel[add(a, r, 1)];
            let tm = th.kernel[add(a, r, -1)];
            let scale = (na + 1) as f64;
            first = first.max((tp - t0).norm() * scale.powi(d - 1) / nr as f64);
            let sd = tp + tm - 2.0 * t0;
            second = second.max(sd.norm() * scale.powi(d) / (nr * nr) as f64);
            let sd_neg = tm + tp - 2.0 * t0;
            asym = asym.max((sd - sd_neg).norm());
        }
    }
    let ring_c = (0..nb)
        .map(|a| ring.kernel[a].norm() * ((norm[a] + 1) as f64).powi(d - 2))
        .fold(0.0, f64::max);
    Ok(DifferenceReport {
        t,
        first,
        second,
        ring: ring_c,
        second_asymmetry: asym,
    })
}

/// ξ_i = m(σ_i) m(σ_{i+1}) with cyclic convention.
pub fn pair_products(sigma: &[Charge], m: C64) -> Vec<C64> {
    let n = sigma.len();
    (0..n)
        .map(|i| sigma[i].apply(m) * sigma[(i + 1) % n].apply(m))
        .collect()
}

/// Linearised loop operator: Σ_i axis-i action of ξ_i S^(B) Θ_{tξ_i}.
///
/// This is the generator of the evolution kernel U_{s,t,σ}; on K^(2) it
/// returns 2 ∂_t K^(2).
pub fn theta_operator(profile: &VarianceProfile, t: f64, sigma: &[Charge], m: C64, a: &BlockTensor) -> Result<BlockTensor> {
    a.check_rank(sigma.len())?;
    let s = Circulant::stencil(profile);
    let mut out = BlockTensor::zeros(a.rank, a.nb);
    for (i, xi) in pair_products(sigma, m).into_iter().enumerate() {
        let op = theta(profile, t * xi)?.compose(&s).map_symbol(|v| v * xi);
        out.add_assign(&a.apply_axis(i, &op.dense()));
    }
    Ok(out)
}

/// The operator with per-axis factor ξ_i Θ_{tξ_i}, without the S^(B) factor.
pub fn theta_operator_without_s(
    profile: &VarianceProfile,
    t: f64,
    sigma: &[Charge],
    m: C64,
    a: &BlockTensor,
) -> Result<BlockTensor> {
    a.check_rank(sigma.len())?;
    let mut out = BlockTensor::zeros(a.rank, a.nb);
    for (i, xi) in pair_products(sigma, m).into_iter().enumerate() {
        let op = theta(profile, t * xi)?.map_symbol(|v| v * xi);
        out.add_assign(&a.apply_axis(i, &op.dense()));
    }
    Ok(out)
}

/// Leg of the evolution kernel: (1 − sξS^(B)) / (1 − tξS^(B)).
pub fn leg(profile: &VarianceProfile, s: f64, t: f64, xi: C64) -> Result<Circulant> {
    if !(0.0 <= s && s <= t && t < 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 <= s <= t < 1, got s={s}, t={t}")));
    }
    let th = theta(profile, t * xi)?;
    let st = Circulant::stencil(profile);
    let symbol = th
        .symbol
        .iter()
        .zip(&st.symbol)
        .map(|(&thk, &sk)| (ONE - s * xi * sk) * thk)
        .collect();
    Ok(Circulant::from_symbol(profile.geo, symbol))
}

/// I + (t − s) ξ S^(B) Θ_{tξ}.
pub fn leg_decomposition(profile: &VarianceProfile, s: f64, t: f64, xi: C64) -> Result<Circulant> {
    let th = theta(profile, t * xi)?;
    let st = Circulant::stencil(profile);
    let mut out = st.compose(&th).map_symbol(|v| v * (t - s) * xi);
    out.kernel[0] += ONE;
    for v in &mut out.symbol {
        *v += ONE;
    }
    Ok(out)
}

/// I + (t − s) ξ Θ_{tξ}, the decomposition without the S^(B) factor.
pub fn leg_decomposition_without_s(profile: &VarianceProfile, s: f64, t: f64, xi: C64) -> Result<Circulant> {
    let mut out = theta(profile, t * xi)?.map_symbol(|v| v * (t - s) * xi);
    out.kernel[0] += ONE;
    for v in &mut out.symbol {
        *v += ONE;
    }
    Ok(out)
}

/// Apply U_{s,t,σ} to a rank-n tensor.
pub fn evolution_kernel_apply(
    profile: &VarianceProfile,
    s: f64,
    t: f64,
    sigma: &[Charge],
    m: C64,
    a: &BlockTensor,
) -> Result<BlockTensor> {
    a.check_rank(sigma.len())?;
    let mut out = a.clone();
    for (i, xi) in pair_products(sigma, m).into_iter().enumerate() {
        out = out.apply_axis(i, &leg(profile, s, t, xi)?.dense());
    }
    Ok(out)
}

/// Tensor equal to 1 where all pairwise block distances are ≤ `radius`.
pub fn local_tensor(geo: &TorusGeometry, rank: usize, radius: f64) -> BlockTensor {
    let nb = geo.n_blocks();
    let dist: Vec<Vec<i64>> = (0..nb)
        .map(|a| (0..nb).map(|b| geo.dist_block_lin(a, b)).collect())
        .collect();
    BlockTensor::from_fn(rank, nb, |idx| {
        let ok = idx
            .iter()
            .all(|&x| idx.iter().all(|&y| dist[x][y] as f64 <= radius));
        if ok {
            ONE
        } else {
            ZERO
        }
    })
}

/// ∞→∞ growth of U_{s,t,σ} on a tensor localised at scale ℓ_s.
#[derive(Debug, Clone, Serialize)]
pub struct KernelNormReport {
    pub s: f64,
    pub t: f64,
    pub sigma: String,
    pub alternating: bool,
    /// ‖U∘A‖_∞ / ‖A‖_∞
    pub growth: f64,
    /// growth / (ℓ_t²/ℓ_s²) for alternating σ, growth itself otherwise
    pub normalized: f64,
}

pub fn kernel_norm_report(
    profile: &VarianceProfile,
    s: f64,
    t: f64,
    sigma: &[Charge],
    m: C64,
) -> Result<KernelNormReport> {
    let geo = profile.geo;
    let a = local_tensor(&geo, sigma.len(), ell(s, &geo));
    let u = evolution_kernel_apply(profile, s, t, sigma, m, &a)?;
    let growth = u.max_abs() / a.max_abs();
    let n = sigma.len();
    let alternating = (0..n).all(|i| sigma[i] != sigma[(i + 1) % n]);
    let scale = if alternating {
        (ell(t, &geo) / ell(s, &geo)).powi(2)
    } else {
        1.0
    };
    Ok(KernelNormReport {
        s,
        t,
        sigma: crate::spectral::charges_to_string(sigma),
        alternating,
        growth,
        normalized: growth / scale,
    })
}

/// Dense (1 − ξS^(B)) Θ_ξ − I, max entry, for cross-checking the FFT path.
pub fn dense_inverse_residual(profile: &VarianceProfile, xi: C64, th: &Circulant) -> f64 {
    let nb = profile.geo.n_blocks();
    let sb = profile.sb_dense();
    let td = th.dense();
    let mut worst = 0.0f64;
    for a in 0..nb {
        for b in 0..nb {
            let mut acc = td[a * nb + b];
            for c in 0..nb {
                acc -= xi * sb[a * nb + c] * td[c * nb + b];
            }
            let e = if a == b { ONE } else { ZERO };
            worst = worst.max((acc - e).norm());
        }
    }
    worst
}

/// Dense product of two row-major nb×nb matrices.
pub fn dense_mul(a: &[C64], b: &[C64], nb: usize) -> Vec<C64> {
    let mut out = vec![ZERO; nb * nb];
    for i in 0..nb {
        for k in 0..nb {
            let x = a[i * nb + k];
            if x == ZERO {
                continue;
            }
            for j in 0..nb {
                out[i * nb + j] += x * b[k * nb + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(d: usize, l: usize) -> VarianceProfile {
        VarianceProfile::new(TorusGeometry::new(d, 1, l).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn fft_roundtrip() {
        let f = BlockFft::new(3, 4);
        let orig: Vec<C64> = (0..64).map(|k| C64::new(k as f64, (k % 5) as f64)).collect();
        let mut v = orig.clone();
        f.forward(&mut v);
        f.inverse(&mut v);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn theta_zero_is_identity() {
        let p = profile(3, 4);
        let th = theta(&p, ZERO).unwrap();
        assert!((th.kernel[0] - ONE).norm() < 1e-15);
        assert!(th.kernel[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn theta_row_sum_half() {
        let p = profile(3, 4);
        let th = theta(&p, C64::new(0.5, 0.0)).unwrap();
        assert!((th.row_sum() - C64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn theta_dense_inverse() {
        for l in [2, 3, 4] {
            let p = profile(3, l);
            let xi = C64::new(-0.3, 0.6);
            let th = theta(&p, xi).unwrap();
            assert!(dense_inverse_residual(&p, xi, &th) < 1e-12);
        }
    }

    #[test]
    fn apply_fft_matches_direct() {
        let p = profile(3, 3);
        let th = theta(&p, C64::new(0.7, 0.1)).unwrap();
        let v: Vec<C64> = (0..27).map(|k| C64::new((k * k % 7) as f64, k as f64)).collect();
        let a = th.apply(&v);
        let b = th.apply_direct(&v);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn short_propagator_dominated() {
        let p = profile(3, 6);
        let m = C64::new(0.0, 1.0);
        let t = 0.9;
        let short = theta(&p, t * m * m).unwrap();
        let long = theta(&p, C64::new(t, 0.0)).unwrap();
        for a in 0..p.geo.n_blocks() {
            assert!(short.kernel[a].norm() <= long.kernel[a].re + 1e-13);
        }
    }

    #[test]
    fn b_and_ell_examples() {
        let g = TorusGeometry::new(3, 1, 2).unwrap();
        assert!((b_param(0.0, 0.0, &g) - 1.125).abs() < 1e-15);
        let g = TorusGeometry::new(1, 1, 100).unwrap();
        assert!((ell(0.99, &g) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn tail_is_monotone() {
        let g = TorusGeometry::new(3, 2, 8).unwrap();
        for &t in &[0.0, 0.5, 0.9, 0.99] {
            let mut prev = f64::INFINITY;
            for k in 0..40 {
                let v = tail(t, k as f64 * 0.3, &g);
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn kernel_identity_semigroup_and_decomposition() {
        let p = profile(3, 3);
        let m = crate::spectral::m_real(0.3).unwrap();
        for xi in [ONE, m * m, m.conj() * m.conj()] {
            let l = leg(&p, 0.5, 0.9, xi).unwrap();
            let dec = leg_decomposition(&p, 0.5, 0.9, xi).unwrap();
            for (x, y) in l.kernel.iter().zip(&dec.kernel) {
                assert!((x - y).norm() < 1e-12);
            }
            let id = leg(&p, 0.7, 0.7, xi).unwrap();
            assert!((id.kernel[0] - ONE).norm() < 1e-13);
            let comp = leg(&p, 0.2, 0.6, xi).unwrap().compose(&leg(&p, 0.6, 0.9, xi).unwrap());
            let direct = leg(&p, 0.2, 0.9, xi).unwrap();
            for (x, y) in comp.kernel.iter().zip(&direct.kernel) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn decay_fit_positive() {
        let p = profile(3, 8);
        let r = decay_profile(&p, 0.9).unwrap();
        assert!(r.c > 0.0 && r.big_c.is_finite());
        for row in &r.rows {
            assert!(row.max_abs <= row.bound_value * (1.0 + 1e-12));
        }
    }
}
