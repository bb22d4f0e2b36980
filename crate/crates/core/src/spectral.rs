//! Semicircle utilities, the characteristic flow z_t, dense resolvents,
//! eigendecompositions and the elementary Ward identity.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::C64;

/// Charge of a resolvent factor: `Plus` is G(z), `Minus` is G(z)* = G(z̄).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
pub enum Charge {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Charge {
    pub fn flip(self) -> Self {
        match self {
            Charge::Plus => Charge::Minus,
            Charge::Minus => Charge::Plus,
        }
    }

    /// m(σ): m for `Plus`, conj(m) for `Minus`.
    pub fn apply(self, m: C64) -> C64 {
        match self {
            Charge::Plus => m,
            Charge::Minus => m.conj(),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Charge::Plus => '+',
            Charge::Minus => '-',
        }
    }
}

/// Parse a charge string such as `"+-+"`.
pub fn parse_charges(s: &str) -> Result<Vec<Charge>> {
    s.chars()
        .map(|c| match c {
            '+' => Ok(Charge::Plus),
            '-' => Ok(Charge::Minus),
            _ => Err(Error::InvalidParameter(format!("bad charge symbol {c:?}"))),
        })
        .collect()
}

pub fn charges_to_string(sigma: &[Charge]) -> String {
    sigma.iter().map(|c| c.symbol()).collect()
}

/// Root of t m² + z m + 1 = 0 with Im m > 0 (t > 0), or −1/z for t = 0.
fn upper_root(z: C64, t: f64) -> Option<C64> {
    if t == 0.0 {
        return Some(-1.0 / z);
    }
    let disc = (z * z - 4.0 * t).sqrt();
    let r1 = (-z + disc) / (2.0 * t);
    let r2 = (-z - disc) / (2.0 * t);
    // The two roots multiply to 1/t; take the larger one for accuracy and
    // recover the other from the product.
    let (big, small) = if r1.norm() >= r2.norm() { (r1, r2) } else { (r2, r1) };
    let small = if big.norm() > 0.0 { 1.0 / (t * big) } else { small };
    if small.im > 0.0 && big.im <= 0.0 {
        Some(small)
    } else if big.im > 0.0 && small.im <= 0.0 {
        Some(big)
    } else {
        None
    }
}

/// Stieltjes transform of the semicircle law at z ∈ C₊.
pub fn m_sc(z: C64) -> Result<C64> {
    if !(z.im > 0.0) {
        if z.im == 0.0 {
            return m_real(z.re);
        }
        return Err(Error::InvalidParameter(format!("m_sc needs Im z >= 0, got {z}")));
    }
    upper_root(z, 1.0).ok_or_else(|| Error::InvalidParameter(format!("no C+ root at z = {z}")))
}

/// Boundary value m(E) = m_sc(E + i0⁺) for |E| < 2.
pub fn m_real(e: f64) -> Result<C64> {
    if !(e.abs() < 2.0) {
        return Err(Error::OutsideBulk(format!("|E| = {} >= 2", e.abs())));
    }
    Ok(C64::new(-0.5 * e, 0.5 * (4.0 - e * e).sqrt()))
}

/// Solution of m_t(z) = −(z + t m_t(z))^{-1} in C₊.
pub fn m_t(z: C64, t: f64) -> Result<C64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t must lie in [0,1], got {t}")));
    }
    if !(z.im > 0.0) {
        return Err(Error::InvalidParameter(format!("m_t needs Im z > 0, got {z}")));
    }
    upper_root(z, t).ok_or_else(|| Error::NearSingular(format!("no C+ branch for m_t at z = {z}, t = {t}")))
}

/// State of the characteristic flow at time t for flow parameter E.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectralFlowState {
    pub e: f64,
    pub t: f64,
    pub m: C64,
    pub z_t: C64,
    pub eta_t: f64,
    pub ell_t: f64,
}

impl SpectralFlowState {
    pub fn new(e: f64, t: f64, l: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!("t must lie in [0,1], got {t}")));
        }
        let m = m_real(e)?;
        let z_t = C64::new(e, 0.0) + (1.0 - t) * m;
        Ok(Self {
            e,
            t,
            m,
            z_t,
            eta_t: (1.0 - t) * m.im,
            ell_t: ell(t, l),
        })
    }

    /// m(σ) for this state.
    pub fn m_of(&self, s: Charge) -> C64 {
        s.apply(self.m)
    }

    /// Spectral parameter of a charge: z_t for `Plus`, conj(z_t) for `Minus`.
    pub fn z_of(&self, s: Charge) -> C64 {
        match s {
            Charge::Plus => self.z_t,
            Charge::Minus => self.z_t.conj(),
        }
    }
}

/// ℓ_t = min(|1−t|^{-1/2}, L).
pub fn ell(t: f64, l: usize) -> f64 {
    let r = (1.0 - t).abs();
    if r == 0.0 {
        l as f64
    } else {
        r.powf(-0.5).min(l as f64)
    }
}

/// Map a target spectral parameter z in the bulk to flow coordinates
/// (t0, E) with √t0·m(E) = m(z) and z_{t0}(E) = √t0·z.
pub fn target_to_flow(z: C64, kappa: f64) -> Result<(f64, f64)> {
    if z.re.abs() > 2.0 - kappa {
        return Err(Error::OutsideBulk(format!(
            "|Re z| = {} exceeds 2 - kappa = {}",
            z.re.abs(),
            2.0 - kappa
        )));
    }
    if !(z.im > 0.0) {
        return Err(Error::InvalidParameter(format!("Im z must be > 0, got {z}")));
    }
    let mz = m_sc(z)?;
    let t0 = mz.norm_sqr();
    let e = -2.0 * mz.re / mz.norm();
    let st = t0.sqrt();
    let me = m_real(e)?;
    let r1 = (st * me - mz).norm();
    let zt = C64::new(e, 0.0) + (1.0 - t0) * me;
    let r2 = (zt - st * z).norm();
    if r1 > 1e-12 || r2 > 1e-12 {
        return Err(Error::NearSingular(format!(
            "flow postcondition residuals {r1:e}, {r2:e}"
        )));
    }
    Ok((t0, e))
}

/// Dense resolvent G(z) = (H − z)^{-1} together with its adjoint.
#[derive(Debug, Clone)]
pub struct ResolventBundle {
    pub z: C64,
    pub g: Mat<C64>,
    pub g_adj: Mat<C64>,
}

impl ResolventBundle {
    /// G(σ): G for `Plus`, G* for `Minus`.
    pub fn get(&self, s: Charge) -> &Mat<C64> {
        match s {
            Charge::Plus => &self.g,
            Charge::Minus => &self.g_adj,
        }
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }
}

/// Compute G(z) by dense LU.
pub fn resolve(h: &Mat<C64>, z: C64) -> Result<ResolventBundle> {
    let n = h.nrows();
    let a = Mat::from_fn(n, n, |i, j| if i == j { h[(i, j)] - z } else { h[(i, j)] });
    let g = a.partial_piv_lu().inverse();
    if g.col_iter().any(|c| c.iter().any(|v| !v.re.is_finite() || !v.im.is_finite())) {
        return Err(Error::NearSingular(format!("H - z is singular at z = {z}")));
    }
    let g_adj = g.adjoint().to_owned();
    Ok(ResolventBundle { z, g, g_adj })
}

/// max |(H − z)G − I|.
pub fn resolvent_residual(h: &Mat<C64>, b: &ResolventBundle) -> f64 {
    let n = h.nrows();
    let hg = h * &b.g;
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let e = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((hg[(i, j)] - b.z * b.g[(i, j)] - e).norm());
        }
    }
    worst
}

/// Residuals of the Ward identity, relative to the largest right-hand side.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WardReport {
    /// max_y |Σ_x |G_xy|² − Im G_yy / η| / max_y |Im G_yy / η|
    pub diagonal: f64,
    /// max_{y,y'} |(G*G)_{y'y} − (G − G*)_{y'y}/(2iη)| / max |RHS|
    pub off_diagonal: f64,
}

pub fn ward_residual(b: &ResolventBundle) -> WardReport {
    let n = b.n();
    let eta = b.z.im;
    let mut diag_err = 0.0f64;
    let mut diag_scale = 0.0f64;
    for y in 0..n {
        let lhs: f64 = b.g.col(y).iter().map(|v| v.norm_sqr()).sum();
        let rhs = b.g[(y, y)].im / eta;
        diag_err = diag_err.max((lhs - rhs).abs());
        diag_scale = diag_scale.max(rhs.abs());
    }
    let gg = &b.g_adj * &b.g;
    let two_i_eta = C64::new(0.0, 2.0 * eta);
    let mut off_err = 0.0f64;
    let mut off_scale = 0.0f64;
    for y in 0..n {
        for yp in 0..n {
            let rhs = (b.g[(yp, y)] - b.g_adj[(yp, y)]) / two_i_eta;
            off_err = off_err.max((gg[(yp, y)] - rhs).norm());
            off_scale = off_scale.max(rhs.norm());
        }
    }
    WardReport {
        diagonal: diag_err / diag_scale.max(f64::MIN_POSITIVE),
        off_diagonal: off_err / off_scale.max(f64::MIN_POSITIVE),
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: Mat<C64>,
}

pub fn eigensystem(h: &Mat<C64>) -> Result<Eigensystem> {
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let values = (0..s.nrows()).map(|i| s[i].re).collect();
    Ok(Eigensystem {
        values,
        vectors: evd.U().to_owned(),
    })
}

impl Eigensystem {
    /// N·‖ψ_k‖_∞² for every eigenvalue with |λ_k| ≤ 2 − κ.
    pub fn bulk_sup_norms(&self, kappa: f64) -> Vec<f64> {
        let n = self.vectors.nrows();
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &l)| l.abs() <= 2.0 - kappa)
            .map(|(k, _)| {
                let sup = self
                    .vectors
                    .col(k)
                    .iter()
                    .map(|v| v.norm_sqr())
                    .fold(0.0f64, f64::max);
                n as f64 * sup
            })
            .collect()
    }

    /// max_k ‖Hψ_k − λ_k ψ_k‖₂ and max |U*U − I|.
    pub fn residuals(&self, h: &Mat<C64>) -> (f64, f64) {
        let n = h.nrows();
        let hu = h * &self.vectors;
        let mut eig = 0.0f64;
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += (hu[(i, k)] - self.values[k] * self.vectors[(i, k)]).norm_sqr();
            }
            eig = eig.max(s.sqrt());
        }
        let uu = self.vectors.adjoint() * &self.vectors;
        let mut orth = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                orth = orth.max((uu[(i, j)] - e).norm());
            }
        }
        (eig, orth)
    }
}

/// Median of a slice (NaN-free input assumed).
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn m_sc_at_i() {
        let m = m_sc(c(0.0, 1.0)).unwrap();
        let expect = c(0.0, (5f64.sqrt() - 1.0) / 2.0);
        assert!((m - expect).norm() < 1e-15);
    }

    #[test]
    fn m_sc_residual_and_branch() {
        for &(re, im) in &[(0.3, 1e-3), (-1.7, 0.2), (5.0, 0.1), (0.0, 10.0), (1.99, 1e-6)] {
            let z = c(re, im);
            let m = m_sc(z).unwrap();
            assert!(m.im > 0.0);
            assert!((m * m + z * m + 1.0).norm() < 1e-14, "{z}");
        }
    }

    #[test]
    fn m_real_on_unit_circle() {
        assert!((m_real(0.0).unwrap() - c(0.0, 1.0)).norm() < 1e-15);
        for &e in &[-1.9, -0.5, 0.3, 1.5] {
            assert!((m_real(e).unwrap().norm() - 1.0).abs() < 1e-14);
        }
        assert!(m_real(2.0).is_err());
    }

    #[test]
    fn m_t_limits_and_flow_invariance() {
        let z = c(0.4, 0.3);
        assert!((m_t(z, 1.0).unwrap() - m_sc(z).unwrap()).norm() < 1e-14);
        assert!((m_t(z, 0.0).unwrap() + 1.0 / z).norm() < 1e-15);
        let st = SpectralFlowState::new(0.3, 0.7, 8).unwrap();
        assert!((m_t(st.z_t, 0.7).unwrap() - st.m).norm() < 1e-12);
        for k in 0..20 {
            let t = k as f64 * 0.05;
            let st = SpectralFlowState::new(-1.2, t, 8).unwrap();
            assert!((m_t(st.z_t, t).unwrap() - st.m).norm() < 1e-10);
        }
    }

    #[test]
    fn target_to_flow_at_i() {
        let (t0, e) = target_to_flow(c(0.0, 1.0), 0.1).unwrap();
        assert!((t0 - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!(e.abs() < 1e-14);
        let (t0, _) = target_to_flow(c(0.5, 0.01), 0.1).unwrap();
        assert!(t0 > 0.9 && t0 < 1.0);
        assert!(target_to_flow(c(1.95, 0.1), 0.1).is_err());
    }

    #[test]
    fn resolve_zero_matrix() {
        let h = Mat::<C64>::zeros(4, 4);
        let b = resolve(&h, c(0.0, 1.0)).unwrap();
        for i in 0..4 {
            assert!((b.g[(i, i)] - c(0.0, 1.0)).norm() < 1e-15);
        }
        let w = ward_residual(&b);
        assert!(w.diagonal < 1e-15 && w.off_diagonal < 1e-15);
    }

    #[test]
    fn median_works() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
