//! G-loops L^(n)_{σ,a} = Tr ∏ G(σ_i) E_{a_i} with E_a = W^{-d} 1_{I_a},
//! the cut-and-glue index calculus, loop Ward identities and inequalities,
//! the light-weight and quadratic terms of the loop hierarchy, and the
//! quadratic-variation loops of its martingale part.
//!
//! Loops are evaluated as chains of block slabs of G, so a single n-loop
//! costs O(n W^{3d}) instead of n dense products.

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;
use crate::model::VarianceProfile;
use crate::spectral::{Charge, ResolventBundle};
use crate::tensor::BlockTensor;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Charge string with block indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoopSignature {
    pub sigma: Vec<Charge>,
    pub blocks: Vec<usize>,
}

impl LoopSignature {
    pub fn new(sigma: Vec<Charge>, blocks: Vec<usize>) -> Result<Self> {
        if sigma.is_empty() || sigma.len() != blocks.len() {
            return Err(Error::InvalidParameter(format!(
                "signature lengths differ: {} charges, {} blocks",
                sigma.len(),
                blocks.len()
            )));
        }
        Ok(Self { sigma, blocks })
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }
}

/// Cut-and-glue operators. Positions `k`, `l` are 1-based as in the loop
/// notation, with 1 ≤ k < l ≤ n for the pair forms.
#[derive(Debug, Clone, Copy)]
pub enum CutGlue {
    /// G_k^{(a)}: duplicate σ_k and insert block `a` before a_k.
    Insert { k: usize, a: usize },
    /// (G_L)_{k,l}^{(a)}: (σ_1..σ_k, σ_l..σ_n), (a_1..a_{k−1}, a, a_l..a_n).
    Left { k: usize, l: usize, a: usize },
    /// (G_R)_{k,l}^{(b)}: (σ_k..σ_l), (a_k..a_{l−1}, b).
    Right { k: usize, l: usize, b: usize },
}

pub fn cut_glue(sig: &LoopSignature, op: CutGlue) -> Result<LoopSignature> {
    let n = sig.n();
    let s = &sig.sigma;
    let a = &sig.blocks;
    match op {
        CutGlue::Insert { k, a: x } => {
            if k < 1 || k > n {
                return Err(Error::InvalidParameter(format!("k = {k} outside 1..={n}")));
            }
            let mut sigma = s.clone();
            sigma.insert(k - 1, s[k - 1]);
            let mut blocks = a.clone();
            blocks.insert(k - 1, x);
            LoopSignature::new(sigma, blocks)
        }
        CutGlue::Left { k, l, a: x } => {
            check_pair(k, l, n)?;
            let mut sigma: Vec<Charge> = s[..k].to_vec();
            sigma.extend_from_slice(&s[l - 1..]);
            let mut blocks: Vec<usize> = a[..k - 1].to_vec();
            blocks.push(x);
            blocks.extend_from_slice(&a[l - 1..]);
            LoopSignature::new(sigma, blocks)
        }
        CutGlue::Right { k, l, b } => {
            check_pair(k, l, n)?;
            let sigma = s[k - 1..l].to_vec();
            let mut blocks = a[k - 1..l - 1].to_vec();
            blocks.push(b);
            LoopSignature::new(sigma, blocks)
        }
    }
}

fn check_pair(k: usize, l: usize, n: usize) -> Result<()> {
    if !(1 <= k && k < l && l <= n) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= k < l <= n, got k = {k}, l = {l}, n = {n}"
        )));
    }
    Ok(())
}

/// Vertex of a resolvent chain.
#[derive(Debug, Clone)]
pub enum Vertex {
    /// E_a.
    Block(usize),
    /// Σ_b w_b E_b, a block-constant diagonal matrix.
    Weights(Vec<C64>),
}

impl Vertex {
    fn range(&self, geo: &TorusGeometry) -> std::ops::Range<usize> {
        match self {
            Vertex::Block(a) => geo.cells_of(*a),
            Vertex::Weights(_) => 0..geo.n_sites(),
        }
    }
}

fn scale_columns(m: &mut Mat<C64>, v: &Vertex, geo: &TorusGeometry) {
    let wd = geo.wd();
    match v {
        Vertex::Block(_) => {
            let s = 1.0 / wd;
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    m[(i, j)] *= s;
                }
            }
        }
        Vertex::Weights(w) => {
            let bs = geo.block_size();
            for j in 0..m.ncols() {
                let s = w[j / bs] / wd;
                for i in 0..m.nrows() {
                    m[(i, j)] *= s;
                }
            }
        }
    }
}

/// Tr(G(σ_1) V_1 G(σ_2) V_2 ⋯ G(σ_n) V_n).
pub fn chain_trace(b: &ResolventBundle, geo: &TorusGeometry, sigma: &[Charge], vertices: &[Vertex]) -> C64 {
    let n = sigma.len();
    assert_eq!(n, vertices.len());
    assert!(n >= 1);
    let r_last = vertices[n - 1].range(geo);
    let r0 = vertices[0].range(geo);
    let g0 = b.get(sigma[0]);
    let mut r: Mat<C64> = g0
        .submatrix(r_last.start, r0.start, r_last.len(), r0.len())
        .to_owned();
    scale_columns(&mut r, &vertices[0], geo);
    for i in 1..n {
        let prev = vertices[i - 1].range(geo);
        let cur = vertices[i].range(geo);
        let gi = b.get(sigma[i]);
        let slab = gi.submatrix(prev.start, cur.start, prev.len(), cur.len());
        let mut next = &r * slab;
        scale_columns(&mut next, &vertices[i], geo);
        r = next;
    }
    (0..r.nrows()).map(|i| r[(i, i)]).sum()
}

/// L^(n)_{σ,a}.
pub fn g_loop(b: &ResolventBundle, geo: &TorusGeometry, sig: &LoopSignature) -> C64 {
    let v: Vec<Vertex> = sig.blocks.iter().map(|&a| Vertex::Block(a)).collect();
    chain_trace(b, geo, &sig.sigma, &v)
}

/// L^(n) for charges and blocks given separately.
pub fn loop_at(b: &ResolventBundle, geo: &TorusGeometry, sigma: &[Charge], a: &[usize]) -> C64 {
    let v: Vec<Vertex> = a.iter().map(|&x| Vertex::Block(x)).collect();
    chain_trace(b, geo, sigma, &v)
}

/// ⟨G(σ) E_a⟩ for every block a.
pub fn one_loops(b: &ResolventBundle, geo: &TorusGeometry, s: Charge) -> Vec<C64> {
    let g = b.get(s);
    (0..geo.n_blocks())
        .map(|a| geo.cells_of(a).map(|x| g[(x, x)]).sum::<C64>() / geo.wd())
        .collect()
}

/// All L^(2)_{(σ1,σ2),(a,b)} = W^{-2d} Σ_{x∈I_a, y∈I_b} G(σ1)_{yx} G(σ2)_{xy}.
pub fn full_2loop(b: &ResolventBundle, geo: &TorusGeometry, s1: Charge, s2: Charge) -> BlockTensor {
    let nb = geo.n_blocks();
    let bs = geo.block_size();
    let n = geo.n_sites();
    let g1 = b.get(s1);
    let g2 = b.get(s2);
    let mut out = BlockTensor::zeros(2, nb);
    for y in 0..n {
        let bb = y / bs;
        for x in 0..n {
            out.data[(x / bs) * nb + bb] += g1[(y, x)] * g2[(x, y)];
        }
    }
    out.scale(C64::new(1.0 / (geo.wd() * geo.wd()), 0.0));
    out
}

/// All L^(3)_{σ,(a1,a2,a3)}.
pub fn full_3loop(b: &ResolventBundle, geo: &TorusGeometry, sigma: &[Charge]) -> BlockTensor {
    assert_eq!(sigma.len(), 3);
    let nb = geo.n_blocks();
    let bs = geo.block_size();
    let n = geo.n_sites();
    let (g1, g2, g3) = (b.get(sigma[0]), b.get(sigma[1]), b.get(sigma[2]));
    let mut out = BlockTensor::zeros(3, nb);
    for a2 in 0..nb {
        let r = geo.cells_of(a2);
        let c = g2.submatrix(0, r.start, n, bs) * g3.submatrix(r.start, 0, bs, n);
        // L(a1,a2,a3) = Σ_{u∈a3, v∈a1} G1[u,v] C[v,u]
        for v in 0..n {
            let a1 = v / bs;
            for u in 0..n {
                out.data[(a1 * nb + a2) * nb + u / bs] += g1[(u, v)] * c[(v, u)];
            }
        }
    }
    out.scale(C64::new(geo.wd().powi(-3), 0.0));
    out
}

/// Full loop tensor for n ∈ {1, 2, 3}.
pub fn loop_tensor(b: &ResolventBundle, geo: &TorusGeometry, sigma: &[Charge]) -> Result<BlockTensor> {
    match sigma.len() {
        1 => Ok(BlockTensor {
            rank: 1,
            nb: geo.n_blocks(),
            data: one_loops(b, geo, sigma[0]),
        }),
        2 => Ok(full_2loop(b, geo, sigma[0], sigma[1])),
        3 => Ok(full_3loop(b, geo, sigma)),
        n => Err(Error::InvalidParameter(format!(
            "full tensors are materialised only for n <= 3, got {n}"
        ))),
    }
}

/// Right-hand side charges of the vertex Ward identity: (±, σ_2, …, σ_{n−1}).
fn ward_hat(sigma: &[Charge], s: Charge) -> Vec<Charge> {
    let n = sigma.len();
    let mut out = vec![s];
    out.extend_from_slice(&sigma[1..n - 1]);
    out
}

fn check_ward_pre(sigma: &[Charge]) -> Result<()> {
    let n = sigma.len();
    if n < 2 {
        return Err(Error::Precondition("Ward identity needs n >= 2".into()));
    }
    if sigma[0] != sigma[n - 1].flip() {
        return Err(Error::Precondition("Ward identity needs sigma_1 = -sigma_n".into()));
    }
    Ok(())
}

/// Residual of Σ_{a_n} L^(n) = (2i W^d η)^{-1} (L^(n−1)_{σ̂+} − L^(n−1)_{σ̂−})
/// over all prefixes, relative to max |RHS|; full tensors, n ∈ {2, 3}.
pub fn loop_ward_residual(b: &ResolventBundle, geo: &TorusGeometry, sigma: &[Charge], eta: f64) -> Result<f64> {
    check_ward_pre(sigma)?;
    let full = loop_tensor(b, geo, sigma)?;
    let plus = loop_tensor(b, geo, &ward_hat(sigma, Charge::Plus))?;
    let minus = loop_tensor(b, geo, &ward_hat(sigma, Charge::Minus))?;
    Ok(vertex_ward_residual(&full, &plus, &minus, geo.wd(), eta))
}

/// Relative residual of Σ_{a_n} F^(n)(p, a_n) = (2i W^d η)^{-1}(F_+(p) − F_−(p))
/// over all prefixes p, for full tensors F^(n) and F^(n−1)_{σ̂±}.
pub fn vertex_ward_residual(full: &BlockTensor, plus: &BlockTensor, minus: &BlockTensor, wd: f64, eta: f64) -> f64 {
    let nb = full.nb;
    let pref = C64::new(0.0, 2.0 * wd * eta);
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for p in 0..nb.pow((full.rank - 1) as u32) {
        let lhs: C64 = full.data[p * nb..(p + 1) * nb].iter().sum();
        let rhs = (plus.data[p] - minus.data[p]) / pref;
        err = err.max((lhs - rhs).norm());
        scale = scale.max(rhs.norm());
    }
    err / scale.max(f64::MIN_POSITIVE)
}

/// Pointwise Ward residual at a fixed prefix (a_1, …, a_{n−1}); any n ≥ 2.
/// Returns (|LHS − RHS|, |RHS|).
pub fn loop_ward_residual_at(
    b: &ResolventBundle,
    geo: &TorusGeometry,
    sigma: &[Charge],
    prefix: &[usize],
    eta: f64,
) -> Result<(f64, f64)> {
    check_ward_pre(sigma)?;
    let n = sigma.len();
    if prefix.len() != n - 1 {
        return Err(Error::InvalidParameter("prefix must have n-1 blocks".into()));
    }
    let mut a = prefix.to_vec();
    a.push(0);
    let mut lhs = ZERO;
    for an in 0..geo.n_blocks() {
        a[n - 1] = an;
        lhs += loop_at(b, geo, sigma, &a);
    }
    let rhs = (loop_at(b, geo, &ward_hat(sigma, Charge::Plus), prefix)
        - loop_at(b, geo, &ward_hat(sigma, Charge::Minus), prefix))
        / C64::new(0.0, 2.0 * geo.wd() * eta);
    Ok(((lhs - rhs).norm(), rhs.norm()))
}

/// The two symmetric loops of the Cauchy–Schwarz split at position k
/// (1 ≤ k ≤ n−1).
pub fn ward_split(sig: &LoopSignature, k: usize) -> Result<(LoopSignature, LoopSignature)> {
    let n = sig.n();
    if !(n >= 2 && 1 <= k && k < n) {
        return Err(Error::Precondition(format!("need n >= 2 and 1 <= k <= n-1, got n={n}, k={k}")));
    }
    let s = &sig.sigma;
    let a = &sig.blocks;
    // a_1 = (a_1..a_{k−1}, a_k, a_{k−1}..a_1, a_n); σ_1 = (σ_1..σ_k, −σ_k..−σ_1)
    let mut a1: Vec<usize> = a[..k].to_vec();
    a1.extend(a[..k - 1].iter().rev());
    a1.push(a[n - 1]);
    let mut s1: Vec<Charge> = s[..k].to_vec();
    s1.extend(s[..k].iter().rev().map(|c| c.flip()));
    // a_2 = (a_{n−1}..a_{k+1}, a_k, a_{k+1}..a_{n−1}, a_n); σ_2 = (−σ_n..−σ_{k+1}, σ_{k+1}..σ_n)
    let mut a2: Vec<usize> = a[k..n - 1].iter().rev().copied().collect();
    a2.push(a[k - 1]);
    a2.extend_from_slice(&a[k..n - 1]);
    a2.push(a[n - 1]);
    let mut s2: Vec<Charge> = s[k..].iter().rev().map(|c| c.flip()).collect();
    s2.extend_from_slice(&s[k..]);
    Ok((LoopSignature::new(s1, a1)?, LoopSignature::new(s2, a2)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct WardInequality {
    pub lhs: f64,
    pub l1: C64,
    pub l2: C64,
    pub rhs: f64,
    pub holds: bool,
}

/// |L^(n)_{σ,a}| ≤ (L^(2k)_{a_1,σ_1} L^(2n−2k)_{a_2,σ_2})^{1/2}, checked with
/// relative slack `slack`.
pub fn ward_inequality_check(
    b: &ResolventBundle,
    geo: &TorusGeometry,
    sig: &LoopSignature,
    k: usize,
    slack: f64,
) -> Result<WardInequality> {
    let (s1, s2) = ward_split(sig, k)?;
    let lhs = g_loop(b, geo, sig).norm();
    let l1 = g_loop(b, geo, &s1);
    let l2 = g_loop(b, geo, &s2);
    let rhs = (l1.re.max(0.0) * l2.re.max(0.0)).sqrt();
    Ok(WardInequality {
        lhs,
        l1,
        l2,
        rhs,
        holds: lhs <= rhs * (1.0 + slack) && l1.re >= -slack * l1.norm() && l2.re >= -slack * l2.norm(),
    })
}

/// Summed form Σ_{a_n}|L^(n)| ≤ (Σ_{a_n} L_1)^{1/2} (Σ_{a_n} L_2)^{1/2}.
/// Returns (lhs, rhs).
pub fn ward_inequality_summed(
    b: &ResolventBundle,
    geo: &TorusGeometry,
    sig: &LoopSignature,
    k: usize,
) -> Result<(f64, f64)> {
    let n = sig.n();
    let mut s = sig.clone();
    let (mut lhs, mut r1, mut r2) = (0.0, 0.0, 0.0);
    for an in 0..geo.n_blocks() {
        s.blocks[n - 1] = an;
        let (s1, s2) = ward_split(&s, k)?;
        lhs += g_loop(b, geo, &s).norm();
        r1 += g_loop(b, geo, &s1).re;
        r2 += g_loop(b, geo, &s2).re;
    }
    Ok((lhs, (r1.max(0.0) * r2.max(0.0)).sqrt()))
}

/// Light-weight term W^d Σ_k Σ_{a,b} ⟨G̊(σ_k)E_a⟩ S^(B)_{ab} (G_k^{(b)}∘L^(n)),
/// with G̊ = G − m(σ).
pub fn lightweight_term(
    b: &ResolventBundle,
    profile: &VarianceProfile,
    sig: &LoopSignature,
    m: C64,
) -> C64 {
    let geo = &profile.geo;
    let nb = geo.n_blocks();
    let n = sig.n();
    let mut total = ZERO;
    for k in 0..n {
        let s = sig.sigma[k];
        let centered: Vec<C64> = one_loops(b, geo, s).into_iter().map(|v| v - s.apply(m)).collect();
        // weights w_b = W^d Σ_a ⟨G̊E_a⟩ S_{ab}
        let w: Vec<C64> = (0..nb)
            .map(|bb| geo.wd() * (0..nb).map(|a| centered[a] * profile.sb(a, bb)).sum::<C64>())
            .collect();
        let mut sigma = sig.sigma.clone();
        sigma.insert(k, s);
        let mut v: Vec<Vertex> = sig.blocks.iter().map(|&a| Vertex::Block(a)).collect();
        v.insert(k, Vertex::Weights(w));
        total += chain_trace(b, geo, &sigma, &v);
    }
    total
}

/// Quadratic term W^d Σ_{k<l} Σ_{a,b} (G_L ∘ F)(a) S^(B)_{ab} (G_R ∘ F)(b) for
/// an arbitrary loop family F given as a closure.
pub fn quadratic_term_with(
    profile: &VarianceProfile,
    sig: &LoopSignature,
    mut f: impl FnMut(&[Charge], &[usize]) -> C64,
) -> Result<C64> {
    let nb = profile.geo.n_blocks();
    let n = sig.n();
    let mut total = ZERO;
    for k in 1..=n {
        for l in k + 1..=n {
            let left: Vec<C64> = (0..nb)
                .map(|a| {
                    let s = cut_glue(sig, CutGlue::Left { k, l, a })?;
                    Ok(f(&s.sigma, &s.blocks))
                })
                .collect::<Result<_>>()?;
            let right: Vec<C64> = (0..nb)
                .map(|bb| {
                    let s = cut_glue(sig, CutGlue::Right { k, l, b: bb })?;
                    Ok(f(&s.sigma, &s.blocks))
                })
                .collect::<Result<_>>()?;
            for (a, &la) in left.iter().enumerate() {
                for (bb, &rb) in right.iter().enumerate() {
                    let s = profile.sb(a, bb);
                    if s != 0.0 {
                        total += la * s * rb;
                    }
                }
            }
        }
    }
    Ok(total * profile.geo.wd())
}

/// Quadratic term of the G-loop hierarchy.
pub fn quadratic_term(b: &ResolventBundle, profile: &VarianceProfile, sig: &LoopSignature) -> Result<C64> {
    let geo = profile.geo;
    quadratic_term_with(profile, sig, |s, a| loop_at(b, &geo, s, a))
}

/// Open chain G(s_0) E_{b_1} G(s_1) ⋯ E_{b_m} G(s_m) as a dense N×N matrix.
pub fn open_chain(b: &ResolventBundle, geo: &TorusGeometry, sigma: &[Charge], blocks: &[usize]) -> Mat<C64> {
    assert_eq!(sigma.len(), blocks.len() + 1);
    let n = geo.n_sites();
    let bs = geo.block_size();
    if blocks.is_empty() {
        return b.get(sigma[0]).clone();
    }
    let r0 = geo.cells_of(blocks[0]);
    let mut left: Mat<C64> = b.get(sigma[0]).submatrix(0, r0.start, n, bs).to_owned();
    for i in 1..blocks.len() {
        let p = geo.cells_of(blocks[i - 1]);
        let c = geo.cells_of(blocks[i]);
        left = &left * b.get(sigma[i]).submatrix(p.start, c.start, bs, bs);
    }
    let last = geo.cells_of(*blocks.last().unwrap());
    let out = &left * b.get(sigma[blocks.len()]).submatrix(last.start, 0, bs, n);
    let s = geo.wd().powi(-(blocks.len() as i32));
    Mat::from_fn(n, n, |i, j| out[(i, j)] * s)
}

/// The open chains X_k = G_k E_{a_k} G_{k+1} ⋯ G_{k−1} E_{a_{k−1}} G_k, k = 1..n.
fn cut_chains(b: &ResolventBundle, geo: &TorusGeometry, sig: &LoopSignature) -> Vec<Mat<C64>> {
    let n = sig.n();
    (0..n)
        .map(|k| {
            let mut sigma: Vec<Charge> = (0..n).map(|i| sig.sigma[(k + i) % n]).collect();
            sigma.push(sig.sigma[k]);
            let blocks: Vec<usize> = (0..n).map(|i| sig.blocks[(k + i) % n]).collect();
            open_chain(b, geo, &sigma, &blocks)
        })
        .collect()
}

/// Σ_{u,v} S_uv X_{vu} Y_{uv}.
fn s_pair_sum(profile: &VarianceProfile, x: &Mat<C64>, y: &Mat<C64>) -> C64 {
    let geo = &profile.geo;
    let bs = geo.block_size();
    let mut total = ZERO;
    for (a, bb, s) in profile.sb_support() {
        let mut acc = ZERO;
        for u in geo.cells_of(a) {
            for v in geo.cells_of(bb) {
                acc += x[(v, u)] * y[(u, v)];
            }
        }
        total += acc * (s / bs as f64);
    }
    total
}

/// (ℰ⊗ℰ)^{M,(n;k)}_{σ,a,a'} = W^d Σ_{b,b'} S^(B)_{bb'} L^(2n+2) at the
/// signature (σ⊗σ̄)^{(k)} and index tuple (a⊗a')^{(k)}(b, b'); k is 1-based.
pub fn qvar_loop(
    b: &ResolventBundle,
    profile: &VarianceProfile,
    sig: &LoopSignature,
    a_prime: &[usize],
    k: usize,
) -> Result<C64> {
    let n = sig.n();
    if !(1..=n).contains(&k) || a_prime.len() != n {
        return Err(Error::InvalidParameter(format!("bad qvar index k = {k}")));
    }
    let geo = &profile.geo;
    let k0 = k - 1;
    // X = G(σ_k) E_{a_k} ⋯ E_{a_{k−1}} G(σ_k)
    let mut sx: Vec<Charge> = (0..n).map(|i| sig.sigma[(k0 + i) % n]).collect();
    sx.push(sig.sigma[k0]);
    let bx: Vec<usize> = (0..n).map(|i| sig.blocks[(k0 + i) % n]).collect();
    // Y = G(−σ_k) E_{a'_{k−1}} G(−σ_{k−1}) ⋯ E_{a'_k} G(−σ_k)
    let sy: Vec<Charge> = (0..=n).map(|i| sig.sigma[(k0 + n - i) % n].flip()).collect();
    let by: Vec<usize> = (1..=n).map(|i| a_prime[(k0 + n - i) % n]).collect();
    let x = open_chain(b, geo, &sx, &bx);
    let y = open_chain(b, geo, &sy, &by);
    Ok(s_pair_sum(profile, &x, &y))
}

/// Signature and index tuple of the (2n+2)-loop inside (ℰ⊗ℰ)^{M,(n;k)}.
pub fn qvar_signature(sig: &LoopSignature, a_prime: &[usize], k: usize, bb: usize, bp: usize) -> Result<LoopSignature> {
    let n = sig.n();
    let k0 = k - 1;
    let s = &sig.sigma;
    let mut sigma: Vec<Charge> = s[k0..].to_vec();
    sigma.extend_from_slice(&s[..=k0]);
    sigma.extend(s[..=k0].iter().rev().map(|c| c.flip()));
    sigma.extend(s[k0..].iter().rev().map(|c| c.flip()));
    let a = &sig.blocks;
    let mut blocks: Vec<usize> = a[k0..].to_vec();
    blocks.extend_from_slice(&a[..k0]);
    blocks.push(bb);
    blocks.extend(a_prime[..k0].iter().rev());
    blocks.extend(a_prime[k0..].iter().rev());
    blocks.push(bp);
    debug_assert_eq!(sigma.len(), 2 * n + 2);
    LoopSignature::new(sigma, blocks)
}

/// Full quadratic-variation tensor entry Σ_k (ℰ⊗ℰ)^{M,(n;k)}_{σ,a,a'}.
pub fn qvar_total(b: &ResolventBundle, profile: &VarianceProfile, sig: &LoopSignature, a_prime: &[usize]) -> Result<C64> {
    (1..=sig.n()).map(|k| qvar_loop(b, profile, sig, a_prime, k)).sum()
}

/// Exact instantaneous quadratic variation of the martingale part of L^(n):
/// Σ_{x,y} S_xy |∂_{H_xy} L|² = Σ_{u,v} S_uv |Σ_k (X_k)_{vu}|².
pub fn martingale_qv(b: &ResolventBundle, profile: &VarianceProfile, sig: &LoopSignature) -> f64 {
    let geo = &profile.geo;
    let chains = cut_chains(b, geo, sig);
    let n = geo.n_sites();
    let total = Mat::from_fn(n, n, |i, j| chains.iter().map(|c| c[(i, j)]).sum::<C64>());
    let adj = total.adjoint().to_owned();
    s_pair_sum(profile, &total, &adj).re
}

/// Derivative of L^(n) in the direction of a Hermitian perturbation ΔH:
/// −Σ_k Tr(X_k ΔH) where X_k are the cut chains.
pub fn loop_directional_derivative(
    b: &ResolventBundle,
    geo: &TorusGeometry,
    sig: &LoopSignature,
    dh: &Mat<C64>,
) -> C64 {
    let chains = cut_chains(b, geo, sig);
    let n = geo.n_sites();
    let mut acc = ZERO;
    for c in &chains {
        for x in 0..n {
            for y in 0..n {
                acc -= c[(y, x)] * dh[(x, y)];
            }
        }
    }
    acc
}

/// Hand-expanded light-weight term for σ = (−, +) and a = (a, b):
/// W^{-2d} Σ_{x∈I_a, y∈I_b} conj(G_xy) Σ_{a1,a2} S_{a1a2} ⟨G̊E_{a1}⟩ Σ_{α∈I_{a2}} G_xα G_αy + c.c.
pub fn lightweight_n2_expanded(b: &ResolventBundle, profile: &VarianceProfile, a: usize, bb: usize, m: C64) -> C64 {
    let geo = &profile.geo;
    let nb = geo.n_blocks();
    let g = &b.g;
    let centered: Vec<C64> = one_loops(b, geo, Charge::Plus).into_iter().map(|v| v - m).collect();
    // weight on site α: Σ_{a1} S_{a1,[α]} ⟨G̊E_{a1}⟩
    let wblk: Vec<C64> = (0..nb)
        .map(|a2| (0..nb).map(|a1| profile.sb(a1, a2) * centered[a1]).sum())
        .collect();
    let n = geo.n_sites();
    let bs = geo.block_size();
    let mut acc = ZERO;
    for x in geo.cells_of(a) {
        for y in geo.cells_of(bb) {
            let mut inner = ZERO;
            for alpha in 0..n {
                inner += wblk[alpha / bs] * g[(x, alpha)] * g[(alpha, y)];
            }
            acc += g[(x, y)].conj() * inner;
        }
    }
    let half = acc / (geo.wd() * geo.wd());
    half + half.conj()
}

/// Write a rank-2 tensor as CSV rows (a_lin, b_lin, dist, re, im).
pub fn write_2loop_csv<W: std::io::Write>(t: &BlockTensor, geo: &TorusGeometry, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["a_lin", "b_lin", "dist", "re", "im"])?;
    for a in 0..t.nb {
        for bb in 0..t.nb {
            let v = t.data[a * t.nb + bb];
            wr.write_record(&[
                a.to_string(),
                bb.to_string(),
                geo.dist_block_lin(a, bb).to_string(),
                format!("{:e}", v.re),
                format!("{:e}", v.im),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::parse_charges;

    #[test]
    fn cut_glue_examples() {
        let sig = LoopSignature::new(parse_charges("+-+-").unwrap(), vec![10, 11, 12, 13]).unwrap();
        let ins = cut_glue(&sig, CutGlue::Insert { k: 2, a: 99 }).unwrap();
        assert_eq!(ins.sigma, parse_charges("+--+-").unwrap());
        assert_eq!(ins.blocks, vec![10, 99, 11, 12, 13]);

        let sig5 = LoopSignature::new(parse_charges("+-++-").unwrap(), vec![1, 2, 3, 4, 5]).unwrap();
        let left = cut_glue(&sig5, CutGlue::Left { k: 3, l: 5, a: 0 }).unwrap();
        assert_eq!(left.sigma, parse_charges("+-+-").unwrap());
        assert_eq!(left.blocks, vec![1, 2, 0, 5]);
        let right = cut_glue(&sig5, CutGlue::Right { k: 3, l: 5, b: 7 }).unwrap();
        assert_eq!(right.sigma, parse_charges("++-").unwrap());
        assert_eq!(right.blocks, vec![3, 4, 7]);
        assert_eq!(left.n() + right.n(), sig5.n() + 2);
        assert!(cut_glue(&sig5, CutGlue::Left { k: 3, l: 3, a: 0 }).is_err());
    }

    #[test]
    fn qvar_signature_n2_k1() {
        let sig = LoopSignature::new(parse_charges("+-").unwrap(), vec![1, 2]).unwrap();
        let q = qvar_signature(&sig, &[3, 4], 1, 8, 9).unwrap();
        assert_eq!(q.sigma, parse_charges("+-+-+-").unwrap());
        assert_eq!(q.blocks, vec![1, 2, 8, 4, 3, 9]);
    }

    #[test]
    fn ward_split_shapes() {
        let sig = LoopSignature::new(parse_charges("+-+").unwrap(), vec![1, 2, 3]).unwrap();
        let (s1, s2) = ward_split(&sig, 1).unwrap();
        assert_eq!(s1.sigma, parse_charges("+-").unwrap());
        assert_eq!(s1.blocks, vec![1, 3]);
        assert_eq!(s2.sigma, parse_charges("-+-+").unwrap());
        assert_eq!(s2.blocks, vec![2, 1, 2, 3]);
    }
}
