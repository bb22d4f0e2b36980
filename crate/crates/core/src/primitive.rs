//! Primitive K-loops: the explicit n = 2, 3 forms, canonical tree partitions
//! with their values, an RK4 integrator for the closed K-hierarchy, K-loop
//! Ward residuals and bound tabulation, and the partial-average, sum-zero
//! and mollifier tensor operators.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;
use crate::loops::vertex_ward_residual;
use crate::model::{rng_for, VarianceProfile};
use crate::propagator::{b_param, ell, theta, Circulant};
use crate::spectral::{charges_to_string, Charge};
use crate::tensor::BlockTensor;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Propagators Θ_{t m(σ) m(σ')} for the three charge pairs at fixed (t, m).
#[derive(Debug, Clone)]
pub struct KContext {
    pub profile: VarianceProfile,
    pub t: f64,
    pub m: C64,
    theta: [Circulant; 3],
    dense: [Vec<C64>; 3],
    dense_minus_id: [Vec<C64>; 3],
}

fn pair_slot(a: Charge, b: Charge) -> usize {
    match (a, b) {
        (Charge::Plus, Charge::Plus) => 0,
        (Charge::Minus, Charge::Minus) => 2,
        _ => 1,
    }
}

impl KContext {
    pub fn new(profile: &VarianceProfile, t: f64, m: C64) -> Result<Self> {
        if !(0.0..1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!("K-loops need t in [0,1), got {t}")));
        }
        let xis = [m * m, m * m.conj(), m.conj() * m.conj()];
        let mut th = Vec::with_capacity(3);
        for xi in xis {
            th.push(theta(profile, t * xi)?);
        }
        let nb = profile.geo.n_blocks();
        let dense: Vec<Vec<C64>> = th.iter().map(|c| c.dense()).collect();
        let dense_minus_id: Vec<Vec<C64>> = dense
            .iter()
            .map(|d| {
                let mut d = d.clone();
                for a in 0..nb {
                    d[a * nb + a] -= ONE;
                }
                d
            })
            .collect();
        let arr3 = |v: Vec<Vec<C64>>| -> [Vec<C64>; 3] { v.try_into().unwrap() };
        Ok(Self {
            profile: profile.clone(),
            t,
            m,
            theta: th.try_into().unwrap(),
            dense: arr3(dense),
            dense_minus_id: arr3(dense_minus_id),
        })
    }

    pub fn geo(&self) -> &TorusGeometry {
        &self.profile.geo
    }

    pub fn nb(&self) -> usize {
        self.profile.geo.n_blocks()
    }

    /// Θ_{t m(a) m(b)}.
    pub fn theta(&self, a: Charge, b: Charge) -> &Circulant {
        &self.theta[pair_slot(a, b)]
    }

    #[inline]
    fn th(&self, a: Charge, b: Charge, x: usize, y: usize) -> C64 {
        self.dense[pair_slot(a, b)][x * self.nb() + y]
    }

    fn m_prod(&self, sigma: &[Charge]) -> C64 {
        sigma.iter().map(|s| s.apply(self.m)).product()
    }

    /// η_t = (1 − t) Im m.
    pub fn eta(&self) -> f64 {
        (1.0 - self.t) * self.m.im
    }
}

/// 𝒦^(1) = m(σ).
pub fn k1(s: Charge, m: C64) -> C64 {
    s.apply(m)
}

/// 𝒦^(2) = W^{-d} m_1 m_2 Θ_{t m_1 m_2}(a_1, a_2).
pub fn k2(ctx: &KContext, sigma: &[Charge], a1: usize, a2: usize) -> C64 {
    ctx.m_prod(&sigma[..2]) * ctx.th(sigma[0], sigma[1], a1, a2) / ctx.geo().wd()
}

/// 𝒦^(3) = W^{-2d} m_1 m_2 m_3 Σ_b Θ_{12}(a_1,b) Θ_{23}(a_2,b) Θ_{31}(a_3,b).
pub fn k3(ctx: &KContext, sigma: &[Charge], a: &[usize]) -> C64 {
    let (s1, s2, s3) = (sigma[0], sigma[1], sigma[2]);
    let mut acc = ZERO;
    for b in 0..ctx.nb() {
        acc += ctx.th(s1, s2, a[0], b) * ctx.th(s2, s3, a[1], b) * ctx.th(s3, s1, a[2], b);
    }
    ctx.m_prod(&sigma[..3]) * acc / ctx.geo().wd().powi(2)
}

pub fn k2_tensor(ctx: &KContext, sigma: &[Charge]) -> BlockTensor {
    BlockTensor::from_fn(2, ctx.nb(), |i| k2(ctx, sigma, i[0], i[1]))
}

/// Full 𝒦^(3) tensor; the inner sum is a product of circulant rows, so the
/// whole tensor is assembled from the a_1 = 0 slice by translation.
pub fn k3_tensor(ctx: &KContext, sigma: &[Charge]) -> BlockTensor {
    let geo = *ctx.geo();
    let nb = ctx.nb();
    let mut slice = vec![ZERO; nb * nb];
    for a2 in 0..nb {
        for a3 in 0..nb {
            slice[a2 * nb + a3] = k3(ctx, sigma, &[0, a2, a3]);
        }
    }
    BlockTensor::from_fn(3, nb, |i| {
        let d2 = geo.block_diff_lin(i[0], i[1]);
        let d3 = geo.block_diff_lin(i[0], i[2]);
        slice[d2 * nb + d3]
    })
}

/// 𝒦^(n) by the explicit forms for n ≤ 3 and the tree representation above.
pub fn k_loop(ctx: &KContext, sigma: &[Charge], a: &[usize]) -> Result<C64> {
    match sigma.len() {
        0 => Err(Error::InvalidParameter("empty signature".into())),
        1 => Ok(k1(sigma[0], ctx.m)),
        2 => Ok(k2(ctx, sigma, a[0], a[1])),
        3 => Ok(k3(ctx, sigma, a)),
        n => {
            let trees = enumerate_tsp(n)?;
            Ok(k_loop_tree_with(ctx, &trees, sigma, a))
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical tree partitions

/// Rooted form used for enumeration and evaluation: the tree hangs off leaf n.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    /// Polygon vertex a_k, 1-based.
    Leaf(usize),
    /// Internal vertex; children cover consecutive leaf intervals in order.
    Internal(Vec<Node>),
}

impl Node {
    fn span(&self) -> (usize, usize) {
        match self {
            Node::Leaf(k) => (*k, *k),
            Node::Internal(c) => (c[0].span().0, c.last().unwrap().span().1),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeEdge {
    /// Vertex ids: 0..n are the leaves a_1..a_n, n.. are internal.
    pub u: usize,
    pub v: usize,
    /// Regions (R_k, R_l), 1-based, on the two sides of the edge.
    pub regions: (usize, usize),
    pub external: bool,
}

/// A canonical tree partition of the n-gon.
#[derive(Debug, Clone, Serialize)]
pub struct CanonicalTree {
    pub n: usize,
    pub n_internal: usize,
    pub edges: Vec<TreeEdge>,
    /// Neighbours of each internal vertex in counter-clockwise order.
    pub rotation: Vec<Vec<usize>>,
    #[serde(skip)]
    root: Node,
}

impl CanonicalTree {
    /// Leaf-interval split of each edge, normalised to the side not
    /// containing leaf n; identifies the tree up to leaf-preserving isomorphism.
    pub fn splits(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        collect_splits(&self.root, &mut out);
        out.insert((self.n, self.n));
        out
    }

    /// Internal vertex degrees.
    pub fn internal_degrees(&self) -> Vec<usize> {
        self.rotation.iter().map(|r| r.len()).collect()
    }
}

fn collect_splits(node: &Node, out: &mut BTreeSet<(usize, usize)>) {
    out.insert(node.span());
    if let Node::Internal(c) = node {
        for ch in c {
            collect_splits(ch, out);
        }
    }
}

/// Regions separated by an edge whose leaf side is the interval [i..j].
fn regions_of(i: usize, j: usize, n: usize) -> (usize, usize) {
    (i, if j == n { 1 } else { j + 1 })
}

fn subtrees(i: usize, j: usize) -> Vec<Node> {
    if i == j {
        return vec![Node::Leaf(i)];
    }
    sequences(i, j, false).into_iter().map(Node::Internal).collect()
}

/// Ordered sequences of subtrees covering [i..j]; a single part covering
/// the whole interval is allowed only when `whole` is set.
fn sequences(i: usize, j: usize, whole: bool) -> Vec<Vec<Node>> {
    let mut out = Vec::new();
    let last = if whole { j } else { j - 1 };
    for e in i..=last {
        let firsts = subtrees(i, e);
        let rests = if e == j { vec![vec![]] } else { sequences(e + 1, j, true) };
        for f in &firsts {
            for r in &rests {
                let mut v = Vec::with_capacity(r.len() + 1);
                v.push(f.clone());
                v.extend(r.iter().cloned());
                out.push(v);
            }
        }
    }
    out
}

fn flatten(n: usize, root: Node) -> CanonicalTree {
    let mut edges = Vec::new();
    let mut rotation: Vec<Vec<usize>> = Vec::new();
    fn visit(
        node: &Node,
        parent: usize,
        n: usize,
        edges: &mut Vec<TreeEdge>,
        rotation: &mut Vec<Vec<usize>>,
    ) -> usize {
        let (i, j) = node.span();
        match node {
            Node::Leaf(k) => {
                edges.push(TreeEdge {
                    u: parent,
                    v: k - 1,
                    regions: regions_of(i, j, n),
                    external: true,
                });
                k - 1
            }
            Node::Internal(children) => {
                let id = n + rotation.len();
                rotation.push(vec![parent]);
                edges.push(TreeEdge {
                    u: parent,
                    v: id,
                    regions: regions_of(i, j, n),
                    external: parent < n,
                });
                for c in children {
                    let cid = visit(c, id, n, edges, rotation);
                    rotation[id - n].push(cid);
                }
                id
            }
        }
    }
    visit(&root, n - 1, n, &mut edges, &mut rotation);
    // The root edge is incident to leaf a_n, so it is external and its leaf
    // side is {n}: regions (R_n, R_1).
    edges[0].regions = regions_of(n, n, n);
    edges[0].external = true;
    let n_internal = rotation.len();
    CanonicalTree {
        n,
        n_internal,
        edges,
        rotation,
        root,
    }
}

/// All canonical tree partitions of the n-gon, 3 ≤ n ≤ 6.
pub fn enumerate_tsp(n: usize) -> Result<Vec<CanonicalTree>> {
    if !(3..=6).contains(&n) {
        return Err(Error::InvalidParameter(format!("enumerate_tsp supports 3 <= n <= 6, got {n}")));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for root in subtrees(1, n - 1) {
        let tree = flatten(n, root);
        if seen.insert(tree.splits()) {
            out.push(tree);
        }
    }
    Ok(out)
}

/// Message along the edge from `node` up to its parent, as a function of the
/// parent's block position.
fn message(ctx: &KContext, node: &Node, sigma: &[Charge], a: &[usize]) -> Vec<C64> {
    let n = sigma.len();
    let nb = ctx.nb();
    let (i, j) = node.span();
    let (rk, rl) = regions_of(i, j, n);
    let (sk, sl) = (sigma[rk - 1], sigma[rl - 1]);
    match node {
        Node::Leaf(k) => {
            let row = &ctx.dense[pair_slot(sk, sl)][(a[k - 1]) * nb..(a[k - 1] + 1) * nb];
            row.to_vec()
        }
        Node::Internal(children) => {
            let inner = product_of_children(ctx, children, sigma, a);
            let m = &ctx.dense_minus_id[pair_slot(sk, sl)];
            (0..nb)
                .map(|p| {
                    let row = &m[p * nb..(p + 1) * nb];
                    row.iter().zip(&inner).map(|(x, y)| x * y).sum()
                })
                .collect()
        }
    }
}

fn product_of_children(ctx: &KContext, children: &[Node], sigma: &[Charge], a: &[usize]) -> Vec<C64> {
    let mut inner = vec![ONE; ctx.nb()];
    for c in children {
        let msg = message(ctx, c, sigma, a);
        for (x, y) in inner.iter_mut().zip(&msg) {
            *x *= y;
        }
    }
    inner
}

/// Γ^(n)_{t,σ,a} = (∏ m_i) Σ_b ∏_e f(e), contracted leaf-ward.
pub fn tree_value(ctx: &KContext, tree: &CanonicalTree, sigma: &[Charge], a: &[usize]) -> C64 {
    let n = tree.n;
    assert_eq!(sigma.len(), n);
    assert_eq!(a.len(), n);
    let Node::Internal(children) = &tree.root else {
        unreachable!("root of a canonical tree is internal for n >= 3")
    };
    let inner = product_of_children(ctx, children, sigma, a);
    let (sn, s1) = (sigma[n - 1], sigma[0]);
    let mut acc = ZERO;
    for (b, v) in inner.iter().enumerate() {
        acc += ctx.th(sn, s1, a[n - 1], b) * v;
    }
    ctx.m_prod(sigma) * acc
}

/// W^{-d(n−1)} Σ_Γ Γ^(n)_{t,σ,a} for a pre-enumerated tree list.
pub fn k_loop_tree_with(ctx: &KContext, trees: &[CanonicalTree], sigma: &[Charge], a: &[usize]) -> C64 {
    let n = sigma.len();
    let sum: C64 = trees.iter().map(|t| tree_value(ctx, t, sigma, a)).sum();
    sum * ctx.geo().wd().powi(-(n as i32 - 1))
}

/// Tree representation of 𝒦^(n).
pub fn k_loop_tree(ctx: &KContext, sigma: &[Charge], a: &[usize]) -> Result<C64> {
    let trees = enumerate_tsp(sigma.len())?;
    Ok(k_loop_tree_with(ctx, &trees, sigma, a))
}

/// Full 𝒦^(n) tensor from the tree representation, using translation
/// invariance to evaluate only the a_1 = 0 slice.
pub fn k_tree_tensor(ctx: &KContext, sigma: &[Charge]) -> Result<BlockTensor> {
    let n = sigma.len();
    let trees = enumerate_tsp(n)?;
    let geo = *ctx.geo();
    let nb = ctx.nb();
    let slice = BlockTensor::from_fn(n - 1, nb, |rest| {
        let mut a = vec![0usize];
        a.extend_from_slice(rest);
        k_loop_tree_with(ctx, &trees, sigma, &a)
    });
    Ok(BlockTensor::from_fn(n, nb, |i| {
        let rel: Vec<usize> = i[1..].iter().map(|&x| geo.block_diff_lin(i[0], x)).collect();
        slice.get(&rel)
    }))
}

/// JSON dump of an enumeration: adjacency and region pairs per tree.
pub fn trees_to_json(trees: &[CanonicalTree]) -> Result<String> {
    Ok(serde_json::to_string_pretty(trees)?)
}

// ---------------------------------------------------------------------------
// K-hierarchy ODE

/// A family of K-loop tensors keyed by charge string.
#[derive(Debug, Clone, Serialize)]
pub struct KFamily {
    pub t: f64,
    pub tensors: BTreeMap<String, BlockTensor>,
}

impl KFamily {
    pub fn get(&self, sigma: &[Charge]) -> Option<&BlockTensor> {
        self.tensors.get(&charges_to_string(sigma))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OdeReport {
    pub family: KFamily,
    pub steps: usize,
    /// max relative difference between the `steps` and `2·steps` runs
    pub halving_error: f64,
}

/// Signatures reachable from `roots` under (G_L, G_R), lengths ≥ 2.
pub fn signature_closure(roots: &[Vec<Charge>]) -> BTreeSet<Vec<Charge>> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<Vec<Charge>> = roots.to_vec();
    while let Some(s) = stack.pop() {
        if s.len() < 2 || !out.insert(s.clone()) {
            continue;
        }
        let n = s.len();
        for k in 1..=n {
            for l in k + 1..=n {
                let mut left: Vec<Charge> = s[..k].to_vec();
                left.extend_from_slice(&s[l - 1..]);
                stack.push(left);
                stack.push(s[k - 1..l].to_vec());
            }
        }
    }
    out
}

struct Term {
    k: usize,
    l: usize,
    left: usize,
    right: usize,
}

struct Hierarchy {
    sigs: Vec<Vec<Charge>>,
    terms: Vec<Vec<Term>>,
    sb: Vec<C64>,
    nb: usize,
    wd: f64,
}

impl Hierarchy {
    fn new(profile: &VarianceProfile, roots: &[Vec<Charge>]) -> Self {
        let sigs: Vec<Vec<Charge>> = signature_closure(roots).into_iter().collect();
        let pos: BTreeMap<Vec<Charge>, usize> = sigs.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let terms = sigs
            .iter()
            .map(|s| {
                let n = s.len();
                let mut v = Vec::new();
                for k in 1..=n {
                    for l in k + 1..=n {
                        let mut left: Vec<Charge> = s[..k].to_vec();
                        left.extend_from_slice(&s[l - 1..]);
                        let right = s[k - 1..l].to_vec();
                        v.push(Term {
                            k,
                            l,
                            left: pos[&left],
                            right: pos[&right],
                        });
                    }
                }
                v
            })
            .collect();
        Self {
            sigs,
            terms,
            sb: profile.sb_dense().into_iter().map(|x| C64::new(x, 0.0)).collect(),
            nb: profile.geo.n_blocks(),
            wd: profile.geo.wd(),
        }
    }

    fn initial(&self, m: C64) -> Vec<BlockTensor> {
        let nb = self.nb;
        self.sigs
            .iter()
            .map(|s| {
                let n = s.len();
                let v: C64 = s.iter().map(|c| c.apply(m)).product::<C64>() * self.wd.powi(-(n as i32 - 1));
                BlockTensor::from_fn(n, nb, |i| if i.iter().all(|&x| x == i[0]) { v } else { ZERO })
            })
            .collect()
    }

    fn rhs(&self, state: &[BlockTensor]) -> Vec<BlockTensor> {
        let nb = self.nb;
        self.sigs
            .par_iter()
            .enumerate()
            .map(|(idx, s)| {
                let n = s.len();
                let mut out = BlockTensor::zeros(n, nb);
                for term in &self.terms[idx] {
                    let kl = &state[term.left];
                    let mr = state[term.right].apply_axis(term.l - term.k, &self.sb);
                    let pre_n = nb.pow((term.k - 1) as u32);
                    let mid_n = nb.pow((term.l - term.k) as u32);
                    let post_n = nb.pow((n - term.l + 1) as u32);
                    for pre in 0..pre_n {
                        for mid in 0..mid_n {
                            let mrow = &mr.data[mid * nb..(mid + 1) * nb];
                            let obase = (pre * mid_n + mid) * post_n;
                            for a in 0..nb {
                                let w = mrow[a];
                                if w == ZERO {
                                    continue;
                                }
                                let lbase = (pre * nb + a) * post_n;
                                let lrow = &kl.data[lbase..lbase + post_n];
                                let orow = &mut out.data[obase..obase + post_n];
                                for (o, x) in orow.iter_mut().zip(lrow) {
                                    *o += w * x;
                                }
                            }
                        }
                    }
                }
                out.scale(C64::new(self.wd, 0.0));
                out
            })
            .collect()
    }

    fn integrate(&self, m: C64, t_end: f64, steps: usize) -> Vec<BlockTensor> {
        let mut y = self.initial(m);
        if t_end == 0.0 {
            return y;
        }
        let h = t_end / steps as f64;
        let axpy = |y: &[BlockTensor], k: &[BlockTensor], c: f64| -> Vec<BlockTensor> {
            y.iter()
                .zip(k)
                .map(|(a, b)| {
                    let mut o = a.clone();
                    for (x, z) in o.data.iter_mut().zip(&b.data) {
                        *x += c * z;
                    }
                    o
                })
                .collect()
        };
        for _ in 0..steps {
            let k1 = self.rhs(&y);
            let k2 = self.rhs(&axpy(&y, &k1, h / 2.0));
            let k3 = self.rhs(&axpy(&y, &k2, h / 2.0));
            let k4 = self.rhs(&axpy(&y, &k3, h));
            for (i, yi) in y.iter_mut().enumerate() {
                for (j, v) in yi.data.iter_mut().enumerate() {
                    *v += h / 6.0 * (k1[i].data[j] + 2.0 * k2[i].data[j] + 2.0 * k3[i].data[j] + k4[i].data[j]);
                }
            }
        }
        y
    }
}

/// Integrate the K-hierarchy from t = 0 to `t_end` for the closure of
/// `roots`, with step-halving error control.
pub fn k_loop_ode(
    profile: &VarianceProfile,
    m: C64,
    roots: &[Vec<Charge>],
    t_end: f64,
    steps: usize,
) -> Result<OdeReport> {
    if !(0.0..1.0).contains(&t_end) {
        return Err(Error::InvalidParameter(format!("t_end must lie in [0,1), got {t_end}")));
    }
    if roots.iter().any(|s| s.len() > 5) {
        return Err(Error::InvalidParameter("k_loop_ode supports n <= 5".into()));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be positive".into()));
    }
    let hier = Hierarchy::new(profile, roots);
    let coarse = hier.integrate(m, t_end, steps);
    let fine = hier.integrate(m, t_end, 2 * steps);
    let halving_error = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| c.rel_diff(f))
        .fold(0.0, f64::max);
    if halving_error > 1e-4 {
        return Err(Error::Unstable(format!(
            "step-halving disagreement {halving_error:e} at t = {t_end}"
        )));
    }
    let tensors = hier
        .sigs
        .iter()
        .zip(fine)
        .map(|(s, t)| (charges_to_string(s), t))
        .collect();
    Ok(OdeReport {
        family: KFamily { t: t_end, tensors },
        steps: 2 * steps,
        halving_error,
    })
}

// ---------------------------------------------------------------------------
// Ward identity and bounds

/// Relative residual of the K-loop vertex Ward identity for a full rank-n
/// tensor (n ∈ {2, 3}) against the explicit (n−1)-loops.
pub fn k_ward_residual(ctx: &KContext, sigma: &[Charge]) -> Result<f64> {
    let n = sigma.len();
    if n < 2 || sigma[0] != sigma[n - 1].flip() {
        return Err(Error::Precondition("K Ward identity needs n >= 2 and sigma_1 = -sigma_n".into()));
    }
    let full = explicit_tensor(ctx, sigma)?;
    let hat = |s: Charge| {
        let mut v = vec![s];
        v.extend_from_slice(&sigma[1..n - 1]);
        v
    };
    let plus = explicit_tensor(ctx, &hat(Charge::Plus))?;
    let minus = explicit_tensor(ctx, &hat(Charge::Minus))?;
    Ok(vertex_ward_residual(&full, &plus, &minus, ctx.geo().wd(), ctx.eta()))
}

/// Full K tensor: constant for n = 1, explicit for n = 2, 3, trees otherwise.
pub fn explicit_tensor(ctx: &KContext, sigma: &[Charge]) -> Result<BlockTensor> {
    let nb = ctx.nb();
    match sigma.len() {
        1 => Ok(BlockTensor {
            rank: 1,
            nb,
            data: vec![k1(sigma[0], ctx.m); nb],
        }),
        2 => Ok(k2_tensor(ctx, sigma)),
        3 => Ok(k3_tensor(ctx, sigma)),
        _ => k_tree_tensor(ctx, sigma),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KBoundRow {
    pub l: usize,
    pub n: usize,
    pub t: f64,
    pub sigma: String,
    pub max_abs: f64,
    /// (W^{-d} B_{t,0})^{n−1}
    pub scale: f64,
    pub ratio: f64,
    /// number of a-tuples examined (a_1 = 0 by translation invariance)
    pub tuples: usize,
}

/// max_a |𝒦^(n)| / (W^{-d} B_{t,0})^{n−1} over a t-grid. Exhaustive over
/// a_1 = 0 slices up to `max_tuples`, seeded random tuples beyond.
pub fn k_bound_report(
    profile: &VarianceProfile,
    m: C64,
    sigma: &[Charge],
    t_grid: &[f64],
    max_tuples: usize,
) -> Result<Vec<KBoundRow>> {
    let n = sigma.len();
    if !(2..=5).contains(&n) {
        return Err(Error::InvalidParameter(format!("k_bound_report supports 2 <= n <= 5, got {n}")));
    }
    let geo = profile.geo;
    let nb = geo.n_blocks();
    let trees = if n >= 4 { enumerate_tsp(n)? } else { Vec::new() };
    let total = nb.pow((n - 1) as u32);
    let tuples: Vec<Vec<usize>> = if total <= max_tuples {
        let shape = BlockTensor::zeros(n - 1, nb);
        (0..total)
            .map(|k| {
                let mut a = vec![0];
                a.extend(shape.unflatten(k));
                a
            })
            .collect()
    } else {
        let mut rng = rng_for(0x4b42, n as u64);
        let mut v: Vec<Vec<usize>> = vec![vec![0; n]];
        while v.len() < max_tuples {
            let mut a = vec![0];
            a.extend((1..n).map(|_| rng.random_range(0..nb)));
            v.push(a);
        }
        v
    };
    t_grid
        .iter()
        .map(|&t| {
            let ctx = KContext::new(profile, t, m)?;
            let max_abs = tuples
                .iter()
                .map(|a| match n {
                    2 => k2(&ctx, sigma, a[0], a[1]).norm(),
                    3 => k3(&ctx, sigma, a).norm(),
                    _ => k_loop_tree_with(&ctx, &trees, sigma, a).norm(),
                })
                .fold(0.0, f64::max);
            let scale = (b_param(t, 0.0, &geo) / geo.wd()).powi(n as i32 - 1);
            Ok(KBoundRow {
                l: geo.l,
                n,
                t,
                sigma: charges_to_string(sigma),
                max_abs,
                scale,
                ratio: max_abs / scale,
                tuples: tuples.len(),
            })
        })
        .collect()
}

/// Shell maxima of |𝒦^(n)| against max pairwise block distance, over
/// seeded random tuples with a_1 = 0. Returns (distance, max) pairs.
pub fn k_decay_profile(ctx: &KContext, sigma: &[Charge], samples: usize, seed: u64) -> Result<Vec<(i64, f64)>> {
    let n = sigma.len();
    let geo = *ctx.geo();
    let nb = ctx.nb();
    let trees = if n >= 4 { enumerate_tsp(n)? } else { Vec::new() };
    let mut rng = rng_for(seed, n as u64);
    let mut best: BTreeMap<i64, f64> = BTreeMap::new();
    for _ in 0..samples {
        let mut a = vec![0];
        a.extend((1..n).map(|_| rng.random_range(0..nb)));
        let v = match n {
            2 => k2(ctx, sigma, a[0], a[1]),
            3 => k3(ctx, sigma, &a),
            _ => k_loop_tree_with(ctx, &trees, sigma, &a),
        }
        .norm();
        let r = a
            .iter()
            .flat_map(|&x| a.iter().map(move |&y| (x, y)))
            .map(|(x, y)| geo.dist_block_lin(x, y))
            .max()
            .unwrap();
        let e = best.entry(r).or_insert(0.0);
        *e = e.max(v);
    }
    Ok(best.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Tensor operators

/// P^{(i)} (0-based axis), broadcast back so the rank is preserved.
pub fn partial_avg(a: &BlockTensor, axis: usize) -> Result<BlockTensor> {
    if axis >= a.rank {
        return Err(Error::RankMismatch {
            expected: axis + 1,
            got: a.rank,
        });
    }
    let nb = a.nb;
    let avg = vec![C64::new(1.0 / nb as f64, 0.0); nb * nb];
    Ok(a.apply_axis(axis, &avg))
}

/// Q^{(i)} = I − P^{(i)}.
pub fn zero_mode(a: &BlockTensor, axis: usize) -> Result<BlockTensor> {
    let p = partial_avg(a, axis)?;
    let mut out = a.clone();
    for (x, y) in out.data.iter_mut().zip(&p.data) {
        *x -= y;
    }
    Ok(out)
}

/// (𝒫 ∘ A)_{a_1} = Σ_{a_2..a_n} A_a.
pub fn partial_sum(a: &BlockTensor) -> Result<Vec<C64>> {
    if a.rank < 2 {
        return Err(Error::RankMismatch {
            expected: 2,
            got: a.rank,
        });
    }
    let inner = a.nb.pow((a.rank - 1) as u32);
    Ok(a.data.chunks(inner).map(|c| c.iter().sum()).collect())
}

/// Support radius of the mollifier bump in units of ℓ_t.
pub const MOLLIFIER_RADIUS: f64 = 2.0;

fn bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

/// χ^(n)_{t,a} = ∏_{i≥2} f_t(a_i − a_1) / Σ_a f_t(a), with f_t the rescaled
/// bump supported on |a| < MOLLIFIER_RADIUS·ℓ_t (periodic Euclidean norm).
pub fn mollifier(geo: &TorusGeometry, t: f64, n: usize) -> Result<BlockTensor> {
    if n < 2 {
        return Err(Error::InvalidParameter("mollifier needs n >= 2".into()));
    }
    let nb = geo.n_blocks();
    let scale = MOLLIFIER_RADIUS * ell(t, geo);
    let f: Vec<f64> = (0..nb).map(|a| bump(geo.block_norm2(a) / scale)).collect();
    let z: f64 = f.iter().sum();
    let fnorm: Vec<f64> = f.iter().map(|v| v / z).collect();
    let geo = *geo;
    Ok(BlockTensor::from_fn(n, nb, |idx| {
        let p: f64 = idx[1..].iter().map(|&x| fnorm[geo.block_diff_lin(idx[0], x)]).product();
        C64::new(p, 0.0)
    }))
}

/// Q_t ∘ A = A − (𝒫 ∘ A)_{a_1} χ^(n)_{t,a}.
pub fn sum_zero(a: &BlockTensor, chi: &BlockTensor) -> Result<BlockTensor> {
    chi.check_rank(a.rank)?;
    let p = partial_sum(a)?;
    let inner = a.nb.pow((a.rank - 1) as u32);
    let mut out = a.clone();
    for (k, v) in out.data.iter_mut().enumerate() {
        *v -= p[k / inner] * chi.data[k];
    }
    Ok(out)
}
