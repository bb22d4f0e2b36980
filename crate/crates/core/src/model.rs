//! Variance profiles S = S^(B) ⊗ S_W and Gaussian sampling of band matrices
//! and matrix-Brownian-motion increments.

use std::io::Write;
use std::path::Path;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;
use crate::C64;

/// Block variance matrix S^(B) (nearest-neighbour stencil on Z_L^d) together
/// with the flat in-block profile S_W = W^{-d}.
#[derive(Debug, Clone)]
pub struct VarianceProfile {
    pub geo: TorusGeometry,
    pub lambda: f64,
    /// `stencil[lin(b - a)] = S^(B)_{ab}`; symmetric and translation invariant.
    stencil: Vec<f64>,
}

impl VarianceProfile {
    pub fn new(geo: TorusGeometry, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let d = geo.d;
        let norm = 1.0 + 2.0 * d as f64 * lambda * lambda;
        let mut stencil = vec![0.0; geo.n_blocks()];
        stencil[0] += 1.0 / norm;
        let mut e = vec![0i64; d];
        for i in 0..d {
            for s in [-1i64, 1] {
                e[i] = s;
                stencil[geo.block_lin(&e)] += lambda * lambda / norm;
                e[i] = 0;
            }
        }
        Ok(Self { geo, lambda, stencil })
    }

    /// Stencil indexed by the linear index of a block difference.
    pub fn stencil(&self) -> &[f64] {
        &self.stencil
    }

    #[inline]
    pub fn sb(&self, a: usize, b: usize) -> f64 {
        self.stencil[self.geo.block_diff_lin(a, b)]
    }

    /// Dense row-major L^d × L^d copy of S^(B).
    pub fn sb_dense(&self) -> Vec<f64> {
        let nb = self.geo.n_blocks();
        let mut out = vec![0.0; nb * nb];
        for a in 0..nb {
            for b in 0..nb {
                out[a * nb + b] = self.sb(a, b);
            }
        }
        out
    }

    /// Block pairs (a, b) with S^(B)_{ab} > 0, with their weights.
    pub fn sb_support(&self) -> Vec<(usize, usize, f64)> {
        let nb = self.geo.n_blocks();
        let mut out = Vec::new();
        for a in 0..nb {
            for b in 0..nb {
                let s = self.sb(a, b);
                if s > 0.0 {
                    out.push((a, b, s));
                }
            }
        }
        out
    }

    /// Full variance entry S_xy = S^(B)_{[x][y]} W^{-d}.
    #[inline]
    pub fn s(&self, x: usize, y: usize) -> f64 {
        self.sb(self.geo.block_of_lin(x), self.geo.block_of_lin(y)) / self.geo.wd()
    }
}

/// A sampled Hermitian band matrix with its provenance.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    pub geo: TorusGeometry,
    pub lambda: f64,
    pub seed: u64,
    pub stream: u64,
    pub h: Mat<C64>,
}

/// Deterministic RNG for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fill a Hermitian Gaussian matrix with E|X_xy|² = scale² S_xy.
///
/// Entries are drawn block pair by block pair in a fixed order, upper
/// triangle only; pairs with S_xy = 0 consume no randomness.
pub fn gaussian_band<R: Rng + ?Sized>(profile: &VarianceProfile, scale: f64, rng: &mut R) -> Mat<C64> {
    let geo = &profile.geo;
    let n = geo.n_sites();
    let bs = geo.block_size();
    let nb = geo.n_blocks();
    let mut h = Mat::<C64>::zeros(n, n);
    for a in 0..nb {
        for b in a..nb {
            let s = profile.sb(a, b) / geo.wd();
            if s == 0.0 {
                continue;
            }
            let sd_diag = scale * s.sqrt();
            let sd_off = scale * (0.5 * s).sqrt();
            for x in a * bs..(a + 1) * bs {
                let y0 = if a == b { x } else { b * bs };
                for y in y0..(b + 1) * bs {
                    if x == y {
                        let g: f64 = rng.sample(StandardNormal);
                        h[(x, x)] = C64::new(sd_diag * g, 0.0);
                    } else {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        let v = C64::new(sd_off * re, sd_off * im);
                        h[(x, y)] = v;
                        h[(y, x)] = v.conj();
                    }
                }
            }
        }
    }
    h
}

/// GUE matrix of size n with E|X_xy|² = 1/n (the mean-field baseline).
pub fn sample_gue<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat<C64> {
    let mut h = Mat::<C64>::zeros(n, n);
    let sd_diag = (1.0 / n as f64).sqrt();
    let sd_off = (0.5 / n as f64).sqrt();
    for x in 0..n {
        let g: f64 = rng.sample(StandardNormal);
        h[(x, x)] = C64::new(sd_diag * g, 0.0);
        for y in x + 1..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let v = C64::new(sd_off * re, sd_off * im);
            h[(x, y)] = v;
            h[(y, x)] = v.conj();
        }
    }
    h
}

/// Sample H with H_xx ~ N(0, S_xx) and H_xy ~ CN(0, S_xy) above the diagonal.
pub fn sample_h(profile: &VarianceProfile, seed: u64, stream: u64) -> BandMatrix {
    let mut rng = rng_for(seed, stream);
    BandMatrix {
        geo: profile.geo,
        lambda: profile.lambda,
        seed,
        stream,
        h: gaussian_band(profile, 1.0, &mut rng),
    }
}

/// Increment of the matrix Brownian motion over a time step `dt`:
/// ΔH_xy = sqrt(S_xy) ΔB_xy with E|ΔB_xy|² = dt.
pub fn brownian_increment<R: Rng + ?Sized>(
    profile: &VarianceProfile,
    dt: f64,
    rng: &mut R,
) -> Result<Mat<C64>> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be >= 0, got {dt}")));
    }
    if dt == 0.0 {
        let n = profile.geo.n_sites();
        return Ok(Mat::zeros(n, n));
    }
    Ok(gaussian_band(profile, dt.sqrt(), rng))
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    d: usize,
    w: usize,
    l: usize,
    n: usize,
    lambda: f64,
    seed: u64,
    stream: u64,
    layout: String,
}

impl BandMatrix {
    /// Max-norm of H − H*.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.h.nrows();
        let mut r = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                r = r.max((self.h[(i, j)] - self.h[(j, i)].conj()).norm());
            }
        }
        r
    }

    /// Write a one-line JSON header followed by little-endian interleaved
    /// (re, im) f64 pairs in row-major order.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let n = self.h.nrows();
        let header = DumpHeader {
            d: self.geo.d,
            w: self.geo.w,
            l: self.geo.l,
            n,
            lambda: self.lambda,
            seed: self.seed,
            stream: self.stream,
            layout: "row-major complex128 little-endian, block-major site order".into(),
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, &header)?;
        f.write_all(b"\n")?;
        for i in 0..n {
            for j in 0..n {
                let v = self.h[(i, j)];
                f.write_all(&v.re.to_le_bytes())?;
                f.write_all(&v.im.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    /// Read a dump written by [`BandMatrix::write_dump`].
    pub fn read_dump(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let nl = bytes
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::InvalidParameter("dump has no header line".into()))?;
        let header: DumpHeader = serde_json::from_slice(&bytes[..nl])?;
        let geo = TorusGeometry::new(header.d, header.w, header.l)?;
        let n = header.n;
        let body = &bytes[nl + 1..];
        if body.len() != n * n * 16 {
            return Err(Error::InvalidParameter("dump body has wrong length".into()));
        }
        let f = |k: usize| f64::from_le_bytes(body[8 * k..8 * k + 8].try_into().unwrap());
        let h = Mat::from_fn(n, n, |i, j| {
            let k = 2 * (i * n + j);
            C64::new(f(k), f(k + 1))
        });
        Ok(Self {
            geo,
            lambda: header.lambda,
            seed: header.seed,
            stream: header.stream,
            h,
        })
    }
}
