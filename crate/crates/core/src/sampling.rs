//! Seeded random streams and random-matrix helpers.
//!
//! Every Monte-Carlo batch is drawn from a ChaCha stream addressed by
//! `(seed, stream)`, so a batch is reproducible on its own regardless of what
//! was sampled before it or on which worker it runs.

use crate::spd_manifold::{SpdMatrix, SymMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit mix of a sequence of words. The output never depends on platform or build.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_cafe_d00d_f00d, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A ChaCha8 generator on an independent stream of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `rows × cols` matrix of iid standard normal draws, filled row by row.
pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign correction).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let g = normal_matrix(rng, d, d);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric matrix with standard normal entries on and above the diagonal.
pub fn random_sym<R: Rng + ?Sized>(rng: &mut R, d: usize) -> SymMatrix {
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v: f64 = StandardNormal.sample(rng);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SymMatrix::from_symmetrized(&m)
}

/// SPD matrix with eigenvalues drawn log-uniformly from `[lo, hi]` in a random basis.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, d: usize, lo: f64, hi: f64) -> SpdMatrix {
    let u = Uniform::new_inclusive(libm::log(lo), libm::log(hi)).expect("valid eigenvalue range");
    let diag: alloc::vec::Vec<f64> = (0..d).map(|_| libm::exp(u.sample(rng))).collect();
    let q = random_orthogonal(rng, d);
    SpdMatrix::from_sym(SymMatrix::from_diagonal(&diag).congruence(&q)).expect("well-conditioned by construction")
}

/// 2×2 rotation by `deg` degrees (counter-clockwise).
pub fn rotation_2d(deg: f64) -> DMatrix<f64> {
    let t = deg.to_radians();
    let (s, c) = (libm::sin(t), libm::cos(t));
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}
