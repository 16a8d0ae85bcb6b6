//! Reproducible Gaussian noise for characteristic paths.
//!
//! Each path owns an independent ChaCha8 stream keyed by
//! `(master_seed, stream, path_index)`: the seed and stream id are mixed
//! through SplitMix64 into the cipher key and the path index selects the
//! cipher's stream. A path's increments therefore depend on nothing but its
//! own coordinates, so any partition of paths over workers yields the same
//! numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub master_seed: u64,
    /// Sub-stream id, e.g. the node index of a density slice.
    pub stream: u64,
    pub path_index: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoiseSpec {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            stream: 0,
            path_index,
        }
    }

    pub fn on_stream(master_seed: u64, stream: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            stream,
            path_index,
        }
    }

    pub fn rng(&self) -> PathRng {
        let key = splitmix64(self.master_seed ^ splitmix64(self.stream.wrapping_add(0x5851_f42d_4c95_7f2d)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(self.path_index);
        PathRng { rng }
    }
}

/// Per-path Gaussian source.
#[derive(Debug, Clone)]
pub struct PathRng {
    rng: ChaCha8Rng,
}

impl PathRng {
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Three independent `N(0, variance)` draws.
    #[inline]
    pub fn increment(&mut self, variance: f64) -> Vec3 {
        let s = variance.sqrt();
        [
            s * self.standard_normal(),
            s * self.standard_normal(),
            s * self.standard_normal(),
        ]
    }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMean {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    /// Largest value returned by the `extra` channel of the sampler.
    pub max_extra: f64,
}

const CHUNK: usize = 1024;

/// Mean of `f(0..n)` with sample-standard-deviation / `√n` error.
///
/// Chunks are fixed-size and combined in index order, so the result is the
/// same for any thread count. Sums are taken relative to `f(0)`, which keeps
/// a constant integrand exactly constant (mean equal to it, error zero).
/// `f` returns the sample and an auxiliary value whose maximum is reported.
pub fn sample_mean<F>(n: usize, f: F) -> Result<SampleMean>
where
    F: Fn(usize) -> Result<(f64, f64)> + Sync,
{
    assert!(n >= 1, "need at least one sample");
    let (shift, first_extra) = f(0)?;
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<Result<(f64, f64, f64)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut extra = f64::NEG_INFINITY;
            for i in (c * CHUNK).max(1)..((c + 1) * CHUNK).min(n) {
                let (v, e) = f(i)?;
                let d = v - shift;
                s1 += d;
                s2 += d * d;
                extra = extra.max(e);
            }
            Ok((s1, s2, extra))
        })
        .collect();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut max_extra = first_extra;
    for p in partials {
        let (a, b, e) = p?;
        s1 += a;
        s2 += b;
        max_extra = max_extra.max(e);
    }
    let nf = n as f64;
    let mean_shift = s1 / nf;
    let stderr = if n > 1 {
        let var = ((s2 - s1 * mean_shift) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    } else {
        0.0
    };
    Ok(SampleMean {
        mean: shift + mean_shift,
        stderr,
        n,
        max_extra,
    })
}
