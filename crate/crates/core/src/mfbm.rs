//! Exact Gaussian simulation of the mixed fractional Brownian motion
//! `ξ = W + B^H` on a uniform grid.
//!
//! Increments are drawn jointly from their exact covariance
//! `Δ δ_ik + Δ^{2H} ρ_H(i − k)` through a Cholesky factor that is computed
//! once per grid and shared by every path.

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::TimeGrid;

/// Hurst exponent of the fractional component, `0 < H < 1`, `H ≠ 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::Domain(format!("H must lie in (0, 1), got {h}")));
        }
        if (h - 0.5).abs() < 1e-6 {
            return Err(Error::Domain("H must differ from 1/2".into()));
        }
        Ok(Self(h))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_long_memory(self) -> bool {
        self.0 > 0.5
    }
}

impl TryFrom<f64> for HurstParam {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Self::new(h)
    }
}

impl From<HurstParam> for f64 {
    fn from(h: HurstParam) -> f64 {
        h.0
    }
}

/// `Cov(ξ_s, ξ_t) = min(s,t) + (s^{2H} + t^{2H} − |t−s|^{2H}) / 2`.
pub fn mfbm_covariance(s: f64, t: f64, hurst: HurstParam) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return Err(Error::Domain(format!(
            "times must be nonnegative, got s={s}, t={t}"
        )));
    }
    let two_h = 2.0 * hurst.value();
    Ok(s.min(t) + 0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of unit-step fractional Gaussian noise,
/// `ρ_H(d) = (|d+1|^{2H} − 2|d|^{2H} + |d−1|^{2H}) / 2`.
pub fn fgn_autocovariance(d: usize, hurst: f64) -> f64 {
    let two_h = 2.0 * hurst;
    let d = d as f64;
    0.5 * ((d + 1.0).powf(two_h) - 2.0 * d.powf(two_h) + (d - 1.0).abs().powf(two_h))
}

/// First row of the (Toeplitz) covariance of the increments `Δξ_i`.
pub fn increment_autocovariance(grid: &TimeGrid, hurst: HurstParam) -> Vec<f64> {
    let dt = grid.dt();
    let scale = dt.powf(2.0 * hurst.value());
    (0..grid.n_steps())
        .map(|d| {
            let w = if d == 0 { dt } else { 0.0 };
            w + scale * fgn_autocovariance(d, hurst.value())
        })
        .collect()
}

/// Dense covariance matrix of the increments.
pub fn increment_covariance(grid: &TimeGrid, hurst: HurstParam) -> DMatrix<f64> {
    let r = increment_autocovariance(grid, hurst);
    let n = grid.n_steps();
    DMatrix::from_fn(n, n, |i, k| r[i.abs_diff(k)])
}

/// Per-path seed: root seed XOR the path index scrambled by a fixed odd constant.
pub fn split_seed(root: u64, index: u64) -> u64 {
    const MIX: u64 = 0x9E37_79B9_7F4A_7C15;
    root ^ index.wrapping_add(1).wrapping_mul(MIX)
}

/// One sampled trajectory of `ξ`, stored as its increments.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub increments: Vec<f64>,
    pub seed: u64,
}

impl NoisePath {
    /// A path with all increments zero.
    pub fn zero(grid: &TimeGrid) -> Self {
        Self {
            grid: *grid,
            increments: vec![0.0; grid.n_steps()],
            seed: 0,
        }
    }

    /// Path values `ξ_{t_i}`, starting at 0.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for d in &self.increments {
            acc += d;
            out.push(acc);
        }
        out
    }
}

/// Shared Cholesky factor of the increment covariance on one grid.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    grid: TimeGrid,
    hurst: HurstParam,
    // Row-packed lower triangle: row i holds L[i, 0..=i].
    factor: Vec<f64>,
}

impl NoiseSampler {
    pub fn new(grid: &TimeGrid, hurst: HurstParam) -> Result<Self> {
        const JITTER: f64 = 1e-12;
        let cov = increment_covariance(grid, hurst);
        let chol = match Cholesky::new(cov.clone()) {
            Some(c) => c,
            None => {
                let n = cov.nrows();
                Cholesky::new(cov + DMatrix::identity(n, n) * JITTER)
                    .ok_or(Error::Cholesky { jitter: JITTER })?
            }
        };
        let l = chol.l();
        let n = grid.n_steps();
        let mut factor = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for k in 0..=i {
                factor.push(l[(i, k)]);
            }
        }
        Ok(Self {
            grid: *grid,
            hurst,
            factor,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }

    /// One path from an explicit seed.
    pub fn sample(&self, seed: u64) -> NoisePath {
        let n = self.grid.n_steps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut increments = vec![0.0; n];
        let mut offset = 0;
        for (i, inc) in increments.iter_mut().enumerate() {
            let row = &self.factor[offset..offset + i + 1];
            *inc = row.iter().zip(&z).map(|(l, z)| l * z).sum();
            offset += i + 1;
        }
        NoisePath {
            grid: self.grid,
            increments,
            seed,
        }
    }

    /// Path `index` of the family rooted at `root_seed`.
    pub fn sample_indexed(&self, root_seed: u64, index: u64) -> NoisePath {
        self.sample(split_seed(root_seed, index))
    }
}

/// `n_paths` independent paths with split seeds; deterministic in all inputs.
pub fn sample_paths(
    grid: &TimeGrid,
    hurst: HurstParam,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<NoisePath>> {
    let sampler = NoiseSampler::new(grid, hurst)?;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|j| sampler.sample_indexed(seed, j))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hurst_domain() {
        assert!(HurstParam::new(0.5).is_err());
        assert!(HurstParam::new(0.5 + 1e-7).is_err());
        assert!(HurstParam::new(0.0).is_err());
        assert!(HurstParam::new(1.0).is_err());
        let msg = HurstParam::new(0.5).unwrap_err().to_string();
        assert!(msg.contains("H must differ from 1/2"), "{msg}");
        assert!(HurstParam::new(0.7).unwrap().is_long_memory());
    }

    #[test]
    fn covariance_examples() {
        let h7 = HurstParam::new(0.7).unwrap();
        let h3 = HurstParam::new(0.3).unwrap();
        assert_eq!(mfbm_covariance(0.0, 3.0, h7).unwrap(), 0.0);
        assert!((mfbm_covariance(1.0, 1.0, h7).unwrap() - 2.0).abs() < 1e-15);
        assert!((mfbm_covariance(1.0, 1.0, h3).unwrap() - 2.0).abs() < 1e-15);
        let expected = 1.0 + 2f64.powf(0.4);
        assert!((mfbm_covariance(1.0, 2.0, h7).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 2.3195).abs() < 1e-4);
        assert!(mfbm_covariance(-1.0, 1.0, h7).is_err());
    }

    #[test]
    fn increment_variance_on_diagonal() {
        for h in [0.2, 0.3, 0.7, 0.9] {
            let hp = HurstParam::new(h).unwrap();
            let grid = TimeGrid::new(2.0, 16).unwrap();
            let dt = grid.dt();
            let r = increment_autocovariance(&grid, hp);
            assert!((r[0] - (dt + dt.powf(2.0 * h))).abs() < 1e-15);
        }
    }

    #[test]
    fn increment_covariance_matches_process_covariance() {
        let hp = HurstParam::new(0.3).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let c = increment_covariance(&grid, hp);
        let t = grid.nodes();
        for i in 0..8 {
            for k in 0..8 {
                let cov = |a: usize, b: usize| mfbm_covariance(t[a], t[b], hp).unwrap();
                let direct = cov(i + 1, k + 1) - cov(i + 1, k) - cov(i, k + 1) + cov(i, k);
                assert!((c[(i, k)] - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let hp = HurstParam::new(0.7).unwrap();
        let a = sample_paths(&grid, hp, 1, 99).unwrap();
        let b = sample_paths(&grid, hp, 1, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_paths(&grid, hp, 1, 100).unwrap();
        assert_ne!(a[0].increments, c[0].increments);
    }

    #[test]
    fn split_seed_is_injective_on_small_range() {
        let mut seen: Vec<u64> = (0..1000).map(|j| split_seed(42, j)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn sampled_variance_matches_covariance() {
        let grid = TimeGrid::new(2.0, 40).unwrap();
        for hv in [0.3, 0.7] {
            let h = HurstParam::new(hv).unwrap();
            let paths = sample_paths(&grid, h, 5000, 11).unwrap();
            let var = paths.iter().map(|p| p.values()[40].powi(2)).sum::<f64>() / 5000.0;
            let exact = mfbm_covariance(2.0, 2.0, h).unwrap();
            assert!((var / exact - 1.0).abs() < 0.05, "H={hv} {var} vs {exact}");
        }
    }

    proptest::proptest! {
        #[test]
        fn covariance_is_symmetric_and_cauchy_schwarz(
            h in 0.05f64..0.95,
            s in 0.0f64..20.0,
            t in 0.0f64..20.0,
        ) {
            proptest::prop_assume!((h - 0.5).abs() > 1e-3);
            let hp = HurstParam::new(h).unwrap();
            let st = mfbm_covariance(s, t, hp).unwrap();
            let ts = mfbm_covariance(t, s, hp).unwrap();
            proptest::prop_assert_eq!(st, ts);
            let ss = mfbm_covariance(s, s, hp).unwrap();
            let tt = mfbm_covariance(t, t, hp).unwrap();
            proptest::prop_assert!(st * st <= ss * tt * (1.0 + 1e-12) + 1e-300);
        }
    }
}
