//! Paired vision/audio sequences with a known correspondence.
//!
//! Pair `i` draws a latent `z_i ~ N(0, I)`; each vision row is
//! `P_v z_i + σ ε` and each audio row is `P_a z_i + σ ε`, with `P_v`, `P_a`
//! fixed per source. Projection entries have variance `1 / latent_dim`, so
//! clean rows have unit variance per coordinate.

use serde::{Deserialize, Serialize};

use crate::alignnet::OmniBatch;
use crate::error::{OmniError, Result};
use crate::harness::io::TimedBatch;
use crate::numerics::{Matrix, SeededRng};
use crate::parallel::Execution;

const PROJECTION_STREAM: u64 = u64::MAX;

/// `(vision rows, vision times, audio rows, audio times, latent)` of one pair.
type PairDraw = (Matrix, Vec<f64>, Matrix, Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticPairConfig {
    pub k: usize,
    pub latent_dim: usize,
    pub c: usize,
    pub n_v: usize,
    pub n_a: usize,
    pub noise_sigma: f64,
    /// Clip length in seconds.
    pub duration: f64,
    pub seed: u64,
}

impl Default for SyntheticPairConfig {
    fn default() -> Self {
        SyntheticPairConfig {
            k: 64,
            latent_dim: 8,
            c: 32,
            n_v: 16,
            n_a: 8,
            noise_sigma: 0.1,
            duration: 30.0,
            seed: 0,
        }
    }
}

impl SyntheticPairConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, n) in [("k", self.k), ("latent_dim", self.latent_dim), ("c", self.c), ("n_v", self.n_v), ("n_a", self.n_a)] {
            if n == 0 {
                return Err(OmniError::config(key, "must be >= 1"));
            }
        }
        if self.latent_dim > self.c {
            return Err(OmniError::config("latent_dim", "must not exceed c"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(OmniError::config("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(OmniError::config("duration", "must be positive and finite"));
        }
        Ok(())
    }
}

/// A batch together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPairs {
    pub batch: OmniBatch,
    /// Ascending timestamps of each vision row, per pair.
    pub vision_times: Vec<Vec<f64>>,
    pub audio_times: Vec<Vec<f64>>,
    /// Row `i` is the latent of pair `i`.
    pub latents: Matrix,
}

impl SyntheticPairs {
    pub fn timed(&self) -> TimedBatch {
        TimedBatch {
            batch: self.batch.clone(),
            vision_times: self.vision_times.clone(),
            audio_times: self.audio_times.clone(),
        }
    }
}

/// Fixed projections plus a seed; draws any number of batches.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSource {
    cfg: SyntheticPairConfig,
    p_v: Matrix,
    p_a: Matrix,
}

impl SyntheticSource {
    pub fn new(cfg: SyntheticPairConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(cfg.seed).stream(PROJECTION_STREAM);
        let std = (cfg.latent_dim as f64).recip().sqrt();
        let p_v = Matrix::random_gaussian(cfg.c, cfg.latent_dim, std, &mut rng);
        let p_a = Matrix::random_gaussian(cfg.c, cfg.latent_dim, std, &mut rng);
        Ok(SyntheticSource { cfg, p_v, p_a })
    }

    /// A source with caller-chosen `c × latent_dim` projections.
    pub fn with_projections(cfg: SyntheticPairConfig, p_v: Matrix, p_a: Matrix) -> Result<Self> {
        cfg.validate()?;
        for p in [&p_v, &p_a] {
            if p.shape() != (cfg.c, cfg.latent_dim) {
                return Err(OmniError::DimensionMismatch {
                    expected: cfg.c * cfg.latent_dim,
                    actual: p.rows() * p.cols(),
                });
            }
        }
        Ok(SyntheticSource { cfg, p_v, p_a })
    }

    pub fn config(&self) -> &SyntheticPairConfig {
        &self.cfg
    }

    pub fn vision_projection(&self) -> &Matrix {
        &self.p_v
    }

    pub fn audio_projection(&self) -> &Matrix {
        &self.p_a
    }

    /// Batch number `batch_id` of `k` pairs. Every pair has its own RNG
    /// stream, so the result does not depend on `exec`.
    pub fn sample_with(&self, k: usize, batch_id: u32, exec: Execution) -> Result<SyntheticPairs> {
        if k == 0 {
            return Err(OmniError::config("k", "must be >= 1"));
        }
        let root = SeededRng::new(self.cfg.seed);
        let pairs = exec.try_map(k, |i| {
            let mut rng = root.stream((u64::from(batch_id) << 32) | i as u64);
            self.sample_pair(&mut rng)
        })?;

        let mut batch = OmniBatch {
            vision: Vec::with_capacity(k),
            audio: Vec::with_capacity(k),
        };
        let mut vision_times = Vec::with_capacity(k);
        let mut audio_times = Vec::with_capacity(k);
        let mut latents = Vec::with_capacity(k);
        for (v, vt, a, at, z) in pairs {
            batch.vision.push(v);
            batch.audio.push(a);
            vision_times.push(vt);
            audio_times.push(at);
            latents.push(z);
        }
        Ok(SyntheticPairs {
            batch,
            vision_times,
            audio_times,
            latents: Matrix::from_rows(&latents, self.cfg.latent_dim)?,
        })
    }

    pub fn sample(&self, k: usize, batch_id: u32) -> Result<SyntheticPairs> {
        self.sample_with(k, batch_id, Execution::default())
    }

    fn sample_pair(&self, rng: &mut SeededRng) -> Result<PairDraw> {
        let z = rng.gaussian_vec(self.cfg.latent_dim, 1.0);
        let (v, vt) = self.sequence(&self.p_v, &z, self.cfg.n_v, rng)?;
        let (a, at) = self.sequence(&self.p_a, &z, self.cfg.n_a, rng)?;
        Ok((v, vt, a, at, z))
    }

    fn sequence(&self, p: &Matrix, z: &[f64], n: usize, rng: &mut SeededRng) -> Result<(Matrix, Vec<f64>)> {
        let clean = p.matvec(z)?;
        let mut rows = Matrix::zeros(n, self.cfg.c);
        for i in 0..n {
            for (dst, x) in rows.row_mut(i).iter_mut().zip(clean.iter()) {
                *dst = x + self.cfg.noise_sigma * rng.gaussian();
            }
        }
        let mut times: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, self.cfg.duration)).collect();
        times.sort_by(f64::total_cmp);
        Ok((rows, times))
    }
}

/// Batch id of [`gen_synthetic_pairs`]; training draws from other ids so
/// generated data stays held out.
pub const EVAL_BATCH: u32 = 0;
pub const TRAIN_BATCH: u32 = 1;

/// The evaluation batch of a fresh source built from `cfg`.
pub fn gen_synthetic_pairs(cfg: &SyntheticPairConfig) -> Result<SyntheticPairs> {
    SyntheticSource::new(cfg.clone())?.sample(cfg.k, EVAL_BATCH)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_rows_are_identical() {
        let cfg = SyntheticPairConfig {
            noise_sigma: 0.0,
            k: 3,
            ..Default::default()
        };
        let source = SyntheticSource::new(cfg).unwrap();
        let pairs = source.sample(3, 0).unwrap();
        for (i, v) in pairs.batch.vision.iter().enumerate() {
            let expected = source.vision_projection().matvec(pairs.latents.row(i)).unwrap();
            for row in v.row_iter() {
                assert_eq!(row, expected.as_slice());
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let cfg = SyntheticPairConfig::default();
        let a = gen_synthetic_pairs(&cfg).unwrap();
        let b = gen_synthetic_pairs(&cfg).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_pairs(&SyntheticPairConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.latents, c.latents);
    }

    #[test]
    fn shapes_and_times() {
        let cfg = SyntheticPairConfig {
            k: 5,
            n_v: 4,
            n_a: 3,
            duration: 2.0,
            ..Default::default()
        };
        let p = gen_synthetic_pairs(&cfg).unwrap();
        assert_eq!(p.batch.k(), 5);
        assert_eq!(p.batch.vision[0].shape(), (4, 32));
        assert_eq!(p.batch.audio[4].shape(), (3, 32));
        for t in p.vision_times.iter().chain(&p.audio_times) {
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
            assert!(t.iter().all(|x| (0.0..2.0).contains(x)));
        }
    }

    #[test]
    fn execution_does_not_change_batches() {
        let source = SyntheticSource::new(SyntheticPairConfig::default()).unwrap();
        let a = source.sample_with(20, 3, Execution::Sequential).unwrap();
        let b = source.sample_with(20, 3, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_name_the_key() {
        let cases = [
            (SyntheticPairConfig { latent_dim: 40, ..Default::default() }, "latent_dim"),
            (SyntheticPairConfig { n_a: 0, ..Default::default() }, "n_a"),
            (SyntheticPairConfig { noise_sigma: -0.1, ..Default::default() }, "noise_sigma"),
        ];
        for (cfg, key) in cases {
            match cfg.validate() {
                Err(OmniError::InvalidConfig { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{other:?}"),
            }
        }
    }
}
