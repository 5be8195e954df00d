//! Audio token compression along the time axis.
//!
//! All three operators halve the sequence: `N` tokens become `⌈N/2⌉` and the
//! token rate halves. Pooling uses non-overlapping windows of two; an odd
//! trailing token forms its own window and passes through unchanged. The
//! convolution is depthwise with kernel 3, stride 2 and zero padding 1.

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::numerics::Matrix;

/// Encoder output rate: 750 tokens per 30 s clip.
pub const ENCODER_TOKENS_PER_SECOND: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioTokenSeq {
    tokens: Matrix,
    rate: f64,
}

impl AudioTokenSeq {
    pub fn new(tokens: Matrix, rate: f64) -> Result<Self> {
        if tokens.is_empty() {
            return Err(OmniError::EmptyInput);
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(OmniError::config("rate", "must be positive and finite"));
        }
        Ok(AudioTokenSeq { tokens, rate })
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn into_tokens(self) -> Matrix {
        self.tokens
    }

    /// Tokens per second.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    /// Tokens per minute of audio.
    pub fn tokens_per_minute(&self) -> f64 {
        60.0 * self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Max,
    Avg,
}

pub fn compressed_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Kernel-2, stride-2 pooling.
pub fn pool_sequence(seq: &AudioTokenSeq, mode: PoolMode) -> AudioTokenSeq {
    let n = seq.len();
    let c = seq.dim();
    let mut out = Matrix::zeros(compressed_len(n), c);
    for j in 0..out.rows() {
        let first = seq.tokens.row(2 * j);
        let dst = out.row_mut(j);
        match (2 * j + 1 < n).then(|| seq.tokens.row(2 * j + 1)) {
            None => dst.copy_from_slice(first),
            Some(second) => {
                for ((d, x), y) in dst.iter_mut().zip(first).zip(second) {
                    *d = match mode {
                        PoolMode::Max => x.max(*y),
                        PoolMode::Avg => 0.5 * (x + y),
                    };
                }
            }
        }
    }
    AudioTokenSeq {
        tokens: out,
        rate: seq.rate / 2.0,
    }
}

/// One three-tap filter per channel, taps ordered `(t−1, t, t+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthwiseKernel {
    taps: Vec<[f64; 3]>,
}

impl DepthwiseKernel {
    pub fn new(taps: Vec<[f64; 3]>) -> Result<Self> {
        if taps.iter().flatten().any(|w| !w.is_finite()) {
            return Err(OmniError::config("kernel", "non-finite weight"));
        }
        Ok(DepthwiseKernel { taps })
    }

    /// The same filter on every channel.
    pub fn uniform(channels: usize, taps: [f64; 3]) -> Result<Self> {
        Self::new(vec![taps; channels])
    }

    /// `(1, 1, 1) / 3` on every channel.
    pub fn averaging(channels: usize) -> Self {
        DepthwiseKernel {
            taps: vec![[1.0 / 3.0; 3]; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[[f64; 3]] {
        &self.taps
    }
}

/// Depthwise convolution, kernel 3, stride 2, zero padding 1. Output `j`
/// is centred on input `2j`.
pub fn conv1d_downsample(seq: &AudioTokenSeq, kernel: &DepthwiseKernel) -> Result<AudioTokenSeq> {
    let n = seq.len();
    let c = seq.dim();
    if kernel.channels() != c {
        return Err(OmniError::DimensionMismatch {
            expected: c,
            actual: kernel.channels(),
        });
    }
    let x = &seq.tokens;
    let mut out = Matrix::zeros(compressed_len(n), c);
    for j in 0..out.rows() {
        let centre = 2 * j;
        for (ch, w) in kernel.taps.iter().enumerate() {
            let mut acc = w[1] * x.get(centre, ch);
            if centre > 0 {
                acc += w[0] * x.get(centre - 1, ch);
            }
            if centre + 1 < n {
                acc += w[2] * x.get(centre + 1, ch);
            }
            out.set(j, ch, acc);
        }
    }
    Ok(AudioTokenSeq {
        tokens: out,
        rate: seq.rate / 2.0,
    })
}

/// A compression operator selected at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum Compressor {
    Pool(PoolMode),
    Conv(DepthwiseKernel),
}

impl Default for Compressor {
    fn default() -> Self {
        Compressor::Pool(PoolMode::Max)
    }
}

impl Compressor {
    pub fn apply(&self, seq: &AudioTokenSeq) -> Result<AudioTokenSeq> {
        match self {
            Compressor::Pool(mode) => Ok(pool_sequence(seq, *mode)),
            Compressor::Conv(kernel) => conv1d_downsample(seq, kernel),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> AudioTokenSeq {
        let rows: Vec<[f64; 1]> = values.iter().map(|v| [*v]).collect();
        AudioTokenSeq::new(Matrix::from_rows(&rows, 1).unwrap(), ENCODER_TOKENS_PER_SECOND).unwrap()
    }

    fn values(seq: &AudioTokenSeq) -> Vec<f64> {
        seq.tokens().data().to_vec()
    }

    #[test]
    fn pooling_windows() {
        let s = column(&[1.0, 3.0, 2.0, 5.0]);
        assert_eq!(values(&pool_sequence(&s, PoolMode::Max)), vec![3.0, 5.0]);
        assert_eq!(values(&pool_sequence(&s, PoolMode::Avg)), vec![2.0, 3.5]);
    }

    #[test]
    fn singleton_and_odd_tail_pass_through() {
        let s = column(&[4.0]);
        assert_eq!(pool_sequence(&s, PoolMode::Max).tokens(), s.tokens());
        assert_eq!(pool_sequence(&s, PoolMode::Avg).tokens(), s.tokens());
        let s = column(&[1.0, 2.0, 7.0]);
        assert_eq!(values(&pool_sequence(&s, PoolMode::Avg)), vec![1.5, 7.0]);
    }

    #[test]
    fn encoder_rate_halves() {
        let s = AudioTokenSeq::new(Matrix::zeros(750, 4), ENCODER_TOKENS_PER_SECOND / 2.0).unwrap();
        assert_eq!(s.tokens_per_minute(), 750.0);
        for out in [
            pool_sequence(&s, PoolMode::Max),
            pool_sequence(&s, PoolMode::Avg),
            conv1d_downsample(&s, &DepthwiseKernel::averaging(4)).unwrap(),
        ] {
            assert_eq!(out.len(), 375);
            assert_eq!(out.tokens_per_minute(), 375.0);
        }
    }

    #[test]
    fn conv_examples() {
        let s = column(&[1.0, 2.0, 3.0, 4.0]);
        let avg = conv1d_downsample(&s, &DepthwiseKernel::averaging(1)).unwrap();
        let got = values(&avg);
        assert!((got[0] - 1.0).abs() < 1e-15 && (got[1] - 3.0).abs() < 1e-15);

        let s = column(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let delta = conv1d_downsample(&s, &DepthwiseKernel::uniform(1, [0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(values(&delta), vec![1.0, 3.0, 5.0]);
        let zero = conv1d_downsample(&s, &DepthwiseKernel::uniform(1, [0.0; 3]).unwrap()).unwrap();
        assert!(values(&zero).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_is_depthwise() {
        let m = Matrix::from_rows(&[[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]], 2).unwrap();
        let s = AudioTokenSeq::new(m, 25.0).unwrap();
        let k = DepthwiseKernel::new(vec![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]).unwrap();
        let out = conv1d_downsample(&s, &k).unwrap();
        assert_eq!(out.tokens().data(), &[1.0, 20.0, 3.0, 20.0]);
    }

    #[test]
    fn errors() {
        let s = column(&[1.0, 2.0]);
        assert!(conv1d_downsample(&s, &DepthwiseKernel::averaging(3)).is_err());
        assert!(AudioTokenSeq::new(Matrix::zeros(0, 2), 25.0).is_err());
        assert!(AudioTokenSeq::new(Matrix::zeros(2, 2), 0.0).is_err());
        assert!(DepthwiseKernel::uniform(1, [f64::NAN, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn length_law_and_dominance(data in prop::collection::vec(-10.0f64..10.0, 1..60), c in 1usize..4) {
            let n = data.len() / c;
            prop_assume!(n >= 1);
            let m = Matrix::new(n, c, data[..n * c].to_vec()).unwrap();
            let s = AudioTokenSeq::new(m, 25.0).unwrap();
            let mx = pool_sequence(&s, PoolMode::Max);
            let av = pool_sequence(&s, PoolMode::Avg);
            let cv = conv1d_downsample(&s, &DepthwiseKernel::averaging(c)).unwrap();
            for out in [&mx, &av, &cv] {
                prop_assert_eq!(out.len(), n.div_ceil(2));
                prop_assert_eq!(out.rate(), 12.5);
            }
            for (a, b) in mx.tokens().data().iter().zip(av.tokens().data()) {
                prop_assert!(a >= b);
            }
        }

        #[test]
        fn reversal_commutes_for_even_lengths(half in 1usize..20, seed in any::<u64>()) {
            let mut rng = crate::numerics::SeededRng::new(seed);
            let m = Matrix::random_gaussian(2 * half, 3, 1.0, &mut rng);
            let reversed = |m: &Matrix| {
                let rows: Vec<&[f64]> = m.row_iter().rev().collect();
                Matrix::from_rows(&rows, m.cols()).unwrap()
            };
            for mode in [PoolMode::Max, PoolMode::Avg] {
                let a = pool_sequence(&AudioTokenSeq::new(reversed(&m), 25.0).unwrap(), mode);
                let b = pool_sequence(&AudioTokenSeq::new(m.clone(), 25.0).unwrap(), mode);
                prop_assert_eq!(a.tokens(), &reversed(b.tokens()));
            }
        }
    }
}
