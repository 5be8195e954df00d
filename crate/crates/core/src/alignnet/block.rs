use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::numerics::{dot, softmax, Matrix, SeededRng, Vector};

/// Width multiplier of the feed-forward hidden layer.
pub const FFN_EXPANSION: usize = 4;

/// Residual single-head self-attention block followed by a residual
/// two-layer GELU feed-forward network. No normalization layers.
///
/// Weight matrices act on column vectors: `q_i = w_q · x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    /// `4C × C`
    pub ffn_in: Matrix,
    pub ffn_in_bias: Vector,
    /// `C × 4C`
    pub ffn_out: Matrix,
    pub ffn_out_bias: Vector,
}

fn gelu(x: f64) -> f64 {
    // tanh approximation
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
    0.5 * x * (1.0 + (K * (x + 0.044_715 * x * x * x)).tanh())
}

impl AttentionBlock {
    pub fn zeros(dim: usize) -> Self {
        let hidden = FFN_EXPANSION * dim;
        AttentionBlock {
            w_q: Matrix::zeros(dim, dim),
            w_k: Matrix::zeros(dim, dim),
            w_v: Matrix::zeros(dim, dim),
            w_o: Matrix::zeros(dim, dim),
            ffn_in: Matrix::zeros(hidden, dim),
            ffn_in_bias: Vector::zeros(hidden),
            ffn_out: Matrix::zeros(dim, hidden),
            ffn_out_bias: Vector::zeros(dim),
        }
    }

    /// Gaussian weights with std `init_scale`, zero biases.
    pub fn random(dim: usize, init_scale: f64, rng: &mut SeededRng) -> Self {
        let hidden = FFN_EXPANSION * dim;
        AttentionBlock {
            w_q: Matrix::random_gaussian(dim, dim, init_scale, rng),
            w_k: Matrix::random_gaussian(dim, dim, init_scale, rng),
            w_v: Matrix::random_gaussian(dim, dim, init_scale, rng),
            w_o: Matrix::random_gaussian(dim, dim, init_scale, rng),
            ffn_in: Matrix::random_gaussian(hidden, dim, init_scale, rng),
            ffn_in_bias: Vector::zeros(hidden),
            ffn_out: Matrix::random_gaussian(dim, hidden, init_scale, rng),
            ffn_out_bias: Vector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn is_finite(&self) -> bool {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.ffn_in, &self.ffn_out]
            .iter()
            .all(|m| m.is_finite())
            && self.ffn_in_bias.is_finite()
            && self.ffn_out_bias.is_finite()
    }

    fn feed_forward(&self, y: &[f64]) -> Result<Vector> {
        let mut h = self.ffn_in.matvec(y)?;
        for (hi, b) in h.iter_mut().zip(self.ffn_in_bias.iter()) {
            *hi = gelu(*hi + b);
        }
        let mut out = self.ffn_out.matvec(&h)?;
        out.axpy(1.0, &self.ffn_out_bias);
        Ok(out)
    }

    /// Full self-attention over the rows of `tokens`.
    pub fn forward_tokens(&self, tokens: &Matrix) -> Result<Matrix> {
        let dim = self.dim();
        if tokens.cols() != dim {
            return Err(OmniError::DimensionMismatch {
                expected: dim,
                actual: tokens.cols(),
            });
        }
        if tokens.is_empty() {
            return Err(OmniError::EmptyInput);
        }
        let project = |w: &Matrix| -> Result<Vec<Vector>> { tokens.row_iter().map(|x| w.matvec(x)).collect() };
        let q = project(&self.w_q)?;
        let k = project(&self.w_k)?;
        let v = project(&self.w_v)?;
        let scale = (dim as f64).sqrt();

        let mut out = Matrix::zeros(tokens.rows(), dim);
        for (i, x) in tokens.row_iter().enumerate() {
            let scores: Vec<f64> = k.iter().map(|kj| dot(&q[i], kj) / scale).collect();
            let weights = softmax(&scores)?;
            let mut mixed = Vector::zeros(dim);
            for (w, vj) in weights.iter().zip(&v) {
                mixed.axpy(*w, vj);
            }
            let mut y = Vector::from(x);
            y.axpy(1.0, &self.w_o.matvec(&mixed)?);
            let ff = self.feed_forward(&y)?;
            y.axpy(1.0, &ff);
            out.row_mut(i).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Single-token forward. Attention over one token has weight one, so the
    /// attention path reduces to `w_o · w_v · x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        let tokens = Matrix::from_rows(&[x], x.len())?;
        Ok(self.forward_tokens(&tokens)?.row(0).into())
    }
}

pub fn attention_block_forward(x: &[f64], block: &AttentionBlock) -> Result<Vector> {
    block.forward(x)
}
