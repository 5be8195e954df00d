//! Alignment head: learned queries pool each modality sequence into one
//! token, three residual attention blocks refine it, and the result is L2
//! normalized into a shared space trained with a symmetric contrastive loss.

mod block;
mod loss;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::numerics::{dot, l2_normalize, softmax, Matrix, SeededRng, Vector};
use crate::parallel::Execution;

pub use block::{attention_block_forward, AttentionBlock, FFN_EXPANSION};
pub use loss::{
    contrastive_loss, contrastive_loss_and_grad, contrastive_loss_grad, retrieval_accuracy, similarity,
    ContrastiveGrad,
};

pub const NUM_BLOCKS: usize = 3;
pub const DEFAULT_INIT_SCALE: f64 = 0.02;
pub const DEFAULT_TAU: f64 = 1.0;

/// `K` paired vision/audio sequences. Sequence lengths may differ per
/// sample; the embedding width may not.
#[derive(Debug, Clone, PartialEq)]
pub struct OmniBatch {
    pub vision: Vec<Matrix>,
    pub audio: Vec<Matrix>,
}

impl OmniBatch {
    pub fn new(vision: Vec<Matrix>, audio: Vec<Matrix>) -> Result<Self> {
        let batch = OmniBatch { vision, audio };
        batch.validate()?;
        Ok(batch)
    }

    pub fn k(&self) -> usize {
        self.vision.len()
    }

    pub fn dim(&self) -> usize {
        self.vision.first().map_or(0, Matrix::cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vision.is_empty() {
            return Err(OmniError::EmptyInput);
        }
        if self.vision.len() != self.audio.len() {
            return Err(OmniError::DimensionMismatch {
                expected: self.vision.len(),
                actual: self.audio.len(),
            });
        }
        let dim = self.dim();
        for m in self.vision.iter().chain(&self.audio) {
            if m.is_empty() {
                return Err(OmniError::EmptyInput);
            }
            if m.cols() != dim {
                return Err(OmniError::DimensionMismatch {
                    expected: dim,
                    actual: m.cols(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignHeadParams {
    pub q_v: Vector,
    pub q_a: Vector,
    pub blocks: Vec<AttentionBlock>,
    pub init_scale: f64,
    pub seed: u64,
}

impl AlignHeadParams {
    pub fn init(dim: usize, init_scale: f64, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let q_v = rng.gaussian_vec(dim, init_scale).into();
        let q_a = rng.gaussian_vec(dim, init_scale).into();
        let blocks = (0..NUM_BLOCKS)
            .map(|_| AttentionBlock::random(dim, init_scale, &mut rng))
            .collect();
        AlignHeadParams {
            q_v,
            q_a,
            blocks,
            init_scale,
            seed,
        }
    }

    /// Zero queries and zero blocks: the head reduces to mean pooling
    /// followed by normalization.
    pub fn zeros(dim: usize) -> Self {
        AlignHeadParams {
            q_v: Vector::zeros(dim),
            q_a: Vector::zeros(dim),
            blocks: (0..NUM_BLOCKS).map(|_| AttentionBlock::zeros(dim)).collect(),
            init_scale: 0.0,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.q_v.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != NUM_BLOCKS {
            return Err(OmniError::config(
                "blocks",
                format!("expected {NUM_BLOCKS} attention blocks, found {}", self.blocks.len()),
            ));
        }
        let dim = self.dim();
        if self.q_a.dim() != dim || self.blocks.iter().any(|b| b.dim() != dim) {
            return Err(OmniError::config("blocks", "inconsistent widths"));
        }
        if !self.q_v.is_finite() || !self.q_a.is_finite() || !self.blocks.iter().all(AttentionBlock::is_finite) {
            return Err(OmniError::config("blocks", "non-finite weight"));
        }
        Ok(())
    }

    /// Named tensors in a fixed order, vectors as `1 × C` matrices.
    pub fn tensors(&self) -> Vec<(String, Matrix)> {
        let as_row = |v: &Vector| Matrix::from_rows(&[v.as_slice()], v.dim()).expect("single row");
        let mut out = vec![("q_v".to_string(), as_row(&self.q_v)), ("q_a".to_string(), as_row(&self.q_a))];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.w_q"), b.w_q.clone()));
            out.push((format!("block{i}.w_k"), b.w_k.clone()));
            out.push((format!("block{i}.w_v"), b.w_v.clone()));
            out.push((format!("block{i}.w_o"), b.w_o.clone()));
            out.push((format!("block{i}.ffn_in"), b.ffn_in.clone()));
            out.push((format!("block{i}.ffn_in_bias"), as_row(&b.ffn_in_bias)));
            out.push((format!("block{i}.ffn_out"), b.ffn_out.clone()));
            out.push((format!("block{i}.ffn_out_bias"), as_row(&b.ffn_out_bias)));
        }
        out
    }

    /// Inverse of [`AlignHeadParams::tensors`].
    pub fn from_tensors(tensors: Vec<(String, Matrix)>, init_scale: f64, seed: u64) -> Result<Self> {
        let mut map: std::collections::HashMap<String, Matrix> = tensors.into_iter().collect();
        let mut take = |name: &str| {
            map.remove(name)
                .ok_or_else(|| OmniError::config(name, "missing tensor"))
        };
        let row = |m: Matrix| -> Vector { m.into_data().into() };
        let q_v = row(take("q_v")?);
        let q_a = row(take("q_a")?);
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for i in 0..NUM_BLOCKS {
            blocks.push(AttentionBlock {
                w_q: take(&format!("block{i}.w_q"))?,
                w_k: take(&format!("block{i}.w_k"))?,
                w_v: take(&format!("block{i}.w_v"))?,
                w_o: take(&format!("block{i}.w_o"))?,
                ffn_in: take(&format!("block{i}.ffn_in"))?,
                ffn_in_bias: row(take(&format!("block{i}.ffn_in_bias"))?),
                ffn_out: take(&format!("block{i}.ffn_out"))?,
                ffn_out_bias: row(take(&format!("block{i}.ffn_out_bias"))?),
            });
        }
        let params = AlignHeadParams {
            q_v,
            q_a,
            blocks,
            init_scale,
            seed,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Cross-attention pooling of `seq` (`N × C`) by query `q`:
/// `softmax(seq·q / √C) · seq`.
pub fn project_with_query(seq: &Matrix, q: &[f64]) -> Result<Vector> {
    if seq.is_empty() {
        return Err(OmniError::EmptyInput);
    }
    if seq.cols() != q.len() {
        return Err(OmniError::DimensionMismatch {
            expected: seq.cols(),
            actual: q.len(),
        });
    }
    let scale = (q.len() as f64).sqrt();
    let logits: Vec<f64> = seq.row_iter().map(|r| dot(r, q) / scale).collect();
    let weights = softmax(&logits)?;
    seq.transpose_matvec(&weights)
}

/// Unit-norm row matrices `V` and `A`, one row per batch sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OmniEmbeddings {
    pub v: Matrix,
    pub a: Matrix,
}

fn embed(seq: &Matrix, query: &[f64], blocks: &[AttentionBlock]) -> Result<Vector> {
    let mut x = project_with_query(seq, query)?;
    for b in blocks {
        x = b.forward(&x)?;
    }
    l2_normalize(&x)
}

pub fn compute_omni_embeddings(batch: &OmniBatch, params: &AlignHeadParams) -> Result<OmniEmbeddings> {
    compute_omni_embeddings_with(batch, params, Execution::default())
}

/// Sample-parallel forward pass of the whole head.
pub fn compute_omni_embeddings_with(
    batch: &OmniBatch,
    params: &AlignHeadParams,
    exec: Execution,
) -> Result<OmniEmbeddings> {
    batch.validate()?;
    params.validate()?;
    if batch.dim() != params.dim() {
        return Err(OmniError::DimensionMismatch {
            expected: params.dim(),
            actual: batch.dim(),
        });
    }
    let rows = exec.try_map(batch.k(), |i| -> Result<(Vector, Vector)> {
        Ok((
            embed(&batch.vision[i], &params.q_v, &params.blocks)?,
            embed(&batch.audio[i], &params.q_a, &params.blocks)?,
        ))
    })?;
    let (v, a): (Vec<Vector>, Vec<Vector>) = rows.into_iter().unzip();
    Ok(OmniEmbeddings {
        v: Matrix::from_rows(&v, params.dim())?,
        a: Matrix::from_rows(&a, params.dim())?,
    })
}
