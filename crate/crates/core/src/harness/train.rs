//! Full-batch contrastive training of linear alignment heads.
//!
//! Each modality sequence is mean-pooled, mapped by its head `W_m` and
//! l2-normalized: `V_i = normalize(W_v · meanpool(vision_i))`. Gradients
//! flow analytically through the normalization
//! (`∂L/∂u = (I − v vᵀ) ∂L/∂v / ‖u‖`) and the linear map.

use serde::{Deserialize, Serialize};

use crate::alignnet::{contrastive_loss, contrastive_loss_and_grad, retrieval_accuracy, OmniBatch, OmniEmbeddings};
use crate::error::{OmniError, Result};
use crate::numerics::{
    dot, finite_diff_grad, l2_normalize, norm, relative_error, Matrix, SeededRng, Vector, EPS_NORM,
};

/// Coordinates probed per epoch by the finite-difference check.
pub const GRAD_CHECK_COORDS: usize = 8;
const GRAD_CHECK_STEP: f64 = 1e-6;
const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
const HEAD_STREAM: u64 = 0x4845_4144;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Initial temperature.
    pub tau: f64,
    /// Also descend on `ln tau`.
    pub learn_tau: bool,
    pub init_scale: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Training pairs per run.
    pub k: usize,
    /// Finite-difference spot checks every epoch.
    pub check_gradients: bool,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            tau: 0.1,
            learn_tau: false,
            init_scale: 0.1,
            learning_rate: 0.5,
            epochs: 200,
            k: 64,
            check_gradients: cfg!(debug_assertions),
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(OmniError::config("tau", "must be positive and finite"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(OmniError::config("init_scale", "must be positive and finite"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(OmniError::config("learning_rate", "must be finite and >= 0"));
        }
        if self.k < 2 {
            return Err(OmniError::config("k", "must be >= 2"));
        }
        Ok(())
    }
}

/// One linear map per modality plus the (log) temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHeads {
    pub w_v: Matrix,
    pub w_a: Matrix,
    pub log_tau: f64,
}

impl LinearHeads {
    /// Square `c × c` heads with Gaussian entries of scale `init_scale`.
    pub fn init(c: usize, init_scale: f64, tau: f64, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed).stream(HEAD_STREAM);
        LinearHeads {
            w_v: Matrix::random_gaussian(c, c, init_scale, &mut rng),
            w_a: Matrix::random_gaussian(c, c, init_scale, &mut rng),
            log_tau: tau.ln(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn input_dim(&self) -> usize {
        self.w_v.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_v.rows()
    }

    /// `[w_v, w_a, ln tau]` flattened.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.w_v.data().len() + self.w_a.data().len() + 1);
        p.extend_from_slice(self.w_v.data());
        p.extend_from_slice(self.w_a.data());
        p.push(self.log_tau);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (nv, na) = (self.w_v.data().len(), self.w_a.data().len());
        self.w_v.data_mut().copy_from_slice(&p[..nv]);
        self.w_a.data_mut().copy_from_slice(&p[nv..nv + na]);
        self.log_tau = p[nv + na];
    }

    /// Maps one row through a head and normalizes it.
    pub fn embed_vision_row(&self, x: &[f64]) -> Result<Vector> {
        l2_normalize(&self.w_v.matvec(x)?)
    }

    pub fn embed_audio_row(&self, x: &[f64]) -> Result<Vector> {
        l2_normalize(&self.w_a.matvec(x)?)
    }

    pub fn embed(&self, batch: &OmniBatch) -> Result<OmniEmbeddings> {
        let pooled = Pooled::new(batch)?;
        let (v, _) = normalized(&pooled.v.matmul_transposed(&self.w_v)?)?;
        let (a, _) = normalized(&pooled.a.matmul_transposed(&self.w_a)?)?;
        Ok(OmniEmbeddings { v, a })
    }
}

/// Mean-pooled inputs, one row per pair.
struct Pooled {
    v: Matrix,
    a: Matrix,
}

impl Pooled {
    fn new(batch: &OmniBatch) -> Result<Self> {
        batch.validate()?;
        let pool = |seqs: &[Matrix]| -> Result<Matrix> {
            let rows = seqs.iter().map(Matrix::mean_row).collect::<Result<Vec<_>>>()?;
            Matrix::from_rows(&rows, batch.dim())
        };
        Ok(Pooled {
            v: pool(&batch.vision)?,
            a: pool(&batch.audio)?,
        })
    }
}

/// Row-normalized copy of `u` and the row norms.
fn normalized(u: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = u.clone();
    let mut norms = Vec::with_capacity(u.rows());
    for i in 0..u.rows() {
        let n = norm(u.row(i));
        if !(n > EPS_NORM) {
            return Err(OmniError::DegenerateNorm { norm: n });
        }
        out.row_mut(i).iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls `∂L/∂v` back to `∂L/∂W` for `v = normalize(W m)`.
fn head_grad(pooled: &Matrix, unit: &Matrix, norms: &[f64], d_unit: &Matrix) -> Matrix {
    let mut d_w = Matrix::zeros(unit.cols(), pooled.cols());
    for (i, n) in norms.iter().enumerate() {
        let v = unit.row(i);
        let dv = d_unit.row(i);
        let radial = dot(v, dv);
        for (r, (dvr, vr)) in dv.iter().zip(v).enumerate() {
            let du = (dvr - radial * vr) / n;
            if du == 0.0 {
                continue;
            }
            for (dst, m) in d_w.row_mut(r).iter_mut().zip(pooled.row(i)) {
                *dst += du * m;
            }
        }
    }
    d_w
}

fn loss_and_grad(heads: &LinearHeads, pooled: &Pooled) -> Result<(f64, LinearHeads)> {
    let (v, nv) = normalized(&pooled.v.matmul_transposed(&heads.w_v)?)?;
    let (a, na) = normalized(&pooled.a.matmul_transposed(&heads.w_a)?)?;
    let g = contrastive_loss_and_grad(&v, &a, heads.tau())?;
    Ok((
        g.loss,
        LinearHeads {
            w_v: head_grad(&pooled.v, &v, &nv, &g.d_v),
            w_a: head_grad(&pooled.a, &a, &na, &g.d_a),
            log_tau: g.d_log_tau,
        },
    ))
}

fn loss_only(heads: &LinearHeads, pooled: &Pooled) -> Result<f64> {
    let (v, _) = normalized(&pooled.v.matmul_transposed(&heads.w_v)?)?;
    let (a, _) = normalized(&pooled.a.matmul_transposed(&heads.w_a)?)?;
    contrastive_loss(&v, &a, heads.tau())
}

/// Top-1 retrieval `(vision→audio, audio→vision)` of `heads` on `batch`.
pub fn evaluate_retrieval(heads: &LinearHeads, batch: &OmniBatch) -> Result<(f64, f64)> {
    let e = heads.embed(batch)?;
    retrieval_accuracy(&e.v, &e.a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignCurvePoint {
    /// Updates applied so far.
    pub epoch: usize,
    pub loss: f64,
    pub tau: f64,
    pub train_v2a: f64,
    pub train_a2v: f64,
    pub eval_v2a: f64,
    pub eval_a2v: f64,
}

impl AlignCurvePoint {
    /// The weaker of the two held-out directions.
    pub fn eval_min(&self) -> f64 {
        self.eval_v2a.min(self.eval_a2v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAlignment {
    pub heads: LinearHeads,
    /// `epochs + 1` points; point `e` describes the heads after `e` updates.
    pub curve: Vec<AlignCurvePoint>,
}

impl TrainedAlignment {
    pub fn first_epoch_reaching(&self, threshold: f64) -> Option<usize> {
        self.curve.iter().find(|p| p.eval_min() >= threshold).map(|p| p.epoch)
    }

    pub fn final_point(&self) -> &AlignCurvePoint {
        self.curve.last().expect("curve always has the initial point")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,tau,train_v2a,train_a2v,eval_v2a,eval_a2v\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.epoch, p.loss, p.tau, p.train_v2a, p.train_a2v, p.eval_v2a, p.eval_a2v
            ));
        }
        out
    }
}

/// Gradient descent on `train` for `cfg.epochs` full-batch steps, tracking
/// retrieval on the held-out `eval` batch.
pub fn train_alignment(train: &OmniBatch, eval: &OmniBatch, cfg: &AlignConfig) -> Result<TrainedAlignment> {
    cfg.validate()?;
    if train.k() < 2 {
        return Err(OmniError::config("k", "training batch needs at least two pairs"));
    }
    let pooled = Pooled::new(train)?;
    let mut heads = LinearHeads::init(train.dim(), cfg.init_scale, cfg.tau, cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let checker = SeededRng::new(cfg.seed);

    for epoch in 0..=cfg.epochs {
        let (loss, grad) = loss_and_grad(&heads, &pooled)?;
        if !loss.is_finite() {
            return Err(OmniError::Diverged { step: epoch, loss });
        }
        let (train_v2a, train_a2v) = evaluate_retrieval(&heads, train)?;
        let (eval_v2a, eval_a2v) = evaluate_retrieval(&heads, eval)?;
        curve.push(AlignCurvePoint {
            epoch,
            loss,
            tau: heads.tau(),
            train_v2a,
            train_a2v,
            eval_v2a,
            eval_a2v,
        });
        if epoch == cfg.epochs {
            break;
        }
        if cfg.check_gradients {
            spot_check(&heads, &pooled, &grad, &mut checker.stream(epoch as u64), epoch)?;
        }

        let mut p = heads.params();
        let g = grad.params();
        let trainable = if cfg.learn_tau { p.len() } else { p.len() - 1 };
        for (x, d) in p.iter_mut().zip(&g).take(trainable) {
            *x -= cfg.learning_rate * d;
        }
        heads.set_params(&p);
    }
    Ok(TrainedAlignment { heads, curve })
}

/// Compares the analytic gradient with central differences on a random
/// subset of coordinates.
fn spot_check(heads: &LinearHeads, pooled: &Pooled, grad: &LinearHeads, rng: &mut SeededRng, step: usize) -> Result<()> {
    let base = heads.params();
    let analytic_all = grad.params();
    // distinct, or the probe at a repeated coordinate is overwritten
    let coords = rng.distinct_below(base.len(), GRAD_CHECK_COORDS);
    let start: Vec<f64> = coords.iter().map(|&i| base[i]).collect();
    let f = |x: &[f64]| {
        let mut p = base.clone();
        for (&i, v) in coords.iter().zip(x) {
            p[i] = *v;
        }
        let mut h = heads.clone();
        h.set_params(&p);
        loss_only(&h, pooled).unwrap_or(f64::NAN)
    };
    let numeric = finite_diff_grad(f, &start, GRAD_CHECK_STEP)?;
    let analytic: Vec<f64> = coords.iter().map(|&i| analytic_all[i]).collect();
    // below this scale central differences are dominated by rounding
    if norm(&analytic).max(norm(&numeric)) < 1e-7 {
        return Ok(());
    }
    let rel_error = relative_error(&numeric, &analytic);
    if rel_error > GRAD_CHECK_TOLERANCE {
        return Err(OmniError::GradientCheck { step, rel_error });
    }
    Ok(())
}
