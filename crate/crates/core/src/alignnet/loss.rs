use crate::error::{OmniError, Result};
use crate::numerics::{log_sum_exp, softmax, Matrix};

fn check_pair(v: &Matrix, a: &Matrix, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(OmniError::config("tau", "temperature must be positive and finite"));
    }
    if v.is_empty() {
        return Err(OmniError::EmptyInput);
    }
    if v.shape() != a.shape() {
        return Err(OmniError::DimensionMismatch {
            expected: v.rows() * v.cols(),
            actual: a.rows() * a.cols(),
        });
    }
    Ok(())
}

/// `s_ij = V_i · A_j / tau`
pub fn similarity(v: &Matrix, a: &Matrix, tau: f64) -> Result<Matrix> {
    check_pair(v, a, tau)?;
    let mut s = v.matmul_transposed(a)?;
    for x in s.data_mut() {
        *x /= tau;
    }
    Ok(s)
}

/// Symmetric cross-entropy over the similarity matrix:
/// the mean of the vision→audio (row-wise) and audio→vision (column-wise)
/// losses, each averaged over the batch.
pub fn contrastive_loss(v: &Matrix, a: &Matrix, tau: f64) -> Result<f64> {
    let s = similarity(v, a, tau)?;
    let k = s.rows();
    let st = s.transpose();
    let mut v2a = 0.0;
    let mut a2v = 0.0;
    for i in 0..k {
        v2a += log_sum_exp(s.row(i))? - s.get(i, i);
        a2v += log_sum_exp(st.row(i))? - s.get(i, i);
    }
    Ok(0.5 * (v2a + a2v) / k as f64)
}

/// Loss together with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub d_v: Matrix,
    pub d_a: Matrix,
    /// Derivative with respect to `ln tau`.
    pub d_log_tau: f64,
}

/// Analytic gradients of [`contrastive_loss`] with respect to the rows of
/// `V` and `A` (treated as free variables) and to `ln tau`.
///
/// With `P` the row-softmax and `Q` the column-softmax of `s`,
/// `∂L/∂s = (P + Q − 2I) / 2K`, `∂L/∂V = (∂L/∂s) A / tau`,
/// `∂L/∂A = (∂L/∂s)ᵀ V / tau`.
pub fn contrastive_loss_and_grad(v: &Matrix, a: &Matrix, tau: f64) -> Result<ContrastiveGrad> {
    let s = similarity(v, a, tau)?;
    let k = s.rows();
    let st = s.transpose();
    let norm = 1.0 / (2.0 * k as f64);

    let mut ds = Matrix::zeros(k, k);
    let mut loss = 0.0;
    for i in 0..k {
        let p = softmax(s.row(i))?;
        for j in 0..k {
            ds.set(i, j, ds.get(i, j) + norm * p[j]);
        }
        let q = softmax(st.row(i))?;
        for j in 0..k {
            // column i of s, entry (j, i)
            ds.set(j, i, ds.get(j, i) + norm * q[j]);
        }
        ds.set(i, i, ds.get(i, i) - 2.0 * norm);
        loss += log_sum_exp(s.row(i))? + log_sum_exp(st.row(i))? - 2.0 * s.get(i, i);
    }
    loss *= norm;

    let mut d_v = ds.matmul(a)?;
    let mut d_a = ds.transpose().matmul(v)?;
    for x in d_v.data_mut().iter_mut().chain(d_a.data_mut().iter_mut()) {
        *x /= tau;
    }
    let d_log_tau = -ds.data().iter().zip(s.data()).map(|(g, x)| g * x).sum::<f64>();
    Ok(ContrastiveGrad {
        loss,
        d_v,
        d_a,
        d_log_tau,
    })
}

pub fn contrastive_loss_grad(v: &Matrix, a: &Matrix, tau: f64) -> Result<(Matrix, Matrix)> {
    let g = contrastive_loss_and_grad(v, a, tau)?;
    Ok((g.d_v, g.d_a))
}

fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in xs.enumerate() {
        // strict comparison keeps the lowest index on ties
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    best
}

/// Top-1 cross-modal retrieval accuracy `(vision→audio, audio→vision)`.
pub fn retrieval_accuracy(v: &Matrix, a: &Matrix) -> Result<(f64, f64)> {
    let s = similarity(v, a, 1.0)?;
    let k = s.rows();
    let mut v2a = 0usize;
    let mut a2v = 0usize;
    for i in 0..k {
        if argmax(s.row(i).iter().copied()) == i {
            v2a += 1;
        }
        if argmax((0..k).map(|j| s.get(j, i))) == i {
            a2v += 1;
        }
    }
    Ok((v2a as f64 / k as f64, a2v as f64 / k as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, l2_normalize, relative_error, SeededRng};
    use approx::assert_abs_diff_eq;

    fn unit_rows(k: usize, c: usize, rng: &mut SeededRng) -> Matrix {
        let rows: Vec<_> = (0..k).map(|_| l2_normalize(&rng.gaussian_vec(c, 1.0)).unwrap()).collect();
        Matrix::from_rows(&rows, c).unwrap()
    }

    fn e(c: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; c];
        v[i] = 1.0;
        v
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let mut rng = SeededRng::new(1);
        let v = unit_rows(1, 5, &mut rng);
        let a = unit_rows(1, 5, &mut rng);
        assert_eq!(contrastive_loss(&v, &a, 1.0).unwrap(), 0.0);
        let (dv, da) = contrastive_loss_grad(&v, &a, 0.3).unwrap();
        assert!(dv.data().iter().chain(da.data()).all(|x| *x == 0.0));
    }

    #[test]
    fn closed_forms_for_two_pairs() {
        let v = Matrix::from_rows(&[e(2, 0), e(2, 1)], 2).unwrap();
        let l = contrastive_loss(&v, &v, 1.0).unwrap();
        assert_abs_diff_eq!(l, (1.0 + (-1f64).exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.313_261_687_518_222_8, epsilon = 1e-12);

        let swapped = Matrix::from_rows(&[e(2, 1), e(2, 0)], 2).unwrap();
        let l = contrastive_loss(&v, &swapped, 1.0).unwrap();
        assert_abs_diff_eq!(l, (1.0 + 1f64.exp()).ln(), epsilon = 1e-12);
        assert_eq!(retrieval_accuracy(&v, &swapped).unwrap(), (0.0, 0.0));
        assert_eq!(retrieval_accuracy(&v, &v).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn rejects_bad_temperature_and_shapes() {
        let v = Matrix::from_rows(&[e(2, 0)], 2).unwrap();
        assert!(contrastive_loss(&v, &v, 0.0).is_err());
        assert!(contrastive_loss(&v, &v, -1.0).is_err());
        let w = Matrix::from_rows(&[e(3, 0)], 3).unwrap();
        assert!(contrastive_loss(&v, &w, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(17);
        for (k, c, tau) in [(2, 3, 1.0), (4, 8, 1.0), (5, 6, 0.2), (8, 16, 0.07)] {
            let v = unit_rows(k, c, &mut rng);
            let a = unit_rows(k, c, &mut rng);
            let g = contrastive_loss_and_grad(&v, &a, tau).unwrap();
            assert_abs_diff_eq!(g.loss, contrastive_loss(&v, &a, tau).unwrap(), epsilon = 1e-12);

            let fv = |x: &[f64]| contrastive_loss(&Matrix::new(k, c, x.to_vec()).unwrap(), &a, tau).unwrap();
            let nv = finite_diff_grad(fv, v.data(), 1e-6).unwrap();
            assert!(relative_error(&nv, g.d_v.data()) < 1e-5);

            let fa = |x: &[f64]| contrastive_loss(&v, &Matrix::new(k, c, x.to_vec()).unwrap(), tau).unwrap();
            let na = finite_diff_grad(fa, a.data(), 1e-6).unwrap();
            assert!(relative_error(&na, g.d_a.data()) < 1e-5);

            let ft = |x: &[f64]| contrastive_loss(&v, &a, x[0].exp()).unwrap();
            let nt = finite_diff_grad(ft, &[tau.ln()], 1e-6).unwrap();
            assert!((nt[0] - g.d_log_tau).abs() < 1e-6 * nt[0].abs().max(1.0));
        }
    }

    #[test]
    fn near_converged_gradients_are_small() {
        // orthonormal pairs at tau = 0.05 give s_ii = 20, s_ij = 0
        let k = 6;
        let v = Matrix::from_rows(&(0..k).map(|i| e(k, i)).collect::<Vec<_>>(), k).unwrap();
        let (dv, da) = contrastive_loss_grad(&v, &v, 0.05).unwrap();
        let norm = |m: &Matrix| m.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&dv) < 1e-3 * k as f64);
        assert!(norm(&da) < 1e-3 * k as f64);
    }

    #[test]
    fn symmetric_and_permutation_invariant() {
        let mut rng = SeededRng::new(23);
        let v = unit_rows(7, 5, &mut rng);
        let a = unit_rows(7, 5, &mut rng);
        let l = contrastive_loss(&v, &a, 0.5).unwrap();
        assert_abs_diff_eq!(l, contrastive_loss(&a, &v, 0.5).unwrap(), epsilon = 1e-12);
        assert!(l > 0.0);

        let mut perm: Vec<usize> = (0..7).collect();
        rng.shuffle(&mut perm);
        let pv = Matrix::from_rows(&perm.iter().map(|&i| v.row(i)).collect::<Vec<_>>(), 5).unwrap();
        let pa = Matrix::from_rows(&perm.iter().map(|&i| a.row(i)).collect::<Vec<_>>(), 5).unwrap();
        assert_abs_diff_eq!(l, contrastive_loss(&pv, &pa, 0.5).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let v = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]], 2).unwrap();
        // both rows identical: row 1 retrieves index 0
        assert_eq!(retrieval_accuracy(&v, &v).unwrap(), (0.5, 0.5));
    }
}
