use crate::error::{OmniError, Result};

use super::{norm, Vector};

/// Central-difference gradient of `f` at `x`:
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(OmniError::config("h", "step size must be positive"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vector::zeros(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(OmniError::NonFiniteEvaluation { coordinate: i });
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Normwise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, SeededRng};

    #[test]
    fn square_at_one() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[1.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_and_linear() {
        let g = finite_diff_grad(|_| 3.5, &[0.3, -2.0, 9.0], 1e-5).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));

        let a = [1.5, -2.0, 0.25];
        let g = finite_diff_grad(|x| a.iter().zip(x).map(|(p, q)| p * q).sum(), &[0.1, 0.2, 0.3], 1e-5)
            .unwrap();
        for (gi, ai) in g.iter().zip(a) {
            assert!((gi - ai).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_reports_coordinate() {
        let err = finite_diff_grad(|x| if x[1] > 0.5 { f64::NAN } else { x[0] }, &[0.0, 0.5], 1e-3)
            .unwrap_err();
        assert!(matches!(err, OmniError::NonFiniteEvaluation { coordinate: 1 }));
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(finite_diff_grad(|x| x[0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn quadratic_form_matches_2qx() {
        let mut rng = SeededRng::new(11);
        for n in [1usize, 3, 8, 16] {
            let b = Matrix::random_gaussian(n, n, 1.0, &mut rng);
            let q = b.matmul(&b.transpose()).unwrap(); // symmetric
            let x = rng.gaussian_vec(n, 1.0);
            let f = |v: &[f64]| crate::numerics::dot(v, &q.matvec(v).unwrap());
            let numeric = finite_diff_grad(f, &x, 1e-5).unwrap();
            let analytic = q.matvec(&x).unwrap().scaled(2.0);
            assert!(relative_error(&numeric, &analytic) < 1e-6);
        }
    }
}
