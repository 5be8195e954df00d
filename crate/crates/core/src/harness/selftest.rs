//! Fast invariant checks runnable from the command line.

use serde::Serialize;

use crate::alignnet::{contrastive_loss, contrastive_loss_and_grad};
use crate::compression::{conv1d_downsample, pool_sequence, AudioTokenSeq, DepthwiseKernel, PoolMode};
use crate::grpo::{clipped_term, normalize_advantages};
use crate::harness::io::EmbeddingFile;
use crate::numerics::{finite_diff_grad, l2_normalize, norm, relative_error, Matrix, SeededRng};
use crate::sequencing::{assemble_sequence, Modality, TimedEmbedding};
use crate::temporal::{base_frequencies, rotate_half, Crte, CrteConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

type Check = fn() -> Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn crte_frequencies() -> Result<(), String> {
    let cfg = CrteConfig::default();
    let f = base_frequencies(&cfg).map_err(fail)?;
    let w = f.omega();
    ensure((w[0] - std::f64::consts::TAU / cfg.t_max).abs() < 1e-12, || format!("omega[0] = {}", w[0]))?;
    let r = w[1] / w[0];
    ensure(w.windows(2).all(|p| (p[1] / p[0] - r).abs() < 1e-12), || "ratio not constant".into())
}

fn crte_isometry() -> Result<(), String> {
    let crte = Crte::new(CrteConfig::default()).map_err(fail)?;
    let mut rng = SeededRng::new(1);
    for _ in 0..200 {
        let x = rng.gaussian_vec(32, 1.0);
        let y = rng.gaussian_vec(32, 1.0);
        let (t1, t2, d) = (rng.uniform_range(0.0, 1000.0), rng.uniform_range(0.0, 1000.0), rng.uniform_range(0.0, 1000.0));
        let rx = crte.apply(&x, t1).map_err(fail)?;
        ensure((norm(&rx) - norm(&x)).abs() < 1e-12 * norm(&x).max(1.0), || "norm changed".into())?;
        let before = crte.apply(&y, t2).map_err(fail)?.dot(&rx);
        let after = crte.apply(&y, t2 + d).map_err(fail)?.dot(&crte.apply(&x, t1 + d).map_err(fail)?);
        ensure((before - after).abs() < 1e-9, || format!("shift changed dot by {}", before - after))?;
    }
    let x = rng.gaussian_vec(32, 1.0);
    ensure(crte.apply(&x, 0.0).map_err(fail)?.as_slice() == x.as_slice(), || "not identity at t = 0".into())
}

fn rotate_half_involution() -> Result<(), String> {
    ensure(rotate_half(&[1.0, 2.0, 3.0, 4.0]).map_err(fail)?.as_slice() == [-2.0, 1.0, -4.0, 3.0], || "example".into())?;
    let mut rng = SeededRng::new(2);
    for _ in 0..200 {
        let x = rng.gaussian_vec(16, 1.0);
        let twice = rotate_half(&rotate_half(&x).map_err(fail)?).map_err(fail)?;
        ensure(twice.iter().zip(&x).all(|(a, b)| *a == -b), || "twice != -x".into())?;
    }
    Ok(())
}

fn teg_example() -> Result<(), String> {
    let stream = |m: Modality| -> Result<Vec<TimedEmbedding>, String> {
        [0.0, 0.5, 1.0, 1.5]
            .iter()
            .enumerate()
            .map(|(i, &t)| TimedEmbedding::new(vec![t], t, m, i).map_err(fail))
            .collect()
    };
    let seq = assemble_sequence(stream(Modality::Vision)?, stream(Modality::Audio)?, 1.0).map_err(fail)?;
    let got: Vec<(Modality, usize)> = seq.flat().iter().map(|e| (e.modality, e.source_index)).collect();
    let (v, a) = (Modality::Vision, Modality::Audio);
    let want = [(v, 0), (v, 1), (a, 0), (a, 1), (v, 2), (v, 3), (a, 2), (a, 3)];
    ensure(got == want, || format!("{got:?}"))
}

fn contrastive_closed_forms() -> Result<(), String> {
    let id = Matrix::identity(2);
    let anti = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]], 2).map_err(fail)?;
    let l1 = contrastive_loss(&id, &id, 1.0).map_err(fail)?;
    let l2 = contrastive_loss(&id, &anti, 1.0).map_err(fail)?;
    ensure((l1 - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12, || format!("identity {l1}"))?;
    ensure((l2 - (1.0 + 1.0f64.exp()).ln()).abs() < 1e-12, || format!("antidiagonal {l2}"))?;
    let one = Matrix::from_rows(&[[0.6, 0.8]], 2).map_err(fail)?;
    ensure(contrastive_loss(&one, &one, 0.07).map_err(fail)? == 0.0, || "K = 1 not zero".into())
}

fn contrastive_gradient() -> Result<(), String> {
    let mut rng = SeededRng::new(3);
    let unit = |rng: &mut SeededRng| -> Result<Matrix, String> {
        let rows = (0..4).map(|_| l2_normalize(&rng.gaussian_vec(6, 1.0))).collect::<Result<Vec<_>, _>>().map_err(fail)?;
        Matrix::from_rows(&rows, 6).map_err(fail)
    };
    let v = unit(&mut rng)?;
    let a = unit(&mut rng)?;
    let g = contrastive_loss_and_grad(&v, &a, 0.5).map_err(fail)?;
    let f = |x: &[f64]| contrastive_loss(&Matrix::new(4, 6, x.to_vec()).unwrap(), &a, 0.5).unwrap();
    let numeric = finite_diff_grad(f, v.data(), 1e-6).map_err(fail)?;
    let err = relative_error(&numeric, g.d_v.data());
    ensure(err < 1e-5, || format!("relative error {err:e}"))
}

fn compression_lengths() -> Result<(), String> {
    for n in 1..=65 {
        let seq = AudioTokenSeq::new(Matrix::zeros(n, 2), 25.0).map_err(fail)?;
        let want = n.div_ceil(2);
        ensure(pool_sequence(&seq, PoolMode::Max).len() == want, || format!("max pool at {n}"))?;
        ensure(pool_sequence(&seq, PoolMode::Avg).len() == want, || format!("avg pool at {n}"))?;
        let conv = conv1d_downsample(&seq, &DepthwiseKernel::averaging(2)).map_err(fail)?;
        ensure(conv.len() == want, || format!("conv at {n}"))?;
    }
    Ok(())
}

fn grpo_advantages() -> Result<(), String> {
    let a = normalize_advantages(&[1.0, 2.0, 3.0], 1e-8);
    let s = 1.5f64.sqrt();
    ensure((a[0] + s).abs() < 1e-9 && a[1].abs() < 1e-12 && (a[2] - s).abs() < 1e-9, || format!("{a:?}"))?;
    ensure(normalize_advantages(&[0.5; 4], 1e-8).iter().all(|x| *x == 0.0), || "equal rewards".into())?;
    let c = clipped_term(1.5, 1.0, 0.2).map_err(fail)?;
    ensure((c - 1.2).abs() < 1e-12, || format!("clip {c}"))
}

fn omni_round_trip() -> Result<(), String> {
    let mut rng = SeededRng::new(4);
    let m = Matrix::random_gaussian(10, 8, 1.0, &mut rng);
    let f = EmbeddingFile::from_matrix(&m).map_err(fail)?;
    let back = EmbeddingFile::from_bytes(&f.to_bytes()).map_err(fail)?;
    ensure(back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits()), || "bits differ".into())?;
    let empty = EmbeddingFile::from_bytes(&EmbeddingFile::new(0, 8, vec![]).map_err(fail)?.to_bytes()).map_err(fail)?;
    ensure(empty.count() == 0, || "count = 0".into())
}

pub const CHECKS: [(&str, Check); 9] = [
    ("crte_frequencies", crte_frequencies),
    ("crte_isometry", crte_isometry),
    ("rotate_half_involution", rotate_half_involution),
    ("teg_interleaving", teg_example),
    ("contrastive_closed_forms", contrastive_closed_forms),
    ("contrastive_gradient", contrastive_gradient),
    ("compression_lengths", compression_lengths),
    ("grpo_advantages", grpo_advantages),
    ("omni_round_trip", omni_round_trip),
];

pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let outcome = check();
            CheckResult {
                name,
                passed: outcome.is_ok(),
                detail: outcome.err(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        for r in super::run_all() {
            assert!(r.passed, "{}: {:?}", r.name, r.detail);
        }
    }
}
