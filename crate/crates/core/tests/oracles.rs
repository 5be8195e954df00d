//! Independent compositions checked against the library's results.

use nalgebra::DMatrix;
use omni_core::harness::{
    evaluate_retrieval, run_ablation, train_alignment, AblationConfig, AlignConfig, LinearHeads, SyntheticPairConfig,
    SyntheticSource, Variant,
};
use omni_core::harness::ablation::AblationTask;
use omni_core::numerics::{dot, l2_normalize, Matrix};

fn pseudo_inverse(p: &Matrix) -> Matrix {
    let m = DMatrix::from_row_slice(p.rows(), p.cols(), p.data());
    let pinv = m.pseudo_inverse(1e-12).expect("svd converges");
    let rows: Vec<Vec<f64>> = (0..pinv.nrows()).map(|i| pinv.row(i).iter().copied().collect()).collect();
    Matrix::from_rows(&rows, pinv.ncols()).unwrap()
}

#[test]
fn pseudo_inverse_heads_recover_every_pair() {
    for seed in 0..5 {
        let cfg = SyntheticPairConfig {
            noise_sigma: 0.0,
            k: 8,
            seed,
            ..Default::default()
        };
        let source = SyntheticSource::new(cfg.clone()).unwrap();
        let pairs = source.sample(cfg.k, 0).unwrap();
        let heads = LinearHeads {
            w_v: pseudo_inverse(source.vision_projection()),
            w_a: pseudo_inverse(source.audio_projection()),
            log_tau: 0.1f64.ln(),
        };
        // noiseless rows pool to P z, so both heads map pair i back to z_i
        let e = heads.embed(&pairs.batch).unwrap();
        for i in 0..cfg.k {
            let z = l2_normalize(pairs.latents.row(i)).unwrap();
            for got in [e.v.row(i), e.a.row(i)] {
                assert!(got.iter().zip(z.iter()).all(|(a, b)| (a - b).abs() < 1e-9), "seed {seed} pair {i}");
            }
        }
        assert_eq!(evaluate_retrieval(&heads, &pairs.batch).unwrap(), (1.0, 1.0), "seed {seed}");
    }
}

#[test]
fn loss_does_not_rise_over_the_first_ten_epochs() {
    let data = SyntheticPairConfig {
        noise_sigma: 0.1,
        ..Default::default()
    };
    let source = SyntheticSource::new(data.clone()).unwrap();
    let train = source.sample(64, 1).unwrap().batch;
    let eval = source.sample(64, 0).unwrap().batch;
    let cfg = AlignConfig {
        learning_rate: 0.05,
        epochs: 10,
        ..Default::default()
    };
    let run = train_alignment(&train, &eval, &cfg).unwrap();
    let losses: Vec<f64> = run.curve.iter().map(|p| p.loss).collect();
    assert_eq!(losses.len(), 11);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{losses:?}");
    }
    assert!(losses[10] < losses[0]);
}

fn small_ablation() -> AblationConfig {
    AblationConfig {
        clips: 200,
        head_pairs: 64,
        head_epochs: 20,
        seeds: vec![4, 5],
        ..Default::default()
    }
}

#[test]
fn baseline_row_matches_a_direct_composition() {
    let cfg = small_ablation();
    let report = run_ablation(&cfg).unwrap();
    let row = report.row(Variant::ConcatBaseline).unwrap();

    let mut top1 = Vec::new();
    let mut order = Vec::new();
    for &seed in &cfg.seeds {
        let task = AblationTask::new(cfg.clone(), seed).unwrap();
        let (mut hits, mut queries, mut ordered, mut pairs) = (0usize, 0usize, 0usize, 0usize);
        for id in 0..cfg.clips {
            let clip = task.clip(id).unwrap();
            // concatenation puts all vision before all audio in one segment,
            // so the reader reduces to cosine similarity
            let v: Vec<_> = clip.vision.iter().map(|e| l2_normalize(&e.vec).unwrap()).collect();
            for (a, audio) in clip.audio.iter().enumerate() {
                let q = l2_normalize(&audio.vec).unwrap();
                let mut best = 0;
                for j in 1..v.len() {
                    if dot(&q, &v[j]) > dot(&q, &v[best]) {
                        best = j;
                    }
                }
                queries += 1;
                hits += usize::from(best == clip.partner[a]);
                for &tv in &clip.true_vision_times {
                    let ta = clip.true_audio_times[a];
                    if (tv - ta).abs() >= cfg.t_g {
                        pairs += 1;
                        ordered += usize::from(tv < ta);
                    }
                }
            }
        }
        top1.push(hits as f64 / queries as f64);
        order.push(ordered as f64 / pairs as f64);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    assert!((row.temporal_retrieval_top1 - mean(&top1)).abs() < 1e-12);
    assert!((row.order_accuracy - mean(&order)).abs() < 1e-12);
}

#[test]
fn ablation_is_deterministic_and_ordered() {
    let cfg = small_ablation();
    let a = run_ablation(&cfg).unwrap();
    assert_eq!(a, run_ablation(&cfg).unwrap());
    let names: Vec<&str> = a.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, Variant::ALL.map(Variant::name));
    let top1 = |v| a.row(v).unwrap().temporal_retrieval_top1;
    assert!(top1(Variant::Teg) > top1(Variant::ConcatBaseline));
    assert!(a.row(Variant::Teg).unwrap().order_accuracy > a.row(Variant::ConcatBaseline).unwrap().order_accuracy);
}
