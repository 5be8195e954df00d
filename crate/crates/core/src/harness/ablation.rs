//! Temporal co-occurrence retrieval on synthetic clips.
//!
//! A clip holds `events` events. Each event emits one vision and one audio
//! token at (jittered) copies of the event time. Contents are drawn from a
//! few latent classes per clip, so content alone cannot tell two
//! same-class events apart; only timing can.
//!
//! Every variant builds a flat token sequence and hands it to the same
//! fixed reader. For an audio token `a` the reader picks the vision token
//! maximizing `⟨φ(a), φ(v)⟩ + bonus · 1[same segment]`, where a segment is
//! a maximal run of the sequence between audio→vision transitions and `φ`
//! is the variant's feature map. The concatenated baseline has a single
//! segment, so its reader falls back to content.

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::harness::synthetic::{SyntheticPairConfig, SyntheticSource};
use crate::harness::train::{train_alignment, AlignConfig, LinearHeads};
use crate::numerics::{dot, l2_normalize, Matrix, SeededRng, Vector};
use crate::parallel::Execution;
use crate::sequencing::{assemble_sequence, Modality, TimedEmbedding};
use crate::temporal::{Crte, CrteConfig, PairingMode};

const PROJECTION_STREAM: u64 = u64::MAX;
const CONTROL_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub clips: usize,
    pub events: usize,
    /// Distinct contents per clip.
    pub classes: usize,
    pub dim: usize,
    pub latent_dim: usize,
    pub noise_sigma: f64,
    /// Relative perturbation separating the audio projection from the
    /// vision projection.
    pub modality_gap: f64,
    pub clip_duration: f64,
    /// Half-width of the uniform offset between an event and its tokens.
    pub jitter: f64,
    pub t_g: f64,
    pub t_max: f64,
    pub theta: f64,
    pub segment_bonus: f64,
    /// Training pairs for the alignment-head variant.
    pub head_pairs: usize,
    pub head_epochs: usize,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            clips: 1000,
            events: 6,
            classes: 2,
            dim: 32,
            latent_dim: 8,
            noise_sigma: 0.3,
            modality_gap: 0.5,
            clip_duration: 6.0,
            jitter: 0.1,
            t_g: 1.0,
            t_max: 8.0,
            theta: 10.0,
            segment_bonus: 1.0,
            head_pairs: 256,
            head_epochs: 100,
            seeds: vec![0, 1, 2],
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, n) in [
            ("clips", self.clips),
            ("events", self.events),
            ("classes", self.classes),
            ("latent_dim", self.latent_dim),
            ("head_epochs", self.head_epochs),
        ] {
            if n == 0 {
                return Err(OmniError::config(key, "must be >= 1"));
            }
        }
        if self.head_pairs < 2 {
            return Err(OmniError::config("head_pairs", "must be >= 2"));
        }
        if self.latent_dim > self.dim {
            return Err(OmniError::config("latent_dim", "must not exceed dim"));
        }
        for (key, x) in [("noise_sigma", self.noise_sigma), ("modality_gap", self.modality_gap), ("jitter", self.jitter), ("segment_bonus", self.segment_bonus)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(OmniError::config(key, "must be finite and >= 0"));
            }
        }
        for (key, x) in [("clip_duration", self.clip_duration), ("t_g", self.t_g)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(OmniError::config(key, "must be positive and finite"));
            }
        }
        if self.seeds.is_empty() {
            return Err(OmniError::config("seeds", "must not be empty"));
        }
        self.crte().validate()?;
        if self.clip_duration + self.jitter > self.t_max {
            return Err(OmniError::config("t_max", "must cover clip_duration + jitter"));
        }
        Ok(())
    }

    pub fn crte(&self) -> CrteConfig {
        CrteConfig {
            dim: self.dim,
            t_max: self.t_max,
            theta: self.theta,
            pairing_mode: PairingMode::SharedPerPlane,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ConcatBaseline,
    Teg,
    TegCrte,
    TegCrteAlignHead,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::ConcatBaseline, Variant::Teg, Variant::TegCrte, Variant::TegCrteAlignHead];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ConcatBaseline => "concat_baseline",
            Variant::Teg => "teg",
            Variant::TegCrte => "teg_crte",
            Variant::TegCrteAlignHead => "teg_crte_align_head",
        }
    }

    fn grouped(self) -> bool {
        self != Variant::ConcatBaseline
    }

    fn rotary(self) -> bool {
        matches!(self, Variant::TegCrte | Variant::TegCrteAlignHead)
    }
}

/// One clip. Streams are in source order (ascending observed time);
/// `partner[a]` is the vision source index of audio token `a`'s event.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationClip {
    pub vision: Vec<TimedEmbedding>,
    pub audio: Vec<TimedEmbedding>,
    pub partner: Vec<usize>,
    /// Event-derived times, unaffected by the shuffled control.
    pub true_vision_times: Vec<f64>,
    pub true_audio_times: Vec<f64>,
}

impl AblationClip {
    /// Negative control: permutes the timestamps within each modality.
    pub fn with_shuffled_times(&self, rng: &mut SeededRng) -> Self {
        let mut out = self.clone();
        for stream in [&mut out.vision, &mut out.audio] {
            let mut times: Vec<f64> = stream.iter().map(|e| e.t).collect();
            rng.shuffle(&mut times);
            for (e, t) in stream.iter_mut().zip(times) {
                e.t = t;
            }
        }
        out
    }
}

/// Projections shared by every clip of one seed.
#[derive(Debug, Clone)]
pub struct AblationTask {
    cfg: AblationConfig,
    seed: u64,
    p_v: Matrix,
    p_a: Matrix,
}

impl AblationTask {
    pub fn new(cfg: AblationConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(seed).stream(PROJECTION_STREAM);
        let std = (cfg.latent_dim as f64).recip().sqrt();
        let p_v = Matrix::random_gaussian(cfg.dim, cfg.latent_dim, std, &mut rng);
        let gap = Matrix::random_gaussian(cfg.dim, cfg.latent_dim, std * cfg.modality_gap, &mut rng);
        let p_a = Matrix::new(cfg.dim, cfg.latent_dim, p_v.data().iter().zip(gap.data()).map(|(a, b)| a + b).collect())?;
        Ok(AblationTask { cfg, seed, p_v, p_a })
    }

    pub fn config(&self) -> &AblationConfig {
        &self.cfg
    }

    fn token(&self, p: &Matrix, z: &[f64], rng: &mut SeededRng) -> Result<Vector> {
        let mut x = p.matvec(z)?;
        for v in x.iter_mut() {
            *v += self.cfg.noise_sigma * rng.gaussian();
        }
        Ok(x)
    }

    pub fn clip(&self, id: usize) -> Result<AblationClip> {
        let cfg = &self.cfg;
        let mut rng = SeededRng::new(self.seed).stream(id as u64);
        let latents: Vec<Vec<f64>> = (0..cfg.classes).map(|_| rng.gaussian_vec(cfg.latent_dim, 1.0)).collect();
        let mut vision = Vec::with_capacity(cfg.events);
        let mut audio = Vec::with_capacity(cfg.events);
        let jittered = |t: f64, rng: &mut SeededRng| (t + rng.uniform_range(-cfg.jitter, cfg.jitter)).max(0.0);
        for _ in 0..cfg.events {
            let z = &latents[rng.below(cfg.classes)];
            let t = rng.uniform_range(0.0, cfg.clip_duration);
            let tv = jittered(t, &mut rng);
            let ta = jittered(t, &mut rng);
            vision.push((self.token(&self.p_v, z, &mut rng)?, tv));
            audio.push((self.token(&self.p_a, z, &mut rng)?, ta));
        }

        // source order follows observed time within each stream
        let order = |items: &[(Vector, f64)]| {
            let mut idx: Vec<usize> = (0..items.len()).collect();
            idx.sort_by(|&i, &j| items[i].1.total_cmp(&items[j].1));
            idx
        };
        let v_order = order(&vision);
        let a_order = order(&audio);
        let mut v_rank = vec![0; cfg.events];
        for (rank, &event) in v_order.iter().enumerate() {
            v_rank[event] = rank;
        }
        let stream = |items: &[(Vector, f64)], idx: &[usize], m: Modality| -> Result<Vec<TimedEmbedding>> {
            idx.iter()
                .enumerate()
                .map(|(s, &e)| TimedEmbedding::new(items[e].0.clone(), items[e].1, m, s))
                .collect()
        };
        Ok(AblationClip {
            true_vision_times: v_order.iter().map(|&e| vision[e].1).collect(),
            true_audio_times: a_order.iter().map(|&e| audio[e].1).collect(),
            partner: a_order.iter().map(|&e| v_rank[e]).collect(),
            vision: stream(&vision, &v_order, Modality::Vision)?,
            audio: stream(&audio, &a_order, Modality::Audio)?,
        })
    }

    /// Heads trained on single-token pairs from this task's projections.
    pub fn train_heads(&self) -> Result<LinearHeads> {
        let cfg = &self.cfg;
        let pair_cfg = SyntheticPairConfig {
            k: cfg.head_pairs,
            latent_dim: cfg.latent_dim,
            c: cfg.dim,
            n_v: 1,
            n_a: 1,
            noise_sigma: cfg.noise_sigma,
            duration: cfg.clip_duration,
            seed: self.seed,
        };
        let source = SyntheticSource::with_projections(pair_cfg, self.p_v.clone(), self.p_a.clone())?;
        let train = source.sample(cfg.head_pairs, 0)?.batch;
        let eval = source.sample(cfg.head_pairs, 1)?.batch;
        let align = AlignConfig {
            k: cfg.head_pairs,
            epochs: cfg.head_epochs,
            check_gradients: false,
            seed: self.seed,
            ..AlignConfig::default()
        };
        Ok(train_alignment(&train, &eval, &align)?.heads)
    }
}

/// The flat token sequence a variant feeds to the reader.
pub fn build_sequence(variant: Variant, clip: &AblationClip, t_g: f64) -> Result<Vec<TimedEmbedding>> {
    if variant.grouped() {
        Ok(assemble_sequence(clip.vision.clone(), clip.audio.clone(), t_g)?.into_flat())
    } else {
        Ok(clip.vision.iter().chain(&clip.audio).cloned().collect())
    }
}

/// Segment id per position; a new segment starts at each audio→vision
/// transition.
pub fn segments(seq: &[TimedEmbedding]) -> Vec<usize> {
    let mut out = Vec::with_capacity(seq.len());
    let mut current = 0;
    for (i, e) in seq.iter().enumerate() {
        if i > 0 && e.modality == Modality::Vision && seq[i - 1].modality == Modality::Audio {
            current += 1;
        }
        out.push(current);
    }
    out
}

/// Feature map `φ`: optional head, optional rotary time embedding, then
/// l2 normalization.
#[derive(Debug, Clone, Default)]
pub struct Reader {
    pub crte: Option<Crte>,
    pub heads: Option<LinearHeads>,
    pub segment_bonus: f64,
}

impl Reader {
    pub fn features(&self, e: &TimedEmbedding) -> Result<Vector> {
        let x = match (&self.heads, e.modality) {
            (Some(h), Modality::Vision) => h.w_v.matvec(&e.vec)?,
            (Some(h), Modality::Audio) => h.w_a.matvec(&e.vec)?,
            (None, _) => e.vec.clone(),
        };
        let x = match &self.crte {
            Some(c) => c.apply(&x, e.t)?,
            None => x,
        };
        l2_normalize(&x)
    }
}

/// Counts behind the two metrics for one clip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipTally {
    pub hits: usize,
    pub queries: usize,
    pub ordered: usize,
    pub order_pairs: usize,
}

impl std::ops::AddAssign for ClipTally {
    fn add_assign(&mut self, o: Self) {
        self.hits += o.hits;
        self.queries += o.queries;
        self.ordered += o.ordered;
        self.order_pairs += o.order_pairs;
    }
}

impl ClipTally {
    pub fn top1(&self) -> f64 {
        self.hits as f64 / self.queries.max(1) as f64
    }

    pub fn order_accuracy(&self) -> f64 {
        self.ordered as f64 / self.order_pairs.max(1) as f64
    }
}

/// Scores one sequence of `clip` with `reader`.
///
/// Order accuracy counts cross-modal pairs at least `t_g` apart in true
/// time whose sequence order matches their true order.
pub fn score_sequence(seq: &[TimedEmbedding], clip: &AblationClip, reader: &Reader, t_g: f64) -> Result<ClipTally> {
    let nv = clip.vision.len();
    let na = clip.audio.len();
    let seg = segments(seq);
    let mut v_pos = vec![usize::MAX; nv];
    let mut a_pos = vec![usize::MAX; na];
    let mut v_feat = vec![Vector::default(); nv];
    let mut a_feat = vec![Vector::default(); na];
    for (pos, e) in seq.iter().enumerate() {
        let (positions, feats) = match e.modality {
            Modality::Vision => (&mut v_pos, &mut v_feat),
            Modality::Audio => (&mut a_pos, &mut a_feat),
        };
        positions[e.source_index] = pos;
        feats[e.source_index] = reader.features(e)?;
    }
    if v_pos.iter().chain(&a_pos).any(|&p| p == usize::MAX) {
        return Err(OmniError::config("sequence", "does not cover every token of the clip"));
    }

    let mut tally = ClipTally::default();
    for a in 0..na {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for v in 0..nv {
            let bonus = if seg[a_pos[a]] == seg[v_pos[v]] { reader.segment_bonus } else { 0.0 };
            let score = dot(&a_feat[a], &v_feat[v]) + bonus;
            if score > best_score {
                best = v;
                best_score = score;
            }
        }
        tally.queries += 1;
        tally.hits += usize::from(best == clip.partner[a]);

        let ta = clip.true_audio_times[a];
        for (&tv, &vp) in clip.true_vision_times.iter().zip(&v_pos) {
            if (tv - ta).abs() >= t_g {
                tally.order_pairs += 1;
                tally.ordered += usize::from((vp < a_pos[a]) == (tv < ta));
            }
        }
    }
    Ok(tally)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub temporal_retrieval_top1: f64,
    pub order_accuracy: f64,
    /// Standard deviation of the top-1 metric across seeds.
    pub top1_seed_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<VariantRow>,
    /// The same variants on clips with shuffled timestamps.
    pub control_rows: Vec<VariantRow>,
    /// Top-1 of `teg_crte` minus the baseline.
    pub margin: f64,
    pub control_margin: f64,
    /// `max(0.02, 2 · largest seed std)`.
    pub noise_band: f64,
    pub clips: usize,
    pub seeds: Vec<u64>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant.name())
    }
}

/// Tallies per variant for one seed: `(clean, shuffled)`.
pub type SeedTallies = (Vec<ClipTally>, Vec<ClipTally>);

pub fn run_seed(cfg: &AblationConfig, seed: u64, exec: Execution) -> Result<SeedTallies> {
    let task = AblationTask::new(cfg.clone(), seed)?;
    let crte = Crte::new(cfg.crte())?;
    let heads = task.train_heads()?;
    let readers: Vec<Reader> = Variant::ALL
        .iter()
        .map(|&v| Reader {
            crte: v.rotary().then(|| crte.clone()),
            heads: (v == Variant::TegCrteAlignHead).then(|| heads.clone()),
            segment_bonus: cfg.segment_bonus,
        })
        .collect();

    let control_root = SeededRng::new(seed).stream(CONTROL_STREAM);
    let per_clip = exec.try_map(cfg.clips, |id| -> Result<Vec<(ClipTally, ClipTally)>> {
        let clip = task.clip(id)?;
        let shuffled = clip.with_shuffled_times(&mut control_root.stream(id as u64));
        Variant::ALL
            .iter()
            .zip(&readers)
            .map(|(&v, r)| {
                let clean = score_sequence(&build_sequence(v, &clip, cfg.t_g)?, &clip, r, cfg.t_g)?;
                let control = score_sequence(&build_sequence(v, &shuffled, cfg.t_g)?, &shuffled, r, cfg.t_g)?;
                Ok((clean, control))
            })
            .collect()
    })?;

    let mut clean = vec![ClipTally::default(); Variant::ALL.len()];
    let mut control = clean.clone();
    for tallies in per_clip {
        for (i, (c, s)) in tallies.into_iter().enumerate() {
            clean[i] += c;
            control[i] += s;
        }
    }
    Ok((clean, control))
}

pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    run_ablation_with(cfg, Execution::default())
}

pub fn run_ablation_with(cfg: &AblationConfig, exec: Execution) -> Result<AblationReport> {
    cfg.validate()?;
    let runs = cfg.seeds.iter().map(|&s| run_seed(cfg, s, exec)).collect::<Result<Vec<_>>>()?;

    let rows_for = |pick: fn(&SeedTallies) -> &Vec<ClipTally>| -> Vec<VariantRow> {
        Variant::ALL
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let top1: Vec<f64> = runs.iter().map(|r| pick(r)[i].top1()).collect();
                let order: Vec<f64> = runs.iter().map(|r| pick(r)[i].order_accuracy()).collect();
                VariantRow {
                    variant: v.name().to_string(),
                    temporal_retrieval_top1: mean(&top1),
                    order_accuracy: mean(&order),
                    top1_seed_std: population_std(&top1),
                }
            })
            .collect()
    };
    let rows = rows_for(|r| &r.0);
    let control_rows = rows_for(|r| &r.1);
    let margin = rows[2].temporal_retrieval_top1 - rows[0].temporal_retrieval_top1;
    let control_margin = control_rows[2].temporal_retrieval_top1 - control_rows[0].temporal_retrieval_top1;
    let widest = rows.iter().chain(&control_rows).map(|r| r.top1_seed_std).fold(0.0, f64::max);
    Ok(AblationReport {
        rows,
        control_rows,
        margin,
        control_margin,
        noise_band: (2.0 * widest).max(0.02),
        clips: cfg.clips,
        seeds: cfg.seeds.clone(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AblationConfig {
        AblationConfig {
            clips: 40,
            head_pairs: 64,
            head_epochs: 20,
            seeds: vec![7],
            ..Default::default()
        }
    }

    #[test]
    fn clip_structure() {
        let task = AblationTask::new(small(), 7).unwrap();
        let clip = task.clip(3).unwrap();
        assert_eq!(clip.vision.len(), 6);
        assert!(clip.vision.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(clip.audio.windows(2).all(|w| w[0].t <= w[1].t));
        let mut partners = clip.partner.clone();
        partners.sort_unstable();
        assert_eq!(partners, (0..6).collect::<Vec<_>>());
        for (a, &v) in clip.partner.iter().enumerate() {
            assert!((clip.true_audio_times[a] - clip.true_vision_times[v]).abs() <= 2.0 * 0.1 + 1e-12);
        }
        assert_eq!(task.clip(3).unwrap(), clip);
    }

    #[test]
    fn segments_split_on_audio_to_vision() {
        let e = |m| TimedEmbedding::new(vec![1.0, 0.0], 0.0, m, 0).unwrap();
        let (v, a) = (Modality::Vision, Modality::Audio);
        let seq = [e(v), e(v), e(a), e(v), e(a), e(a), e(v)];
        assert_eq!(segments(&seq), vec![0, 0, 0, 1, 1, 1, 2]);
    }

    #[test]
    fn concat_order_accuracy_matches_direct_count() {
        let task = AblationTask::new(small(), 7).unwrap();
        let clip = task.clip(0).unwrap();
        let seq = build_sequence(Variant::ConcatBaseline, &clip, 1.0).unwrap();
        let t = score_sequence(&seq, &clip, &Reader::default(), 1.0).unwrap();
        // every vision token precedes every audio token
        let mut pairs = 0;
        let mut ordered = 0;
        for tv in &clip.true_vision_times {
            for ta in &clip.true_audio_times {
                if (tv - ta).abs() >= 1.0 {
                    pairs += 1;
                    ordered += usize::from(tv < ta);
                }
            }
        }
        assert_eq!((t.order_pairs, t.ordered), (pairs, ordered));
    }

    #[test]
    fn grouping_orders_every_separated_pair() {
        let task = AblationTask::new(small(), 7).unwrap();
        for id in 0..10 {
            let clip = task.clip(id).unwrap();
            let seq = build_sequence(Variant::Teg, &clip, 1.0).unwrap();
            let t = score_sequence(&seq, &clip, &Reader::default(), 1.0).unwrap();
            assert_eq!(t.ordered, t.order_pairs);
        }
    }

    #[test]
    fn report_shape_and_execution_independence() {
        let cfg = small();
        let a = run_ablation_with(&cfg, Execution::Sequential).unwrap();
        let b = run_ablation_with(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        assert_eq!(a.control_rows.len(), 4);
        let names: Vec<&str> = a.rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["concat_baseline", "teg", "teg_crte", "teg_crte_align_head"]);
    }

    #[test]
    fn t_max_must_cover_clip() {
        let cfg = AblationConfig { t_max: 3.0, ..Default::default() };
        match cfg.validate() {
            Err(OmniError::InvalidConfig { key, .. }) => assert_eq!(key, "t_max"),
            other => panic!("{other:?}"),
        }
    }
}
