//! Temporal embedding grouping.
//!
//! Vision and audio embeddings are bucketed into half-open windows
//! `[k·T_G, (k+1)·T_G)` and emitted group by group, vision block first, then
//! audio block. Empty groups emit nothing and no separator tokens are added.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::numerics::{Matrix, Vector};

pub const DEFAULT_GROUP_DURATION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Audio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEmbedding {
    pub vec: Vector,
    pub t: f64,
    pub modality: Modality,
    /// Position within the modality stream this embedding came from.
    pub source_index: usize,
}

impl TimedEmbedding {
    pub fn new(vec: impl Into<Vector>, t: f64, modality: Modality, source_index: usize) -> Result<Self> {
        if !t.is_finite() {
            return Err(OmniError::NonFiniteTimestamp);
        }
        if t < 0.0 {
            return Err(OmniError::NegativeTimestamp(t));
        }
        Ok(TimedEmbedding {
            vec: vec.into(),
            t,
            modality,
            source_index,
        })
    }
}

/// Splits an `H·W × C` frame into `H·W` vision embeddings sharing timestamp
/// `t`, numbered from `first_source_index` in raster order.
pub fn expand_frame(frame: &Matrix, t: f64, first_source_index: usize) -> Result<Vec<TimedEmbedding>> {
    frame
        .row_iter()
        .enumerate()
        .map(|(i, row)| TimedEmbedding::new(row, t, Modality::Vision, first_source_index + i))
        .collect()
}

fn check_duration(t_g: f64) -> Result<()> {
    if !(t_g > 0.0 && t_g.is_finite()) {
        return Err(OmniError::config("t_g", "group duration must be positive and finite"));
    }
    Ok(())
}

/// Bucket index of timestamp `t`.
pub fn group_index(t: f64, t_g: f64) -> u64 {
    (t / t_g).floor() as u64
}

/// Buckets `items` by `⌊t / T_G⌋`, preserving input order inside a bucket.
pub fn assign_groups(items: &[TimedEmbedding], t_g: f64) -> Result<BTreeMap<u64, Vec<&TimedEmbedding>>> {
    check_duration(t_g)?;
    let mut groups: BTreeMap<u64, Vec<&TimedEmbedding>> = BTreeMap::new();
    for item in items {
        if !item.t.is_finite() {
            return Err(OmniError::NonFiniteTimestamp);
        }
        if item.t < 0.0 {
            return Err(OmniError::NegativeTimestamp(item.t));
        }
        groups.entry(group_index(item.t, t_g)).or_default().push(item);
    }
    Ok(groups)
}

/// One non-empty bucket; the ranges index into [`GroupedSequence::flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub index: u64,
    pub vision: Range<usize>,
    pub audio: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSequence {
    group_duration: f64,
    groups: Vec<Group>,
    flat: Vec<TimedEmbedding>,
}

impl GroupedSequence {
    pub fn group_duration(&self) -> f64 {
        self.group_duration
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn flat(&self) -> &[TimedEmbedding] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<TimedEmbedding> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn vision_members(&self, group: &Group) -> &[TimedEmbedding] {
        &self.flat[group.vision.clone()]
    }

    pub fn audio_members(&self, group: &Group) -> &[TimedEmbedding] {
        &self.flat[group.audio.clone()]
    }

    /// Group index of every element of `flat`, in order.
    pub fn group_indices(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.flat.len());
        for g in &self.groups {
            out.extend(std::iter::repeat_n(g.index, g.audio.end - g.vision.start));
        }
        out
    }

    /// Flat embeddings stacked into an `N × C` matrix.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let dim = self.flat.first().map_or(0, |e| e.vec.dim());
        let rows: Vec<&[f64]> = self.flat.iter().map(|e| e.vec.as_slice()).collect();
        Matrix::from_rows(&rows, dim)
    }
}

fn sorted_stream(mut items: Vec<TimedEmbedding>, modality: Modality) -> Result<Vec<TimedEmbedding>> {
    for item in &items {
        if item.modality != modality {
            return Err(OmniError::ModalityMismatch(format!(
                "{:?} embedding (source {}) in the {:?} stream",
                item.modality, item.source_index, modality
            )));
        }
        if !item.t.is_finite() {
            return Err(OmniError::NonFiniteTimestamp);
        }
        if item.t < 0.0 {
            return Err(OmniError::NegativeTimestamp(item.t));
        }
    }
    items.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.source_index.cmp(&b.source_index)));
    Ok(items)
}

/// Builds the interleaved sequence `[G¹_v, G¹_a, G²_v, G²_a, …]`.
///
/// Each stream is first sorted stably by `(t, source_index)`.
pub fn assemble_sequence(
    vision: Vec<TimedEmbedding>,
    audio: Vec<TimedEmbedding>,
    t_g: f64,
) -> Result<GroupedSequence> {
    check_duration(t_g)?;
    if let Some(first) = vision.first().or(audio.first()) {
        let dim = first.vec.dim();
        if let Some(bad) = vision.iter().chain(&audio).find(|e| e.vec.dim() != dim) {
            return Err(OmniError::DimensionMismatch {
                expected: dim,
                actual: bad.vec.dim(),
            });
        }
    }
    let vision = sorted_stream(vision, Modality::Vision)?;
    let audio = sorted_stream(audio, Modality::Audio)?;

    let mut flat = Vec::with_capacity(vision.len() + audio.len());
    let mut groups = Vec::new();
    let mut vi = vision.into_iter().peekable();
    let mut ai = audio.into_iter().peekable();
    loop {
        let next = match (vi.peek(), ai.peek()) {
            (None, None) => break,
            (Some(v), None) => group_index(v.t, t_g),
            (None, Some(a)) => group_index(a.t, t_g),
            (Some(v), Some(a)) => group_index(v.t, t_g).min(group_index(a.t, t_g)),
        };
        let start = flat.len();
        while let Some(v) = vi.next_if(|v| group_index(v.t, t_g) == next) {
            flat.push(v);
        }
        let mid = flat.len();
        while let Some(a) = ai.next_if(|a| group_index(a.t, t_g) == next) {
            flat.push(a);
        }
        groups.push(Group {
            index: next,
            vision: start..mid,
            audio: mid..flat.len(),
        });
    }
    Ok(GroupedSequence {
        group_duration: t_g,
        groups,
        flat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(t: f64, m: Modality, i: usize) -> TimedEmbedding {
        TimedEmbedding::new(vec![t, i as f64], t, m, i).unwrap()
    }

    fn stream(ts: &[f64], m: Modality) -> Vec<TimedEmbedding> {
        ts.iter().enumerate().map(|(i, t)| emb(*t, m, i)).collect()
    }

    fn labels(seq: &GroupedSequence) -> Vec<(Modality, usize)> {
        seq.flat().iter().map(|e| (e.modality, e.source_index)).collect()
    }

    #[test]
    fn four_timestamps_two_groups() {
        let items = stream(&[1.0, 2.0, 13.0, 14.0], Modality::Vision);
        let g = assign_groups(&items, 10.0).unwrap();
        let ts: Vec<(u64, Vec<f64>)> = g.iter().map(|(k, v)| (*k, v.iter().map(|e| e.t).collect())).collect();
        assert_eq!(ts, vec![(0, vec![1.0, 2.0]), (1, vec![13.0, 14.0])]);
    }

    #[test]
    fn boundary_is_half_open() {
        let items = stream(&[0.0, 9.999, 10.0], Modality::Audio);
        let g = assign_groups(&items, 10.0).unwrap();
        assert_eq!(g[&0].len(), 2);
        assert_eq!(g[&1][0].t, 10.0);
        assert_eq!(assign_groups(&stream(&[1.0, 2.0, 3.0], Modality::Audio), 10.0).unwrap().len(), 1);
        assert!(assign_groups(&items, 0.0).is_err());
        assert!(assign_groups(&items, -1.0).is_err());
    }

    #[test]
    fn four_plus_four_interleaving() {
        use Modality::*;
        let v = stream(&[1.0, 2.0, 13.0, 14.0], Vision);
        let a = stream(&[1.5, 3.0, 12.0, 15.0], Audio);
        let seq = assemble_sequence(v, a, 10.0).unwrap();
        assert_eq!(
            labels(&seq),
            vec![(Vision, 0), (Vision, 1), (Audio, 0), (Audio, 1), (Vision, 2), (Vision, 3), (Audio, 2), (Audio, 3)]
        );
        assert_eq!(seq.groups().len(), 2);
        assert_eq!(seq.group_indices(), vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn three_vision_two_audio() {
        let v = stream(&[0.1, 5.0, 9.0], Modality::Vision);
        let a = stream(&[4.0, 12.0], Modality::Audio);
        let seq = assemble_sequence(v, a, 10.0).unwrap();
        let ts: Vec<f64> = seq.flat().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![0.1, 5.0, 9.0, 4.0, 12.0]);
        let g = &seq.groups()[1];
        assert_eq!(g.index, 1);
        assert!(g.vision.is_empty());
        assert_eq!(seq.audio_members(g).len(), 1);
    }

    #[test]
    fn empty_audio_keeps_vision_order() {
        let v = stream(&[3.0, 0.5, 1.5], Modality::Vision);
        let seq = assemble_sequence(v, vec![], 1.0).unwrap();
        let ts: Vec<f64> = seq.flat().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![0.5, 1.5, 3.0]);
        assert!(assemble_sequence(vec![], vec![], 1.0).unwrap().is_empty());
    }

    #[test]
    fn empty_groups_emit_nothing() {
        let v = stream(&[0.5, 50.5], Modality::Vision);
        let seq = assemble_sequence(v, vec![], 1.0).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.groups().iter().map(|g| g.index).collect::<Vec<_>>(), vec![0, 50]);
    }

    #[test]
    fn frames_stay_contiguous() {
        let frame = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], 2).unwrap();
        let mut v = expand_frame(&frame, 0.4, 0).unwrap();
        v.extend(expand_frame(&frame, 0.2, 3).unwrap());
        let a = stream(&[0.3], Modality::Audio);
        let seq = assemble_sequence(v, a, 1.0).unwrap();
        let idx: Vec<usize> = seq.flat().iter().map(|e| e.source_index).collect();
        assert_eq!(idx, vec![3, 4, 5, 0, 1, 2, 0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = vec![TimedEmbedding::new(vec![1.0, 2.0], 0.0, Modality::Vision, 0).unwrap()];
        let a = vec![TimedEmbedding::new(vec![1.0], 0.0, Modality::Audio, 0).unwrap()];
        assert!(matches!(assemble_sequence(v.clone(), a, 1.0), Err(OmniError::DimensionMismatch { .. })));
        let wrong = vec![TimedEmbedding::new(vec![1.0, 2.0], 0.0, Modality::Vision, 0).unwrap()];
        assert!(matches!(assemble_sequence(v, wrong, 1.0), Err(OmniError::ModalityMismatch(_))));
        assert!(TimedEmbedding::new(vec![1.0], -1.0, Modality::Audio, 0).is_err());
        assert!(TimedEmbedding::new(vec![1.0], f64::NAN, Modality::Audio, 0).is_err());
    }

    #[test]
    fn reassembly_is_idempotent() {
        let v = stream(&[0.2, 0.9, 1.1, 2.5, 2.6], Modality::Vision);
        let a = stream(&[0.1, 1.9, 2.0, 7.0], Modality::Audio);
        let seq = assemble_sequence(v, a, 1.0).unwrap();
        let (rv, ra): (Vec<_>, Vec<_>) = seq.flat().iter().cloned().partition(|e| e.modality == Modality::Vision);
        let again = assemble_sequence(rv, ra, 1.0).unwrap();
        assert_eq!(again.flat(), seq.flat());
        assert_eq!(again.to_matrix().unwrap(), seq.to_matrix().unwrap());
    }
}
