//! On-disk formats.
//!
//! Embedding matrices use a small binary container:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OMNI"
//! 4       4     version (u32 LE, = 1)
//! 8       4     count   (u32 LE)
//! 12      4     dim     (u32 LE)
//! 16      4·n   payload, count × dim f32 LE, row-major
//! ```
//!
//! Per-row metadata (sample, modality, timestamp) lives in a JSON sidecar
//! next to the binary file. A dataset directory holds `vision.omni`,
//! `audio.omni`, their sidecars and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignnet::{AlignHeadParams, OmniBatch};
use crate::error::{OmniError, Result};
use crate::harness::train::LinearHeads;
use crate::numerics::Matrix;
use crate::sequencing::Modality;

pub const MAGIC: [u8; 4] = *b"OMNI";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub const VISION_FILE: &str = "vision.omni";
pub const AUDIO_FILE: &str = "audio.omni";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A `count × dim` f32 matrix exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    count: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingFile {
    pub fn new(count: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != count * dim {
            return Err(OmniError::DimensionMismatch {
                expected: count * dim,
                actual: data.len(),
            });
        }
        if u32::try_from(count).is_err() || u32::try_from(dim).is_err() {
            return Err(OmniError::config("count", "does not fit in 32 bits"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(OmniError::config("payload", "non-finite value"));
        }
        Ok(EmbeddingFile { count, dim, data })
    }

    /// Narrows to f32.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::new(m.rows(), m.cols(), m.data().iter().map(|&x| x as f32).collect())
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.data.iter().map(|&x| f64::from(x)).collect();
        Matrix::new(self.count, self.dim, data).expect("shape checked on construction")
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(OmniError::TruncatedPayload {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
        let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
        if magic != MAGIC {
            return Err(OmniError::BadMagic(magic));
        }
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(OmniError::UnsupportedVersion(version));
        }
        let count = word(8) as usize;
        let dim = word(12) as usize;
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| OmniError::config("count", "payload size overflows"))?;
        if bytes.len() < expected {
            return Err(OmniError::TruncatedPayload {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(OmniError::TrailingBytes(bytes.len() - expected));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Ok(EmbeddingFile { count, dim, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    EmbeddingFile::from_matrix(m)?.write(path)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    Ok(EmbeddingFile::read(path)?.to_matrix())
}

/// Metadata for one stored row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarEntry {
    pub sample: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_index: Option<u64>,
    pub modality: Modality,
    pub source_index: usize,
    pub t: f64,
}

/// `vision.omni` → `vision.json`
pub fn sidecar_path(binary: &Path) -> PathBuf {
    binary.with_extension("json")
}

pub fn write_sidecar(path: impl AsRef<Path>, entries: &[SidecarEntry]) -> Result<()> {
    Ok(fs::write(path, serde_json::to_vec_pretty(entries)?)?)
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<SidecarEntry>> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Paired sequences with per-row timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedBatch {
    pub batch: OmniBatch,
    pub vision_times: Vec<Vec<f64>>,
    pub audio_times: Vec<Vec<f64>>,
}

impl TimedBatch {
    pub fn new(batch: OmniBatch, vision_times: Vec<Vec<f64>>, audio_times: Vec<Vec<f64>>) -> Result<Self> {
        batch.validate()?;
        for (seqs, times) in [(&batch.vision, &vision_times), (&batch.audio, &audio_times)] {
            if times.len() != seqs.len() {
                return Err(OmniError::DimensionMismatch {
                    expected: seqs.len(),
                    actual: times.len(),
                });
            }
            for (m, t) in seqs.iter().zip(times) {
                if m.rows() != t.len() {
                    return Err(OmniError::DimensionMismatch {
                        expected: m.rows(),
                        actual: t.len(),
                    });
                }
            }
        }
        Ok(TimedBatch {
            batch,
            vision_times,
            audio_times,
        })
    }
}

/// Stacks per-sample sequences into one matrix plus sidecar entries.
pub fn stack_stream(seqs: &[Matrix], times: &[Vec<f64>], modality: Modality, dim: usize) -> Result<(Matrix, Vec<SidecarEntry>)> {
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut entries = Vec::new();
    for (sample, (m, ts)) in seqs.iter().zip(times).enumerate() {
        for (source_index, (row, &t)) in m.row_iter().zip(ts).enumerate() {
            rows.push(row);
            entries.push(SidecarEntry {
                sample,
                group_index: None,
                modality,
                source_index,
                t,
            });
        }
    }
    Ok((Matrix::from_rows(&rows, dim)?, entries))
}

/// Inverse of [`stack_stream`]: rows must be grouped by ascending sample
/// index with every sample in `0..k` present.
pub fn split_stream(m: &Matrix, entries: &[SidecarEntry]) -> Result<(Vec<Matrix>, Vec<Vec<f64>>)> {
    if entries.len() != m.rows() {
        return Err(OmniError::Sidecar(format!("{} entries for {} rows", entries.len(), m.rows())));
    }
    let mut seqs: Vec<Vec<&[f64]>> = Vec::new();
    let mut times: Vec<Vec<f64>> = Vec::new();
    for (row, e) in m.row_iter().zip(entries) {
        if e.sample == seqs.len() {
            seqs.push(Vec::new());
            times.push(Vec::new());
        } else if e.sample + 1 != seqs.len() {
            return Err(OmniError::Sidecar(format!("sample {} out of order", e.sample)));
        }
        seqs.last_mut().expect("pushed above").push(row);
        times.last_mut().expect("pushed above").push(e.t);
    }
    let seqs = seqs
        .iter()
        .map(|rows| Matrix::from_rows(rows, m.cols()))
        .collect::<Result<Vec<_>>>()?;
    Ok((seqs, times))
}

/// Writes `vision.omni`, `audio.omni`, their sidecars and `meta.json`.
pub fn save_dataset(dir: impl AsRef<Path>, data: &TimedBatch, meta: &serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let dim = data.batch.dim();
    for (file, seqs, times, modality) in [
        (VISION_FILE, &data.batch.vision, &data.vision_times, Modality::Vision),
        (AUDIO_FILE, &data.batch.audio, &data.audio_times, Modality::Audio),
    ] {
        let (m, entries) = stack_stream(seqs, times, modality, dim)?;
        let path = dir.join(file);
        write_matrix(&path, &m)?;
        write_sidecar(sidecar_path(&path), &entries)?;
    }
    fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TimedBatch> {
    let dir = dir.as_ref();
    let load = |file: &str| -> Result<(Vec<Matrix>, Vec<Vec<f64>>)> {
        let path = dir.join(file);
        split_stream(&read_matrix(&path)?, &read_sidecar(sidecar_path(&path))?)
    };
    let (vision, vision_times) = load(VISION_FILE)?;
    let (audio, audio_times) = load(AUDIO_FILE)?;
    TimedBatch::new(OmniBatch::new(vision, audio)?, vision_times, audio_times)
}

pub fn load_meta(dir: impl AsRef<Path>) -> Result<serde_json::Value> {
    Ok(serde_json::from_slice(&fs::read(dir.as_ref().join(META_FILE))?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Index of a saved parameter set; each tensor is `<name>.omni`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: String,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

const LINEAR_HEADS_KIND: &str = "linear_heads";
const ALIGN_HEAD_KIND: &str = "align_head";

fn save_tensors(dir: &Path, manifest: &Manifest, tensors: &[(String, Matrix)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, m) in tensors {
        write_matrix(dir.join(format!("{name}.omni")), m)?;
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

fn load_tensors(dir: &Path, kind: &str) -> Result<(Manifest, Vec<(String, Matrix)>)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.kind != kind {
        return Err(OmniError::config("kind", format!("expected {kind}, found {}", manifest.kind)));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let m = read_matrix(dir.join(format!("{}.omni", entry.name)))?;
        if m.shape() != (entry.rows, entry.cols) {
            return Err(OmniError::DimensionMismatch {
                expected: entry.rows * entry.cols,
                actual: m.rows() * m.cols(),
            });
        }
        tensors.push((entry.name.clone(), m));
    }
    Ok((manifest, tensors))
}

fn entries(tensors: &[(String, Matrix)]) -> Vec<TensorEntry> {
    tensors
        .iter()
        .map(|(name, m)| TensorEntry {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
        })
        .collect()
}

/// Stores trained heads; weights are narrowed to f32.
pub fn save_heads(dir: impl AsRef<Path>, heads: &LinearHeads) -> Result<()> {
    let tensors = vec![("w_v".to_string(), heads.w_v.clone()), ("w_a".to_string(), heads.w_a.clone())];
    let manifest = Manifest {
        kind: LINEAR_HEADS_KIND.into(),
        tau: heads.tau(),
        seed: None,
        init_scale: None,
        tensors: entries(&tensors),
    };
    save_tensors(dir.as_ref(), &manifest, &tensors)
}

pub fn load_heads(dir: impl AsRef<Path>) -> Result<LinearHeads> {
    let (manifest, tensors) = load_tensors(dir.as_ref(), LINEAR_HEADS_KIND)?;
    let mut w_v = None;
    let mut w_a = None;
    for (name, m) in tensors {
        match name.as_str() {
            "w_v" => w_v = Some(m),
            "w_a" => w_a = Some(m),
            other => return Err(OmniError::config("tensors", format!("unexpected tensor {other}"))),
        }
    }
    let missing = |n: &str| OmniError::config("tensors", format!("missing {n}"));
    let heads = LinearHeads {
        w_v: w_v.ok_or_else(|| missing("w_v"))?,
        w_a: w_a.ok_or_else(|| missing("w_a"))?,
        log_tau: manifest.tau.ln(),
    };
    if heads.w_v.shape() != heads.w_a.shape() {
        return Err(OmniError::DimensionMismatch {
            expected: heads.w_v.rows() * heads.w_v.cols(),
            actual: heads.w_a.rows() * heads.w_a.cols(),
        });
    }
    Ok(heads)
}

/// Stores the attention head's parameters; weights are narrowed to f32.
pub fn save_align_head(dir: impl AsRef<Path>, params: &AlignHeadParams, tau: f64) -> Result<()> {
    let tensors = params.tensors();
    let manifest = Manifest {
        kind: ALIGN_HEAD_KIND.into(),
        tau,
        seed: Some(params.seed),
        init_scale: Some(params.init_scale),
        tensors: entries(&tensors),
    };
    save_tensors(dir.as_ref(), &manifest, &tensors)
}

pub fn load_align_head(dir: impl AsRef<Path>) -> Result<(AlignHeadParams, f64)> {
    let (manifest, tensors) = load_tensors(dir.as_ref(), ALIGN_HEAD_KIND)?;
    let params = AlignHeadParams::from_tensors(tensors, manifest.init_scale.unwrap_or_default(), manifest.seed.unwrap_or_default())?;
    Ok((params, manifest.tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn header_layout() {
        let f = EmbeddingFile::new(2, 1, vec![1.0, -2.0]).unwrap();
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"OMNI");
        assert_eq!(bytes[4..8], [1, 0, 0, 0]);
        assert_eq!(bytes[8..12], [2, 0, 0, 0]);
        assert_eq!(bytes[12..16], [1, 0, 0, 0]);
        assert_eq!(bytes[16..20], 1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn malformed_inputs_have_distinct_codes() {
        let good = EmbeddingFile::new(2, 3, vec![0.5; 6]).unwrap().to_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        let cases = [
            (bad_magic, "bad_magic"),
            (bad_version, "unsupported_version"),
            (good[..good.len() - 1].to_vec(), "truncated_payload"),
            (good[..10].to_vec(), "truncated_payload"),
            ([good.as_slice(), &[0]].concat(), "trailing_bytes"),
        ];
        for (bytes, code) in cases {
            assert_eq!(EmbeddingFile::from_bytes(&bytes).unwrap_err().code(), code);
        }
        let err = EmbeddingFile::from_bytes(&good[..good.len() - 4]).unwrap_err();
        assert!(err.to_string().starts_with("truncated payload"));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(EmbeddingFile::new(1, 1, vec![f32::NAN]).is_err());
        let big = Matrix::new(1, 1, vec![1e300]).unwrap();
        assert!(EmbeddingFile::from_matrix(&big).is_err());
    }

    #[test]
    fn stack_and_split_invert() {
        let mut rng = SeededRng::new(3);
        let seqs: Vec<Matrix> = (1..4).map(|n| Matrix::random_gaussian(n, 2, 1.0, &mut rng)).collect();
        let times: Vec<Vec<f64>> = seqs.iter().map(|m| (0..m.rows()).map(|i| i as f64).collect()).collect();
        let (m, e) = stack_stream(&seqs, &times, Modality::Audio, 2).unwrap();
        assert_eq!(m.rows(), 6);
        let (back, back_times) = split_stream(&m, &e).unwrap();
        assert_eq!(back, seqs);
        assert_eq!(back_times, times);

        let mut shuffled = e.clone();
        shuffled.swap(0, 5);
        assert!(matches!(split_stream(&m, &shuffled), Err(OmniError::Sidecar(_))));
        assert!(matches!(split_stream(&m, &e[1..]), Err(OmniError::Sidecar(_))));
    }
}
