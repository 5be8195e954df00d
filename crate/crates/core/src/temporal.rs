//! Constrained rotary time embedding.
//!
//! Absolute timestamps are injected by rotating pairs of embedding
//! dimensions. Base frequencies form a geometric progression that starts at
//! `2π / t_max`, so the slowest plane completes at most one turn over the
//! horizon:
//!
//! ```text
//! ω_i = 2π / (t_max · θ^(i / C))        i = 0..C
//! Ω_i = ω_i · t
//! crte(x, t) = x ⊙ cos Ω + rotate_half(x) ⊙ sin Ω
//! ```
//!
//! With [`PairingMode::SharedPerPlane`] both dimensions of a plane use the
//! frequency of its even member, which makes every plane an exact rotation.
//! [`PairingMode::PerDimension`] keeps a distinct frequency per dimension.

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::numerics::{Matrix, SeededRng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    #[serde(rename = "paper_per_dim")]
    PerDimension,
    #[default]
    SharedPerPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrteConfig {
    pub dim: usize,
    pub t_max: f64,
    pub theta: f64,
    pub pairing_mode: PairingMode,
}

impl Default for CrteConfig {
    fn default() -> Self {
        CrteConfig {
            dim: 32,
            t_max: 3600.0,
            theta: 10_000.0,
            pairing_mode: PairingMode::SharedPerPlane,
        }
    }
}

impl CrteConfig {
    pub fn new(dim: usize, t_max: f64, theta: f64, pairing_mode: PairingMode) -> Result<Self> {
        let cfg = CrteConfig {
            dim,
            t_max,
            theta,
            pairing_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(OmniError::config("dim", "must be a positive even integer"));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(OmniError::config("t_max", "must be positive and finite"));
        }
        if !(self.theta >= 1.0 && self.theta.is_finite()) {
            return Err(OmniError::config("theta", "must be finite and >= 1"));
        }
        Ok(())
    }
}

/// Per-dimension base frequencies in radians per second.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    omega: Vector,
}

impl FrequencyTable {
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }
}

pub fn base_frequencies(cfg: &CrteConfig) -> Result<FrequencyTable> {
    cfg.validate()?;
    let c = cfg.dim as f64;
    let omega = (0..cfg.dim)
        .map(|i| std::f64::consts::TAU / (cfg.t_max * cfg.theta.powf(i as f64 / c)))
        .collect();
    Ok(FrequencyTable { omega })
}

/// Rotation angles `Ω_i = ω_i · t`.
pub fn modulate(freqs: &FrequencyTable, t: f64) -> Result<Vector> {
    if t.is_nan() {
        return Err(OmniError::NonFiniteTimestamp);
    }
    if t < 0.0 {
        return Err(OmniError::NegativeTimestamp(t));
    }
    Ok(freqs.omega.iter().map(|w| w * t).collect())
}

/// `[-x2, x1, -x4, x3, …]` (1-based), a 90° turn of every plane.
pub fn rotate_half(x: &[f64]) -> Result<Vector> {
    if !x.len().is_multiple_of(2) {
        return Err(OmniError::OddDimension(x.len()));
    }
    let mut out = Vector::zeros(x.len());
    for (dst, src) in out.chunks_exact_mut(2).zip(x.chunks_exact(2)) {
        dst[0] = -src[1];
        dst[1] = src[0];
    }
    Ok(out)
}

/// Precomputed rotary time embedding for one configuration.
#[derive(Debug, Clone)]
pub struct Crte {
    cfg: CrteConfig,
    freqs: FrequencyTable,
}

impl Crte {
    pub fn new(cfg: CrteConfig) -> Result<Self> {
        let freqs = base_frequencies(&cfg)?;
        Ok(Crte { cfg, freqs })
    }

    pub fn config(&self) -> &CrteConfig {
        &self.cfg
    }

    pub fn frequencies(&self) -> &FrequencyTable {
        &self.freqs
    }

    /// Angles actually applied at time `t`, after the pairing rule.
    pub fn angles(&self, t: f64) -> Result<Vector> {
        let mut omega_t = modulate(&self.freqs, t)?;
        if t > self.cfg.t_max {
            log::warn!(
                "timestamp {t} exceeds t_max {}; the first plane wraps past a full turn",
                self.cfg.t_max
            );
        }
        if self.cfg.pairing_mode == PairingMode::SharedPerPlane {
            for pair in omega_t.chunks_exact_mut(2) {
                pair[1] = pair[0];
            }
        }
        Ok(omega_t)
    }

    pub fn apply(&self, x: &[f64], t: f64) -> Result<Vector> {
        if x.len() != self.cfg.dim {
            return Err(OmniError::DimensionMismatch {
                expected: self.cfg.dim,
                actual: x.len(),
            });
        }
        let angles = self.angles(t)?;
        let rotated = rotate_half(x)?;
        Ok(x.iter()
            .zip(rotated.iter())
            .zip(angles.iter())
            .map(|((xi, ri), a)| xi * a.cos() + ri * a.sin())
            .collect())
    }

    /// Applies the embedding to every row of `rows`, row `i` at `times[i]`.
    pub fn apply_rows(&self, rows: &Matrix, times: &[f64]) -> Result<Matrix> {
        if rows.rows() != times.len() {
            return Err(OmniError::DimensionMismatch {
                expected: rows.rows(),
                actual: times.len(),
            });
        }
        let out: Vec<Vector> = rows
            .row_iter()
            .zip(times)
            .map(|(r, t)| self.apply(r, *t))
            .collect::<Result<_>>()?;
        Matrix::from_rows(&out, rows.cols())
    }
}

pub fn apply_crte(x: &[f64], t: f64, cfg: &CrteConfig) -> Result<Vector> {
    Crte::new(*cfg)?.apply(x, t)
}

/// Trainable absolute-time table, read with linear interpolation between
/// grid rows spaced `resolution` seconds apart.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedTimeTable {
    resolution: f64,
    t_max: f64,
    entries: Matrix,
}

impl LearnedTimeTable {
    /// `⌈t_max / resolution⌉ + 1` rows of Gaussian noise with std `init_scale`.
    pub fn new(t_max: f64, resolution: f64, dim: usize, init_scale: f64, rng: &mut SeededRng) -> Result<Self> {
        let rows = Self::row_count(t_max, resolution)?;
        Ok(LearnedTimeTable {
            resolution,
            t_max,
            entries: Matrix::random_gaussian(rows, dim, init_scale, rng),
        })
    }

    pub fn from_entries(t_max: f64, resolution: f64, entries: Matrix) -> Result<Self> {
        let rows = Self::row_count(t_max, resolution)?;
        if entries.rows() != rows {
            return Err(OmniError::DimensionMismatch {
                expected: rows,
                actual: entries.rows(),
            });
        }
        Ok(LearnedTimeTable {
            resolution,
            t_max,
            entries,
        })
    }

    fn row_count(t_max: f64, resolution: f64) -> Result<usize> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(OmniError::config("t_max", "must be positive and finite"));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(OmniError::config("resolution", "must be positive and finite"));
        }
        Ok((t_max / resolution).ceil() as usize + 1)
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// Bracketing rows and their interpolation weights for time `t`.
    pub fn bracket(&self, t: f64) -> Result<(usize, usize, f64)> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(OmniError::TimestampOutOfRange { t, t_max: self.t_max });
        }
        let pos = t / self.resolution;
        let last = self.entries.rows() - 1;
        let lo = (pos.floor() as usize).min(last);
        let hi = (lo + 1).min(last);
        let frac = if hi == lo { 0.0 } else { pos - lo as f64 };
        Ok((lo, hi, frac))
    }

    pub fn lookup(&self, t: f64) -> Result<Vector> {
        let (lo, hi, frac) = self.bracket(t)?;
        if frac == 0.0 {
            return Ok(self.entries.row(lo).into());
        }
        Ok(self
            .entries
            .row(lo)
            .iter()
            .zip(self.entries.row(hi))
            .map(|(a, b)| (1.0 - frac) * a + frac * b)
            .collect())
    }

    /// Gradient step on the two rows read by `lookup(t)`, given `dL/d lookup(t)`.
    pub fn descend(&mut self, t: f64, grad: &[f64], learning_rate: f64) -> Result<()> {
        if grad.len() != self.entries.cols() {
            return Err(OmniError::DimensionMismatch {
                expected: self.entries.cols(),
                actual: grad.len(),
            });
        }
        let (lo, hi, frac) = self.bracket(t)?;
        for (w, g) in [(1.0 - frac, lo), (frac, hi)] {
            if w == 0.0 {
                continue;
            }
            for (e, d) in self.entries.row_mut(g).iter_mut().zip(grad) {
                *e -= learning_rate * w * d;
            }
        }
        Ok(())
    }
}

pub fn learned_time_lookup(table: &LearnedTimeTable, t: f64) -> Result<Vector> {
    table.lookup(t)
}
