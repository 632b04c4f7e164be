//! Verification scoring, threshold calibration, distortion metrics,
//! embedding projection and the adaptive-attack suite.

mod attack;
mod distortion;
mod pca;

pub use attack::{attack_transform, deconvolve, lowpass, mel_invert, quantize, resample_down_up, Attack};
pub use distortion::{distortion_metrics, log_spectral_distance, segmental_snr, DistortionMetrics, SEGMENT_MS, SEG_SNR_MAX, SEG_SNR_MIN};
pub use pca::{project_embeddings_2d, Projection};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, Waveform};
use crate::encoders::SpeakerEncoder;
use crate::error::{Error, Result};

/// Verification threshold commonly used with cosine scoring.
pub const DEFAULT_THRESHOLD: f64 = 0.25;

/// Cosine of two embeddings; unit vectors give their dot product.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity of the embeddings of `a` and `b`.
pub fn similarity(encoder: &SpeakerEncoder, a: &Waveform, b: &Waveform) -> Result<f64> {
    Ok(cosine(&encoder.embed(a)?, &encoder.embed(b)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationTrial {
    pub enroll: Vec<Waveform>,
    pub probe: Waveform,
    pub same_speaker: bool,
}

impl VerificationTrial {
    /// Cosine between the probe and the mean enrollment embedding.
    pub fn score(&self, encoder: &SpeakerEncoder) -> Result<f64> {
        if self.enroll.is_empty() {
            return Err(Error::InvalidArgument("trial has no enrollment audio".into()));
        }
        let mut centroid = vec![0.0; encoder.embedding_dim()];
        for w in &self.enroll {
            for (c, e) in centroid.iter_mut().zip(encoder.embed(w)?) {
                *c += e;
            }
        }
        Ok(cosine(&centroid, &encoder.embed(&self.probe)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Fixed,
    EerCalibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub mode: ThresholdMode,
    pub value: f64,
}

impl ThresholdPolicy {
    pub fn fixed(value: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!("threshold {value} outside [-1, 1]")));
        }
        Ok(Self {
            mode: ThresholdMode::Fixed,
            value,
        })
    }

    /// Threshold at the equal-error point of labelled clean scores.
    pub fn eer(same: &[f64], different: &[f64]) -> Result<Self> {
        Ok(Self {
            mode: ThresholdMode::EerCalibrated,
            value: eer_threshold(same, different)?.threshold,
        })
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::Fixed,
            value: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub threshold: f64,
    /// Same-speaker scores below the threshold.
    pub false_reject: f64,
    /// Different-speaker scores at or above the threshold.
    pub false_accept: f64,
}

impl EerPoint {
    pub fn eer(&self) -> f64 {
        0.5 * (self.false_reject + self.false_accept)
    }
}

/// Sweeps every observed score as a threshold and keeps the one where the
/// false-reject and false-accept rates are closest; ties go to the lower
/// threshold.
pub fn eer_threshold(same: &[f64], different: &[f64]) -> Result<EerPoint> {
    if same.is_empty() || different.is_empty() {
        return Err(Error::InvalidArgument("EER needs both same- and different-speaker scores".into()));
    }
    if same.iter().chain(different).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("verification scores".into()));
    }
    let mut s = same.to_vec();
    let mut d = different.to_vec();
    s.sort_by(f64::total_cmp);
    d.sort_by(f64::total_cmp);
    let mut cands: Vec<f64> = s.iter().chain(&d).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best: Option<(f64, EerPoint)> = None;
    for &t in &cands {
        let fr = s.partition_point(|&v| v < t) as f64 / s.len() as f64;
        let fa = (d.len() - d.partition_point(|&v| v < t)) as f64 / d.len() as f64;
        let gap = (fr - fa).abs();
        if best.map_or(true, |(g, _)| gap < g) {
            best = Some((
                gap,
                EerPoint {
                    threshold: t,
                    false_reject: fr,
                    false_accept: fa,
                },
            ));
        }
    }
    Ok(best.unwrap().1)
}

/// Fraction of scores strictly below the threshold.
pub fn rejection_rate_of(scores: &[f64], policy: &ThresholdPolicy) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores".into()));
    }
    Ok(scores.iter().filter(|&&s| s < policy.value).count() as f64 / scores.len() as f64)
}

/// Fraction of trials whose probe scores below the threshold.
pub fn rejection_rate(trials: &[VerificationTrial], encoder: &SpeakerEncoder, policy: &ThresholdPolicy) -> Result<f64> {
    let scores = trials.iter().map(|t| t.score(encoder)).collect::<Result<Vec<_>>>()?;
    rejection_rate_of(&scores, policy)
}

/// On-disk trial list; audio paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialManifest {
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub enroll: Vec<PathBuf>,
    pub probe: PathBuf,
    pub same_speaker: bool,
}

impl TrialManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<VerificationTrial>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = crate::json::from_str(&text)?;
        if m.trials.is_empty() {
            return Err(Error::Schema {
                field: "trials".into(),
                message: "at least one trial is required".into(),
            });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let trials = m
            .trials
            .iter()
            .map(|t| {
                Ok(VerificationTrial {
                    enroll: t.enroll.iter().map(|p| load_wav(base.join(p))).collect::<Result<_>>()?,
                    probe: load_wav(base.join(&t.probe))?,
                    same_speaker: t.same_speaker,
                })
            })
            .collect::<Result<_>>()?;
        Ok((m, trials))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine(&[0.6, 0.8], &[0.6, 0.8]) - 1.0).abs() < 1e-12);
        let (a, b) = ([0.3, -0.2, 0.9], [0.1, 0.5, -0.4]);
        assert_eq!(cosine(&a, &b), cosine(&b, &a));
    }

    #[test]
    fn rejection_edges() {
        let s = [0.1, 0.2, 0.24];
        assert_eq!(rejection_rate_of(&s, &ThresholdPolicy::default()).unwrap(), 1.0);
        assert_eq!(rejection_rate_of(&s, &ThresholdPolicy::fixed(-1.0).unwrap()).unwrap(), 0.0);
        assert!(ThresholdPolicy::fixed(1.5).is_err());
        assert!(rejection_rate_of(&[], &ThresholdPolicy::default()).is_err());
    }

    #[test]
    fn eer_of_separable_scores() {
        let p = eer_threshold(&[0.8, 0.9, 0.7], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!((p.false_reject, p.false_accept), (0.0, 0.0));
        assert_eq!(p.threshold, 0.7);
    }
}
