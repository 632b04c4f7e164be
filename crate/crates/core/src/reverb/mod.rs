//! Reverberation stage: short impulse-response seeds, the seed that protects
//! best for its length, a maximally dissimilar target voice and a sign-PGD
//! refinement of the chosen response.

pub(crate) mod pgd;
mod protect;

pub use pgd::{optimize_rir, targeted_objective, RirOptConfig, RirOptimization, RirStep};
pub use protect::{protect, Checkpoint, PipelineConfig, ProtectionReport, ProtectionResult, SelectedRir, SelectedTarget, Stage};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{self, load_wav, resample, Waveform, PIPELINE_RATE};
use crate::encoders::{EnsembleConfig, Term};
use crate::error::{Error, Result};
use crate::toyspeech::Corpus;

/// Longest impulse response emitted anywhere, in milliseconds.
pub const MAX_RIR_MS: f64 = 30.0;

/// Tap budget for [`MAX_RIR_MS`] at `sample_rate`.
pub fn max_taps(sample_rate: u32) -> usize {
    (sample_rate as f64 * MAX_RIR_MS / 1000.0).round() as usize
}

/// Peak-normalized impulse response, first tap at the direct sound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RirSeed {
    pub id: String,
    pub sample_rate: u32,
    pub taps: Vec<f64>,
}

impl RirSeed {
    /// Scales `taps` to unit peak.
    pub fn new(id: impl Into<String>, taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let id = id.into();
        if taps.is_empty() || taps.len() > max_taps(sample_rate) {
            return Err(Error::InvalidArgument(format!(
                "seed {id}: {} taps, need 1..={}",
                taps.len(),
                max_taps(sample_rate)
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("seed {id}")));
        }
        let p = audio::peak(&taps);
        if p == 0.0 {
            return Err(Error::InvalidArgument(format!("seed {id} is silent")));
        }
        Ok(Self {
            id,
            sample_rate,
            taps: taps.into_iter().map(|t| t / p).collect(),
        })
    }

    pub fn duration_ms(&self) -> f64 {
        self.taps.len() as f64 * 1000.0 / self.sample_rate as f64
    }
}

/// Turns one impulse recording into a seed: unit peak, onset at the first
/// sample reaching a tenth of the peak, at most 30 ms kept, trailing exact
/// zeros dropped and a linear fade over the last 5 %.
pub fn seed_from_recording(id: impl Into<String>, wave: &Waveform) -> Result<RirSeed> {
    let id = id.into();
    let wave = if wave.sample_rate() == PIPELINE_RATE {
        wave.clone()
    } else {
        resample(wave, PIPELINE_RATE)?
    };
    let x = wave.samples();
    let p = audio::peak(x);
    if p == 0.0 {
        return Err(Error::InvalidArgument(format!("impulse recording {id} is silent")));
    }
    let onset = x.iter().position(|v| v.abs() >= 0.1 * p).unwrap();
    let end = (onset + max_taps(PIPELINE_RATE)).min(x.len());
    let mut taps: Vec<f64> = x[onset..end].iter().map(|v| v / p).collect();
    while taps.last() == Some(&0.0) {
        taps.pop();
    }
    let n = taps.len();
    let fade = n / 20;
    for i in 0..fade {
        taps[n - fade + i] *= (fade - i) as f64 / (fade + 1) as f64;
    }
    RirSeed::new(id, taps, PIPELINE_RATE)
}

/// Seeds from every `.wav` file in `dir`, in file-name order; ids are the
/// file stems.
pub fn prepare_rir_seeds(dir: impl AsRef<Path>) -> Result<Vec<RirSeed>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no impulse recordings in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
            seed_from_recording(stem, &load_wav(p)?)
        })
        .collect()
}

/// Reverberates `x` with `taps`, keeping its length.
pub fn reverberate(x: &Waveform, taps: &[f64]) -> Result<Waveform> {
    audio::convolve(x, taps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RirSelectConfig {
    /// Length penalty per millisecond of response.
    pub lambda_l: f64,
}

impl Default for RirSelectConfig {
    fn default() -> Self {
        Self { lambda_l: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirSelection {
    pub seed: RirSeed,
    /// Objective of every seed, in input order.
    pub scores: Vec<f64>,
    pub score: f64,
}

/// Loss of `x_out` reverberated by `seed` against `x_in`, minus the length
/// penalty.
pub fn rir_objective(
    seed: &RirSeed,
    x_out: &Waveform,
    x_in: &Waveform,
    ens: &EnsembleConfig,
    config: &RirSelectConfig,
) -> Result<f64> {
    let reference = ens.embed_all(x_in)?;
    objective_with(seed, x_out, &reference, ens, config)
}

fn objective_with(
    seed: &RirSeed,
    x_out: &Waveform,
    reference: &[Vec<f64>],
    ens: &EnsembleConfig,
    config: &RirSelectConfig,
) -> Result<f64> {
    let y = reverberate(x_out, &seed.taps)?;
    Ok(ens.loss_between(&ens.embed_all(&y)?, reference) - config.lambda_l * seed.duration_ms())
}

/// Seed maximizing [`rir_objective`]; ties go to the shorter seed, then the
/// lower id.
pub fn select_rir(
    seeds: &[RirSeed],
    x_out: &Waveform,
    x_in: &Waveform,
    ens: &EnsembleConfig,
    config: &RirSelectConfig,
) -> Result<RirSelection> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no impulse response seeds".into()));
    }
    if !(config.lambda_l >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_l must be >= 0, got {}", config.lambda_l)));
    }
    let reference = ens.embed_all(x_in)?;
    let scores: Vec<f64> = seeds
        .iter()
        .map(|s| objective_with(s, x_out, &reference, ens, config))
        .collect::<Result<_>>()?;
    let best = (0..seeds.len())
        .min_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(seeds[a].taps.len().cmp(&seeds[b].taps.len()))
                .then(seeds[a].id.cmp(&seeds[b].id))
        })
        .unwrap();
    Ok(RirSelection {
        seed: seeds[best].clone(),
        score: scores[best],
        scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    pub wave: Waveform,
    pub speaker: String,
    pub utterance: String,
    /// Mean cosine similarity to the protected voice over the ensemble.
    pub score: f64,
}

/// Mean over members of the cosine between two unit embedding sets.
pub fn mean_cosine(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).sum();
    s / a.len() as f64
}

/// Pool utterance least similar to `x_in`, skipping `protected_speaker`.
pub fn select_target(
    pool: &Corpus,
    x_in: &Waveform,
    protected_speaker: Option<&str>,
    ens: &EnsembleConfig,
) -> Result<TargetSample> {
    select_target_against(pool, &ens.embed_all(x_in)?, protected_speaker.as_slice(), ens)
}

/// [`select_target`] against precomputed reference embeddings, e.g. a
/// corpus centroid, skipping every speaker in `exclude`.
pub fn select_target_against(
    pool: &Corpus,
    reference: &[Vec<f64>],
    exclude: &[&str],
    ens: &EnsembleConfig,
) -> Result<TargetSample> {
    let others = pool.speakers().iter().filter(|s| !exclude.contains(&s.as_str())).count();
    if others < 2 {
        return Err(Error::CorpusTooSmall(format!(
            "target pool needs at least 2 speakers besides the protected one, has {others}"
        )));
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, u) in pool.utterances().iter().enumerate() {
        if exclude.contains(&u.speaker.as_str()) {
            continue;
        }
        let score = mean_cosine(&ens.embed_all(&u.wave)?, reference);
        if best.map_or(true, |(b, _)| score < b) {
            best = Some((score, i));
        }
    }
    let (score, i) = best.unwrap();
    let u = &pool.utterances()[i];
    Ok(TargetSample {
        wave: u.wave.clone(),
        speaker: u.speaker.clone(),
        utterance: u.id.clone(),
        score,
    })
}

/// Per-member contributions `w_i (d(y, tgt) - lambda d(y, in))`.
pub(crate) fn contributions(ens: &EnsembleConfig, distances: &[Vec<f64>], lambda: f64) -> Vec<f64> {
    ens.weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * (distances[0][i] - lambda * distances[1][i]))
        .collect()
}

/// The two distance terms of the targeted objective.
pub(crate) fn targeted_terms<'a>(target: &'a [Vec<f64>], input: &'a [Vec<f64>], lambda: f64) -> [Term<'a>; 2] {
    [
        Term {
            reference: target,
            coef: 1.0,
        },
        Term {
            reference: input,
            coef: -lambda,
        },
    ]
}
