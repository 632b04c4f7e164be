//! Real-time mode: a mask and an impulse response calibrated once on a
//! speaker's recordings, then applied to live audio by causal filters.

mod stream;

pub use stream::{offline_apply, stream_process, StreamState};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{convolve_raw, stft, StftConfig, Waveform, PIPELINE_RATE};
use crate::encoders::EnsembleConfig;
use crate::error::{Error, Result};
use crate::reverb::pgd::{self, Objective, Sample};
use crate::reverb::{max_taps, select_target_against, RirOptConfig, RirOptimization, RirSeed, SelectedTarget};
use crate::specmask::{self, compile_notch_cascade_at, FrequencyMask, GreedyMaskConfig, DEFAULT_NOTCH_Q};
use crate::toyspeech::Corpus;

pub const PROFILE_VERSION: u32 = 1;

/// Calibration material below this many seconds only earns a warning.
pub const RECOMMENDED_CALIBRATION_SECS: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiveMaskConfig {
    pub k: usize,
    pub tau_p_rel: f64,
    pub notch_q: f64,
    pub lambda_l: f64,
    pub epsilon_rel: f64,
    /// Smaller steps than the per-recording refinement.
    pub alpha_rel: f64,
    pub max_iters: usize,
    pub k_c: usize,
    pub lambda_target: f64,
    pub seed: u64,
}

impl Default for LiveMaskConfig {
    fn default() -> Self {
        Self {
            k: 16,
            tau_p_rel: 0.01,
            notch_q: DEFAULT_NOTCH_Q,
            lambda_l: 0.01,
            epsilon_rel: 0.3,
            alpha_rel: 1.0 / 30.0,
            max_iters: 2000,
            k_c: 20,
            lambda_target: 0.5,
            seed: 0,
        }
    }
}

impl LiveMaskConfig {
    pub fn rir_opt(&self) -> RirOptConfig {
        RirOptConfig {
            epsilon_rel: self.epsilon_rel,
            alpha_rel: self.alpha_rel,
            max_iters: self.max_iters,
            k_c: self.k_c,
            lambda_target: self.lambda_target,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileMeta {
    pub corpus_hash: String,
    pub corpus_seconds: f64,
    pub pool_hash: String,
    /// Ids of the candidate impulse responses, in selection order.
    pub rir_seeds: Vec<String>,
    pub selected_seed: String,
    pub target_speaker: String,
    pub target_utterance: String,
    pub seed: u64,
    pub config: LiveMaskConfig,
}

/// Everything the stream path needs, plus how it was calibrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveMaskProfile {
    pub version: u32,
    pub sample_rate: u32,
    pub masked_bins: Vec<usize>,
    pub notch_q: f64,
    pub rir: Vec<f64>,
    pub meta: ProfileMeta,
}

/// Rounds to nine significant digits, the precision profiles are stored at.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap()
}

impl LiveMaskProfile {
    pub fn mask(&self) -> Result<FrequencyMask> {
        FrequencyMask::new(self.masked_bins.clone(), StftConfig::default().n_bins())
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |field: &str, message: String| Err(Error::Schema { field: field.into(), message });
        if self.version != PROFILE_VERSION {
            return Err(Error::VersionMismatch {
                expected: PROFILE_VERSION,
                found: self.version,
            });
        }
        if self.sample_rate != PIPELINE_RATE {
            return schema("sample_rate", format!("profiles are calibrated at {PIPELINE_RATE} Hz"));
        }
        if let Err(e) = self.mask() {
            return schema("masked_bins", e.to_string());
        }
        if !(self.notch_q > 0.0 && self.notch_q.is_finite()) {
            return schema("notch_q", format!("must be positive, got {}", self.notch_q));
        }
        if self.rir.is_empty() || self.rir.len() > max_taps(self.sample_rate) {
            return schema("rir", format!("{} taps, need 1..={}", self.rir.len(), max_taps(self.sample_rate)));
        }
        if self.rir.iter().any(|v| !v.is_finite()) {
            return schema("rir", "non-finite tap".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profile serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = crate::json::from_str(text)?;
        if probe.version != PROFILE_VERSION {
            return Err(Error::VersionMismatch {
                expected: PROFILE_VERSION,
                found: probe.version,
            });
        }
        let p: Self = crate::json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

pub fn save_profile(path: impl AsRef<Path>, profile: &LiveMaskProfile) -> Result<()> {
    profile.validate()?;
    let path = path.as_ref();
    std::fs::write(path, profile.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<LiveMaskProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LiveMaskProfile::from_json(&text)
}

fn check_corpus(corpus: &Corpus) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::CorpusTooSmall("calibration corpus is empty".into()));
    }
    let secs = corpus.total_seconds();
    if secs < RECOMMENDED_CALIBRATION_SECS {
        log::warn!("calibration corpus holds {secs:.1} s of speech; {RECOMMENDED_CALIBRATION_SECS} s is recommended");
    }
    Ok(())
}

/// Top-k bins by single-removal log-mel deviation summed over the corpus.
/// A bin is a candidate when it reaches the power threshold in at least
/// one recording.
pub fn calibrate_mask(corpus: &Corpus, k: usize, tau_p_rel: f64) -> Result<FrequencyMask> {
    check_corpus(corpus)?;
    let cfg = GreedyMaskConfig { k, tau_p_rel };
    let stft_cfg = StftConfig::default();
    let nb = stft_cfg.n_bins();
    let mut total = vec![0.0; nb];
    let mut candidate = vec![false; nb];
    for u in corpus.utterances() {
        let (d, c) = specmask::row_deltas(&stft(&u.wave, stft_cfg)?, &cfg)?;
        for i in 0..nb {
            total[i] += d[i];
            candidate[i] |= c[i];
        }
    }
    let ranked = specmask::rank((0..nb).filter(|&i| candidate[i]).map(|i| (i, total[i])).collect());
    if ranked.len() < k {
        return Err(Error::NotEnoughCandidates {
            requested: k,
            available: ranked.len(),
        });
    }
    FrequencyMask::new(ranked[..k].iter().map(|r| r.0).collect(), nb)
}

/// Each recording through a fresh notch cascade for `mask`.
pub fn notch_filter(corpus: &Corpus, mask: &FrequencyMask, q: f64) -> Result<Vec<Waveform>> {
    corpus
        .utterances()
        .iter()
        .map(|u| {
            let mut c = compile_notch_cascade_at(mask, u.wave.sample_rate(), u.wave.sample_rate(), q)?;
            Waveform::new(c.process(u.wave.samples()), u.wave.sample_rate())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirCalibration {
    pub seed_id: String,
    /// Mean selection objective of every seed, in input order.
    pub seed_scores: Vec<f64>,
    pub target: SelectedTarget,
    pub optimization: RirOptimization,
}

/// Per-member unit centroid of the corpus embeddings.
fn centroid(corpus: &Corpus, ens: &EnsembleConfig) -> Result<Vec<Vec<f64>>> {
    let mut c: Vec<Vec<f64>> = ens.encoders().iter().map(|e| vec![0.0; e.embedding_dim()]).collect();
    for u in corpus.utterances() {
        for (acc, e) in c.iter_mut().zip(ens.embed_all(&u.wave)?) {
            acc.iter_mut().zip(&e).for_each(|(a, b)| *a += b);
        }
    }
    for v in &mut c {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|a| *a /= n);
        }
    }
    Ok(c)
}

/// Summed targeted objective over the corpus for one shared response,
/// without any output renormalization (the stream path has none).
pub fn universal_objective(
    h: &[f64],
    filtered: &[Waveform],
    originals: &[Waveform],
    x_tgt: &Waveform,
    ens: &EnsembleConfig,
    lambda_target: f64,
) -> Result<f64> {
    let obj = objective(h.len(), filtered, originals, ens.embed_all(x_tgt)?, ens, lambda_target)?;
    Ok(obj.value(h))
}

fn objective<'a>(
    taps: usize,
    filtered: &'a [Waveform],
    originals: &[Waveform],
    target: Vec<Vec<f64>>,
    ens: &'a EnsembleConfig,
    lambda: f64,
) -> Result<Objective<'a>> {
    let samples = filtered
        .iter()
        .zip(originals)
        .map(|(f, o)| Sample::new(f, ens.embed_all(o)?, taps))
        .collect::<Result<_>>()?;
    Ok(Objective {
        samples,
        ens,
        target,
        lambda,
        guard: false,
    })
}

/// Picks a seed by mean protection over the corpus, a target against the
/// corpus centroid, and refines the seed on the summed objective.
pub fn calibrate_rir(
    corpus: &Corpus,
    mask: &FrequencyMask,
    seeds: &[RirSeed],
    pool: &Corpus,
    ens: &EnsembleConfig,
    config: &LiveMaskConfig,
) -> Result<RirCalibration> {
    check_corpus(corpus)?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no impulse response seeds".into()));
    }
    let filtered = notch_filter(corpus, mask, config.notch_q)?;
    let originals: Vec<Waveform> = corpus.utterances().iter().map(|u| u.wave.clone()).collect();
    let refs: Vec<Vec<Vec<f64>>> = originals.iter().map(|w| ens.embed_all(w)).collect::<Result<_>>()?;

    let seed_scores: Vec<f64> = seeds
        .iter()
        .map(|s| {
            let mut total = 0.0;
            for (f, r) in filtered.iter().zip(&refs) {
                let y = Waveform::new(convolve_raw(f.samples(), &s.taps), f.sample_rate())?;
                total += ens.loss_between(&ens.embed_all(&y)?, r);
            }
            Ok(total / filtered.len() as f64 - config.lambda_l * s.duration_ms())
        })
        .collect::<Result<_>>()?;
    let best = (0..seeds.len())
        .min_by(|&a, &b| {
            seed_scores[b]
                .total_cmp(&seed_scores[a])
                .then(seeds[a].taps.len().cmp(&seeds[b].taps.len()))
                .then(seeds[a].id.cmp(&seeds[b].id))
        })
        .unwrap();
    let seed = &seeds[best];

    let speakers = corpus.speakers();
    let exclude: Vec<&str> = speakers.iter().map(String::as_str).collect();
    let target = select_target_against(pool, &centroid(corpus, ens)?, &exclude, ens)?;
    let obj = objective(
        seed.taps.len(),
        &filtered,
        &originals,
        ens.embed_all(&target.wave)?,
        ens,
        config.lambda_target,
    )?;
    let optimization = pgd::run(&seed.taps, &obj, &config.rir_opt())?;
    Ok(RirCalibration {
        seed_id: seed.id.clone(),
        seed_scores,
        target: SelectedTarget {
            speaker: target.speaker,
            utterance: target.utterance,
            score: target.score,
        },
        optimization,
    })
}

/// Full calibration: mask, then response, then a stored profile.
pub fn calibrate(
    corpus: &Corpus,
    seeds: &[RirSeed],
    pool: &Corpus,
    ens: &EnsembleConfig,
    config: &LiveMaskConfig,
) -> Result<LiveMaskProfile> {
    let mask = calibrate_mask(corpus, config.k, config.tau_p_rel)?;
    let rir = calibrate_rir(corpus, &mask, seeds, pool, ens, config)?;
    let profile = LiveMaskProfile {
        version: PROFILE_VERSION,
        sample_rate: PIPELINE_RATE,
        masked_bins: mask.bins().to_vec(),
        notch_q: config.notch_q,
        rir: rir.optimization.taps.iter().map(|&v| round_sig9(v)).collect(),
        meta: ProfileMeta {
            corpus_hash: corpus.hash(),
            corpus_seconds: corpus.total_seconds(),
            pool_hash: pool.hash(),
            rir_seeds: seeds.iter().map(|s| s.id.clone()).collect(),
            selected_seed: rir.seed_id,
            target_speaker: rir.target.speaker,
            target_utterance: rir.target.utterance,
            seed: config.seed,
            config: *config,
        },
    };
    profile.validate()?;
    Ok(profile)
}
