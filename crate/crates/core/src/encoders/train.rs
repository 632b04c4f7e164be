//! Desk-scale training with a temporary softmax speaker head.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frontend::{frontend, N_BANDS};
use super::nets::{self, Arch};
use super::SpeakerEncoder;
use crate::audio::{resample, PIPELINE_RATE};
use crate::error::{Error, Result};
use crate::seed;
use crate::toyspeech::Corpus;

pub const MIN_TRAIN_SPEAKERS: usize = 10;
pub const MIN_TRAIN_SECS_PER_SPEAKER: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Length of the random training crops.
    pub crop_secs: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            epochs: 30,
            batch: 16,
            crop_secs: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Head accuracy on the training crops per epoch.
    pub epoch_accuracy: Vec<f64>,
}

pub fn train_encoder(arch: Arch, corpus: &Corpus, config: &TrainConfig) -> Result<SpeakerEncoder> {
    train_encoder_with_report(arch, corpus, config).map(|(m, _)| m)
}

struct Item {
    label: usize,
    /// Log-mel of the active frames only.
    logmel: Vec<f64>,
}

fn xavier(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

fn init_params(arch: Arch, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    arch.param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            match name {
                "decay_fast" => vec![(0.7f64 / 0.3).ln(); n],
                "decay_slow" => vec![(0.97f64 / 0.03).ln(); n],
                _ if shape.len() == 1 => vec![0.0; n],
                _ => {
                    let fan_in: usize = shape[1..].iter().product();
                    xavier(rng, n, fan_in, shape[0])
                }
            }
        })
        .collect()
}

fn check_corpus(corpus: &Corpus) -> Result<()> {
    let speakers = corpus.speakers();
    if speakers.len() < MIN_TRAIN_SPEAKERS {
        return Err(Error::CorpusTooSmall(format!(
            "{} speakers, training needs at least {MIN_TRAIN_SPEAKERS}",
            speakers.len()
        )));
    }
    for spk in &speakers {
        let s = corpus.speaker_seconds(spk);
        if s < MIN_TRAIN_SECS_PER_SPEAKER - 1e-9 {
            return Err(Error::CorpusTooSmall(format!(
                "speaker {spk} has {s:.1} s, training needs {MIN_TRAIN_SECS_PER_SPEAKER} s per speaker"
            )));
        }
    }
    Ok(())
}

/// Trains `arch` on `corpus`. Every epoch cuts each utterance into
/// non-overlapping crops at a random phase and visits them in random order.
pub fn train_encoder_with_report(
    arch: Arch,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<(SpeakerEncoder, TrainReport)> {
    check_corpus(corpus)?;
    if config.batch == 0 || config.epochs == 0 || !(config.crop_secs > 0.0) || !(config.lr > 0.0) {
        return Err(Error::InvalidArgument("training needs positive lr, epochs, batch and crop length".into()));
    }
    let speakers: Vec<String> = corpus.speakers();
    let fe = frontend();
    let mut items = Vec::with_capacity(corpus.len());
    for u in corpus.utterances() {
        let wave = if u.wave.sample_rate() == PIPELINE_RATE {
            u.wave.clone()
        } else {
            resample(&u.wave, PIPELINE_RATE)?
        };
        let f = fe.features(wave.samples());
        let mut logmel = Vec::with_capacity(f.active.len() * N_BANDS);
        for &m in &f.active {
            logmel.extend_from_slice(&f.logmel[m * N_BANDS..(m + 1) * N_BANDS]);
        }
        let label = speakers.binary_search(&u.speaker).expect("speaker list is complete");
        items.push(Item { label, logmel });
    }

    let mut mean = vec![0.0; N_BANDS];
    let mut sq = vec![0.0; N_BANDS];
    let mut count = 0usize;
    for it in &items {
        for fr in it.logmel.chunks_exact(N_BANDS) {
            for b in 0..N_BANDS {
                mean[b] += fr[b];
                sq[b] += fr[b] * fr[b];
            }
            count += 1;
        }
    }
    let std: Vec<f64> = (0..N_BANDS)
        .map(|b| {
            mean[b] /= count as f64;
            (sq[b] / count as f64 - mean[b] * mean[b]).max(0.0).sqrt().max(1e-3)
        })
        .collect();
    let zs: Vec<Vec<f64>> = items
        .iter()
        .map(|it| {
            it.logmel
                .chunks_exact(N_BANDS)
                .flat_map(|fr| fr.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s))
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, 0x7a1e, arch as u64));
    let mut params = init_params(arch, &mut rng);
    let dim = arch.embedding_dim();
    let n_spk = speakers.len();
    let mut head_w = xavier(&mut rng, n_spk * dim, dim, n_spk);
    let mut head_b = vec![0.0; n_spk];
    let mut vel: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut vel_hw = vec![0.0; head_w.len()];
    let mut vel_hb = vec![0.0; n_spk];

    let crop = ((config.crop_secs * PIPELINE_RATE as f64) / fe.cfg.hop as f64).round().max(nets::MIN_FRAMES as f64) as usize;
    let mut report = TrainReport {
        epoch_loss: Vec::new(),
        epoch_accuracy: Vec::new(),
    };
    for epoch in 0..config.epochs {
        let mut crops: Vec<(usize, usize, usize)> = Vec::new();
        for (i, z) in zs.iter().enumerate() {
            let t = z.len() / N_BANDS;
            if t < nets::MIN_FRAMES {
                continue;
            }
            if t < crop {
                crops.push((i, 0, t));
                continue;
            }
            let n = t / crop;
            let phase = rng.gen_range(0..=t - n * crop);
            crops.extend((0..n).map(|j| (i, phase + j * crop, crop)));
        }
        crops.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in crops.chunks(config.batch) {
            let mut gp: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
            let mut ghw = vec![0.0; head_w.len()];
            let mut ghb = vec![0.0; n_spk];
            let inv = 1.0 / batch.len() as f64;
            for &(i, start, len) in batch {
                let z = &zs[i][start * N_BANDS..(start + len) * N_BANDS];
                let (y, cache) = nets::forward(arch, &params, z, len);
                let (e, norm) = nets::l2_normalize(&y);
                let mut logits: Vec<f64> =
                    (0..n_spk).map(|k| head_b[k] + nets::dot(&head_w[k * dim..(k + 1) * dim], &e)).collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                let label = items[i].label;
                total_loss += -(logits[label] - mx - sum.ln());
                let argmax = (0..n_spk).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
                if argmax == label {
                    correct += 1;
                }
                // softmax minus one-hot
                for (k, l) in logits.iter_mut().enumerate() {
                    *l = ((*l - mx).exp() / sum - if k == label { 1.0 } else { 0.0 }) * inv;
                }
                let mut de = vec![0.0; dim];
                for (k, &g) in logits.iter().enumerate() {
                    ghb[k] += g;
                    for j in 0..dim {
                        de[j] += g * head_w[k * dim + j];
                        ghw[k * dim + j] += g * e[j];
                    }
                }
                let dy = nets::l2_normalize_back(&e, norm, &de);
                nets::backward(arch, &params, z, len, &cache, &dy, Some(&mut gp));
            }
            let step = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = config.momentum * *vi + gi;
                    *pi -= config.lr * *vi;
                }
            };
            for ((p, v), g) in params.iter_mut().zip(vel.iter_mut()).zip(&gp) {
                step(p, v, g);
            }
            step(&mut head_w, &mut vel_hw, &ghw);
            step(&mut head_b, &mut vel_hb, &ghb);
        }
        let loss = total_loss / crops.len().max(1) as f64;
        if !loss.is_finite() || params.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        log::debug!("{arch:?} epoch {epoch}: loss {loss:.4}");
        report.epoch_loss.push(loss);
        report.epoch_accuracy.push(correct as f64 / crops.len().max(1) as f64);
    }
    let model = SpeakerEncoder::from_parts(arch, params, mean, std, config.seed, corpus.hash());
    Ok((model, report))
}
