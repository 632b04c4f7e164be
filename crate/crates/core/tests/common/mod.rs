#![allow(dead_code)]

use std::sync::OnceLock;

use voiceshield::audio::Waveform;
use voiceshield::encoders::{train_encoder, Arch, EnsembleConfig, SpeakerEncoder, TrainConfig};
use voiceshield::toyspeech::{gen_utterance, sample_speaker, Corpus};

/// E1 and E3 trained briefly; enough for fixed differentiable encoders.
pub fn quick_encoders() -> &'static Vec<SpeakerEncoder> {
    static M: OnceLock<Vec<SpeakerEncoder>> = OnceLock::new();
    M.get_or_init(|| {
        let corpus = Corpus::generate(10, 6, 10.0, 11).unwrap();
        let cfg = TrainConfig { epochs: 4, seed: 4, ..TrainConfig::default() };
        [Arch::E1, Arch::E3].iter().map(|&a| train_encoder(a, &corpus, &cfg).unwrap()).collect()
    })
}

pub fn quick_ensemble() -> EnsembleConfig {
    EnsembleConfig::with_default_weights(quick_encoders().clone()).unwrap()
}

pub fn utterance(speaker: u64, seed: u64, secs: f64) -> Waveform {
    gen_utterance(&sample_speaker(speaker), secs, seed).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
