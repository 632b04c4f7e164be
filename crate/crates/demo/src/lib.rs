//! In-browser demo of the encoder-free parts of the toolkit: synthesize a
//! toy voice, mask its most distinctive frequency rows, and put it in a
//! short synthetic room.

use voiceshield::audio::{convolve, stft, StftConfig, Waveform};
use voiceshield::eval::{log_spectral_distance, segmental_snr};
use voiceshield::seed;
use voiceshield::specmask::{apply_mask, greedy_select, GreedyMaskConfig};
use voiceshield::toyspeech::{gen_utterance, sample_speaker};
use wasm_bindgen::prelude::*;

pub const SAMPLE_RATE: u32 = 48_000;

fn wave(samples: &[f32]) -> Result<Waveform, JsError> {
    Waveform::new(samples.iter().map(|&v| v as f64).collect(), SAMPLE_RATE).map_err(|e| JsError::new(&e.to_string()))
}

fn to_f32(w: &Waveform) -> Vec<f32> {
    w.samples().iter().map(|&v| v as f32).collect()
}

fn js<T>(r: voiceshield::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn sample_rate() -> u32 {
    SAMPLE_RATE
}

/// A toy utterance of the voice numbered `speaker`.
#[wasm_bindgen]
pub fn synthesize(speaker: u32, seconds: f64, utterance: u32) -> Result<Vec<f32>, JsError> {
    let w = js(gen_utterance(&sample_speaker(speaker as u64), seconds, utterance as u64))?;
    Ok(to_f32(&w))
}

#[wasm_bindgen]
pub struct MaskOutcome {
    audio: Vec<f32>,
    bins: Vec<u32>,
    hz: Vec<f64>,
}

#[wasm_bindgen]
impl MaskOutcome {
    #[wasm_bindgen(getter)]
    pub fn audio(&self) -> Vec<f32> {
        self.audio.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> Vec<u32> {
        self.bins.clone()
    }

    /// Centre frequency of each masked row.
    #[wasm_bindgen(getter)]
    pub fn hz(&self) -> Vec<f64> {
        self.hz.clone()
    }
}

/// Greedy spectrogram mask of `k` rows.
#[wasm_bindgen]
pub fn mask(samples: &[f32], k: usize) -> Result<MaskOutcome, JsError> {
    let x = wave(samples)?;
    let cfg = StftConfig::default();
    let m = js(greedy_select(&js(stft(&x, cfg))?, &GreedyMaskConfig { k, ..GreedyMaskConfig::default() }))?;
    let y = js(apply_mask(&x, &m, cfg))?;
    Ok(MaskOutcome {
        audio: to_f32(&y),
        bins: m.bins().iter().map(|&b| b as u32).collect(),
        hz: m.bins().iter().map(|&b| cfg.bin_hz(b, SAMPLE_RATE)).collect(),
    })
}

/// Impulse response of a small room: a direct path followed by an
/// exponentially decaying diffuse tail, `ms` long.
pub fn room_response(room: u32, ms: f64) -> Vec<f64> {
    let len = ((ms.clamp(1.0, 30.0) / 1000.0) * SAMPLE_RATE as f64) as usize;
    let decay = len as f64 / 4.0;
    let mut s = seed::derive(room as u64, 0x726f6f6d, 0);
    (0..len)
        .map(|k| {
            s = seed::mix(s);
            let r = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            if k == 0 { 1.0 } else { r * (-(k as f64) / decay).exp() }
        })
        .collect()
}

#[wasm_bindgen]
pub fn reverberate(samples: &[f32], room: u32, ms: f64) -> Result<Vec<f32>, JsError> {
    let x = wave(samples)?;
    Ok(to_f32(&js(convolve(&x, &room_response(room, ms)))?))
}

/// `[log-spectral distance in dB, segmental SNR in dB]` of `test` against `reference`.
#[wasm_bindgen]
pub fn distortion(reference: &[f32], test: &[f32]) -> Result<Vec<f64>, JsError> {
    let (r, t) = (wave(reference)?, wave(test)?);
    Ok(vec![js(log_spectral_distance(&r, &t))?, js(segmental_snr(&r, &t))?])
}
