//! Audio containers and the signal-processing primitives every other module
//! builds on: WAV I/O, STFT/ISTFT, the mel front end, FFT convolution and
//! rational resampling.

mod convolve;
pub(crate) mod fft;
mod mel;
mod resample;
pub(crate) mod stft;
mod wav;

pub use convolve::{convolve, convolve_direct, convolve_raw, cross_correlate_prefix, FftConvolver};
pub use mel::{log_mel, LogMel, MelConfig, MelFilterbank, LOG_FLOOR};
pub use resample::resample;
pub use stft::{istft, stft, Spectrogram, StftConfig};
pub use wav::{load_wav, save_wav, WavEncoding};

use crate::error::{Error, Result};

/// Sample rate used by the whole pipeline.
pub const PIPELINE_RATE: u32 = 48_000;

/// Mono PCM audio with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a waveform from samples already known to be finite.
    pub(crate) fn from_finite(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::from_finite(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        peak(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::from_finite(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    /// Copy with `extra` zeros appended.
    pub fn padded(&self, extra: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(self.samples.len() + extra, 0.0);
        Self::from_finite(samples, self.sample_rate)
    }
}

pub(crate) fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, s| m.max(s.abs()))
}
