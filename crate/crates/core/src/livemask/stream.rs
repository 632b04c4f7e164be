//! Causal stream processor: notch cascade then a direct-form FIR.

use super::LiveMaskProfile;
use crate::audio::{convolve_raw, resample, Waveform};
use crate::error::Result;
use crate::specmask::{compile_notch_cascade_at, NotchCascade};

/// Filter state of one stream. Not shareable between streams.
#[derive(Debug, Clone)]
pub struct StreamState {
    notch: NotchCascade,
    taps: Vec<f64>,
    /// Input history stored twice so the last `taps.len()` samples are
    /// always contiguous, newest first, at `hist[pos..pos + taps.len()]`.
    hist: Vec<f64>,
    pos: usize,
    processed: u64,
}

impl StreamState {
    pub fn new(profile: &LiveMaskProfile) -> Result<Self> {
        Self::with_rate(profile, profile.sample_rate)
    }

    /// Runs the profile at another rate: notch centres keep their frequency
    /// and the response is resampled with its DC gain preserved.
    pub fn with_rate(profile: &LiveMaskProfile, sample_rate: u32) -> Result<Self> {
        let mask = profile.mask()?;
        let notch = compile_notch_cascade_at(&mask, profile.sample_rate, sample_rate, profile.notch_q)?;
        let taps = if sample_rate == profile.sample_rate {
            profile.rir.clone()
        } else {
            let w = Waveform::new(profile.rir.clone(), profile.sample_rate)?;
            let scale = profile.sample_rate as f64 / sample_rate as f64;
            let mut t = resample(&w, sample_rate)?.into_samples();
            if t.is_empty() {
                t.push(0.0);
            }
            t.iter_mut().for_each(|v| *v *= scale);
            t
        };
        let n = taps.len();
        Ok(Self {
            notch,
            taps,
            hist: vec![0.0; 2 * n],
            pos: 0,
            processed: 0,
        })
    }

    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        let v = self.notch.process_sample(x);
        let n = self.taps.len();
        self.pos = if self.pos == 0 { n - 1 } else { self.pos - 1 };
        self.hist[self.pos] = v;
        self.hist[self.pos + n] = v;
        self.processed += 1;
        self.taps.iter().zip(&self.hist[self.pos..self.pos + n]).map(|(h, x)| h * x).sum()
    }

    pub fn process_in_place(&mut self, chunk: &mut [f64]) {
        for v in chunk {
            *v = self.process_sample(*v);
        }
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Samples of input needed beyond the current one; always 0.
    pub fn lookahead(&self) -> usize {
        0
    }

    /// Length of the response: the delay spread a listener hears.
    pub fn latency_samples(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn sample_rate(&self) -> u32 {
        self.notch.sample_rate()
    }

    pub fn notch(&self) -> &NotchCascade {
        &self.notch
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// FIR multiply-adds per second of audio.
    pub fn fir_macs_per_second(&self) -> f64 {
        self.taps.len() as f64 * self.sample_rate() as f64
    }

    /// Notch plus FIR operations per second of audio.
    pub fn flops_per_second(&self) -> f64 {
        (self.notch.flops_per_sample() + 2 * self.taps.len()) as f64 * self.sample_rate() as f64
    }
}

/// Processes one chunk, returning a chunk of the same length.
pub fn stream_process(state: &mut StreamState, chunk: &[f64]) -> Vec<f64> {
    let mut out = chunk.to_vec();
    state.process_in_place(&mut out);
    out
}

/// Whole-signal reference for the stream path: the notch cascade over the
/// full input followed by a truncated linear convolution.
pub fn offline_apply(profile: &LiveMaskProfile, wave: &Waveform) -> Result<Waveform> {
    let mut st = StreamState::with_rate(profile, wave.sample_rate())?;
    let filtered = st.notch.process(wave.samples());
    Waveform::new(convolve_raw(&filtered, &st.taps), wave.sample_rate())
}
