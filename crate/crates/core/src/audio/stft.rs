use num_complex::Complex64;

use super::{fft, Waveform};
use crate::error::{Error, Result};

/// Framing parameters. The analysis/synthesis window is always a periodic Hann.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
        }
    }
}

impl StftConfig {
    /// Validates that the squared Hann window overlap-adds to a constant at
    /// this hop, which is what exact weighted overlap-add needs.
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        if fft_size < 4 || fft_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "fft_size must be even and >= 4, got {fft_size}"
            )));
        }
        if hop == 0 || hop > fft_size {
            return Err(Error::InvalidArgument(format!(
                "hop must be in 1..=fft_size, got {hop}"
            )));
        }
        let cfg = Self { fft_size, hop };
        let w = cfg.window();
        let sums: Vec<f64> = (0..hop)
            .map(|n| (n..fft_size).step_by(hop).map(|i| w[i] * w[i]).sum())
            .collect();
        let (lo, hi) = sums
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if hi - lo > 1e-9 * hi {
            return Err(Error::InvalidArgument(format!(
                "hop {hop} violates constant overlap-add for a {fft_size}-point Hann window"
            )));
        }
        Ok(cfg)
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        (0..self.fft_size)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }

    /// Zeros placed before the signal so that every real sample is covered by
    /// the same number of frames.
    pub fn pad_left(&self) -> usize {
        self.fft_size - self.hop
    }

    pub fn n_frames(&self, signal_len: usize) -> usize {
        (self.pad_left() + signal_len.max(1) - 1) / self.hop + 1
    }

    /// Centre frequency of `bin` in Hz.
    pub fn bin_hz(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.fft_size as f64
    }
}

/// Complex STFT, stored frame-major: `frame * n_bins + bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    config: StftConfig,
    sample_rate: u32,
    signal_len: usize,
}

impl Spectrogram {
    pub fn from_parts(
        data: Vec<Complex64>,
        n_frames: usize,
        config: StftConfig,
        sample_rate: u32,
        signal_len: usize,
    ) -> Result<Self> {
        if data.len() != n_frames * config.n_bins() {
            return Err(Error::InvalidArgument(format!(
                "spectrogram data has {} entries, expected {} frames x {} bins",
                data.len(),
                n_frames,
                config.n_bins()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram".into()));
        }
        Ok(Self {
            data,
            n_frames,
            config,
            sample_rate,
            signal_len,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn frame(&self, m: usize) -> &[Complex64] {
        let nb = self.n_bins();
        &self.data[m * nb..(m + 1) * nb]
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[frame * self.n_bins() + bin]
    }

    pub fn set(&mut self, bin: usize, frame: usize, v: Complex64) {
        let nb = self.n_bins();
        self.data[frame * nb + bin] = v;
    }

    /// Zeroes one frequency row across all frames.
    pub fn zero_row(&mut self, bin: usize) {
        let nb = self.n_bins();
        for m in 0..self.n_frames {
            self.data[m * nb + bin] = Complex64::new(0.0, 0.0);
        }
    }

    /// Magnitudes, frame-major like the complex data.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// L2 norm of one frequency row.
    pub fn row_norm(&self, bin: usize) -> f64 {
        let nb = self.n_bins();
        (0..self.n_frames)
            .map(|m| self.data[m * nb + bin].norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Frobenius distance between the magnitude spectrograms.
    pub fn magnitude_distance(&self, other: &Spectrogram) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.norm() - b.norm()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn magnitude_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Forward STFT of a waveform at least one window long.
pub fn stft(wave: &Waveform, config: StftConfig) -> Result<Spectrogram> {
    if wave.len() < config.fft_size {
        return Err(Error::TooShort {
            needed: config.fft_size,
            got: wave.len(),
        });
    }
    Ok(stft_unchecked(wave.samples(), wave.sample_rate(), config))
}

pub(crate) fn stft_unchecked(x: &[f64], sample_rate: u32, config: StftConfig) -> Spectrogram {
    let n = config.fft_size;
    let nb = config.n_bins();
    let pad = config.pad_left();
    let n_frames = config.n_frames(x.len());
    let window = config.window();
    let plan = fft::forward(n);
    let mut frame = vec![0.0; n];
    let mut out = plan.make_output_vec();
    let mut scratch = plan.make_scratch_vec();
    let mut data = Vec::with_capacity(n_frames * nb);
    for m in 0..n_frames {
        let start = (m * config.hop) as isize - pad as isize;
        for (j, f) in frame.iter_mut().enumerate() {
            let i = start + j as isize;
            *f = if i >= 0 && (i as usize) < x.len() {
                x[i as usize] * window[j]
            } else {
                0.0
            };
        }
        plan.process_with_scratch(&mut frame, &mut out, &mut scratch)
            .expect("fft length mismatch");
        data.extend_from_slice(&out);
    }
    Spectrogram {
        data,
        n_frames,
        config,
        sample_rate,
        signal_len: x.len(),
    }
}

/// Weighted overlap-add inverse; exact inverse of [`stft`] over the whole signal.
pub fn istft(spec: &Spectrogram) -> Waveform {
    let config = spec.config;
    let n = config.fft_size;
    let pad = config.pad_left();
    let len = spec.signal_len;
    let window = config.window();
    let plan = fft::inverse(n);
    let mut buf = plan.make_input_vec();
    let mut frame = plan.make_output_vec();
    let mut scratch = plan.make_scratch_vec();
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let scale = 1.0 / n as f64;
    for m in 0..spec.n_frames {
        buf.copy_from_slice(spec.frame(m));
        buf[0].im = 0.0;
        let last = buf.len() - 1;
        buf[last].im = 0.0;
        plan.process_with_scratch(&mut buf, &mut frame, &mut scratch)
            .expect("fft length mismatch");
        let start = (m * config.hop) as isize - pad as isize;
        for j in 0..n {
            let i = start + j as isize;
            if i >= 0 && (i as usize) < len {
                let i = i as usize;
                out[i] += frame[j] * scale * window[j];
                norm[i] += window[j] * window[j];
            }
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        if *w > 1e-12 {
            *o /= w;
        }
    }
    Waveform::from_finite(out, spec.sample_rate)
}

/// Adjoint of the forward STFT: given `dL/dRe X + i dL/dIm X` per entry
/// (frame-major), returns `dL/dx` for the `signal_len` input samples.
pub(crate) fn stft_backward(grad: &[Complex64], config: StftConfig, signal_len: usize) -> Vec<f64> {
    let n = config.fft_size;
    let nb = config.n_bins();
    let pad = config.pad_left();
    let n_frames = grad.len() / nb;
    let window = config.window();
    let plan = fft::inverse(n);
    let mut buf = plan.make_input_vec();
    let mut frame = plan.make_output_vec();
    let mut scratch = plan.make_scratch_vec();
    let mut out = vec![0.0; signal_len];
    for m in 0..n_frames {
        let g = &grad[m * nb..(m + 1) * nb];
        buf[0] = Complex64::new(g[0].re, 0.0);
        for k in 1..nb - 1 {
            buf[k] = g[k] * 0.5;
        }
        buf[nb - 1] = Complex64::new(g[nb - 1].re, 0.0);
        plan.process_with_scratch(&mut buf, &mut frame, &mut scratch)
            .expect("fft length mismatch");
        let start = (m * config.hop) as isize - pad as isize;
        for j in 0..n {
            let i = start + j as isize;
            if i >= 0 && (i as usize) < signal_len {
                out[i as usize] += frame[j] * window[j];
            }
        }
    }
    out
}
