//! Signal-processing attacks an adversary may use to strip a protection.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{fft, istft, resample, stft, MelConfig, MelFilterbank, Spectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};

/// Multiplicative-update sweeps used to pull linear magnitudes out of a
/// mel frame.
const MEL_NNLS_ITERS: usize = 100;
const GRIFFIN_LIM_SEED: u64 = 0x6c6d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attack {
    Quantize { bits: u32 },
    ResampleDownUp { rate: u32 },
    Lowpass { cutoff_hz: f64 },
    MelInvert { iterations: usize },
}

impl Attack {
    /// The four transforms with their customary settings.
    pub fn standard() -> [Attack; 4] {
        [
            Attack::Quantize { bits: 8 },
            Attack::ResampleDownUp { rate: 8000 },
            Attack::Lowpass { cutoff_hz: 4000.0 },
            Attack::MelInvert { iterations: 32 },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Attack::Quantize { .. } => "quantize",
            Attack::ResampleDownUp { .. } => "resample",
            Attack::Lowpass { .. } => "lowpass",
            Attack::MelInvert { .. } => "mel_invert",
        }
    }
}

pub fn attack_transform(attack: Attack, wave: &Waveform) -> Result<Waveform> {
    match attack {
        Attack::Quantize { bits } => quantize(wave, bits),
        Attack::ResampleDownUp { rate } => resample_down_up(wave, rate),
        Attack::Lowpass { cutoff_hz } => lowpass(wave, cutoff_hz),
        Attack::MelInvert { iterations } => mel_invert(wave, iterations),
    }
}

/// Uniform quantizer with `2^bits` levels spanning [-1, 1], endpoints included.
pub fn quantize(wave: &Waveform, bits: u32) -> Result<Waveform> {
    if !(1..=32).contains(&bits) {
        return Err(Error::InvalidArgument(format!("bits must be in 1..=32, got {bits}")));
    }
    let step = 2.0 / ((1u64 << bits) - 1) as f64;
    let q = wave.samples().iter().map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) / step).round() * step - 1.0).collect();
    Waveform::new(q, wave.sample_rate())
}

pub fn resample_down_up(wave: &Waveform, rate: u32) -> Result<Waveform> {
    if rate == 0 || rate > wave.sample_rate() {
        return Err(Error::InvalidArgument(format!(
            "intermediate rate {rate} must be in 1..={}",
            wave.sample_rate()
        )));
    }
    let mut y = resample(&resample(wave, rate)?, wave.sample_rate())?.into_samples();
    y.resize(wave.len(), 0.0);
    Waveform::new(y, wave.sample_rate())
}

/// Sixth-order Butterworth lowpass as three cascaded biquad sections.
pub fn lowpass(wave: &Waveform, cutoff_hz: f64) -> Result<Waveform> {
    let nyq = wave.sample_rate() as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyq) {
        return Err(Error::InvalidArgument(format!("cutoff {cutoff_hz} Hz outside (0, {nyq})")));
    }
    let w0 = 2.0 * PI * cutoff_hz / wave.sample_rate() as f64;
    let mut y = wave.samples().to_vec();
    for k in 1..=3 {
        let q = 1.0 / (2.0 * ((2 * k - 1) as f64 * PI / 12.0).sin());
        let alpha = w0.sin() / (2.0 * q);
        let c = w0.cos();
        let a0 = 1.0 + alpha;
        let b = [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0];
        let a = [-2.0 * c / a0, (1.0 - alpha) / a0];
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in y.iter_mut() {
            let x0 = *v;
            let out = b[0] * x0 + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
            (x2, x1, y2, y1) = (x1, x0, y1, out);
            *v = out;
        }
    }
    Waveform::new(y, wave.sample_rate())
}

/// Reduces the signal to its mel magnitudes and resynthesizes it with
/// Griffin-Lim phase recovery.
pub fn mel_invert(wave: &Waveform, iterations: usize) -> Result<Waveform> {
    let cfg = StftConfig::default();
    let spec = stft(wave, cfg)?;
    let fb = MelFilterbank::new(wave.sample_rate(), cfg.fft_size, MelConfig::default());
    let (nb, nm) = (spec.n_bins(), fb.n_bands());

    let mut mags = vec![0.0; spec.n_frames() * nb];
    let mut mag = vec![0.0; nb];
    let mut mel = vec![0.0; nm];
    let mut num = vec![0.0; nb];
    let mut fm = vec![0.0; nm];
    let mut den = vec![0.0; nb];
    for m in 0..spec.n_frames() {
        for (a, c) in mag.iter_mut().zip(spec.frame(m)) {
            *a = c.norm();
        }
        fb.apply_frame(&mag, &mut mel);
        // nonnegative least squares F s = mel by multiplicative updates
        num.fill(0.0);
        fb.apply_transpose_frame(&mel, &mut num);
        let s = &mut mags[m * nb..(m + 1) * nb];
        s.copy_from_slice(&num);
        for _ in 0..MEL_NNLS_ITERS {
            fb.apply_frame(s, &mut fm);
            den.fill(0.0);
            fb.apply_transpose_frame(&fm, &mut den);
            for ((v, n), d) in s.iter_mut().zip(&num).zip(&den) {
                if *d > 0.0 {
                    *v *= n / d;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(GRIFFIN_LIM_SEED);
    let data = mags
        .iter()
        .map(|&a| Complex64::from_polar(a, rng.gen_range(-PI..PI)))
        .collect();
    let mut est = Spectrogram::from_parts(data, spec.n_frames(), cfg, wave.sample_rate(), wave.len())?;
    for _ in 0..iterations {
        let re = stft(&istft(&est), cfg)?;
        let data = re
            .data()
            .iter()
            .zip(&mags)
            .map(|(c, &a)| {
                let n = c.norm();
                if n > 0.0 {
                    c * (a / n)
                } else {
                    Complex64::new(a, 0.0)
                }
            })
            .collect();
        est = Spectrogram::from_parts(data, spec.n_frames(), cfg, wave.sample_rate(), wave.len())?;
    }
    Ok(istft(&est))
}

/// Regularized inverse filter `Y conj(H) / (|H|^2 + beta)`, computed on a
/// transform long enough to avoid wrap-around and trimmed to the input.
pub fn deconvolve(wave: &Waveform, rir: &[f64], beta: f64) -> Result<Waveform> {
    if rir.is_empty() {
        return Err(Error::InvalidArgument("empty impulse response".into()));
    }
    if rir.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("impulse response".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularization must be finite and >= 0, got {beta}")));
    }
    let n = 2 * fft::good_size(wave.len() + rir.len());
    let fwd = fft::forward(n);
    let inv = fft::inverse(n);
    let spectrum = |x: &[f64]| {
        let mut buf = fwd.make_input_vec();
        buf[..x.len()].copy_from_slice(x);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("fft length mismatch");
        out
    };
    let y = spectrum(wave.samples());
    let h = spectrum(rir);
    let mut q: Vec<Complex64> = y
        .iter()
        .zip(&h)
        .map(|(y, h)| {
            let d = h.norm_sqr() + beta;
            if d > 0.0 {
                y * h.conj() / d
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let last = q.len() - 1;
    q[0].im = 0.0;
    q[last].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut q, &mut out).expect("fft length mismatch");
    out.truncate(wave.len());
    out.iter_mut().for_each(|v| *v /= n as f64);
    Waveform::new(out, wave.sample_rate())
}
