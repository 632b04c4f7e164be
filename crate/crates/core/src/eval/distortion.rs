//! Objective distortion measures standing in for listening tests.

use serde::{Deserialize, Serialize};

use crate::audio::{log_mel, stft, MelConfig, MelFilterbank, StftConfig, Waveform};
use crate::error::{Error, Result};

pub const SEGMENT_MS: f64 = 30.0;
pub const SEG_SNR_MIN: f64 = -10.0;
pub const SEG_SNR_MAX: f64 = 35.0;

/// Power floor for the log spectra, relative to full scale.
const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionMetrics {
    pub lsd_db: f64,
    pub seg_snr_db: f64,
    pub mel_l2: f64,
}

fn trimmed(a: &Waveform, b: &Waveform) -> Result<(Waveform, Waveform)> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::InvalidArgument(format!(
            "sample rates differ: {} vs {}",
            a.sample_rate(),
            b.sample_rate()
        )));
    }
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(Error::InvalidArgument("empty signal".into()));
    }
    let cut = |w: &Waveform| Waveform::new(w.samples()[..n].to_vec(), w.sample_rate());
    Ok((cut(a)?, cut(b)?))
}

/// Mean over frames of the RMS difference between log power spectra, in dB.
pub fn log_spectral_distance(reference: &Waveform, test: &Waveform) -> Result<f64> {
    let (r, t) = trimmed(reference, test)?;
    let cfg = StftConfig::default();
    let (sr, st) = (stft(&r, cfg)?, stft(&t, cfg)?);
    let nb = sr.n_bins();
    let db = |p: f64| 10.0 * p.max(POWER_FLOOR).log10();
    let total: f64 = (0..sr.n_frames())
        .map(|m| {
            let sq: f64 = sr.frame(m).iter().zip(st.frame(m)).map(|(a, b)| (db(a.norm_sqr()) - db(b.norm_sqr())).powi(2)).sum();
            (sq / nb as f64).sqrt()
        })
        .sum();
    Ok(total / sr.n_frames() as f64)
}

/// Mean over 30 ms segments of the clamped per-segment SNR. A segment with
/// no error scores the ceiling.
pub fn segmental_snr(reference: &Waveform, test: &Waveform) -> Result<f64> {
    let (r, t) = trimmed(reference, test)?;
    let seg = ((SEGMENT_MS / 1000.0 * r.sample_rate() as f64).round() as usize).max(1);
    let n_seg = (r.len() / seg).max(1);
    let mut total = 0.0;
    for s in 0..n_seg {
        let end = if s + 1 == n_seg { r.len() } else { (s + 1) * seg };
        let (a, b) = (&r.samples()[s * seg..end], &t.samples()[s * seg..end]);
        let sig: f64 = a.iter().map(|v| v * v).sum();
        let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let snr = if err == 0.0 {
            SEG_SNR_MAX
        } else if sig == 0.0 {
            SEG_SNR_MIN
        } else {
            10.0 * (sig / err).log10()
        };
        total += snr.clamp(SEG_SNR_MIN, SEG_SNR_MAX);
    }
    Ok(total / n_seg as f64)
}

pub fn distortion_metrics(reference: &Waveform, test: &Waveform) -> Result<DistortionMetrics> {
    let (r, t) = trimmed(reference, test)?;
    let cfg = StftConfig::default();
    let fb = MelFilterbank::new(r.sample_rate(), cfg.fft_size, MelConfig::default());
    let mel_l2 = log_mel(&stft(&r, cfg)?, &fb).distance(&log_mel(&stft(&t, cfg)?, &fb));
    Ok(DistortionMetrics {
        lsd_db: log_spectral_distance(&r, &t)?,
        seg_snr_db: segmental_snr(&r, &t)?,
        mel_l2,
    })
}
