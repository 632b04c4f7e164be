use serde::{Deserialize, Serialize};

use super::Spectrogram;

/// Lower clamp applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_bands: usize,
    pub fmin: f64,
    /// `None` means half the sample rate.
    pub fmax: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_bands: 80,
            fmin: 0.0,
            fmax: None,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank on the mel scale, stored sparsely per band and per bin.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_bands: usize,
    n_bins: usize,
    // (first bin, weights) for each band
    bands: Vec<(usize, Vec<f64>)>,
    // (band, weight) pairs for each bin
    by_bin: Vec<Vec<(usize, f64)>>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, fft_size: usize, config: MelConfig) -> Self {
        let n_bins = fft_size / 2 + 1;
        let fmax = config.fmax.unwrap_or(sample_rate as f64 / 2.0);
        let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..config.n_bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_bands + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut bands = Vec::with_capacity(config.n_bands);
        let mut by_bin = vec![Vec::new(); n_bins];
        for b in 0..config.n_bands {
            let (left, centre, right) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for (k, slot) in by_bin.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let w = if f > left && f <= centre {
                    (f - left) / (centre - left)
                } else if f > centre && f < right {
                    (right - f) / (right - centre)
                } else {
                    0.0
                };
                if w > 0.0 {
                    let start = *first.get_or_insert(k);
                    weights.resize(k - start, 0.0);
                    weights.push(w);
                    slot.push((b, w));
                }
            }
            bands.push((first.unwrap_or(0), weights));
        }
        Self {
            n_bands: config.n_bands,
            n_bins,
            bands,
            by_bin,
        }
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Dense `n_bands x n_bins` matrix, row-major.
    pub fn dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_bands * self.n_bins];
        for (b, (start, w)) in self.bands.iter().enumerate() {
            for (j, v) in w.iter().enumerate() {
                m[b * self.n_bins + start + j] = *v;
            }
        }
        m
    }

    /// Bands whose triangle covers `bin`, with their weights.
    pub fn bands_for_bin(&self, bin: usize) -> &[(usize, f64)] {
        &self.by_bin[bin]
    }

    /// Linear mel energies of one magnitude frame.
    pub fn apply_frame(&self, mag: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&mag[*start..]).map(|(a, b)| a * b).sum();
        }
    }

    /// Adds `F^T g` for one frame into `out` (length `n_bins`).
    pub fn apply_transpose_frame(&self, g: &[f64], out: &mut [f64]) {
        for (gb, (start, w)) in g.iter().zip(&self.bands) {
            if *gb == 0.0 {
                continue;
            }
            for (o, v) in out[*start..].iter_mut().zip(w) {
                *o += gb * v;
            }
        }
    }
}

/// Log-mel features, frame-major (`frame * n_bands + band`).
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    pub n_bands: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
}

impl LogMel {
    pub fn frame(&self, m: usize) -> &[f64] {
        &self.values[m * self.n_bands..(m + 1) * self.n_bands]
    }

    /// Frobenius distance.
    pub fn distance(&self, other: &LogMel) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// `log(max(F |X|, LOG_FLOOR))` for every frame.
pub fn log_mel(spec: &Spectrogram, fb: &MelFilterbank) -> LogMel {
    assert_eq!(spec.n_bins(), fb.n_bins(), "filterbank/spectrogram size mismatch");
    let nb = fb.n_bands();
    let mut values = vec![0.0; spec.n_frames() * nb];
    let mut mag = vec![0.0; spec.n_bins()];
    for m in 0..spec.n_frames() {
        for (a, c) in mag.iter_mut().zip(spec.frame(m)) {
            *a = c.norm();
        }
        let out = &mut values[m * nb..(m + 1) * nb];
        fb.apply_frame(&mag, out);
        for v in out.iter_mut() {
            *v = v.max(LOG_FLOOR).ln();
        }
    }
    LogMel {
        n_bands: nb,
        n_frames: spec.n_frames(),
        values,
    }
}
