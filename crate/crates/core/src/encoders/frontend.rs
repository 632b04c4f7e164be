//! Shared 80-band log-mel front end and its adjoint.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::audio::stft::{stft_backward, stft_unchecked};
use crate::audio::{MelConfig, MelFilterbank, Spectrogram, StftConfig, LOG_FLOOR, PIPELINE_RATE};

pub(crate) const N_BANDS: usize = 80;

pub(crate) struct Frontend {
    pub cfg: StftConfig,
    pub fb: MelFilterbank,
}

pub(crate) fn frontend() -> &'static Frontend {
    static FE: OnceLock<Frontend> = OnceLock::new();
    FE.get_or_init(|| {
        let cfg = StftConfig::default();
        Frontend {
            cfg,
            fb: MelFilterbank::new(PIPELINE_RATE, cfg.fft_size, MelConfig::default()),
        }
    })
}

/// Forward intermediates kept for the backward pass.
pub(crate) struct Features {
    spec: Spectrogram,
    mag: Vec<f64>,
    mel: Vec<f64>,
    pub logmel: Vec<f64>,
    /// Frames with at least one band above the log floor. Frames made only of
    /// digital silence carry no speaker information and are skipped, so
    /// padding a signal with zeros leaves its embedding unchanged.
    pub active: Vec<usize>,
}

impl Features {
    pub fn n_frames(&self) -> usize {
        self.spec.n_frames()
    }
}

impl Frontend {
    pub fn features(&self, x: &[f64]) -> Features {
        let spec = stft_unchecked(x, PIPELINE_RATE, self.cfg);
        let nb = spec.n_bins();
        let t = spec.n_frames();
        let mag: Vec<f64> = spec.data().iter().map(|c| c.norm()).collect();
        let mut mel = vec![0.0; t * N_BANDS];
        for m in 0..t {
            self.fb
                .apply_frame(&mag[m * nb..(m + 1) * nb], &mut mel[m * N_BANDS..(m + 1) * N_BANDS]);
        }
        let logmel: Vec<f64> = mel.iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
        let mut active: Vec<usize> = (0..t)
            .filter(|&m| mel[m * N_BANDS..(m + 1) * N_BANDS].iter().any(|&v| v > LOG_FLOOR))
            .collect();
        if active.len() < super::nets::MIN_FRAMES {
            active = (0..t).collect();
        }
        Features {
            spec,
            mag,
            mel,
            logmel,
            active,
        }
    }

    /// Pulls a gradient on the log-mel values (all frames, frame-major) back
    /// to the input samples.
    pub fn backward(&self, f: &Features, g_logmel: &[f64]) -> Vec<f64> {
        let nb = f.spec.n_bins();
        let t = f.n_frames();
        let mut g_mel = vec![0.0; N_BANDS];
        let mut g_mag = vec![0.0; nb];
        let mut g_spec = vec![Complex64::new(0.0, 0.0); t * nb];
        for m in 0..t {
            let gl = &g_logmel[m * N_BANDS..(m + 1) * N_BANDS];
            if gl.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mel = &f.mel[m * N_BANDS..(m + 1) * N_BANDS];
            for ((gm, &g), &v) in g_mel.iter_mut().zip(gl).zip(mel) {
                *gm = if v > LOG_FLOOR { g / v } else { 0.0 };
            }
            g_mag.iter_mut().for_each(|v| *v = 0.0);
            self.fb.apply_transpose_frame(&g_mel, &mut g_mag);
            let frame = f.spec.frame(m);
            let mag = &f.mag[m * nb..(m + 1) * nb];
            for k in 0..nb {
                if mag[k] > 0.0 {
                    g_spec[m * nb + k] = frame[k] * (g_mag[k] / mag[k]);
                }
            }
        }
        stft_backward(&g_spec, self.cfg, f.spec.signal_len())
    }
}
