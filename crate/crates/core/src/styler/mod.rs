//! Style transfer stage: a 32-dimensional style descriptor, a parametric
//! effects chain driven by the gap between a target style and the input's
//! own style, and the sign-flip search over the target style.

mod chain;

pub use chain::{band_centres, StyleParams};

use serde::{Deserialize, Serialize};

use crate::audio::stft::stft_unchecked;
use crate::audio::{peak, StftConfig, Waveform};
use crate::encoders::EnsembleConfig;
use crate::error::{Error, Result};

pub const STYLE_DIM: usize = 32;

/// Features below this index are measured; the rest are reserved zeros.
pub const STYLE_FEATURES: usize = 19;

/// Unit-norm style descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleVector(Vec<f64>);

impl StyleVector {
    /// Normalizes `v` to unit length.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() != STYLE_DIM {
            return Err(Error::InvalidArgument(format!("style vector needs {STYLE_DIM} entries, got {}", v.len())));
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidArgument("style vector must be finite and nonzero".into()));
        }
        Ok(Self(v.into_iter().map(|a| a / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Negates coordinate `i`; the norm is untouched.
    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut v = self.clone();
        v.flip(i);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleTransferConfig {
    /// Distortion budget relative to the reference spectrogram norm.
    pub tau_rel: f64,
}

impl Default for StyleTransferConfig {
    fn default() -> Self {
        Self { tau_rel: 0.08 }
    }
}

fn band_edges() -> [f64; 9] {
    let c = band_centres();
    let r = (c[1] / c[0]).sqrt();
    std::array::from_fn(|j| if j < 8 { c[j] / r } else { c[7] * r })
}

/// Per-band energy floor keeping silent input well defined.
const BAND_EPS: f64 = 1e-12;

fn raw_features(x: &[f64], sample_rate: u32) -> [f64; STYLE_DIM] {
    let cfg = StftConfig::default();
    let spec = stft_unchecked(x, sample_rate, cfg);
    let edges = band_edges();
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;
    let band_of = |k: usize| {
        let f = k as f64 * bin_hz;
        (0..8).find(|&j| f >= edges[j] && f < edges[j + 1])
    };
    let bands: Vec<Option<usize>> = (0..cfg.n_bins()).map(band_of).collect();
    let nf = spec.n_frames();
    let mut rel_db = vec![[0.0; 8]; nf];
    let mut frame_db = vec![0.0; nf];
    for m in 0..nf {
        let mut e = [BAND_EPS; 8];
        for (k, c) in spec.frame(m).iter().enumerate() {
            if let Some(j) = bands[k] {
                e[j] += c.norm_sqr();
            }
        }
        let total: f64 = e.iter().sum();
        for j in 0..8 {
            rel_db[m][j] = 10.0 * (e[j] / total).log10();
        }
        frame_db[m] = 10.0 * total.log10();
    }
    let mut f = [0.0; STYLE_DIM];
    let n = nf as f64;
    let mut mean_db = [0.0; 8];
    for j in 0..8 {
        let mean = rel_db.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rel_db.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        mean_db[j] = mean;
        f[j] = -mean / 30.0;
        f[8 + j] = var.sqrt() / 10.0;
    }
    // least-squares slope of the mean band level against octave index
    let oct: Vec<f64> = band_centres().iter().map(|c| (c / 60.0).log2()).collect();
    let om = oct.iter().sum::<f64>() / 8.0;
    let dm = mean_db.iter().sum::<f64>() / 8.0;
    let num: f64 = (0..8).map(|j| (oct[j] - om) * (mean_db[j] - dm)).sum();
    let den: f64 = oct.iter().map(|o| (o - om).powi(2)).sum();
    f[16] = num / den / 6.0;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    f[17] = if rms > 0.0 { 20.0 * (peak(x) / rms).log10() / 20.0 } else { 0.0 };
    let fm = frame_db.iter().sum::<f64>() / n;
    f[18] = (frame_db.iter().map(|v| (v - fm).powi(2)).sum::<f64>() / n).sqrt() / 20.0;
    f
}

fn unit(f: [f64; STYLE_DIM]) -> [f64; STYLE_DIM] {
    let n = f.iter().map(|a| a * a).sum::<f64>().sqrt();
    f.map(|a| a / n)
}

/// Style of at least one second of audio: 8 mean relative band levels, 8
/// band-level deviations, spectral tilt, crest factor and level dynamics,
/// then 13 reserved zeros, normalized to unit length.
pub fn extract_style(wave: &Waveform) -> Result<StyleVector> {
    let need = wave.sample_rate() as usize;
    if wave.len() < need {
        return Err(Error::TooShort {
            needed: need,
            got: wave.len(),
        });
    }
    Ok(StyleVector(unit(raw_features(wave.samples(), wave.sample_rate())).to_vec()))
}

/// Chain parameters that move `wave` towards `style`.
pub fn style_params(wave: &Waveform, style: &StyleVector) -> StyleParams {
    let own = unit(raw_features(wave.samples(), wave.sample_rate()));
    let d: [f64; STYLE_DIM] = std::array::from_fn(|i| style.0[i] - own[i]);
    StyleParams::from_offset(&d)
}

/// Restyles `wave` towards `style` and renormalizes to the input peak.
/// Applying a recording's own style is the identity.
pub fn apply_style(wave: &Waveform, style: &StyleVector) -> Waveform {
    apply_params(wave, &style_params(wave, style))
}

pub fn apply_params(wave: &Waveform, params: &StyleParams) -> Waveform {
    if params.is_neutral() {
        return wave.clone();
    }
    let mut y = params.render(wave.samples(), wave.sample_rate());
    let (pi, po) = (wave.peak(), peak(&y));
    if po > 0.0 {
        let g = pi / po;
        for v in &mut y {
            *v *= g;
        }
    }
    Waveform::from_finite(y, wave.sample_rate())
}

/// Frobenius distance between magnitude spectrograms.
pub fn spectral_distance(a: &Waveform, b: &Waveform) -> f64 {
    let cfg = StftConfig::default();
    stft_unchecked(a.samples(), a.sample_rate(), cfg).magnitude_distance(&stft_unchecked(b.samples(), b.sample_rate(), cfg))
}

fn spectral_norm(a: &Waveform) -> f64 {
    stft_unchecked(a.samples(), a.sample_rate(), StftConfig::default()).magnitude_norm()
}

const MIN_SPECTRAL_CHANGE: f64 = 1e-9;

/// Extra speaker loss per unit of spectral distortion relative to the
/// masked baseline.
pub fn sensitivity(x_out: &Waveform, x_masked: &Waveform, x_in: &Waveform, ens: &EnsembleConfig) -> Result<f64> {
    let reference = ens.embed_all(x_in)?;
    sensitivity_with(x_out, ens.loss_between(&ens.embed_all(x_masked)?, &reference), x_in, &reference, ens)
}

fn sensitivity_with(
    x_out: &Waveform,
    masked_loss: f64,
    x_in: &Waveform,
    reference: &[Vec<f64>],
    ens: &EnsembleConfig,
) -> Result<f64> {
    let den = spectral_distance(x_in, x_out);
    if den <= MIN_SPECTRAL_CHANGE {
        return Err(Error::NoSpectralChange);
    }
    Ok((ens.loss_between(&ens.embed_all(x_out)?, reference) - masked_loss) / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipStatus {
    Applied,
    /// Score not positive, or the coordinate is zero so flipping is a no-op.
    Skipped,
    /// Applied, pushed the distortion to the budget, undone; the search stopped.
    Reverted,
    /// Never reached because the search stopped earlier.
    NotVisited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTrace {
    pub scores: Vec<f64>,
    /// Coordinates in visiting order.
    pub order: Vec<usize>,
    pub status: Vec<FlipStatus>,
    pub tau: f64,
    pub final_distortion: f64,
}

impl StyleTrace {
    pub fn applied(&self) -> Vec<usize> {
        self.order.iter().copied().filter(|&i| self.status[i] == FlipStatus::Applied).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StyleResult {
    pub style: StyleVector,
    pub audio: Waveform,
    pub trace: StyleTrace,
}

/// Scores every single flip of the input's style, then applies flips in
/// descending score order until the next one would reach the distortion
/// budget.
pub fn optimize_style(
    x_in: &Waveform,
    x_masked: &Waveform,
    ens: &EnsembleConfig,
    config: &StyleTransferConfig,
) -> Result<StyleResult> {
    if !(config.tau_rel >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau_rel must be >= 0, got {}", config.tau_rel)));
    }
    let base = extract_style(x_in)?;
    let reference = ens.embed_all(x_in)?;
    let masked_loss = ens.loss_between(&ens.embed_all(x_masked)?, &reference);
    let budget_ref = &apply_style(x_masked, &base);
    let tau = config.tau_rel * spectral_norm(budget_ref);

    let scores: Vec<f64> = (0..STYLE_DIM)
        .map(|i| {
            if base.0[i] == 0.0 {
                return Ok(0.0);
            }
            let out = apply_style(x_masked, &base.flipped(i));
            match sensitivity_with(&out, masked_loss, x_in, &reference, ens) {
                Err(Error::NoSpectralChange) => Ok(0.0),
                other => other,
            }
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..STYLE_DIM).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut status = vec![FlipStatus::NotVisited; STYLE_DIM];
    let mut style = base.clone();
    let mut audio = budget_ref.clone();
    for &i in &order {
        if !(scores[i] > 0.0) || base.0[i] == 0.0 {
            status[i] = FlipStatus::Skipped;
            continue;
        }
        style.flip(i);
        let out = apply_style(x_masked, &style);
        if spectral_distance(budget_ref, &out) >= tau {
            style.flip(i);
            status[i] = FlipStatus::Reverted;
            break;
        }
        status[i] = FlipStatus::Applied;
        audio = out;
    }
    let final_distortion = spectral_distance(budget_ref, &audio);
    Ok(StyleResult {
        style,
        audio,
        trace: StyleTrace {
            scores,
            order,
            status,
            tau,
            final_distortion,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, secs: f64) -> Waveform {
        let n = (secs * 48_000.0) as usize;
        Waveform::new((0..n).map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / 48_000.0).sin()).collect(), 48_000).unwrap()
    }

    fn noise(secs: f64) -> Waveform {
        let mut s = 3u64;
        let n = (secs * 48_000.0) as usize;
        let x = (0..n)
            .map(|_| {
                s = crate::seed::mix(s);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        Waveform::new(x, 48_000).unwrap()
    }

    #[test]
    fn extracted_style_is_unit_and_deterministic() {
        for w in [tone(440.0, 1.0), noise(1.5), Waveform::silence(48_000, 48_000)] {
            let v = extract_style(&w).unwrap();
            assert!((v.norm() - 1.0).abs() <= 1e-6);
            assert_eq!(v, extract_style(&w).unwrap());
            assert!(v.as_slice()[STYLE_FEATURES..].iter().all(|&a| a == 0.0));
        }
        assert!(matches!(extract_style(&tone(440.0, 0.99)), Err(Error::TooShort { .. })));
    }

    #[test]
    fn tilt_separates_noise_from_a_low_tone() {
        let a = extract_style(&noise(1.0)).unwrap();
        let b = extract_style(&tone(100.0, 1.0)).unwrap();
        let d = (a.as_slice()[16] - b.as_slice()[16]).abs();
        assert!(d > 0.1, "tilt coordinate differs by {d}");
    }

    #[test]
    fn own_style_is_the_identity() {
        let w = noise(1.2);
        assert_eq!(apply_style(&w, &extract_style(&w).unwrap()), w);
        let s = Waveform::silence(50_000, 48_000);
        let y = apply_style(&s, &extract_style(&noise(1.0)).unwrap());
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_band_zero_gain_quadruples_a_60_hz_tone() {
        let mut d = [0.0; STYLE_DIM];
        d[0] = 1.0;
        let p = StyleParams::from_offset(&d);
        assert!((p.band_gain_db[0] - 12.0).abs() < 0.1);
        let x = tone(60.0, 2.0);
        let y = p.render(x.samples(), 48_000);
        let tail = |v: &[f64]| v[48_000..].iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let gain = tail(&y) / tail(x.samples());
        assert!((gain / 4.0 - 1.0).abs() <= 0.1, "gain {gain}");
    }

    #[test]
    fn flips_preserve_the_norm_exactly() {
        let v = extract_style(&noise(1.0)).unwrap();
        for i in 0..STYLE_DIM {
            let f = v.flipped(i);
            let n2: f64 = f.as_slice().iter().map(|a| a * a).sum();
            let m2: f64 = v.as_slice().iter().map(|a| a * a).sum();
            assert_eq!(n2, m2);
        }
    }
}
