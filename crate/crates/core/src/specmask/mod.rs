//! Greedy selection of the frequency rows whose removal moves the log-mel
//! representation most, and two ways of removing them: offline by an ideal
//! band-stop over the whole recording and online by a causal notch cascade.

mod bandstop;
mod notch;

pub use bandstop::apply_mask;
pub use notch::{compile_notch_cascade, compile_notch_cascade_at, NotchCascade, DEFAULT_NOTCH_Q, SHELF_CUT_DB};

use serde::{Deserialize, Serialize};

use crate::audio::{MelConfig, MelFilterbank, Spectrogram, LOG_FLOOR};
use crate::error::{Error, Result};

/// Sorted, duplicate-free set of STFT bins.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrequencyMask {
    bins: Vec<usize>,
    n_bins: usize,
}

impl FrequencyMask {
    /// `n_bins` is the one-sided bin count of the STFT the mask refers to.
    pub fn new(mut bins: Vec<usize>, n_bins: usize) -> Result<Self> {
        bins.sort_unstable();
        if bins.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("mask bins must be unique".into()));
        }
        if let Some(&b) = bins.last().filter(|&&b| b >= n_bins) {
            return Err(Error::InvalidArgument(format!(
                "mask bin {b} out of range for {n_bins} bins"
            )));
        }
        Ok(Self { bins, n_bins })
    }

    pub fn empty(n_bins: usize) -> Self {
        Self {
            bins: Vec::new(),
            n_bins,
        }
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn k(&self) -> usize {
        self.bins.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn contains(&self, bin: usize) -> bool {
        self.bins.binary_search(&bin).is_ok()
    }

    /// FFT size implied by the bin count.
    pub fn fft_size(&self) -> usize {
        2 * (self.n_bins - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreedyMaskConfig {
    pub k: usize,
    /// Candidate threshold relative to the strongest row norm.
    pub tau_p_rel: f64,
}

impl Default for GreedyMaskConfig {
    fn default() -> Self {
        Self {
            k: 12,
            tau_p_rel: 0.01,
        }
    }
}

impl GreedyMaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_p_rel > 0.0 && self.tau_p_rel <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_p_rel must be in (0, 1], got {}",
                self.tau_p_rel
            )));
        }
        Ok(())
    }
}

/// Log-mel deviation caused by zeroing each candidate row, in rank order
/// (largest first, ties to the lower bin). Non-candidates are absent.
pub fn greedy_scores(spec: &Spectrogram, config: &GreedyMaskConfig) -> Result<Vec<(usize, f64)>> {
    let (deltas, candidate) = row_deltas(spec, config)?;
    let scored: Vec<(usize, f64)> = (0..deltas.len()).filter(|&i| candidate[i]).map(|i| (i, deltas[i])).collect();
    Ok(rank(scored))
}

/// Sorts scores largest first, ties to the lower bin.
pub(crate) fn rank(mut scored: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

/// Single-row removal deviation of every row and whether the row reaches
/// the candidate threshold.
pub(crate) fn row_deltas(spec: &Spectrogram, config: &GreedyMaskConfig) -> Result<(Vec<f64>, Vec<bool>)> {
    config.validate()?;
    let fb = MelFilterbank::new(spec.sample_rate(), spec.config().fft_size, MelConfig::default());
    let nb = spec.n_bins();
    let nf = spec.n_frames();
    let mag = spec.magnitudes();
    let norms: Vec<f64> = (0..nb).map(|k| spec.row_norm(k)).collect();
    let tau = config.tau_p_rel * norms.iter().cloned().fold(0.0, f64::max);

    let n_bands = fb.n_bands();
    let mut mel = vec![0.0; nf * n_bands];
    for m in 0..nf {
        fb.apply_frame(&mag[m * nb..(m + 1) * nb], &mut mel[m * n_bands..(m + 1) * n_bands]);
    }
    // Zeroing row i only touches the bands whose triangle covers bin i.
    let deltas = (0..nb)
        .map(|i| {
            let mut d2 = 0.0;
            for &(b, w) in fb.bands_for_bin(i) {
                for m in 0..nf {
                    let e = mel[m * n_bands + b];
                    let before = e.max(LOG_FLOOR).ln();
                    let after = (e - w * mag[m * nb + i]).max(LOG_FLOOR).ln();
                    d2 += (before - after).powi(2);
                }
            }
            d2.sqrt()
        })
        .collect();
    Ok((deltas, norms.iter().map(|&n| n >= tau).collect()))
}

/// Top-k rows by single-removal log-mel deviation among rows whose norm
/// reaches `tau_p_rel` times the strongest row.
pub fn greedy_select(spec: &Spectrogram, config: &GreedyMaskConfig) -> Result<FrequencyMask> {
    let scored = greedy_scores(spec, config)?;
    if scored.len() < config.k {
        return Err(Error::NotEnoughCandidates {
            requested: config.k,
            available: scored.len(),
        });
    }
    FrequencyMask::new(scored[..config.k].iter().map(|s| s.0).collect(), spec.n_bins())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::StftConfig;
    use num_complex::Complex64;

    fn single_bin(bin: usize) -> Spectrogram {
        let cfg = StftConfig::new(30, 10).unwrap();
        let mut data = vec![Complex64::new(0.0, 0.0); 16 * 8];
        for m in 0..8 {
            data[m * 16 + bin] = Complex64::new(1.0, -0.5);
        }
        Spectrogram::from_parts(data, 8, cfg, 48_000, 60).unwrap()
    }

    #[test]
    fn single_energetic_bin_is_the_only_candidate() {
        let s = single_bin(3);
        let cfg = GreedyMaskConfig { k: 1, tau_p_rel: 0.01 };
        assert_eq!(greedy_select(&s, &cfg).unwrap().bins(), &[3]);
        let err = greedy_select(&s, &GreedyMaskConfig { k: 2, ..cfg }).unwrap_err();
        assert!(matches!(err, Error::NotEnoughCandidates { requested: 2, available: 1 }));
    }

    #[test]
    fn k_zero_is_empty() {
        let m = greedy_select(&single_bin(5), &GreedyMaskConfig { k: 0, tau_p_rel: 0.5 }).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.k(), 0);
    }

    #[test]
    fn threshold_is_validated() {
        for tau in [0.0, -1.0, 1.5, f64::NAN] {
            let cfg = GreedyMaskConfig { k: 1, tau_p_rel: tau };
            assert!(greedy_select(&single_bin(1), &cfg).is_err());
        }
    }

    #[test]
    fn mask_validation() {
        assert_eq!(FrequencyMask::new(vec![5, 1, 3], 16).unwrap().bins(), &[1, 3, 5]);
        assert!(FrequencyMask::new(vec![1, 1], 16).is_err());
        assert!(FrequencyMask::new(vec![16], 16).is_err());
        assert_eq!(FrequencyMask::empty(1025).fft_size(), 2048);
    }
}
