use num_complex::Complex64;

use super::{fft, peak, Waveform};
use crate::error::{Error, Result};

/// Causal convolution truncated to the input length, peak-renormalized to the
/// input peak whenever the result would exceed full scale.
pub fn convolve(wave: &Waveform, rir: &[f64]) -> Result<Waveform> {
    if rir.is_empty() {
        return Err(Error::InvalidArgument("empty impulse response".into()));
    }
    if rir.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("impulse response".into()));
    }
    let mut y = convolve_raw(wave.samples(), rir);
    let p = peak(&y);
    if p > 1.0 {
        let g = wave.peak() / p;
        y.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Waveform::from_finite(y, wave.sample_rate()))
}

/// Linear convolution truncated to `x.len()`, without renormalization.
pub fn convolve_raw(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.len() <= 32 || x.len() <= 32 {
        convolve_direct(x, h)
    } else {
        FftConvolver::new(x, h.len()).convolve(h)
    }
}

/// Direct-sum convolution truncated to `x.len()`.
pub fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let taps = h.len().min(n + 1);
        *out = (0..taps).map(|j| h[j] * x[n - j]).sum();
    }
    y
}

/// `c[j] = sum_n g[n] x[n - j]` for `j < taps`: the gradient of
/// `<g, convolve_raw(x, h)>` with respect to `h`.
pub fn cross_correlate_prefix(g: &[f64], x: &[f64], taps: usize) -> Vec<f64> {
    FftConvolver::new(x, taps).correlate(g)
}

/// Convolution and correlation against a fixed signal whose spectrum is cached.
#[derive(Debug, Clone)]
pub struct FftConvolver {
    n_fft: usize,
    x_len: usize,
    max_taps: usize,
    x_spec: Vec<Complex64>,
}

impl FftConvolver {
    pub fn new(x: &[f64], max_taps: usize) -> Self {
        let n_fft = fft::good_size(x.len() + max_taps);
        let plan = fft::forward(n_fft);
        let mut buf = vec![0.0; n_fft];
        buf[..x.len()].copy_from_slice(x);
        let mut x_spec = plan.make_output_vec();
        plan.process(&mut buf, &mut x_spec).expect("fft length mismatch");
        Self {
            n_fft,
            x_len: x.len(),
            max_taps,
            x_spec,
        }
    }

    pub fn signal_len(&self) -> usize {
        self.x_len
    }

    pub fn convolve(&self, h: &[f64]) -> Vec<f64> {
        assert!(h.len() <= self.max_taps, "impulse response longer than planned");
        let fwd = fft::forward(self.n_fft);
        let inv = fft::inverse(self.n_fft);
        let mut buf = vec![0.0; self.n_fft];
        buf[..h.len()].copy_from_slice(h);
        let mut spec = fwd.make_output_vec();
        fwd.process(&mut buf, &mut spec).expect("fft length mismatch");
        for (s, x) in spec.iter_mut().zip(&self.x_spec) {
            *s *= x;
        }
        clear_edge_imag(&mut spec);
        inv.process(&mut spec, &mut buf).expect("fft length mismatch");
        let scale = 1.0 / self.n_fft as f64;
        buf.truncate(self.x_len);
        buf.iter_mut().for_each(|v| *v *= scale);
        buf
    }

    pub fn correlate(&self, g: &[f64]) -> Vec<f64> {
        assert!(g.len() <= self.x_len);
        let fwd = fft::forward(self.n_fft);
        let inv = fft::inverse(self.n_fft);
        let mut buf = vec![0.0; self.n_fft];
        buf[..g.len()].copy_from_slice(g);
        let mut spec = fwd.make_output_vec();
        fwd.process(&mut buf, &mut spec).expect("fft length mismatch");
        for (s, x) in spec.iter_mut().zip(&self.x_spec) {
            *s *= x.conj();
        }
        clear_edge_imag(&mut spec);
        inv.process(&mut spec, &mut buf).expect("fft length mismatch");
        let scale = 1.0 / self.n_fft as f64;
        buf.truncate(self.max_taps);
        buf.iter_mut().for_each(|v| *v *= scale);
        buf
    }
}

fn clear_edge_imag(spec: &mut [Complex64]) {
    spec[0].im = 0.0;
    let last = spec.len() - 1;
    spec[last].im = 0.0;
}
