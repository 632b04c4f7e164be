use super::FrequencyMask;
use crate::error::{Error, Result};

pub const DEFAULT_NOTCH_Q: f64 = 30.0;

/// Depth of the first-order shelves that stand in for DC and Nyquist notches.
pub const SHELF_CUT_DB: f64 = 60.0;

/// Transposed direct form II biquad; first-order sections leave b2 = a2 = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Section {
    b: [f64; 3],
    a: [f64; 2],
    s: [f64; 2],
}

impl Section {
    fn notch(w0: f64, q: f64) -> Self {
        let alpha = w0.sin() / (2.0 * q);
        let c = -2.0 * w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b: [1.0 / a0, c / a0, 1.0 / a0],
            a: [c / a0, (1.0 - alpha) / a0],
            s: [0.0; 2],
        }
    }

    /// Bilinear first-order low shelf: gain `g` at DC, unity well above `wc`.
    fn low_shelf(wc: f64, g: f64) -> Self {
        let k = (wc / 2.0).tan();
        let d = 1.0 + k;
        Self {
            b: [(1.0 + g * k) / d, (g * k - 1.0) / d, 0.0],
            a: [(k - 1.0) / d, 0.0],
            s: [0.0; 2],
        }
    }

    /// The low shelf mirrored to Nyquist (z -> -z).
    fn high_shelf(wc: f64, g: f64) -> Self {
        let mut s = Self::low_shelf(wc, g);
        s.b[1] = -s.b[1];
        s.a[0] = -s.a[0];
        s
    }

    #[inline]
    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s[0];
        self.s[0] = self.b[1] * x - self.a[0] * y + self.s[1];
        self.s[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Magnitude response at `w` rad/sample.
    fn gain(&self, w: f64) -> f64 {
        let z1 = num_complex::Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        (num / den).norm()
    }
}

/// Causal streaming filter removing the masked bins' centre frequencies.
/// Stateful: one instance per stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NotchCascade {
    sections: Vec<Section>,
    sample_rate: u32,
    centres_hz: Vec<f64>,
    q: f64,
}

/// One notch per masked bin at `bin * sample_rate / fft_size`. DC and
/// Nyquist get a first-order shelving cut of [`SHELF_CUT_DB`] instead, with
/// its corner half a bin away.
pub fn compile_notch_cascade(
    mask: &FrequencyMask,
    sample_rate: u32,
    fft_size: usize,
    q: f64,
) -> Result<NotchCascade> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("notch cascade needs a nonempty mask".into()));
    }
    if !(q > 0.0 && q.is_finite()) || sample_rate == 0 {
        return Err(Error::InvalidArgument(format!("bad notch q {q} or sample rate {sample_rate}")));
    }
    if fft_size != mask.fft_size() {
        return Err(Error::InvalidArgument(format!(
            "mask was built for fft size {}, got {fft_size}",
            mask.fft_size()
        )));
    }
    compile_notch_cascade_at(mask, sample_rate, sample_rate, q)
}

/// The cascade for a mask computed at `mask_rate`, running at `filter_rate`.
/// Centres keep their frequency in hertz; those at or above the new Nyquist
/// are dropped.
pub fn compile_notch_cascade_at(mask: &FrequencyMask, mask_rate: u32, filter_rate: u32, q: f64) -> Result<NotchCascade> {
    if !(q > 0.0 && q.is_finite()) || mask_rate == 0 || filter_rate == 0 {
        return Err(Error::InvalidArgument(format!("bad notch q {q} or sample rate {mask_rate}/{filter_rate}")));
    }
    let fft_size = mask.fft_size();
    let nyq = fft_size / 2;
    let g = 10f64.powf(-SHELF_CUT_DB / 20.0);
    let bin_hz = mask_rate as f64 / fft_size as f64;
    let to_w = |hz: f64| 2.0 * std::f64::consts::PI * hz / filter_rate as f64;
    let half_bin = to_w(bin_hz / 2.0);
    let mut sections = Vec::with_capacity(mask.k());
    let mut centres_hz = Vec::with_capacity(mask.k());
    for &bin in mask.bins() {
        let hz = bin as f64 * bin_hz;
        let section = if bin == 0 {
            Section::low_shelf(half_bin, g)
        } else if bin == nyq && mask_rate == filter_rate {
            Section::high_shelf(half_bin, g)
        } else if 2.0 * hz < filter_rate as f64 {
            Section::notch(to_w(hz), q)
        } else {
            continue;
        };
        sections.push(section);
        centres_hz.push(hz);
    }
    Ok(NotchCascade {
        sections,
        sample_rate: filter_rate,
        centres_hz,
        q,
    })
}

impl NotchCascade {
    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |v, s| s.tick(v))
    }

    pub fn process_in_place(&mut self, buf: &mut [f64]) {
        for v in buf {
            *v = self.process_sample(*v);
        }
    }

    pub fn process(&mut self, input: &[f64]) -> Vec<f64> {
        input.iter().map(|&x| self.process_sample(x)).collect()
    }

    pub fn reset(&mut self) {
        for s in &mut self.sections {
            s.s = [0.0; 2];
        }
    }

    /// Samples of lookahead; the cascade is purely recursive.
    pub fn lookahead(&self) -> usize {
        0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn centres_hz(&self) -> &[f64] {
        &self.centres_hz
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Steady-state magnitude response at `hz`.
    pub fn gain_at(&self, hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * hz / self.sample_rate as f64;
        self.sections.iter().map(|s| s.gain(w)).product()
    }

    /// Multiply-adds per sample.
    pub fn flops_per_sample(&self) -> usize {
        10 * self.sections.len()
    }
}
