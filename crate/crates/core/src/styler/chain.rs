//! The parametric effects chain: eight peaking EQ bands, a feed-forward
//! compressor and a spectral tilt, followed by peak renormalization.

use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::STYLE_DIM;

/// Centre frequencies of the EQ bands, log-spaced 60 Hz .. 16 kHz.
pub fn band_centres() -> [f64; 8] {
    let r = (16_000.0f64 / 60.0).powf(1.0 / 7.0);
    std::array::from_fn(|j| 60.0 * r.powi(j as i32))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub band_gain_db: [f64; 8],
    pub band_q: [f64; 8],
    pub threshold_db: f64,
    pub ratio: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub tilt_db_per_octave: f64,
    pub tilt_pivot_hz: f64,
}

impl StyleParams {
    /// Every stage at its identity setting.
    pub fn neutral() -> Self {
        Self::from_offset(&[0.0; STYLE_DIM])
    }

    /// Maps a style offset (target style minus the input's own style, so each
    /// coordinate lies in [-2, 2]) to chain parameters. A zero offset is the
    /// identity chain.
    pub fn from_offset(d: &[f64; STYLE_DIM]) -> Self {
        Self {
            band_gain_db: std::array::from_fn(|j| {
                12.0 * (3.0 * d[j]).tanh() + 3.0 * d[24 + j].clamp(-1.0, 1.0)
            }),
            band_q: std::array::from_fn(|j| 0.7 + 3.3 * sigmoid(4.0 * d[8 + j])),
            threshold_db: -20.0 + 20.0 * d[16].tanh(),
            // even in the offset: ratio 1 is both the neutral point and the
            // bottom of the range
            ratio: 1.0 + 7.0 * (2.0 * d[17].abs()).tanh(),
            attack_ms: 50f64.powf(sigmoid(2.0 * d[18])),
            release_ms: 20.0 * 25f64.powf(sigmoid(2.0 * d[19])),
            tilt_db_per_octave: 6.0 * (2.0 * d[20]).tanh(),
            tilt_pivot_hz: 1000.0 * 4f64.powf(d[21].tanh()),
        }
    }

    pub fn is_neutral(&self) -> bool {
        self.band_gain_db.iter().all(|&g| g == 0.0) && self.ratio == 1.0 && self.tilt_db_per_octave == 0.0
    }

    /// Runs the chain without the final peak renormalization.
    pub fn render(&self, x: &[f64], sample_rate: u32) -> Vec<f64> {
        let mut y = x.to_vec();
        let fs = sample_rate as f64;
        for (j, &fc) in band_centres().iter().enumerate() {
            let g = self.band_gain_db[j];
            if g == 0.0 || fc >= 0.45 * fs {
                continue;
            }
            peaking(&mut y, fc / fs, self.band_q[j], g);
        }
        if self.ratio != 1.0 {
            compress(&mut y, fs, self.threshold_db, self.ratio, self.attack_ms, self.release_ms);
        }
        if self.tilt_db_per_octave != 0.0 {
            tilt(&mut y, fs, self.tilt_db_per_octave, self.tilt_pivot_hz);
        }
        y
    }
}

/// RBJ peaking biquad, transposed direct form II.
fn peaking(x: &mut [f64], f_norm: f64, q: f64, gain_db: f64) {
    let a = 10f64.powf(gain_db / 40.0);
    let w0 = 2.0 * std::f64::consts::PI * f_norm;
    let alpha = w0.sin() / (2.0 * q);
    let c = -2.0 * w0.cos();
    let a0 = 1.0 + alpha / a;
    let (b0, b1, b2) = ((1.0 + alpha * a) / a0, c / a0, (1.0 - alpha * a) / a0);
    let (a1, a2) = (c / a0, (1.0 - alpha / a) / a0);
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in x {
        let y = b0 * *v + s1;
        s1 = b1 * *v - a1 * y + s2;
        s2 = b2 * *v - a2 * y;
        *v = y;
    }
}

/// Feed-forward compressor on a peak envelope with separate attack and
/// release smoothing.
fn compress(x: &mut [f64], fs: f64, threshold_db: f64, ratio: f64, attack_ms: f64, release_ms: f64) {
    let coef = |ms: f64| (-1.0 / (ms * 1e-3 * fs)).exp();
    let (ca, cr) = (coef(attack_ms), coef(release_ms));
    let mut env = 0.0f64;
    for v in x {
        let level = v.abs();
        let c = if level > env { ca } else { cr };
        env = c * env + (1.0 - c) * level;
        let level_db = 20.0 * env.max(1e-12).log10();
        let over = level_db - threshold_db;
        if over > 0.0 {
            *v *= 10f64.powf(over * (1.0 / ratio - 1.0) / 20.0);
        }
    }
}

/// Zero-phase spectral tilt over the whole signal: `slope` dB per octave
/// around `pivot`, with the gain held constant below 20 Hz.
fn tilt(x: &mut [f64], fs: f64, slope: f64, pivot: f64) {
    let n = x.len();
    if n < 2 {
        return;
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec = fwd.make_output_vec();
    fwd.process(x, &mut spec).expect("fft length mismatch");
    for (q, c) in spec.iter_mut().enumerate() {
        let f = (q as f64 * fs / n as f64).max(20.0);
        let g = 10f64.powf(slope * (f / pivot).log2() / 20.0);
        *c *= g;
    }
    spec[0].im = 0.0;
    if n % 2 == 0 {
        let last = spec.len() - 1;
        spec[last] = Complex64::new(spec[last].re, 0.0);
    }
    inv.process(&mut spec, x).expect("fft length mismatch");
    let norm = 1.0 / n as f64;
    for v in x.iter_mut() {
        *v *= norm;
    }
}
