//! The four reference architectures with hand-written backward passes.
//!
//! Inputs are normalized log-mel frames, frame-major `t * 80 + band`.

use serde::{Deserialize, Serialize};

use super::frontend::N_BANDS;

pub(crate) const CONV_KERNEL: usize = 5;
pub(crate) const MIN_FRAMES: usize = CONV_KERNEL;
const STD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// Per-band mean and std, dense 160-128 tanh, dense 128-64.
    E1,
    /// Temporal conv 80-96 (kernel 5, ReLU), mean pool, dense 96-128.
    E2,
    /// Time-averaged fast and slow learnable exponential moving averages per
    /// band, dense 160-128.
    E3,
    /// Held-out evaluator: stat pool, dense 160-96 ReLU, dense 96-96.
    E4,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::E1, Arch::E2, Arch::E3, Arch::E4];

    pub fn embedding_dim(self) -> usize {
        match self {
            Arch::E1 => 64,
            Arch::E2 | Arch::E3 => 128,
            Arch::E4 => 96,
        }
    }

    /// Whether the architecture may take part in an optimization loss.
    pub fn is_holdout(self) -> bool {
        self == Arch::E4
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Arch::E1 => "e1",
            Arch::E2 => "e2",
            Arch::E3 => "e3",
            Arch::E4 => "e4",
        }
    }

    pub(crate) fn param_shapes(self) -> Vec<(&'static str, Vec<usize>)> {
        let f = 2 * N_BANDS;
        match self {
            Arch::E1 => vec![
                ("w1", vec![128, f]),
                ("b1", vec![128]),
                ("w2", vec![64, 128]),
                ("b2", vec![64]),
            ],
            Arch::E4 => vec![
                ("w1", vec![96, f]),
                ("b1", vec![96]),
                ("w2", vec![96, 96]),
                ("b2", vec![96]),
            ],
            Arch::E2 => vec![
                ("conv_w", vec![96, CONV_KERNEL, N_BANDS]),
                ("conv_b", vec![96]),
                ("w", vec![128, 96]),
                ("b", vec![128]),
            ],
            Arch::E3 => vec![
                ("decay_fast", vec![N_BANDS]),
                ("decay_slow", vec![N_BANDS]),
                ("w", vec![128, f]),
                ("b", vec![128]),
            ],
        }
    }
}

pub(crate) enum Cache {
    Stat {
        mean: Vec<f64>,
        std: Vec<f64>,
        hidden: Vec<f64>,
    },
    Conv {
        act: Vec<f64>,
        pooled: Vec<f64>,
    },
    Ema {
        fast: Vec<f64>,
        slow: Vec<f64>,
        feat: Vec<f64>,
    },
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + dot(&w[o * n_in..(o + 1) * n_in], x))
        .collect()
}

/// Accumulates parameter gradients (if requested) and returns `dL/dx`.
fn dense_back(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &w[o * n_in..(o + 1) * n_in], &mut dx);
        }
    }
    if let Some((dw, db)) = grads {
        for (o, &g) in dy.iter().enumerate() {
            db[o] += g;
            if g != 0.0 {
                axpy(g, x, &mut dw[o * n_in..(o + 1) * n_in]);
            }
        }
    }
    dx
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn stat_pool(z: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; N_BANDS];
    for fr in z.chunks_exact(N_BANDS) {
        axpy(1.0, fr, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; N_BANDS];
    for fr in z.chunks_exact(N_BANDS) {
        for ((v, x), m) in var.iter_mut().zip(fr).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.iter().map(|v| (v / t as f64 + STD_EPS).sqrt()).collect();
    (mean, std)
}

/// States of a zero-initialized EMA per band and their time average.
fn ema_run(z: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t = z.len() / N_BANDS;
    let mut s = vec![0.0; N_BANDS];
    let mut states = Vec::with_capacity(z.len());
    let mut pooled = vec![0.0; N_BANDS];
    for fr in z.chunks_exact(N_BANDS) {
        for ((si, &x), &ai) in s.iter_mut().zip(fr).zip(a) {
            *si = ai * *si + (1.0 - ai) * x;
        }
        states.extend_from_slice(&s);
        axpy(1.0 / t as f64, &s, &mut pooled);
    }
    (states, pooled)
}

/// Backward through one EMA pooling; adds into `dz` and `dtheta` (wrt the
/// pre-sigmoid decays) given the gradient on the pooled output.
fn ema_back(z: &[f64], states: &[f64], a: &[f64], d_pool: &[f64], dz: &mut [f64], dtheta: Option<&mut [f64]>) {
    let t = z.len() / N_BANDS;
    let g: Vec<f64> = d_pool.iter().map(|v| v / t as f64).collect();
    let mut r = vec![0.0; N_BANDS];
    let mut da = vec![0.0; N_BANDS];
    for m in (0..t).rev() {
        let zf = &z[m * N_BANDS..(m + 1) * N_BANDS];
        let dzf = &mut dz[m * N_BANDS..(m + 1) * N_BANDS];
        for b in 0..N_BANDS {
            r[b] = g[b] + a[b] * r[b];
            let prev = if m > 0 { states[(m - 1) * N_BANDS + b] } else { 0.0 };
            dzf[b] += (1.0 - a[b]) * r[b];
            da[b] += r[b] * (prev - zf[b]);
        }
    }
    if let Some(dt) = dtheta {
        for b in 0..N_BANDS {
            dt[b] += da[b] * a[b] * (1.0 - a[b]);
        }
    }
}

/// Unnormalized embedding of `t` frames.
pub(crate) fn forward(arch: Arch, p: &[Vec<f64>], z: &[f64], t: usize) -> (Vec<f64>, Cache) {
    debug_assert_eq!(z.len(), t * N_BANDS);
    match arch {
        Arch::E1 | Arch::E4 => {
            let (mean, std) = stat_pool(z, t);
            let feat = [mean.as_slice(), std.as_slice()].concat();
            let mut hidden = dense(&p[0], &p[1], &feat);
            if arch == Arch::E1 {
                hidden.iter_mut().for_each(|h| *h = h.tanh());
            } else {
                hidden.iter_mut().for_each(|h| *h = h.max(0.0));
            }
            let y = dense(&p[2], &p[3], &hidden);
            (y, Cache::Stat { mean, std, hidden })
        }
        Arch::E2 => {
            let (w, b) = (&p[0], &p[1]);
            let width = CONV_KERNEL * N_BANDS;
            let positions = t + 1 - CONV_KERNEL;
            let ch = b.len();
            let mut act = vec![0.0; positions * ch];
            let mut pooled = vec![0.0; ch];
            for s in 0..positions {
                let win = &z[s * N_BANDS..s * N_BANDS + width];
                for o in 0..ch {
                    let v = (b[o] + dot(&w[o * width..(o + 1) * width], win)).max(0.0);
                    act[s * ch + o] = v;
                    pooled[o] += v;
                }
            }
            pooled.iter_mut().for_each(|v| *v /= positions as f64);
            let y = dense(&p[2], &p[3], &pooled);
            (y, Cache::Conv { act, pooled })
        }
        Arch::E3 => {
            let af: Vec<f64> = p[0].iter().map(|&v| sigmoid(v)).collect();
            let asl: Vec<f64> = p[1].iter().map(|&v| sigmoid(v)).collect();
            let (fast, pf) = ema_run(z, &af);
            let (slow, ps) = ema_run(z, &asl);
            let feat = [pf, ps].concat();
            let y = dense(&p[2], &p[3], &feat);
            (y, Cache::Ema { fast, slow, feat })
        }
    }
}

/// Returns `dL/dz`; adds parameter gradients into `dp` when given.
pub(crate) fn backward(
    arch: Arch,
    p: &[Vec<f64>],
    z: &[f64],
    t: usize,
    cache: &Cache,
    dy: &[f64],
    mut dp: Option<&mut [Vec<f64>]>,
) -> Vec<f64> {
    let mut dz = vec![0.0; z.len()];
    match (arch, cache) {
        (Arch::E1 | Arch::E4, Cache::Stat { mean, std, hidden }) => {
            let (d_hidden_w, d_out) = match dp.as_deref_mut() {
                Some(g) => {
                    let (a, b) = g.split_at_mut(2);
                    let (w2, b2) = b.split_at_mut(1);
                    (Some(a), Some((w2[0].as_mut_slice(), b2[0].as_mut_slice())))
                }
                None => (None, None),
            };
            let mut dh = dense_back(&p[2], hidden, dy, d_out);
            for (d, &h) in dh.iter_mut().zip(hidden) {
                *d *= if arch == Arch::E1 {
                    1.0 - h * h
                } else if h > 0.0 {
                    1.0
                } else {
                    0.0
                };
            }
            let feat = [mean.as_slice(), std.as_slice()].concat();
            let g1 = d_hidden_w.map(|g| {
                let (w1, b1) = g.split_at_mut(1);
                (w1[0].as_mut_slice(), b1[0].as_mut_slice())
            });
            let df = dense_back(&p[0], &feat, &dh, g1);
            let (dmean, dstd) = df.split_at(N_BANDS);
            let tf = t as f64;
            for (m, fr) in z.chunks_exact(N_BANDS).enumerate() {
                let dzf = &mut dz[m * N_BANDS..(m + 1) * N_BANDS];
                for b in 0..N_BANDS {
                    dzf[b] = dmean[b] / tf + dstd[b] * (fr[b] - mean[b]) / (tf * std[b]);
                }
            }
        }
        (Arch::E2, Cache::Conv { act, pooled }) => {
            let (conv_g, dense_g) = match dp.as_deref_mut() {
                Some(g) => {
                    let (a, b) = g.split_at_mut(2);
                    let (w, bb) = b.split_at_mut(1);
                    (Some(a), Some((w[0].as_mut_slice(), bb[0].as_mut_slice())))
                }
                None => (None, None),
            };
            let dpool = dense_back(&p[2], pooled, dy, dense_g);
            let (w, b) = (&p[0], &p[1]);
            let width = CONV_KERNEL * N_BANDS;
            let positions = t + 1 - CONV_KERNEL;
            let ch = b.len();
            let scale: Vec<f64> = dpool.iter().map(|g| g / positions as f64).collect();
            let mut conv_g = conv_g;
            for s in 0..positions {
                let off = s * N_BANDS;
                for o in 0..ch {
                    if act[s * ch + o] <= 0.0 {
                        continue;
                    }
                    let g = scale[o];
                    axpy(g, &w[o * width..(o + 1) * width], &mut dz[off..off + width]);
                    if let Some(cg) = conv_g.as_deref_mut() {
                        let (cw, cb) = cg.split_at_mut(1);
                        axpy(g, &z[off..off + width], &mut cw[0][o * width..(o + 1) * width]);
                        cb[0][o] += g;
                    }
                }
            }
        }
        (Arch::E3, Cache::Ema { fast, slow, feat }) => {
            let (ema_g, dense_g) = match dp.as_deref_mut() {
                Some(g) => {
                    let (a, b) = g.split_at_mut(2);
                    let (w, bb) = b.split_at_mut(1);
                    (Some(a), Some((w[0].as_mut_slice(), bb[0].as_mut_slice())))
                }
                None => (None, None),
            };
            let df = dense_back(&p[2], feat, dy, dense_g);
            let af: Vec<f64> = p[0].iter().map(|&v| sigmoid(v)).collect();
            let asl: Vec<f64> = p[1].iter().map(|&v| sigmoid(v)).collect();
            match ema_g {
                Some(g) => {
                    let (gf, gs) = g.split_at_mut(1);
                    ema_back(z, fast, &af, &df[..N_BANDS], &mut dz, Some(&mut gf[0]));
                    ema_back(z, slow, &asl, &df[N_BANDS..], &mut dz, Some(&mut gs[0]));
                }
                None => {
                    ema_back(z, fast, &af, &df[..N_BANDS], &mut dz, None);
                    ema_back(z, slow, &asl, &df[N_BANDS..], &mut dz, None);
                }
            }
        }
        _ => unreachable!("cache does not match architecture"),
    }
    dz
}

/// Unit-norm output and the pullback through the normalization.
pub(crate) fn l2_normalize(y: &[f64]) -> (Vec<f64>, f64) {
    let n = dot(y, y).sqrt();
    if n == 0.0 {
        return (y.to_vec(), 0.0);
    }
    (y.iter().map(|v| v / n).collect(), n)
}

pub(crate) fn l2_normalize_back(e: &[f64], norm: f64, de: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; e.len()];
    }
    let proj = dot(e, de);
    e.iter().zip(de).map(|(ei, di)| (di - ei * proj) / norm).collect()
}
