//! Targeted sign-PGD on the impulse response taps.
//!
//! The objective is `J = L(x_tgt, y) - lambda L(x_in, y)` with
//! `y = x_out * (h + delta)`, minimized over `|delta|_inf <= eps`. Each
//! ensemble member is tracked on its own share of `J`; a member whose share
//! has not beaten its running best for `k_c` iterations is frozen and stops
//! contributing gradient for good. The loop ends when every member is frozen
//! or the iteration cap is reached, and returns the best iterate seen.
//!
//! The same loop refines a response shared by many recordings: the objective
//! is then summed over (x_out, x_in) pairs with one common target.

use serde::{Deserialize, Serialize};

use super::{contributions as contributions_of, targeted_terms};
use crate::audio::{peak, FftConvolver, Waveform};
use crate::encoders::EnsembleConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RirOptConfig {
    /// Perturbation budget relative to the largest seed tap.
    pub epsilon_rel: f64,
    /// Step size relative to the budget.
    pub alpha_rel: f64,
    pub max_iters: usize,
    /// Stagnant iterations before a member is frozen.
    pub k_c: usize,
    /// Weight of the repulsion from the protected voice.
    pub lambda_target: f64,
    /// Recorded for replay; the refinement itself draws no random numbers.
    pub seed: u64,
}

impl Default for RirOptConfig {
    fn default() -> Self {
        Self {
            epsilon_rel: 0.3,
            alpha_rel: 0.1,
            max_iters: 500,
            k_c: 20,
            lambda_target: 0.5,
            seed: 0,
        }
    }
}

impl RirOptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidArgument(format!("{what} out of range: {v}")));
        if !(self.epsilon_rel >= 0.0 && self.epsilon_rel.is_finite()) {
            return bad("epsilon_rel", self.epsilon_rel);
        }
        if !(self.alpha_rel > 0.0 && self.alpha_rel.is_finite()) {
            return bad("alpha_rel", self.alpha_rel);
        }
        if self.k_c == 0 {
            return bad("k_c", 0.0);
        }
        if !(self.lambda_target >= 0.0 && self.lambda_target.is_finite()) {
            return bad("lambda_target", self.lambda_target);
        }
        Ok(())
    }
}

/// State after one iteration; iteration 0 is the unperturbed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirStep {
    pub iter: usize,
    pub objective: f64,
    /// Each member's weighted share of the objective.
    pub contributions: Vec<f64>,
    pub max_abs_delta: f64,
    /// Members frozen once this iteration's bookkeeping is done.
    pub frozen: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirOptimization {
    pub taps: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
    pub best_iter: usize,
    pub trace: Vec<RirStep>,
}

impl RirOptimization {
    pub fn best_objective(&self) -> f64 {
        self.trace[self.best_iter].objective
    }
}

/// One (x_out, x_in) pair of a summed objective.
pub(crate) struct Sample<'a> {
    x: &'a [f64],
    conv: FftConvolver,
    x_peak: f64,
    input: Vec<Vec<f64>>,
}

impl<'a> Sample<'a> {
    pub fn new(x_out: &'a Waveform, input: Vec<Vec<f64>>, taps: usize) -> Result<Self> {
        crate::encoders::check_input(x_out)?;
        Ok(Self {
            x: x_out.samples(),
            conv: FftConvolver::new(x_out.samples(), taps),
            x_peak: x_out.peak(),
            input,
        })
    }
}

pub(crate) struct Objective<'a> {
    pub samples: Vec<Sample<'a>>,
    pub ens: &'a EnsembleConfig,
    pub target: Vec<Vec<f64>>,
    pub lambda: f64,
    /// Apply the full-scale guard of [`super::reverberate`]; the streaming
    /// path convolves without it.
    pub guard: bool,
}

/// Gain applied to the raw convolution, `x_peak / |y_raw[n]|` at the raw
/// peak `n` when that exceeds full scale.
#[derive(Clone, Copy)]
struct Guard {
    gain: f64,
    at: Option<(usize, f64)>,
}

/// Per-member contributions at one point and, for the members asked for,
/// each member's own tap gradient.
struct Point {
    contributions: Vec<f64>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Point {
    fn grad(&self, enabled: &[bool], n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (gi, _) in self.grads.iter().zip(enabled).filter(|(_, &e)| e) {
            for (a, b) in g.iter_mut().zip(gi.as_ref().expect("gradient of an enabled member")) {
                *a += b;
            }
        }
        g
    }
}

impl Objective<'_> {
    pub fn value(&self, h: &[f64]) -> f64 {
        self.at(h, &vec![false; self.ens.len()]).contributions.iter().sum()
    }

    fn render(&self, s: &Sample, h: &[f64]) -> (Vec<f64>, Guard) {
        let mut y = s.conv.convolve(h);
        let (at, p) = y
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(i, m), (j, v)| if v.abs() > m { (j, v.abs()) } else { (i, m) });
        if !self.guard || p <= 1.0 {
            return (y, Guard { gain: 1.0, at: None });
        }
        let raw_peak = y[at];
        let gain = s.x_peak / p;
        y.iter_mut().for_each(|v| *v *= gain);
        (y, Guard { gain, at: Some((at, raw_peak)) })
    }

    /// Contributions at `h`, plus tap gradients of the members flagged in
    /// `want`.
    fn at(&self, h: &[f64], want: &[bool]) -> Point {
        let m = self.ens.len();
        let mut contributions = vec![0.0; m];
        let mut grads: Vec<Option<Vec<f64>>> = want.iter().map(|&w| w.then(|| vec![0.0; h.len()])).collect();
        for s in &self.samples {
            let (y, guard) = self.render(s, h);
            let fw = self.ens.forward(&y);
            let terms = targeted_terms(&self.target, &s.input, self.lambda);
            for (c, v) in contributions.iter_mut().zip(contributions_of(self.ens, &fw.distances(&terms), self.lambda)) {
                *c += v;
            }
            for i in 0..m {
                let Some(acc) = grads[i].as_mut() else { continue };
                let mut only = vec![false; m];
                only[i] = true;
                let gy = fw.grad(&terms, Some(&only));
                let gh = tap_grad(s, &y, guard, &gy);
                for (a, b) in acc.iter_mut().zip(&gh) {
                    *a += b;
                }
            }
        }
        Point { contributions, grads }
    }
}

/// Pulls a sample gradient on the guarded output back to the taps.
fn tap_grad(s: &Sample, y: &[f64], guard: Guard, gy: &[f64]) -> Vec<f64> {
    let g = guard.gain;
    let mut gh = s.conv.correlate(gy);
    gh.iter_mut().for_each(|v| *v *= g);
    // y = g y_raw with g = x_peak / |y_raw[n]|, so dg/dh_j = -g x[n-j] / y_raw[n]
    if let Some((n, raw)) = guard.at {
        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
        for (j, v) in gh.iter_mut().enumerate().take(n + 1) {
            *v -= dot * s.x[n - j] / raw;
        }
    }
    gh
}

/// Refines `h_star` toward `x_tgt` and away from `x_in`.
pub fn optimize_rir(
    h_star: &[f64],
    x_out: &Waveform,
    x_in: &Waveform,
    x_tgt: &Waveform,
    ens: &EnsembleConfig,
    config: &RirOptConfig,
) -> Result<RirOptimization> {
    let obj = Objective {
        samples: vec![Sample::new(x_out, ens.embed_all(x_in)?, h_star.len())?],
        ens,
        target: ens.embed_all(x_tgt)?,
        lambda: config.lambda_target,
        guard: true,
    };
    run(h_star, &obj, config)
}

/// Targeted objective at taps `h` and its gradient over the taps, with all
/// members enabled.
pub fn targeted_objective(
    h: &[f64],
    x_out: &Waveform,
    x_in: &Waveform,
    x_tgt: &Waveform,
    ens: &EnsembleConfig,
    lambda_target: f64,
) -> Result<(f64, Vec<f64>)> {
    let obj = Objective {
        samples: vec![Sample::new(x_out, ens.embed_all(x_in)?, h.len())?],
        ens,
        target: ens.embed_all(x_tgt)?,
        lambda: lambda_target,
        guard: true,
    };
    let all = vec![true; ens.len()];
    let p = obj.at(h, &all);
    Ok((p.contributions.iter().sum(), p.grad(&all, h.len())))
}

pub(crate) fn run(h_star: &[f64], obj: &Objective, config: &RirOptConfig) -> Result<RirOptimization> {
    config.validate()?;
    if h_star.is_empty() || h_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("impulse response must be nonempty and finite".into()));
    }
    let n = h_star.len();
    let eps = config.epsilon_rel * peak(h_star);
    let alpha = config.alpha_rel * eps;
    let m = obj.ens.len();

    let mut frozen = vec![false; m];
    let p0 = obj.at(h_star, &vec![eps > 0.0; m]);
    let mut best_c = p0.contributions.clone();
    let mut stall = vec![0usize; m];
    let mut trace = vec![RirStep {
        iter: 0,
        objective: p0.contributions.iter().sum(),
        contributions: p0.contributions.clone(),
        max_abs_delta: 0.0,
        frozen: frozen.clone(),
    }];
    let mut best_iter = 0;
    let mut best_delta = vec![0.0; n];
    if eps == 0.0 {
        return Ok(RirOptimization {
            taps: h_star.to_vec(),
            epsilon: eps,
            alpha,
            best_iter,
            trace,
        });
    }

    let mut point = p0;
    let mut delta = vec![0.0; n];
    let mut h = h_star.to_vec();
    for iter in 1..=config.max_iters {
        let enabled: Vec<bool> = frozen.iter().map(|f| !f).collect();
        let grad = point.grad(&enabled, n);
        for ((d, hv), (&hs, gv)) in delta.iter_mut().zip(h.iter_mut()).zip(h_star.iter().zip(&grad)) {
            let step = if *gv > 0.0 {
                alpha
            } else if *gv < 0.0 {
                -alpha
            } else {
                0.0
            };
            *d = (*d - step).clamp(-eps, eps);
            *hv = hs + *d;
        }
        let want = if iter < config.max_iters { enabled } else { vec![false; m] };
        point = obj.at(&h, &want);
        for i in 0..m {
            if frozen[i] {
                continue;
            }
            if point.contributions[i] < best_c[i] {
                best_c[i] = point.contributions[i];
                stall[i] = 0;
            } else {
                stall[i] += 1;
                if stall[i] >= config.k_c {
                    frozen[i] = true;
                }
            }
        }
        let objective: f64 = point.contributions.iter().sum();
        if objective < trace[best_iter].objective {
            best_iter = iter;
            best_delta.copy_from_slice(&delta);
        }
        trace.push(RirStep {
            iter,
            objective,
            contributions: point.contributions.clone(),
            max_abs_delta: delta.iter().fold(0.0, |a, d| a.max(d.abs())),
            frozen: frozen.clone(),
        });
        if frozen.iter().all(|&f| f) {
            break;
        }
    }
    Ok(RirOptimization {
        taps: h_star.iter().zip(&best_delta).map(|(a, b)| a + b).collect(),
        epsilon: eps,
        alpha,
        best_iter,
        trace,
    })
}
