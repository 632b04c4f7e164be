//! Differentiable speaker encoders, their ensemble loss and the gradient of
//! that loss with respect to waveform samples.

mod frontend;
mod nets;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, PIPELINE_RATE};
use crate::error::{Error, Result};

pub use nets::Arch;
pub use train::{train_encoder, train_encoder_with_report, TrainConfig, TrainReport};

pub(crate) use frontend::{frontend, Features, N_BANDS};

/// Minimum input accepted by [`SpeakerEncoder::embed`], in seconds.
pub const MIN_EMBED_SECS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEncoder {
    arch: Arch,
    params: Vec<Vec<f64>>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    training_seed: u64,
    corpus_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    arch: Arch,
    embedding_dim: usize,
    shapes: BTreeMap<String, Vec<usize>>,
    weights: BTreeMap<String, Vec<f64>>,
    training_seed: u64,
    corpus_hash: String,
}

/// Forward state of one encoder on one signal, enough to pull a gradient on
/// the unit embedding back to the log-mel input.
pub(crate) struct Pass {
    z: Vec<f64>,
    cache: nets::Cache,
    pub embedding: Vec<f64>,
    norm: f64,
}

impl SpeakerEncoder {
    pub(crate) fn from_parts(
        arch: Arch,
        params: Vec<Vec<f64>>,
        input_mean: Vec<f64>,
        input_std: Vec<f64>,
        training_seed: u64,
        corpus_hash: String,
    ) -> Self {
        Self {
            arch,
            params,
            input_mean,
            input_std,
            training_seed,
            corpus_hash,
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim()
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    /// Shapes of every stored tensor, including the input normalization.
    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = self
            .arch
            .param_shapes()
            .into_iter()
            .map(|(n, s)| (n.to_string(), s))
            .collect();
        out.insert("input_mean".into(), vec![N_BANDS]);
        out.insert("input_std".into(), vec![N_BANDS]);
        out
    }

    /// Unit-norm embedding of a 48 kHz waveform at least one second long.
    pub fn embed(&self, wave: &Waveform) -> Result<Vec<f64>> {
        check_input(wave)?;
        Ok(self.embed_samples(wave.samples()))
    }

    pub(crate) fn embed_samples(&self, x: &[f64]) -> Vec<f64> {
        self.pass(&frontend().features(x)).embedding
    }

    pub(crate) fn normalized_frames(&self, f: &Features) -> Vec<f64> {
        let mut z = Vec::with_capacity(f.active.len() * N_BANDS);
        for &m in &f.active {
            let fr = &f.logmel[m * N_BANDS..(m + 1) * N_BANDS];
            z.extend(fr.iter().zip(&self.input_mean).zip(&self.input_std).map(|((v, mu), sd)| (v - mu) / sd));
        }
        z
    }

    pub(crate) fn pass(&self, f: &Features) -> Pass {
        let z = self.normalized_frames(f);
        let (y, cache) = nets::forward(self.arch, &self.params, &z, f.active.len());
        let (embedding, norm) = nets::l2_normalize(&y);
        Pass {
            z,
            cache,
            embedding,
            norm,
        }
    }

    /// Adds the log-mel gradient (all frames) implied by `de` on the
    /// embedding of `pass` into `g_logmel`.
    pub(crate) fn backward_into(&self, f: &Features, pass: &Pass, de: &[f64], g_logmel: &mut [f64]) {
        let dy = nets::l2_normalize_back(&pass.embedding, pass.norm, de);
        let dz = nets::backward(self.arch, &self.params, &pass.z, f.active.len(), &pass.cache, &dy, None);
        for (j, &m) in f.active.iter().enumerate() {
            let g = &mut g_logmel[m * N_BANDS..(m + 1) * N_BANDS];
            for ((gi, d), sd) in g.iter_mut().zip(&dz[j * N_BANDS..(j + 1) * N_BANDS]).zip(&self.input_std) {
                *gi += d / sd;
            }
        }
    }

    pub fn to_json(&self) -> String {
        let names = self.arch.param_shapes();
        let mut weights: BTreeMap<String, Vec<f64>> = names
            .iter()
            .zip(&self.params)
            .map(|((n, _), p)| (n.to_string(), p.clone()))
            .collect();
        weights.insert("input_mean".into(), self.input_mean.clone());
        weights.insert("input_std".into(), self.input_std.clone());
        let file = ModelFile {
            arch: self.arch,
            embedding_dim: self.embedding_dim(),
            shapes: self.shapes(),
            weights,
            training_seed: self.training_seed,
            corpus_hash: self.corpus_hash.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: ModelFile = crate::json::from_str(text)?;
        let schema = |field: String, message: String| Error::Schema { field, message };
        if file.embedding_dim != file.arch.embedding_dim() {
            return Err(schema(
                "embedding_dim".into(),
                format!("{:?} has dimension {}", file.arch, file.arch.embedding_dim()),
            ));
        }
        let mut expected: Vec<(String, Vec<usize>)> = file
            .arch
            .param_shapes()
            .into_iter()
            .map(|(n, s)| (n.to_string(), s))
            .collect();
        expected.push(("input_mean".into(), vec![N_BANDS]));
        expected.push(("input_std".into(), vec![N_BANDS]));
        if file.shapes.len() != expected.len() || file.weights.len() != expected.len() {
            return Err(schema("shapes".into(), format!("expected tensors {:?}", expected.iter().map(|e| &e.0).collect::<Vec<_>>())));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let declared = file
                .shapes
                .get(name)
                .ok_or_else(|| schema(format!("shapes.{name}"), "missing".into()))?;
            if declared != shape {
                return Err(schema(format!("shapes.{name}"), format!("expected {shape:?}, found {declared:?}")));
            }
            let data = file
                .weights
                .remove(name)
                .ok_or_else(|| schema(format!("weights.{name}"), "missing".into()))?;
            if data.len() != shape.iter().product::<usize>() {
                return Err(schema(format!("weights.{name}"), format!("expected {} values, found {}", shape.iter().product::<usize>(), data.len())));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("weights.{name}")));
            }
            tensors.push(data);
        }
        let input_std = tensors.pop().unwrap();
        let input_mean = tensors.pop().unwrap();
        if input_std.iter().any(|&s| s <= 0.0) {
            return Err(schema("weights.input_std".into(), "must be positive".into()));
        }
        Ok(Self::from_parts(file.arch, tensors, input_mean, input_std, file.training_seed, file.corpus_hash))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub(crate) fn check_input(wave: &Waveform) -> Result<()> {
    if wave.sample_rate() != PIPELINE_RATE {
        return Err(Error::InvalidArgument(format!(
            "encoders expect {PIPELINE_RATE} Hz input, got {} Hz",
            wave.sample_rate()
        )));
    }
    let needed = (MIN_EMBED_SECS * PIPELINE_RATE as f64) as usize;
    if wave.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: wave.len(),
        });
    }
    Ok(())
}

/// Free-function form of [`SpeakerEncoder::embed`].
pub fn embed(encoder: &SpeakerEncoder, wave: &Waveform) -> Result<Vec<f64>> {
    encoder.embed(wave)
}

/// The four trained models of a model directory (`e1.json` .. `e4.json`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    models: BTreeMap<Arch, SpeakerEncoder>,
}

impl ModelSet {
    pub fn new(models: Vec<SpeakerEncoder>) -> Self {
        Self {
            models: models.into_iter().map(|m| (m.arch(), m)).collect(),
        }
    }

    pub fn get(&self, arch: Arch) -> Option<&SpeakerEncoder> {
        self.models.get(&arch)
    }

    pub fn holdout(&self) -> Result<&SpeakerEncoder> {
        self.get(Arch::E4)
            .ok_or_else(|| Error::InvalidArgument("model set has no E4 evaluator".into()))
    }

    /// E1..E3 with default weights.
    pub fn ensemble(&self) -> Result<EnsembleConfig> {
        let members: Vec<SpeakerEncoder> = self
            .models
            .values()
            .filter(|m| !m.arch().is_holdout())
            .cloned()
            .collect();
        EnsembleConfig::with_default_weights(members)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for m in self.models.values() {
            m.save(&dir.join(format!("{}.json", m.arch().file_stem())))?;
        }
        Ok(())
    }

    /// Loads every `eN.json` present; at least one must exist.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut models = Vec::new();
        for arch in Arch::ALL {
            let path = dir.join(format!("{}.json", arch.file_stem()));
            if path.exists() {
                let m = SpeakerEncoder::load(&path)?;
                if m.arch() != arch {
                    return Err(Error::Schema {
                        field: "arch".into(),
                        message: format!("{} holds {:?}", path.display(), m.arch()),
                    });
                }
                models.push(m);
            }
        }
        if models.is_empty() {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no model files")));
        }
        Ok(Self::new(models))
    }
}

/// Weighted surrogate ensemble. The held-out evaluator cannot be a member.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    encoders: Vec<SpeakerEncoder>,
    weights: Vec<f64>,
}

/// One weighted distance term of an objective: `coef * sum_i w_i ||E_i(x) - r_i||`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Term<'a> {
    pub reference: &'a [Vec<f64>],
    pub coef: f64,
}

/// Value and optional sample gradient.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub grad: Option<Vec<f64>>,
}

impl EnsembleConfig {
    pub fn new(encoders: Vec<SpeakerEncoder>, weights: Vec<f64>) -> Result<Self> {
        if encoders.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one encoder".into()));
        }
        if encoders.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} encoders but {} weights",
                encoders.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("ensemble weight {w} is not positive")));
        }
        if encoders.iter().any(|e| e.arch().is_holdout()) {
            return Err(Error::InvalidArgument(
                "the held-out evaluator cannot be part of an optimization ensemble".into(),
            ));
        }
        Ok(Self { encoders, weights })
    }

    /// Weights `1/sqrt(embedding_dim)`, which evens out distance scales.
    pub fn with_default_weights(encoders: Vec<SpeakerEncoder>) -> Result<Self> {
        let weights = encoders.iter().map(|e| 1.0 / (e.embedding_dim() as f64).sqrt()).collect();
        Self::new(encoders, weights)
    }

    pub fn encoders(&self) -> &[SpeakerEncoder] {
        &self.encoders
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty()
    }

    /// Same members, every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.encoders.clone(), self.weights.iter().map(|w| w * c).collect())
    }

    /// Embeddings of `wave` under every member, in order.
    pub fn embed_all(&self, wave: &Waveform) -> Result<Vec<Vec<f64>>> {
        check_input(wave)?;
        Ok(self.embed_all_samples(wave.samples()))
    }

    pub(crate) fn embed_all_samples(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let f = frontend().features(x);
        self.encoders.iter().map(|e| e.pass(&f).embedding).collect()
    }

    /// Unweighted per-member distances between two embedding sets.
    pub fn distances(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| l2(x, y)).collect()
    }

    pub fn loss_between(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        self.distances(a, b).iter().zip(&self.weights).map(|(d, w)| d * w).sum()
    }

    /// Evaluates `sum_terms coef * sum_i w_i ||E_i(x) - ref_i||` over the
    /// members enabled in `enabled` (all when `None`), optionally with its
    /// gradient wrt the samples of `x`.
    pub(crate) fn evaluate(&self, x: &[f64], terms: &[Term], enabled: Option<&[bool]>, want_grad: bool) -> Evaluation {
        let fw = self.forward(x);
        let distances = fw.distances(terms);
        let on = |i: usize| enabled.map_or(true, |e| e[i]);
        let mut value = 0.0;
        for (k, term) in terms.iter().enumerate() {
            for (i, w) in self.weights.iter().enumerate() {
                if on(i) {
                    value += term.coef * w * distances[k][i];
                }
            }
        }
        let grad = want_grad.then(|| fw.grad(terms, enabled));
        Evaluation { value, grad }
    }

    /// Runs every member forward once; distances and gradients for any
    /// objective can then be read off without repeating the forward pass.
    pub(crate) fn forward(&self, x: &[f64]) -> Forward<'_> {
        let f = frontend().features(x);
        let passes = self.encoders.iter().map(|e| e.pass(&f)).collect();
        Forward {
            ens: self,
            f,
            passes,
        }
    }
}

pub(crate) struct Forward<'a> {
    ens: &'a EnsembleConfig,
    f: Features,
    passes: Vec<Pass>,
}

impl Forward<'_> {
    /// Unweighted distances, `[term][member]`.
    pub fn distances(&self, terms: &[Term]) -> Vec<Vec<f64>> {
        terms
            .iter()
            .map(|t| self.passes.iter().zip(t.reference).map(|(p, r)| l2(&p.embedding, r)).collect())
            .collect()
    }

    /// Sample gradient of the objective restricted to the enabled members.
    pub fn grad(&self, terms: &[Term], enabled: Option<&[bool]>) -> Vec<f64> {
        let mut g_logmel = vec![0.0; self.f.logmel.len()];
        for (i, (enc, &w)) in self.ens.encoders.iter().zip(&self.ens.weights).enumerate() {
            if !enabled.map_or(true, |e| e[i]) {
                continue;
            }
            let pass = &self.passes[i];
            let mut de = vec![0.0; pass.embedding.len()];
            for term in terms {
                let r = &term.reference[i];
                let d = l2(&pass.embedding, r);
                // zero subgradient at the kink
                if d > 0.0 {
                    let s = term.coef * w / d;
                    for ((g, a), b) in de.iter_mut().zip(&pass.embedding).zip(r) {
                        *g += s * (a - b);
                    }
                }
            }
            if de.iter().any(|&v| v != 0.0) {
                enc.backward_into(&self.f, pass, &de, &mut g_logmel);
            }
        }
        frontend().backward(&self.f, &g_logmel)
    }
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `sum_i w_i ||E_i(a) - E_i(b)||_2`.
pub fn ensemble_loss(config: &EnsembleConfig, a: &Waveform, b: &Waveform) -> Result<f64> {
    let ea = config.embed_all(a)?;
    let eb = config.embed_all(b)?;
    Ok(config.loss_between(&ea, &eb))
}

/// Gradient of `ensemble_loss(a, reference)` over the samples of `a`.
pub fn loss_grad_wrt_waveform(config: &EnsembleConfig, a: &Waveform, reference: &Waveform) -> Result<Vec<f64>> {
    check_input(a)?;
    let r = config.embed_all(reference)?;
    let term = Term {
        reference: &r,
        coef: 1.0,
    };
    Ok(config.evaluate(a.samples(), &[term], None, true).grad.unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub step: f64,
    pub indices: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

/// Central-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Compares the analytic gradient of the ensemble loss against central
/// differences on `n_coords` random samples. The reference signal is `wave`
/// plus seeded white noise, so the loss sits away from its kink.
pub fn grad_check(config: &EnsembleConfig, wave: &Waveform, n_coords: usize, seed: u64) -> Result<GradReport> {
    grad_check_with_step(config, wave, n_coords, seed, GRAD_CHECK_STEP)
}

/// [`grad_check`] with an explicit finite-difference step.
pub fn grad_check_with_step(
    config: &EnsembleConfig,
    wave: &Waveform,
    n_coords: usize,
    seed: u64,
    step: f64,
) -> Result<GradReport> {
    check_input(wave)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} must be positive")));
    }
    let x = wave.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_coords.min(x.len());
    let mut indices = sample(&mut rng, x.len(), n).into_vec();
    indices.sort_unstable();
    let reference: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.02..0.02)).collect();
    let r = config.embed_all_samples(&reference);
    let terms = [Term {
        reference: &r,
        coef: 1.0,
    }];
    if n == 0 {
        return Ok(GradReport {
            step,
            indices,
            analytic: Vec::new(),
            numeric: Vec::new(),
            max_rel_err: 0.0,
        });
    }
    let full = config.evaluate(x, &terms, None, true).grad.unwrap();
    let analytic: Vec<f64> = indices.iter().map(|&i| full[i]).collect();
    let mut probe = x.to_vec();
    let numeric: Vec<f64> = indices
        .iter()
        .map(|&i| {
            probe[i] = x[i] + step;
            let up = config.evaluate(&probe, &terms, None, false).value;
            probe[i] = x[i] - step;
            let down = config.evaluate(&probe, &terms, None, false).value;
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect();
    let max_rel_err = relative_errors(&analytic, &numeric).into_iter().fold(0.0, f64::max);
    Ok(GradReport {
        step,
        indices,
        analytic,
        numeric,
        max_rel_err,
    })
}

/// `|a - n| / max(|a|, |n|, floor)`, where the floor is a small fraction of
/// the largest analytic entry so that near-zero entries are judged on the
/// gradient's own scale rather than on round-off.
pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (REL_ERR_FLOOR * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect()
}

const REL_ERR_FLOOR: f64 = 1e-3;
