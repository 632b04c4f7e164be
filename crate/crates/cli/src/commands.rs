use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use voiceshield::audio::{load_wav, save_wav, WavEncoding, Waveform};
use voiceshield::encoders::{train_encoder_with_report, Arch, ModelSet, TrainConfig};
use voiceshield::eval::{
    attack_transform, cosine, deconvolve, distortion_metrics, project_embeddings_2d, Attack, DistortionMetrics,
    ThresholdPolicy, TrialManifest,
};
use voiceshield::livemask::{calibrate as calibrate_profile, save_profile, LiveMaskConfig};
use voiceshield::reverb::{prepare_rir_seeds, protect as run_protect, PipelineConfig, ProtectionReport};
use voiceshield::toyspeech::Corpus;
use voiceshield::Error;

use crate::{AttackArgs, CalibrateArgs, CliError, EvaluateArgs, GenCorpusArgs, ProtectArgs, TrainArgs};

type CliResult = Result<(), CliError>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T, Error> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            voiceshield::json::from_str(&text)
        }
    }
}

pub fn gen_corpus(a: GenCorpusArgs) -> CliResult {
    if a.speakers == 0 || a.utts == 0 {
        return Err(CliError::Usage("--speakers and --utts must be at least 1".into()));
    }
    if !(a.seconds > 0.0) {
        return Err(CliError::Usage("--seconds must be positive".into()));
    }
    let corpus = Corpus::generate(a.speakers, a.utts, a.seconds, a.seed)?;
    corpus.save(&a.out, WavEncoding::Float32)?;
    log::info!("wrote {} utterances to {}", corpus.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingReport {
    pub corpus_hash: String,
    pub config: TrainConfig,
    pub encoders: Vec<EncoderReport>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderReport {
    pub arch: Arch,
    pub holdout: bool,
    pub embedding_dim: usize,
    pub accuracy: f64,
    pub epoch_loss: Vec<f64>,
}

pub fn train_encoders(a: TrainArgs) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    let mut config = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    let mut models = Vec::new();
    let mut encoders = Vec::new();
    for arch in Arch::ALL {
        log::info!("training {arch:?}");
        let (m, report) = train_encoder_with_report(arch, &corpus, &config)?;
        encoders.push(EncoderReport {
            arch,
            holdout: arch.is_holdout(),
            embedding_dim: m.embedding_dim(),
            accuracy: report.epoch_accuracy.last().copied().unwrap_or(0.0),
            epoch_loss: report.epoch_loss,
        });
        models.push(m);
    }
    ModelSet::new(models).save_dir(&a.out)?;
    write_json(
        &a.out.join("training_report.json"),
        &TrainingReport {
            corpus_hash: corpus.hash(),
            config,
            encoders,
        },
    )?;
    Ok(())
}

/// Everything `protect` records about a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectMetrics {
    pub input: String,
    pub sample_rate: u32,
    pub samples: usize,
    pub speaker: Option<String>,
    pub pool_hash: String,
    pub model_corpus_hash: String,
    /// Cosine between held-out embeddings of the input and the output.
    pub holdout_similarity: Option<f64>,
    pub distortion: Option<DistortionMetrics>,
    pub report: ProtectionReport,
}

pub fn protect(a: ProtectArgs) -> CliResult {
    let config: PipelineConfig = read_config(a.config.as_ref())?;
    config.validate()?;
    let x = load_wav(&a.input)?;
    let models = ModelSet::load_dir(&a.models)?;
    let ens = models.ensemble()?;
    let seeds = prepare_rir_seeds(&a.rirs)?;
    let pool = Corpus::load(&a.pool)?;
    let result = run_protect(&x, &ens, &seeds, &pool, a.speaker.as_deref(), &config)?;
    save_wav(&a.out, &result.audio, WavEncoding::Float32)?;
    if let Some(path) = &a.metrics {
        let holdout = models.holdout().ok();
        let silent = x.peak() == 0.0;
        let holdout_similarity = match holdout {
            Some(e4) if !silent => Some(cosine(&e4.embed(&x)?, &e4.embed(&result.audio)?)),
            _ => None,
        };
        let metrics = ProtectMetrics {
            input: a.input.display().to_string(),
            sample_rate: x.sample_rate(),
            samples: x.len(),
            speaker: a.speaker.clone(),
            pool_hash: pool.hash(),
            model_corpus_hash: ens.encoders()[0].corpus_hash().to_string(),
            holdout_similarity,
            distortion: if silent { None } else { Some(distortion_metrics(&x, &result.audio)?) },
            report: result.report,
        };
        write_json(path, &metrics)?;
    }
    Ok(())
}

pub fn calibrate(a: CalibrateArgs) -> CliResult {
    let config: LiveMaskConfig = read_config(a.config.as_ref())?;
    let corpus = Corpus::load(&a.corpus)?;
    let models = ModelSet::load_dir(&a.models)?;
    let seeds = prepare_rir_seeds(&a.rirs)?;
    let pool = Corpus::load(&a.pool)?;
    let profile = calibrate_profile(&corpus, &seeds, &pool, &models.ensemble()?, &config)?;
    save_profile(&a.out, &profile)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub rejection_rate: Option<f64>,
}

impl ScoreSummary {
    fn of(scores: &[f64], policy: &ThresholdPolicy) -> Self {
        let n = scores.len();
        let fold = |f: fn(f64, f64) -> f64, init| (n > 0).then(|| scores.iter().copied().fold(init, f));
        Self {
            count: n,
            mean: (n > 0).then(|| scores.iter().sum::<f64>() / n as f64),
            min: fold(f64::min, f64::INFINITY),
            max: fold(f64::max, f64::NEG_INFINITY),
            rejection_rate: (n > 0).then(|| scores.iter().filter(|&&s| s < policy.value).count() as f64 / n as f64),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub policy: ThresholdPolicy,
    pub rejection_rate: f64,
    pub same_speaker: ScoreSummary,
    pub different_speaker: ScoreSummary,
    pub scores: Vec<f64>,
}

fn parse_threshold(arg: &str, same: &[f64], different: &[f64]) -> Result<ThresholdPolicy, CliError> {
    if arg == "eer" {
        return Ok(ThresholdPolicy::eer(same, different)?);
    }
    let value = arg
        .strip_prefix("fixed:")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| CliError::Usage(format!("--threshold must be `fixed:<value>` or `eer`, got `{arg}`")))?;
    Ok(ThresholdPolicy::fixed(value)?)
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let (_, trials) = TrialManifest::load(&a.trials)?;
    let models = ModelSet::load_dir(&a.models)?;
    let e4 = models.holdout()?;
    let scores = trials.iter().map(|t| t.score(e4)).collect::<Result<Vec<_>, _>>()?;
    let pick = |same: bool| -> Vec<f64> {
        trials.iter().zip(&scores).filter(|(t, _)| t.same_speaker == same).map(|(_, s)| *s).collect()
    };
    let (same, different) = (pick(true), pick(false));
    let policy = parse_threshold(&a.threshold, &same, &different)?;
    let report = EvaluationReport {
        policy,
        rejection_rate: voiceshield::eval::rejection_rate_of(&scores, &policy)?,
        same_speaker: ScoreSummary::of(&same, &policy),
        different_speaker: ScoreSummary::of(&different, &policy),
        scores,
    };
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    if let Some(p) = &a.projection {
        let emb = trials.iter().map(|t| e4.embed(&t.probe)).collect::<Result<Vec<_>, _>>()?;
        let proj = project_embeddings_2d(&emb, 0)?;
        std::fs::write(p, proj.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Quant,
    Resample,
    Lowpass,
    Melinv,
    Deconv,
}

pub fn attack(a: AttackArgs) -> CliResult {
    let x = load_wav(&a.input)?;
    let y: Waveform = match a.method {
        Method::Deconv => {
            let path = a.rir.as_ref().ok_or_else(|| CliError::Usage("--method deconv needs --rir".into()))?;
            deconvolve(&x, load_wav(path)?.samples(), a.beta)?
        }
        Method::Quant => attack_transform(Attack::Quantize { bits: a.bits }, &x)?,
        Method::Resample => attack_transform(Attack::ResampleDownUp { rate: a.rate }, &x)?,
        Method::Lowpass => attack_transform(Attack::Lowpass { cutoff_hz: a.cutoff }, &x)?,
        Method::Melinv => attack_transform(Attack::MelInvert { iterations: a.iterations }, &x)?,
    };
    save_wav(&a.out, &y, WavEncoding::Float32)?;
    Ok(())
}
