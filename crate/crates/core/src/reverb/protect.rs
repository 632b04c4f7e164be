//! The offline pipeline: mask, restyle, pick and refine a reverberation.

use serde::{Deserialize, Serialize};

use super::{optimize_rir, reverberate, select_rir, select_target, RirOptConfig, RirOptimization, RirSeed, RirSelectConfig};
use crate::audio::{stft, StftConfig, Waveform};
use crate::encoders::EnsembleConfig;
use crate::error::{Error, Result};
use crate::specmask::{apply_mask, greedy_select, GreedyMaskConfig};
use crate::styler::{optimize_style, spectral_distance, StyleTrace, StyleTransferConfig, StyleVector};
use crate::toyspeech::Corpus;

/// Every tunable of the pipeline in one flat, serializable record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub k_mask: usize,
    pub tau_p_rel: f64,
    pub style_tau_rel: f64,
    pub lambda_l: f64,
    pub lambda_target: f64,
    pub epsilon_rel: f64,
    pub max_iters: usize,
    pub k_c: usize,
    pub livemask_k: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mask = GreedyMaskConfig::default();
        let opt = RirOptConfig::default();
        Self {
            k_mask: mask.k,
            tau_p_rel: mask.tau_p_rel,
            style_tau_rel: StyleTransferConfig::default().tau_rel,
            lambda_l: RirSelectConfig::default().lambda_l,
            lambda_target: opt.lambda_target,
            epsilon_rel: opt.epsilon_rel,
            max_iters: opt.max_iters,
            k_c: opt.k_c,
            livemask_k: 16,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn mask(&self) -> GreedyMaskConfig {
        GreedyMaskConfig {
            k: self.k_mask,
            tau_p_rel: self.tau_p_rel,
        }
    }

    pub fn style(&self) -> StyleTransferConfig {
        StyleTransferConfig {
            tau_rel: self.style_tau_rel,
        }
    }

    pub fn rir_select(&self) -> RirSelectConfig {
        RirSelectConfig {
            lambda_l: self.lambda_l,
        }
    }

    pub fn rir_opt(&self) -> RirOptConfig {
        RirOptConfig {
            epsilon_rel: self.epsilon_rel,
            max_iters: self.max_iters,
            k_c: self.k_c,
            lambda_target: self.lambda_target,
            seed: self.seed,
            ..RirOptConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mask().validate()?;
        self.rir_opt().validate()?;
        let check = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Schema {
                    field: name.into(),
                    message: format!("must be a finite non-negative number, got {v}"),
                })
            }
        };
        check("style_tau_rel", self.style_tau_rel)?;
        check("lambda_l", self.lambda_l)?;
        if self.livemask_k == 0 {
            return Err(Error::Schema {
                field: "livemask_k".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mask,
    Style,
    ReverbSeed,
    ReverbOpt,
}

/// Ensemble loss and magnitude-spectrogram distance against the raw input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: Stage,
    pub ensemble_loss: f64,
    pub spectral_distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRir {
    pub id: String,
    pub duration_ms: f64,
    pub score: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTarget {
    pub speaker: String,
    pub utterance: String,
    pub score: f64,
}

/// Everything `protect` decided, in a form fit for a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionReport {
    pub config: PipelineConfig,
    pub masked_bins: Vec<usize>,
    pub style: StyleVector,
    pub style_trace: StyleTrace,
    pub rir_seed: SelectedRir,
    pub target: SelectedTarget,
    pub rir: RirOptimization,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionResult {
    pub audio: Waveform,
    pub report: ProtectionReport,
}

/// Runs the three stages on `x_raw`. `protected_speaker` keeps that
/// speaker's own recordings out of the target pool.
pub fn protect(
    x_raw: &Waveform,
    ens: &EnsembleConfig,
    seeds: &[RirSeed],
    pool: &Corpus,
    protected_speaker: Option<&str>,
    config: &PipelineConfig,
) -> Result<ProtectionResult> {
    config.validate()?;
    let reference = ens.embed_all(x_raw)?;
    let stft_cfg = StftConfig::default();
    let checkpoint = |stage, w: &Waveform| -> Result<Checkpoint> {
        Ok(Checkpoint {
            stage,
            ensemble_loss: ens.loss_between(&ens.embed_all(w)?, &reference),
            spectral_distortion: spectral_distance(x_raw, w),
        })
    };

    let mask = greedy_select(&stft(x_raw, stft_cfg)?, &config.mask())?;
    let x_masked = apply_mask(x_raw, &mask, stft_cfg)?;
    let mut checkpoints = vec![checkpoint(Stage::Mask, &x_masked)?];

    let styled = optimize_style(x_raw, &x_masked, ens, &config.style())?;
    let x_out = styled.audio;
    checkpoints.push(checkpoint(Stage::Style, &x_out)?);

    let selection = select_rir(seeds, &x_out, x_raw, ens, &config.rir_select())?;
    checkpoints.push(checkpoint(Stage::ReverbSeed, &reverberate(&x_out, &selection.seed.taps)?)?);

    let target = select_target(pool, x_raw, protected_speaker, ens)?;
    let rir = optimize_rir(&selection.seed.taps, &x_out, x_raw, &target.wave, ens, &config.rir_opt())?;
    let audio = reverberate(&x_out, &rir.taps)?;
    checkpoints.push(checkpoint(Stage::ReverbOpt, &audio)?);

    Ok(ProtectionResult {
        audio,
        report: ProtectionReport {
            config: *config,
            masked_bins: mask.bins().to_vec(),
            style: styled.style,
            style_trace: styled.trace,
            rir_seed: SelectedRir {
                id: selection.seed.id.clone(),
                duration_ms: selection.seed.duration_ms(),
                score: selection.score,
                scores: selection.scores,
            },
            target: SelectedTarget {
                speaker: target.speaker,
                utterance: target.utterance,
                score: target.score,
            },
            rir,
            checkpoints,
        },
    })
}
