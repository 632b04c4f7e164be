//! The trained models, trials and protected audio shared by the
//! end-to-end criteria. Built once per run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use voiceshield::audio::{stft, StftConfig, Waveform};
use voiceshield::encoders::{train_encoder, Arch, EnsembleConfig, ModelSet, SpeakerEncoder, TrainConfig};
use voiceshield::eval::{cosine, eer_threshold};
use voiceshield::livemask::{calibrate, LiveMaskConfig, LiveMaskProfile};
use voiceshield::reverb::{
    optimize_rir, protect, reverberate, select_rir, select_target, PipelineConfig, ProtectionReport, RirSeed,
};
use voiceshield::seed;
use voiceshield::specmask::{apply_mask, greedy_select};
use voiceshield::styler::{extract_style, optimize_style};
use voiceshield::toyspeech::{gen_utterance, sample_speaker, Corpus, SpeakerProfile};

pub const SPEAKERS: u64 = 20;
const CORPUS_SEED: u64 = 7;
const PROBES_PER_SPEAKER: u64 = 5;
const PROBE_SECS: f64 = 2.0;
/// Speakers that get a LiveMask profile, and its iteration budget.
const LIVEMASK_SPEAKERS: u64 = 5;
const LIVEMASK_ITERS: usize = 100;

pub struct Probe {
    pub speaker: usize,
    pub clean_wave: Waveform,
    pub protected: Waveform,
    pub report: ProtectionReport,
    pub input_style_norm: f64,
    pub clean: f64,
    pub full: f64,
    pub mask_only: f64,
    pub style_only: f64,
    pub reverb_only: f64,
}

pub struct World {
    pub ens: EnsembleConfig,
    pub e4: SpeakerEncoder,
    pub enroll: Vec<Vec<f64>>,
    pub threshold: f64,
    pub eer: f64,
    pub seeds: Vec<RirSeed>,
    pub mismatched: Vec<RirSeed>,
    pub pool: Corpus,
    pub probes: Vec<Probe>,
    pub profiles: Vec<(usize, LiveMaskProfile)>,
    pub protect_time: Duration,
    pub a3_time: Duration,
}

/// Short decaying noise bursts standing in for measured small rooms,
/// 5 to 30 ms long.
pub fn rooms(salt: u64, n: usize) -> Vec<RirSeed> {
    (0..n)
        .map(|i| {
            let ms = 5.0 + 25.0 * i as f64 / (n - 1) as f64;
            let len = (48.0 * ms) as usize;
            let decay = len as f64 / 4.0;
            let mut s = seed::derive(salt, 0x4149, i as u64);
            let taps = (0..len)
                .map(|k| {
                    s = seed::mix(s);
                    let r = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                    if k == 0 { 1.0 } else { 1.2 * r * (-(k as f64) / decay).exp() }
                })
                .collect();
            RirSeed::new(format!("room{salt}-{i:02}"), taps, 48_000).unwrap()
        })
        .collect()
}

fn voice(s: u64) -> SpeakerProfile {
    sample_speaker(seed::derive(CORPUS_SEED, 0x5eed_0001, s))
}

fn models(train: &Corpus) -> ModelSet {
    // A directory of models trained on this exact split may be supplied to
    // skip training while iterating.
    if let Some(dir) = std::env::var_os("VOICESHIELD_ACCEPTANCE_MODELS") {
        let m = ModelSet::load_dir(Path::new(&dir)).unwrap();
        assert!(
            m.holdout().unwrap().corpus_hash() == train.hash(),
            "models in {dir:?} were trained on another corpus"
        );
        println!("# models loaded from {}", Path::new(&dir).display());
        return m;
    }
    let t = Instant::now();
    let m = ModelSet::new(Arch::ALL.iter().map(|&a| train_encoder(a, train, &TrainConfig::default()).unwrap()).collect());
    println!("# trained 4 encoders on {} utterances in {:.0} s", train.len(), t.elapsed().as_secs_f64());
    m
}

impl World {
    pub fn build() -> World {
        let started = Instant::now();
        let full = Corpus::generate(SPEAKERS as usize, 12, 6.0, CORPUS_SEED).unwrap();
        let split = |keep: fn(&str) -> bool| {
            Corpus::new(full.utterances().iter().filter(|u| keep(&u.id)).cloned().collect()).unwrap()
        };
        let train = split(|id| id < "utt010");
        let models = models(&train);
        let ens = models.ensemble().unwrap();
        let e4 = models.holdout().unwrap().clone();

        let enroll: Vec<Vec<f64>> = (0..SPEAKERS)
            .map(|s| {
                let name = format!("spk{s:03}");
                let u = full.utterances().iter().find(|u| u.speaker == name && u.id == "utt010").unwrap();
                e4.embed(&u.wave).unwrap()
            })
            .collect();

        // threshold from trials disjoint from the probes
        let (mut same, mut diff) = (Vec::new(), Vec::new());
        for s in 0..SPEAKERS {
            for j in 200..204 {
                let e = e4.embed(&gen_utterance(&voice(s), PROBE_SECS, j).unwrap()).unwrap();
                for (t, en) in enroll.iter().enumerate() {
                    let c = cosine(en, &e);
                    if t as u64 == s { same.push(c) } else { diff.push(c) }
                }
            }
        }
        let eer = eer_threshold(&same, &diff).unwrap();

        let seeds = rooms(5, 8);
        let mismatched = rooms(6, 10);
        let pool = Corpus::generate(10, 2, 2.0, 99).unwrap();
        let cfg = PipelineConfig::default();
        let stft_cfg = StftConfig::default();

        let mut probes = Vec::new();
        let mut protect_time = Duration::ZERO;
        for s in 0..SPEAKERS {
            for j in 0..PROBES_PER_SPEAKER {
                let x = gen_utterance(&voice(s), PROBE_SECS, 100 + j).unwrap();
                let sim = |w: &Waveform| cosine(&enroll[s as usize], &e4.embed(w).unwrap());

                let t = Instant::now();
                let p = protect(&x, &ens, &seeds, &pool, None, &cfg).unwrap();
                protect_time += t.elapsed();

                // each stage on its own, as configured in the pipeline
                let mask = greedy_select(&stft(&x, stft_cfg).unwrap(), &cfg.mask()).unwrap();
                let masked = apply_mask(&x, &mask, stft_cfg).unwrap();
                let styled = optimize_style(&x, &x, &ens, &cfg.style()).unwrap().audio;
                let sel = select_rir(&seeds, &x, &x, &ens, &cfg.rir_select()).unwrap();
                let tgt = select_target(&pool, &x, None, &ens).unwrap();
                let h = optimize_rir(&sel.seed.taps, &x, &x, &tgt.wave, &ens, &cfg.rir_opt()).unwrap();
                let reverbed = reverberate(&x, &h.taps).unwrap();

                probes.push(Probe {
                    speaker: s as usize,
                    input_style_norm: extract_style(&x).unwrap().norm(),
                    clean: sim(&x),
                    full: sim(&p.audio),
                    mask_only: sim(&masked),
                    style_only: sim(&styled),
                    reverb_only: sim(&reverbed),
                    protected: p.audio,
                    report: p.report,
                    clean_wave: x,
                });
            }
        }
        // training, trials, protection and ablations
        let a3_time = started.elapsed();
        println!(
            "# {} probes with ablations in {:.0} s, full pipeline alone {:.0} s",
            probes.len(),
            a3_time.as_secs_f64(),
            protect_time.as_secs_f64()
        );

        let t = Instant::now();
        let live_cfg = LiveMaskConfig {
            max_iters: LIVEMASK_ITERS,
            ..LiveMaskConfig::default()
        };
        let profiles = (0..LIVEMASK_SPEAKERS)
            .map(|s| {
                let name = format!("spk{s:03}");
                let corpus = Corpus::new(
                    full.utterances().iter().filter(|u| u.speaker == name && u.id.as_str() < "utt004").cloned().collect(),
                )
                .unwrap();
                (s as usize, calibrate(&corpus, &seeds, &pool, &ens, &live_cfg).unwrap())
            })
            .collect();
        println!("# {LIVEMASK_SPEAKERS} livemask profiles calibrated in {:.0} s", t.elapsed().as_secs_f64());

        World {
            ens,
            e4,
            enroll,
            threshold: eer.threshold,
            eer: eer.eer(),
            seeds,
            mismatched,
            pool,
            probes,
            profiles,
            protect_time,
            a3_time,
        }
    }

    /// Held-out similarity of `wave` to the enrolled voice of `p`.
    pub fn holdout_sim(&self, p: &Probe, wave: &Waveform) -> f64 {
        cosine(&self.enroll[p.speaker], &self.e4.embed(wave).unwrap())
    }
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn protect_record(w: &World) -> Value {
    let p = &w.probes[0];
    let r = &p.report;
    json!({
        "model_corpus_hash": w.e4.corpus_hash(),
        "pool_hash": w.pool.hash(),
        "seed": r.config.seed,
        "masked_bins": r.masked_bins,
        "style_applied": r.style_trace.applied(),
        "style_final_distortion": r.style_trace.final_distortion,
        "rir_seed": r.rir_seed.id,
        "target": format!("{}/{}", r.target.speaker, r.target.utterance),
        "best_iter": r.rir.best_iter,
        "best_objective": r.rir.best_objective(),
        "trace_len": r.rir.trace.len(),
        "taps_sum": sum(&r.rir.taps),
        "taps_l2": l2(&r.rir.taps),
        "checkpoint_losses": r.checkpoints.iter().map(|c| c.ensemble_loss).collect::<Vec<_>>(),
        "checkpoint_distortions": r.checkpoints.iter().map(|c| c.spectral_distortion).collect::<Vec<_>>(),
        "audio_rms": p.protected.rms(),
        "holdout_similarity": p.full,
    })
}

fn calibrate_record(w: &World) -> Value {
    let (_, prof) = &w.profiles[0];
    json!({
        "corpus_hash": prof.meta.corpus_hash,
        "pool_hash": prof.meta.pool_hash,
        "seed": prof.meta.seed,
        "masked_bins": prof.masked_bins,
        "selected_seed": prof.meta.selected_seed,
        "target": format!("{}/{}", prof.meta.target_speaker, prof.meta.target_utterance),
        "taps": prof.rir.len(),
        "taps_sum": sum(&prof.rir),
        "taps_l2": l2(&prof.rir),
    })
}

/// Differences between two records: numbers may drift by 1e-6, everything
/// else must match.
fn compare(path: &str, want: &Value, got: &Value, out: &mut Vec<String>) {
    match (want, got) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            if (a - b).abs() > 1e-6 {
                out.push(format!("{path}: {a} -> {b}"));
            }
        }
        (Value::Array(a), Value::Array(b)) if a.len() == b.len() => {
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                compare(&format!("{path}[{i}]"), x, y, out);
            }
        }
        (Value::Object(a), Value::Object(b)) if a.len() == b.len() => {
            for (k, x) in a {
                match b.get(k) {
                    Some(y) => compare(&format!("{path}.{k}"), x, y, out),
                    None => out.push(format!("{path}.{k} missing")),
                }
            }
        }
        _ if want == got => {}
        _ => out.push(format!("{path}: {want} -> {got}")),
    }
}

/// Checks the protect and calibrate records against the archived ones.
/// `VOICESHIELD_BLESS=1` rewrites the archive instead.
pub fn golden_replay(w: &World) -> (bool, String) {
    let bless = std::env::var("VOICESHIELD_BLESS").is_ok_and(|v| v == "1");
    let records: BTreeMap<&str, Value> = [("protect", protect_record(w)), ("calibrate", calibrate_record(w))].into();
    let mut problems = Vec::new();
    let mut fields = 0;
    for (name, got) in &records {
        let path = golden_dir().join(format!("{name}.json"));
        if bless {
            std::fs::create_dir_all(golden_dir()).unwrap();
            std::fs::write(&path, serde_json::to_string_pretty(got).unwrap() + "\n").unwrap();
            continue;
        }
        let want: Value = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap(),
            Err(e) => {
                problems.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        fields += want.as_object().map_or(0, |o| o.len());
        compare(name, &want, got, &mut problems);
    }
    if bless {
        return (true, format!("golden records rewritten in {}", golden_dir().display()));
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!("protect and calibrate replay {fields} archived fields within 1e-6")
    } else {
        format!("replay differs: {}", problems.join("; "))
    };
    (pass, detail)
}
