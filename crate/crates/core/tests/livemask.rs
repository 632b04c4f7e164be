mod common;

use std::time::Instant;

use common::*;
use voiceshield::audio::{stft, StftConfig, Waveform};
use voiceshield::livemask::*;
use voiceshield::reverb::{targeted_objective, RirSeed};
use voiceshield::specmask::{greedy_select, GreedyMaskConfig};
use voiceshield::toyspeech::{Corpus, Utterance};
use voiceshield::Error;

fn decaying(id: &str, n: usize, salt: u64) -> RirSeed {
    let mut s = salt;
    let taps = (0..n)
        .map(|k| {
            s = voiceshield::seed::mix(s);
            let r = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            if k == 0 { 1.0 } else { r * (-(k as f64) / (n as f64 / 5.0)).exp() }
        })
        .collect();
    RirSeed::new(id, taps, 48_000).unwrap()
}

fn one_speaker(n: usize, secs: f64) -> Corpus {
    Corpus::new(
        (0..n)
            .map(|i| Utterance {
                speaker: "me".into(),
                id: format!("u{i}"),
                wave: utterance(900, i as u64, secs),
            })
            .collect(),
    )
    .unwrap()
}

fn profile(rir: Vec<f64>) -> LiveMaskProfile {
    let mask = calibrate_mask(&one_speaker(2, 1.5), 16, 0.01).unwrap();
    LiveMaskProfile {
        version: PROFILE_VERSION,
        sample_rate: 48_000,
        masked_bins: mask.bins().to_vec(),
        notch_q: 30.0,
        rir: rir.into_iter().map(round_sig9).collect(),
        meta: ProfileMeta {
            corpus_hash: "h".into(),
            corpus_seconds: 3.0,
            pool_hash: "p".into(),
            rir_seeds: vec!["s".into()],
            selected_seed: "s".into(),
            target_speaker: "t".into(),
            target_utterance: "u".into(),
            seed: 0,
            config: LiveMaskConfig::default(),
        },
    }
}

#[test]
fn mask_calibration() {
    let c1 = one_speaker(1, 2.0);
    let single = calibrate_mask(&c1, 12, 0.01).unwrap();
    let spec = stft(&c1.utterances()[0].wave, StftConfig::default()).unwrap();
    assert_eq!(single, greedy_select(&spec, &GreedyMaskConfig::default()).unwrap());

    assert!(calibrate_mask(&c1, 0, 0.01).unwrap().is_empty());

    let u = c1.utterances()[0].clone();
    let twice = Corpus::new(vec![u.clone(), Utterance { id: "copy".into(), ..u }]).unwrap();
    assert_eq!(calibrate_mask(&twice, 12, 0.01).unwrap(), single);

    let empty = Corpus::new(vec![]).unwrap();
    assert!(matches!(calibrate_mask(&empty, 4, 0.01), Err(Error::CorpusTooSmall(_))));
}

#[test]
fn single_recording_objective_matches_the_offline_one() {
    let ens = quick_ensemble();
    // quiet enough that the offline full-scale guard never engages
    let x = utterance(910, 1, 1.5).scaled(0.05);
    let corpus = Corpus::new(vec![Utterance { speaker: "me".into(), id: "a".into(), wave: x.clone() }]).unwrap();
    let mask = calibrate_mask(&corpus, 16, 0.01).unwrap();
    let filtered = notch_filter(&corpus, &mask, 30.0).unwrap();
    let tgt = utterance(911, 1, 1.5);
    let h = decaying("h", 480, 3).taps;
    let universal = universal_objective(&h, &filtered, &[x.clone()], &tgt, &ens, 0.5).unwrap();
    let offline = targeted_objective(&h, &filtered[0], &x, &tgt, &ens, 0.5).unwrap().0;
    assert!((universal - offline).abs() < 1e-12, "{universal} vs {offline}");
}

#[test]
fn rir_calibration_contract() {
    let ens = quick_ensemble();
    let corpus = one_speaker(2, 1.5);
    let pool = Corpus::generate(3, 1, 1.2, 55).unwrap();
    let seeds = [decaying("short", 240, 1), decaying("full", 1440, 2)];
    let cfg = LiveMaskConfig { max_iters: 12, ..LiveMaskConfig::default() };
    let mask = calibrate_mask(&corpus, cfg.k, cfg.tau_p_rel).unwrap();
    let r = calibrate_rir(&corpus, &mask, &seeds, &pool, &ens, &cfg).unwrap();
    let o = &r.optimization;
    assert!((o.alpha - o.epsilon / 30.0).abs() < 1e-15);
    assert!(o.trace.iter().all(|s| s.max_abs_delta <= o.epsilon));
    assert!(o.taps.len() <= 1440);
    assert_ne!(r.target.speaker, "me");
    assert!(calibrate_rir(&corpus, &mask, &[], &pool, &ens, &cfg).is_err());

    let p1 = calibrate(&corpus, &seeds, &pool, &ens, &cfg).unwrap();
    let p2 = calibrate(&corpus, &seeds, &pool, &ens, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(p1.meta.corpus_hash, corpus.hash());
    assert_eq!(p1.masked_bins.len(), 16);
}

#[test]
fn streaming_equals_offline() {
    let p = profile(decaying("h", 1440, 7).taps);
    for seed in 0..4u64 {
        let x = utterance(920 + seed, seed, 1.0);
        let want = offline_apply(&p, &x).unwrap();
        for chunk in [1usize, 64, 4096] {
            let mut st = StreamState::new(&p).unwrap();
            let mut got = Vec::with_capacity(x.len());
            for c in x.samples().chunks(chunk) {
                got.extend(stream_process(&mut st, c));
            }
            assert_eq!(st.processed(), x.len() as u64);
            let err = max_abs_diff(&got, want.samples());
            assert!(err <= 1e-5, "chunk {chunk}: {err}");
        }
    }
}

#[test]
fn causality_and_silence() {
    let p = profile(decaying("h", 1440, 8).taps);
    let x = utterance(930, 1, 1.0);
    let mut full = StreamState::new(&p).unwrap();
    let all = stream_process(&mut full, x.samples());
    assert_eq!(full.lookahead(), 0);
    for m in [1usize, 100, 20_000] {
        let mut st = StreamState::new(&p).unwrap();
        assert_eq!(stream_process(&mut st, &x.samples()[..m]), all[..m]);
    }
    let mut st = StreamState::new(&p).unwrap();
    stream_process(&mut st, &vec![0.0; 1440]);
    assert!(stream_process(&mut st, &vec![0.0; 4096]).iter().all(|&v| v == 0.0));
}

#[test]
fn cost_and_throughput() {
    let p = profile(decaying("h", 1440, 9).taps);
    let st = StreamState::new(&p).unwrap();
    let macs = st.fir_macs_per_second();
    assert_eq!(macs, 69_120_000.0);
    assert!(macs / 70e6 < 1.5 && 70e6 / macs < 1.5);

    let x: Vec<f64> = (0..480_000u64).map(|n| ((n * 7919) % 2001) as f64 / 2000.0 - 0.5).collect();
    let mut st = StreamState::new(&p).unwrap();
    let t = Instant::now();
    for c in x.chunks(480) {
        std::hint::black_box(stream_process(&mut st, c));
    }
    let secs = t.elapsed().as_secs_f64();
    eprintln!("10 s of 48 kHz audio streamed in {secs:.2} s");
    assert!(secs < 10.0);
}

#[test]
fn profile_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = profile(decaying("h", 500, 10).taps);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    save_profile(&a, &p).unwrap();
    let back = load_profile(&a).unwrap();
    save_profile(&b, &back).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for (x, y) in p.rir.iter().zip(&back.rir) {
        assert!((x - y).abs() <= 1e-8);
    }
    assert_eq!(back, p);

    let text = std::fs::read_to_string(&a).unwrap();
    let bad = text.replacen("\"notch_q\": 30.0", "\"notch_q\": \"thirty\"", 1);
    match LiveMaskProfile::from_json(&bad) {
        Err(Error::Schema { field, .. }) => assert_eq!(field, "notch_q"),
        other => panic!("{other:?}"),
    }
    let old = text.replacen("\"version\": 1", "\"version\": 7", 1);
    assert!(matches!(LiveMaskProfile::from_json(&old), Err(Error::VersionMismatch { found: 7, .. })));
    assert!(load_profile(dir.path().join("missing.json")).is_err());
}

#[test]
fn other_rates_keep_centres_in_hertz() {
    let p = profile(decaying("h", 1440, 11).taps);
    let st = StreamState::with_rate(&p, 16_000).unwrap();
    assert_eq!(st.sample_rate(), 16_000);
    assert!(st.latency_samples() < 490);
    let x = Waveform::new((0..16_000).map(|n| (n as f64 * 0.01).sin()).collect(), 16_000).unwrap();
    let want = offline_apply(&p, &x).unwrap();
    let mut s2 = StreamState::with_rate(&p, 16_000).unwrap();
    assert!(max_abs_diff(&stream_process(&mut s2, x.samples()), want.samples()) < 1e-5);
    let hz: Vec<f64> = p.masked_bins.iter().map(|&b| b as f64 * 48_000.0 / 2048.0).filter(|&f| f < 8000.0).collect();
    assert_eq!(st.notch().centres_hz(), hz.as_slice());
    for &f in &hz[hz.len().min(1)..] {
        assert!(st.notch().gain_at(f) < 0.05, "{f} Hz");
    }
}
