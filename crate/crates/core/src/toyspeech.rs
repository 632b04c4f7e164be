//! Deterministic synthetic multi-speaker speech.
//!
//! A speaker is a glottal pitch range plus three formant resonances. An
//! utterance is a run of "words", each a chain of 3-8 phones whose pitch and
//! formants are jittered around the speaker's values. The generator stands in
//! for a recorded corpus so the whole pipeline can be exercised hermetically.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{load_wav, save_wav, WavEncoding, Waveform, PIPELINE_RATE};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub f0_base: f64,
    pub formants: [Formant; 3],
    pub vibrato_rate: f64,
    pub vibrato_depth_cents: f64,
    pub seed: u64,
}

impl SpeakerProfile {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(90.0..=300.0).contains(&self.f0_base) {
            return Err(Error::InvalidArgument(format!(
                "f0_base {} outside [90, 300] Hz",
                self.f0_base
            )));
        }
        let nyq = sample_rate as f64 / 2.0;
        let f = &self.formants;
        if !(f[0].freq < f[1].freq && f[1].freq < f[2].freq && f[2].freq < nyq) {
            return Err(Error::InvalidArgument(
                "formant centres must increase and stay below Nyquist".into(),
            ));
        }
        Ok(())
    }
}

/// Peak amplitude of the white recording noise relative to the speech peak.
const NOISE_FLOOR: f64 = 1.5e-3;

/// Draws a speaker deterministically from `seed`.
pub fn sample_speaker(seed: u64) -> SpeakerProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, 0x5bea_7e12, 0));
    let f0_base: f64 = rng.gen_range(90.0..300.0);
    let f1 = rng.gen_range((2.0 * f0_base).max(300.0)..900.0);
    let f2 = rng.gen_range((1.5 * f1).max(1000.0)..2500.0);
    let f3 = rng.gen_range((1.35 * f2).max(2300.0)..3800.0);
    let formants = [
        Formant {
            freq: f1,
            bandwidth: rng.gen_range(50.0..120.0),
        },
        Formant {
            freq: f2,
            bandwidth: rng.gen_range(60.0..140.0),
        },
        Formant {
            freq: f3,
            bandwidth: rng.gen_range(70.0..160.0),
        },
    ];
    SpeakerProfile {
        f0_base,
        formants,
        vibrato_rate: rng.gen_range(4.0..7.0),
        vibrato_depth_cents: rng.gen_range(5.0..40.0),
        seed,
    }
}

struct Phone {
    len: usize,
    f0: f64,
    formants: [f64; 3],
    level: f64,
    voiced: bool,
}

fn plan_phones(
    profile: &SpeakerProfile,
    total: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Phone> {
    let mut phones = Vec::new();
    let mut used = 0usize;
    while used < total {
        let n = rng.gen_range(3..=8);
        for _ in 0..n {
            let len = (rng.gen_range(0.080..0.240) * rate) as usize;
            let mut formants = [0.0; 3];
            for (i, slot) in formants.iter_mut().enumerate() {
                // jitter within +-15%, concentrated around the speaker's value
                let j: f64 = (0..3).map(|_| rng.gen_range(-0.05..0.05)).sum();
                *slot = profile.formants[i].freq * (1.0 + j);
            }
            // jitter may reorder neighbours; keep them increasing
            formants[1] = formants[1].max(formants[0] + 150.0);
            formants[2] = formants[2].max(formants[1] + 150.0);
            phones.push(Phone {
                len,
                f0: profile.f0_base * rng.gen_range(0.8..1.2),
                formants,
                level: rng.gen_range(0.5..1.0),
                voiced: true,
            });
            used += len;
        }
        let gap = (rng.gen_range(0.040..0.150) * rate) as usize;
        phones.push(Phone {
            len: gap,
            f0: profile.f0_base,
            formants: profile.formants.map(|f| f.freq),
            level: 0.0,
            voiced: false,
        });
        used += gap;
    }
    phones
}

struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn coeffs(freq: f64, bw: f64, rate: f64) -> (f64, f64, f64) {
        let r = (-PI * bw / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        // unit DC gain (cascade vocal-tract convention)
        let gain = 1.0 - a1 - a2;
        (gain, a1, a2)
    }

    fn step(&mut self, x: f64, (g, a1, a2): (f64, f64, f64)) -> f64 {
        let y = g * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// One utterance at the pipeline rate.
pub fn gen_utterance(profile: &SpeakerProfile, duration_s: f64, seed: u64) -> Result<Waveform> {
    gen_utterance_at(profile, duration_s, seed, PIPELINE_RATE)
}

pub fn gen_utterance_at(
    profile: &SpeakerProfile,
    duration_s: f64,
    seed: u64,
    sample_rate: u32,
) -> Result<Waveform> {
    render(profile, duration_s, seed, sample_rate, true)
}

pub(crate) fn render(
    profile: &SpeakerProfile,
    duration_s: f64,
    seed: u64,
    sample_rate: u32,
    formants: bool,
) -> Result<Waveform> {
    if !(duration_s >= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "utterance duration {duration_s} s is shorter than 0.5 s"
        )));
    }
    profile.validate(sample_rate)?;
    let rate = sample_rate as f64;
    let total = (duration_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(profile.seed, 0x07e2_a4ce, seed));
    let phones = plan_phones(profile, total, rate, &mut rng);

    let smooth = (-1.0 / (0.015 * rate)).exp();
    let ramp = (0.015 * rate) as usize;
    let glottal_pole = (-2.0 * PI * 700.0 / rate).exp();
    let vib_depth = profile.vibrato_depth_cents / 1200.0;
    let vib_phase0 = rng.gen_range(0.0..2.0 * PI);

    let mut out = Vec::with_capacity(total);
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let mut f0 = phones[0].f0;
    let mut fmt = phones[0].formants;
    let mut res = [0, 1, 2].map(|_| Resonator { y1: 0.0, y2: 0.0 });
    let mut coeffs = [(0.0, 0.0, 0.0); 3];
    let mut glottal = 0.0;
    // Fixed normalisation keeps harmonic amplitudes independent of the
    // per-phone pitch.
    let norm = ((0.45 * rate) / (profile.f0_base * 1.3)).floor().max(1.0);
    let mut n = 0usize;
    'phones: for ph in &phones {
        let harmonics = ((0.45 * rate) / (ph.f0 * 1.3)).floor().max(1.0);
        for j in 0..ph.len {
            if n >= total {
                break 'phones;
            }
            f0 = smooth * f0 + (1.0 - smooth) * ph.f0;
            for (c, target) in fmt.iter_mut().zip(ph.formants) {
                *c = smooth * *c + (1.0 - smooth) * target;
            }
            if n % 32 == 0 {
                for (i, c) in coeffs.iter_mut().enumerate() {
                    *c = Resonator::coeffs(fmt[i], profile.formants[i].bandwidth, rate);
                }
            }
            let t = n as f64 / rate;
            let inst = f0
                * 2f64.powf(vib_depth * (2.0 * PI * profile.vibrato_rate * t + vib_phase0).sin());
            phase = (phase + 2.0 * PI * inst / rate) % (2.0 * PI);
            let env = if ph.voiced {
                let rise = (j as f64 / ramp as f64).min(1.0);
                let fall = ((ph.len - j) as f64 / ramp as f64).min(1.0);
                ph.level * (0.5 - 0.5 * (PI * rise).cos()) * (0.5 - 0.5 * (PI * fall).cos())
            } else {
                0.0
            };
            // band-limited pulse train: sum_{k=1..K} cos(k phase)
            let half = 0.5 * phase;
            let den = half.sin();
            let pulse = if den.abs() < 1e-9 {
                harmonics / norm
            } else {
                (((harmonics + 0.5) * phase).sin() / (2.0 * den) - 0.5) / norm
            };
            glottal = glottal_pole * glottal + (1.0 - glottal_pole) * pulse;
            let breath = rng.gen_range(-1.0..1.0) * (0.03 * env + 2e-4);
            let mut s = env * glottal + breath;
            if formants {
                for (r, c) in res.iter_mut().zip(coeffs) {
                    s = r.step(s, c);
                }
            }
            out.push(s);
            n += 1;
        }
    }
    out.resize(total, 0.0);
    let mean = out.iter().sum::<f64>() / total as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    // recording noise floor about 60 dB under the speech peak; without it the
    // all-pole tract leaves the top octaves ~150 dB down, far below any real
    // microphone
    let speech_peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in out.iter_mut() {
        *v += rng.gen_range(-1.0..1.0) * NOISE_FLOOR * speech_peak;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = rng.gen_range(0.5..0.9);
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= target / peak);
    }
    Waveform::new(out, sample_rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    pub id: String,
    pub wave: Waveform,
}

/// Per-speaker collection of utterances with a JSON manifest on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub speaker: String,
    pub path: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
}

/// Minimum utterance length accepted into a corpus.
pub const MIN_UTTERANCE_SECS: f64 = 1.0;

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        for u in &utterances {
            if u.wave.duration_secs() + 1e-9 < MIN_UTTERANCE_SECS {
                return Err(Error::InvalidArgument(format!(
                    "utterance {}/{} is {:.3} s, shorter than {MIN_UTTERANCE_SECS} s",
                    u.speaker,
                    u.id,
                    u.wave.duration_secs()
                )));
            }
        }
        Ok(Self { utterances })
    }

    /// `n_speakers` toy speakers with `utts` utterances of `seconds` each.
    pub fn generate(n_speakers: usize, utts: usize, seconds: f64, seed: u64) -> Result<Self> {
        let mut all = Vec::with_capacity(n_speakers * utts);
        for s in 0..n_speakers {
            let profile = sample_speaker(seed::derive(seed, 0x5eed_0001, s as u64));
            for u in 0..utts {
                all.push(Utterance {
                    speaker: format!("spk{s:03}"),
                    id: format!("utt{u:03}"),
                    wave: gen_utterance(&profile, seconds, u as u64)?,
                });
            }
        }
        Self::new(all)
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Speaker ids in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        let mut v: Vec<String> = self.by_speaker().into_keys().collect();
        v.sort();
        v
    }

    pub fn by_speaker(&self) -> BTreeMap<String, Vec<&Utterance>> {
        let mut map: BTreeMap<String, Vec<&Utterance>> = BTreeMap::new();
        for u in &self.utterances {
            map.entry(u.speaker.clone()).or_default().push(u);
        }
        map
    }

    pub fn speaker_seconds(&self, speaker: &str) -> f64 {
        self.utterances
            .iter()
            .filter(|u| u.speaker == speaker)
            .map(|u| u.wave.duration_secs())
            .sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.utterances.iter().map(|u| u.wave.duration_secs()).sum()
    }

    /// Only the utterances of one speaker.
    pub fn filter_speaker(&self, speaker: &str) -> Corpus {
        Corpus {
            utterances: self
                .utterances
                .iter()
                .filter(|u| u.speaker == speaker)
                .cloned()
                .collect(),
        }
    }

    /// SHA-256 over ids, rates and sample bit patterns.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for u in &self.utterances {
            h.update(u.speaker.as_bytes());
            h.update([0]);
            h.update(u.id.as_bytes());
            h.update([0]);
            h.update(u.wave.sample_rate().to_le_bytes());
            for s in u.wave.samples() {
                h.update(s.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes `<root>/<speaker>/<utt>.wav` and `<root>/manifest.json`.
    pub fn save(&self, root: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
        let root = root.as_ref();
        let mut entries = Vec::new();
        let mut rate = PIPELINE_RATE;
        for u in &self.utterances {
            let dir = root.join(&u.speaker);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let rel = format!("{}/{}.wav", u.speaker, u.id);
            save_wav(root.join(&rel), &u.wave, encoding)?;
            rate = u.wave.sample_rate();
            entries.push(ManifestEntry {
                speaker: u.speaker.clone(),
                path: rel,
                seconds: u.wave.duration_secs(),
            });
        }
        let manifest = Manifest {
            sample_rate: rate,
            entries,
        };
        let path = root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let path = root.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = crate::json::from_str(&text)?;
        let mut utts = Vec::with_capacity(manifest.entries.len());
        for e in manifest.entries {
            let wave = load_wav(root.join(&e.path))?;
            if (wave.duration_secs() - e.seconds).abs() > 1e-3 {
                return Err(Error::Schema {
                    field: format!("entries[{}].seconds", e.path),
                    message: format!(
                        "manifest says {} s but audio is {} s",
                        e.seconds,
                        wave.duration_secs()
                    ),
                });
            }
            let id = Path::new(&e.path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| e.path.clone());
            utts.push(Utterance {
                speaker: e.speaker,
                id,
                wave,
            });
        }
        Self::new(utts)
    }
}
