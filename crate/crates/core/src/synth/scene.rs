use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::echo::{synth_echo, Distortion};
use super::rir::{RirProvider, RoomSpec, ROOM_MAX, ROOM_MIN, RT60_RANGE};
use super::talker::{colored_noise, NOMINAL_RMS};
use crate::error::{PaecError, Result};
use crate::signal::{gain_for_ser, gain_for_snr, Waveform, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Double talk.
    #[serde(rename = "DT")]
    Dt,
    /// Far-end single talk.
    #[serde(rename = "FEST")]
    Fest,
    /// Near-end single talk.
    #[serde(rename = "NEST")]
    Nest,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Dt, Scenario::Fest, Scenario::Nest];

    pub fn has_near_end(self) -> bool {
        self != Scenario::Fest
    }

    pub fn has_echo(self) -> bool {
        self != Scenario::Nest
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Dt => "DT",
            Scenario::Fest => "FEST",
            Scenario::Nest => "NEST",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const SER_RANGE: (f64, f64) = (-15.0, 15.0);
pub const SNR_RANGE: (f64, f64) = (-5.0, 25.0);
pub const MAX_ECHO_DELAY_S: f64 = 0.5;

/// Everything needed to build one clip from a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub scenario: Scenario,
    /// For DT the echo level relative to the near-end talker; for FEST the
    /// echo level relative to the nominal speech level. Absent for NEST.
    pub ser_db: Option<f64>,
    /// Noise and interfering speech relative to the near-end talker (for
    /// FEST: noise relative to the echo).
    pub snr_db: f64,
    pub n_interferers: u8,
    pub echo_delay_s: f64,
    pub distortion: Distortion,
    pub near_speaker: String,
    pub far_speaker: String,
    pub interferers: Vec<String>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PaecError::Config(format!("scene {}: {m}", self.id)));
        if self.near_speaker == self.far_speaker {
            return bad("far-end and near-end speakers must differ".into());
        }
        if self.interferers.len() != self.n_interferers as usize || self.n_interferers > 2 {
            return bad(format!("{} interferer ids for n_interferers {}", self.interferers.len(), self.n_interferers));
        }
        if self.scenario == Scenario::Fest && self.n_interferers > 0 {
            return bad("interferers are only allowed with near-end speech".into());
        }
        if self.interferers.iter().any(|s| *s == self.near_speaker) {
            return bad("an interferer is the near-end speaker".into());
        }
        match (self.scenario, self.ser_db) {
            (Scenario::Nest, Some(_)) => return bad("NEST scenes carry no SER".into()),
            (Scenario::Dt | Scenario::Fest, None) => return bad("missing SER".into()),
            (_, Some(s)) if !(SER_RANGE.0..=SER_RANGE.1).contains(&s) => return bad(format!("SER {s} out of range")),
            _ => {}
        }
        if !(SNR_RANGE.0..=SNR_RANGE.1).contains(&self.snr_db) {
            return bad(format!("SNR {} out of range", self.snr_db));
        }
        if !(0.0..=MAX_ECHO_DELAY_S).contains(&self.echo_delay_s) {
            return bad(format!("echo delay {} out of range", self.echo_delay_s));
        }
        Ok(())
    }
}

/// One synthesized item. `d == s + y + v + z`; components absent in the
/// scenario are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioClip {
    pub spec: SceneSpec,
    /// Microphone signal.
    pub d: Waveform,
    /// Near-end target speech.
    pub s: Waveform,
    /// Echo.
    pub y: Waveform,
    /// Noise.
    pub v: Waveform,
    /// Interfering speech.
    pub z: Waveform,
    /// Far-end reference played by the loudspeaker.
    pub far: Waveform,
    /// A different recording of the near-end talker.
    pub enrollment: Waveform,
    pub realized_ser_db: Option<f64>,
    pub realized_snr_db: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub clip_seconds: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { clip_seconds: 10.0 }
    }
}

fn db_ratio(num: f64, den: f64) -> Option<f64> {
    (num > 0.0 && den > 0.0).then(|| 10.0 * (num / den).log10())
}

fn normalize(w: &mut [f64]) {
    let rms = (w.iter().map(|v| v * v).sum::<f64>() / w.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        w.iter_mut().for_each(|v| *v *= NOMINAL_RMS / rms);
    }
}

/// Concatenates utterances of `speaker` (cycling, skipping `exclude`) from a
/// random starting point until `len` samples are filled.
fn fill_from_speaker(
    corpus: &dyn Corpus,
    speaker: &str,
    len: usize,
    exclude: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Waveform> {
    let n = corpus.utterance_count(speaker);
    let usable: Vec<usize> = (0..n).filter(|i| Some(*i) != exclude).collect();
    if usable.is_empty() {
        return Err(PaecError::Corpus(format!("speaker {speaker} has no usable utterances")));
    }
    let mut idx = rng.random_range(0..usable.len());
    let mut out = Vec::with_capacity(len);
    let mut guard = 0;
    while out.len() < len {
        let u = corpus.utterance(speaker, usable[idx])?;
        out.extend_from_slice(&u.samples[..u.len().min(len - out.len())]);
        idx = (idx + 1) % usable.len();
        guard += 1;
        if guard > 10_000 {
            return Err(PaecError::Corpus(format!("speaker {speaker} has only empty utterances")));
        }
    }
    normalize(&mut out);
    Ok(Waveform::from_samples(out))
}

fn sample_room(rng: &mut ChaCha8Rng) -> RoomSpec {
    let dimensions: [f64; 3] = std::array::from_fn(|i| rng.random_range(ROOM_MIN[i]..=ROOM_MAX[i]));
    let pos = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        std::array::from_fn(|i| rng.random_range(0.5..dimensions[i] - 0.5))
    };
    let source_pos = pos(rng);
    let mic_pos = pos(rng);
    RoomSpec {
        dimensions,
        rt60: rng.random_range(RT60_RANGE.0..=RT60_RANGE.1),
        source_pos,
        mic_pos,
    }
}

fn to_f32_precision(w: &Waveform) -> Waveform {
    Waveform {
        samples: w.samples.iter().map(|&v| v as f32 as f64).collect(),
        sample_rate: w.sample_rate,
    }
}

/// Builds one clip. Deterministic in `(spec, corpus)`.
///
/// Sources are normalized to a common level, the echo is scaled against the
/// near-end energy to the requested SER, and noise and interfering speech
/// are each scaled against it to the requested SNR. Near-end speech stays
/// dry. Components are rounded to `f32` precision so that stored clips keep
/// `d == s + y + v + z` exactly up to the final sum.
pub fn build_scene(
    spec: &SceneSpec,
    corpus: &dyn Corpus,
    rirs: &dyn RirProvider,
    cfg: &SceneConfig,
) -> Result<ScenarioClip> {
    spec.validate()?;
    let len = (cfg.clip_seconds * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zeros = Waveform::zeros(len);

    let n_near = corpus.utterance_count(&spec.near_speaker);
    if n_near < 2 {
        return Err(PaecError::Corpus(format!(
            "near-end speaker {} needs at least two utterances (one for enrollment), has {n_near}",
            spec.near_speaker
        )));
    }
    let enroll_idx = rng.random_range(0..n_near);
    let enrollment = corpus.utterance(&spec.near_speaker, enroll_idx)?;
    let near = fill_from_speaker(corpus, &spec.near_speaker, len, Some(enroll_idx), &mut rng)?;

    let room = sample_room(&mut rng);
    let far_raw = fill_from_speaker(corpus, &spec.far_speaker, len, None, &mut rng)?;

    let noise_raw = if corpus.noise_count() > 0 {
        let k = rng.random_range(0..corpus.noise_count());
        let src = corpus.noise(k)?;
        if src.is_empty() {
            return Err(PaecError::Corpus(format!("noise clip {k} is empty")));
        }
        let offset = rng.random_range(0..src.len());
        let mut v: Vec<f64> = src.samples.iter().cycle().skip(offset).take(len).copied().collect();
        normalize(&mut v);
        Waveform::from_samples(v)
    } else {
        colored_noise(len, rng.random())
    };

    let mut interf = vec![0.0; len];
    for spk in &spec.interferers {
        let w = fill_from_speaker(corpus, spk, len, None, &mut rng)?;
        interf.iter_mut().zip(&w.samples).for_each(|(a, b)| *a += b);
    }
    let interf = Waveform::from_samples(interf);

    let (s, y, v, z, far) = match spec.scenario {
        Scenario::Nest => {
            let gv = gain_for_snr(&near, &noise_raw, spec.snr_db)?;
            let z = if spec.n_interferers > 0 {
                interf.scaled(gain_for_snr(&near, &interf, spec.snr_db)?)
            } else {
                zeros.clone()
            };
            (near, zeros.clone(), noise_raw.scaled(gv), z, zeros.clone())
        }
        Scenario::Dt | Scenario::Fest => {
            let rir = rirs.rir(&room, rng.random())?;
            let echo = synth_echo(&far_raw, &rir, spec.echo_delay_s, spec.distortion);
            let ser = spec.ser_db.expect("validated");
            if spec.scenario == Scenario::Dt {
                let y = echo.scaled(gain_for_ser(&near, &echo, ser)?);
                let v = noise_raw.scaled(gain_for_snr(&near, &noise_raw, spec.snr_db)?);
                let z = if spec.n_interferers > 0 {
                    interf.scaled(gain_for_snr(&near, &interf, spec.snr_db)?)
                } else {
                    zeros.clone()
                };
                (near, y, v, z, far_raw)
            } else {
                let nominal = Waveform::from_samples(vec![NOMINAL_RMS; len]);
                let y = echo.scaled(gain_for_ser(&nominal, &echo, ser)?);
                let v = noise_raw.scaled(gain_for_snr(&y, &noise_raw, spec.snr_db)?);
                (zeros.clone(), y, v, zeros.clone(), far_raw)
            }
        }
    };

    // Keep the mixture inside full scale; ratios are unaffected.
    let mut d: Vec<f64> = (0..len)
        .map(|i| s.samples[i] + y.samples[i] + v.samples[i] + z.samples[i])
        .collect();
    let peak = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let g = if peak > 0.99 { 0.99 / peak } else { 1.0 };
    let (s, y, v, z) = (
        to_f32_precision(&s.scaled(g)),
        to_f32_precision(&y.scaled(g)),
        to_f32_precision(&v.scaled(g)),
        to_f32_precision(&z.scaled(g)),
    );
    for (i, di) in d.iter_mut().enumerate() {
        *di = s.samples[i] + y.samples[i] + v.samples[i] + z.samples[i];
    }
    let d = Waveform::from_samples(d);

    let (realized_ser_db, realized_snr_db) = match spec.scenario {
        Scenario::Dt => (db_ratio(s.energy(), y.energy()), db_ratio(s.energy(), v.energy())),
        Scenario::Nest => (None, db_ratio(s.energy(), v.energy())),
        Scenario::Fest => (None, db_ratio(y.energy(), v.energy())),
    };

    Ok(ScenarioClip {
        spec: spec.clone(),
        d,
        s,
        y,
        v,
        z,
        far,
        enrollment,
        realized_ser_db,
        realized_snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::corpus::MemCorpus;
    use crate::synth::rir::ImageSourceRir;

    fn spec(scenario: Scenario, n_int: u8) -> SceneSpec {
        SceneSpec {
            id: "t".into(),
            scenario,
            ser_db: (scenario != Scenario::Nest).then_some(0.0),
            snr_db: 10.0,
            n_interferers: n_int,
            echo_delay_s: 0.1,
            distortion: Distortion::None,
            near_speaker: "spk000".into(),
            far_speaker: "spk001".into(),
            interferers: ["spk002", "spk003"].iter().take(n_int as usize).map(|s| s.to_string()).collect(),
            seed: 42,
        }
    }

    fn build(s: &SceneSpec) -> ScenarioClip {
        let corpus = MemCorpus::synthetic(4, 3, 1.0, 5);
        build_scene(s, &corpus, &ImageSourceRir, &SceneConfig { clip_seconds: 2.0 }).unwrap()
    }

    fn max_additivity_err(c: &ScenarioClip) -> f64 {
        (0..c.d.len())
            .map(|i| (c.d.samples[i] - c.s.samples[i] - c.y.samples[i] - c.v.samples[i] - c.z.samples[i]).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn fest_has_no_near_end() {
        let c = build(&spec(Scenario::Fest, 0));
        assert!(c.s.samples.iter().all(|&x| x == 0.0));
        assert!(c.z.samples.iter().all(|&x| x == 0.0));
        assert!(max_additivity_err(&c) < 1e-12);
        assert!(c.y.energy() > 0.0);
        assert!((c.realized_snr_db.unwrap() - 10.0).abs() < 0.1);
    }

    #[test]
    fn dt_realizes_requested_ser() {
        let c = build(&spec(Scenario::Dt, 2));
        assert!(c.realized_ser_db.unwrap().abs() < 0.1);
        assert!((c.realized_snr_db.unwrap() - 10.0).abs() < 0.1);
        let snr_z = 10.0 * (c.s.energy() / c.z.energy()).log10();
        assert!((snr_z - 10.0).abs() < 0.1);
        assert!(max_additivity_err(&c) < 1e-6);
    }

    #[test]
    fn nest_without_interferers() {
        let c = build(&spec(Scenario::Nest, 0));
        assert!(c.y.samples.iter().all(|&x| x == 0.0));
        assert!(c.far.samples.iter().all(|&x| x == 0.0));
        for i in 0..c.d.len() {
            assert_eq!(c.d.samples[i], c.s.samples[i] + c.v.samples[i]);
        }
    }

    #[test]
    fn enrollment_is_a_different_recording() {
        let c = build(&spec(Scenario::Nest, 1));
        // The enrollment is a full corpus utterance; it never appears as the
        // start of the near-end fill.
        let e = &c.enrollment.samples;
        let found = c.s.samples.windows(e.len().min(200)).any(|w| {
            let scale = w[100] / e[100];
            scale.is_finite() && w.iter().zip(e).all(|(a, b)| (a - b * scale).abs() < 1e-6)
        });
        assert!(!found);
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(Scenario::Dt, 0);
        s.far_speaker = s.near_speaker.clone();
        assert!(s.validate().is_err());
        let mut s = spec(Scenario::Fest, 0);
        s.n_interferers = 1;
        s.interferers = vec!["spk002".into()];
        assert!(s.validate().is_err());
        let mut s = spec(Scenario::Dt, 0);
        s.near_speaker = "nobody".into();
        let corpus = MemCorpus::synthetic(4, 3, 1.0, 5);
        assert!(matches!(
            build_scene(&s, &corpus, &ImageSourceRir, &SceneConfig { clip_seconds: 1.0 }),
            Err(PaecError::Corpus(_))
        ));
    }
}
