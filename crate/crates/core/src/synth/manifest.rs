//! Line-delimited JSON manifests referencing per-component WAV files.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::echo::Distortion;
use super::scene::{Scenario, ScenarioClip, SceneSpec};
use crate::error::{PaecError, Result};
use crate::signal::wav::{read_wav, write_wav_f32};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipPaths {
    pub d: PathBuf,
    pub s: PathBuf,
    pub y: PathBuf,
    pub v: PathBuf,
    pub z: PathBuf,
    pub enroll: PathBuf,
    /// Far-end reference signal.
    #[serde(rename = "ref")]
    pub reference: PathBuf,
}

impl ClipPaths {
    fn resolved(&self, root: &Path) -> ClipPaths {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { root.join(p) };
        ClipPaths {
            d: r(&self.d),
            s: r(&self.s),
            y: r(&self.y),
            v: r(&self.v),
            z: r(&self.z),
            enroll: r(&self.enroll),
            reference: r(&self.reference),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub scenario: Scenario,
    pub ser_db: Option<f64>,
    pub snr_db: f64,
    pub n_interferers: u8,
    pub delay_s: f64,
    pub distortion: Distortion,
    pub near_speaker: String,
    pub far_speaker: String,
    pub interferers: Vec<String>,
    pub paths: ClipPaths,
    pub realized_ser_db: Option<f64>,
    pub realized_snr_db: Option<f64>,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn spec(&self) -> SceneSpec {
        SceneSpec {
            id: self.id.clone(),
            scenario: self.scenario,
            ser_db: self.ser_db,
            snr_db: self.snr_db,
            n_interferers: self.n_interferers,
            echo_delay_s: self.delay_s,
            distortion: self.distortion,
            near_speaker: self.near_speaker.clone(),
            far_speaker: self.far_speaker.clone(),
            interferers: self.interferers.clone(),
            seed: self.seed,
        }
    }

    /// Loads the audio. Relative paths resolve against `root`.
    pub fn load(&self, root: &Path) -> Result<ScenarioClip> {
        let p = self.paths.resolved(root);
        Ok(ScenarioClip {
            spec: self.spec(),
            d: read_wav(&p.d)?,
            s: read_wav(&p.s)?,
            y: read_wav(&p.y)?,
            v: read_wav(&p.v)?,
            z: read_wav(&p.z)?,
            far: read_wav(&p.reference)?,
            enrollment: read_wav(&p.enroll)?,
            realized_ser_db: self.realized_ser_db,
            realized_snr_db: self.realized_snr_db,
        })
    }
}

/// Writes every component of `clip` under `audio_dir` and returns a record
/// whose paths are relative to `root`.
pub fn write_clip_audio(clip: &ScenarioClip, root: &Path, audio_dir: &Path) -> Result<ManifestRecord> {
    let dir = root.join(audio_dir);
    fs::create_dir_all(&dir)?;
    let id = &clip.spec.id;
    let rel = |tag: &str, w: &crate::signal::Waveform| -> Result<PathBuf> {
        let name = audio_dir.join(format!("{id}_{tag}.wav"));
        write_wav_f32(&root.join(&name), w)?;
        Ok(name)
    };
    let paths = ClipPaths {
        d: rel("d", &clip.d)?,
        s: rel("s", &clip.s)?,
        y: rel("y", &clip.y)?,
        v: rel("v", &clip.v)?,
        z: rel("z", &clip.z)?,
        enroll: rel("enroll", &clip.enrollment)?,
        reference: rel("ref", &clip.far)?,
    };
    let s = &clip.spec;
    Ok(ManifestRecord {
        id: s.id.clone(),
        scenario: s.scenario,
        ser_db: s.ser_db,
        snr_db: s.snr_db,
        n_interferers: s.n_interferers,
        delay_s: s.echo_delay_s,
        distortion: s.distortion,
        near_speaker: s.near_speaker.clone(),
        far_speaker: s.far_speaker.clone(),
        interferers: s.interferers.clone(),
        paths,
        realized_ser_db: clip.realized_ser_db,
        realized_snr_db: clip.realized_snr_db,
        seed: s.seed,
    })
}

pub fn write_manifest(records: &[ManifestRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| PaecError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Directory relative manifest paths resolve against by default.
pub fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
