//! Shoebox-room impulse responses from the image-source model.

use serde::{Deserialize, Serialize};

use crate::error::{PaecError, Result};
use crate::signal::SAMPLE_RATE;

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Sampling ranges for rooms.
pub const ROOM_MIN: [f64; 3] = [3.0, 3.0, 3.0];
pub const ROOM_MAX: [f64; 3] = [8.0, 5.0, 4.0];
pub const RT60_RANGE: (f64, f64) = (0.2, 1.2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Length, width, height in meters.
    pub dimensions: [f64; 3],
    pub rt60: f64,
    pub source_pos: [f64; 3],
    pub mic_pos: [f64; 3],
}

impl RoomSpec {
    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [l, w, h] = self.dimensions;
        2.0 * (l * w + l * h + w * h)
    }

    pub fn source_mic_distance(&self) -> f64 {
        self.source_pos
            .iter()
            .zip(&self.mic_pos)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_geometry(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(*d > 0.0)) {
            return Err(PaecError::Geometry(format!(
                "non-positive room dimensions {:?}",
                self.dimensions
            )));
        }
        for (name, p) in [("source", &self.source_pos), ("microphone", &self.mic_pos)] {
            if p.iter().zip(&self.dimensions).any(|(x, d)| !(*x > 0.0 && *x < *d)) {
                return Err(PaecError::Geometry(format!(
                    "{name} position {p:?} is not strictly inside {:?}",
                    self.dimensions
                )));
            }
        }
        if !(self.rt60 > 0.0) {
            return Err(PaecError::Geometry(format!("rt60 {} must be positive", self.rt60)));
        }
        Ok(())
    }

    /// True when dimensions and rt60 fall inside the simulated-room ranges.
    pub fn in_sampling_ranges(&self) -> bool {
        self.dimensions
            .iter()
            .enumerate()
            .all(|(i, d)| (ROOM_MIN[i]..=ROOM_MAX[i]).contains(d))
            && (RT60_RANGE.0..=RT60_RANGE.1).contains(&self.rt60)
    }
}

/// Source of room impulse responses. Implementations must be deterministic
/// in `(room, seed)`.
pub trait RirProvider: Send + Sync {
    fn rir(&self, room: &RoomSpec, seed: u64) -> Result<Vec<f64>>;
}

/// Image-source generator with frequency-independent wall reflection.
///
/// The reflection coefficient starts from Eyring's formula and is then
/// refined a few times against the Schroeder decay of the rendered response,
/// since a shoebox lattice with uniform walls decays more slowly than a
/// diffuse field. Images are summed up to the distance sound travels in
/// `rt60`, and the response is `rt60` long. The model is deterministic, so
/// the seed is not used.
#[derive(Debug, Clone, Copy, Default)]
pub struct ImageSourceRir;

impl ImageSourceRir {
    pub fn reflection_coefficient(room: &RoomSpec) -> f64 {
        // Energy decays as beta^(2 * reflections); reflections occur at a
        // mean rate c * S / (4 V).
        (-0.1611 * room.volume() / (2.0 * room.surface() * room.rt60)).exp()
    }
}

impl RirProvider for ImageSourceRir {
    fn rir(&self, room: &RoomSpec, _seed: u64) -> Result<Vec<f64>> {
        room.check_geometry()?;
        let mut log_beta = Self::reflection_coefficient(room).ln();
        let mut h = render(room, log_beta.exp());
        for _ in 0..6 {
            let Some(t60) = schroeder_t60(&h) else { break };
            let ratio = t60 / room.rt60;
            if (ratio - 1.0).abs() < 0.02 {
                break;
            }
            log_beta *= ratio;
            h = render(room, log_beta.exp());
        }
        Ok(h)
    }
}

fn render(room: &RoomSpec, beta: f64) -> Vec<f64> {
    {
        let fs = SAMPLE_RATE as f64;
        let direct = (room.source_mic_distance() / SPEED_OF_SOUND * fs).floor() as usize;
        let len = ((room.rt60 * fs).ceil() as usize).max(direct + 1);
        let max_dist = len as f64 / fs * SPEED_OF_SOUND;
        let mut h = vec![0.0; len];
        let dims = room.dimensions;
        let orders: Vec<i64> = dims
            .iter()
            .map(|d| (max_dist / (2.0 * d)).ceil() as i64 + 1)
            .collect();

        // Per axis: image coordinate offset and reflection count for each
        // (n, q) pair.
        let axis_images = |axis: usize| -> Vec<(f64, i32)> {
            let mut v = Vec::new();
            for n in -orders[axis]..=orders[axis] {
                for q in 0..2i64 {
                    let x = (1 - 2 * q) as f64 * room.source_pos[axis]
                        + 2.0 * n as f64 * dims[axis]
                        - room.mic_pos[axis];
                    let refl = ((n - q).abs() + n.abs()) as i32;
                    v.push((x, refl));
                }
            }
            v
        };
        let (xs, ys, zs) = (axis_images(0), axis_images(1), axis_images(2));
        let max_sq = max_dist * max_dist;
        for &(x, rx) in &xs {
            let x2 = x * x;
            if x2 > max_sq {
                continue;
            }
            for &(y, ry) in &ys {
                let xy2 = x2 + y * y;
                if xy2 > max_sq {
                    continue;
                }
                for &(z, rz) in &zs {
                    let d2 = xy2 + z * z;
                    if d2 > max_sq {
                        continue;
                    }
                    let dist = d2.sqrt();
                    let idx = (dist / SPEED_OF_SOUND * fs).floor() as usize;
                    if idx >= len {
                        continue;
                    }
                    let gain = beta.powi(rx + ry + rz) / (4.0 * std::f64::consts::PI * dist.max(1e-3));
                    h[idx] += gain;
                }
            }
        }
        h
    }
}

/// Reverberation time from Schroeder backward integration, fitting the
/// decay between -5 dB and -25 dB and extrapolating to 60 dB.
pub fn schroeder_t60(h: &[f64]) -> Option<f64> {
    let mut edc: Vec<f64> = h.iter().map(|v| v * v).collect();
    for i in (0..edc.len().saturating_sub(1)).rev() {
        edc[i] += edc[i + 1];
    }
    let total = *edc.first()?;
    if total <= 0.0 {
        return None;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).max(1e-30).log10()).collect();
    let points: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, &l)| (-25.0..=-5.0).contains(&l))
        .map(|(i, &l)| (i as f64 / SAMPLE_RATE as f64, l))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}
