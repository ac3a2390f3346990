use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::echo::{Distortion, ATTENUATION_RANGE};
use super::scene::{Scenario, SceneSpec, MAX_ECHO_DELAY_S, SER_RANGE, SNR_RANGE};
use crate::error::{PaecError, Result};

/// Double-talk : far-end single-talk : near-end single-talk.
pub const SCENARIO_WEIGHTS: [(Scenario, f64); 3] =
    [(Scenario::Dt, 0.8), (Scenario::Fest, 0.1), (Scenario::Nest, 0.1)];
/// Probability of 0, 1 or 2 interfering talkers when near-end speech exists.
pub const INTERFERER_WEIGHTS: [f64; 3] = [0.2, 0.5, 0.3];
pub const DISTORTION_PROB: f64 = 0.1;

fn pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Draws `n` scene specs over `speakers`. Deterministic in `(n, seed,
/// speakers)`.
pub fn sample_specs(n: usize, seed: u64, speakers: &[String], id_prefix: &str) -> Result<Vec<SceneSpec>> {
    if n == 0 {
        return Err(PaecError::param("need at least one scene"));
    }
    if speakers.len() < 3 {
        return Err(PaecError::Corpus(format!(
            "scene sampling needs at least 3 speakers, got {}",
            speakers.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scen_w: Vec<f64> = SCENARIO_WEIGHTS.iter().map(|(_, w)| *w).collect();
    (0..n)
        .map(|i| {
            let scenario = SCENARIO_WEIGHTS[pick(&scen_w, &mut rng)].0;
            let mut order: Vec<&String> = speakers.iter().collect();
            order.shuffle(&mut rng);
            let near = order[0].clone();
            let far = order[1].clone();
            let n_interferers = if scenario.has_near_end() {
                pick(&INTERFERER_WEIGHTS, &mut rng) as u8
            } else {
                0
            };
            // Interferers differ from the near-end talker and from each other;
            // with only three speakers the far-end talker may be reused.
            let pool: Vec<&String> = if speakers.len() >= 4 {
                order[2..].to_vec()
            } else {
                vec![order[2], order[1]]
            };
            let interferers = pool.iter().take(n_interferers as usize).map(|s| s.to_string()).collect();
            let ser: f64 = rng.random_range(SER_RANGE.0..=SER_RANGE.1);
            let snr_db = rng.random_range(SNR_RANGE.0..=SNR_RANGE.1);
            let echo_delay_s = rng.random_range(0.0..=MAX_ECHO_DELAY_S);
            let distortion = if scenario.has_echo() && rng.random_bool(DISTORTION_PROB) {
                if rng.random_bool(0.5) {
                    Distortion::Clip
                } else {
                    Distortion::Attenuate {
                        gain: rng.random_range(ATTENUATION_RANGE.0..=ATTENUATION_RANGE.1),
                    }
                }
            } else {
                Distortion::None
            };
            Ok(SceneSpec {
                id: format!("{id_prefix}{i:06}"),
                scenario,
                ser_db: scenario.has_echo().then_some(ser),
                snr_db,
                n_interferers,
                echo_delay_s,
                distortion,
                near_speaker: near,
                far_speaker: far,
                interferers,
                seed: rng.random(),
            })
        })
        .collect()
}

/// Splits speaker ids into disjoint train/val/test pools (8:1:1 of the
/// speakers, each pool at least 3 speakers).
pub fn split_speakers(speakers: &[String], seed: u64) -> Result<[Vec<String>; 3]> {
    if speakers.len() < 9 {
        return Err(PaecError::Corpus(format!(
            "disjoint train/val/test splits need at least 9 speakers, got {}",
            speakers.len()
        )));
    }
    let mut all = speakers.to_vec();
    all.sort();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = all.len();
    let n_val = (n / 10).max(3);
    let n_test = (n / 10).max(3);
    let test = all.split_off(n - n_test);
    let val = all.split_off(all.len() - n_val);
    Ok([all, val, test])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speakers(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn single_spec_in_range() {
        let specs = sample_specs(1, 3, &speakers(5), "x").unwrap();
        assert_eq!(specs.len(), 1);
        specs[0].validate().unwrap();
    }

    #[test]
    fn deterministic() {
        let a = sample_specs(50, 9, &speakers(6), "c").unwrap();
        let b = sample_specs(50, 9, &speakers(6), "c").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_specs(50, 10, &speakers(6), "c").unwrap());
    }

    #[test]
    fn scenario_fraction() {
        let specs = sample_specs(10_000, 1, &speakers(8), "c").unwrap();
        let dt = specs.iter().filter(|s| s.scenario == Scenario::Dt).count() as f64 / 1e4;
        assert!((0.77..=0.83).contains(&dt), "{dt}");
        assert!(specs.iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn three_speaker_pool_is_valid() {
        let specs = sample_specs(500, 2, &speakers(3), "c").unwrap();
        assert!(specs.iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn splits_are_disjoint() {
        let [tr, va, te] = split_speakers(&speakers(20), 4).unwrap();
        assert_eq!(tr.len() + va.len() + te.len(), 20);
        for s in &va {
            assert!(!tr.contains(s) && !te.contains(s));
        }
        for s in &te {
            assert!(!tr.contains(s));
        }
        assert!(split_speakers(&speakers(5), 0).is_err());
    }
}
