//! Procedurally synthesized one-shot drum kit.
//!
//! Used wherever a real sample directory is not at hand: tests, the
//! simulation harness and `make-library`. The kit mixes conventional drum
//! voices with a handful of deliberately harsh sounds (ids prefixed
//! `harsh_`), the kind of samples a listener tends to reject.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_wav, SampleLibrary, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const SR: f32 = SAMPLE_RATE as f32;

fn secs(s: f32) -> usize {
    (s * SR) as usize
}

fn env(i: usize, decay: f32) -> f32 {
    (-(i as f32) / (decay * SR)).exp()
}

fn kick(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let f0 = rng.random_range(110.0..170.0);
    let f1 = rng.random_range(40.0..60.0);
    let decay = rng.random_range(0.08..0.2);
    let mut phase = 0.0f32;
    (0..secs(0.35))
        .map(|i| {
            let t = i as f32 / SR;
            let f = f1 + (f0 - f1) * (-t / 0.04).exp();
            phase += 2.0 * PI * f / SR;
            0.9 * phase.sin() * env(i, decay)
        })
        .collect()
}

fn snare(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let tone = rng.random_range(170.0..240.0);
    let decay = rng.random_range(0.05..0.12);
    (0..secs(0.25))
        .map(|i| {
            let t = i as f32 / SR;
            let noise: f32 = rng.random_range(-1.0..1.0);
            (0.35 * (2.0 * PI * tone * t).sin() + 0.5 * noise) * env(i, decay)
        })
        .collect()
}

fn hat(rng: &mut ChaCha8Rng, open: bool) -> Vec<f32> {
    let decay = if open {
        rng.random_range(0.12..0.2)
    } else {
        rng.random_range(0.015..0.04)
    };
    let len = if open { secs(0.3) } else { secs(0.08) };
    let mut prev = 0.0f32;
    (0..len)
        .map(|i| {
            let n: f32 = rng.random_range(-1.0..1.0);
            // first difference as a crude high-pass
            let hp = n - prev;
            prev = n;
            0.35 * hp * env(i, decay)
        })
        .collect()
}

fn tom(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let f = rng.random_range(90.0..220.0);
    let decay = rng.random_range(0.1..0.2);
    (0..secs(0.3))
        .map(|i| {
            let t = i as f32 / SR;
            0.7 * (2.0 * PI * f * (1.0 - 0.2 * t) * t).sin() * env(i, decay)
        })
        .collect()
}

fn harsh(rng: &mut ChaCha8Rng, variant: usize) -> Vec<f32> {
    let len = secs(0.4);
    match variant % 3 {
        // square-wave squeal
        0 => {
            let f = rng.random_range(5000.0..8000.0);
            (0..len)
                .map(|i| {
                    let t = i as f32 / SR;
                    0.8 * (2.0 * PI * f * t).sin().signum() * env(i, 0.5)
                })
                .collect()
        }
        // sustained white noise
        1 => (0..len)
            .map(|i| 0.8 * rng.random_range(-1.0f32..1.0) * env(i, 0.6))
            .collect(),
        // inharmonic metallic ring
        _ => {
            let base = rng.random_range(3000.0..4500.0);
            (0..len)
                .map(|i| {
                    let t = i as f32 / SR;
                    let s: f32 = [1.0, 1.41, 2.23, 3.07]
                        .iter()
                        .map(|m| (2.0 * PI * base * m * t).sin())
                        .sum();
                    0.25 * s * env(i, 0.4)
                })
                .collect()
        }
    }
}

/// A deterministic kit of `4 * per_kind` conventional voices plus `harsh`
/// harsh ones.
pub fn synth_kit(seed: u64, per_kind: usize, harsh_count: usize) -> Vec<(String, Waveform)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kit = Vec::new();
    for i in 0..per_kind {
        kit.push((format!("kick_{i}"), kick(&mut rng)));
        kit.push((format!("snare_{i}"), snare(&mut rng)));
        kit.push((format!("hat_{i}"), hat(&mut rng, i % 2 == 1)));
        kit.push((format!("tom_{i}"), tom(&mut rng)));
    }
    for i in 0..harsh_count {
        kit.push((format!("harsh_{i}"), harsh(&mut rng, i)));
    }
    kit.into_iter()
        .map(|(id, s)| (id, Waveform::new(s)))
        .collect()
}

/// In-memory library from [`synth_kit`].
pub fn synth_library(seed: u64, per_kind: usize, harsh_count: usize) -> Result<SampleLibrary> {
    SampleLibrary::from_entries(synth_kit(seed, per_kind, harsh_count))
}

/// Write the kit as 16-bit WAV files into `dir` (created if missing).
pub fn write_synth_library(dir: &Path, seed: u64, per_kind: usize, harsh_count: usize) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for (id, w) in synth_kit(seed, per_kind, harsh_count) {
        let path = dir.join(format!("{id}.wav"));
        std::fs::write(&path, encode_wav(&w)).map_err(|e| Error::io(&path, e))?;
        ids.push(id);
    }
    Ok(ids)
}
