//! One-shot sample library and sample-accurate loop rendering.

mod render;
pub mod synth;
mod wav;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use render::{render_bar, render_presentation, step_onset, BAR_SAMPLES, PRESENTATION_SAMPLES};
pub use wav::{decode_wav, decode_wav_raw, encode_wav, RawAudio};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;

/// Mono 44.1 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Self {
        Self { samples }
    }

    pub fn silence(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Linear-interpolation resampler. Output length is
/// `floor(len * to / from)`; positions past the last input sample hold it.
pub fn resample_linear(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if input.is_empty() || from == to {
        return input.to_vec();
    }
    let out_len = (input.len() as u64 * u64::from(to) / u64::from(from)) as usize;
    let ratio = f64::from(from) / f64::from(to);
    let last = input.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = (pos - i0 as f64) as f32;
            input[i0] + (input[i1] - input[i0]) * frac
        })
        .collect()
}

/// Sample identifiers (file stems) mapped to their one-shot waveforms.
#[derive(Clone, Debug)]
pub struct SampleLibrary {
    entries: BTreeMap<String, Waveform>,
    ids: Vec<String>,
    source: Option<PathBuf>,
}

impl SampleLibrary {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Waveform)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, w) in entries {
            if map.insert(id.clone(), w).is_some() {
                return Err(Error::Config(format!("duplicate sample id `{id}`")));
            }
        }
        if map.is_empty() {
            return Err(Error::Config("sample library is empty".into()));
        }
        let ids = map.keys().cloned().collect();
        Ok(Self {
            entries: map,
            ids,
            source: None,
        })
    }

    /// Sorted identifiers; random draws index into this list.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&Waveform> {
        self.entries.get(id)
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }
}

/// Load every `*.wav` in a flat directory. Identifier = file stem.
pub fn load_library(directory: impl AsRef<Path>) -> Result<SampleLibrary> {
    let dir = directory.as_ref();
    let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no .wav files in sample directory {}",
            dir.display()
        )));
    }
    paths.sort();
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let load_err = |reason: String| Error::Load {
            path: path.clone(),
            reason,
        };
        let bytes = std::fs::read(&path).map_err(|e| load_err(e.to_string()))?;
        let wave = decode_wav(&bytes).map_err(|e| load_err(e.to_string()))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| load_err("file name is not valid UTF-8".into()))?
            .to_string();
        entries.push((stem, wave));
    }
    let mut lib = SampleLibrary::from_entries(entries)?;
    lib.source = Some(dir.to_path_buf());
    Ok(lib)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_single_file() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new((0..100).map(|i| i as f32 / 200.0).collect());
        std::fs::write(dir.path().join("kick.wav"), encode_wav(&w)).unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let lib = load_library(dir.path()).unwrap();
        assert_eq!(lib.len(), 1);
        assert_eq!(lib.get("kick").unwrap().len(), 100);
        assert_eq!(lib.source(), Some(dir.path()));
    }

    #[test]
    fn empty_directory_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_library(dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn corrupt_file_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("broken.wav"), b"RIFF\0\0\0\0WAVEjunk").unwrap();
        match load_library(dir.path()) {
            Err(Error::Load { path, .. }) => assert!(path.ends_with("broken.wav")),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = SampleLibrary::from_entries(vec![
            ("a".to_string(), Waveform::new(vec![0.0])),
            ("a".to_string(), Waveform::new(vec![0.0])),
        ]);
        assert!(e.is_err());
    }

    #[test]
    fn resample_identity_and_lengths() {
        let x = vec![0.0, 1.0, 0.5];
        assert_eq!(resample_linear(&x, 44100, 44100), x);
        assert_eq!(resample_linear(&x, 22050, 44100), vec![0.0, 0.5, 1.0, 0.75, 0.5, 0.5]);
        assert_eq!(resample_linear(&[0.0; 480], 48000, 44100).len(), 441);
    }
}
