//! MFCC features: the critic's 2D input.
//!
//! Pipeline: reflect-pad by half a window, Hann-windowed frames, magnitude
//! spectrum, area-normalized triangular mel filterbank (HTK mel scale),
//! natural log with a floor, orthonormal DCT-II over bands, keep the first
//! `n_mfcc` coefficients, then per-clip standardization.

use std::f64::consts::PI;
use std::sync::{Arc, LazyLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccSettings {
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
    pub standardize: bool,
}

impl Default for MfccSettings {
    fn default() -> Self {
        Self {
            window: 2048,
            hop: 256,
            n_mels: 64,
            n_mfcc: 32,
            f_min: 0.0,
            f_max: 22_050.0,
            log_floor: 1e-10,
            standardize: true,
        }
    }
}

impl MfccSettings {
    /// Bounds under which the default critic stays a supported shape.
    pub const MFCC_RANGE: std::ops::RangeInclusive<usize> = 8..=48;
    pub const HOP_RANGE: std::ops::RangeInclusive<usize> = 128..=2048;

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !Self::MFCC_RANGE.contains(&self.n_mfcc) {
            return fail(format!("n_mfcc {} outside {:?}", self.n_mfcc, Self::MFCC_RANGE));
        }
        if !Self::HOP_RANGE.contains(&self.hop) {
            return fail(format!("hop {} outside {:?}", self.hop, Self::HOP_RANGE));
        }
        if self.n_mels < self.n_mfcc {
            return fail(format!("n_mels {} < n_mfcc {}", self.n_mels, self.n_mfcc));
        }
        if self.window < 16 || !self.window.is_power_of_two() {
            return fail(format!("window {} must be a power of two >= 16", self.window));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= f64::from(SAMPLE_RATE) / 2.0) {
            return fail(format!("invalid mel range {}..{}", self.f_min, self.f_max));
        }
        if self.log_floor <= 0.0 {
            return fail("log_floor must be positive".into());
        }
        Ok(())
    }

    /// Frame count for an input of `len` samples (centered framing).
    pub fn frames_for(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Coefficients x frames, row-major (axis 0 = coefficient, axis 1 = time).
#[derive(Clone, Debug, PartialEq)]
pub struct MfccMatrix {
    n_coeffs: usize,
    n_frames: usize,
    values: Vec<f64>,
    settings: MfccSettings,
}

impl MfccMatrix {
    pub fn new(n_coeffs: usize, n_frames: usize, values: Vec<f64>, settings: MfccSettings) -> Result<Self> {
        if values.len() != n_coeffs * n_frames {
            return Err(Error::Contract(format!(
                "{} values for a {n_coeffs}x{n_frames} matrix",
                values.len()
            )));
        }
        Ok(Self {
            n_coeffs,
            n_frames,
            values,
            settings,
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_coeffs, self.n_frames)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, coeff: usize, frame: usize) -> f64 {
        self.values[coeff * self.n_frames + frame]
    }

    pub fn settings(&self) -> &MfccSettings {
        &self.settings
    }
}

/// Precomputed window, filterbank and DCT for one settings value.
pub struct MfccExtractor {
    settings: MfccSettings,
    window: Vec<f64>,
    /// Per band: first bin and its contiguous nonzero weights.
    bands: Vec<(usize, Vec<f64>)>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Area-normalized triangular mel filterbank as dense `n_mels x (n_fft/2+1)`.
pub fn mel_filterbank(settings: &MfccSettings) -> Vec<Vec<f64>> {
    let n_bins = settings.window / 2 + 1;
    let lo = hz_to_mel(settings.f_min);
    let hi = hz_to_mel(settings.f_max);
    let edges: Vec<f64> = (0..settings.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (settings.n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(SAMPLE_RATE) / settings.window as f64;
    (0..settings.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let rise = (f - left) / (center - left);
                    let fall = (right - f) / (right - center);
                    rise.min(fall).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

impl MfccExtractor {
    pub fn new(settings: MfccSettings) -> Result<Self> {
        settings.validate()?;
        let bands = mel_filterbank(&settings)
            .into_iter()
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row[first..=last.max(first)].to_vec())
            })
            .collect();
        let n = settings.n_mels as f64;
        let dct = (0..settings.n_mfcc)
            .flat_map(|k| {
                let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                (0..settings.n_mels).map(move |b| {
                    scale * (PI * k as f64 * (2 * b + 1) as f64 / (2.0 * n)).cos()
                })
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(settings.window);
        Ok(Self {
            window: hann(settings.window),
            settings,
            bands,
            dct,
            fft,
        })
    }

    pub fn settings(&self) -> &MfccSettings {
        &self.settings
    }

    /// Log-mel cepstrum before per-clip standardization.
    pub fn compute_raw(&self, w: &Waveform) -> Result<MfccMatrix> {
        self.cepstrum(w.samples())
    }

    fn cepstrum(&self, x: &[f32]) -> Result<MfccMatrix> {
        let s = &self.settings;
        let pad = s.window / 2;
        if x.len() <= pad {
            return Err(Error::Contract(format!(
                "input of {} samples is too short to reflect-pad by {pad}",
                x.len()
            )));
        }
        let padded = reflect_pad(x, pad);
        let n_frames = s.frames_for(x.len());
        let n_bins = s.window / 2 + 1;
        let mut values = vec![0.0; s.n_mfcc * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); s.window];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mags = [vec![0.0; n_bins], vec![0.0; n_bins]];
        let mut logmel = vec![0.0; s.n_mels];
        // Two real frames per complex transform: a in the real part, b in the
        // imaginary part, separated afterwards by conjugate symmetry.
        for t0 in (0..n_frames).step_by(2) {
            let pair = (n_frames - t0).min(2);
            let frame = |t: usize| &padded[t * s.hop..t * s.hop + s.window];
            let a = frame(t0);
            for (i, b) in buf.iter_mut().enumerate() {
                let im = if pair == 2 { frame(t0 + 1)[i] } else { 0.0 };
                *b = Complex::new(a[i] * self.window[i], im * self.window[i]);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let n = s.window;
            for k in 0..n_bins {
                let z = buf[k];
                let zc = buf[(n - k) % n].conj();
                let (ra, ia) = (z.re + zc.re, z.im + zc.im);
                let (rb, ib) = (z.re - zc.re, z.im - zc.im);
                mags[0][k] = 0.5 * (ra * ra + ia * ia).sqrt();
                mags[1][k] = 0.5 * (rb * rb + ib * ib).sqrt();
            }
            for (j, mag) in mags.iter().enumerate().take(pair) {
                for (out, (first, weights)) in logmel.iter_mut().zip(&self.bands) {
                    let e: f64 = weights.iter().zip(&mag[*first..]).map(|(w, m)| w * m).sum();
                    *out = e.max(s.log_floor).ln();
                }
                let t = t0 + j;
                for k in 0..s.n_mfcc {
                    let row = &self.dct[k * s.n_mels..(k + 1) * s.n_mels];
                    values[k * n_frames + t] = row.iter().zip(&logmel).map(|(a, b)| a * b).sum();
                }
            }
        }
        MfccMatrix::new(s.n_mfcc, n_frames, values, *s)
    }

    pub fn compute(&self, w: &Waveform) -> Result<MfccMatrix> {
        let mut m = self.compute_raw(w)?;
        if self.settings.standardize {
            standardize(&mut m.values);
        }
        Ok(m)
    }
}

fn reflect_pad(x: &[f32], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| f64::from(x[i])));
    out.extend(x.iter().map(|&v| f64::from(v)));
    out.extend((0..pad).map(|i| f64::from(x[n - 2 - i])));
    out
}

/// Subtract the mean and divide by (population std + 1e-8).
pub fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    values.iter_mut().for_each(|v| *v = (*v - mean) / denom);
}

static DEFAULT_EXTRACTOR: LazyLock<MfccExtractor> =
    LazyLock::new(|| MfccExtractor::new(MfccSettings::default()).expect("default MFCC settings"));

/// MFCCs under the default settings.
pub fn compute_mfcc(w: &Waveform) -> Result<MfccMatrix> {
    DEFAULT_EXTRACTOR.compute(w)
}

/// Shared extractor for the default settings.
pub fn default_extractor() -> &'static MfccExtractor {
    &DEFAULT_EXTRACTOR
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_for_a_bar() {
        let m = compute_mfcc(&Waveform::silence(88_200)).unwrap();
        assert_eq!(m.shape(), (32, 345));
    }

    #[test]
    fn silent_input_only_keeps_c0() {
        let m = default_extractor()
            .compute_raw(&Waveform::silence(88_200))
            .unwrap();
        for t in 0..m.n_frames() {
            assert_eq!(m.get(0, t), m.get(0, 0));
            for k in 1..m.n_coeffs() {
                assert!(m.get(k, t).abs() < 1e-9, "c{k} = {}", m.get(k, t));
            }
        }
        assert!(m.get(0, 0).abs() > 1.0);
    }

    #[test]
    fn standardized_moments() {
        let x: Vec<f32> = (0..88_200)
            .map(|i| ((i as f32) * 0.037).sin() * ((i / 3000) % 2) as f32)
            .collect();
        let m = compute_mfcc(&Waveform::new(x)).unwrap();
        let n = m.values().len() as f64;
        let mean = m.values().iter().sum::<f64>() / n;
        let std = (m.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-3);
    }

    #[test]
    fn settings_validation() {
        assert!(MfccSettings::default().validate().is_ok());
        let bad = MfccSettings {
            n_mfcc: 80,
            n_mels: 64,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MfccSettings {
            hop: 64,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn too_short_input_is_contract_error() {
        assert!(matches!(
            compute_mfcc(&Waveform::silence(100)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn wide_filterbank_rows_have_unit_area() {
        let s = MfccSettings::default();
        let bank = mel_filterbank(&s);
        let bin_hz = f64::from(SAMPLE_RATE) / s.window as f64;
        assert_eq!(bank.len(), 64);
        for row in &bank {
            let support = row.iter().filter(|&&w| w > 0.0).count();
            assert!(support > 0);
            // sampled triangles only integrate to 1 once they span many bins
            if support >= 20 {
                let area: f64 = row.iter().sum::<f64>() * bin_hz;
                assert!((area - 1.0).abs() < 0.02, "area {area} over {support} bins");
            }
        }
    }
}
