//! RIFF/WAVE encoding (16-bit PCM mono, 44.1 kHz) and a tolerant decoder.

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Encode as canonical 44-byte-header 16-bit PCM mono.
///
/// Amplitudes map to `round(a * 32767)`, clamped to the i16 range.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = (w.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &a in w.samples() {
        let q = (f64::from(a) * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Decoded WAV contents before any channel or rate conversion.
#[derive(Clone, Debug, PartialEq)]
pub struct RawAudio {
    pub sample_rate: u32,
    pub channels: u16,
    /// Interleaved frames, scaled to [-1, 1].
    pub interleaved: Vec<f32>,
}

impl RawAudio {
    pub fn frames(&self) -> usize {
        self.interleaved.len() / self.channels as usize
    }

    /// Average channels down to mono.
    pub fn to_mono(&self) -> Vec<f32> {
        let ch = self.channels as usize;
        if ch == 1 {
            return self.interleaved.clone();
        }
        self.interleaved
            .chunks_exact(ch)
            .map(|f| f.iter().sum::<f32>() / ch as f32)
            .collect()
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse PCM (8/16/24/32-bit) or 32/64-bit float WAV data. Integer PCM is
/// scaled by `2^(bits-1)`, so 16-bit maps by division by 32768.
pub fn decode_wav_raw(bytes: &[u8]) -> Result<RawAudio> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Wav(format!(
                    "chunk `{}` claims {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Wav("fmt chunk shorter than 16 bytes".into()));
                }
                let mut tag = u16_at(body, 0);
                if tag == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::Wav("truncated WAVE_FORMAT_EXTENSIBLE".into()));
                    }
                    tag = u16_at(body, 24);
                }
                fmt = Some((tag, u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (tag, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::Wav("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Wav("missing data chunk".into()))?;
    if channels == 0 {
        return Err(Error::Wav("zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(Error::Wav("zero sample rate".into()));
    }
    let interleaved: Vec<f32> = match (tag, bits) {
        (FORMAT_PCM, 8) => data.iter().map(|&b| (f32::from(b) - 128.0) / 128.0).collect(),
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
            .collect(),
        (FORMAT_PCM, 24) => data
            .chunks_exact(3)
            .map(|c| (i32::from_le_bytes([0, c[0], c[1], c[2]]) >> 8) as f32 / 8_388_608.0)
            .collect(),
        (FORMAT_PCM, 32) => data
            .chunks_exact(4)
            .map(|c| (f64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])) / 2_147_483_648.0) as f32)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        (FORMAT_FLOAT, 64) => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
        _ => {
            return Err(Error::Wav(format!(
                "unsupported encoding: format tag {tag}, {bits} bits"
            )))
        }
    };
    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(Error::Wav("non-finite sample values".into()));
    }
    let usable = interleaved.len() - interleaved.len() % channels as usize;
    let mut interleaved = interleaved;
    interleaved.truncate(usable);
    Ok(RawAudio {
        sample_rate,
        channels,
        interleaved,
    })
}

/// Decode to a mono 44.1 kHz waveform (downmixing and resampling as needed).
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let raw = decode_wav_raw(bytes)?;
    let mono = raw.to_mono();
    let samples = if raw.sample_rate == SAMPLE_RATE {
        mono
    } else {
        super::resample_linear(&mono, raw.sample_rate, SAMPLE_RATE)
    };
    Ok(Waveform::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_sample_bytes() {
        let bytes = encode_wav(&Waveform::new(vec![1.0]));
        assert_eq!(bytes.len(), 46);
        assert_eq!(&bytes[44..], &[0xFF, 0x7F]);
    }

    #[test]
    fn golden_four_sample_file() {
        // Hand-assembled from the RIFF layout: 44-byte header + 8 data bytes.
        #[rustfmt::skip]
        let expected: [u8; 52] = [
            b'R', b'I', b'F', b'F', 44, 0, 0, 0,       // riff size = 36 + 8
            b'W', b'A', b'V', b'E',
            b'f', b'm', b't', b' ', 16, 0, 0, 0,       // fmt chunk, 16 bytes
            1, 0,                                      // PCM
            1, 0,                                      // mono
            0x44, 0xAC, 0, 0,                          // 44100
            0x88, 0x58, 0x01, 0,                       // byte rate 88200
            2, 0,                                      // block align
            16, 0,                                     // bits per sample
            b'd', b'a', b't', b'a', 8, 0, 0, 0,        // data chunk, 8 bytes
            0x00, 0x00,                                // 0
            0x00, 0x40,                                // round(0.5 * 32767) = 16384
            0x00, 0xC0,                                // -16384
            0x01, 0x80,                                // -32767
        ];
        let bytes = encode_wav(&Waveform::new(vec![0.0, 0.5, -0.5, -1.0]));
        assert_eq!(bytes, expected);
    }

    #[test]
    fn pcm_mapping_on_decode() {
        let mut bytes = encode_wav(&Waveform::new(vec![0.0, 0.0]));
        bytes[44..46].copy_from_slice(&(-32768i16).to_le_bytes());
        bytes[46..48].copy_from_slice(&16384i16.to_le_bytes());
        let w = decode_wav(&bytes).unwrap();
        assert_eq!(w.samples(), &[-1.0, 0.5]);
    }

    #[test]
    fn out_of_range_amplitudes_clamp() {
        let bytes = encode_wav(&Waveform::new(vec![2.0, -2.0]));
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), -32768);
    }

    #[test]
    fn malformed_headers_are_errors() {
        assert!(decode_wav(b"RIFX").is_err());
        assert!(decode_wav(b"").is_err());
        let mut bytes = encode_wav(&Waveform::new(vec![0.1; 8]));
        // data chunk claims more than is present
        bytes[40..44].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(decode_wav(&bytes), Err(Error::Wav(_))));
        let mut bytes = encode_wav(&Waveform::new(vec![0.1; 8]));
        bytes[12..16].copy_from_slice(b"junk");
        assert!(decode_wav(&bytes).is_err());
    }

    #[test]
    fn stereo_downmix_and_unknown_chunks() {
        // stereo 16-bit with a LIST chunk before data
        let frames: [(i16, i16); 2] = [(16384, 0), (-32768, -32768)];
        let mut data = Vec::new();
        for (l, r) in frames {
            data.extend_from_slice(&l.to_le_bytes());
            data.extend_from_slice(&r.to_le_bytes());
        }
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&44100u32.to_le_bytes());
        b.extend_from_slice(&(44100u32 * 4).to_le_bytes());
        b.extend_from_slice(&4u16.to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[1, 2, 3, 0]);
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(&data);
        let w = decode_wav(&b).unwrap();
        assert_eq!(w.samples(), &[0.25, -1.0]);
    }
}
