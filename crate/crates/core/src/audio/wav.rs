//! Mono 16-bit PCM WAV at 16 kHz, the only encoding the pipeline accepts.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const PCM: u16 = 1;
const SCALE: f64 = 32767.0;

fn format_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        field,
        detail: detail.into(),
    }
}

/// Quantizes to 16 bits after clipping to [−1, 1].
pub fn encode(w: &Waveform) -> Vec<u8> {
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let q = (s.clamp(-1.0, 1.0) * SCALE).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_err("header", "missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err("chunk", "chunk extends past end of file"))?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(format_err("fmt", "chunk shorter than 16 bytes"));
                }
                let u16_at = |o: usize| u16::from_le_bytes(bytes[body + o..body + o + 2].try_into().unwrap());
                let rate = u32::from_le_bytes(bytes[body + 4..body + 8].try_into().unwrap());
                fmt = Some((u16_at(0), u16_at(2), rate, u16_at(14)));
            }
            b"data" => {
                let (encoding, channels, rate, bits) =
                    fmt.ok_or_else(|| format_err("fmt", "data chunk before fmt chunk"))?;
                if encoding != PCM {
                    return Err(format_err("encoding", format!("format tag {encoding}, expected PCM (1)")));
                }
                if channels != 1 {
                    return Err(format_err("channels", format!("{channels}, expected 1")));
                }
                if rate != SAMPLE_RATE {
                    return Err(format_err("sample_rate", format!("{rate} Hz, expected {SAMPLE_RATE}")));
                }
                if bits != 16 {
                    return Err(format_err("bits_per_sample", format!("{bits}, expected 16")));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| (f64::from(i16::from_le_bytes([c[0], c[1]])) / SCALE).max(-1.0))
                    .collect();
                return Ok(Waveform::new(samples));
            }
            _ => {}
        }
        // Chunks are padded to even length.
        pos = end + (len & 1);
    }
    Err(format_err("data", "no data chunk"))
}

pub fn write(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode(w))?;
    f.flush()?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let w = Waveform::new((0..400).map(|i| (i as f64 * 0.05).sin() * 0.8).collect());
        let back = decode(&encode(&w)).unwrap();
        assert_eq!(back.samples.len(), 400);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 0.5 / SCALE + 1e-12);
        }
        // Second pass is exact: the values already sit on the grid.
        assert_eq!(encode(&back), encode(&w));
    }

    #[test]
    fn header_is_canonical() {
        let bytes = encode(&Waveform::new(vec![0.0; 3]));
        assert_eq!(bytes.len(), 44 + 6);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 16000);
    }

    fn patch(offset: usize, value: &[u8]) -> Vec<u8> {
        let mut bytes = encode(&Waveform::new(vec![0.1; 8]));
        bytes[offset..offset + value.len()].copy_from_slice(value);
        bytes
    }

    #[test]
    fn rejections_name_the_field() {
        let cases = [
            (patch(22, &2u16.to_le_bytes()), "channels"),
            (patch(24, &44100u32.to_le_bytes()), "sample_rate"),
            (patch(34, &24u16.to_le_bytes()), "bits_per_sample"),
            (patch(20, &3u16.to_le_bytes()), "encoding"),
            (patch(0, b"RIFX"), "header"),
        ];
        for (bytes, want) in cases {
            match decode(&bytes) {
                Err(Error::Format { field, .. }) => assert_eq!(field, want),
                other => panic!("expected format error on {want}, got {other:?}"),
            }
        }
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = encode(&Waveform::new(vec![0.25, -0.25]));
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[36..]);
        let w = decode(&bytes).unwrap();
        assert_eq!(w.samples.len(), 2);
    }
}
