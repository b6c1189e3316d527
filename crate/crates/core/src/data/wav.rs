//! 16-bit PCM mono RIFF/WAVE reading and writing.

use std::path::Path;

use super::{Difficulty, Frame};
use crate::error::{Error, Result};

const PCM: u16 = 1;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a WAV byte stream into samples scaled by `1/32768`.
///
/// Chunks other than `fmt ` and `data` are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(Error::format("riff.magic", "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::format("riff.form", "form type is not WAVE"));
    }
    let mut at = 12;
    let mut fmt_seen = false;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body = at + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::format(
                    format!("chunk '{}'.size", String::from_utf8_lossy(id)),
                    format!("{size} bytes declared, {} available", bytes.len() - body),
                )
            })?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format("fmt.size", format!("{size} bytes, need at least 16")));
                }
                let format = u16_at(bytes, body);
                if format != PCM {
                    return Err(Error::format("fmt.audio_format", format!("{format}, expected 1 (PCM)")));
                }
                let channels = u16_at(bytes, body + 2);
                if channels != 1 {
                    return Err(Error::format("fmt.channels", format!("{channels}, expected 1")));
                }
                let bits = u16_at(bytes, body + 14);
                if bits != 16 {
                    return Err(Error::format("fmt.bits_per_sample", format!("{bits}, expected 16")));
                }
                fmt_seen = true;
            }
            b"data" => {
                if !fmt_seen {
                    return Err(Error::format("fmt", "data chunk precedes the fmt chunk"));
                }
                if !size.is_multiple_of(2) {
                    return Err(Error::format("data.size", format!("{size} is not a whole number of samples")));
                }
                return Ok(bytes[body..end]
                    .chunks_exact(2)
                    .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0)
                    .collect());
            }
            _ => {}
        }
        // chunks are word aligned
        at = end + (size & 1);
    }
    if fmt_seen {
        Err(Error::format("data", "no data chunk"))
    } else {
        Err(Error::format("fmt", "no fmt chunk"))
    }
}

/// Reads a WAV file and cuts it into consecutive `frame_len` frames. A
/// trailing partial frame is dropped. Frames are labeled hard.
pub fn load_wav(path: impl AsRef<Path>, frame_len: usize) -> Result<Vec<Frame>> {
    if frame_len == 0 {
        return Err(Error::Config("frame_len must be positive".into()));
    }
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let samples = decode_wav(&bytes)?;
    let name = path.display();
    Ok(samples
        .chunks_exact(frame_len)
        .enumerate()
        .map(|(i, chunk)| Frame {
            samples: chunk.to_vec(),
            difficulty: Some(Difficulty::Hard),
            source_id: format!("{name}#{i}"),
        })
        .collect())
}

/// Quantizes samples to 16 bits (round to nearest, saturating) and encodes
/// a canonical 44-byte-header WAV.
pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(samples, sample_rate)).map_err(|e| Error::io(path, e))
}
