use std::io::Write;

use crate::signal::Waveform;

use super::DatasetError;

fn err(offset: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Wav {
        offset,
        msg: msg.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> Result<u16, DatasetError> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| err(at, "unexpected end of file"))
}

fn u32_at(b: &[u8], at: usize) -> Result<u32, DatasetError> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| err(at, "unexpected end of file"))
}

#[derive(Clone, Copy, PartialEq)]
enum Codec {
    Pcm16,
    Float32,
}

struct Format {
    codec: Codec,
    channels: usize,
    sample_rate: u32,
}

fn parse_fmt(b: &[u8], at: usize, size: usize) -> Result<Format, DatasetError> {
    if size < 16 {
        return Err(err(at, format!("fmt chunk of {size} bytes is too short")));
    }
    let mut tag = u16_at(b, at)?;
    let channels = u16_at(b, at + 2)? as usize;
    let sample_rate = u32_at(b, at + 4)?;
    let bits = u16_at(b, at + 14)?;
    if tag == 0xFFFE {
        // WAVE_FORMAT_EXTENSIBLE: the real tag opens the subformat GUID
        if size < 26 {
            return Err(err(at, "extensible fmt chunk is too short"));
        }
        tag = u16_at(b, at + 24)?;
    }
    let codec = match (tag, bits) {
        (1, 16) => Codec::Pcm16,
        (3, 32) => Codec::Float32,
        _ => return Err(err(at, format!("unsupported codec: format tag {tag}, {bits} bits per sample"))),
    };
    if channels == 0 || sample_rate == 0 {
        return Err(err(at, format!("{channels} channels at {sample_rate} Hz")));
    }
    Ok(Format {
        codec,
        channels,
        sample_rate,
    })
}

/// Decodes a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples.
/// Multichannel audio is averaged to mono; PCM is scaled by `1 / 32768`.
pub fn parse_wav(bytes: &[u8], source_id: &str) -> Result<Waveform, DatasetError> {
    if bytes.len() < 12 {
        return Err(err(0, format!("{} bytes is too short for a RIFF header", bytes.len())));
    }
    if &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err(0, "not a RIFF/WAVE file"));
    }
    let mut at = 12;
    let mut format = None;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4)? as usize;
        let body = at + 8;
        match id {
            b"fmt " => format = Some(parse_fmt(bytes, body, size)?),
            b"data" => {
                let fmt = format.ok_or_else(|| err(at, "data chunk before fmt chunk"))?;
                let width = if fmt.codec == Codec::Pcm16 { 2 } else { 4 };
                let end = body.checked_add(size).filter(|&e| e <= bytes.len());
                let end = end.ok_or_else(|| err(at, format!("data chunk of {size} bytes runs past end of file")))?;
                let frame = width * fmt.channels;
                let frames = size / frame;
                let mut samples = Vec::with_capacity(frames);
                for f in 0..frames {
                    let base = body + f * frame;
                    let mut acc = 0.0;
                    for c in 0..fmt.channels {
                        let s = &bytes[base + c * width..base + (c + 1) * width];
                        acc += match fmt.codec {
                            Codec::Pcm16 => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
                            Codec::Float32 => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
                        };
                    }
                    samples.push(acc / fmt.channels as f64);
                }
                debug_assert!(end >= body);
                return Ok(Waveform::new(samples, fmt.sample_rate, source_id));
            }
            _ => {}
        }
        // chunks are padded to even sizes
        at = body + size + (size & 1);
    }
    Err(err(at.min(bytes.len()), "no data chunk"))
}

/// Encodes mono 32-bit float WAV, which round-trips `f64` samples to `f32` precision.
pub fn write_wav<W: Write>(mut w: W, wave: &Waveform) -> std::io::Result<()> {
    let data_len = (wave.len() * 4) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&3u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 4).to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    w.write_all(&out)
}
