use std::io::{Read, Write};

use super::{FeatureMap, FrontendError, FrontendKind, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MFFT";
pub const FEATURE_VERSION: u32 = 1;

/// Binary dump: magic, version, frontend tag, frames, channels, frame rate,
/// then row-major `f32` values, all little-endian.
pub fn write_feature_dump<W: Write>(mut w: W, kind: FrontendKind, fm: &FeatureMap) -> Result<()> {
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| FrontendError::Format(format!("dimension {v} does not fit in u32")))
    };
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&[kind.tag()])?;
    w.write_all(&dim(fm.frames)?.to_le_bytes())?;
    w.write_all(&dim(fm.channels)?.to_le_bytes())?;
    w.write_all(&fm.frame_rate.to_le_bytes())?;
    let mut body = Vec::with_capacity(fm.data.len() * 4);
    for &v in &fm.data {
        body.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

/// Reads a dump written by [`write_feature_dump`]. Channel center
/// frequencies are not stored and come back empty.
pub fn read_feature_dump<R: Read>(mut r: R) -> Result<(FrontendKind, FeatureMap)> {
    let mut header = [0u8; 25];
    r.read_exact(&mut header)
        .map_err(|e| FrontendError::Format(format!("truncated header: {e}")))?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(FrontendError::Format("bad magic".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != FEATURE_VERSION {
        return Err(FrontendError::Format(format!("unsupported version {version}")));
    }
    let kind = FrontendKind::from_tag(header[8])
        .ok_or_else(|| FrontendError::Format(format!("unknown frontend tag {}", header[8])))?;
    let (frames, channels) = (u32_at(9) as usize, u32_at(13) as usize);
    let frame_rate = f64::from_le_bytes(header[17..25].try_into().expect("8 bytes"));
    let mut body = vec![0u8; frames * channels * 4];
    r.read_exact(&mut body)
        .map_err(|e| FrontendError::Format(format!("truncated body: {e}")))?;
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((
        kind,
        FeatureMap {
            data,
            frames,
            channels,
            frame_rate,
            channel_center_hz: Vec::new(),
        },
    ))
}

/// Binary PGM with time left to right and channel 0 on the bottom row,
/// min-max scaled to 0..=255. A constant map renders black.
pub fn write_pgm<W: Write>(mut w: W, fm: &FeatureMap) -> Result<()> {
    let (lo, hi) = fm
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    write!(w, "P5\n{} {}\n255\n", fm.frames, fm.channels)?;
    let mut pixels = Vec::with_capacity(fm.frames * fm.channels);
    for c in (0..fm.channels).rev() {
        for t in 0..fm.frames {
            let v = if span > 0.0 { (fm.get(t, c) - lo) / span } else { 0.0 };
            pixels.push((v * 255.0).round() as u8);
        }
    }
    w.write_all(&pixels)?;
    Ok(())
}
