use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Writes 16-bit PCM mono. Samples outside [-1, 1] saturate.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(w)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    format: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::Format(format!("fmt chunk too short ({} bytes)", body.len())));
    }
    let mut format = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if format == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID whose
        // first two bytes carry the real format tag.
        if body.len() < 26 {
            return Err(Error::Format("truncated WAVE_FORMAT_EXTENSIBLE header".into()));
        }
        format = u16_at(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels,
        rate,
        bits,
    })
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "chunk {:?} claims {len} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    bytes.len() - start
                ))
            })?;
        match id {
            b"fmt " => fmt = Some(parse_fmt(&bytes[start..end])?),
            b"data" => data = Some(&bytes[start..end]),
            _ => {}
        }
        // chunks are word aligned
        pos = end + (len & 1);
    }
    let fmt = fmt.ok_or_else(|| Error::Format("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("no data chunk".into()))?;
    if fmt.channels != 1 {
        return Err(Error::UnsupportedChannels(fmt.channels));
    }
    if fmt.rate == 0 {
        return Err(Error::Format("sampling rate is zero".into()));
    }
    let samples = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => {
            if data.len() % 2 != 0 {
                return Err(Error::Format("PCM16 data has odd byte count".into()));
            }
            data.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                .collect()
        }
        (FORMAT_FLOAT, 32) => {
            if data.len() % 4 != 0 {
                return Err(Error::Format("float32 data length not a multiple of 4".into()));
            }
            let mut out = Vec::with_capacity(data.len() / 4);
            for c in data.chunks_exact(4) {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !v.is_finite() {
                    return Err(Error::Format("non-finite float sample".into()));
                }
                out.push((v as f64).clamp(-1.0, 1.0));
            }
            out
        }
        (FORMAT_PCM, bits) => {
            return Err(Error::UnsupportedCodec(format!("{bits}-bit PCM")));
        }
        (FORMAT_FLOAT, bits) => {
            return Err(Error::UnsupportedCodec(format!("{bits}-bit float")));
        }
        (tag, _) => return Err(Error::UnsupportedCodec(format!("format tag {tag:#06x}"))),
    };
    Ok(Waveform {
        samples,
        rate: fmt.rate,
    })
}

fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>> {
    if let Some(i) = w.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("sample {i} is not finite")));
    }
    let data_len = w.samples.len() * 2;
    let riff_len = u32::try_from(36 + data_len)
        .map_err(|_| Error::Config("waveform too long for a WAV file".into()))?;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.rate.to_le_bytes());
    out.extend_from_slice(&(w.rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    Ok(out)
}
