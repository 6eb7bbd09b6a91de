//! RIFF/WAVE codec restricted to 16-bit PCM and 32-bit IEEE float.

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use super::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

impl WavEncoding {
    fn bits(self) -> u16 {
        match self {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        }
    }

    fn format_tag(self) -> u16 {
        match self {
            WavEncoding::Pcm16 => FORMAT_PCM,
            WavEncoding::Float32 => FORMAT_FLOAT,
        }
    }
}

#[derive(Debug, Error)]
pub enum WavError {
    #[error("truncated at byte {offset}: {context} needs {needed} more byte(s)")]
    Truncated {
        offset: usize,
        needed: usize,
        context: &'static str,
    },
    #[error("malformed header at byte {offset}: {reason}")]
    BadHeader { offset: usize, reason: String },
    #[error("unsupported encoding: format tag {format_tag:#06x} with {bits} bits per sample")]
    Unsupported { format_tag: u16, bits: u16 },
    #[error("missing `{0}` chunk")]
    MissingChunk(&'static str),
    #[error("data chunk at byte {offset} holds {len} bytes, not a multiple of the {frame}-byte frame")]
    PartialFrame {
        offset: usize,
        len: usize,
        frame: usize,
    },
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> std::result::Result<&'a [u8], WavError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(WavError::Truncated {
                offset: self.bytes.len(),
                needed: n - available,
                context,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, context: &'static str) -> std::result::Result<u16, WavError> {
        let b = self.take(2, context)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, context: &'static str) -> std::result::Result<u32, WavError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    channels: u16,
    sample_rate: u32,
    encoding: WavEncoding,
}

fn parse_fmt(body: &[u8], offset: usize) -> std::result::Result<Format, WavError> {
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    let truncated = |e: WavError| match e {
        WavError::Truncated { needed, .. } => WavError::Truncated {
            offset: offset + body.len(),
            needed,
            context: "fmt chunk",
        },
        other => other,
    };
    let mut tag = r.u16("fmt chunk").map_err(truncated)?;
    let channels = r.u16("fmt chunk").map_err(truncated)?;
    let sample_rate = r.u32("fmt chunk").map_err(truncated)?;
    let _byte_rate = r.u32("fmt chunk").map_err(truncated)?;
    let block_align = r.u16("fmt chunk").map_err(truncated)?;
    let bits = r.u16("fmt chunk").map_err(truncated)?;
    if tag == FORMAT_EXTENSIBLE {
        let _cb = r.u16("fmt chunk").map_err(truncated)?;
        let _valid_bits = r.u16("fmt chunk").map_err(truncated)?;
        let _mask = r.u32("fmt chunk").map_err(truncated)?;
        let guid = r.take(16, "fmt chunk").map_err(truncated)?;
        tag = u16::from_le_bytes([guid[0], guid[1]]);
    }
    let encoding = match (tag, bits) {
        (FORMAT_PCM, 16) => WavEncoding::Pcm16,
        (FORMAT_FLOAT, 32) => WavEncoding::Float32,
        _ => return Err(WavError::Unsupported { format_tag: tag, bits }),
    };
    if channels == 0 {
        return Err(WavError::BadHeader {
            offset: offset + 2,
            reason: "zero channels".into(),
        });
    }
    if sample_rate == 0 {
        return Err(WavError::BadHeader {
            offset: offset + 4,
            reason: "zero sample rate".into(),
        });
    }
    let expected_align = channels as usize * bits as usize / 8;
    if block_align as usize != expected_align {
        return Err(WavError::BadHeader {
            offset: offset + 12,
            reason: format!("block align {block_align}, expected {expected_align}"),
        });
    }
    Ok(Format {
        channels,
        sample_rate,
        encoding,
    })
}

/// Decodes a complete WAV file image.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let mut r = Reader { bytes, pos: 0 };
    let riff = r.take(4, "RIFF header")?;
    if riff != b"RIFF" {
        return Err(WavError::BadHeader {
            offset: 0,
            reason: "missing RIFF magic".into(),
        }
        .into());
    }
    let _riff_len = r.u32("RIFF header")?;
    if r.take(4, "RIFF header")? != b"WAVE" {
        return Err(WavError::BadHeader {
            offset: 8,
            reason: "missing WAVE form type".into(),
        }
        .into());
    }

    let mut format = None;
    let mut data = None;
    while r.pos < bytes.len() && data.is_none() {
        let chunk_offset = r.pos;
        let id = r.take(4, "chunk header")?;
        let len = r.u32("chunk header")? as usize;
        let body_offset = r.pos;
        match id {
            b"fmt " => {
                let body = r.take(len, "fmt chunk")?;
                format = Some(parse_fmt(body, body_offset)?);
            }
            b"data" => {
                let fmt = format.as_ref().ok_or(WavError::BadHeader {
                    offset: chunk_offset,
                    reason: "data chunk before fmt chunk".into(),
                })?;
                let frame = fmt.channels as usize * fmt.encoding.bits() as usize / 8;
                let body = r.take(len, "data chunk")?;
                if !len.is_multiple_of(frame) {
                    return Err(WavError::PartialFrame {
                        offset: body_offset,
                        len,
                        frame,
                    }
                    .into());
                }
                data = Some(body);
            }
            _ => {
                r.take(len, "chunk body")?;
            }
        }
        if len % 2 == 1 && r.pos < bytes.len() {
            r.pos += 1;
        }
    }

    let fmt = format.ok_or(WavError::MissingChunk("fmt "))?;
    let data = data.ok_or(WavError::MissingChunk("data"))?;
    let channels = fmt.channels as usize;
    let width = fmt.encoding.bits() as usize / 8;
    let frames = data.len() / (channels * width);
    let mut samples = Array2::<f64>::zeros((channels, frames));
    for (i, chunk) in data.chunks_exact(width).enumerate() {
        let value = match fmt.encoding {
            WavEncoding::Pcm16 => i16::from_le_bytes([chunk[0], chunk[1]]) as f64 / 32768.0,
            WavEncoding::Float32 => {
                f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64
            }
        };
        samples[(i % channels, i / channels)] = value;
    }
    Waveform::new(samples, fmt.sample_rate)
}

/// Encodes interleaved samples. PCM16 clips to the representable range.
pub fn encode_wav(wave: &Waveform, encoding: WavEncoding) -> Vec<u8> {
    let channels = wave.channels();
    let width = encoding.bits() as usize / 8;
    let data_len = channels * wave.len() * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&encoding.format_tag().to_le_bytes());
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&wave.sample_rate().to_le_bytes());
    let block_align = (channels * width) as u16;
    out.extend_from_slice(&(wave.sample_rate() * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&encoding.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    let samples = wave.samples();
    for n in 0..wave.len() {
        for c in 0..channels {
            let x = samples[(c, n)];
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                WavEncoding::Float32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            }
        }
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let bytes = std::fs::read(path)?;
    decode_wav(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    if wave.channels() > u16::MAX as usize {
        return Err(Error::InvalidConfig("too many channels for WAV".into()));
    }
    std::fs::write(path, encode_wav(wave, encoding))?;
    Ok(())
}
