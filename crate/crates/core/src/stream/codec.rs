//! Wire frame carrying one window of three-phase current samples.
//!
//! ```text
//! magic    4 bytes  "NPCD"
//! version  u8       1
//! seq      u32 LE
//! count    u16 LE   200
//! payload  count x (ia, ib, ic) as f32 LE, sample-major
//! crc      u32 LE   CRC-32 (IEEE, reflected 0xEDB88320) over version..payload
//! ```

use thiserror::Error;

pub const FRAME_MAGIC: [u8; 4] = *b"NPCD";
pub const FRAME_VERSION: u8 = 1;
pub const FRAME_SAMPLES: usize = 200;
const HEADER_LEN: usize = 4 + 1 + 4 + 2;
pub const FRAME_LEN: usize = HEADER_LEN + FRAME_SAMPLES * 12 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad frame magic")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("frame holds {0} samples, expected {FRAME_SAMPLES}")]
    BadCount(usize),
    #[error("frame truncated: {got} of {need} bytes")]
    ShortBuffer { got: usize, need: usize },
    #[error("frame checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    CrcMismatch { stored: u32, computed: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireFrame {
    pub seq: u32,
    pub samples: Vec<[f32; 3]>,
}

pub fn encode_frame(seq: u32, samples: &[[f32; 3]]) -> Result<Vec<u8>, FrameError> {
    if samples.len() != FRAME_SAMPLES {
        return Err(FrameError::BadCount(samples.len()));
    }
    let mut buf = Vec::with_capacity(FRAME_LEN);
    buf.extend_from_slice(&FRAME_MAGIC);
    buf.push(FRAME_VERSION);
    buf.extend_from_slice(&seq.to_le_bytes());
    buf.extend_from_slice(&(FRAME_SAMPLES as u16).to_le_bytes());
    for s in samples {
        for v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf[4..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Decodes one frame from the start of `bytes`; bytes past the frame are
/// ignored.
pub fn decode_frame(bytes: &[u8]) -> Result<WireFrame, FrameError> {
    let short = |need: usize| FrameError::ShortBuffer {
        got: bytes.len(),
        need,
    };
    if bytes.len() < 4 {
        return Err(short(HEADER_LEN));
    }
    if bytes[..4] != FRAME_MAGIC {
        return Err(FrameError::BadMagic);
    }
    if bytes.len() < 5 {
        return Err(short(HEADER_LEN));
    }
    if bytes[4] != FRAME_VERSION {
        return Err(FrameError::BadVersion(bytes[4]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(short(HEADER_LEN));
    }
    let seq = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    let count = u16::from_le_bytes(bytes[9..11].try_into().unwrap()) as usize;
    if count != FRAME_SAMPLES {
        return Err(FrameError::BadCount(count));
    }
    if bytes.len() < FRAME_LEN {
        return Err(short(FRAME_LEN));
    }
    let body_end = FRAME_LEN - 4;
    let stored = u32::from_le_bytes(bytes[body_end..FRAME_LEN].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[4..body_end]);
    if stored != computed {
        return Err(FrameError::CrcMismatch { stored, computed });
    }
    let samples = bytes[HEADER_LEN..body_end]
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect();
    Ok(WireFrame { seq, samples })
}
