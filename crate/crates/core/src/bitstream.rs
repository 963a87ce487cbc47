//! `.vrja` container: fixed picture header followed by length-prefixed substreams.
//!
//! ```text
//! offset  size  field
//!  0      4     magic "VRJA"
//!  4      1     version (1)
//!  5      2     image height H (big-endian)
//!  7      2     image width W (big-endian)
//!  9      1     C_Y
//! 10      1     C_UV
//! 11      3     delta_beta_y (12-bit two's complement, high bits first)
//!               | delta_beta_uv (12-bit two's complement)
//! 14      1     flags: bit 0 spatial map present, bits 1-2 model id, rest zero
//! 15      ...   [spatial map substream], Y substream, UV substream
//!               each as u32 big-endian length + payload
//! end-4   4     CRC-32 (IEEE) of every preceding byte, big-endian
//! ```
//!
//! The checksum is verified only after the structure parses, so truncation and
//! framing problems keep their more specific error kinds.

use thiserror::Error;

use crate::quality_map::DeltaBeta;

pub const MAGIC: [u8; 4] = *b"VRJA";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 15;
pub const CHECKSUM_LEN: usize = 4;
pub const FILE_EXTENSION: &str = "vrja";

const FLAG_SPATIAL: u8 = 0b0000_0001;
const MODEL_SHIFT: u8 = 1;
const MODEL_MASK: u8 = 0b0000_0110;
const RESERVED_MASK: u8 = !(FLAG_SPATIAL | MODEL_MASK);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("stream truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after the last substream")]
    TrailingBytes(usize),
    #[error("delta beta {0} outside [-1069, 702]")]
    DeltaOutOfRange(i32),
    #[error("spatial-map flag does not match the substreams present")]
    FlagPayloadMismatch,
    #[error("reserved flag bits set: {0:#04x}")]
    ReservedFlags(u8),
    #[error("header has a zero dimension or channel count")]
    InvalidHeader,
    #[error("model id {0} does not fit the 2-bit field")]
    ModelIdOutOfRange(u8),
    #[error("substream of {0} bytes exceeds the 32-bit length field")]
    SubstreamTooLong(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
}

/// Signaled picture parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PictureHeader {
    pub image_height: u16,
    pub image_width: u16,
    pub c_y: u8,
    pub c_uv: u8,
    pub delta_beta_y: DeltaBeta,
    pub delta_beta_uv: DeltaBeta,
    pub model_id: u8,
    pub spatial_map: bool,
}

impl PictureHeader {
    fn validate(&self) -> Result<(), BitstreamError> {
        if self.image_height == 0 || self.image_width == 0 || self.c_y == 0 || self.c_uv == 0 {
            return Err(BitstreamError::InvalidHeader);
        }
        for d in [self.delta_beta_y, self.delta_beta_uv] {
            if !d.in_signal_range() {
                return Err(BitstreamError::DeltaOutOfRange(d.value()));
            }
        }
        if self.model_id > MODEL_MASK >> MODEL_SHIFT {
            return Err(BitstreamError::ModelIdOutOfRange(self.model_id));
        }
        Ok(())
    }

    fn flags(&self) -> u8 {
        (u8::from(self.spatial_map) * FLAG_SPATIAL) | (self.model_id << MODEL_SHIFT)
    }
}

/// 12-bit two's complement encoding of a signed value in `[-2048, 2047]`.
pub fn to_twelve_bits(v: i32) -> u16 {
    (v as u16) & 0x0FFF
}

pub fn from_twelve_bits(bits: u16) -> i32 {
    let v = i32::from(bits & 0x0FFF);
    if v & 0x800 != 0 {
        v - 0x1000
    } else {
        v
    }
}

/// A parsed or to-be-written container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub header: PictureHeader,
    pub spatial: Option<Vec<u8>>,
    pub y: Vec<u8>,
    pub uv: Vec<u8>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>, BitstreamError> {
        write(&self.header, self.spatial.as_deref(), &self.y, &self.uv)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BitstreamError> {
        read(bytes)
    }
}

pub fn write(
    header: &PictureHeader,
    spatial: Option<&[u8]>,
    y: &[u8],
    uv: &[u8],
) -> Result<Vec<u8>, BitstreamError> {
    header.validate()?;
    if header.spatial_map != spatial.is_some() {
        return Err(BitstreamError::FlagPayloadMismatch);
    }
    let payload: usize = spatial.map_or(0, |s| s.len() + 4) + y.len() + uv.len() + 8 + CHECKSUM_LEN;
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&header.image_height.to_be_bytes());
    out.extend_from_slice(&header.image_width.to_be_bytes());
    out.push(header.c_y);
    out.push(header.c_uv);
    let packed = (u32::from(to_twelve_bits(header.delta_beta_y.value())) << 12)
        | u32::from(to_twelve_bits(header.delta_beta_uv.value()));
    out.extend_from_slice(&packed.to_be_bytes()[1..]);
    out.push(header.flags());
    for sub in spatial.into_iter().chain([y, uv]) {
        let len =
            u32::try_from(sub.len()).map_err(|_| BitstreamError::SubstreamTooLong(sub.len()))?;
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(sub);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BitstreamError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(BitstreamError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], BitstreamError> {
        Ok(self.take(N)?.try_into().expect("take returned N bytes"))
    }

    fn substream(&mut self) -> Result<&'a [u8], BitstreamError> {
        let len = u32::from_be_bytes(self.array()?) as usize;
        self.take(len)
    }
}

pub fn read(bytes: &[u8]) -> Result<Bitstream, BitstreamError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.array().map_err(|e| match e {
        // A short prefix that still matches is a truncation, anything else is not ours.
        BitstreamError::Truncated { .. } if MAGIC.starts_with(bytes) => e,
        _ => BitstreamError::BadMagic,
    })?;
    if magic != MAGIC {
        return Err(BitstreamError::BadMagic);
    }
    let [version] = cur.array()?;
    if version != VERSION {
        return Err(BitstreamError::UnsupportedVersion(version));
    }
    let image_height = u16::from_be_bytes(cur.array()?);
    let image_width = u16::from_be_bytes(cur.array()?);
    let [c_y, c_uv] = cur.array()?;
    let [b0, b1, b2] = cur.array()?;
    let packed = u32::from_be_bytes([0, b0, b1, b2]);
    let [flags] = cur.array()?;
    if flags & RESERVED_MASK != 0 {
        return Err(BitstreamError::ReservedFlags(flags));
    }
    let header = PictureHeader {
        image_height,
        image_width,
        c_y,
        c_uv,
        delta_beta_y: DeltaBeta(from_twelve_bits((packed >> 12) as u16)),
        delta_beta_uv: DeltaBeta(from_twelve_bits(packed as u16)),
        model_id: (flags & MODEL_MASK) >> MODEL_SHIFT,
        spatial_map: flags & FLAG_SPATIAL != 0,
    };
    header.validate()?;

    let spatial = if header.spatial_map {
        let s = cur.substream()?;
        if s.is_empty() {
            return Err(BitstreamError::FlagPayloadMismatch);
        }
        Some(s.to_vec())
    } else {
        None
    };
    let y = cur.substream()?.to_vec();
    let uv = cur.substream()?.to_vec();
    let body_end = cur.pos;
    let stored = u32::from_be_bytes(cur.array()?);
    if cur.pos != bytes.len() {
        return Err(BitstreamError::TrailingBytes(bytes.len() - cur.pos));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(BitstreamError::ChecksumMismatch { stored, computed });
    }
    Ok(Bitstream {
        header,
        spatial,
        y,
        uv,
    })
}
