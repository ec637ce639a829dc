//! Binary PGM (`P5`) and PPM (`P6`) codec, maxval 255 only.

use std::fmt;

use super::{GrayImage, ImageError, RgbImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PnmImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl PnmImage {
    pub fn width(&self) -> usize {
        match self {
            PnmImage::Gray(g) => g.width(),
            PnmImage::Rgb(c) => c.width(),
        }
    }

    pub fn height(&self) -> usize {
        match self {
            PnmImage::Gray(g) => g.height(),
            PnmImage::Rgb(c) => c.height(),
        }
    }

    /// Grayscale view; RGB input goes through [`super::to_grayscale`].
    pub fn into_gray(self) -> GrayImage {
        match self {
            PnmImage::Gray(g) => g,
            PnmImage::Rgb(c) => super::to_grayscale(&c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PnmErrorKind {
    BadMagic,
    UnexpectedEnd,
    BadNumber,
    ZeroDimension,
    UnsupportedMaxval(u32),
    MissingSeparator,
    TruncatedPayload { expected: usize, got: usize },
}

impl fmt::Display for PnmErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PnmErrorKind::BadMagic => write!(f, "expected magic P5 or P6"),
            PnmErrorKind::UnexpectedEnd => write!(f, "header ends early"),
            PnmErrorKind::BadNumber => write!(f, "malformed header number"),
            PnmErrorKind::ZeroDimension => write!(f, "zero width or height"),
            PnmErrorKind::UnsupportedMaxval(m) => write!(f, "maxval {m} (only 255 supported)"),
            PnmErrorKind::MissingSeparator => write!(f, "missing whitespace after maxval"),
            PnmErrorKind::TruncatedPayload { expected, got } => {
                write!(f, "truncated payload: expected {expected} bytes, got {got}")
            }
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn err(&self, kind: PnmErrorKind) -> ImageError {
        ImageError::Decode {
            offset: self.pos,
            kind,
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<u32, ImageError> {
        self.skip_space_and_comments();
        if self.pos >= self.bytes.len() {
            return Err(self.err(PnmErrorKind::UnexpectedEnd));
        }
        let start = self.pos;
        let mut value: u32 = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u32::from(self.bytes[self.pos] - b'0')))
                .ok_or(ImageError::Decode {
                    offset: start,
                    kind: PnmErrorKind::BadNumber,
                })?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(PnmErrorKind::BadNumber));
        }
        Ok(value)
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<PnmImage, ImageError> {
    let mut h = Header { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(h.err(PnmErrorKind::BadMagic)),
    };
    h.pos = 2;
    let width = h.number()? as usize;
    let height = h.number()? as usize;
    if width == 0 || height == 0 {
        return Err(h.err(PnmErrorKind::ZeroDimension));
    }
    let maxval_at = h.pos;
    let maxval = h.number()?;
    if maxval != 255 {
        return Err(ImageError::Decode {
            offset: maxval_at,
            kind: PnmErrorKind::UnsupportedMaxval(maxval),
        });
    }
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(h.err(PnmErrorKind::MissingSeparator)),
    }
    let expected = width * height * channels;
    let payload = &bytes[h.pos..];
    if payload.len() < expected {
        return Err(h.err(PnmErrorKind::TruncatedPayload {
            expected,
            got: payload.len(),
        }));
    }
    let data = payload[..expected].to_vec();
    Ok(if channels == 1 {
        PnmImage::Gray(GrayImage::new(width, height, data)?)
    } else {
        PnmImage::Rgb(RgbImage::new(width, height, data)?)
    })
}

fn encode(magic: &str, width: usize, height: usize, payload: &[u8]) -> Vec<u8> {
    let header = format!("{magic}\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + payload.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    encode("P5", img.width(), img.height(), img.data())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    encode("P6", img.width(), img.height(), img.data())
}

pub fn encode_pnm(img: &PnmImage) -> Vec<u8> {
    match img {
        PnmImage::Gray(g) => encode_pgm(g),
        PnmImage::Rgb(c) => encode_ppm(c),
    }
}
