//! RGB frames and image file I/O.
//!
//! Frames travel as binary PPM (P6, maxval 255), one file per display index
//! named `frame_%05d.ppm`. Label masks travel as binary PGM (P5, maxval 255)
//! named `mask_%05d.pgm`, pixel value = object index (0 = background).
//! Externally computed keyframe probability maps use a raw float-plane file
//! with a one-line text header (`CVPM <width> <height> <channels>`).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::maps::{LabelMask, MapBuf};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0} (only 255)")]
    UnsupportedMaxval(u32),
    #[error("unexpected end of file")]
    UnexpectedEof,
    #[error("trailing bytes after pixel data")]
    TrailingBytes,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Interleaved 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub w: usize,
    pub h: usize,
    /// `3 * w * h` bytes, row-major, RGB interleaved.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(w: usize, h: usize) -> Self {
        RgbImage {
            w,
            h,
            data: vec![0; 3 * w * h],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> u8 {
        self.data[(y * self.w + x) * 3 + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: u8) {
        self.data[(y * self.w + x) * 3 + ch] = v;
    }

    #[inline]
    pub fn rgb(&self, y: usize, x: usize) -> [u8; 3] {
        let b = (y * self.w + x) * 3;
        [self.data[b], self.data[b + 1], self.data[b + 2]]
    }
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.w, self.h)
    }
}

pub fn frame_file_name(display: u32) -> String {
    format!("frame_{display:05}.ppm")
}

pub fn mask_file_name(display: u32) -> String {
    format!("mask_{display:05}.pgm")
}

pub fn probmap_file_name(display: u32) -> String {
    format!("probs_{display:05}.cvpm")
}

/// Skip whitespace and `#` comments, then read one ASCII integer token.
fn read_token(bytes: &[u8], pos: &mut usize) -> Result<u32, ImageError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::BadHeader("expected integer".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| ImageError::BadHeader("non-ascii header".into()))?
        .parse::<u32>()
        .map_err(|e| ImageError::BadHeader(e.to_string()))
}

fn parse_netpbm(bytes: &[u8], magic: &'static str) -> Result<(usize, usize, usize), ImageError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(ImageError::BadMagic { expected: magic });
    }
    let mut pos = 2;
    let w = read_token(bytes, &mut pos)? as usize;
    let h = read_token(bytes, &mut pos)? as usize;
    let maxval = read_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::BadHeader("missing separator".into()));
    }
    Ok((w, h, pos + 1))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    let (w, h, start) = parse_netpbm(bytes, "P6")?;
    let need = 3 * w * h;
    if bytes.len() < start + need {
        return Err(ImageError::UnexpectedEof);
    }
    if bytes.len() > start + need {
        return Err(ImageError::TrailingBytes);
    }
    Ok(RgbImage {
        w,
        h,
        data: bytes[start..].to_vec(),
    })
}

pub fn encode_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.w, mask.h).into_bytes();
    out.extend_from_slice(&mask.data);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMask, ImageError> {
    let (w, h, start) = parse_netpbm(bytes, "P5")?;
    let need = w * h;
    if bytes.len() < start + need {
        return Err(ImageError::UnexpectedEof);
    }
    if bytes.len() > start + need {
        return Err(ImageError::TrailingBytes);
    }
    Ok(LabelMask {
        w,
        h,
        data: bytes[start..].to_vec(),
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage, ImageError> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), ImageError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_ppm(img))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<LabelMask, ImageError> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, mask: &LabelMask) -> Result<(), ImageError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(mask))?;
    Ok(())
}

/// Raw float planes with a text header, for feeding externally computed
/// keyframe probability maps into the engine. Layout after the header line:
/// `channels` planes of `h*w` little-endian f32 values, channel-major.
pub fn encode_probmap(map: &MapBuf) -> Vec<u8> {
    let (h, w, c) = (map.height(), map.width(), map.channels());
    let mut out = format!("CVPM {w} {h} {c}\n").into_bytes();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.extend_from_slice(&map.get(y, x, ch).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_probmap(bytes: &[u8]) -> Result<MapBuf, ImageError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(ImageError::UnexpectedEof)?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| ImageError::BadHeader("non-ascii header".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "CVPM" {
        return Err(ImageError::BadMagic { expected: "CVPM" });
    }
    let parse = |s: &str| -> Result<usize, ImageError> {
        s.parse::<usize>()
            .map_err(|e| ImageError::BadHeader(e.to_string()))
    };
    let (w, h, c) = (parse(parts[1])?, parse(parts[2])?, parse(parts[3])?);
    let need = w * h * c * 4;
    let body = &bytes[nl + 1..];
    if body.len() < need {
        return Err(ImageError::UnexpectedEof);
    }
    if body.len() > need {
        return Err(ImageError::TrailingBytes);
    }
    let mut map = MapBuf::zeros(h, w, c);
    let mut off = 0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = f32::from_le_bytes(body[off..off + 4].try_into().unwrap());
                map.set(y, x, ch, v);
                off += 4;
            }
        }
    }
    Ok(map)
}
