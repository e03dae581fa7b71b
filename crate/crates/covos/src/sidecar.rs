//! CVSC v1: the sidecar container carrying codec-derived motion metadata.
//!
//! The container stands in for a live bitstream decoder: it stores, per
//! frame, the frame type, prediction units with their motion vectors and
//! weights, and the prediction residual. All integers are little-endian.
//!
//! ```text
//! header (20 bytes):
//!   magic "CVSC" | version u16 = 1 | reserved u16 = 0 |
//!   width u32 | height u32 | frame_count u32
//! then frame_count frame records, in DECODE order:
//!   display_index u32 | frame_type u8 (0=I,1=P,2=B) | residual_present u8 |
//!   pu_count u32 | pu_count x PU (27 bytes) |
//!   if residual_present: 3 x H*W i16 planes, row-major, order R,G,B
//! PU record (27 bytes):
//!   x u16 | y u16 | w u16 | h u16 | direction u8 (1=FWD,2=BWD,3=BI) |
//!   fwd { du i16 | dv i16 | ref_display u32 | weight u8 } |
//!   bwd { du i16 | dv i16 | ref_display u32 | weight u8 }
//!   (the absent side of a uni-directional PU is all-zero)
//! ```
//!
//! Motion vectors are quarter-pel. Reference display indices are absolute.
//! Weights are 8-bit fixed point fractions of 255.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CVSC";
pub const VERSION: u16 = 1;
pub const HEADER_SIZE: usize = 20;
pub const PU_RECORD_SIZE: usize = 27;
pub const FRAME_HEADER_SIZE: usize = 10;

/// Tolerance on the fixed-point weight closure of BI prediction units.
pub const BI_WEIGHT_TOLERANCE: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameType {
    Intra,
    Pred,
    BiPred,
}

impl FrameType {
    pub fn code(self) -> u8 {
        match self {
            FrameType::Intra => 0,
            FrameType::Pred => 1,
            FrameType::BiPred => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<FrameType> {
        match c {
            0 => Some(FrameType::Intra),
            1 => Some(FrameType::Pred),
            2 => Some(FrameType::BiPred),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            FrameType::Intra => 'I',
            FrameType::Pred => 'P',
            FrameType::BiPred => 'B',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuDirection {
    Fwd,
    Bwd,
    Bi,
}

impl PuDirection {
    pub fn code(self) -> u8 {
        match self {
            PuDirection::Fwd => 1,
            PuDirection::Bwd => 2,
            PuDirection::Bi => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<PuDirection> {
        match c {
            1 => Some(PuDirection::Fwd),
            2 => Some(PuDirection::Bwd),
            3 => Some(PuDirection::Bi),
            _ => None,
        }
    }

    pub fn has_fwd(self) -> bool {
        matches!(self, PuDirection::Fwd | PuDirection::Bi)
    }

    pub fn has_bwd(self) -> bool {
        matches!(self, PuDirection::Bwd | PuDirection::Bi)
    }
}

/// Block displacement in quarter-pel units plus its reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionVector {
    pub du: i16,
    pub dv: i16,
    pub ref_display: u32,
    /// Fixed-point fraction of 255.
    pub weight: u8,
}

impl MotionVector {
    pub fn weight_fraction(&self) -> f32 {
        f32::from(self.weight) / 255.0
    }
}

/// Rectangular block sharing one motion description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionUnit {
    pub x: u16,
    pub y: u16,
    pub w: u16,
    pub h: u16,
    pub direction: PuDirection,
    pub fwd: Option<MotionVector>,
    pub bwd: Option<MotionVector>,
}

impl PredictionUnit {
    pub fn fwd_uni(x: u16, y: u16, w: u16, h: u16, mv: MotionVector) -> Self {
        PredictionUnit {
            x,
            y,
            w,
            h,
            direction: PuDirection::Fwd,
            fwd: Some(mv),
            bwd: None,
        }
    }

    pub fn bi(x: u16, y: u16, w: u16, h: u16, fwd: MotionVector, bwd: MotionVector) -> Self {
        PredictionUnit {
            x,
            y,
            w,
            h,
            direction: PuDirection::Bi,
            fwd: Some(fwd),
            bwd: Some(bwd),
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x as usize
            && x < self.x as usize + self.w as usize
            && y >= self.y as usize
            && y < self.y as usize + self.h as usize
    }
}

/// Legal PU side lengths. The minimum block is 4x8 / 8x4 (area 32).
pub const PU_SIDES: [u16; 5] = [4, 8, 16, 32, 64];
pub const PU_MIN_AREA: u32 = 32;

pub fn legal_pu_size(w: u16, h: u16) -> bool {
    PU_SIDES.contains(&w) && PU_SIDES.contains(&h) && u32::from(w) * u32::from(h) >= PU_MIN_AREA
}

/// Signed prediction residual, one i16 plane per RGB channel.
#[derive(Clone, PartialEq, Eq)]
pub struct ResidualPlanes {
    w: usize,
    h: usize,
    planes: [Vec<i16>; 3],
}

impl ResidualPlanes {
    pub fn zeros(w: usize, h: usize) -> Self {
        ResidualPlanes {
            w,
            h,
            planes: [vec![0; w * h], vec![0; w * h], vec![0; w * h]],
        }
    }

    pub fn from_planes(w: usize, h: usize, planes: [Vec<i16>; 3]) -> Self {
        assert!(planes.iter().all(|p| p.len() == w * h));
        ResidualPlanes { w, h, planes }
    }

    #[inline]
    pub fn get(&self, ch: usize, y: usize, x: usize) -> i16 {
        self.planes[ch][y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, y: usize, x: usize, v: i16) {
        self.planes[ch][y * self.w + x] = v;
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn plane(&self, ch: usize) -> &[i16] {
        &self.planes[ch]
    }
}

impl fmt::Debug for ResidualPlanes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ResidualPlanes({}x{})", self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub display_index: u32,
    /// Position in decode order, 1-based.
    pub decode_rank: u32,
    pub frame_type: FrameType,
    pub pus: Vec<PredictionUnit>,
    pub residual: Option<ResidualPlanes>,
}

impl FrameRecord {
    /// Display indices referenced by this frame's prediction units.
    pub fn referenced_displays(&self) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        for pu in &self.pus {
            if let Some(mv) = pu.fwd {
                out.insert(mv.ref_display);
            }
            if let Some(mv) = pu.bwd {
                out.insert(mv.ref_display);
            }
        }
        out
    }
}

/// A parsed sidecar: stream dimensions plus frames covering display
/// indices 1..=T exactly once. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SidecarStream {
    width: usize,
    height: usize,
    /// Indexed by display order: `frames[display - 1]`.
    frames: Vec<FrameRecord>,
}

impl SidecarStream {
    /// Build from frames listed in display order (display indices 1..=T).
    pub fn new(width: usize, height: usize, frames: Vec<FrameRecord>) -> SidecarStream {
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(
                f.display_index,
                (i + 1) as u32,
                "frames must be supplied in display order"
            );
        }
        SidecarStream {
            width,
            height,
            frames,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of frames T.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, display: u32) -> Option<&FrameRecord> {
        self.frames.get(display as usize - 1)
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    /// Display indices sorted by decode rank.
    pub fn decode_order(&self) -> Vec<u32> {
        let mut order: Vec<&FrameRecord> = self.frames.iter().collect();
        order.sort_by_key(|f| f.decode_rank);
        order.iter().map(|f| f.display_index).collect()
    }
}

/// Display indices in decode order (free-function form of the container op).
pub fn decode_order(stream: &SidecarStream) -> Vec<u32> {
    stream.decode_order()
}

// ---------------------------------------------------------------------------
// Errors and violations
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("bad magic at offset 0 (expected \"CVSC\")")]
    BadMagic,
    #[error("unsupported version {found} at offset 4 (expected {VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("truncated: need {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize },
    #[error("bad value at offset {offset}: {what}")]
    BadValue { offset: usize, what: String },
    #[error("invariant violation: {0}")]
    Invariant(Violation),
}

/// A broken stream invariant. Violations are data, not errors: the
/// validator reports all of them, and strict parsing promotes the first
/// into a [`SidecarError::Invariant`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DecodeOrderViolation {
        display: u32,
        pu: usize,
        ref_display: u32,
    },
    TilingGap {
        display: u32,
        x: u16,
        y: u16,
    },
    TilingOverlap {
        display: u32,
        pu: usize,
        x: u16,
        y: u16,
    },
    BlockOutOfBounds {
        display: u32,
        pu: usize,
    },
    BadBlockSize {
        display: u32,
        pu: usize,
        w: u16,
        h: u16,
    },
    IntraWithPus {
        display: u32,
    },
    IntraWithResidual {
        display: u32,
    },
    NonForwardPuInPredFrame {
        display: u32,
        pu: usize,
    },
    ForwardRefNotPast {
        display: u32,
        pu: usize,
        ref_display: u32,
    },
    BackwardRefNotFuture {
        display: u32,
        pu: usize,
        ref_display: u32,
    },
    RefOutOfStream {
        display: u32,
        pu: usize,
        ref_display: u32,
    },
    BiWeightSum {
        display: u32,
        pu: usize,
        sum: u16,
    },
    NoIntraFrame,
    FirstDecodeNotIntra {
        display: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match *self {
            DecodeOrderViolation {
                display,
                pu,
                ref_display,
            } => write!(
                f,
                "DecodeOrderViolation: frame {display} PU {pu} references display {ref_display} decoded later"
            ),
            TilingGap { display, x, y } => {
                write!(f, "TilingGap at ({x},{y}) in frame {display}")
            }
            TilingOverlap { display, pu, x, y } => {
                write!(f, "TilingOverlap at ({x},{y}) in frame {display} (PU {pu})")
            }
            BlockOutOfBounds { display, pu } => {
                write!(f, "BlockOutOfBounds: frame {display} PU {pu} exceeds frame rectangle")
            }
            BadBlockSize { display, pu, w, h } => {
                write!(f, "BadBlockSize: frame {display} PU {pu} is {w}x{h}")
            }
            IntraWithPus { display } => {
                write!(f, "IntraWithPus: INTRA frame {display} carries prediction units")
            }
            IntraWithResidual { display } => {
                write!(f, "IntraWithResidual: INTRA frame {display} carries a residual")
            }
            NonForwardPuInPredFrame { display, pu } => {
                write!(f, "NonForwardPuInPredFrame: P-frame {display} PU {pu} is not FWD")
            }
            ForwardRefNotPast {
                display,
                pu,
                ref_display,
            } => write!(
                f,
                "ForwardRefNotPast: frame {display} PU {pu} forward-references display {ref_display}"
            ),
            BackwardRefNotFuture {
                display,
                pu,
                ref_display,
            } => write!(
                f,
                "BackwardRefNotFuture: frame {display} PU {pu} backward-references display {ref_display}"
            ),
            RefOutOfStream {
                display,
                pu,
                ref_display,
            } => write!(
                f,
                "RefOutOfStream: frame {display} PU {pu} references display {ref_display} outside 1..=T"
            ),
            BiWeightSum { display, pu, sum } => write!(
                f,
                "BiWeightSum: frame {display} PU {pu} weights sum to {sum}/255"
            ),
            NoIntraFrame => write!(f, "NoIntraFrame: stream has no INTRA frame"),
            FirstDecodeNotIntra { display } => {
                write!(f, "FirstDecodeNotIntra: first decoded frame {display} is not INTRA")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn need(&self, n: usize) -> Result<(), SidecarError> {
        if self.pos + n > self.bytes.len() {
            Err(SidecarError::Truncated {
                offset: self.pos,
                needed: self.pos + n - self.bytes.len(),
            })
        } else {
            Ok(())
        }
    }

    fn u8(&mut self) -> Result<u8, SidecarError> {
        self.need(1)?;
        let v = self.bytes[self.pos];
        self.pos += 1;
        Ok(v)
    }

    fn u16(&mut self) -> Result<u16, SidecarError> {
        self.need(2)?;
        let v = u16::from_le_bytes(self.bytes[self.pos..self.pos + 2].try_into().unwrap());
        self.pos += 2;
        Ok(v)
    }

    fn i16(&mut self) -> Result<i16, SidecarError> {
        self.need(2)?;
        let v = i16::from_le_bytes(self.bytes[self.pos..self.pos + 2].try_into().unwrap());
        self.pos += 2;
        Ok(v)
    }

    fn u32(&mut self) -> Result<u32, SidecarError> {
        self.need(4)?;
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }
}

fn parse_motion_vector(r: &mut Reader) -> Result<MotionVector, SidecarError> {
    Ok(MotionVector {
        du: r.i16()?,
        dv: r.i16()?,
        ref_display: r.u32()?,
        weight: r.u8()?,
    })
}

fn parse_pu(r: &mut Reader) -> Result<PredictionUnit, SidecarError> {
    let x = r.u16()?;
    let y = r.u16()?;
    let w = r.u16()?;
    let h = r.u16()?;
    let dir_offset = r.pos;
    let dir_code = r.u8()?;
    let direction = PuDirection::from_code(dir_code).ok_or(SidecarError::BadValue {
        offset: dir_offset,
        what: format!("direction byte {dir_code} (expected 1, 2 or 3)"),
    })?;
    let fwd_offset = r.pos;
    let fwd = parse_motion_vector(r)?;
    let bwd_offset = r.pos;
    let bwd = parse_motion_vector(r)?;

    let zero = MotionVector {
        du: 0,
        dv: 0,
        ref_display: 0,
        weight: 0,
    };
    // The absent side must be all-zero so that serialization is bit-exact.
    if !direction.has_fwd() && fwd != zero {
        return Err(SidecarError::BadValue {
            offset: fwd_offset,
            what: "nonzero forward vector on a BWD prediction unit".into(),
        });
    }
    if !direction.has_bwd() && bwd != zero {
        return Err(SidecarError::BadValue {
            offset: bwd_offset,
            what: "nonzero backward vector on a FWD prediction unit".into(),
        });
    }
    Ok(PredictionUnit {
        x,
        y,
        w,
        h,
        direction,
        fwd: direction.has_fwd().then_some(fwd),
        bwd: direction.has_bwd().then_some(bwd),
    })
}

/// Structural parse: decodes the byte layout and display coverage but does
/// not enforce semantic invariants. Feed the result to [`validate_stream`]
/// to list violations.
pub fn parse_sidecar_lenient(bytes: &[u8]) -> Result<SidecarStream, SidecarError> {
    let mut r = Reader::new(bytes);
    r.need(HEADER_SIZE)?;
    if &bytes[0..4] != MAGIC {
        return Err(SidecarError::BadMagic);
    }
    r.pos = 4;
    let version = r.u16()?;
    if version != VERSION {
        return Err(SidecarError::UnsupportedVersion { found: version });
    }
    let _reserved = r.u16()?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let frame_count = r.u32()? as usize;
    if width == 0 || height == 0 {
        return Err(SidecarError::BadValue {
            offset: 8,
            what: format!("degenerate dimensions {width}x{height}"),
        });
    }

    let mut slots: Vec<Option<FrameRecord>> = vec![None; frame_count];
    for rank in 1..=frame_count as u32 {
        let display_offset = r.pos;
        let display_index = r.u32()?;
        if display_index == 0 || display_index as usize > frame_count {
            return Err(SidecarError::BadValue {
                offset: display_offset,
                what: format!("display index {display_index} outside 1..={frame_count}"),
            });
        }
        let type_offset = r.pos;
        let type_code = r.u8()?;
        let frame_type = FrameType::from_code(type_code).ok_or(SidecarError::BadValue {
            offset: type_offset,
            what: format!("frame type byte {type_code}"),
        })?;
        let residual_offset = r.pos;
        let residual_present = r.u8()?;
        if residual_present > 1 {
            return Err(SidecarError::BadValue {
                offset: residual_offset,
                what: format!("residual_present byte {residual_present}"),
            });
        }
        let pu_count = r.u32()? as usize;
        let mut pus = Vec::with_capacity(pu_count);
        for _ in 0..pu_count {
            pus.push(parse_pu(&mut r)?);
        }
        let residual = if residual_present == 1 {
            let mut planes: [Vec<i16>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for plane in planes.iter_mut() {
                let mut p = Vec::with_capacity(width * height);
                for _ in 0..width * height {
                    p.push(r.i16()?);
                }
                *plane = p;
            }
            Some(ResidualPlanes::from_planes(width, height, planes))
        } else {
            None
        };
        let slot = &mut slots[display_index as usize - 1];
        if slot.is_some() {
            return Err(SidecarError::BadValue {
                offset: display_offset,
                what: format!("duplicate display index {display_index}"),
            });
        }
        *slot = Some(FrameRecord {
            display_index,
            decode_rank: rank,
            frame_type,
            pus,
            residual,
        });
    }
    if r.pos != bytes.len() {
        return Err(SidecarError::TrailingBytes { offset: r.pos });
    }
    let frames = slots.into_iter().map(|s| s.unwrap()).collect();
    Ok(SidecarStream {
        width,
        height,
        frames,
    })
}

/// Strict parse: structural decode plus full invariant validation.
pub fn parse_sidecar(bytes: &[u8]) -> Result<SidecarStream, SidecarError> {
    let stream = parse_sidecar_lenient(bytes)?;
    match validate_stream(&stream).into_iter().next() {
        None => Ok(stream),
        Some(v) => Err(SidecarError::Invariant(v)),
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn write_motion_vector(out: &mut Vec<u8>, mv: Option<MotionVector>) {
    let mv = mv.unwrap_or(MotionVector {
        du: 0,
        dv: 0,
        ref_display: 0,
        weight: 0,
    });
    out.extend_from_slice(&mv.du.to_le_bytes());
    out.extend_from_slice(&mv.dv.to_le_bytes());
    out.extend_from_slice(&mv.ref_display.to_le_bytes());
    out.push(mv.weight);
}

/// Deterministic bit-exact encoding. Validates the stream first and emits
/// nothing on failure.
pub fn write_sidecar(stream: &SidecarStream) -> Result<Vec<u8>, SidecarError> {
    if let Some(v) = validate_stream(stream).into_iter().next() {
        return Err(SidecarError::Invariant(v));
    }
    Ok(write_sidecar_unchecked(stream))
}

/// Encoding without validation; used by the validator's own fixtures.
pub fn write_sidecar_unchecked(stream: &SidecarStream) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(stream.width as u32).to_le_bytes());
    out.extend_from_slice(&(stream.height as u32).to_le_bytes());
    out.extend_from_slice(&(stream.frames.len() as u32).to_le_bytes());

    let mut order: Vec<&FrameRecord> = stream.frames.iter().collect();
    order.sort_by_key(|f| f.decode_rank);
    for frame in order {
        out.extend_from_slice(&frame.display_index.to_le_bytes());
        out.push(frame.frame_type.code());
        out.push(u8::from(frame.residual.is_some()));
        out.extend_from_slice(&(frame.pus.len() as u32).to_le_bytes());
        for pu in &frame.pus {
            out.extend_from_slice(&pu.x.to_le_bytes());
            out.extend_from_slice(&pu.y.to_le_bytes());
            out.extend_from_slice(&pu.w.to_le_bytes());
            out.extend_from_slice(&pu.h.to_le_bytes());
            out.push(pu.direction.code());
            write_motion_vector(&mut out, pu.fwd);
            write_motion_vector(&mut out, pu.bwd);
        }
        if let Some(res) = &frame.residual {
            for ch in 0..3 {
                for v in res.plane(ch) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Check every stream and frame invariant, returning all violations found.
/// An empty list means the stream is valid.
pub fn validate_stream(stream: &SidecarStream) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = stream.frames.len() as u32;
    let (w, h) = (stream.width, stream.height);

    if !stream
        .frames
        .iter()
        .any(|f| f.frame_type == FrameType::Intra)
    {
        out.push(Violation::NoIntraFrame);
    }
    if let Some(first) = stream.frames.iter().find(|f| f.decode_rank == 1) {
        if first.frame_type != FrameType::Intra {
            out.push(Violation::FirstDecodeNotIntra {
                display: first.display_index,
            });
        }
    }

    for frame in &stream.frames {
        let display = frame.display_index;
        match frame.frame_type {
            FrameType::Intra => {
                if !frame.pus.is_empty() {
                    out.push(Violation::IntraWithPus { display });
                }
                if frame.residual.is_some() {
                    out.push(Violation::IntraWithResidual { display });
                }
                continue;
            }
            FrameType::Pred => {
                for (i, pu) in frame.pus.iter().enumerate() {
                    if pu.direction != PuDirection::Fwd {
                        out.push(Violation::NonForwardPuInPredFrame { display, pu: i });
                    }
                }
            }
            FrameType::BiPred => {}
        }

        // Geometry and tiling: a per-pixel coverage counter finds both gaps
        // and overlaps; geometry errors are reported per PU.
        let mut coverage = vec![0u8; w * h];
        let mut overlap_reported = false;
        for (i, pu) in frame.pus.iter().enumerate() {
            if !legal_pu_size(pu.w, pu.h) {
                out.push(Violation::BadBlockSize {
                    display,
                    pu: i,
                    w: pu.w,
                    h: pu.h,
                });
            }
            let x1 = pu.x as usize + pu.w as usize;
            let y1 = pu.y as usize + pu.h as usize;
            if x1 > w || y1 > h {
                out.push(Violation::BlockOutOfBounds { display, pu: i });
                continue;
            }
            for y in pu.y as usize..y1 {
                for x in pu.x as usize..x1 {
                    let cell = &mut coverage[y * w + x];
                    *cell = cell.saturating_add(1);
                    if *cell == 2 && !overlap_reported {
                        out.push(Violation::TilingOverlap {
                            display,
                            pu: i,
                            x: x as u16,
                            y: y as u16,
                        });
                        overlap_reported = true;
                    }
                }
            }
        }
        if let Some(idx) = coverage.iter().position(|&c| c == 0) {
            out.push(Violation::TilingGap {
                display,
                x: (idx % w) as u16,
                y: (idx / w) as u16,
            });
        }

        for (i, pu) in frame.pus.iter().enumerate() {
            for (mv, is_fwd) in [(pu.fwd, true), (pu.bwd, false)] {
                let Some(mv) = mv else { continue };
                if mv.ref_display == 0 || mv.ref_display > t {
                    out.push(Violation::RefOutOfStream {
                        display,
                        pu: i,
                        ref_display: mv.ref_display,
                    });
                    continue;
                }
                if is_fwd && mv.ref_display >= display {
                    out.push(Violation::ForwardRefNotPast {
                        display,
                        pu: i,
                        ref_display: mv.ref_display,
                    });
                }
                if !is_fwd && mv.ref_display <= display {
                    out.push(Violation::BackwardRefNotFuture {
                        display,
                        pu: i,
                        ref_display: mv.ref_display,
                    });
                }
                let ref_rank = stream.frame(mv.ref_display).map(|f| f.decode_rank);
                if ref_rank.is_some_and(|r| r >= frame.decode_rank) {
                    out.push(Violation::DecodeOrderViolation {
                        display,
                        pu: i,
                        ref_display: mv.ref_display,
                    });
                }
            }
            if pu.direction == PuDirection::Bi {
                if let (Some(f), Some(b)) = (pu.fwd, pu.bwd) {
                    let sum = u16::from(f.weight) + u16::from(b.weight);
                    if sum.abs_diff(255) > BI_WEIGHT_TOLERANCE {
                        out.push(Violation::BiWeightSum {
                            display,
                            pu: i,
                            sum,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intra(display: u32, rank: u32) -> FrameRecord {
        FrameRecord {
            display_index: display,
            decode_rank: rank,
            frame_type: FrameType::Intra,
            pus: Vec::new(),
            residual: None,
        }
    }

    fn full_fwd_pu(w: u16, h: u16, du: i16, dv: i16, ref_display: u32) -> PredictionUnit {
        PredictionUnit::fwd_uni(
            0,
            0,
            w,
            h,
            MotionVector {
                du,
                dv,
                ref_display,
                weight: 255,
            },
        )
    }

    #[test]
    fn minimal_single_intra_stream() {
        let s = SidecarStream::new(8, 8, vec![intra(1, 1)]);
        assert!(validate_stream(&s).is_empty());
        let bytes = write_sidecar(&s).unwrap();
        // header + one frame record without PUs or residual
        assert_eq!(bytes.len(), HEADER_SIZE + FRAME_HEADER_SIZE);
        let parsed = parse_sidecar(&bytes).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(parsed.len(), 1);
    }

    #[test]
    fn pu_fields_round_trip() {
        let frames = vec![
            intra(1, 1),
            FrameRecord {
                display_index: 2,
                decode_rank: 2,
                frame_type: FrameType::Pred,
                pus: vec![full_fwd_pu(8, 8, 8, 0, 1)],
                residual: None,
            },
        ];
        let s = SidecarStream::new(8, 8, frames);
        let parsed = parse_sidecar(&write_sidecar(&s).unwrap()).unwrap();
        let pu = parsed.frame(2).unwrap().pus[0];
        assert_eq!(pu.w, 8);
        assert_eq!(pu.direction, PuDirection::Fwd);
        let mv = pu.fwd.unwrap();
        assert_eq!((mv.du, mv.dv, mv.ref_display), (8, 0, 1));
        assert!(pu.bwd.is_none());
    }

    #[test]
    fn write_parse_write_is_idempotent() {
        let frames = vec![
            intra(1, 1),
            FrameRecord {
                display_index: 2,
                decode_rank: 2,
                frame_type: FrameType::Pred,
                pus: vec![full_fwd_pu(8, 8, -3, 5, 1)],
                residual: Some(ResidualPlanes::zeros(8, 8)),
            },
        ];
        let s = SidecarStream::new(8, 8, frames);
        let b1 = write_sidecar(&s).unwrap();
        let b2 = write_sidecar(&parse_sidecar(&b1).unwrap()).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn decode_order_follows_ranks() {
        // display I(1) P(4) B(2) B(3), ranks 1,2,3,4 -> [1, 4, 2, 3]
        let mk_b = |display: u32, rank: u32| FrameRecord {
            display_index: display,
            decode_rank: rank,
            frame_type: FrameType::BiPred,
            pus: vec![PredictionUnit::bi(
                0,
                0,
                8,
                8,
                MotionVector {
                    du: 0,
                    dv: 0,
                    ref_display: 1,
                    weight: 128,
                },
                MotionVector {
                    du: 0,
                    dv: 0,
                    ref_display: 4,
                    weight: 127,
                },
            )],
            residual: None,
        };
        let frames = vec![
            intra(1, 1),
            mk_b(2, 3),
            mk_b(3, 4),
            FrameRecord {
                display_index: 4,
                decode_rank: 2,
                frame_type: FrameType::Pred,
                pus: vec![full_fwd_pu(8, 8, 0, 0, 1)],
                residual: None,
            },
        ];
        let s = SidecarStream::new(8, 8, frames);
        assert!(validate_stream(&s).is_empty());
        assert_eq!(s.decode_order(), vec![1, 4, 2, 3]);
    }

    #[test]
    fn all_intra_stream_decodes_in_display_order() {
        let s = SidecarStream::new(8, 8, vec![intra(1, 1), intra(2, 2), intra(3, 3)]);
        assert_eq!(s.decode_order(), vec![1, 2, 3]);
    }

    #[test]
    fn backward_ref_decoded_later_is_flagged() {
        let frames = vec![
            intra(1, 1),
            FrameRecord {
                display_index: 2,
                decode_rank: 2,
                frame_type: FrameType::BiPred,
                pus: vec![PredictionUnit {
                    x: 0,
                    y: 0,
                    w: 8,
                    h: 8,
                    direction: PuDirection::Bwd,
                    fwd: None,
                    bwd: Some(MotionVector {
                        du: 0,
                        dv: 0,
                        ref_display: 3,
                        weight: 255,
                    }),
                }],
                residual: None,
            },
            intra(3, 3),
        ];
        let s = SidecarStream::new(8, 8, frames);
        let violations = validate_stream(&s);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::DecodeOrderViolation { display: 2, .. })));
    }

    #[test]
    fn tiling_gap_reports_hole_position() {
        // Two 8x4 PUs cover rows 0..4 of each half but leave y >= 4 open in
        // an 8x8 frame... cover left column fully, leave a hole at (4,4).
        let mv = MotionVector {
            du: 0,
            dv: 0,
            ref_display: 1,
            weight: 255,
        };
        let frames = vec![
            intra(1, 1),
            FrameRecord {
                display_index: 2,
                decode_rank: 2,
                frame_type: FrameType::Pred,
                pus: vec![
                    PredictionUnit::fwd_uni(0, 0, 4, 8, mv),
                    PredictionUnit::fwd_uni(4, 0, 4, 4, mv),
                ],
                residual: None,
            },
        ];
        let s = SidecarStream::new(8, 8, frames);
        let violations = validate_stream(&s);
        assert!(violations
            .iter()
            .any(|v| *v == Violation::TilingGap { display: 2, x: 4, y: 4 }));
        // 4x4 is below the minimum block area
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::BadBlockSize { pu: 1, .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let s = SidecarStream::new(8, 8, vec![intra(1, 1)]);
        let bytes = write_sidecar(&s).unwrap();
        let cut = &bytes[..bytes.len() - 2];
        match parse_sidecar(cut) {
            // the cut lands inside the frame's pu_count field
            Err(SidecarError::Truncated { offset, needed }) => {
                assert_eq!(offset, HEADER_SIZE + 6);
                assert_eq!(needed, 2);
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let s = SidecarStream::new(8, 8, vec![intra(1, 1)]);
        let mut bytes = write_sidecar(&s).unwrap();
        bytes.push(0xAB);
        assert!(matches!(
            parse_sidecar(&bytes),
            Err(SidecarError::TrailingBytes { .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let s = SidecarStream::new(8, 8, vec![intra(1, 1)]);
        let mut bytes = write_sidecar(&s).unwrap();
        bytes[0] = b'X';
        assert!(matches!(parse_sidecar(&bytes), Err(SidecarError::BadMagic)));
        bytes[0] = b'C';
        bytes[4] = 2;
        assert!(matches!(
            parse_sidecar(&bytes),
            Err(SidecarError::UnsupportedVersion { found: 2 })
        ));
    }

    #[test]
    fn nonzero_absent_side_is_rejected() {
        let frames = vec![
            intra(1, 1),
            FrameRecord {
                display_index: 2,
                decode_rank: 2,
                frame_type: FrameType::Pred,
                pus: vec![full_fwd_pu(8, 8, 1, 2, 1)],
                residual: None,
            },
        ];
        let s = SidecarStream::new(8, 8, frames);
        let mut bytes = write_sidecar(&s).unwrap();
        // poke a byte inside the (absent, all-zero) backward vector:
        // header | intra record | frame header | x y w h dir | fwd
        let bwd_offset = HEADER_SIZE + FRAME_HEADER_SIZE + FRAME_HEADER_SIZE + 9 + 9;
        bytes[bwd_offset] = 7;
        assert!(matches!(
            parse_sidecar(&bytes),
            Err(SidecarError::BadValue { .. })
        ));
    }

    #[test]
    fn bi_weight_closure_enforced() {
        let frames = vec![
            intra(1, 1),
            intra(3, 2),
            FrameRecord {
                display_index: 2,
                decode_rank: 3,
                frame_type: FrameType::BiPred,
                pus: vec![PredictionUnit::bi(
                    0,
                    0,
                    8,
                    8,
                    MotionVector {
                        du: 0,
                        dv: 0,
                        ref_display: 1,
                        weight: 100,
                    },
                    MotionVector {
                        du: 0,
                        dv: 0,
                        ref_display: 3,
                        weight: 100,
                    },
                )],
                residual: None,
            },
        ];
        let s = SidecarStream::new(8, 8, frames);
        assert!(validate_stream(&s)
            .iter()
            .any(|v| matches!(v, Violation::BiWeightSum { sum: 200, .. })));
    }
}
