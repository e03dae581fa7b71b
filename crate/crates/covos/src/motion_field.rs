//! Dense per-pixel bi-directional motion fields aggregated from PUs.
//!
//! Displacements stay in quarter-pel integers inside the field; conversion
//! to fractional pixels happens in the warp engine.

use thiserror::Error;

use crate::sidecar::{FrameRecord, FrameType, SidecarStream};

#[derive(Debug, Error)]
pub enum MotionFieldError {
    #[error("frame {display} is INTRA and has no motion field")]
    NotAPredictedFrame { display: u32 },
}

/// One direction's entry at a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldEntry {
    pub du: i16,
    pub dv: i16,
    pub ref_display: u32,
}

/// Struct-of-arrays storage for one direction of the field.
#[derive(Debug, Clone)]
struct DirectionField {
    present: Vec<bool>,
    du: Vec<i16>,
    dv: Vec<i16>,
    ref_display: Vec<u32>,
}

impl DirectionField {
    fn absent(n: usize) -> Self {
        DirectionField {
            present: vec![false; n],
            du: vec![0; n],
            dv: vec![0; n],
            ref_display: vec![0; n],
        }
    }

    #[inline]
    fn get(&self, idx: usize) -> Option<FieldEntry> {
        if self.present[idx] {
            Some(FieldEntry {
                du: self.du[idx],
                dv: self.dv[idx],
                ref_display: self.ref_display[idx],
            })
        } else {
            None
        }
    }

    #[inline]
    fn set(&mut self, idx: usize, du: i16, dv: i16, ref_display: u32) {
        self.present[idx] = true;
        self.du[idx] = du;
        self.dv[idx] = dv;
        self.ref_display[idx] = ref_display;
    }
}

/// Dense H x W forward/backward displacement and reference maps for one
/// frame. Entries are absent where the covering PU has no vector in that
/// direction. Immutable once built.
#[derive(Debug, Clone)]
pub struct MotionField {
    w: usize,
    h: usize,
    pub display_index: u32,
    fwd: DirectionField,
    bwd: DirectionField,
}

impl MotionField {
    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn fwd(&self, y: usize, x: usize) -> Option<FieldEntry> {
        self.fwd.get(y * self.w + x)
    }

    #[inline]
    pub fn bwd(&self, y: usize, x: usize) -> Option<FieldEntry> {
        self.bwd.get(y * self.w + x)
    }
}

/// Aggregate a frame's PUs into the dense field: every pixel of a PU takes
/// the PU's vector in each direction the PU carries, and stays absent in
/// the other direction.
pub fn build_motion_field(
    frame: &FrameRecord,
    stream: &SidecarStream,
) -> Result<MotionField, MotionFieldError> {
    if frame.frame_type == FrameType::Intra {
        return Err(MotionFieldError::NotAPredictedFrame {
            display: frame.display_index,
        });
    }
    let (w, h) = (stream.width(), stream.height());
    let mut field = MotionField {
        w,
        h,
        display_index: frame.display_index,
        fwd: DirectionField::absent(w * h),
        bwd: DirectionField::absent(w * h),
    };
    for pu in &frame.pus {
        let x0 = pu.x as usize;
        let y0 = pu.y as usize;
        let x1 = (x0 + pu.w as usize).min(w);
        let y1 = (y0 + pu.h as usize).min(h);
        for y in y0..y1 {
            let row = y * w;
            if let Some(mv) = pu.fwd {
                for x in x0..x1 {
                    field.fwd.set(row + x, mv.du, mv.dv, mv.ref_display);
                }
            }
            if let Some(mv) = pu.bwd {
                for x in x0..x1 {
                    field.bwd.set(row + x, mv.du, mv.dv, mv.ref_display);
                }
            }
        }
    }
    Ok(field)
}
