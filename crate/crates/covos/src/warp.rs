//! Reverse-mapping warp of probability/feature maps through a motion field,
//! integer frame reconstruction for stream self-validation, confidence
//! weighting, and the motion-vector-to-flow ablation baseline.
//!
//! `warp_map` weights the two directions of a BI pixel equally (1/2, 1/2):
//! both references are equally indicative of the target mask.
//! `reconstruct_frame` instead applies the codec weights carried by the
//! prediction units, because those are tuned for reconstructing RGB values.
//! The two weightings are deliberately kept in separate operations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::RgbImage;
use crate::maps::{ConfidenceMap, MapBuf, Scale};
use crate::motion_field::{FieldEntry, MotionField};
use crate::sidecar::{FrameRecord, FrameType, ResidualPlanes};

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("missing reference map for display {display}")]
    MissingReference { display: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("frame {display} is INTRA and cannot be motion-compensated")]
    NotAPredictedFrame { display: u32 },
}

/// Interpolation kernel applied when sample coordinates are fractional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpKernel {
    #[default]
    Nearest,
    Bilinear,
}

/// Sample `map` at clamped float coordinates, writing one channel vector.
#[inline]
fn sample_into(map: &MapBuf, sx: f32, sy: f32, kernel: InterpKernel, out: &mut [f32]) {
    let (h, w) = (map.height(), map.width());
    let sx = sx.clamp(0.0, (w - 1) as f32);
    let sy = sy.clamp(0.0, (h - 1) as f32);
    match kernel {
        InterpKernel::Nearest => {
            let x = (sx + 0.5).floor() as usize;
            let y = (sy + 0.5).floor() as usize;
            out.copy_from_slice(map.pixel(y.min(h - 1), x.min(w - 1)));
        }
        InterpKernel::Bilinear => {
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f32;
            let fy = sy - y0 as f32;
            let p00 = map.pixel(y0, x0);
            let p01 = map.pixel(y0, x1);
            let p10 = map.pixel(y1, x0);
            let p11 = map.pixel(y1, x1);
            for ch in 0..out.len() {
                let top = (1.0 - fx) * p00[ch] + fx * p01[ch];
                let bot = (1.0 - fx) * p10[ch] + fx * p11[ch];
                out[ch] = (1.0 - fy) * top + fy * bot;
            }
        }
    }
}

fn check_refs_shape<'a>(
    field: &MotionField,
    refs: &'a BTreeMap<u32, MapBuf>,
) -> Result<(&'a MapBuf, Scale), WarpError> {
    let mut iter = refs.values();
    let first = iter
        .next()
        .ok_or_else(|| WarpError::DimensionMismatch("no reference maps supplied".into()))?;
    for m in iter {
        if !m.same_shape(first) {
            return Err(WarpError::DimensionMismatch(
                "reference maps disagree in shape".into(),
            ));
        }
    }
    let scale = if first.width() == field.width() && first.height() == field.height() {
        Scale::Full
    } else if first.width() == Scale::Quarter.apply(field.width())
        && first.height() == Scale::Quarter.apply(field.height())
    {
        Scale::Quarter
    } else {
        return Err(WarpError::DimensionMismatch(format!(
            "reference maps are {}x{} for a {}x{} field",
            first.width(),
            first.height(),
            field.width(),
            field.height()
        )));
    };
    Ok((first, scale))
}

/// Warp reference maps onto the field's frame by reverse mapping: each
/// output pixel samples its reference at `pixel + displacement`. Pixels of
/// uni-directional PUs take the single available direction; BI pixels
/// average both samples with weights 1/2, 1/2. Out-of-bounds coordinates
/// clamp to the frame rectangle.
///
/// Reference maps may be at full or quarter resolution; displacements are
/// rescaled accordingly.
pub fn warp_map(
    field: &MotionField,
    refs: &BTreeMap<u32, MapBuf>,
    kernel: InterpKernel,
) -> Result<MapBuf, WarpError> {
    let (proto, scale) = check_refs_shape(field, refs)?;
    let (mh, mw, c) = (proto.height(), proto.width(), proto.channels());
    // quarter-pel -> map pixels
    let qscale = 0.25 * scale.factor();
    let (full_h, full_w) = (field.height(), field.width());

    let mut out = MapBuf::zeros(mh, mw, c);
    out.data_mut()
        .par_chunks_mut(mw * c)
        .enumerate()
        .try_for_each(|(y, row)| -> Result<(), WarpError> {
            let fy = scale.center(y, full_h);
            let mut tmp = vec![0.0f32; c];
            for x in 0..mw {
                let fx = scale.center(x, full_w);
                let fwd = field.fwd(fy, fx);
                let bwd = field.bwd(fy, fx);
                let px = &mut row[x * c..(x + 1) * c];
                let mut fetch = |e: FieldEntry, dst: &mut [f32]| -> Result<(), WarpError> {
                    let map = refs.get(&e.ref_display).ok_or(WarpError::MissingReference {
                        display: e.ref_display,
                    })?;
                    let sx = x as f32 + f32::from(e.du) * qscale;
                    let sy = y as f32 + f32::from(e.dv) * qscale;
                    sample_into(map, sx, sy, kernel, dst);
                    Ok(())
                };
                match (fwd, bwd) {
                    (Some(f), None) => fetch(f, px)?,
                    (None, Some(b)) => fetch(b, px)?,
                    (Some(f), Some(b)) => {
                        fetch(f, px)?;
                        fetch(b, &mut tmp)?;
                        for ch in 0..c {
                            px[ch] = 0.5 * px[ch] + 0.5 * tmp[ch];
                        }
                    }
                    // unreachable on tiled streams; left as zeros
                    (None, None) => {}
                }
            }
            Ok(())
        })?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Integer motion compensation (Eq. 1-2 path)
// ---------------------------------------------------------------------------

/// Nearest integer pixel for a quarter-pel sample position.
#[inline]
fn qpel_nearest(base: usize, d: i16, extent: usize) -> usize {
    let q = 4 * base as i64 + i64::from(d) + 2;
    q.div_euclid(4).clamp(0, extent as i64 - 1) as usize
}

#[inline]
fn sample_rgb(img: &RgbImage, x: usize, y: usize, du: i16, dv: i16) -> [u8; 3] {
    img.rgb(qpel_nearest(y, dv, img.h), qpel_nearest(x, du, img.w))
}

/// Motion-compensated prediction of a P/B frame from its reference images,
/// using the codec weights stored in the PUs. Pure integer arithmetic:
/// `(w_fwd * fwd + w_bwd * bwd + 127) / 255` per channel, with the absent
/// side of uni-directional PUs contributing zero weight.
pub fn predict_frame(
    frame: &FrameRecord,
    width: usize,
    height: usize,
    refs: &BTreeMap<u32, RgbImage>,
) -> Result<RgbImage, WarpError> {
    if frame.frame_type == FrameType::Intra {
        return Err(WarpError::NotAPredictedFrame {
            display: frame.display_index,
        });
    }
    let mut out = RgbImage::new(width, height);
    for pu in &frame.pus {
        let fwd_ref = match pu.fwd {
            Some(mv) => Some((
                refs.get(&mv.ref_display).ok_or(WarpError::MissingReference {
                    display: mv.ref_display,
                })?,
                mv,
            )),
            None => None,
        };
        let bwd_ref = match pu.bwd {
            Some(mv) => Some((
                refs.get(&mv.ref_display).ok_or(WarpError::MissingReference {
                    display: mv.ref_display,
                })?,
                mv,
            )),
            None => None,
        };
        let x1 = (pu.x as usize + pu.w as usize).min(width);
        let y1 = (pu.y as usize + pu.h as usize).min(height);
        for y in pu.y as usize..y1 {
            for x in pu.x as usize..x1 {
                let mut acc = [0u32; 3];
                if let Some((img, mv)) = fwd_ref {
                    let s = sample_rgb(img, x, y, mv.du, mv.dv);
                    for ch in 0..3 {
                        acc[ch] += u32::from(mv.weight) * u32::from(s[ch]);
                    }
                }
                if let Some((img, mv)) = bwd_ref {
                    let s = sample_rgb(img, x, y, mv.du, mv.dv);
                    for ch in 0..3 {
                        acc[ch] += u32::from(mv.weight) * u32::from(s[ch]);
                    }
                }
                for ch in 0..3 {
                    out.set(y, x, ch, (((acc[ch] + 127) / 255).min(255)) as u8);
                }
            }
        }
    }
    Ok(out)
}

/// Reconstruct a frame exactly as a decoder would: motion-compensated
/// prediction plus stored residual, clamped to [0, 255]. A missing
/// residual contributes zero.
pub fn reconstruct_frame(
    frame: &FrameRecord,
    width: usize,
    height: usize,
    refs: &BTreeMap<u32, RgbImage>,
) -> Result<RgbImage, WarpError> {
    let mut out = predict_frame(frame, width, height, refs)?;
    if let Some(res) = &frame.residual {
        if res.width() != width || res.height() != height {
            return Err(WarpError::DimensionMismatch(
                "residual planes do not match stream dimensions".into(),
            ));
        }
        apply_residual(&mut out, res);
    }
    Ok(out)
}

fn apply_residual(img: &mut RgbImage, res: &ResidualPlanes) {
    for y in 0..img.h {
        for x in 0..img.w {
            for ch in 0..3 {
                let v = i32::from(img.get(y, x, ch)) + i32::from(res.get(ch, y, x));
                img.set(y, x, ch, v.clamp(0, 255) as u8);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Confidence weighting
// ---------------------------------------------------------------------------

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-pixel propagation confidence: sigmoid of the channel-wise dot
/// product between extracted and warped features. With `normalize`, both
/// vectors are L2-normalized per pixel first, which keeps handcrafted
/// features from saturating the sigmoid; `normalize = false` uses the raw
/// dot product. Zero-norm vectors are left unnormalized (dot 0, S = 0.5).
pub fn confidence(v: &MapBuf, v_hat: &MapBuf, normalize: bool) -> Result<ConfidenceMap, WarpError> {
    if !v.same_shape(v_hat) {
        return Err(WarpError::DimensionMismatch(
            "feature maps disagree in shape".into(),
        ));
    }
    let (h, w, c) = (v.height(), v.width(), v.channels());
    let mut data = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let a = v.pixel(y, x);
            let b = v_hat.pixel(y, x);
            let mut dot = 0.0f32;
            for ch in 0..c {
                dot += a[ch] * b[ch];
            }
            if normalize {
                let na: f32 = a.iter().map(|v| v * v).sum::<f32>().sqrt();
                let nb: f32 = b.iter().map(|v| v * v).sum::<f32>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    dot /= na * nb;
                }
            }
            data[y * w + x] = sigmoid(dot);
        }
    }
    Ok(ConfidenceMap { h, w, data })
}

/// Scale every channel of `p_hat` by the per-pixel confidence.
pub fn apply_confidence(s: &ConfidenceMap, p_hat: &MapBuf) -> Result<MapBuf, WarpError> {
    if s.h != p_hat.height() || s.w != p_hat.width() {
        return Err(WarpError::DimensionMismatch(
            "confidence map does not match prediction size".into(),
        ));
    }
    let mut out = p_hat.clone();
    let c = out.channels();
    for y in 0..s.h {
        for x in 0..s.w {
            let k = s.get(y, x);
            for v in out.pixel_mut(y, x) {
                *v *= k;
            }
        }
        let _ = c;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// MV-to-flow ablation baseline
// ---------------------------------------------------------------------------

/// Flatten forward motion entries into an H x W x 2 optical-flow plane:
/// `[u, v] / ((t - i) * fps)` in pixels per unit time. Absent entries map
/// to zero flow. This deliberately reproduces the single-reference flow
/// conversion baseline; chained references lose their composed motion.
pub fn mv_to_flow(field: &MotionField, fps: f32) -> MapBuf {
    let (h, w) = (field.height(), field.width());
    let i = field.display_index as f32;
    let mut out = MapBuf::zeros(h, w, 2);
    for y in 0..h {
        for x in 0..w {
            if let Some(e) = field.fwd(y, x) {
                let dt = (e.ref_display as f32 - i) * fps;
                let px = out.pixel_mut(y, x);
                px[0] = f32::from(e.du) / 4.0 / dt;
                px[1] = f32::from(e.dv) / 4.0 / dt;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_field::build_motion_field;
    use crate::sidecar::{MotionVector, PredictionUnit, SidecarStream};

    fn intra(display: u32, rank: u32) -> FrameRecord {
        FrameRecord {
            display_index: display,
            decode_rank: rank,
            frame_type: FrameType::Intra,
            pus: Vec::new(),
            residual: None,
        }
    }

    fn fwd_frame(display: u32, rank: u32, du: i16, dv: i16, ref_display: u32) -> FrameRecord {
        FrameRecord {
            display_index: display,
            decode_rank: rank,
            frame_type: FrameType::Pred,
            pus: vec![PredictionUnit::fwd_uni(
                0,
                0,
                16,
                8,
                MotionVector {
                    du,
                    dv,
                    ref_display,
                    weight: 255,
                },
            )],
            residual: None,
        }
    }

    fn ramp_map(h: usize, w: usize, c: usize) -> MapBuf {
        let mut m = MapBuf::zeros(h, w, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    m.set(y, x, ch, (y * w + x) as f32 * 0.01 + ch as f32);
                }
            }
        }
        m
    }

    #[test]
    fn zero_displacement_is_identity_for_both_kernels() {
        let stream = SidecarStream::new(16, 8, vec![intra(1, 1), fwd_frame(2, 2, 0, 0, 1)]);
        let field = build_motion_field(stream.frame(2).unwrap(), &stream).unwrap();
        let reference = ramp_map(8, 16, 3);
        let refs = BTreeMap::from([(1u32, reference.clone())]);
        for kernel in [InterpKernel::Nearest, InterpKernel::Bilinear] {
            let out = warp_map(&field, &refs, kernel).unwrap();
            assert_eq!(out, reference);
        }
    }

    #[test]
    fn uniform_shift_matches_brute_force() {
        // du = 8 qpel = 2 px: output[x] = ref[x + 2], clamped at the border
        let stream = SidecarStream::new(16, 8, vec![intra(1, 1), fwd_frame(2, 2, 8, 0, 1)]);
        let field = build_motion_field(stream.frame(2).unwrap(), &stream).unwrap();
        let reference = ramp_map(8, 16, 1);
        let refs = BTreeMap::from([(1u32, reference.clone())]);
        let out = warp_map(&field, &refs, InterpKernel::Nearest).unwrap();
        for y in 0..8 {
            for x in 0..16 {
                let sx = (x + 2).min(15);
                assert_eq!(out.get(y, x, 0), reference.get(y, sx, 0));
            }
        }
    }

    #[test]
    fn bi_average_of_identical_references_is_identity() {
        let frame = FrameRecord {
            display_index: 2,
            decode_rank: 3,
            frame_type: FrameType::BiPred,
            pus: vec![PredictionUnit::bi(
                0,
                0,
                16,
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
                    ref_display: 3,
                    weight: 127,
                },
            )],
            residual: None,
        };
        let stream = SidecarStream::new(16, 8, vec![intra(1, 1), frame, intra(3, 2)]);
        let field = build_motion_field(stream.frame(2).unwrap(), &stream).unwrap();
        let constant = MapBuf::from_vec(8, 16, 1, vec![0.625; 128]);
        let refs = BTreeMap::from([(1u32, constant.clone()), (3u32, constant.clone())]);
        let out = warp_map(&field, &refs, InterpKernel::Nearest).unwrap();
        assert_eq!(out, constant);
    }

    #[test]
    fn missing_reference_is_reported() {
        let stream = SidecarStream::new(16, 8, vec![intra(1, 1), fwd_frame(2, 2, 0, 0, 1)]);
        let field = build_motion_field(stream.frame(2).unwrap(), &stream).unwrap();
        let refs = BTreeMap::from([(9u32, ramp_map(8, 16, 1))]);
        assert!(matches!(
            warp_map(&field, &refs, InterpKernel::Nearest),
            Err(WarpError::MissingReference { display: 1 })
        ));
    }

    #[test]
    fn reconstruct_zero_motion_zero_residual_copies_reference() {
        let mut img = RgbImage::new(16, 8);
        for (i, b) in img.data.iter_mut().enumerate() {
            *b = (i % 251) as u8;
        }
        let mut frame = fwd_frame(2, 2, 0, 0, 1);
        frame.residual = Some(ResidualPlanes::zeros(16, 8));
        let refs = BTreeMap::from([(1u32, img.clone())]);
        let out = reconstruct_frame(&frame, 16, 8, &refs).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn bi_full_forward_weight_ignores_backward_reference() {
        let frame = FrameRecord {
            display_index: 2,
            decode_rank: 3,
            frame_type: FrameType::BiPred,
            pus: vec![PredictionUnit::bi(
                0,
                0,
                16,
                8,
                MotionVector {
                    du: 0,
                    dv: 0,
                    ref_display: 1,
                    weight: 255,
                },
                MotionVector {
                    du: 0,
                    dv: 0,
                    ref_display: 3,
                    weight: 0,
                },
            )],
            residual: None,
        };
        let mut fwd_img = RgbImage::new(16, 8);
        fwd_img.data.fill(200);
        let mut bwd_img = RgbImage::new(16, 8);
        bwd_img.data.fill(10);
        let refs = BTreeMap::from([(1u32, fwd_img.clone()), (3u32, bwd_img)]);
        let out = reconstruct_frame(&frame, 16, 8, &refs).unwrap();
        assert_eq!(out, fwd_img);
    }

    #[test]
    fn confidence_analytic_values() {
        let zeros = MapBuf::zeros(2, 2, 4);
        let s = confidence(&zeros, &zeros, true).unwrap();
        assert!(s.data.iter().all(|&v| (v - 0.5).abs() < 1e-7));

        let mut v = MapBuf::zeros(1, 1, 3);
        v.set(0, 0, 0, 3.0);
        v.set(0, 0, 1, 4.0);
        let s = confidence(&v, &v, true).unwrap();
        // normalized identical vectors: sigmoid(1)
        assert!((s.get(0, 0) - 0.731_058_6).abs() < 1e-5);
    }

    #[test]
    fn confidence_matches_scalar_oracle() {
        let mut a = MapBuf::zeros(4, 5, 3);
        let mut b = MapBuf::zeros(4, 5, 3);
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 17) as f32 - 8.0) * 0.1;
        }
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = ((i * 23 % 13) as f32 - 6.0) * 0.05;
        }
        for normalize in [false, true] {
            let s = confidence(&a, &b, normalize).unwrap();
            for y in 0..4 {
                for x in 0..5 {
                    let pa = a.pixel(y, x);
                    let pb = b.pixel(y, x);
                    let mut dot: f32 = pa.iter().zip(pb).map(|(p, q)| p * q).sum();
                    if normalize {
                        let na = pa.iter().map(|v| v * v).sum::<f32>().sqrt();
                        let nb = pb.iter().map(|v| v * v).sum::<f32>().sqrt();
                        if na > 0.0 && nb > 0.0 {
                            dot /= na * nb;
                        }
                    }
                    let expect = 1.0 / (1.0 + (-dot).exp());
                    assert!((s.get(y, x) - expect).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn apply_confidence_halves_scores() {
        let p = MapBuf::from_vec(1, 2, 2, vec![0.8, 0.2, 0.6, 0.4]);
        let s = ConfidenceMap {
            h: 1,
            w: 2,
            data: vec![0.5, 0.5],
        };
        let out = apply_confidence(&s, &p).unwrap();
        assert_eq!(out.data(), &[0.4, 0.1, 0.3, 0.2]);

        let zeros = MapBuf::zeros(1, 2, 2);
        assert_eq!(apply_confidence(&s, &zeros).unwrap(), zeros);
    }

    #[test]
    fn mv_to_flow_formula() {
        // 4 px toward a reference one frame earlier at fps 1 -> (-4, 0)
        let stream = SidecarStream::new(16, 8, vec![intra(1, 1), fwd_frame(2, 2, 16, 0, 1)]);
        let field = build_motion_field(stream.frame(2).unwrap(), &stream).unwrap();
        let flow = mv_to_flow(&field, 1.0);
        assert_eq!(flow.pixel(3, 3), &[-4.0, 0.0]);

        let stream = SidecarStream::new(16, 8, vec![intra(1, 1), fwd_frame(2, 2, 0, 0, 1)]);
        let field = build_motion_field(stream.frame(2).unwrap(), &stream).unwrap();
        let flow = mv_to_flow(&field, 25.0);
        assert!(flow.data().iter().all(|&v| v == 0.0));
    }
}
