//! Residual-guided mask correction: gate propagation errors through the
//! residual energy, then repair the selected pixels by matching their
//! features against the temporally closest keyframe.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::maps::{BinaryMask, MapBuf};
use crate::sidecar::ResidualPlanes;

#[derive(Debug, Error)]
pub enum CorrectionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no keyframe available")]
    NoKeyframeAvailable,
}

/// ITU-R BT.601 greyscale weights.
pub const GREY_R: f32 = 0.299;
pub const GREY_G: f32 = 0.587;
pub const GREY_B: f32 = 0.114;

#[derive(Debug, Clone)]
pub struct CorrectionConfig {
    /// Residual binarization threshold on |greyscale| (0.15 * 255).
    pub tau: f32,
    /// Square structuring element radius, in pixels at propagation
    /// resolution.
    pub dilation_radius: usize,
    /// Optional radius bounding feature matching around each site;
    /// `None` matches against the whole keyframe.
    pub search_window: Option<usize>,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            tau: 0.15 * 255.0,
            dilation_radius: 2,
            search_window: None,
        }
    }
}

/// Binarize the residual: 1 where the signed greyscale magnitude exceeds
/// `tau`.
pub fn residual_gate(e: &ResidualPlanes, tau: f32) -> BinaryMask {
    let (h, w) = (e.height(), e.width());
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let g = GREY_R * f32::from(e.get(0, y, x))
                + GREY_G * f32::from(e.get(1, y, x))
                + GREY_B * f32::from(e.get(2, y, x));
            if g.abs() > tau {
                out.set(y, x, 1);
            }
        }
    }
    out
}

/// Foreground of an aggregated probability map: 1 where the argmax channel
/// is not background. Ties resolve toward the lowest channel index, so an
/// exact object/background tie stays background.
pub fn foreground_mask(p: &MapBuf) -> BinaryMask {
    let (h, w) = (p.height(), p.width());
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if p.argmax(y, x) != 0 {
                out.set(y, x, 1);
            }
        }
    }
    out
}

/// Morphological dilation with a square structuring element of side
/// `2 * radius + 1`. Radius 0 is the identity.
pub fn dilate(m: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return m.clone();
    }
    let (h, w) = (m.h, m.w);
    let r = radius as isize;
    // two separable 1-D max passes
    let mut tmp = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let x0 = (x as isize - r).max(0) as usize;
            let x1 = ((x as isize + r) as usize).min(w - 1);
            if (x0..=x1).any(|xx| m.get(y, xx) != 0) {
                tmp.set(y, x, 1);
            }
        }
    }
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..h {
        let y0 = (y as isize - r).max(0) as usize;
        let y1 = ((y as isize + r) as usize).min(h - 1);
        for x in 0..w {
            if (y0..=y1).any(|yy| tmp.get(yy, x) != 0) {
                out.set(y, x, 1);
            }
        }
    }
    out
}

/// Pixels needing correction: the intersection of the binarized residual
/// with the dilated propagated foreground.
pub fn correction_sites(
    e_b: &BinaryMask,
    s_plus: &BinaryMask,
) -> Result<BinaryMask, CorrectionError> {
    if e_b.h != s_plus.h || e_b.w != s_plus.w {
        return Err(CorrectionError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            e_b.w, e_b.h, s_plus.w, s_plus.h
        )));
    }
    let data = e_b
        .data
        .iter()
        .zip(&s_plus.data)
        .map(|(&a, &b)| a & b)
        .collect();
    Ok(BinaryMask {
        h: e_b.h,
        w: e_b.w,
        data,
    })
}

/// Temporally closest processed keyframe; ties resolve toward the past.
pub fn nearest_keyframe(n: u32, processed: &BTreeSet<u32>) -> Result<u32, CorrectionError> {
    processed
        .iter()
        .copied()
        .min_by_key(|&k| (n.abs_diff(k), k))
        .ok_or(CorrectionError::NoKeyframeAvailable)
}

/// Repair selected pixels by softmax feature matching against a keyframe.
///
/// For each site pixel `a`, affinities to keyframe pixels `b` are
/// `exp(-||V_n^a - V_k^b||^2)`, normalized over all candidates (the full
/// keyframe, or a window around `a` when `search_window` is set). The
/// output at `a` is the affinity-weighted sum of the keyframe prediction;
/// non-site pixels are zero. The exponent is stabilized by subtracting the
/// smallest squared distance, so rows survive arbitrarily distant features.
pub fn feature_match_correct(
    sites: &BinaryMask,
    p_key: &MapBuf,
    v_n: &MapBuf,
    v_key: &MapBuf,
    config: &CorrectionConfig,
) -> Result<MapBuf, CorrectionError> {
    let (h, w) = (sites.h, sites.w);
    if v_n.height() != h || v_n.width() != w {
        return Err(CorrectionError::DimensionMismatch(
            "site mask does not match feature map".into(),
        ));
    }
    if !v_n.same_shape(v_key) {
        return Err(CorrectionError::DimensionMismatch(
            "frame and keyframe features disagree in shape".into(),
        ));
    }
    if p_key.height() != h || p_key.width() != w {
        return Err(CorrectionError::DimensionMismatch(
            "keyframe prediction does not match feature map".into(),
        ));
    }
    let c = v_n.channels();
    let oc = p_key.channels();

    let mut out = MapBuf::zeros(h, w, oc);
    out.data_mut()
        .par_chunks_mut(w * oc)
        .enumerate()
        .for_each(|(y, row)| {
            let mut dist = Vec::new();
            for x in 0..w {
                if sites.get(y, x) == 0 {
                    continue;
                }
                let fa = v_n.pixel(y, x);
                let (y0, y1, x0, x1) = match config.search_window {
                    Some(r) => (
                        y.saturating_sub(r),
                        (y + r + 1).min(h),
                        x.saturating_sub(r),
                        (x + r + 1).min(w),
                    ),
                    None => (0, h, 0, w),
                };
                dist.clear();
                let mut min_d = f32::INFINITY;
                for by in y0..y1 {
                    for bx in x0..x1 {
                        let fb = v_key.pixel(by, bx);
                        let mut d = 0.0f32;
                        for ch in 0..c {
                            let diff = fa[ch] - fb[ch];
                            d += diff * diff;
                        }
                        if d < min_d {
                            min_d = d;
                        }
                        dist.push(d);
                    }
                }
                let mut total = 0.0f32;
                for d in dist.iter_mut() {
                    *d = (-(*d - min_d)).exp();
                    total += *d;
                }
                let px = &mut row[x * oc..(x + 1) * oc];
                let mut i = 0;
                for by in y0..y1 {
                    for bx in x0..x1 {
                        let wgt = dist[i] / total;
                        i += 1;
                        let pb = p_key.pixel(by, bx);
                        for ch in 0..oc {
                            px[ch] += wgt * pb[ch];
                        }
                    }
                }
            }
        });
    Ok(out)
}
