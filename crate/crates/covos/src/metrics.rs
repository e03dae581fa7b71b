//! Region (Jaccard) and boundary (F-score) accuracy, with object-size
//! stratification and sequence-level reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::maps::{BinaryMask, LabelMask};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("frame sets differ: {0}")]
    FrameSetMismatch(String),
}

/// Intersection over union. Defined as 1 when both masks are empty, so a
/// perfect all-background prediction scores perfectly.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(MetricsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            pred.w, pred.h, gt.w, gt.h
        )));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&a, &b) in pred.data.iter().zip(&gt.data) {
        inter += u64::from(a & b);
        union += u64::from(a | b);
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Foreground pixels with at least one background 4-neighbour; the frame
/// border counts as background.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.h, mask.w);
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0 {
                continue;
            }
            let on_border = y == 0 || y == h - 1 || x == 0 || x == w - 1;
            let has_bg_neighbor = on_border
                || mask.get(y - 1, x) == 0
                || mask.get(y + 1, x) == 0
                || mask.get(y, x - 1) == 0
                || mask.get(y, x + 1) == 0;
            if has_bg_neighbor {
                out.set(y, x, 1);
            }
        }
    }
    out
}

/// Default match tolerance: 0.8% of the image diagonal, rounded up.
pub fn default_boundary_tolerance(h: usize, w: usize) -> usize {
    let diag = ((h * h + w * w) as f64).sqrt();
    (0.008 * diag).ceil() as usize
}

/// Dilate a boundary with a Euclidean disk of radius `tol`: marks every
/// pixel within distance `tol` of a set pixel.
fn dilate_disk(mask: &BinaryMask, tol: usize) -> BinaryMask {
    let (h, w) = (mask.h, mask.w);
    let t = tol as isize;
    let t2 = (tol * tol) as isize;
    let mut offsets = Vec::new();
    for dy in -t..=t {
        for dx in -t..=t {
            if dy * dy + dx * dx <= t2 {
                offsets.push((dy, dx));
            }
        }
    }
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            if mask.get(y as usize, x as usize) == 0 {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                    out.set(yy as usize, xx as usize, 1);
                }
            }
        }
    }
    out
}

/// Boundary F-score: precision is the fraction of predicted boundary
/// pixels within `tolerance` (Euclidean) of a ground-truth boundary
/// pixel, recall the converse; F = 2PR/(P+R). Both boundaries empty
/// scores 1, a single empty side scores 0.
pub fn boundary_f(
    pred: &BinaryMask,
    gt: &BinaryMask,
    tolerance_px: Option<usize>,
) -> Result<f64, MetricsError> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(MetricsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            pred.w, pred.h, gt.w, gt.h
        )));
    }
    let tol = tolerance_px.unwrap_or_else(|| default_boundary_tolerance(pred.h, pred.w));
    let pb = boundary(pred);
    let gb = boundary(gt);
    let np = pb.count_ones();
    let ng = gb.count_ones();
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let gb_zone = dilate_disk(&gb, tol);
    let pb_zone = dilate_disk(&pb, tol);
    let matched_p = pb
        .data
        .iter()
        .zip(&gb_zone.data)
        .filter(|(&p, &z)| p != 0 && z != 0)
        .count();
    let matched_g = gb
        .data
        .iter()
        .zip(&pb_zone.data)
        .filter(|(&g, &z)| g != 0 && z != 0)
        .count();
    let precision = matched_p as f64 / np as f64;
    let recall = matched_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeCategory {
    Small,
    Medium,
    Large,
}

impl SizeCategory {
    pub fn label(self) -> &'static str {
        match self {
            SizeCategory::Small => "small",
            SizeCategory::Medium => "medium",
            SizeCategory::Large => "large",
        }
    }
}

/// Object size split: small below 10k pixels, medium 10k..=30k, large
/// above 30k.
pub fn size_category(gt: &BinaryMask) -> SizeCategory {
    let n = gt.count_ones();
    if n < 10_000 {
        SizeCategory::Small
    } else if n <= 30_000 {
        SizeCategory::Medium
    } else {
        SizeCategory::Large
    }
}

/// One evaluated (object, frame) pair.
#[derive(Debug, Clone)]
pub struct ScoreEntry {
    pub object: u8,
    pub display: u32,
    pub j: f64,
    pub f: f64,
    pub category: SizeCategory,
}

/// Per-object, per-frame scores plus aggregate means.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub entries: Vec<ScoreEntry>,
    pub objects: Vec<u8>,
    pub frames: usize,
}

impl EvalReport {
    pub fn j_mean(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.j))
    }

    pub fn f_mean(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.f))
    }

    /// Combined J&F: the mean of the two means.
    pub fn jf_mean(&self) -> f64 {
        (self.j_mean() + self.f_mean()) / 2.0
    }

    pub fn by_size(&self, cat: SizeCategory) -> Option<(f64, f64)> {
        let sel: Vec<&ScoreEntry> = self.entries.iter().filter(|e| e.category == cat).collect();
        if sel.is_empty() {
            return None;
        }
        Some((
            mean(sel.iter().map(|e| e.j)),
            mean(sel.iter().map(|e| e.f)),
        ))
    }

    /// Line-oriented human-readable table.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "object  frame      J        F   size");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:>6}  {:>5}  {:.5}  {:.5}  {}",
                e.object,
                e.display,
                e.j,
                e.f,
                e.category.label()
            );
        }
        let _ = writeln!(out, "---");
        let _ = writeln!(
            out,
            "J_mean {:.5}  F_mean {:.5}  JF_mean {:.5}  frames {}  objects {}",
            self.j_mean(),
            self.f_mean(),
            self.jf_mean(),
            self.frames,
            self.objects.len()
        );
        out
    }

    /// Machine-readable `key=value` lines.
    pub fn key_values(&self, by_size: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "J_mean={:.6}", self.j_mean());
        let _ = writeln!(out, "F_mean={:.6}", self.f_mean());
        let _ = writeln!(out, "JF_mean={:.6}", self.jf_mean());
        if by_size {
            for (cat, jk, fk) in [
                (SizeCategory::Small, "J_small", "F_small"),
                (SizeCategory::Medium, "J_medium", "F_medium"),
                (SizeCategory::Large, "J_large", "F_large"),
            ] {
                match self.by_size(cat) {
                    Some((j, f)) => {
                        let _ = writeln!(out, "{jk}={j:.6}");
                        let _ = writeln!(out, "{fk}={f:.6}");
                    }
                    None => {
                        let _ = writeln!(out, "{jk}=nan");
                        let _ = writeln!(out, "{fk}=nan");
                    }
                }
            }
        }
        let _ = writeln!(out, "frames={}", self.frames);
        let _ = writeln!(out, "objects={}", self.objects.len());
        out
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in it {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Evaluate predictions against ground truth over aligned frame sets,
/// binarizing multi-label masks per object.
pub fn evaluate_sequence(
    preds: &BTreeMap<u32, LabelMask>,
    gts: &BTreeMap<u32, LabelMask>,
    objects: &[u8],
) -> Result<EvalReport, MetricsError> {
    if preds.len() != gts.len() || preds.keys().zip(gts.keys()).any(|(a, b)| a != b) {
        return Err(MetricsError::FrameSetMismatch(format!(
            "{} predicted vs {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let mut entries = Vec::new();
    for (&display, pred) in preds {
        let gt = &gts[&display];
        for &obj in objects {
            let pm = pred.binarize(obj);
            let gm = gt.binarize(obj);
            let j = jaccard(&pm, &gm)?;
            let f = boundary_f(&pm, &gm, None)?;
            entries.push(ScoreEntry {
                object: obj,
                display,
                j,
                f,
                category: size_category(&gm),
            });
        }
    }
    Ok(EvalReport {
        entries,
        objects: objects.to_vec(),
        frames: preds.len(),
    })
}
