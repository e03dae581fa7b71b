//! Dense per-frame containers: float maps, binary masks and label masks.

use std::fmt;

/// Resolution of a propagated map relative to the stream resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Full,
    Quarter,
}

impl Scale {
    /// Map a full-resolution extent to this scale (ceiling division).
    #[inline]
    pub fn apply(self, v: usize) -> usize {
        match self {
            Scale::Full => v,
            Scale::Quarter => v.div_ceil(4),
        }
    }

    /// Multiplicative factor relative to full resolution.
    #[inline]
    pub fn factor(self) -> f32 {
        match self {
            Scale::Full => 1.0,
            Scale::Quarter => 0.25,
        }
    }

    /// Full-resolution pixel sampled to represent scaled pixel `v`
    /// (cell centre, clamped to the frame).
    #[inline]
    pub fn center(self, v: usize, full_extent: usize) -> usize {
        match self {
            Scale::Full => v,
            Scale::Quarter => (4 * v + 2).min(full_extent - 1),
        }
    }
}

/// Row-major H x W x C float buffer with interleaved channels.
#[derive(Clone, PartialEq)]
pub struct MapBuf {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl MapBuf {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        MapBuf {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w * c, "MapBuf::from_vec length mismatch");
        MapBuf { h, w, c, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn base(&self, y: usize, x: usize) -> usize {
        (y * self.w + x) * self.c
    }

    /// Channel vector at one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let b = self.base(y, x);
        &self.data[b..b + self.c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let b = self.base(y, x);
        &mut self.data[b..b + self.c]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[self.base(y, x) + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        let b = self.base(y, x) + ch;
        self.data[b] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Split into rows for parallel writes.
    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, f32> {
        self.data.chunks_mut(self.w * self.c)
    }

    pub fn same_shape(&self, other: &MapBuf) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    /// Index of the largest channel; ties resolve to the lowest index.
    #[inline]
    pub fn argmax(&self, y: usize, x: usize) -> usize {
        let px = self.pixel(y, x);
        let mut best = 0;
        for (ch, &v) in px.iter().enumerate().skip(1) {
            if v > px[best] {
                best = ch;
            }
        }
        best
    }

    pub fn max_abs_diff(&self, other: &MapBuf) -> f32 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max)
    }
}

impl fmt::Debug for MapBuf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MapBuf({}x{}x{})", self.h, self.w, self.c)
    }
}

/// Per-object soft segmentation scores; channel 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub map: MapBuf,
    pub scale: Scale,
}

impl ProbabilityMap {
    pub fn new(map: MapBuf, scale: Scale) -> Self {
        ProbabilityMap { map, scale }
    }

    pub fn objects(&self) -> usize {
        self.map.channels().saturating_sub(1)
    }

    /// All values within [0, 1].
    pub fn in_range(&self) -> bool {
        self.map.data().iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Per-pixel channel sums within `tol` of 1.
    pub fn normalized(&self, tol: f32) -> bool {
        let c = self.map.channels();
        self.map
            .data()
            .chunks(c)
            .all(|px| (px.iter().sum::<f32>() - 1.0).abs() <= tol)
    }
}

/// Low-level appearance features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub map: MapBuf,
    pub scale: Scale,
}

impl FeatureMap {
    pub fn new(map: MapBuf, scale: Scale) -> Self {
        FeatureMap { map, scale }
    }

    pub fn finite(&self) -> bool {
        self.map.data().iter().all(|v| v.is_finite())
    }
}

/// Per-pixel propagation confidence, strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl ConfidenceMap {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }
}

/// H x W mask holding exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Reduce to `scale` resolution; a cell is set if any covered pixel is set.
    pub fn downscale_any(&self, scale: Scale) -> BinaryMask {
        if scale == Scale::Full {
            return self.clone();
        }
        let (hq, wq) = (scale.apply(self.h), scale.apply(self.w));
        let mut out = BinaryMask::zeros(hq, wq);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) != 0 {
                    out.set(y / 4, x / 4, 1);
                }
            }
        }
        let _ = (hq, wq);
        out
    }
}

/// H x W label image; 0 is background, k > 0 is object k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMask {
    pub fn zeros(h: usize, w: usize) -> Self {
        LabelMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Binary mask of pixels carrying `label`.
    pub fn binarize(&self, label: u8) -> BinaryMask {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| u8::from(v == label)).collect(),
        }
    }

    /// Nearest-cell label sampling at `scale` (cell centres).
    pub fn downscale(&self, scale: Scale) -> LabelMask {
        if scale == Scale::Full {
            return self.clone();
        }
        let (hq, wq) = (scale.apply(self.h), scale.apply(self.w));
        let mut out = LabelMask::zeros(hq, wq);
        for y in 0..hq {
            for x in 0..wq {
                let fy = scale.center(y, self.h);
                let fx = scale.center(x, self.w);
                out.set(y, x, self.get(fy, fx));
            }
        }
        out
    }

    /// Nearest-neighbour upsample back to full resolution.
    pub fn upscale(&self, scale: Scale, full_h: usize, full_w: usize) -> LabelMask {
        if scale == Scale::Full {
            return self.clone();
        }
        let mut out = LabelMask::zeros(full_h, full_w);
        for y in 0..full_h {
            for x in 0..full_w {
                out.set(y, x, self.get((y / 4).min(self.h - 1), (x / 4).min(self.w - 1)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_resolve_to_lowest_channel() {
        let m = MapBuf::from_vec(1, 1, 3, vec![0.5, 0.5, 0.2]);
        assert_eq!(m.argmax(0, 0), 0);
        let m = MapBuf::from_vec(1, 1, 3, vec![0.1, 0.7, 0.7]);
        assert_eq!(m.argmax(0, 0), 1);
    }

    #[test]
    fn quarter_scale_dims_round_up() {
        assert_eq!(Scale::Quarter.apply(64), 16);
        assert_eq!(Scale::Quarter.apply(10), 3);
        assert_eq!(Scale::Quarter.center(2, 10), 9); // clamped cell centre
    }

    #[test]
    fn label_mask_scale_round_trip_on_aligned_blocks() {
        // Blocks aligned to the 4x4 grid survive downscale -> upscale.
        let mut full = LabelMask::zeros(16, 16);
        for y in 4..12 {
            for x in 8..16 {
                full.set(y, x, 2);
            }
        }
        let down = full.downscale(Scale::Quarter);
        let up = down.upscale(Scale::Quarter, 16, 16);
        assert_eq!(up, full);
    }

    #[test]
    fn binary_downscale_any_sets_cell_on_single_pixel() {
        let mut m = BinaryMask::zeros(8, 8);
        m.set(5, 6, 1);
        let d = m.downscale_any(Scale::Quarter);
        assert_eq!(d.get(1, 1), 1);
        assert_eq!(d.count_ones(), 1);
    }
}
