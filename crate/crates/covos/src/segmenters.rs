//! Reference base-segmenter implementations, so the pipeline runs end to
//! end without a neural network behind it.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use crate::features::{FeatureExtractor, GradientFeatures};
use crate::image::{self, RgbImage};
use crate::maps::{FeatureMap, LabelMask, MapBuf, ProbabilityMap, Scale};

#[derive(Debug, Error)]
pub enum SegmenterError {
    #[error("no ground-truth mask for display {display}")]
    MissingGroundTruth { display: u32 },
    #[error("mask for display {display} carries label {label} beyond the {objects} known objects")]
    LabelOutOfRange {
        display: u32,
        label: u8,
        objects: usize,
    },
    #[error("probability map for display {display} has wrong shape")]
    BadShape { display: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

/// The keyframe segmentation backend: yields a per-object probability map
/// and the low-level features of the frame. `observe` lets memory-style
/// models ingest selected keyframe results; the default ignores it.
pub trait BaseSegmenter {
    fn segment(
        &mut self,
        image: &RgbImage,
        display: u32,
    ) -> Result<(ProbabilityMap, FeatureMap), SegmenterError>;

    fn observe(&mut self, _display: u32, _pred: &ProbabilityMap) {}
}

/// Near-one-hot score on the true label so downstream odds stay finite
/// without clamping.
pub const ORACLE_EPSILON: f32 = 1e-3;

/// Turn a label mask into a near-one-hot probability map: `1 - eps` on the
/// true channel and `eps / objects` on each other channel.
pub fn near_one_hot(mask: &LabelMask, objects: usize, eps: f32) -> MapBuf {
    let channels = objects + 1;
    let off = eps / objects as f32;
    let mut map = MapBuf::zeros(mask.h, mask.w, channels);
    for y in 0..mask.h {
        for x in 0..mask.w {
            let label = mask.get(y, x) as usize;
            let px = map.pixel_mut(y, x);
            for (ch, v) in px.iter_mut().enumerate() {
                *v = if ch == label { 1.0 - eps } else { off };
            }
        }
    }
    map
}

/// Emits ground-truth-derived predictions: a stand-in for the full base
/// network at test scale.
pub struct OracleSegmenter {
    masks: BTreeMap<u32, LabelMask>,
    objects: usize,
    scale: Scale,
    features: GradientFeatures,
}

impl OracleSegmenter {
    pub fn new(masks: BTreeMap<u32, LabelMask>, objects: usize, scale: Scale) -> Self {
        OracleSegmenter {
            masks,
            objects,
            scale,
            features: GradientFeatures,
        }
    }

    /// Load every `mask_%05d.pgm` found in `dir`.
    pub fn from_dir(dir: &Path, objects: usize, scale: Scale) -> Result<Self, SegmenterError> {
        let mut masks = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(display) = name
                .strip_prefix("mask_")
                .and_then(|s| s.strip_suffix(".pgm"))
                .and_then(|s| s.parse::<u32>().ok())
            {
                masks.insert(display, image::read_pgm(&path)?);
            }
        }
        Ok(Self::new(masks, objects, scale))
    }
}

impl BaseSegmenter for OracleSegmenter {
    fn segment(
        &mut self,
        image: &RgbImage,
        display: u32,
    ) -> Result<(ProbabilityMap, FeatureMap), SegmenterError> {
        let mask = self
            .masks
            .get(&display)
            .ok_or(SegmenterError::MissingGroundTruth { display })?;
        let max = mask.max_label();
        if usize::from(max) > self.objects {
            return Err(SegmenterError::LabelOutOfRange {
                display,
                label: max,
                objects: self.objects,
            });
        }
        let scaled = mask.downscale(self.scale);
        let map = near_one_hot(&scaled, self.objects, ORACLE_EPSILON);
        let feats = self.features.extract(image, self.scale);
        Ok((ProbabilityMap::new(map, self.scale), feats))
    }
}

/// Constant-output segmenter with a configurable artificial latency, for
/// timing studies.
pub struct StubSegmenter {
    latency: Duration,
    mask: LabelMask,
    objects: usize,
    scale: Scale,
    features: GradientFeatures,
}

impl StubSegmenter {
    pub fn new(latency: Duration, mask: LabelMask, objects: usize, scale: Scale) -> Self {
        StubSegmenter {
            latency,
            mask,
            objects,
            scale,
            features: GradientFeatures,
        }
    }
}

impl BaseSegmenter for StubSegmenter {
    fn segment(
        &mut self,
        image: &RgbImage,
        _display: u32,
    ) -> Result<(ProbabilityMap, FeatureMap), SegmenterError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let scaled = self.mask.downscale(self.scale);
        let map = near_one_hot(&scaled, self.objects, ORACLE_EPSILON);
        let feats = self.features.extract(image, self.scale);
        Ok((ProbabilityMap::new(map, self.scale), feats))
    }
}

/// Feeds precomputed probability maps (e.g. exported from a real base
/// network) into the engine. Features still come from the default
/// extractor.
pub struct ExternalSegmenter {
    maps: BTreeMap<u32, MapBuf>,
    scale: Scale,
    features: GradientFeatures,
}

impl ExternalSegmenter {
    pub fn new(maps: BTreeMap<u32, MapBuf>, scale: Scale) -> Self {
        ExternalSegmenter {
            maps,
            scale,
            features: GradientFeatures,
        }
    }

    /// Load every `probs_%05d.cvpm` found in `dir`.
    pub fn from_dir(dir: &Path, scale: Scale) -> Result<Self, SegmenterError> {
        let mut maps = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(display) = name
                .strip_prefix("probs_")
                .and_then(|s| s.strip_suffix(".cvpm"))
                .and_then(|s| s.parse::<u32>().ok())
            {
                maps.insert(display, image::decode_probmap(&std::fs::read(&path)?)?);
            }
        }
        Ok(ExternalSegmenter {
            maps,
            scale,
            features: GradientFeatures,
        })
    }
}

impl BaseSegmenter for ExternalSegmenter {
    fn segment(
        &mut self,
        image: &RgbImage,
        display: u32,
    ) -> Result<(ProbabilityMap, FeatureMap), SegmenterError> {
        let map = self
            .maps
            .get(&display)
            .ok_or(SegmenterError::MissingGroundTruth { display })?;
        let expect_h = self.scale.apply(image.h);
        let expect_w = self.scale.apply(image.w);
        if map.height() != expect_h || map.width() != expect_w {
            return Err(SegmenterError::BadShape { display });
        }
        let feats = self.features.extract(image, self.scale);
        Ok((ProbabilityMap::new(map.clone(), self.scale), feats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(h: usize, w: usize, label: u8) -> LabelMask {
        let mut m = LabelMask::zeros(h, w);
        for y in 2..6 {
            for x in 2..6 {
                m.set(y, x, label);
            }
        }
        m
    }

    #[test]
    fn oracle_argmax_recovers_ground_truth() {
        let mask = square_mask(8, 8, 1);
        let mut oracle = OracleSegmenter::new(
            BTreeMap::from([(1u32, mask.clone())]),
            1,
            Scale::Full,
        );
        let img = RgbImage::new(8, 8);
        let (p, _) = oracle.segment(&img, 1).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(p.map.argmax(y, x) as u8, mask.get(y, x));
            }
        }
        assert!(p.in_range());
        assert!(p.normalized(1e-5));
    }

    #[test]
    fn oracle_is_deterministic_and_errors_on_missing_mask() {
        let mask = square_mask(8, 8, 1);
        let mut oracle =
            OracleSegmenter::new(BTreeMap::from([(1u32, mask)]), 1, Scale::Quarter);
        let img = RgbImage::new(8, 8);
        let a = oracle.segment(&img, 1).unwrap();
        let b = oracle.segment(&img, 1).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(matches!(
            oracle.segment(&img, 2),
            Err(SegmenterError::MissingGroundTruth { display: 2 })
        ));
    }

    #[test]
    fn near_one_hot_sums_to_one() {
        let mask = square_mask(8, 8, 2);
        let map = near_one_hot(&mask, 2, ORACLE_EPSILON);
        for px in map.data().chunks(3) {
            let sum: f32 = px.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
}
