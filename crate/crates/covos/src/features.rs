//! Low-level appearance features for confidence weighting and matching.

use crate::image::RgbImage;
use crate::maps::{FeatureMap, MapBuf, Scale};

/// Extracts per-pixel appearance features from a decoded frame.
pub trait FeatureExtractor: Sync {
    fn extract(&self, image: &RgbImage, scale: Scale) -> FeatureMap;
    fn channels(&self) -> usize;
}

/// Default 8-channel handcrafted features: box-downsampled RGB, the
/// absolute horizontal gradient of each color channel, the absolute
/// vertical luma gradient, and the luma itself. All values are scaled
/// to roughly [0, 1].
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientFeatures;

pub const FEATURE_CHANNELS: usize = 8;

impl GradientFeatures {
    fn downsample(image: &RgbImage, scale: Scale) -> MapBuf {
        let (h, w) = (scale.apply(image.h), scale.apply(image.w));
        let mut rgb = MapBuf::zeros(h, w, 3);
        match scale {
            Scale::Full => {
                for y in 0..h {
                    for x in 0..w {
                        for ch in 0..3 {
                            rgb.set(y, x, ch, f32::from(image.get(y, x, ch)) / 255.0);
                        }
                    }
                }
            }
            Scale::Quarter => {
                for y in 0..h {
                    let y0 = y * 4;
                    let y1 = (y0 + 4).min(image.h);
                    for x in 0..w {
                        let x0 = x * 4;
                        let x1 = (x0 + 4).min(image.w);
                        let count = ((y1 - y0) * (x1 - x0)) as f32;
                        let mut acc = [0.0f32; 3];
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                for ch in 0..3 {
                                    acc[ch] += f32::from(image.get(yy, xx, ch));
                                }
                            }
                        }
                        for ch in 0..3 {
                            rgb.set(y, x, ch, acc[ch] / count / 255.0);
                        }
                    }
                }
            }
        }
        rgb
    }
}

fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

impl FeatureExtractor for GradientFeatures {
    fn extract(&self, image: &RgbImage, scale: Scale) -> FeatureMap {
        let rgb = Self::downsample(image, scale);
        let (h, w) = (rgb.height(), rgb.width());
        let mut out = MapBuf::zeros(h, w, FEATURE_CHANNELS);
        for y in 0..h {
            for x in 0..w {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(h - 1);
                let here = rgb.pixel(y, x);
                let left = rgb.pixel(y, xm);
                let right = rgb.pixel(y, xp);
                let up = rgb.pixel(ym, x);
                let down = rgb.pixel(yp, x);
                let px = out.pixel_mut(y, x);
                px[0] = here[0];
                px[1] = here[1];
                px[2] = here[2];
                px[3] = 0.5 * (right[0] - left[0]).abs();
                px[4] = 0.5 * (right[1] - left[1]).abs();
                px[5] = 0.5 * (right[2] - left[2]).abs();
                px[6] = 0.5 * (luma(down) - luma(up)).abs();
                px[7] = luma(here);
            }
        }
        FeatureMap::new(out, scale)
    }

    fn channels(&self) -> usize {
        FEATURE_CHANNELS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if (x + y) % 2 == 0 { 200 } else { 40 };
                for ch in 0..3 {
                    img.set(y, x, ch, v);
                }
            }
        }
        img
    }

    #[test]
    fn dimensions_follow_scale() {
        let img = checker(10, 6);
        let f = GradientFeatures;
        let full = f.extract(&img, Scale::Full);
        assert_eq!((full.map.height(), full.map.width()), (6, 10));
        assert_eq!(full.map.channels(), FEATURE_CHANNELS);
        let quarter = f.extract(&img, Scale::Quarter);
        assert_eq!((quarter.map.height(), quarter.map.width()), (2, 3));
        assert!(full.finite() && quarter.finite());
    }

    #[test]
    fn deterministic_and_translation_faithful() {
        let img = checker(8, 8);
        let f = GradientFeatures;
        let a = f.extract(&img, Scale::Full);
        let b = f.extract(&img, Scale::Full);
        assert_eq!(a, b);
        // uniform image has zero gradients and constant luma
        let mut flat = RgbImage::new(4, 4);
        flat.data.fill(128);
        let feats = f.extract(&flat, Scale::Full);
        for y in 0..4 {
            for x in 0..4 {
                let px = feats.map.pixel(y, x);
                assert!(px[3..7].iter().all(|&g| g == 0.0));
                assert!((px[7] - 128.0 / 255.0).abs() < 1e-5);
            }
        }
    }
}
