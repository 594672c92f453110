//! Color-blob body-part detector for the synthetic proxy data.
//!
//! Pixels within `tolerance` (per channel) of a part proxy color are grouped
//! into 4-connected components; each component becomes one detection.

use image::RgbImage;

use super::BodyPartDetector;
use crate::datakit::manifest::BodyPart;
use crate::datakit::synth::part_color;
use crate::error::{Error, Result};
use crate::evalkit::Detection;
use crate::geometry::BBox;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerPartDetector {
    pub tolerance: u8,
    /// Components smaller than this many pixels are dropped.
    pub min_pixels: usize,
}

impl Default for MarkerPartDetector {
    fn default() -> Self {
        MarkerPartDetector {
            tolerance: 40,
            min_pixels: 2,
        }
    }
}

impl MarkerPartDetector {
    fn classify_pixel(&self, px: [u8; 3]) -> Option<(BodyPart, u8)> {
        BodyPart::ALL
            .iter()
            .map(|&p| {
                let c = part_color(p);
                let d = (0..3).map(|i| px[i].abs_diff(c[i])).max().unwrap_or(0);
                (p, d)
            })
            .filter(|(_, d)| *d <= self.tolerance)
            .min_by_key(|(_, d)| *d)
    }
}

impl<T: Scalar> BodyPartDetector<T> for MarkerPartDetector {
    fn detect_parts(&self, image: &RgbImage) -> Result<Vec<Detection<T, BodyPart>>> {
        let (w, h) = image.dimensions();
        let (wu, hu) = (w as usize, h as usize);
        let cls: Vec<Option<(BodyPart, u8)>> = image.pixels().map(|p| self.classify_pixel(p.0)).collect();
        let mut seen = vec![false; cls.len()];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..cls.len() {
            let Some((part, _)) = cls[start] else { continue };
            if seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let (mut count, mut dist_sum) = (0usize, 0u64);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % wu, i / wu);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                count += 1;
                dist_sum += cls[i].map_or(0, |(_, d)| d as u64);
                let mut push = |j: usize| {
                    if !seen[j] && matches!(cls[j], Some((p, _)) if p == part) {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(i - 1);
                }
                if x + 1 < wu {
                    push(i + 1);
                }
                if y > 0 {
                    push(i - wu);
                }
                if y + 1 < hu {
                    push(i + wu);
                }
            }
            if count < self.min_pixels {
                continue;
            }
            let area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
            let fill = count as f64 / area;
            let closeness = 1.0 - dist_sum as f64 / (count as f64 * 255.0);
            let bbox = BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64)
                .map_err(|_| Error::input("degenerate component"))?;
            out.push(Detection::new(bbox.cast(), part, T::lit(fill * closeness))?);
        }
        Ok(out)
    }
}
