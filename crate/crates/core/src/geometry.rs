//! Axis-aligned boxes in pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Box with `x_min < x_max`, `y_min < y_max` and non-negative corners.
///
/// Coordinates are continuous; pixel `(x, y)` covers `[x, x+1) x [y, y+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let c = [self.x_min, self.y_min, self.x_max, self.y_max];
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite box coordinate in {self:?}")));
        }
        if self.x_min < T::zero() || self.y_min < T::zero() {
            return Err(Error::input(format!("negative box coordinate in {self:?}")));
        }
        if !(self.x_min < self.x_max) || !(self.y_min < self.y_max) {
            return Err(Error::input(format!(
                "box requires x_min < x_max and y_min < y_max, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    /// Overlap area with `other`; zero when disjoint or touching.
    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > T::zero() && h > T::zero() {
            w * h
        } else {
            T::zero()
        }
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.intersection_area(other) > T::zero()
    }

    /// Intersection over union.
    pub fn iou(&self, other: &Self) -> T {
        let inter = self.intersection_area(other);
        if inter == T::zero() {
            return T::zero();
        }
        let union = self.area() + other.area() - inter;
        (inter / union).min(T::one())
    }

    /// Expands by `fraction` of the width/height on every side, then clamps
    /// to `[0, width] x [0, height]`. `None` when nothing of the box remains.
    pub fn pad_and_clamp(&self, fraction: T, width: T, height: T) -> Option<Self> {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        let b = BBox {
            x_min: (self.x_min - dx).max(T::zero()),
            y_min: (self.y_min - dy).max(T::zero()),
            x_max: (self.x_max + dx).min(width),
            y_max: (self.y_max + dy).min(height),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            x_min: U::lit(self.x_min.as_f64()),
            y_min: U::lit(self.y_min.as_f64()),
            x_max: U::lit(self.x_max.as_f64()),
            y_max: U::lit(self.y_max.as_f64()),
        }
    }
}
