//! Axis-aligned rectangle arithmetic.
//!
//! Every reward term and the evaluation metric reduce to areas of overlap
//! between axis-aligned rectangles, so everything here is exact closed-form
//! arithmetic on centers and extents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or displacement in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Axis-aligned rectangle stored as center and size.
///
/// Sizes are strictly positive and every field is finite; this is checked in
/// [`Rect::new`] so union areas are never zero downstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RectRepr", into = "RectRepr")]
pub struct Rect {
    center: Vec2,
    width: f64,
    height: f64,
}

/// On-disk form: `{cx, cy, w, h}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RectRepr {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RectRepr> for Rect {
    type Error = Error;
    fn try_from(r: RectRepr) -> Result<Self> {
        Rect::new(Vec2::new(r.cx, r.cy), r.w, r.h)
    }
}

impl From<Rect> for RectRepr {
    fn from(r: Rect) -> Self {
        RectRepr { cx: r.center.x, cy: r.center.y, w: r.width, h: r.height }
    }
}

impl Rect {
    pub fn new(center: Vec2, width: f64, height: f64) -> Result<Self> {
        if !center.is_finite() || !width.is_finite() || !height.is_finite() {
            return Err(Error::InvalidRect(format!(
                "non-finite rect: center ({}, {}), size {} x {}",
                center.x, center.y, width, height
            )));
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::InvalidRect(format!(
                "rect size must be positive, got {width} x {height}"
            )));
        }
        Ok(Self { center, width, height })
    }

    /// Builds a rect from its min and max corners.
    pub fn from_extents(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        Rect::new(
            Vec2::new(0.5 * (min_x + max_x), 0.5 * (min_y + max_y)),
            max_x - min_x,
            max_y - min_y,
        )
    }

    pub fn center(&self) -> Vec2 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn min_x(&self) -> f64 {
        self.center.x - 0.5 * self.width
    }

    pub fn max_x(&self) -> f64 {
        self.center.x + 0.5 * self.width
    }

    pub fn min_y(&self) -> f64 {
        self.center.y - 0.5 * self.height
    }

    pub fn max_y(&self) -> f64 {
        self.center.y + 0.5 * self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Same size, new center.
    pub fn with_center(&self, center: Vec2) -> Rect {
        Rect { center, ..*self }
    }

    pub fn translate(&self, d: Vec2) -> Rect {
        self.with_center(self.center + d)
    }

    /// True when `p` lies in the closed rectangle.
    pub fn contains_point(&self, p: Vec2) -> bool {
        p.x >= self.min_x() && p.x <= self.max_x() && p.y >= self.min_y() && p.y <= self.max_y()
    }

    /// True when `self`'s extents lie within `outer`'s extents.
    pub fn is_within(&self, outer: &Rect) -> bool {
        self.min_x() >= outer.min_x()
            && self.max_x() <= outer.max_x()
            && self.min_y() >= outer.min_y()
            && self.max_y() <= outer.max_y()
    }
}

pub fn area(r: &Rect) -> f64 {
    r.area()
}

fn overlap_1d(a_min: f64, a_max: f64, b_min: f64, b_max: f64) -> f64 {
    (a_max.min(b_max) - a_min.max(b_min)).max(0.0)
}

pub fn intersection_area(a: &Rect, b: &Rect) -> f64 {
    let ix = overlap_1d(a.min_x(), a.max_x(), b.min_x(), b.max_x());
    let iy = overlap_1d(a.min_y(), a.max_y(), b.min_y(), b.max_y());
    ix * iy
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of `inner`'s area lying inside `outer`.
pub fn containment(inner: &Rect, outer: &Rect) -> f64 {
    if inner.is_within(outer) {
        return 1.0;
    }
    (intersection_area(inner, outer) / inner.area()).clamp(0.0, 1.0)
}

pub fn translate(r: &Rect, d: Vec2) -> Rect {
    r.translate(d)
}
