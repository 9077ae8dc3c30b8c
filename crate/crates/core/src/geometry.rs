//! Boxes, points, masks and the similarity measures shared by every stage.
//!
//! Image coordinates have their origin at the top-left corner with `y` growing
//! downward. Direction logic in [`crate::motion`] depends on this.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned box stored as left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    from = "[T; 4]",
    into = "[T; 4]",
    bound(serialize = "T: Copy + Serialize", deserialize = "T: Copy + Deserialize<'de>")
)]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Copy> From<[T; 4]> for BBox<T> {
    fn from(v: [T; 4]) -> Self {
        Self { x: v[0], y: v[1], w: v[2], h: v[3] }
    }
}

impl<T: Copy> From<BBox<T>> for [T; 4] {
    fn from(b: BBox<T>) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl<T: Scalar> BBox<T> {
    /// Builds a box, rejecting non-finite coordinates and non-positive extents.
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self, GeometryError> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Result<Self, GeometryError> {
        let half = T::two();
        Self::new(cx - w / half, cy - h / half, w, h)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            return Err(GeometryError::InvalidGeometry(format!(
                "non-finite box ({}, {}, {}, {})",
                self.x, self.y, self.w, self.h
            )));
        }
        if self.w <= T::zero() || self.h <= T::zero() {
            return Err(GeometryError::InvalidGeometry(format!(
                "degenerate box with w = {}, h = {}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn center(&self) -> Point2<T> {
        let half = T::two();
        Point2::new(self.x + self.w / half, self.y + self.h / half)
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= T::zero() || ih <= T::zero() {
            T::zero()
        } else {
            iw * ih
        }
    }
}

/// Intersection over union of two boxes.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> Result<T, GeometryError> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// [`iou`] without validation, for boxes already known to be well formed.
#[inline]
pub fn iou_unchecked<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance<T: Scalar>(u: &[T], v: &[T]) -> Result<T, GeometryError> {
    if u.len() != v.len() {
        return Err(GeometryError::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in u.iter().zip(v) {
        dot = dot + a * b;
        nu = nu + a * a;
        nv = nv + b * b;
    }
    if nu <= T::zero() || nv <= T::zero() {
        return Err(GeometryError::InvalidInput("zero vector".into()));
    }
    let cos = dot / (nu.sqrt() * nv.sqrt());
    let d = T::one() - cos.max(-T::one()).min(T::one());
    Ok(d)
}

/// Binary mask as a set of integer pixel coordinates inside a `width x height` grid.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BitMask {
    width: u32,
    height: u32,
    pixels: BTreeSet<(u32, u32)>,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, pixels: BTreeSet::new() }
    }

    pub fn from_pixels<I>(width: u32, height: u32, pixels: I) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut m = Self::new(width, height);
        for (x, y) in pixels {
            m.set(x, y)?;
        }
        Ok(m)
    }

    pub fn set(&mut self, x: u32, y: u32) -> Result<(), GeometryError> {
        if x >= self.width || y >= self.height {
            return Err(GeometryError::InvalidGeometry(format!(
                "pixel ({x}, {y}) outside {}x{} mask",
                self.width, self.height
            )));
        }
        self.pixels.insert((x, y));
        Ok(())
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.pixels.contains(&(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let mut v: Vec<_> = self.pixels.iter().copied().collect();
        v.sort_by_key(|&(x, y)| (y, x));
        v.into_iter()
    }
}
