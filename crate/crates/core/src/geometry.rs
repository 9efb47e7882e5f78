//! Axis-aligned bounding boxes in pixel coordinates.

use crate::scalar::Scalar;

/// A detection box stored as top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<S = f64> {
    pub x_min: S,
    pub y_min: S,
    pub width: S,
    pub height: S,
}

impl<S: Scalar> BoundingBox<S> {
    pub fn new(x_min: S, y_min: S, width: S, height: S) -> Self {
        Self { x_min, y_min, width, height }
    }

    /// Center point of the box.
    pub fn centroid(&self) -> (S, S) {
        let half = S::from_f64(0.5).unwrap();
        (self.x_min + self.width * half, self.y_min + self.height * half)
    }

    pub fn area(&self) -> S {
        self.width * self.height
    }

    pub fn x_max(&self) -> S {
        self.x_min + self.width
    }

    pub fn y_max(&self) -> S {
        self.y_min + self.height
    }

    /// Clip the box to the frame `[0, w] x [0, h]`. A box already inside the
    /// frame is returned unchanged. The result may be empty; callers decide
    /// whether an empty clipped box is an error.
    pub fn clamped(&self, frame_w: S, frame_h: S) -> Self {
        if self.x_min >= S::zero()
            && self.y_min >= S::zero()
            && self.x_max() <= frame_w
            && self.y_max() <= frame_h
        {
            return *self;
        }
        let x0 = self.x_min.max(S::zero()).min(frame_w);
        let y0 = self.y_min.max(S::zero()).min(frame_h);
        let x1 = self.x_max().max(S::zero()).min(frame_w);
        let y1 = self.y_max().max(S::zero()).min(frame_h);
        Self { x_min: x0, y_min: y0, width: x1 - x0, height: y1 - y0 }
    }

    pub fn is_empty(&self) -> bool {
        self.width <= S::zero() || self.height <= S::zero()
    }

    /// Intersection-over-union with another box; 0 for disjoint boxes.
    ///
    /// All extents are derived from corner coordinates so that identical
    /// boxes give exactly 1 and the result never exceeds 1.
    pub fn iou(&self, other: &Self) -> S {
        let ix = (self.x_max().min(other.x_max()) - self.x_min.max(other.x_min)).max(S::zero());
        let iy = (self.y_max().min(other.y_max()) - self.y_min.max(other.y_min)).max(S::zero());
        let inter = ix * iy;
        if inter <= S::zero() {
            return S::zero();
        }
        let area_a = (self.x_max() - self.x_min) * (self.y_max() - self.y_min);
        let area_b = (other.x_max() - other.x_min) * (other.y_max() - other.y_min);
        let union = area_a + area_b - inter;
        inter / union
    }

    /// Euclidean distance between the two centroids.
    pub fn centroid_distance(&self, other: &Self) -> S {
        let (ax, ay) = self.centroid();
        let (bx, by) = other.centroid();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }
}
