//! Box arithmetic, IOU, context scaling and the equal-size IOU level set.
//!
//! All boxes live in continuous pixel coordinates `(x, y, w, h)` with the
//! origin at the top-left of the image. Nothing here snaps to integers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box: top-left corner plus positive width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Precondition(format!(
                "box coordinates must be finite, got ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Precondition(format!(
                "box width and height must be positive, got {w}x{h}"
            )));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn is_within(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from([x, y, w, h]: [f64; 4]) -> Result<Self> {
        BBox::new(x, y, w, h)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union; `0.0` for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).min(1.0)
}

/// Rescales `b` by `s` about its center and clips the result to the image.
pub fn scale_box(b: &BBox, s: f64, width: f64, height: f64) -> Result<BBox> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Precondition(format!(
            "scale factor must be positive, got {s}"
        )));
    }
    // x + (1 - s) w / 2 keeps s = 1 bit-exact.
    let (x, w) = clip_span(b.x + (1.0 - s) * b.w / 2.0, s * b.w, width);
    let (y, h) = clip_span(b.y + (1.0 - s) * b.h / 2.0, s * b.h, height);
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::DegenerateCrop(format!(
            "box {:?} scaled by {s} has no area inside {width}x{height}",
            b.to_array()
        )));
    }
    Ok(BBox { x, y, w, h })
}

fn clip_span(start: f64, len: f64, limit: f64) -> (f64, f64) {
    let end = start + len;
    if start >= 0.0 && end <= limit {
        return (start, len);
    }
    let lo = start.max(0.0);
    (lo, end.min(limit) - lo)
}

/// Which target corner the sliding box overlaps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CornerCurve {
    /// Overlaps the target's top-left corner.
    P,
    /// Overlaps the top-right corner.
    Q,
    /// Overlaps the bottom-right corner.
    R,
    /// Overlaps the bottom-left corner.
    S,
}

impl CornerCurve {
    pub const ALL: [CornerCurve; 4] = [
        CornerCurve::P,
        CornerCurve::Q,
        CornerCurve::R,
        CornerCurve::S,
    ];

    /// Signs applied to the horizontal and vertical shift `(alpha - 1) U`, `(beta - 1) V`.
    fn signs(self) -> (f64, f64) {
        match self {
            CornerCurve::P => (1.0, 1.0),
            CornerCurve::Q => (-1.0, 1.0),
            CornerCurve::R => (-1.0, -1.0),
            CornerCurve::S => (1.0, -1.0),
        }
    }
}

/// Overlap product `alpha * beta` that yields IOU `gamma` for equal-size boxes.
pub fn overlap_product(gamma: f64) -> f64 {
    2.0 * gamma / (1.0 + gamma)
}

/// A point on the level set: overlap fractions `alpha` (width) and `beta` (height).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSetParam {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LevelSetParam {
    pub fn new(gamma: f64, alpha: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let k = overlap_product(gamma);
        if !(alpha >= k && alpha <= 1.0) {
            return Err(Error::Precondition(format!(
                "alpha must lie in [{k}, 1] for gamma {gamma}, got {alpha}"
            )));
        }
        Ok(LevelSetParam {
            gamma,
            alpha,
            beta: k / alpha,
        })
    }

    /// The point where both overlap fractions are equal.
    pub fn symmetric(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let k = overlap_product(gamma);
        let alpha = k.sqrt();
        Ok(LevelSetParam {
            gamma,
            alpha,
            beta: k / alpha,
        })
    }

    /// Overlap width and height for a target of size `w x h`.
    pub fn overlap_sides(&self, w: f64, h: f64) -> (f64, f64) {
        (self.alpha * w, self.beta * h)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )))
    }
}

/// Box of the target's size whose IOU with `target` is exactly `gamma`.
pub fn level_set_box(target: &BBox, gamma: f64, curve: CornerCurve, alpha: f64) -> Result<BBox> {
    let param = LevelSetParam::new(gamma, alpha)?;
    Ok(level_set_box_at(target, &param, curve))
}

fn level_set_box_at(target: &BBox, param: &LevelSetParam, curve: CornerCurve) -> BBox {
    let (sx, sy) = curve.signs();
    BBox {
        x: target.x + sx * (param.alpha - 1.0) * target.w,
        y: target.y + sy * (param.beta - 1.0) * target.h,
        w: target.w,
        h: target.h,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSetSample {
    pub bbox: BBox,
    /// The IOU level the box was drawn on.
    pub gamma: f64,
    pub curve: CornerCurve,
    pub alpha: f64,
}

/// Draws `n` boxes on level sets with IOU in `[gamma, 1]`.
///
/// Each sample picks its level uniformly in `[gamma, 1]`, a corner curve
/// uniformly, and `alpha` uniformly over the admissible range. Boxes are not
/// clipped to any image.
pub fn sample_level_set(
    target: &BBox,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<LevelSetSample>> {
    check_gamma(gamma)?;
    if n == 0 {
        return Err(Error::Precondition(
            "sample count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let level = rng.gen_range(gamma..=1.0);
            let curve = CornerCurve::ALL[rng.gen_range(0..4)];
            let k = overlap_product(level);
            let alpha = rng.gen_range(k..=1.0);
            let param = LevelSetParam {
                gamma: level,
                alpha,
                beta: k / alpha,
            };
            LevelSetSample {
                bbox: level_set_box_at(target, &param, curve),
                gamma: level,
                curve,
                alpha,
            }
        })
        .collect();
    Ok(samples)
}

pub fn sample_boxes_min_iou(target: &BBox, gamma: f64, n: usize, seed: u64) -> Result<Vec<BBox>> {
    Ok(sample_level_set(target, gamma, n, seed)?
        .into_iter()
        .map(|s| s.bbox)
        .collect())
}
