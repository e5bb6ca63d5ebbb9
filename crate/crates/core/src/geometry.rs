//! Axis-aligned boxes and the kernels built on them: area, IoU, the
//! center/log-size delta parameterization, and clipping to a frame.
//!
//! Coordinates are continuous pixels, x to the right and y down. Width is
//! `xmax - xmin` with no inclusive `+1`; the VOC file convention is handled
//! at the IO boundary only.

use serde::{Deserialize, Serialize};

use crate::Error;

/// Largest exponent accepted by [`decode`] for the size terms.
///
/// `exp(709.78)` is the edge of the f64 range; anything past this would
/// produce an infinite box.
pub const MAX_LOG_SCALE: f64 = 709.0;

/// An axis-aligned rectangle with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self, Error> {
        BoundingBox::new(raw.xmin, raw.ymin, raw.xmax, raw.ymax)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox {
            xmin: b.xmin,
            ymin: b.ymin,
            xmax: b.xmax,
            ymax: b.ymax,
        }
    }
}

impl BoundingBox {
    /// Builds a box, rejecting non-finite coordinates and zero or negative
    /// extents.
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, Error> {
        if !(xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite()) {
            return Err(Error::InvalidBox("non-finite coordinate"));
        }
        if xmin >= xmax || ymin >= ymax {
            return Err(Error::InvalidBox("degenerate extent"));
        }
        Ok(BoundingBox {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    /// Builds a box from its center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, Error> {
        BoundingBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    pub fn ymin(&self) -> f64 {
        self.ymin
    }

    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.xmin + self.xmax),
            0.5 * (self.ymin + self.ymax),
        )
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        iou(self, other)
    }

    /// `(xmin, ymin, xmax, ymax)`
    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    /// True if the box lies within `[0, width] x [0, height]`.
    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.xmin >= 0.0 && self.ymin >= 0.0 && self.xmax <= width && self.ymax <= height
    }
}

/// Regression target mapping an anchor onto another box.
///
/// `dx`, `dy` are center offsets in units of the anchor's width and height;
/// `dw`, `dh` are natural-log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        BoxDelta { dx, dy, dw, dh }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxDelta::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

pub fn area(b: &BoundingBox) -> f64 {
    b.width() * b.height()
}

/// Intersection over union. Returns exactly `1.0` for identical boxes and
/// `0.0` for boxes that do not overlap.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    // distinct boxes never report a perfect overlap, even after rounding
    (inter / union).clamp(0.0, 1.0 - f64::EPSILON)
}

pub fn encode(anchor: &BoundingBox, target: &BoundingBox) -> BoxDelta {
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    BoxDelta {
        dx: (tcx - acx) / aw,
        dy: (tcy - acy) / ah,
        dw: libm::log(target.width() / aw),
        dh: libm::log(target.height() / ah),
    }
}

/// Inverse of [`encode`].
pub fn decode(anchor: &BoundingBox, d: &BoxDelta) -> Result<BoundingBox, Error> {
    if !d.is_finite() {
        return Err(Error::DeltaOverflow);
    }
    if d.dw > MAX_LOG_SCALE || d.dh > MAX_LOG_SCALE {
        return Err(Error::DeltaOverflow);
    }
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + d.dx * aw;
    let cy = acy + d.dy * ah;
    let w = aw * libm::exp(d.dw);
    let h = ah * libm::exp(d.dh);
    if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
        return Err(Error::DeltaOverflow);
    }
    BoundingBox::from_center(cx, cy, w, h).map_err(|_| Error::DeltaOverflow)
}

/// Clamps the box into `[0, width] x [0, height]`; `None` if nothing with
/// positive area remains.
pub fn clip(b: &BoundingBox, width: f64, height: f64) -> Option<BoundingBox> {
    let xmin = b.xmin.clamp(0.0, width);
    let ymin = b.ymin.clamp(0.0, height);
    let xmax = b.xmax.clamp(0.0, width);
    let ymax = b.ymax.clamp(0.0, height);
    BoundingBox::new(xmin, ymin, xmax, ymax).ok()
}
