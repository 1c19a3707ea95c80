//! Places a 68-point landmark set from three boxes: the face, the outer lip
//! contour and (when the mouth is open) the inner lip opening.

use std::f64::consts::PI;

use super::{LandmarkFrame, Point, NUM_LANDMARKS};

/// Inclusive pixel-index bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelBox {
    pub fn centre(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }

    pub fn half_extent(&self) -> (f64, f64) {
        ((self.x1 - self.x0) as f64 / 2.0, (self.y1 - self.y0) as f64 / 2.0)
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }
}

/// Inner-lip half-width of a closed mouth, as a fraction of the outer half-width.
pub const CLOSED_INNER_WIDTH: f64 = 0.65;

fn on_ellipse(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Point {
    // y grows downwards, so positive angles sit above the centre
    Point::new(cx + a * angle.cos(), cy - b * angle.sin())
}

pub fn landmarks_from_boxes(
    face: PixelBox,
    outer: PixelBox,
    inner: Option<PixelBox>,
    frame_index: usize,
) -> LandmarkFrame {
    let mut pts = Vec::with_capacity(NUM_LANDMARKS);
    let (fcx, fcy) = face.centre();
    let (fa, fb) = face.half_extent();
    let (fw, fh) = (2.0 * fa, 2.0 * fb);
    let fy0 = face.y0 as f64;

    // 1-17: jaw line, left temple round the chin to the right temple
    for k in 0..17 {
        let angle = PI + k as f64 * PI / 16.0;
        pts.push(on_ellipse(fcx, fcy, fa, fb, angle));
    }
    // 18-27: brows
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let t = k as f64 / 4.0;
            let x = if side < 0.0 {
                fcx - fw * (0.38 - 0.24 * t)
            } else {
                fcx + fw * (0.14 + 0.24 * t)
            };
            let lift = 0.03 * (1.0 - (2.0 * t - 1.0).powi(2));
            pts.push(Point::new(x, fy0 + (0.30 - lift) * fh));
        }
    }
    // 28-31: nose bridge
    for k in 0..4 {
        pts.push(Point::new(fcx, fy0 + (0.38 + 0.06 * k as f64) * fh));
    }
    // 32-36: nostrils
    for k in 0..5 {
        let off = (k as f64 - 2.0) * 0.05 * fw;
        pts.push(Point::new(fcx + off, fy0 + 0.62 * fh));
    }
    // 37-48: eyes, six points each
    for side in [-1.0, 1.0] {
        let (ex, ey) = (fcx + side * 0.2 * fw, fy0 + 0.40 * fh);
        for k in 0..6 {
            let angle = PI - k as f64 * PI / 3.0;
            pts.push(on_ellipse(ex, ey, 0.08 * fw, 0.03 * fh, angle));
        }
    }
    // 49-60: outer lip, left corner clockwise over the top
    let (ocx, ocy) = outer.centre();
    let (oa, ob) = outer.half_extent();
    for k in 0..12 {
        let angle = PI - k as f64 * PI / 6.0;
        pts.push(on_ellipse(ocx, ocy, oa, ob, angle));
    }
    // 61-68: inner lip
    let (icx, icy, ia, ib) = match inner {
        Some(b) => {
            let (cx, cy) = b.centre();
            let (a, h) = b.half_extent();
            (cx, cy, a, h)
        }
        None => (ocx, ocy, CLOSED_INNER_WIDTH * oa, 0.0),
    };
    for k in 0..8 {
        let angle = PI - k as f64 * PI / 4.0;
        pts.push(on_ellipse(icx, icy, ia, ib, angle));
    }
    LandmarkFrame::new(pts, 1.0, frame_index).expect("template emits 68 points")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{openness, OUTER_LIP};

    const FACE: PixelBox = PixelBox { x0: 28, y0: 4, x1: 132, y1: 116 };

    #[test]
    fn outer_lip_points_span_the_outer_box() {
        let outer = PixelBox { x0: 54, y0: 78, x1: 106, y1: 98 };
        let lm = landmarks_from_boxes(FACE, outer, None, 0);
        assert_eq!(lm.bounds(OUTER_LIP), (54.0, 78.0, 106.0, 98.0));
        assert_eq!(lm.point(49), Point::new(54.0, 88.0));
        assert_eq!(lm.point(55), Point::new(106.0, 88.0));
    }

    #[test]
    fn inner_box_drives_openness() {
        let outer = PixelBox { x0: 54, y0: 76, x1: 106, y1: 100 };
        let inner = PixelBox { x0: 63, y0: 82, x1: 97, y1: 94 };
        let lm = landmarks_from_boxes(FACE, outer, Some(inner), 0);
        let o = openness(&lm).unwrap();
        assert!((o.gap - 12.0).abs() < 1e-12);
        assert!((o.width - 34.0).abs() < 1e-12);

        let closed = landmarks_from_boxes(FACE, outer, None, 0);
        assert_eq!(openness(&closed).unwrap().gap, 0.0);
    }

    #[test]
    fn all_points_inside_face_box() {
        let outer = PixelBox { x0: 54, y0: 78, x1: 106, y1: 98 };
        let lm = landmarks_from_boxes(FACE, outer, None, 0);
        for p in lm.points() {
            assert!(p.x >= 28.0 - 1e-9 && p.x <= 132.0 + 1e-9);
            assert!(p.y >= 4.0 - 1e-9 && p.y <= 116.0 + 1e-9);
        }
    }
}
