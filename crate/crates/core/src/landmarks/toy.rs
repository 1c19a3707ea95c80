//! Deterministic landmark provider for synthetic toy frames.
//!
//! Toy faces are flat-coloured ellipses: skin face, red lips, a dark mouth
//! opening. The provider segments those colours, takes the largest connected
//! region of each class and places the 68-point template from the resulting
//! boxes. On frames rendered by the toy generator it reproduces the
//! generator's landmarks exactly, and it is equivariant to integer shifts.

use std::collections::VecDeque;

use image::{Rgb, RgbImage};

use super::template::{landmarks_from_boxes, PixelBox};
use super::{LandmarkFrame, LandmarkProvider};

/// Palette shared by the toy renderer and the toy provider.
pub struct ToyColors;

impl ToyColors {
    pub const BACKGROUND: [u8; 3] = [60, 90, 160];
    pub const SKIN: [u8; 3] = [205, 155, 125];
    pub const NOSE: [u8; 3] = [190, 140, 112];
    pub const LIP: [u8; 3] = [200, 60, 80];
    pub const CAVITY: [u8; 3] = [45, 15, 20];
    pub const SCLERA: [u8; 3] = [235, 235, 230];
    pub const IRIS: [u8; 3] = [60, 95, 150];
    pub const BROW: [u8; 3] = [115, 85, 60];

    pub fn is_skin(p: &Rgb<u8>) -> bool {
        let [r, g, b] = p.0.map(i32::from);
        r >= 150 && (110..=190).contains(&g) && (20..=90).contains(&(r - g)) && b < g && b >= 80
    }

    pub fn is_lip(p: &Rgb<u8>) -> bool {
        let [r, g, _] = p.0.map(i32::from);
        r >= 130 && g <= 115 && r - g >= 70
    }

    pub fn is_cavity(p: &Rgb<u8>) -> bool {
        p.0.iter().all(|&c| c < 90)
    }
}

const MIN_FACE_PIXELS: usize = 100;
const MIN_LIP_PIXELS: usize = 20;

#[derive(Debug, Default, Clone, Copy)]
pub struct ToyProvider;

impl ToyProvider {
    pub fn new() -> Self {
        Self
    }
}

/// Largest 4-connected component of pixels satisfying `class` inside
/// `area`, as `(box, pixel count)`.
fn largest_component(
    frame: &RgbImage,
    area: PixelBox,
    class: impl Fn(&Rgb<u8>) -> bool,
) -> Option<(PixelBox, usize)> {
    let (fw, fh) = (frame.width() as i64, frame.height() as i64);
    let x0 = area.x0.max(0);
    let y0 = area.y0.max(0);
    let x1 = area.x1.min(fw - 1);
    let y1 = area.y1.min(fh - 1);
    if x1 < x0 || y1 < y0 {
        return None;
    }
    let w = (x1 - x0 + 1) as usize;
    let h = (y1 - y0 + 1) as usize;
    let mut member = vec![false; w * h];
    for yy in 0..h {
        for xx in 0..w {
            member[yy * w + xx] = class(frame.get_pixel((x0 + xx as i64) as u32, (y0 + yy as i64) as u32));
        }
    }
    let mut seen = vec![false; w * h];
    let mut best: Option<(PixelBox, usize)> = None;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !member[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut count = 0;
        let mut bx = PixelBox {
            x0: i64::MAX,
            y0: i64::MAX,
            x1: i64::MIN,
            y1: i64::MIN,
        };
        while let Some(i) = queue.pop_front() {
            count += 1;
            let (xx, yy) = (i % w, i / w);
            bx.x0 = bx.x0.min(xx as i64);
            bx.x1 = bx.x1.max(xx as i64);
            bx.y0 = bx.y0.min(yy as i64);
            bx.y1 = bx.y1.max(yy as i64);
            let mut visit = |j: usize| {
                if member[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if xx > 0 {
                visit(i - 1);
            }
            if xx + 1 < w {
                visit(i + 1);
            }
            if yy > 0 {
                visit(i - w);
            }
            if yy + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((bx.translated(x0, y0), count));
        }
    }
    best
}

impl LandmarkProvider for ToyProvider {
    fn detect(&mut self, frame: &RgbImage, frame_index: usize) -> Option<LandmarkFrame> {
        if frame.width() == 0 || frame.height() == 0 {
            return None;
        }
        let whole = PixelBox {
            x0: 0,
            y0: 0,
            x1: frame.width() as i64 - 1,
            y1: frame.height() as i64 - 1,
        };
        let (face, face_px) = largest_component(frame, whole, ToyColors::is_skin)?;
        if face_px < MIN_FACE_PIXELS {
            return None;
        }
        let (outer, lip_px) = largest_component(frame, face, ToyColors::is_lip)?;
        if lip_px < MIN_LIP_PIXELS || outer.x1 == outer.x0 || outer.y1 == outer.y0 {
            return None;
        }
        let inner = largest_component(frame, outer, ToyColors::is_cavity).map(|(b, _)| b);
        Some(landmarks_from_boxes(face, outer, inner, frame_index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_frame_has_no_face() {
        let mut p = ToyProvider::new();
        assert!(p.detect(&RgbImage::new(160, 120), 0).is_none());
        let bg = RgbImage::from_pixel(160, 120, Rgb(ToyColors::BACKGROUND));
        assert!(p.detect(&bg, 0).is_none());
    }

    #[test]
    fn palette_is_separable() {
        let classes = |c: [u8; 3]| {
            let p = Rgb(c);
            (ToyColors::is_skin(&p), ToyColors::is_lip(&p), ToyColors::is_cavity(&p))
        };
        assert_eq!(classes(ToyColors::SKIN), (true, false, false));
        assert_eq!(classes(ToyColors::NOSE), (true, false, false));
        assert_eq!(classes(ToyColors::LIP), (false, true, false));
        assert_eq!(classes(ToyColors::CAVITY), (false, false, true));
        for c in [ToyColors::BACKGROUND, ToyColors::SCLERA, ToyColors::IRIS, ToyColors::BROW] {
            assert_eq!(classes(c), (false, false, false), "{c:?}");
        }
    }
}
