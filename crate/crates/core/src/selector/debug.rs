//! Visual dump of a selection: chosen indices as JSON and a two-row image
//! strip (RGB crops on top, delta frames below, mid-grey meaning zero).

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Axis;
use serde_json::json;

use super::Selection;

pub fn dump_selection(sel: &Selection, dir: &Path, stem: &str) -> std::io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json_path = dir.join(format!("{stem}_selection.json"));
    let doc = json!({
        "local": sel.local,
        "global": sel.global,
        "timestamps": sel.rgb.timestamps,
    });
    std::fs::write(&json_path, serde_json::to_string_pretty(&doc)? + "\n")?;

    let n = sel.rgb.len();
    let (w, h) = sel.rgb.frames.first().map_or((1, 1), |m| m.pixels.dimensions());
    let mut strip = RgbImage::from_pixel(w * n as u32, h * 2, Rgb([0, 0, 0]));
    for (k, m) in sel.rgb.frames.iter().enumerate() {
        image::imageops::replace(&mut strip, &m.pixels, (k as u32 * w) as i64, 0);
    }
    for t in 0..sel.delta.len() {
        let d = sel.delta.frames.index_axis(Axis(0), t);
        for ((y, x, c), &v) in d.indexed_iter() {
            let p = strip.get_pixel_mut(t as u32 * w + x as u32, h + y as u32);
            p[c] = ((v as i32 + 255) / 2) as u8;
        }
    }
    let png_path = dir.join(format!("{stem}_strip.png"));
    strip
        .save(&png_path)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok((json_path, png_path))
}
