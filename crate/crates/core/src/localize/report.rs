//! Report files: a per-frame table and a probability timeline image.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::{LocalizeError, SegmentReport};

pub const HEADER: &str = "time_s\tframe\tprob_fake\tpred\ttruth\tflag";

/// One parsed table row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub time_s: f64,
    pub frame: usize,
    pub prob_fake: f64,
    pub pred: bool,
    pub truth: Option<bool>,
    pub flag: bool,
}

/// Tab-separated table with one row per frame. Probabilities are written in
/// shortest round-trip form so parsing recovers them exactly.
pub fn report_text(report: &SegmentReport) -> String {
    let flags = report.frame_flags();
    let mut out = String::from(HEADER);
    out.push('\n');
    for (i, &p) in report.per_frame_prob.iter().enumerate() {
        let truth = match &report.truth_mask {
            Some(t) => if t[i] { "1" } else { "0" },
            None => "-",
        };
        let _ = writeln!(
            out,
            "{:.4}\t{i}\t{p:?}\t{}\t{truth}\t{}",
            i as f64 / report.fps,
            report.predicted_mask[i] as u8,
            flags[i] as u8
        );
    }
    out
}

fn parse_bit(s: &str, line: usize) -> Result<bool, LocalizeError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(LocalizeError::Parse {
            line,
            reason: format!("expected 0 or 1, got {other:?}"),
        }),
    }
}

pub fn parse_report_text(text: &str) -> Result<Vec<ReportRow>, LocalizeError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => {
            return Err(LocalizeError::Parse {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 6 {
                return Err(LocalizeError::Parse {
                    line,
                    reason: format!("expected 6 fields, got {}", f.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|e| LocalizeError::Parse {
                    line,
                    reason: format!("{s:?}: {e}"),
                })
            };
            Ok(ReportRow {
                time_s: num(f[0])?,
                frame: f[1].parse().map_err(|e| LocalizeError::Parse {
                    line,
                    reason: format!("{:?}: {e}", f[1]),
                })?,
                prob_fake: num(f[2])?,
                pred: parse_bit(f[3], line)?,
                truth: if f[4] == "-" { None } else { Some(parse_bit(f[4], line)?) },
                flag: parse_bit(f[5], line)?,
            })
        })
        .collect()
}

const WIDTH: u32 = 800;
const HEIGHT: u32 = 240;
const LEFT: u32 = 40;
const RIGHT: u32 = 780;
const TOP: u32 = 20;
const BOTTOM: u32 = 220;

fn y_of(p: f64) -> u32 {
    let span = (BOTTOM - TOP) as f64;
    BOTTOM - (p.clamp(0.0, 1.0) * span).round() as u32
}

/// Probability-versus-time plot: ground-truth shading (red fake, green
/// real), a dashed threshold line and the per-frame probability in blue.
/// Inherited segments are marked with a grey band along the bottom.
pub fn render_timeline(report: &SegmentReport) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let n = report.per_frame_prob.len().max(1);
    let frame_at = |x: u32| ((x - LEFT) as usize * n / (RIGHT - LEFT) as usize).min(n - 1);
    let flags = report.frame_flags();
    for x in LEFT..RIGHT {
        let f = frame_at(x);
        if let Some(t) = &report.truth_mask {
            let shade = if t[f] { Rgb([250, 215, 215]) } else { Rgb([215, 240, 215]) };
            for y in TOP..BOTTOM {
                img.put_pixel(x, y, shade);
            }
        }
        if flags[f] {
            for y in BOTTOM - 6..BOTTOM {
                img.put_pixel(x, y, Rgb([170, 170, 170]));
            }
        }
    }
    let ty = y_of(report.threshold);
    for x in (LEFT..RIGHT).filter(|x| (x / 6) % 2 == 0) {
        img.put_pixel(x, ty, Rgb([90, 90, 90]));
    }
    for x in LEFT..=RIGHT {
        img.put_pixel(x, BOTTOM, Rgb([0, 0, 0]));
    }
    for y in TOP..=BOTTOM {
        img.put_pixel(LEFT, y, Rgb([0, 0, 0]));
    }
    let mut prev: Option<u32> = None;
    for x in LEFT + 1..RIGHT {
        let y = y_of(report.per_frame_prob[frame_at(x)]);
        let (lo, hi) = match prev {
            Some(p) => (p.min(y), p.max(y)),
            None => (y, y),
        };
        for yy in lo.saturating_sub(1)..=(hi + 1).min(HEIGHT - 1) {
            img.put_pixel(x, yy, Rgb([30, 60, 200]));
        }
        prev = Some(y);
    }
    img
}

fn stem(report: &SegmentReport) -> String {
    Path::new(&report.source)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "video".into())
}

/// Writes `<stem>_localization.tsv` and `<stem>_timeline.png` into `out_dir`.
pub fn emit_report(report: &SegmentReport, out_dir: &Path) -> Result<(PathBuf, PathBuf), LocalizeError> {
    let fail = |p: &Path, e: &dyn std::fmt::Display| LocalizeError::WriteFailure {
        path: p.display().to_string(),
        reason: e.to_string(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| fail(out_dir, &e))?;
    let stem = stem(report);
    let text_path = out_dir.join(format!("{stem}_localization.tsv"));
    std::fs::write(&text_path, report_text(report)).map_err(|e| fail(&text_path, &e))?;
    let png_path = out_dir.join(format!("{stem}_timeline.png"));
    render_timeline(report).save(&png_path).map_err(|e| fail(&png_path, &e))?;
    Ok((text_path, png_path))
}
