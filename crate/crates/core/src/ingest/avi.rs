//! Minimal RIFF/AVI container with a single video stream.
//!
//! Three codecs are supported: uncompressed 24-bit BGR (`BI_RGB`), PNG
//! frames (`MPNG`, lossless) and Motion JPEG (`MJPG`, lossy with a quality
//! knob). All three play in common desktop players.

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat, RgbImage};

use super::{FrameStream, VideoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    Raw,
    Png,
    /// Motion JPEG with quality in `1..=100`.
    Mjpeg { quality: u8 },
}

impl Codec {
    fn fourcc(self) -> [u8; 4] {
        match self {
            Codec::Raw => *b"DIB ",
            Codec::Png => *b"MPNG",
            Codec::Mjpeg { .. } => *b"MJPG",
        }
    }

    fn compression(self) -> u32 {
        match self {
            Codec::Raw => 0,
            other => u32::from_le_bytes(other.fourcc()),
        }
    }

    fn chunk_id(self) -> &'static [u8; 4] {
        match self {
            Codec::Raw => b"00db",
            _ => b"00dc",
        }
    }
}

/// Frame-rate denominator used when writing the stream header.
const RATE_SCALE: u32 = 1000;

fn encode_frame(frame: &RgbImage, codec: Codec) -> Result<Vec<u8>, VideoError> {
    let (w, h) = frame.dimensions();
    let mut out = Vec::new();
    match codec {
        Codec::Raw => {
            let stride = (w as usize * 3).div_ceil(4) * 4;
            out.resize(stride * h as usize, 0);
            for y in 0..h {
                // bottom-up rows, BGR order
                let row = &mut out[(h - 1 - y) as usize * stride..];
                for x in 0..w {
                    let p = frame.get_pixel(x, y).0;
                    let o = x as usize * 3;
                    row[o] = p[2];
                    row[o + 1] = p[1];
                    row[o + 2] = p[0];
                }
            }
        }
        Codec::Png => PngEncoder::new(&mut out)
            .write_image(frame.as_raw(), w, h, ExtendedColorType::Rgb8)
            .map_err(|e| VideoError::EncoderUnavailable(format!("png: {e}")))?,
        Codec::Mjpeg { quality } => {
            if !(1..=100).contains(&quality) {
                return Err(VideoError::Invalid(format!("jpeg quality {quality} not in 1..=100")));
            }
            JpegEncoder::new_with_quality(&mut out, quality)
                .write_image(frame.as_raw(), w, h, ExtendedColorType::Rgb8)
                .map_err(|e| VideoError::EncoderUnavailable(format!("jpeg: {e}")))?
        }
    }
    Ok(out)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn chunk(id: &[u8; 4], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 9);
    out.extend_from_slice(id);
    put_u32(&mut out, body.len() as u32);
    out.extend_from_slice(body);
    if body.len() % 2 == 1 {
        out.push(0);
    }
    out
}

fn list(kind: &[u8; 4], body: &[u8]) -> Vec<u8> {
    let mut inner = Vec::with_capacity(body.len() + 4);
    inner.extend_from_slice(kind);
    inner.extend_from_slice(body);
    chunk(b"LIST", &inner)
}

pub fn encode(video: &FrameStream, codec: Codec) -> Result<Vec<u8>, VideoError> {
    let (w, h) = video.dimensions();
    let frames: Vec<Vec<u8>> = video
        .frames()
        .iter()
        .map(|f| encode_frame(f, codec))
        .collect::<Result<_, _>>()?;
    let n = frames.len() as u32;
    let max_frame = frames.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let rate = (video.fps() * RATE_SCALE as f64).round() as u32;

    let mut avih = Vec::with_capacity(56);
    put_u32(&mut avih, (1e6 / video.fps()).round() as u32);
    put_u32(&mut avih, (max_frame as f64 * video.fps()) as u32);
    put_u32(&mut avih, 0);
    put_u32(&mut avih, 0x10); // AVIF_HASINDEX
    put_u32(&mut avih, n);
    put_u32(&mut avih, 0);
    put_u32(&mut avih, 1);
    put_u32(&mut avih, max_frame);
    put_u32(&mut avih, w);
    put_u32(&mut avih, h);
    avih.extend_from_slice(&[0; 16]);

    let mut strh = Vec::with_capacity(56);
    strh.extend_from_slice(b"vids");
    strh.extend_from_slice(&codec.fourcc());
    put_u32(&mut strh, 0);
    put_u16(&mut strh, 0);
    put_u16(&mut strh, 0);
    put_u32(&mut strh, 0);
    put_u32(&mut strh, RATE_SCALE);
    put_u32(&mut strh, rate);
    put_u32(&mut strh, 0);
    put_u32(&mut strh, n);
    put_u32(&mut strh, max_frame);
    put_u32(&mut strh, u32::MAX);
    put_u32(&mut strh, 0);
    put_u16(&mut strh, 0);
    put_u16(&mut strh, 0);
    put_u16(&mut strh, w as u16);
    put_u16(&mut strh, h as u16);

    let mut strf = Vec::with_capacity(40);
    put_u32(&mut strf, 40);
    put_u32(&mut strf, w);
    put_u32(&mut strf, h); // positive height: bottom-up for raw frames
    put_u16(&mut strf, 1);
    put_u16(&mut strf, 24);
    put_u32(&mut strf, codec.compression());
    put_u32(&mut strf, (w * h * 3).max(max_frame));
    strf.extend_from_slice(&[0; 16]);

    let strl = list(b"strl", &[chunk(b"strh", &strh), chunk(b"strf", &strf)].concat());
    let hdrl = list(b"hdrl", &[chunk(b"avih", &avih), strl].concat());

    let mut movi_body = Vec::new();
    let mut idx1 = Vec::with_capacity(frames.len() * 16);
    for f in &frames {
        // offsets are relative to the 'movi' fourcc
        let offset = 4 + movi_body.len() as u32;
        movi_body.extend_from_slice(&chunk(codec.chunk_id(), f));
        idx1.extend_from_slice(codec.chunk_id());
        put_u32(&mut idx1, 0x10); // AVIIF_KEYFRAME
        put_u32(&mut idx1, offset);
        put_u32(&mut idx1, f.len() as u32);
    }
    let movi = list(b"movi", &movi_body);

    let mut riff_body = Vec::new();
    riff_body.extend_from_slice(b"AVI ");
    riff_body.extend_from_slice(&hdrl);
    riff_body.extend_from_slice(&movi);
    riff_body.extend_from_slice(&chunk(b"idx1", &idx1));
    Ok(chunk(b"RIFF", &riff_body))
}

struct StreamInfo {
    width: u32,
    height: i32,
    compression: u32,
    bit_count: u16,
    scale: u32,
    rate: u32,
    micro_sec_per_frame: u32,
}

struct Reader<'a> {
    what: &'a str,
    info: StreamInfo,
    frames: Vec<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> VideoError {
        VideoError::DecodeFailure {
            what: self.what.to_string(),
            reason: reason.into(),
        }
    }

    fn u32_at(data: &[u8], at: usize) -> u32 {
        u32::from_le_bytes(data[at..at + 4].try_into().unwrap())
    }

    fn walk(&mut self, data: &'a [u8], in_movi: bool) -> Result<(), VideoError> {
        let mut pos = 0;
        while pos + 8 <= data.len() {
            let id: [u8; 4] = data[pos..pos + 4].try_into().unwrap();
            let size = Self::u32_at(data, pos + 4) as usize;
            let start = pos + 8;
            let end = start
                .checked_add(size)
                .filter(|&e| e <= data.len())
                .ok_or_else(|| self.fail(format!("chunk {:?} overruns file", String::from_utf8_lossy(&id))))?;
            let body = &data[start..end];
            match &id {
                b"LIST" if body.len() >= 4 => {
                    let kind = &body[..4];
                    self.walk(&body[4..], in_movi || kind == b"movi")?;
                }
                b"avih" if body.len() >= 40 => {
                    self.info.micro_sec_per_frame = Self::u32_at(body, 0);
                }
                b"strh" if body.len() >= 32 && &body[..4] == b"vids" => {
                    self.info.scale = Self::u32_at(body, 20);
                    self.info.rate = Self::u32_at(body, 24);
                }
                b"strf" if body.len() >= 20 => {
                    self.info.width = Self::u32_at(body, 4);
                    self.info.height = Self::u32_at(body, 8) as i32;
                    self.info.bit_count = u16::from_le_bytes([body[14], body[15]]);
                    self.info.compression = Self::u32_at(body, 16);
                }
                _ if in_movi && &id[..2] == b"00" && (&id[2..] == b"dc" || &id[2..] == b"db") => {
                    self.frames.push(body);
                }
                _ => {}
            }
            pos = end + (size % 2);
        }
        Ok(())
    }

    fn fps(&self) -> Result<f64, VideoError> {
        if self.info.scale > 0 && self.info.rate > 0 {
            Ok(self.info.rate as f64 / self.info.scale as f64)
        } else if self.info.micro_sec_per_frame > 0 {
            Ok(1e6 / self.info.micro_sec_per_frame as f64)
        } else {
            Err(self.fail("no frame rate in headers"))
        }
    }

    fn decode_frame(&self, data: &[u8]) -> Result<RgbImage, VideoError> {
        let info = &self.info;
        let (w, h) = (info.width, info.height.unsigned_abs());
        let img = match &info.compression.to_le_bytes() {
            [0, 0, 0, 0] => {
                if info.bit_count != 24 {
                    return Err(self.fail(format!("unsupported raw bit depth {}", info.bit_count)));
                }
                let stride = (w as usize * 3).div_ceil(4) * 4;
                if data.len() < stride * h as usize {
                    return Err(self.fail("truncated raw frame"));
                }
                let bottom_up = info.height > 0;
                RgbImage::from_fn(w, h, |x, y| {
                    let row = if bottom_up { h - 1 - y } else { y } as usize;
                    let o = row * stride + x as usize * 3;
                    image::Rgb([data[o + 2], data[o + 1], data[o]])
                })
            }
            b"MJPG" => image::load_from_memory_with_format(data, ImageFormat::Jpeg)
                .map_err(|e| self.fail(format!("jpeg frame: {e}")))?
                .to_rgb8(),
            b"MPNG" => image::load_from_memory_with_format(data, ImageFormat::Png)
                .map_err(|e| self.fail(format!("png frame: {e}")))?
                .to_rgb8(),
            other => {
                return Err(self.fail(format!(
                    "unsupported codec {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        if img.dimensions() != (w, h) {
            return Err(self.fail(format!(
                "frame is {:?}, header says {:?}",
                img.dimensions(),
                (w, h)
            )));
        }
        Ok(img)
    }
}

pub fn decode(bytes: &[u8], what: &str) -> Result<FrameStream, VideoError> {
    let mut reader = Reader {
        what,
        info: StreamInfo {
            width: 0,
            height: 0,
            compression: 0,
            bit_count: 0,
            scale: 0,
            rate: 0,
            micro_sec_per_frame: 0,
        },
        frames: Vec::new(),
    };
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"AVI " {
        return Err(reader.fail("not a RIFF/AVI file"));
    }
    let riff_len = (Reader::u32_at(bytes, 4) as usize + 8).min(bytes.len());
    reader.walk(&bytes[12..riff_len], false)?;
    if reader.info.width == 0 || reader.info.height == 0 {
        return Err(reader.fail("missing video stream format"));
    }
    if reader.frames.is_empty() {
        return Err(VideoError::EmptyVideo(what.to_string()));
    }
    let fps = reader.fps()?;
    let frames = reader
        .frames
        .iter()
        .map(|f| reader.decode_frame(f))
        .collect::<Result<Vec<_>, _>>()?;
    FrameStream::new(frames, fps)
}
