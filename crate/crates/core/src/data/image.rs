//! 8-bit RGB images: PPM (P6) and PNG decoding, nearest-neighbor resizing,
//! unit scaling, and PPM/PGM writers.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Rgb8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: rgb.repeat(width * height),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Reads a PPM (P6, maxval 255) or PNG file, chosen by magic bytes.
pub fn decode_image(path: &Path) -> Result<Rgb8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes, path)
}

pub fn decode_bytes(bytes: &[u8], path: &Path) -> Result<Rgb8> {
    if bytes.starts_with(b"P6") {
        parse_ppm(bytes).map_err(|message| Error::Decode {
            path: path.to_path_buf(),
            message,
        })
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes, path)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && (b'1'..=b'7').contains(&bytes[1]) {
        Err(Error::Channel {
            path: path.to_path_buf(),
            found: format!("netpbm P{}", bytes[1] as char),
        })
    } else {
        Err(Error::Decode {
            path: path.to_path_buf(),
            message: "unsupported format (expected PPM P6 or PNG)".into(),
        })
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Rgb8> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| {
        Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    if img.color() != image::ColorType::Rgb8 {
        return Err(Error::Channel {
            path: path.to_path_buf(),
            found: format!("{:?}", img.color()),
        });
    }
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    Rgb8::new(w as usize, h as usize, rgb.into_raw())
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<Rgb8, String> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("expected a number at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|e| format!("bad header number: {e}"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    pos += 1;
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(format!("only 8-bit PPM is supported (maxval {maxval})"));
    }
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    let need = width * height * 3;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(format!(
            "truncated pixel data: {} of {need} bytes",
            body.len()
        ));
    }
    Ok(Rgb8 {
        width,
        height,
        pixels: body[..need].to_vec(),
    })
}

pub fn encode_ppm(img: &Rgb8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_ppm(path: &Path, img: &Rgb8) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// 8-bit grayscale P5.
pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != width * height {
        return Err(Error::Dimension(format!(
            "{width}×{height} gray image needs {} bytes, got {}",
            width * height,
            gray.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Nearest-neighbor: output pixel `(x, y)` takes source
/// `(⌊x·W/w⌋, ⌊y·H/h⌋)`.
pub fn resize_nearest(img: &Rgb8, width: usize, height: usize) -> Rgb8 {
    let mut out = Rgb8::filled(width, height, [0; 3]);
    for y in 0..height {
        let sy = y * img.height / height;
        for x in 0..width {
            let sx = x * img.width / width;
            out.put(x, y, img.get(sx, sy));
        }
    }
    out
}

/// `3 × H × W`, channel-major, values `byte / 255`.
pub fn to_unit_tensor(img: &Rgb8) -> Tensor<f32> {
    let plane = img.width * img.height;
    Tensor::from_fn(vec![3, img.height, img.width], |i| {
        let (c, p) = (i / plane, i % plane);
        img.pixels[p * 3 + c] as f32 / 255.0
    })
}

/// Decode, resize to `height × width`, scale to `[0, 1]`.
pub fn load_unit_image(path: &Path, height: usize, width: usize) -> Result<Tensor<f32>> {
    let img = decode_image(path)?;
    Ok(to_unit_tensor(&resize_nearest(&img, width, height)))
}

/// Full pipeline: [`load_unit_image`] then per-channel mean subtraction.
pub fn load_image(path: &Path, height: usize, width: usize, mean: [f32; 3]) -> Result<Tensor<f32>> {
    Ok(super::subtract_mean(
        &load_unit_image(path, height, width)?,
        mean,
    ))
}
