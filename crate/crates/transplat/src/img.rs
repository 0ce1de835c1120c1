//! Image containers and file I/O (PFM float maps, 8/16-bit PNG, binary masks).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

/// Single-channel float image, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageF {
    pub fn new(width: usize, height: usize) -> Self {
        ImageF {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut im = ImageF::new(width, height);
        for y in 0..height {
            for x in 0..width {
                im.data[y * width + x] = f(x, y);
            }
        }
        im
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Three-channel float image, interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut im = ImageRgb::new(width, height);
        for y in 0..height {
            for x in 0..width {
                im.set(x, y, f(x, y));
            }
        }
        im
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = v[0];
        self.data[i + 1] = v[1];
        self.data[i + 2] = v[2];
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Extracts one channel as a grayscale image.
    pub fn channel(&self, c: usize) -> ImageF {
        assert!(c < 3);
        ImageF {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }
}

pub fn check_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { a, b });
    }
    Ok(())
}

// --- PFM ------------------------------------------------------------------
//
// Portable float map: "Pf" (gray) or "PF" (color), dims line, scale line
// whose sign encodes endianness. Rows are stored bottom-up per the format.

pub fn write_pfm_gray(path: &Path, im: &ImageF) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let hdr = format!("Pf\n{} {}\n-1.0\n", im.width, im.height);
    w.write_all(hdr.as_bytes()).map_err(|e| Error::io(path, e))?;
    for y in (0..im.height).rev() {
        for x in 0..im.width {
            w.write_f32::<LittleEndian>(im.at(x, y) as f32)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

pub fn write_pfm_rgb(path: &Path, im: &ImageRgb) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let hdr = format!("PF\n{} {}\n-1.0\n", im.width, im.height);
    w.write_all(hdr.as_bytes()).map_err(|e| Error::io(path, e))?;
    for y in (0..im.height).rev() {
        for x in 0..im.width {
            for v in im.at(x, y) {
                w.write_f32::<LittleEndian>(v as f32)
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(())
}

fn read_pfm_token(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8; 1];
        match r.read_exact(&mut b) {
            Ok(()) => {}
            Err(e) => return Err(Error::io(path, e)),
        }
        if b[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b[0]);
    }
    String::from_utf8(tok).map_err(|_| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: "non-utf8 header token".into(),
    })
}

fn read_pfm_header(r: &mut impl BufRead, path: &Path) -> Result<(bool, usize, usize, f32)> {
    let magic = read_pfm_token(r, path)?;
    let color = match magic.as_str() {
        "PF" => true,
        "Pf" => false,
        other => {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                detail: format!("bad PFM magic {other:?}"),
            })
        }
    };
    let parse = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("bad header number {s:?}"),
        })
    };
    let w = parse(&read_pfm_token(r, path)?)? as usize;
    let h = parse(&read_pfm_token(r, path)?)? as usize;
    let scale = parse(&read_pfm_token(r, path)?)? as f32;
    if w == 0 || h == 0 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "zero image dimension".into(),
        });
    }
    Ok((color, w, h, scale))
}

pub fn read_pfm_gray(path: &Path) -> Result<ImageF> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let (color, w, h, scale) = read_pfm_header(&mut r, path)?;
    if color {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "expected grayscale Pf, found color PF".into(),
        });
    }
    let mut im = ImageF::new(w, h);
    for y in (0..h).rev() {
        for x in 0..w {
            let v = if scale < 0.0 {
                r.read_f32::<LittleEndian>()
            } else {
                r.read_f32::<byteorder::BigEndian>()
            }
            .map_err(|e| Error::io(path, e))?;
            *im.at_mut(x, y) = v as f64;
        }
    }
    Ok(im)
}

pub fn read_pfm_rgb(path: &Path) -> Result<ImageRgb> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let (color, w, h, scale) = read_pfm_header(&mut r, path)?;
    if !color {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "expected color PF, found grayscale Pf".into(),
        });
    }
    let mut im = ImageRgb::new(w, h);
    for y in (0..h).rev() {
        for x in 0..w {
            let mut px = [0.0; 3];
            for p in &mut px {
                let v = if scale < 0.0 {
                    r.read_f32::<LittleEndian>()
                } else {
                    r.read_f32::<byteorder::BigEndian>()
                }
                .map_err(|e| Error::io(path, e))?;
                *p = v as f64;
            }
            im.set(x, y, px);
        }
    }
    Ok(im)
}

// --- PNG ------------------------------------------------------------------

/// Writes a color image as 8-bit PNG, clamping to [0,1].
pub fn write_png_rgb(path: &Path, im: &ImageRgb) -> Result<()> {
    let mut buf = image::RgbImage::new(im.width as u32, im.height as u32);
    for y in 0..im.height {
        for x in 0..im.width {
            let px = im.at(x, y);
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, image::Rgb([q(px[0]), q(px[1]), q(px[2])]));
        }
    }
    buf.save(path).map_err(|e| Error::MalformedFile {
        what: "png",
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn read_png_rgb(path: &Path) -> Result<ImageRgb> {
    let dynimg = image::open(path).map_err(|e| Error::MalformedFile {
        what: "png",
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let rgb = dynimg.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut im = ImageRgb::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x as u32, y as u32);
            im.set(
                x,
                y,
                [
                    p[0] as f64 / 65535.0,
                    p[1] as f64 / 65535.0,
                    p[2] as f64 / 65535.0,
                ],
            );
        }
    }
    Ok(im)
}

/// Writes a grayscale image to 16-bit PNG, clamping to [0,1].
pub fn write_png_gray16(path: &Path, im: &ImageF) -> Result<()> {
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        im.width as u32,
        im.height as u32,
    );
    for y in 0..im.height {
        for x in 0..im.width {
            let v = (im.at(x, y).clamp(0.0, 1.0) * 65535.0).round() as u16;
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    buf.save(path).map_err(|e| Error::MalformedFile {
        what: "png",
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Reads a single-channel mask PNG; pixel values >= 128 (8-bit scale) map to 1.0.
pub fn read_mask_png(path: &Path) -> Result<ImageF> {
    let dynimg = image::open(path).map_err(|e| Error::MalformedFile {
        what: "png",
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let gray = dynimg.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(ImageF::from_fn(w, h, |x, y| {
        if gray.get_pixel(x as u32, y as u32)[0] >= 128 {
            1.0
        } else {
            0.0
        }
    }))
}

pub fn write_mask_png(path: &Path, mask: &ImageF) -> Result<()> {
    let mut buf = image::GrayImage::new(mask.width as u32, mask.height as u32);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let v = if mask.at(x, y) >= 0.5 { 255u8 } else { 0u8 };
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    buf.save(path).map_err(|e| Error::MalformedFile {
        what: "png",
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
