//! Image I/O and dataset handling.
//!
//! The built-in codecs are binary PGM (P5, grayscale) and PPM (P6, color)
//! with a maximum sample value of 255; they are lossless and dependency-free.
//! PNG support can be enabled with the `png` cargo feature.
//!
//! Pixels are 8-bit; the network operates on unit-scale tensors, so
//! [`to_unit`] divides by 255 and [`from_unit`] multiplies back, rounding
//! half away from zero and clamping. Noise levels quoted on the 0-255 scale
//! are divided by 255 at exactly one place (noise injection) to avoid
//! double-scaling.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Peak sample value of every supported image.
pub const PEAK: u8 = 255;

/// An 8-bit image, row-major, channel-interleaved. Channels are 1
/// (grayscale) or 3 (RGB).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} samples", height * width * channels),
                format!("{}", data.len()),
            ));
        }
        Ok(ImageBuffer {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Sample at row `y`, column `x`, channel `c`.
    pub fn at(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Loads a PGM/PPM file (PNG too, with the `png` feature); the format is
/// detected from the file content.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    #[cfg(feature = "png")]
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return png::decode(path, &bytes);
    }
    decode_netpbm(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes `image` to `path`. Grayscale buffers are written as binary PGM,
/// color buffers as binary PPM; with the `png` feature a `.png` extension
/// selects PNG instead.
pub fn save_image(path: &Path, image: &ImageBuffer) -> Result<()> {
    #[cfg(feature = "png")]
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return png::encode(path, image);
    }
    let mut w = BufWriter::new(File::create(path)?);
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    write!(w, "{magic}\n{} {}\n{}\n", image.width, image.height, PEAK)?;
    w.write_all(&image.data)?;
    w.flush()?;
    Ok(())
}

fn decode_netpbm(bytes: &[u8]) -> Result<ImageBuffer> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("not a binary PGM (P5) or PPM (P6) file".into())),
    };
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != PEAK as usize {
        return Err(Error::Format(format!(
            "unsupported bit depth: max value {maxval}, only {PEAK} is supported"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace before pixel data".into())),
    }
    let count = width * height * channels;
    let data = bytes
        .get(pos..pos + count)
        .ok_or_else(|| Error::Format("truncated pixel data".into()))?;
    if bytes.len() > pos + count {
        return Err(Error::Format("trailing bytes after pixel data".into()));
    }
    ImageBuffer::new(height, width, channels, data.to_vec())
}

/// Reads one whitespace-delimited decimal field, skipping `#` comments.
fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(Error::Format("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::Format("malformed header field".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("malformed header field".into()))
}

#[cfg(feature = "png")]
mod png {
    use super::*;

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<ImageBuffer> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                ImageBuffer::new(h, w, 1, g.into_raw())
            }
            image::DynamicImage::ImageRgb8(c) => {
                let (w, h) = (c.width() as usize, c.height() as usize);
                ImageBuffer::new(h, w, 3, c.into_raw())
            }
            other => Err(Error::Format(format!(
                "unsupported PNG color type {:?}; use 8-bit grayscale or RGB",
                other.color()
            ))),
        }
    }

    pub fn encode(path: &Path, img: &ImageBuffer) -> Result<()> {
        let (w, h) = (img.width() as u32, img.height() as u32);
        let result = if img.channels() == 1 {
            image::GrayImage::from_raw(w, h, img.data().to_vec())
                .expect("buffer length checked at construction")
                .save(path)
        } else {
            image::RgbImage::from_raw(w, h, img.data().to_vec())
                .expect("buffer length checked at construction")
                .save(path)
        };
        result.map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Converts an 8-bit image to a unit-scale `1 x C x H x W` tensor.
pub fn to_unit(image: &ImageBuffer) -> Tensor<f32> {
    let (h, w, c) = (image.height, image.width, image.channels);
    let mut t = Tensor::zeros(Shape::new(1, c, h, w));
    for ch in 0..c {
        let plane = t.plane_mut(0, ch);
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = image.data[(y * w + x) * c + ch] as f32 / PEAK as f32;
            }
        }
    }
    t
}

/// Converts a unit-scale `1 x C x H x W` tensor back to an 8-bit image:
/// multiplied by 255, rounded half away from zero and clamped to `0..=255`.
pub fn from_unit(tensor: &Tensor<f32>) -> Result<ImageBuffer> {
    let s = tensor.shape();
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(Error::shape("1xCxHxW with C in {1,3}", s.to_string()));
    }
    let mut data = vec![0u8; s.h * s.w * s.c];
    for c in 0..s.c {
        let plane = tensor.plane(0, c);
        for y in 0..s.h {
            for x in 0..s.w {
                let v = (plane[y * s.w + x] * PEAK as f32).round().clamp(0.0, 255.0);
                data[(y * s.w + x) * s.c + c] = v as u8;
            }
        }
    }
    ImageBuffer::new(s.h, s.w, s.c, data)
}

/// Which side of the train/eval split a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// An ordered list of image paths discovered in a directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    paths: Vec<PathBuf>,
    split: Split,
}

impl Dataset {
    /// Discovers images in `dir` by extension (`.pgm`, `.ppm`, and `.png`
    /// with the `png` feature), sorted lexicographically so enumeration
    /// order is deterministic.
    pub fn from_dir(dir: &Path, split: Split) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::Image {
                path: dir.to_path_buf(),
                reason: e.to_string(),
            })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| {
                        let e = e.to_ascii_lowercase();
                        e == "pgm" || e == "ppm" || (cfg!(feature = "png") && e == "png")
                    })
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::EmptyDataset(dir.to_path_buf()));
        }
        Ok(Dataset { paths, split })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Loads every image into memory (training sets are small enough for
    /// on-the-fly cropping to want this).
    pub fn load_all(&self) -> Result<Vec<ImageBuffer>> {
        self.paths.iter().map(|p| load_image(p)).collect()
    }
}

/// Extracts a uniformly random `size x size` crop as a unit-scale tensor.
/// The corner is drawn over all valid positions: row first, then column.
pub fn random_crop<R: Rng>(image: &ImageBuffer, size: usize, rng: &mut R) -> Result<Tensor<f32>> {
    if image.height < size || image.width < size {
        return Err(Error::ImageTooSmall {
            h: image.height,
            w: image.width,
            size,
        });
    }
    let y0 = rng.random_range(0..=image.height - size);
    let x0 = rng.random_range(0..=image.width - size);
    let mut t = Tensor::zeros(Shape::new(1, image.channels, size, size));
    for c in 0..image.channels {
        let plane = t.plane_mut(0, c);
        for y in 0..size {
            for x in 0..size {
                plane[y * size + x] =
                    image.at(y0 + y, x0 + x, c) as f32 / PEAK as f32;
            }
        }
    }
    Ok(t)
}
