//! Image and disparity-map containers plus the on-disk formats the matcher
//! speaks: 8-bit PNG / binary PPM input, grayscale PFM disparity
//! interchange, and Middlebury `calib.txt` metadata.

mod calib;
mod pfm;

pub use calib::{effective_levels, parse_calib, parse_calib_str, CalibInfo};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};

use std::path::Path;

use crate::error::{Error, Result};

/// Marker stored for pixels without a usable disparity, matching the
/// Middlebury ground-truth convention.
pub const INVALID_DISPARITY: f32 = f32::INFINITY;

/// 8-bit RGB image, row-major interleaved triplets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbU8Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbU8Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidParam(format!(
                "rgb buffer has {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Pixel count.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: width, height >= 1
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Horizontally flipped copy. Used to reuse the left-reference code
    /// path when matching with the right image as reference.
    pub fn mirrored(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = (y * self.width + x) * 3;
                data.extend_from_slice(&self.data[i..i + 3]);
            }
        }
        Self { width: self.width, height: self.height, data }
    }

    /// Box-average downsampling by an integer factor. Output dimensions are
    /// rounded up; boxes at the right/bottom edge may cover fewer source
    /// pixels.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParam("downsample factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let ow = self.width.div_ceil(factor);
        let oh = self.height.div_ceil(factor);
        let mut data = Vec::with_capacity(ow * oh * 3);
        for oy in 0..oh {
            for ox in 0..ow {
                let x0 = ox * factor;
                let y0 = oy * factor;
                let x1 = (x0 + factor).min(self.width);
                let y1 = (y0 + factor).min(self.height);
                let mut acc = [0u32; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = self.pixel(x, y);
                        acc[0] += u32::from(p[0]);
                        acc[1] += u32::from(p[1]);
                        acc[2] += u32::from(p[2]);
                    }
                }
                let n = ((x1 - x0) * (y1 - y0)) as u32;
                data.push(((acc[0] + n / 2) / n) as u8);
                data.push(((acc[1] + n / 2) / n) as u8);
                data.push(((acc[2] + n / 2) / n) as u8);
            }
        }
        Self::new(ow, oh, data)
    }
}

/// Single-channel image with luminance stored as f32 in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayF32Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayF32Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "gray buffer has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "gray buffer has non-finite value at index {i}"
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel disparity with [`INVALID_DISPARITY`] marking unusable pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam(format!(
                "map dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "disparity buffer has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        // every entry is finite and >= 0, or the +inf invalid marker
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || (v.is_finite() && **v < 0.0) || **v == f32::NEG_INFINITY)
        {
            return Err(Error::InvalidParam(format!(
                "disparity {v} at index {i} is neither finite non-negative nor the invalid marker"
            )));
        }
        Ok(Self { width, height, data })
    }

    /// All-invalid map, to be filled in.
    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.at(x, y).is_finite()
    }

    pub fn mirrored(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.push(self.at(x, y));
            }
        }
        Self { width: self.width, height: self.height, data }
    }
}

/// Decode an 8-bit PNG or binary PPM into RGB. Gray inputs are replicated
/// across channels; an alpha channel is dropped; 16-bit inputs are
/// rejected.
pub fn read_image(path: &Path) -> Result<RgbU8Image> {
    let dyn_img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::ImageFormat { path: path.to_path_buf(), reason: other.to_string() },
    })?;
    use image::DynamicImage as D;
    match dyn_img {
        D::ImageLuma8(_) | D::ImageLumaA8(_) | D::ImageRgb8(_) | D::ImageRgba8(_) => {
            let rgb = dyn_img.to_rgb8();
            RgbU8Image::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
        }
        other => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            reason: format!("unsupported bit depth / sample format {:?}", other.color()),
        }),
    }
}

/// Rec.601 luminance: 0.299 r + 0.587 g + 0.114 b.
pub fn to_gray(img: &RgbU8Image) -> GrayF32Image {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * f32::from(p[0]) + 0.587 * f32::from(p[1]) + 0.114 * f32::from(p[2]))
        .collect();
    GrayF32Image { width: img.width(), height: img.height(), data }
}

/// Write a grayscale disparity preview, mapping d/(levels-1) to [0, 255].
/// Invalid pixels render black. Display only; never used for metrics.
pub fn write_preview_png(map: &DisparityMap, levels: usize, path: &Path) -> Result<()> {
    let denom = (levels.max(2) - 1) as f32;
    let pixels: Vec<u8> = map
        .data()
        .iter()
        .map(|&d| {
            if d.is_finite() {
                ((d / denom) * 255.0).clamp(0.0, 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    let buf = image::GrayImage::from_raw(map.width() as u32, map.height() as u32, pixels)
        .expect("buffer sized from map dimensions");
    buf.save(path)
        .map_err(|e| Error::ImageFormat { path: path.to_path_buf(), reason: e.to_string() })
}

/// Write a validity mask as an 8-bit PNG, 255 = valid.
pub fn write_mask_png(mask: &crate::post_processing::ValidityMask, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = mask.data().iter().map(|&v| if v { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, pixels)
        .expect("buffer sized from mask dimensions");
    buf.save(path)
        .map_err(|e| Error::ImageFormat { path: path.to_path_buf(), reason: e.to_string() })
}

/// Read an 8-bit PNG mask; a pixel is valid iff its value is 255
/// (Middlebury `mask0nocc.png` marks non-occluded pixels with 255).
pub fn read_mask_png(path: &Path) -> Result<crate::post_processing::ValidityMask> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::ImageFormat { path: path.to_path_buf(), reason: other.to_string() },
    })?;
    let gray = img.to_luma8();
    let valid: Vec<bool> = gray.as_raw().iter().map(|&v| v == 255).collect();
    crate::post_processing::ValidityMask::new(gray.width() as usize, gray.height() as usize, valid)
}
