//! Disparity refinement: left-right cross-checking marks inconsistent
//! pixels invalid, occlusion filling replaces them with the smaller of the
//! nearest valid scanline disparities, and a bilateral weighted median
//! smooths only the filled pixels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian_lattice::FeatureSpec;
use crate::image_io::{DisparityMap, RgbU8Image};

/// Per-pixel validity flags for a disparity map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "mask has {} flags, expected {}",
                valid.len(),
                width * height
            )));
        }
        Ok(Self { width, height, valid })
    }

    pub fn all_valid(width: usize, height: usize) -> Self {
        Self { width, height, valid: vec![true; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.valid
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn mirrored(&self) -> Self {
        let mut valid = Vec::with_capacity(self.valid.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                valid.push(self.at(x, y));
            }
        }
        Self { width: self.width, height: self.height, valid }
    }
}

/// Cross-check a left-reference map against a right-reference map: pixel
/// (x, y) stays valid iff its match x - round(dL) lands in the image and
/// the two disparities agree within `tol`.
pub fn lrc_check(disp_l: &DisparityMap, disp_r: &DisparityMap, tol: f32) -> Result<ValidityMask> {
    if disp_l.width() != disp_r.width() || disp_l.height() != disp_r.height() {
        return Err(Error::DimensionMismatch {
            what: "left vs right disparity maps",
            left_w: disp_l.width(),
            left_h: disp_l.height(),
            right_w: disp_r.width(),
            right_h: disp_r.height(),
        });
    }
    let (w, h) = (disp_l.width(), disp_l.height());
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let dl = disp_l.at(x, y);
            if !dl.is_finite() {
                continue;
            }
            let xr = x as isize - dl.round() as isize;
            if xr < 0 || xr >= w as isize {
                continue;
            }
            let dr = disp_r.at(xr as usize, y);
            if dr.is_finite() && (dl - dr).abs() <= tol {
                valid[y * w + x] = true;
            }
        }
    }
    ValidityMask::new(w, h, valid)
}

/// Replace every invalid pixel with min(nearest valid disparity to the
/// left, nearest valid to the right) along its scanline; one-sided where
/// only one side exists. Rows with no valid pixel fall back to the
/// smallest valid disparity in the whole map. A fully invalid map is
/// rejected.
pub fn occlusion_fill(disp: &DisparityMap, mask: &ValidityMask) -> Result<DisparityMap> {
    let (w, h) = (disp.width(), disp.height());
    if mask.width() != w || mask.height() != h {
        return Err(Error::DimensionMismatch {
            what: "mask vs disparity map",
            left_w: mask.width(),
            left_h: mask.height(),
            right_w: w,
            right_h: h,
        });
    }
    let mut global_min = f32::INFINITY;
    for y in 0..h {
        for x in 0..w {
            if mask.at(x, y) {
                let v = disp.at(x, y);
                if !v.is_finite() {
                    return Err(Error::InvalidParam(format!(
                        "pixel ({x},{y}) is marked valid but holds {v}"
                    )));
                }
                global_min = global_min.min(v);
            }
        }
    }
    if !global_min.is_finite() {
        return Err(Error::InvalidParam("cannot fill a fully invalid map".into()));
    }

    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        // nearest valid value to the left / right of each column
        let mut left = vec![None::<f32>; w];
        let mut carry = None;
        for x in 0..w {
            if mask.at(x, y) {
                carry = Some(disp.at(x, y));
            }
            left[x] = carry;
        }
        let mut right = vec![None::<f32>; w];
        let mut carry = None;
        for x in (0..w).rev() {
            if mask.at(x, y) {
                carry = Some(disp.at(x, y));
            }
            right[x] = carry;
        }
        for x in 0..w {
            row[x] = if mask.at(x, y) {
                disp.at(x, y)
            } else {
                match (left[x], right[x]) {
                    (Some(a), Some(b)) => a.min(b),
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => global_min,
                }
            };
        }
    });
    DisparityMap::new(w, h, out)
}

/// Weighted median restricted to pixels invalid in `mask`: each one takes
/// the smallest window value whose cumulative bilateral weight reaches
/// half the total. Weights combine spatial distance and guide-image color
/// distance under `spec`. Valid pixels pass through untouched.
pub fn weighted_median(
    disp: &DisparityMap,
    guide: &RgbU8Image,
    mask: &ValidityMask,
    window: usize,
    spec: &FeatureSpec,
) -> Result<DisparityMap> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidParam(format!("median window must be odd, got {window}")));
    }
    let (w, h) = (disp.width(), disp.height());
    if guide.width() != w || guide.height() != h || mask.width() != w || mask.height() != h {
        return Err(Error::DimensionMismatch {
            what: "guide/mask vs disparity map",
            left_w: guide.width(),
            left_h: guide.height(),
            right_w: w,
            right_h: h,
        });
    }
    if let Some(i) = disp.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "weighted median requires a dense map; pixel {i} is invalid (run occlusion fill first)"
        )));
    }

    let r = (window / 2) as isize;
    let inv_2sx2 = 0.5 / (f64::from(spec.sigma_x) * f64::from(spec.sigma_x));
    let inv_2sf2 = 0.5 / (f64::from(spec.sigma_f) * f64::from(spec.sigma_f));

    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut samples: Vec<(f32, f64)> = Vec::with_capacity(window * window);
        for x in 0..w {
            if mask.at(x, y) {
                row[x] = disp.at(x, y);
                continue;
            }
            samples.clear();
            let center = guide.pixel(x, y);
            let x0 = (x as isize - r).max(0) as usize;
            let x1 = (x as isize + r).min(w as isize - 1) as usize;
            let y0 = (y as isize - r).max(0) as usize;
            let y1 = (y as isize + r).min(h as isize - 1) as usize;
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    let p = guide.pixel(nx, ny);
                    let dx = nx as f64 - x as f64;
                    let dy = ny as f64 - y as f64;
                    let mut df2 = 0.0f64;
                    for c in 0..3 {
                        let d = f64::from(p[c]) - f64::from(center[c]);
                        df2 += d * d;
                    }
                    let wgt = (-(dx * dx + dy * dy) * inv_2sx2 - df2 * inv_2sf2).exp();
                    samples.push((disp.at(nx, ny), wgt));
                }
            }
            samples.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = samples.iter().map(|&(_, wg)| wg).sum();
            let mut acc = 0.0f64;
            let mut chosen = samples[samples.len() - 1].0;
            for &(v, wg) in &samples {
                acc += wg;
                if acc >= 0.5 * total {
                    chosen = v;
                    break;
                }
            }
            row[x] = chosen;
        }
    });
    DisparityMap::new(w, h, out)
}
