//! Unary matching cost: Census-transform Hamming distance blended with a
//! truncated horizontal-gradient difference, evaluated for every pixel and
//! disparity level, for either the left or the right view as reference.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image_io::GrayF32Image;

/// Which image the disparities are anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    Left,
    Right,
}

/// Per-pixel Census codes: bit k set iff the k-th neighbor (row-major,
/// center excluded, edge-clamped) is strictly darker than the center.
#[derive(Debug, Clone)]
pub struct CensusField {
    width: usize,
    height: usize,
    window: usize,
    codes: Vec<u128>,
}

impl CensusField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> usize {
        self.window
    }

    #[inline]
    pub fn code(&self, x: usize, y: usize) -> u128 {
        self.codes[y * self.width + x]
    }

    pub fn bits(&self) -> u32 {
        (self.window * self.window - 1) as u32
    }
}

/// Hamming distance between two Census codes.
#[inline]
pub fn hamming(a: u128, b: u128) -> u32 {
    (a ^ b).count_ones()
}

// u128 codes cap the window at 11 (121 - 1 = 120 bits)
const MAX_CENSUS_WINDOW: usize = 11;

/// Census-transform an intensity image with an odd square window.
pub fn census(img: &GrayF32Image, window: usize) -> Result<CensusField> {
    if window % 2 == 0 || window < 3 {
        return Err(Error::InvalidParam(format!("census window must be odd and >= 3, got {window}")));
    }
    if window > MAX_CENSUS_WINDOW {
        return Err(Error::InvalidParam(format!(
            "census window {window} exceeds the supported maximum {MAX_CENSUS_WINDOW}"
        )));
    }
    if window > img.width() || window > img.height() {
        return Err(Error::InvalidParam(format!(
            "census window {window} larger than image {}x{}",
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as isize;
    let mut codes = vec![0u128; w * h];
    codes
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let center = img.at(x, y);
                let mut code = 0u128;
                let mut bit = 0u32;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        if img.at(nx, ny) < center {
                            code |= 1u128 << bit;
                        }
                        bit += 1;
                    }
                }
                *out = code;
            }
        });
    Ok(CensusField { width: w, height: h, window, codes })
}

/// Horizontal intensity gradient: central differences in the interior,
/// one-sided at the left/right borders, zero for single-column images.
pub fn gradient_x(img: &GrayF32Image) -> GrayF32Image {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![0.0f32; w * h];
    if w >= 2 {
        for y in 0..h {
            data[y * w] = img.at(1, y) - img.at(0, y);
            for x in 1..w - 1 {
                data[y * w + x] = (img.at(x + 1, y) - img.at(x - 1, y)) * 0.5;
            }
            data[y * w + w - 1] = img.at(w - 1, y) - img.at(w - 2, y);
        }
    }
    GrayF32Image::new(w, h, data).expect("gradient of a valid image is valid")
}

/// Blend weights for the unary cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    /// Census window side length (odd).
    pub census_window: usize,
    /// Cost per mismatched Census bit.
    pub w_census: f32,
    /// Cost per unit of truncated gradient difference.
    pub w_grad: f32,
    /// Gradient difference truncation point.
    pub tau_grad: f32,
    /// Cost charged when the matching pixel falls outside the image.
    /// `None` resolves to 0.9x the in-view cost bound.
    pub cost_out_of_view: Option<f32>,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { census_window: 5, w_census: 1.0, w_grad: 0.4, tau_grad: 16.0, cost_out_of_view: None }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.w_census < 0.0 || self.w_grad < 0.0 {
            return Err(Error::InvalidParam("cost weights must be >= 0".into()));
        }
        if !(self.tau_grad > 0.0) {
            return Err(Error::InvalidParam(format!("tau_grad must be > 0, got {}", self.tau_grad)));
        }
        if let Some(c) = self.cost_out_of_view {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidParam(format!("cost_out_of_view must be finite >= 0, got {c}")));
            }
        }
        Ok(())
    }

    /// Largest cost an in-view match can incur.
    pub fn in_view_bound(&self) -> f32 {
        self.w_census * (self.census_window * self.census_window - 1) as f32
            + self.w_grad * self.tau_grad
    }

    pub fn out_of_view_cost(&self) -> f32 {
        self.cost_out_of_view.unwrap_or(0.9 * self.in_view_bound())
    }
}

/// Unary cost ψ_u(i, d) for every pixel i and disparity d in 0..levels,
/// stored pixel-major: `cost[i * levels + d]`.
#[derive(Debug, Clone)]
pub struct CostVolume {
    width: usize,
    height: usize,
    levels: usize,
    cost: Vec<f32>,
}

pub const MAX_LEVELS: usize = 1024;

impl CostVolume {
    pub fn new(width: usize, height: usize, levels: usize, cost: Vec<f32>) -> Result<Self> {
        if levels < 2 || levels > MAX_LEVELS {
            return Err(Error::InvalidParam(format!("levels must be in 2..={MAX_LEVELS}, got {levels}")));
        }
        if cost.len() != width * height * levels {
            return Err(Error::InvalidParam(format!(
                "cost buffer has {} values, expected {}",
                cost.len(),
                width * height * levels
            )));
        }
        if let Some(i) = cost.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidParam(format!(
                "cost {} at flat index {i} is not finite non-negative",
                cost[i]
            )));
        }
        Ok(Self { width, height, levels, cost })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, d: usize) -> f32 {
        self.cost[(y * self.width + x) * self.levels + d]
    }

    /// Cost row of one pixel across all levels.
    #[inline]
    pub fn pixel_row(&self, i: usize) -> &[f32] {
        &self.cost[i * self.levels..(i + 1) * self.levels]
    }

    pub fn data(&self) -> &[f32] {
        &self.cost
    }

    /// One disparity plane, for debug dumps.
    pub fn level_slice(&self, d: usize) -> Vec<f32> {
        (0..self.num_pixels()).map(|i| self.cost[i * self.levels + d]).collect()
    }
}

/// Build the unary cost volume from a rectified pair. For the left
/// reference, pixel (x, y) at disparity d matches right-image pixel
/// (x - d, y); the right reference mirrors this with x + d.
pub fn build_cost_volume(
    left: &GrayF32Image,
    right: &GrayF32Image,
    levels: usize,
    params: &CostParams,
    reference: Reference,
) -> Result<CostVolume> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch {
            what: "stereo pair",
            left_w: left.width(),
            left_h: left.height(),
            right_w: right.width(),
            right_h: right.height(),
        });
    }
    if levels < 2 || levels > MAX_LEVELS {
        return Err(Error::InvalidParam(format!("levels must be in 2..={MAX_LEVELS}, got {levels}")));
    }
    params.validate()?;

    let (reference_img, target_img) = match reference {
        Reference::Left => (left, right),
        Reference::Right => (right, left),
    };
    let census_ref = census(reference_img, params.census_window)?;
    let census_tgt = census(target_img, params.census_window)?;
    let grad_ref = gradient_x(reference_img);
    let grad_tgt = gradient_x(target_img);

    let (w, h) = (left.width(), left.height());
    let oov = params.out_of_view_cost();
    let mut cost = vec![0.0f32; w * h * levels];
    cost
        .par_chunks_mut(w * levels)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let code = census_ref.code(x, y);
                let g = grad_ref.at(x, y);
                for d in 0..levels {
                    let tx = match reference {
                        Reference::Left => x as isize - d as isize,
                        Reference::Right => x as isize + d as isize,
                    };
                    row[x * levels + d] = if tx < 0 || tx >= w as isize {
                        oov
                    } else {
                        let tx = tx as usize;
                        let ham = hamming(code, census_tgt.code(tx, y)) as f32;
                        let gd = (g - grad_tgt.at(tx, y)).abs().min(params.tau_grad);
                        params.w_census * ham + params.w_grad * gd
                    };
                }
            }
        });
    CostVolume::new(w, h, levels, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(w: usize, h: usize, data: Vec<f32>) -> GrayF32Image {
        GrayF32Image::new(w, h, data).unwrap()
    }

    fn random_gray(w: usize, h: usize, hi: f32, rng: &mut ChaCha8Rng) -> GrayF32Image {
        gray(w, h, (0..w * h).map(|_| rng.random_range(0.0..hi)).collect())
    }

    #[test]
    fn constant_image_has_zero_codes() {
        let img = gray(5, 5, vec![42.0; 25]);
        let c = census(&img, 3).unwrap();
        assert!((0..5).all(|y| (0..5).all(|x| c.code(x, y) == 0)));
    }

    #[test]
    fn bright_center_sets_all_bits() {
        let mut data = vec![1.0f32; 9];
        data[4] = 5.0;
        let img = gray(3, 3, data);
        let c = census(&img, 3).unwrap();
        assert_eq!(c.code(1, 1), 0xff);
    }

    #[test]
    fn census_ignores_monotone_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_gray(8, 8, 200.0, &mut rng);
        let b = gray(8, 8, a.data().iter().map(|v| v + 10.0).collect());
        let ca = census(&a, 5).unwrap();
        let cb = census(&b, 5).unwrap();
        for i in 0..64 {
            assert_eq!(hamming(ca.codes[i], cb.codes[i]), 0, "pixel {i}");
        }
    }

    #[test]
    fn census_window_validation() {
        let img = gray(8, 8, vec![0.0; 64]);
        assert!(census(&img, 4).is_err());
        assert!(census(&img, 1).is_err());
        assert!(census(&img, 9).is_err()); // larger than the image
        assert!(census(&gray(13, 13, vec![0.0; 169]), 13).is_err()); // > u128 capacity
    }

    #[test]
    fn hamming_is_a_metric_on_random_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (a, b, c): (u128, u128, u128) = (rng.random(), rng.random(), rng.random());
            assert_eq!(hamming(a, b), hamming(b, a));
            assert_eq!(hamming(a, a), 0);
            assert!(hamming(a, c) <= hamming(a, b) + hamming(b, c));
        }
    }

    #[test]
    fn gradient_of_ramp_and_constant() {
        let w = 6;
        let ramp = gray(w, 2, (0..2 * w).map(|i| 2.0 * (i % w) as f32).collect());
        let g = gradient_x(&ramp);
        for y in 0..2 {
            for x in 1..w - 1 {
                assert_eq!(g.at(x, y), 2.0);
            }
            // one-sided borders on an exact ramp agree with the slope
            assert_eq!(g.at(0, y), 2.0);
            assert_eq!(g.at(w - 1, y), 2.0);
        }
        let flat = gray(4, 3, vec![9.0; 12]);
        assert!(gradient_x(&flat).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_single_column_is_zero() {
        let img = gray(1, 4, vec![3.0, 1.0, 4.0, 1.0]);
        assert!(gradient_x(&img).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_pair_is_free_at_zero_disparity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let img = random_gray(10, 8, 255.0, &mut rng);
        let cv = build_cost_volume(&img, &img, 4, &CostParams::default(), Reference::Left).unwrap();
        for y in 0..8 {
            for x in 0..10 {
                assert_eq!(cv.at(x, y, 0), 0.0);
            }
        }
    }

    // left(x) = base(x), right(x) = base(x + shift) so the true disparity
    // of every left pixel is `shift`
    fn shifted_pair(w: usize, h: usize, shift: usize, rng: &mut ChaCha8Rng) -> (GrayF32Image, GrayF32Image) {
        let base = random_gray(w + shift, h, 255.0, rng);
        let left = gray(w, h, (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| base.at(x, y)).collect());
        let right = gray(w, h, (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| base.at(x + shift, y)).collect());
        (left, right)
    }

    #[test]
    fn shifted_pair_minimizes_at_true_disparity() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (left, right) = shifted_pair(24, 10, 3, &mut rng);
        let cv = build_cost_volume(&left, &right, 8, &CostParams::default(), Reference::Left).unwrap();
        // interior: clear of the census margin and of x - d < 0
        for y in 2..8 {
            for x in 10..22 {
                let best = (0..8).min_by(|&a, &b| cv.at(x, y, a).total_cmp(&cv.at(x, y, b))).unwrap();
                assert_eq!(best, 3, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn out_of_view_cost_is_exact() {
        let img = gray(6, 6, vec![0.0; 36]);
        let params = CostParams::default();
        let cv = build_cost_volume(&img, &img, 4, &params, Reference::Left).unwrap();
        // x = 2, d = 3 -> x - d = -1
        assert_eq!(cv.at(2, 5, 3), params.out_of_view_cost());
        // right reference: x + d past the border
        let cvr = build_cost_volume(&img, &img, 4, &params, Reference::Right).unwrap();
        assert_eq!(cvr.at(4, 0, 2), params.out_of_view_cost());
    }

    #[test]
    fn costs_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let left = random_gray(12, 9, 255.0, &mut rng);
        let right = random_gray(12, 9, 255.0, &mut rng);
        let params = CostParams::default();
        let cv = build_cost_volume(&left, &right, 6, &params, Reference::Left).unwrap();
        let bound = params.in_view_bound().max(params.out_of_view_cost());
        assert!(cv.data().iter().all(|&c| c >= 0.0 && c <= bound));
    }

    #[test]
    fn right_reference_mirrors_left_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let left = random_gray(11, 7, 255.0, &mut rng);
        let right = random_gray(11, 7, 255.0, &mut rng);
        let params = CostParams::default();
        let levels = 5;
        let direct = build_cost_volume(&left, &right, levels, &params, Reference::Right).unwrap();

        let mirror = |img: &GrayF32Image| {
            gray(
                img.width(),
                img.height(),
                (0..img.height())
                    .flat_map(|y| (0..img.width()).rev().map(move |x| (x, y)))
                    .map(|(x, y)| img.at(x, y))
                    .collect(),
            )
        };
        let via_mirror =
            build_cost_volume(&mirror(&right), &mirror(&left), levels, &params, Reference::Left)
                .unwrap();
        for y in 0..7 {
            for x in 0..11 {
                for d in 0..levels {
                    assert_eq!(
                        direct.at(x, y, d),
                        via_mirror.at(10 - x, y, d),
                        "({x},{y},{d})"
                    );
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = gray(4, 4, vec![0.0; 16]);
        let b = gray(5, 4, vec![0.0; 20]);
        assert!(build_cost_volume(&a, &b, 4, &CostParams::default(), Reference::Left).is_err());
    }
}
