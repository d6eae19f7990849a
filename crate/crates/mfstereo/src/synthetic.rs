//! Random-dot stereogram generation with known piecewise-constant
//! disparity, for end-to-end tests and benchmarks. The right image is a
//! dot texture; the left image samples it through the ground-truth
//! disparity field, so every non-occluded left pixel has an exact match.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image_io::{DisparityMap, RgbU8Image};
use crate::post_processing::ValidityMask;

#[derive(Debug, Clone)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// Disparity level count the matcher should run with.
    pub levels: usize,
    pub background_disp: usize,
    /// Disparity of one large rectangular region.
    pub region_disp: usize,
    /// Disparity of the thin vertical bars.
    pub bar_disp: usize,
    pub num_bars: usize,
    pub bar_width: usize,
    /// Probability that a texture pixel is a random colored dot rather
    /// than the mid-gray background.
    pub dot_density: f64,
    /// Amplitude of uniform per-channel noise added to the left image.
    pub noise_amp: u8,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            levels: 16,
            background_disp: 2,
            region_disp: 5,
            bar_disp: 9,
            num_bars: 4,
            bar_width: 2,
            dot_density: 0.9,
            noise_amp: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StereoScene {
    pub left: RgbU8Image,
    pub right: RgbU8Image,
    /// Left-reference ground truth; all pixels finite.
    pub gt: DisparityMap,
    /// Non-occluded left pixels: visible in the right view and in-bounds.
    pub nocc: ValidityMask,
    /// Pixels belonging to the thin bars, for fine-structure scoring.
    pub thin: Vec<bool>,
    pub levels: usize,
}

fn dot(rng: &mut ChaCha8Rng, density: f64) -> [u8; 3] {
    if rng.random_bool(density) {
        [rng.random(), rng.random(), rng.random()]
    } else {
        [128, 128, 128]
    }
}

pub fn random_dot_scene(params: &SceneParams) -> StereoScene {
    let (w, h) = (params.width, params.height);
    assert!(params.bar_disp < params.levels && params.region_disp < params.levels);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // ground-truth disparity field, left view
    let mut gt = vec![params.background_disp as f32; w * h];
    let mut thin = vec![false; w * h];
    let rx0 = rng.random_range(w / 8..w / 3);
    let ry0 = rng.random_range(h / 8..h / 3);
    let rx1 = rng.random_range(w / 2..(7 * w) / 8);
    let ry1 = rng.random_range(h / 2..(7 * h) / 8);
    for y in ry0..ry1 {
        for x in rx0..rx1 {
            gt[y * w + x] = params.region_disp as f32;
        }
    }
    // bars start past the disparity range so they stay in view; images
    // too small for that simply get none
    if params.levels + params.bar_width < w {
        for _ in 0..params.num_bars {
            let bx = rng.random_range(params.levels..w - params.bar_width);
            let by0 = rng.random_range(0..h / 2);
            let by1 = rng.random_range(by0 + h / 4..h);
            for y in by0..by1.min(h) {
                for x in bx..bx + params.bar_width {
                    gt[y * w + x] = params.bar_disp as f32;
                    thin[y * w + x] = true;
                }
            }
        }
    }

    // right image: pure dot texture
    let mut right = Vec::with_capacity(w * h * 3);
    for _ in 0..w * h {
        right.extend_from_slice(&dot(&mut rng, params.dot_density));
    }
    let right = RgbU8Image::new(w, h, right).unwrap();

    // left image samples the right texture through the disparity field;
    // out-of-view pixels get fresh texture
    let mut left = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let d = gt[y * w + x] as usize;
            if x >= d {
                left.extend_from_slice(&right.pixel(x - d, y));
            } else {
                left.extend_from_slice(&dot(&mut rng, params.dot_density));
            }
        }
    }
    if params.noise_amp > 0 {
        let a = i16::from(params.noise_amp);
        for v in left.iter_mut() {
            let n = rng.random_range(-a..=a);
            *v = (i16::from(*v) + n).clamp(0, 255) as u8;
        }
    }
    let left = RgbU8Image::new(w, h, left).unwrap();

    // z-buffer per scanline: of all left pixels mapping to one right
    // column, only the largest disparity is visible
    let mut nocc = vec![false; w * h];
    for y in 0..h {
        let mut best = vec![-1i32; w];
        for x in 0..w {
            let d = gt[y * w + x] as i32;
            let xr = x as i32 - d;
            if xr >= 0 {
                best[xr as usize] = best[xr as usize].max(d);
            }
        }
        for x in 0..w {
            let d = gt[y * w + x] as i32;
            let xr = x as i32 - d;
            nocc[y * w + x] = xr >= 0 && best[xr as usize] == d;
        }
    }

    StereoScene {
        left,
        right,
        gt: DisparityMap::new(w, h, gt).unwrap(),
        nocc: ValidityMask::new(w, h, nocc).unwrap(),
        thin,
        levels: params.levels,
    }
}

/// Ten seeded thin-structure variants of the default scene: varying dot
/// density, noise, bar geometry.
pub fn scene_suite() -> Vec<SceneParams> {
    (0..10u64)
        .map(|i| SceneParams {
            seed: 100 + i,
            dot_density: 0.5 + 0.04 * i as f64,
            noise_amp: (i % 3) as u8 * 4,
            num_bars: 3 + (i as usize % 3),
            bar_width: 1 + (i as usize % 3),
            ..Default::default()
        })
        .collect()
}
