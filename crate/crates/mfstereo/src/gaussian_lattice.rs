//! Linear-time approximation of the all-pairs bilateral aggregation
//! `out_i = Σ_j exp(-|p_i - p_j|²/2) v_j` over position/color features,
//! via splat/blur/slice on a regular lattice over feature space: values
//! are splatted onto cell corners with multilinear weights, blurred with a
//! calibrated Gaussian tap stencil along each axis, and sliced back out.
//! Cell size is one feature sigma; the per-axis taps carry the variance
//! the splat and slice interpolation do not, so the composite response
//! matches the unnormalized kernel with k(i,i) = 1 to within a couple of
//! percent.
//!
//! [`exact_filter`] is the quadratic-cost reference the lattice is tested
//! against.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image_io::RgbU8Image;

/// Bandwidths of the bilateral kernel: spatial sigma in pixels, color
/// sigma in 8-bit intensity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub sigma_x: f32,
    pub sigma_f: f32,
}

impl FeatureSpec {
    pub fn new(sigma_x: f32, sigma_f: f32) -> Result<Self> {
        if !(sigma_x.is_finite() && sigma_x > 0.0 && sigma_f.is_finite() && sigma_f > 0.0) {
            return Err(Error::InvalidParam(format!(
                "feature bandwidths must be positive, got sigma_x={sigma_x}, sigma_f={sigma_f}"
            )));
        }
        Ok(Self { sigma_x, sigma_f })
    }
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { sigma_x: 5.0, sigma_f: 55.0 }
    }
}

/// Feature dimension used for images: (x, y, r, g, b), each divided by
/// its bandwidth.
pub const IMAGE_FEATURE_DIM: usize = 5;

/// Row-major N x 5 feature matrix for an image under `spec`.
pub fn image_features(img: &RgbU8Image, spec: &FeatureSpec) -> Vec<f32> {
    let mut out = Vec::with_capacity(img.len() * IMAGE_FEATURE_DIM);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(x, y);
            out.push(x as f32 / spec.sigma_x);
            out.push(y as f32 / spec.sigma_x);
            out.push(f32::from(p[0]) / spec.sigma_f);
            out.push(f32::from(p[1]) / spec.sigma_f);
            out.push(f32::from(p[2]) / spec.sigma_f);
        }
    }
    out
}

/// Anything that can aggregate a per-pixel value field under the bilateral
/// kernel, self term included. The lattice implements this approximately;
/// [`ExactGaussianFilter`] exactly (and slowly). Outputs are f64 so the
/// exact path keeps full precision for the inference oracle checks.
pub trait LabelFilter: Sync {
    fn num_points(&self) -> usize;

    /// `out_i ~= Σ_j k(i,j) v_j`, including j = i with k(i,i) = 1.
    fn filter(&self, values: &[f32]) -> Result<Vec<f64>>;
}

const EXACT_FILTER_LIMIT: usize = 10_000;

/// Exact quadratic-cost sum `out_i = Σ_j exp(-|p_i - p_j|²/2) v_j`.
/// The plain double loop in f64, kept as the test oracle for the lattice
/// and the small-instance inference checks.
pub fn exact_filter(features: &[f32], dim: usize, values: &[f32]) -> Result<Vec<f64>> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::InvalidParam(format!(
            "feature buffer of {} values is not a multiple of dim {dim}",
            features.len()
        )));
    }
    let n = features.len() / dim;
    if n > EXACT_FILTER_LIMIT {
        return Err(Error::TooLarge { what: "exact_filter", limit: EXACT_FILTER_LIMIT, got: n });
    }
    if values.len() != n {
        return Err(Error::InvalidParam(format!(
            "value field has {} entries, expected {n}",
            values.len()
        )));
    }
    let mut out = vec![0.0f64; n];
    for i in 0..n {
        let fi = &features[i * dim..(i + 1) * dim];
        let mut acc = 0.0f64;
        for j in 0..n {
            let fj = &features[j * dim..(j + 1) * dim];
            let mut d2 = 0.0f64;
            for c in 0..dim {
                let d = f64::from(fi[c]) - f64::from(fj[c]);
                d2 += d * d;
            }
            acc += (-0.5 * d2).exp() * f64::from(values[j]);
        }
        out[i] = acc;
    }
    Ok(out)
}

/// [`LabelFilter`] wrapper around [`exact_filter`], used to substitute the
/// lattice in oracle tests.
pub struct ExactGaussianFilter {
    features: Vec<f32>,
    dim: usize,
}

impl ExactGaussianFilter {
    pub fn new(features: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || features.is_empty() || features.len() % dim != 0 {
            return Err(Error::InvalidParam("bad feature buffer for exact filter".into()));
        }
        let n = features.len() / dim;
        if n > EXACT_FILTER_LIMIT {
            return Err(Error::TooLarge { what: "exact_filter", limit: EXACT_FILTER_LIMIT, got: n });
        }
        Ok(Self { features, dim })
    }

    pub fn from_image(img: &RgbU8Image, spec: &FeatureSpec) -> Result<Self> {
        Self::new(image_features(img, spec), IMAGE_FEATURE_DIM)
    }
}

impl LabelFilter for ExactGaussianFilter {
    fn num_points(&self) -> usize {
        self.features.len() / self.dim
    }

    fn filter(&self, values: &[f32]) -> Result<Vec<f64>> {
        check_values(values, self.num_points())?;
        exact_filter(&self.features, self.dim, values)
    }
}

fn check_values(values: &[f32], n: usize) -> Result<()> {
    if values.len() != n {
        return Err(Error::InvalidParam(format!(
            "value field has {} entries, expected {n}",
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParam(format!("non-finite value at index {i}")));
    }
    Ok(())
}

/// Grid cell size in units of the feature sigma. Smaller cells sample the
/// kernel more finely (better accuracy, more memory); the blur taps carry
/// whatever variance the cell size and interpolation do not.
const CELL_SIZE: f64 = 0.75;

/// Blur tap radius in cells; truncated taps beyond it carry under 1e-4
/// of the stencil mass at [`CELL_SIZE`].
const TAP_RADIUS: usize = 5;

/// Grid cells beyond this are refused rather than silently allocating
/// gigabytes (two f32 buffers per filter call).
const MAX_CELLS: usize = 1 << 26;

const MAX_DIM: usize = 8;

/// Splat/blur/slice lattice built once per guide image; filtering any
/// number of value fields against it is O(N + cells) each. The build is
/// single-threaded; filtering parallelizes internally over grid chunks,
/// so the lattice itself is read-only and shareable.
///
/// The pair response realized by splat/blur/slice is a bilinear
/// interpolation of the blurred profile between the two points'
/// fractional cell positions. The residual diagonal wobble has a
/// separable closed form, patched additively so k(i,i) = 1 holds
/// exactly.
pub struct GaussianLattice {
    num_points: usize,
    dim: usize,
    /// Cells per axis, covering the data bounding box.
    grid_dims: Vec<usize>,
    /// Row-major strides matching `grid_dims`.
    strides: Vec<usize>,
    cells: usize,
    /// Per point: flat index of the floor corner cell.
    base_cell: Vec<usize>,
    /// Per point x dim: fractional position inside the cell, in [0, 1).
    fracs: Vec<f32>,
    /// Per point: 1 minus the raw operator diagonal.
    diag_deficit: Vec<f32>,
    /// One-sided blur taps, index 0 = center.
    taps: [f32; TAP_RADIUS + 1],
}

impl GaussianLattice {
    /// Build from a row-major N x dim feature matrix already divided by
    /// the kernel bandwidths (so the target kernel is unit-sigma).
    pub fn new(features: &[f32], dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidParam(format!("feature dim {dim} out of range 1..={MAX_DIM}")));
        }
        if features.is_empty() || features.len() % dim != 0 {
            return Err(Error::InvalidParam(format!(
                "feature buffer of {} values is not a positive multiple of dim {dim}",
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("non-finite feature at index {i}")));
        }
        let n = features.len() / dim;

        let h = CELL_SIZE as f32;
        let mut lo = vec![f32::INFINITY; dim];
        let mut hi = vec![f32::NEG_INFINITY; dim];
        for p in 0..n {
            for a in 0..dim {
                let v = features[p * dim + a];
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        // no padding: mass blurred past the data's bounding box can never
        // reach a sliced cell again (later passes move along other axes),
        // so the blur simply clips at the grid edge
        let mut grid_dims = vec![0usize; dim];
        let mut cells = 1usize;
        for a in 0..dim {
            let extent = ((hi[a] - lo[a]) / h) as usize + 2; // floor cell and +1 corner
            grid_dims[a] = extent;
            cells = cells.checked_mul(grid_dims[a]).ok_or(Error::TooLarge {
                what: "gaussian lattice grid",
                limit: MAX_CELLS,
                got: usize::MAX,
            })?;
        }
        if cells > MAX_CELLS {
            return Err(Error::TooLarge { what: "gaussian lattice grid", limit: MAX_CELLS, got: cells });
        }
        let mut strides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * grid_dims[a + 1];
        }

        let mut base_cell = Vec::with_capacity(n);
        let mut fracs = Vec::with_capacity(n * dim);
        for p in 0..n {
            let mut base = 0usize;
            for a in 0..dim {
                let t = (features[p * dim + a] - lo[a]) / h;
                let c = t.floor();
                fracs.push(t - c);
                base += (c as usize) * strides[a];
            }
            base_cell.push(base);
        }

        // per-axis taps: Gaussian in cell units carrying the variance the
        // splat/slice hats do not contribute (1/6 cell² each on average),
        // with total mass sqrt(2π)/h so the composite response
        // approximates exp(-Δ²/2) with unit peak
        let sigma_b2 = 1.0 / (CELL_SIZE * CELL_SIZE) - 1.0 / 3.0;
        let theta: f64 = (1..=TAP_RADIUS)
            .map(|t| (-((t * t) as f64) / (2.0 * sigma_b2)).exp())
            .sum::<f64>()
            .mul_add(2.0, 1.0);
        let amp = (2.0 * std::f64::consts::PI).sqrt() / (CELL_SIZE * theta);
        let mut taps = [0.0f32; TAP_RADIUS + 1];
        for (t, tap) in taps.iter_mut().enumerate() {
            *tap = (amp * (-((t * t) as f64) / (2.0 * sigma_b2)).exp()) as f32;
        }

        // closed-form diagonal of the raw operator: the blur is separable
        // and splat/slice corner offsets differ by 0 or 1 per axis, so
        // L_ii factors into per-axis 2x2 quadratic forms
        let diag_deficit: Vec<f32> = (0..n)
            .map(|p| {
                let mut g = 1.0f64;
                for a in 0..dim {
                    let f = f64::from(fracs[p * dim + a]);
                    let qf = ((1.0 - f) * (1.0 - f) + f * f) * f64::from(taps[0])
                        + 2.0 * f * (1.0 - f) * f64::from(taps[1]);
                    g *= qf;
                }
                (1.0 - g) as f32
            })
            .collect();

        Ok(Self { num_points: n, dim, grid_dims, strides, cells, base_cell, fracs, diag_deficit, taps })
    }

    /// Build from an image, one feature vector per pixel.
    pub fn from_image(img: &RgbU8Image, spec: &FeatureSpec) -> Result<Self> {
        Self::new(&image_features(img, spec), IMAGE_FEATURE_DIM)
    }

    /// Total grid cells.
    pub fn num_cells(&self) -> usize {
        self.cells
    }

    /// Corner offsets and multilinear weights of one point.
    #[inline]
    fn corners(&self, p: usize, mut visit: impl FnMut(usize, f32)) {
        let fr = &self.fracs[p * self.dim..(p + 1) * self.dim];
        let base = self.base_cell[p];
        for mask in 0..(1usize << self.dim) {
            let mut idx = base;
            let mut w = 1.0f32;
            for (a, &f) in fr.iter().enumerate() {
                if mask & (1 << a) != 0 {
                    idx += self.strides[a];
                    w *= f;
                } else {
                    w *= 1.0 - f;
                }
            }
            visit(idx, w);
        }
    }
}

/// Spec-named constructor: lattice over (x/σx, y/σx, r/σf, g/σf, b/σf).
pub fn build_lattice(img: &RgbU8Image, spec: &FeatureSpec) -> Result<GaussianLattice> {
    GaussianLattice::from_image(img, spec)
}

impl LabelFilter for GaussianLattice {
    fn num_points(&self) -> usize {
        self.num_points
    }

    fn filter(&self, values: &[f32]) -> Result<Vec<f64>> {
        check_values(values, self.num_points)?;

        // splat
        let mut grid = vec![0.0f32; self.cells];
        for (p, &v) in values.iter().enumerate() {
            self.corners(p, |idx, w| grid[idx] += w * v);
        }

        // blur each axis in turn, processing contiguous slabs of `stride`
        // cells so the inner loops vectorize; line ends clip
        #[inline]
        fn scale_slab(out: &mut [f32], src: &[f32], w: f32) {
            for (o, s) in out.iter_mut().zip(src) {
                *o = w * s;
            }
        }
        #[inline]
        fn add_slab(out: &mut [f32], src: &[f32], w: f32) {
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
        let mut scratch = vec![0.0f32; self.cells];
        for a in 0..self.dim {
            let stride = self.strides[a];
            let len = self.grid_dims[a];
            let taps = self.taps;
            let block = len * stride;
            if block == self.cells {
                // outermost axis: parallelize over the len slabs directly
                let src = &grid;
                scratch.par_chunks_mut(stride).enumerate().for_each(|(j, out)| {
                    scale_slab(out, &src[j * stride..][..stride], taps[0]);
                    for t in 1..=TAP_RADIUS {
                        if j >= t {
                            add_slab(out, &src[(j - t) * stride..][..stride], taps[t]);
                        }
                        if j + t < len {
                            add_slab(out, &src[(j + t) * stride..][..stride], taps[t]);
                        }
                    }
                });
            } else {
                scratch
                    .par_chunks_mut(block)
                    .zip(grid.par_chunks(block))
                    .for_each(|(oblk, iblk)| {
                        for j in 0..len {
                            let out = &mut oblk[j * stride..(j + 1) * stride];
                            scale_slab(out, &iblk[j * stride..][..stride], taps[0]);
                            for t in 1..=TAP_RADIUS {
                                if j >= t {
                                    add_slab(out, &iblk[(j - t) * stride..][..stride], taps[t]);
                                }
                                if j + t < len {
                                    add_slab(out, &iblk[(j + t) * stride..][..stride], taps[t]);
                                }
                            }
                        }
                    });
            }
            std::mem::swap(&mut grid, &mut scratch);
        }

        // slice, with the exact-diagonal patch
        let out: Vec<f64> = (0..self.num_points)
            .into_par_iter()
            .map(|p| {
                let mut acc = 0.0f32;
                self.corners(p, |idx, w| acc += w * grid[idx]);
                f64::from(acc) + f64::from(self.diag_deficit[p]) * f64::from(values[p])
            })
            .collect();
        Ok(out)
    }
}
