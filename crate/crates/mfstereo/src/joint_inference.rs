//! Parallel mean-field inference for the joint model: a fully-connected
//! Potts potential weighted by the bilateral kernel plus a locally
//! connected smoothness potential over the 4-neighborhood.
//!
//! One iteration runs four steps for all pixels simultaneously from the
//! previous iterate (double-buffered):
//!
//! 1. message passing: `Q~_i(l) = Σ_{j≠i} k(i,j) Q_j(l)` via the lattice
//!    filter (self term subtracted afterwards, k(i,i) = 1), and
//!    `P~_i(l) = Σ_{j in N(i)} w(i,j) Q_j(l)` over the 4-neighborhood;
//! 2. compatibility transform: Potts for the dense term,
//!    `Q^_i(d) = ω Σ_{l≠d} Q~_i(l)`, and the banded label multiplier
//!    (0 at equality, β at distance one, 1 beyond) for the local term;
//! 3. local update `U_i(d) = -ψ_u(i,d) - Q^_i(d) - P^_i(d)`;
//! 4. normalization by a max-subtracted softmax.
//!
//! Steps 2-4 are O(M) per pixel and the filtering is O(N) per label, so
//! an iteration costs O(MN).

use rayon::prelude::*;

use crate::cost_volume::CostVolume;
use crate::error::{Error, Result};
use crate::gaussian_lattice::{build_lattice, FeatureSpec, LabelFilter};
use crate::image_io::{DisparityMap, RgbU8Image};

/// Factored per-pixel label distributions Q_i(d), pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVolume {
    width: usize,
    height: usize,
    levels: usize,
    q: Vec<f32>,
}

impl BeliefVolume {
    /// Wrap a raw buffer, checking the simplex invariant: entries in
    /// [0, 1], every pixel row summing to 1 within 1e-6.
    pub fn new(width: usize, height: usize, levels: usize, q: Vec<f32>) -> Result<Self> {
        if q.len() != width * height * levels {
            return Err(Error::InvalidParam(format!(
                "belief buffer has {} values, expected {}",
                q.len(),
                width * height * levels
            )));
        }
        let v = Self { width, height, levels, q };
        for i in 0..width * height {
            let row = v.pixel_row(i);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidParam(format!("belief row {i} leaves [0,1]")));
            }
            let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParam(format!("belief row {i} sums to {sum}")));
            }
        }
        Ok(v)
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
        self.q[(y * self.width + x) * self.levels + d]
    }

    #[inline]
    pub fn pixel_row(&self, i: usize) -> &[f32] {
        &self.q[i * self.levels..(i + 1) * self.levels]
    }

    pub fn data(&self) -> &[f32] {
        &self.q
    }

    /// Largest per-entry difference, for convergence checks.
    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Mean per-pixel entropy in nats, for debug traces.
    pub fn mean_entropy(&self) -> f64 {
        let mut acc = 0.0f64;
        for i in 0..self.num_pixels() {
            for &p in self.pixel_row(i) {
                if p > 0.0 {
                    let p = f64::from(p);
                    acc -= p * p.ln();
                }
            }
        }
        acc / self.num_pixels() as f64
    }
}

/// Weight of the fully-connected Potts term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullPairParams {
    pub omega: f32,
}

impl FullPairParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::InvalidParam(format!("omega must be finite >= 0, got {}", self.omega)));
        }
        Ok(())
    }
}

impl Default for FullPairParams {
    fn default() -> Self {
        Self { omega: 1.0 }
    }
}

/// Locally-connected potential: per-edge weight class by color difference
/// and the banded label multiplier. Neighborhood is 4-connected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPairParams {
    pub omega_tilde: f32,
    /// Edge weight when the color difference is below mu1.
    pub lambda1: f32,
    /// Edge weight between mu1 and mu2.
    pub lambda2: f32,
    /// Edge weight at or above mu2.
    pub lambda3: f32,
    pub mu1: f32,
    pub mu2: f32,
    /// Penalty for |d_i - d_j| = 1; label steps of one are often
    /// discretization artifacts rather than true discontinuities.
    pub beta: f32,
}

impl LocalPairParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_tilde.is_finite() && self.omega_tilde >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "omega_tilde must be finite >= 0, got {}",
                self.omega_tilde
            )));
        }
        if !(self.mu1 < self.mu2) {
            return Err(Error::InvalidParam(format!(
                "color thresholds must satisfy mu1 < mu2, got {} vs {}",
                self.mu1, self.mu2
            )));
        }
        if !(self.lambda1 >= self.lambda2 && self.lambda2 >= self.lambda3 && self.lambda3 >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "edge weights must satisfy lambda1 >= lambda2 >= lambda3 >= 0, got {} {} {}",
                self.lambda1, self.lambda2, self.lambda3
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParam(format!("beta must be in [0,1], got {}", self.beta)));
        }
        Ok(())
    }

    /// Edge weight class for a summed absolute color difference.
    #[inline]
    pub fn weight_for_diff(&self, diff: f32) -> f32 {
        if diff < self.mu1 {
            self.lambda1
        } else if diff < self.mu2 {
            self.lambda2
        } else {
            self.lambda3
        }
    }
}

impl Default for LocalPairParams {
    fn default() -> Self {
        Self {
            omega_tilde: 1.0,
            lambda1: 3.5,
            lambda2: 3.0,
            lambda3: 1.0,
            mu1: 7.0,
            mu2: 15.0,
            beta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub iterations: usize,
    pub full: FullPairParams,
    pub local: LocalPairParams,
    pub feature: FeatureSpec,
    /// Stop early once the largest belief change drops below
    /// [`EARLY_EXIT_DELTA`].
    pub early_exit: bool,
}

/// Belief-change threshold for the optional early exit.
pub const EARLY_EXIT_DELTA: f32 = 1e-4;

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidParam("iterations must be >= 1".into()));
        }
        self.full.validate()?;
        self.local.validate()
    }
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            full: FullPairParams::default(),
            local: LocalPairParams::default(),
            feature: FeatureSpec::default(),
            early_exit: false,
        }
    }
}

/// Per-edge weights of the 4-connected neighborhood. Symmetric; stored
/// once per undirected edge.
#[derive(Debug, Clone)]
pub struct EdgeWeights {
    width: usize,
    height: usize,
    /// (width-1) * height weights between (x, y) and (x+1, y).
    horizontal: Vec<f32>,
    /// width * (height-1) weights between (x, y) and (x, y+1).
    vertical: Vec<f32>,
}

impl EdgeWeights {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn right_of(&self, x: usize, y: usize) -> f32 {
        self.horizontal[y * (self.width - 1) + x]
    }

    #[inline]
    pub fn below(&self, x: usize, y: usize) -> f32 {
        self.vertical[y * self.width + x]
    }

    /// Up to four (neighbor pixel index, weight) pairs of (x, y).
    pub fn neighbors(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let (w, h) = (self.width, self.height);
        let mut out = [(0usize, 0.0f32); 4];
        let mut n = 0;
        if y > 0 {
            out[n] = ((y - 1) * w + x, self.below(x, y - 1));
            n += 1;
        }
        if x > 0 {
            out[n] = (y * w + x - 1, self.right_of(x - 1, y));
            n += 1;
        }
        if x + 1 < w {
            out[n] = (y * w + x + 1, self.right_of(x, y));
            n += 1;
        }
        if y + 1 < h {
            out[n] = ((y + 1) * w + x, self.below(x, y));
            n += 1;
        }
        out.into_iter().take(n)
    }
}

/// Classify every 4-neighborhood edge of the guide image by its summed
/// absolute color difference: lambda1 below mu1, lambda2 below mu2,
/// lambda3 otherwise.
pub fn local_edge_weights(img: &RgbU8Image, params: &LocalPairParams) -> EdgeWeights {
    let (w, h) = (img.width(), img.height());
    let diff = |a: [u8; 3], b: [u8; 3]| -> f32 {
        let mut s = 0i32;
        for c in 0..3 {
            s += (i32::from(a[c]) - i32::from(b[c])).abs();
        }
        s as f32
    };
    let mut horizontal = Vec::with_capacity(w.saturating_sub(1) * h);
    let mut vertical = Vec::with_capacity(w * h.saturating_sub(1));
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            horizontal.push(params.weight_for_diff(diff(img.pixel(x, y), img.pixel(x + 1, y))));
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            vertical.push(params.weight_for_diff(diff(img.pixel(x, y), img.pixel(x, y + 1))));
        }
    }
    EdgeWeights { width: w, height: h, horizontal, vertical }
}

fn softmax_into(u: &[f64], out: &mut [f32]) -> bool {
    let mut mx = f64::NEG_INFINITY;
    for &v in u {
        if !v.is_finite() {
            return false;
        }
        mx = mx.max(v);
    }
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(u) {
        let e = (v - mx).exp();
        *o = e as f32;
        sum += e;
    }
    if !(sum.is_finite() && sum > 0.0) {
        return false;
    }
    for o in out.iter_mut() {
        *o = (f64::from(*o) / sum) as f32;
    }
    true
}

/// `Q_i(d) = exp(-ψ_u(i, d)) / Σ_l exp(-ψ_u(i, l))`, max-subtracted.
pub fn init_beliefs(cv: &CostVolume) -> BeliefVolume {
    let (n, m) = (cv.num_pixels(), cv.levels());
    let mut q = vec![0.0f32; n * m];
    q.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let costs = cv.pixel_row(i);
        let u: Vec<f64> = costs.iter().map(|&c| -f64::from(c)).collect();
        // costs are finite by CostVolume invariant
        softmax_into(&u, row);
    });
    BeliefVolume { width: cv.width(), height: cv.height(), levels: m, q }
}

/// Potts compatibility: `out[d] = omega * (Σ_l qt[l] - qt[d])`.
fn potts_compat(qt: &[f64], omega: f64, out: &mut [f64]) {
    let s: f64 = qt.iter().sum();
    for (o, &v) in out.iter_mut().zip(qt) {
        *o = omega * (s - v);
    }
}

/// Banded label compatibility: `out[d] = omega_t * (beta * (pt[d-1] +
/// pt[d+1]) + Σ_{|l-d|>1} pt[l])`, out-of-range labels contributing 0.
fn local_compat(pt: &[f64], omega_t: f64, beta: f64, out: &mut [f64]) {
    let s: f64 = pt.iter().sum();
    let m = pt.len();
    for d in 0..m {
        let lo = if d > 0 { pt[d - 1] } else { 0.0 };
        let hi = if d + 1 < m { pt[d + 1] } else { 0.0 };
        out[d] = omega_t * (beta * (lo + hi) + (s - pt[d] - lo - hi));
    }
}

/// One synchronous mean-field update of all pixels from the previous
/// iterate. The filter supplies the fully-connected message; substituting
/// [`crate::ExactGaussianFilter`] reproduces the literal update equation.
pub fn mf_iteration(
    q: &BeliefVolume,
    cv: &CostVolume,
    filter: &dyn LabelFilter,
    weights: &EdgeWeights,
    cfg: &InferenceConfig,
) -> Result<BeliefVolume> {
    cfg.validate()?;
    let (w, h, m) = (q.width, q.height, q.levels);
    let n = w * h;
    if cv.width() != w || cv.height() != h || cv.levels() != m {
        return Err(Error::DimensionMismatch {
            what: "cost volume vs beliefs",
            left_w: cv.width(),
            left_h: cv.height(),
            right_w: w,
            right_h: h,
        });
    }
    if weights.width != w || weights.height != h {
        return Err(Error::DimensionMismatch {
            what: "edge weights vs beliefs",
            left_w: weights.width,
            left_h: weights.height,
            right_w: w,
            right_h: h,
        });
    }
    if filter.num_points() != n {
        return Err(Error::InvalidParam(format!(
            "filter built for {} points, beliefs have {n}",
            filter.num_points()
        )));
    }

    // step 1a: dense message per label, self term subtracted
    let planes: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|l| {
            let col: Vec<f32> = (0..n).map(|i| q.q[i * m + l]).collect();
            let mut filtered = filter.filter(&col)?;
            for (f, &qi) in filtered.iter_mut().zip(&col) {
                *f -= f64::from(qi);
            }
            Ok(filtered)
        })
        .collect::<Result<_>>()?;

    // pixel-major transpose of the dense messages
    let mut qtilde = vec![0.0f64; n * m];
    qtilde.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        for (l, plane) in planes.iter().enumerate() {
            row[l] = plane[i];
        }
    });
    drop(planes);

    let omega = f64::from(cfg.full.omega);
    let omega_t = f64::from(cfg.local.omega_tilde);
    let beta = f64::from(cfg.local.beta);

    let mut out = vec![0.0f32; n * m];
    out.par_chunks_mut(w * m)
        .enumerate()
        .try_for_each(|(y, orow)| -> Result<()> {
            let mut ptilde = vec![0.0f64; m];
            let mut qhat = vec![0.0f64; m];
            let mut phat = vec![0.0f64; m];
            let mut u = vec![0.0f64; m];
            for x in 0..w {
                let i = y * w + x;

                // step 1b: local message over the 4-neighborhood
                ptilde.fill(0.0);
                for (j, wgt) in weights.neighbors(x, y) {
                    let wgt = f64::from(wgt);
                    let nrow = &q.q[j * m..(j + 1) * m];
                    for (p, &qv) in ptilde.iter_mut().zip(nrow) {
                        *p += wgt * f64::from(qv);
                    }
                }

                // step 2: compatibility transforms
                potts_compat(&qtilde[i * m..(i + 1) * m], omega, &mut qhat);
                local_compat(&ptilde, omega_t, beta, &mut phat);

                // step 3: local update
                let costs = cv.pixel_row(i);
                for d in 0..m {
                    u[d] = -f64::from(costs[d]) - qhat[d] - phat[d];
                }

                // step 4: normalize
                if !softmax_into(&u, &mut orow[x * m..(x + 1) * m]) {
                    return Err(Error::NonFinite { pixel: i });
                }
            }
            Ok(())
        })?;

    Ok(BeliefVolume { width: w, height: h, levels: m, q: out })
}

/// Run `cfg.iterations` mean-field updates with a caller-provided filter
/// and edge weights. `on_iteration` observes each new iterate (debug
/// traces, normalization checks).
pub fn run_inference_with_filter(
    cv: &CostVolume,
    filter: &dyn LabelFilter,
    weights: &EdgeWeights,
    cfg: &InferenceConfig,
    mut on_iteration: impl FnMut(usize, &BeliefVolume),
) -> Result<BeliefVolume> {
    cfg.validate()?;
    let mut q = init_beliefs(cv);
    for iter in 0..cfg.iterations {
        let next = mf_iteration(&q, cv, filter, weights, cfg)?;
        let delta = if cfg.early_exit { q.max_abs_diff(&next) } else { f32::INFINITY };
        q = next;
        on_iteration(iter, &q);
        if cfg.early_exit && delta < EARLY_EXIT_DELTA {
            break;
        }
    }
    Ok(q)
}

/// Full inference for a cost volume guided by `img`: builds the edge
/// weights and the bilateral lattice, then iterates the mean-field update
/// a fixed number of times.
pub fn run_inference(cv: &CostVolume, img: &RgbU8Image, cfg: &InferenceConfig) -> Result<BeliefVolume> {
    cfg.validate()?;
    if img.width() != cv.width() || img.height() != cv.height() {
        return Err(Error::DimensionMismatch {
            what: "guide image vs cost volume",
            left_w: img.width(),
            left_h: img.height(),
            right_w: cv.width(),
            right_h: cv.height(),
        });
    }
    let weights = local_edge_weights(img, &cfg.local);
    let lattice = build_lattice(img, &cfg.feature)?;
    run_inference_with_filter(cv, &lattice, &weights, cfg, |_, _| {})
}

/// Winner-take-all readout: `d_i = argmax_d Q_i(d)`, ties broken toward
/// the smaller disparity.
pub fn wta(q: &BeliefVolume) -> DisparityMap {
    let mut data = Vec::with_capacity(q.num_pixels());
    for i in 0..q.num_pixels() {
        let row = q.pixel_row(i);
        let mut best = 0usize;
        for (d, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = d;
            }
        }
        data.push(best as f32);
    }
    DisparityMap::new(q.width, q.height, data).expect("argmax labels are valid disparities")
}

const EXACT_ENERGY_LIMIT: usize = 10_000;

/// Banded label multiplier of the local potential.
#[inline]
fn phi_tilde(di: usize, dj: usize, beta: f64) -> f64 {
    match di.abs_diff(dj) {
        0 => 0.0,
        1 => beta,
        _ => 1.0,
    }
}

/// Exact Gibbs energy of a labeling: unary term plus the fully-connected
/// Potts term over unordered pixel pairs (kernel evaluated exactly,
/// O(N²)) plus the local term over all directed neighbor pairs.
pub fn gibbs_energy(
    d: &DisparityMap,
    cv: &CostVolume,
    img: &RgbU8Image,
    cfg: &InferenceConfig,
) -> Result<f64> {
    let (w, h) = (cv.width(), cv.height());
    let n = w * h;
    if d.width() != w || d.height() != h || img.width() != w || img.height() != h {
        return Err(Error::DimensionMismatch {
            what: "labeling vs cost volume",
            left_w: d.width(),
            left_h: d.height(),
            right_w: w,
            right_h: h,
        });
    }
    if n > EXACT_ENERGY_LIMIT {
        return Err(Error::TooLarge { what: "gibbs_energy", limit: EXACT_ENERGY_LIMIT, got: n });
    }
    let labels: Vec<usize> = d
        .data()
        .iter()
        .map(|&v| {
            if v.is_finite() && v >= 0.0 && (v as usize) < cv.levels() {
                Ok(v as usize)
            } else {
                Err(Error::InvalidParam(format!("labeling has unusable disparity {v}")))
            }
        })
        .collect::<Result<_>>()?;

    let mut energy = 0.0f64;
    for (i, &di) in labels.iter().enumerate() {
        energy += f64::from(cv.pixel_row(i)[di]);
    }

    if cfg.full.omega > 0.0 {
        let feats = crate::gaussian_lattice::image_features(img, &cfg.feature);
        let dim = crate::gaussian_lattice::IMAGE_FEATURE_DIM;
        let omega = f64::from(cfg.full.omega);
        for i in 0..n {
            let fi = &feats[i * dim..(i + 1) * dim];
            for j in (i + 1)..n {
                if labels[i] == labels[j] {
                    continue;
                }
                let fj = &feats[j * dim..(j + 1) * dim];
                let mut d2 = 0.0f64;
                for c in 0..dim {
                    let dd = f64::from(fi[c]) - f64::from(fj[c]);
                    d2 += dd * dd;
                }
                energy += omega * (-0.5 * d2).exp();
            }
        }
    }

    if cfg.local.omega_tilde > 0.0 {
        let weights = local_edge_weights(img, &cfg.local);
        let omega_t = f64::from(cfg.local.omega_tilde);
        let beta = f64::from(cfg.local.beta);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                for (j, wgt) in weights.neighbors(x, y) {
                    energy += omega_t * f64::from(wgt) * phi_tilde(labels[i], labels[j], beta);
                }
            }
        }
    }

    Ok(energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_volume::CostParams;
    use crate::gaussian_lattice::{image_features, ExactGaussianFilter, IMAGE_FEATURE_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RgbU8Image {
        RgbU8Image::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    fn random_cost_volume(w: usize, h: usize, m: usize, hi: f32, rng: &mut ChaCha8Rng) -> CostVolume {
        let cost = (0..w * h * m).map(|_| rng.random_range(0.0..hi)).collect();
        CostVolume::new(w, h, m, cost).unwrap()
    }

    fn assert_rows_normalized(q: &BeliefVolume) {
        for i in 0..q.num_pixels() {
            let sum: f64 = q.pixel_row(i).iter().map(|&p| f64::from(p)).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
            assert!(q.pixel_row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn init_uniform_for_equal_costs() {
        let cv = CostVolume::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let q = init_beliefs(&cv);
        assert_eq!(q.pixel_row(0), &[0.5, 0.5]);
    }

    #[test]
    fn init_softmax_hand_value() {
        let cv = CostVolume::new(1, 1, 2, vec![0.0, 3.0f32.ln()]).unwrap();
        let q = init_beliefs(&cv);
        assert!((q.at(0, 0, 0) - 0.75).abs() < 1e-6);
        assert!((q.at(0, 0, 1) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn init_rows_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cv = random_cost_volume(7, 5, 9, 30.0, &mut rng);
        assert_rows_normalized(&init_beliefs(&cv));
    }

    #[test]
    fn init_is_shift_invariant_per_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 6;
        let costs: Vec<f32> = (0..m).map(|_| rng.random_range(0i32..20) as f32).collect();
        let shifted: Vec<f32> = costs.iter().map(|c| c + 5.0).collect();
        let a = init_beliefs(&CostVolume::new(1, 1, m, costs).unwrap());
        let b = init_beliefs(&CostVolume::new(1, 1, m, shifted).unwrap());
        for d in 0..m {
            assert_eq!(a.at(0, 0, d).to_bits(), b.at(0, 0, d).to_bits());
        }
    }

    #[test]
    fn edge_weight_classes_follow_color_difference() {
        let p = LocalPairParams::default();
        // identical colors, diff 0 < 7
        assert_eq!(p.weight_for_diff(0.0), 3.5);
        // diff 10 in [7, 15)
        assert_eq!(p.weight_for_diff(10.0), 3.0);
        // diff 200 >= 15
        assert_eq!(p.weight_for_diff(200.0), 1.0);

        // and through an actual image: pixels (0,0)=(10,10,10), (1,0)=(13,13,14)
        let img = RgbU8Image::new(2, 1, vec![10, 10, 10, 13, 13, 14]).unwrap();
        let ew = local_edge_weights(&img, &p);
        assert_eq!(ew.right_of(0, 0), 3.0); // diff = 3+3+4 = 10
    }

    #[test]
    fn potts_identity_holds_exactly() {
        // dyadic inputs make the identity Q^(d) + ω Q~(d) = ω Σ_l Q~(l) exact
        let qt = [0.25f64, 0.5, 1.0, 2.0];
        let omega = 2.0;
        let mut qhat = [0.0f64; 4];
        potts_compat(&qt, omega, &mut qhat);
        let s: f64 = qt.iter().sum();
        for d in 0..4 {
            assert_eq!(qhat[d] + omega * qt[d], omega * s);
        }
    }

    #[test]
    fn local_compat_matches_naive_double_sum() {
        let pt = [0.5f64, 0.25, 1.0, 0.125, 2.0];
        let (omega_t, beta) = (1.5f64, 0.5f64);
        let mut phat = [0.0f64; 5];
        local_compat(&pt, omega_t, beta, &mut phat);
        for d in 0..5 {
            let naive: f64 = (0..5).map(|l| phi_tilde(d, l, beta) * pt[l]).sum();
            assert_eq!(phat[d], omega_t * naive, "label {d}");
        }
    }

    #[test]
    fn zero_pairwise_weights_reduce_to_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(6, 4, &mut rng);
        let cv = random_cost_volume(6, 4, 5, 25.0, &mut rng);
        let cfg = InferenceConfig {
            iterations: 3,
            full: FullPairParams { omega: 0.0 },
            local: LocalPairParams { omega_tilde: 0.0, ..Default::default() },
            ..Default::default()
        };
        let q = run_inference(&cv, &img, &cfg).unwrap();
        let q0 = init_beliefs(&cv);
        assert_eq!(q.data().len(), q0.data().len());
        for (a, b) in q.data().iter().zip(q0.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // and WTA equals the unary argmin
        let d = wta(&q);
        for i in 0..cv.num_pixels() {
            let row = cv.pixel_row(i);
            let amin =
                (0..row.len()).min_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(d.data()[i] as usize, amin, "pixel {i}");
        }
    }

    /// Literal update equation: for every pixel and label, exponentiate
    /// the negated unary plus pairwise expectations with the kernel and
    /// multiplier written out as plain double sums, then normalize.
    fn literal_update(
        q: &BeliefVolume,
        cv: &CostVolume,
        img: &RgbU8Image,
        cfg: &InferenceConfig,
    ) -> Vec<f64> {
        let (w, h, m) = (q.width(), q.height(), q.levels());
        let n = w * h;
        let feats = image_features(img, &cfg.feature);
        let dim = IMAGE_FEATURE_DIM;
        let kernel = |i: usize, j: usize| -> f64 {
            let mut d2 = 0.0f64;
            for c in 0..dim {
                let d = f64::from(feats[i * dim + c]) - f64::from(feats[j * dim + c]);
                d2 += d * d;
            }
            (-0.5 * d2).exp()
        };
        let params = &cfg.local;
        let wtilde = |a: usize, b: usize| -> f64 {
            let (ax, ay) = (a % w, a / w);
            let (bx, by) = (b % w, b / w);
            let pa = img.pixel(ax, ay);
            let pb = img.pixel(bx, by);
            let diff = (0..3).map(|c| (i32::from(pa[c]) - i32::from(pb[c])).abs()).sum::<i32>();
            f64::from(params.weight_for_diff(diff as f32))
        };
        let mut out = vec![0.0f64; n * m];
        for i in 0..n {
            let (x, y) = (i % w, i / w);
            let mut u = vec![0.0f64; m];
            for d in 0..m {
                let mut dense = 0.0f64;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let k = kernel(i, j);
                    for l in 0..m {
                        if l != d {
                            dense += k * f64::from(q.at(j % w, j / w, l));
                        }
                    }
                }
                let mut local = 0.0f64;
                let mut neighbors = Vec::new();
                if y > 0 {
                    neighbors.push(i - w);
                }
                if x > 0 {
                    neighbors.push(i - 1);
                }
                if x + 1 < w {
                    neighbors.push(i + 1);
                }
                if y + 1 < h {
                    neighbors.push(i + w);
                }
                for &j in &neighbors {
                    for l in 0..m {
                        local += wtilde(i, j)
                            * phi_tilde(d, l, f64::from(params.beta))
                            * f64::from(q.at(j % w, j / w, l));
                    }
                }
                u[d] = -f64::from(cv.pixel_row(i)[d])
                    - f64::from(cfg.full.omega) * dense
                    - f64::from(params.omega_tilde) * local;
            }
            let mx = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = u.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = exps.iter().sum();
            for d in 0..m {
                out[i * m + d] = exps[d] / s;
            }
        }
        out
    }

    #[test]
    fn iteration_matches_literal_update_with_exact_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, h, m) = (4, 4, 3);
        let img = random_image(w, h, &mut rng);
        let cv = random_cost_volume(w, h, m, 20.0, &mut rng);
        let cfg = InferenceConfig {
            iterations: 1,
            full: FullPairParams { omega: 0.8 },
            local: LocalPairParams { omega_tilde: 0.6, ..Default::default() },
            ..Default::default()
        };
        let filter = ExactGaussianFilter::from_image(&img, &cfg.feature).unwrap();
        let weights = local_edge_weights(&img, &cfg.local);
        let mut q = init_beliefs(&cv);
        for _ in 0..2 {
            let next = mf_iteration(&q, &cv, &filter, &weights, &cfg).unwrap();
            let oracle = literal_update(&q, &cv, &img, &cfg);
            for (i, (&got, want)) in next.data().iter().zip(&oracle).enumerate() {
                assert!(
                    (f64::from(got) - want).abs() < 1e-5,
                    "entry {i}: {got} vs {want}"
                );
            }
            assert_rows_normalized(&next);
            q = next;
        }
    }

    #[test]
    fn uniform_scene_respects_symmetry() {
        // constant color, uniform unary: after one update from the
        // uniform init every interior pixel has seen the same messages,
        // and grid mirror symmetry holds at every iteration
        let (w, h, m) = (6, 5, 4);
        let img = RgbU8Image::new(w, h, vec![120; w * h * 3]).unwrap();
        let cv = CostVolume::new(w, h, m, vec![1.0; w * h * m]).unwrap();
        let cfg = InferenceConfig { iterations: 1, ..Default::default() };
        let filter = ExactGaussianFilter::from_image(&img, &cfg.feature).unwrap();
        let weights = local_edge_weights(&img, &cfg.local);
        let q = run_inference_with_filter(&cv, &filter, &weights, &cfg, |_, next| {
            assert_rows_normalized(next);
        })
        .unwrap();
        let reference = q.pixel_row(w + 1).to_vec();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let row = q.pixel_row(y * w + x);
                for d in 0..m {
                    assert!(
                        (row[d] - reference[d]).abs() < 1e-6,
                        "pixel ({x},{y}) label {d}: {} vs {}",
                        row[d],
                        reference[d]
                    );
                }
            }
        }

        // horizontal mirror pairs stay equal across further iterations
        let cfg3 = InferenceConfig { iterations: 3, ..Default::default() };
        let q3 = run_inference_with_filter(&cv, &filter, &weights, &cfg3, |_, _| {}).unwrap();
        for y in 0..h {
            for x in 0..w {
                let a = q3.pixel_row(y * w + x);
                let b = q3.pixel_row(y * w + (w - 1 - x));
                for d in 0..m {
                    assert!((a[d] - b[d]).abs() < 1e-6, "mirror pair ({x},{y}) label {d}");
                }
            }
        }

        // with the dense term only, label symmetry holds and the
        // distribution stays uniform everywhere
        let cfg_fcm = InferenceConfig {
            iterations: 3,
            local: LocalPairParams { omega_tilde: 0.0, ..Default::default() },
            ..Default::default()
        };
        let qf = run_inference_with_filter(&cv, &filter, &weights, &cfg_fcm, |_, _| {}).unwrap();
        for (i, &p) in qf.data().iter().enumerate() {
            assert!((p - 1.0 / m as f32).abs() < 1e-6, "entry {i} = {p}");
        }
    }

    #[test]
    fn early_exit_stops_once_beliefs_settle() {
        // with both pairwise weights zero the first update reproduces the
        // init exactly, so the change threshold triggers immediately
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let img = random_image(5, 4, &mut rng);
        let cv = random_cost_volume(5, 4, 3, 10.0, &mut rng);
        let cfg = InferenceConfig {
            iterations: 6,
            early_exit: true,
            full: FullPairParams { omega: 0.0 },
            local: LocalPairParams { omega_tilde: 0.0, ..Default::default() },
            ..Default::default()
        };
        let filter = ExactGaussianFilter::from_image(&img, &cfg.feature).unwrap();
        let weights = local_edge_weights(&img, &cfg.local);
        let mut iterations_seen = 0;
        run_inference_with_filter(&cv, &filter, &weights, &cfg, |_, _| iterations_seen += 1)
            .unwrap();
        assert_eq!(iterations_seen, 1);
    }

    #[test]
    fn random_dot_stereogram_recovers_uniform_shift() {
        let scene = crate::synthetic::random_dot_scene(&crate::synthetic::SceneParams {
            width: 48,
            height: 40,
            levels: 8,
            background_disp: 3,
            region_disp: 3,
            bar_disp: 3,
            num_bars: 0,
            seed: 12,
            ..Default::default()
        });
        let gl = crate::image_io::to_gray(&scene.left);
        let gr = crate::image_io::to_gray(&scene.right);
        let cv = crate::cost_volume::build_cost_volume(
            &gl,
            &gr,
            8,
            &CostParams::default(),
            crate::cost_volume::Reference::Left,
        )
        .unwrap();
        let q = run_inference(&cv, &scene.left, &InferenceConfig::default()).unwrap();
        let d = wta(&q);
        let hits = d.data().iter().filter(|&&v| v == 3.0).count();
        assert!(
            hits as f64 / d.data().len() as f64 >= 0.9,
            "{hits}/{} pixels at the true shift",
            d.data().len()
        );
    }

    #[test]
    fn mf_rejects_iteration_count_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_image(3, 3, &mut rng);
        let cv = random_cost_volume(3, 3, 2, 5.0, &mut rng);
        let cfg = InferenceConfig { iterations: 0, ..Default::default() };
        assert!(run_inference(&cv, &img, &cfg).is_err());
    }

    #[test]
    fn wta_picks_argmax_with_low_tie_break() {
        let q = BeliefVolume::new(2, 1, 3, vec![0.1, 0.7, 0.2, 0.5, 0.5, 0.0]).unwrap();
        let d = wta(&q);
        assert_eq!(d.at(0, 0), 1.0);
        assert_eq!(d.at(1, 0), 0.0); // exact tie -> smaller disparity
    }

    #[test]
    fn unary_only_energy_is_cost_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let img = random_image(4, 3, &mut rng);
        let cv = random_cost_volume(4, 3, 4, 10.0, &mut rng);
        let cfg = InferenceConfig {
            full: FullPairParams { omega: 0.0 },
            local: LocalPairParams { omega_tilde: 0.0, ..Default::default() },
            ..Default::default()
        };
        let d = wta(&init_beliefs(&cv));
        let e = gibbs_energy(&d, &cv, &img, &cfg).unwrap();
        let expect: f64 = (0..12)
            .map(|i| f64::from(cv.pixel_row(i)[d.data()[i] as usize]))
            .sum();
        assert!((e - expect).abs() < 1e-9);
    }

    #[test]
    fn equal_labels_have_zero_pairwise_energy() {
        let img = RgbU8Image::new(2, 1, vec![10, 20, 30, 200, 100, 50]).unwrap();
        let cv = CostVolume::new(2, 1, 3, vec![0.0; 6]).unwrap();
        let cfg = InferenceConfig::default();
        let d = DisparityMap::new(2, 1, vec![1.0, 1.0]).unwrap();
        let e = gibbs_energy(&d, &cv, &img, &cfg).unwrap();
        assert_eq!(e, 0.0);
        // and a differing pair pays both potentials
        let d2 = DisparityMap::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(gibbs_energy(&d2, &cv, &img, &cfg).unwrap() > 0.0);
    }

    #[test]
    fn mean_field_shift_invariance_extends_to_iterations() {
        // adding a constant to one pixel's unary row changes nothing
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (w, h, m) = (4, 3, 4);
        let img = random_image(w, h, &mut rng);
        let base: Vec<f32> = (0..w * h * m).map(|_| rng.random_range(0i32..30) as f32).collect();
        let mut shifted = base.clone();
        for d in 0..m {
            shifted[5 * m + d] += 7.0;
        }
        let cva = CostVolume::new(w, h, m, base).unwrap();
        let cvb = CostVolume::new(w, h, m, shifted).unwrap();
        let ia = init_beliefs(&cva);
        let ib = init_beliefs(&cvb);
        for (a, b) in ia.data().iter().zip(ib.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let cfg = InferenceConfig { iterations: 1, ..Default::default() };
        let filter = ExactGaussianFilter::from_image(&img, &cfg.feature).unwrap();
        let weights = local_edge_weights(&img, &cfg.local);
        let na = mf_iteration(&ia, &cva, &filter, &weights, &cfg).unwrap();
        let nb = mf_iteration(&ib, &cvb, &filter, &weights, &cfg).unwrap();
        for (i, (a, b)) in na.data().iter().zip(nb.data()).enumerate() {
            assert!((a - b).abs() < 1e-6, "entry {i}: {a} vs {b}");
        }
    }
}
