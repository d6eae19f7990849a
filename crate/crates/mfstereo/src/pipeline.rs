//! End-to-end matching: downsample, unary cost, mean-field inference,
//! winner-take-all, the selected post-processing chain, and upsampling
//! back to input resolution. The right-view disparity needed by the
//! cross-check reuses the left-reference code path on mirrored images.

use std::time::Instant;

use crate::config::{PostMode, RunConfig};
use crate::cost_volume::{build_cost_volume, CostVolume, Reference};
use crate::error::{Error, Result};
use crate::evaluation::upsample_disparity;
use crate::image_io::{effective_levels, to_gray, DisparityMap, RgbU8Image, INVALID_DISPARITY};
use crate::joint_inference::{local_edge_weights, run_inference, wta, BeliefVolume};
use crate::post_processing::{lrc_check, occlusion_fill, weighted_median, ValidityMask};

#[derive(Debug, Clone)]
pub struct StageTiming {
    pub name: &'static str,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct MatchOutput {
    /// Post-processed disparity at working (downsampled) resolution.
    pub working: DisparityMap,
    /// Upsampled to input resolution, values scaled accordingly.
    pub full: DisparityMap,
    /// Disparity level count at working resolution.
    pub working_levels: usize,
    /// Cross-check mask, when the post mode ran one.
    pub lrc_mask: Option<ValidityMask>,
    pub timings: Vec<StageTiming>,
}

impl MatchOutput {
    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }
}

/// Extra observability for debug runs.
#[derive(Debug, Default)]
pub struct DebugArtifacts {
    /// Per-iteration mean belief entropy of the left-reference pass.
    pub entropy_trace: Vec<f64>,
    /// Per-iteration Gibbs energy of the winner-take-all labeling; only
    /// filled for instances small enough for the exact evaluation.
    pub energy_trace: Vec<Option<f64>>,
    /// Unary cost volume of the left-reference pass.
    pub cost_volume: Option<CostVolume>,
}

const DEBUG_ENERGY_LIMIT: usize = 10_000;

/// One left-reference (or mirrored right-reference) matching pass:
/// cost volume, inference, winner-take-all.
fn single_pass(
    left: &RgbU8Image,
    right: &RgbU8Image,
    levels: usize,
    cfg: &RunConfig,
    mut trace: Option<&mut DebugArtifacts>,
) -> Result<(DisparityMap, BeliefVolume, Option<CostVolume>)> {
    let gl = to_gray(left);
    let gr = to_gray(right);
    let cv = build_cost_volume(&gl, &gr, levels, &cfg.cost, Reference::Left)?;
    let inf = cfg.effective_inference();
    let beliefs = if let Some(dbg) = trace.as_deref_mut() {
        let weights = local_edge_weights(left, &inf.local);
        let lattice = crate::gaussian_lattice::build_lattice(left, &inf.feature)?;
        crate::joint_inference::run_inference_with_filter(&cv, &lattice, &weights, &inf, |_, q| {
            dbg.entropy_trace.push(q.mean_entropy());
            let energy = (q.num_pixels() <= DEBUG_ENERGY_LIMIT)
                .then(|| crate::joint_inference::gibbs_energy(&wta(q), &cv, left, &inf).ok())
                .flatten();
            dbg.energy_trace.push(energy);
        })?
    } else {
        run_inference(&cv, left, &inf)?
    };
    let disp = wta(&beliefs);
    let keep_cv = trace.is_some().then_some(cv);
    Ok((disp, beliefs, keep_cv))
}

/// Match a rectified pair. `ndisp` is the disparity level count at input
/// resolution; the working level count after downsampling is
/// ceil(ndisp / scale).
pub fn match_pair(
    left: &RgbU8Image,
    right: &RgbU8Image,
    ndisp: usize,
    cfg: &RunConfig,
) -> Result<MatchOutput> {
    match_pair_debug(left, right, ndisp, cfg, None)
}

pub fn match_pair_debug(
    left: &RgbU8Image,
    right: &RgbU8Image,
    ndisp: usize,
    cfg: &RunConfig,
    mut debug: Option<&mut DebugArtifacts>,
) -> Result<MatchOutput> {
    cfg.validate()?;
    if ndisp < 2 {
        return Err(Error::InvalidParam(format!("ndisp must be >= 2, got {ndisp}")));
    }
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch {
            what: "stereo pair",
            left_w: left.width(),
            left_h: left.height(),
            right_w: right.width(),
            right_h: right.height(),
        });
    }
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, clock: &mut Instant| {
        timings.push(StageTiming { name, seconds: clock.elapsed().as_secs_f64() });
        *clock = Instant::now();
    };

    let levels = effective_levels(ndisp, cfg.scale);
    let (wl, wr) = (left.downsample(cfg.scale)?, right.downsample(cfg.scale)?);
    lap("downsample", &mut clock);

    let (disp_l, _beliefs, cv) = single_pass(&wl, &wr, levels, cfg, debug.as_deref_mut())?;
    if let (Some(dbg), Some(cv)) = (&mut debug, cv) {
        dbg.cost_volume = Some(cv);
    }
    lap("match-left", &mut clock);

    let (working, lrc_mask) = match cfg.post {
        PostMode::None => (disp_l, None),
        mode => {
            // right-reference pass through the same code: mirror both
            // images, swap roles, mirror the result back
            let (disp_rm, _, _) = single_pass(&wr.mirrored(), &wl.mirrored(), levels, cfg, None)?;
            let disp_r = disp_rm.mirrored();
            lap("match-right", &mut clock);

            let mask = lrc_check(&disp_l, &disp_r, cfg.lrc_tol)?;
            let refined = match mode {
                PostMode::Lrc => {
                    // keep inconsistent pixels, but marked invalid
                    let mut data = disp_l.data().to_vec();
                    for (v, ok) in data.iter_mut().zip(mask.data()) {
                        if !ok {
                            *v = INVALID_DISPARITY;
                        }
                    }
                    DisparityMap::new(disp_l.width(), disp_l.height(), data)?
                }
                PostMode::LrcOfWmf => {
                    let filled = occlusion_fill(&disp_l, &mask)?;
                    weighted_median(&filled, &wl, &mask, cfg.wmf_window, &cfg.inference.feature)?
                }
                PostMode::None => unreachable!(),
            };
            (refined, Some(mask))
        }
    };
    lap("post-process", &mut clock);

    let full = upsample_disparity(&working, cfg.scale)?;
    lap("upsample", &mut clock);

    Ok(MatchOutput { working, full, working_levels: levels, lrc_mask, timings })
}
