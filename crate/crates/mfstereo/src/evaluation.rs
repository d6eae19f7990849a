//! Middlebury-style scoring: mean absolute disparity error over evaluated
//! pixels (ground truth finite and mask valid), bad-pixel ratios, and the
//! quarter-size upsampling rule. Also the plain-text report tables.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image_io::{DisparityMap, INVALID_DISPARITY};
use crate::post_processing::ValidityMask;

/// Scores of one prediction against one ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Mean absolute disparity error in full-resolution pixels.
    pub avg_err: f64,
    /// Fraction of evaluated pixels with error > 1.
    pub bad1: f64,
    /// Fraction of evaluated pixels with error > 2.
    pub bad2: f64,
    /// Number of evaluated pixels.
    pub evaluated: usize,
    /// Wall time of the producing run; informational only.
    pub runtime_s: f64,
}

/// Compare prediction and ground truth over pixels where the ground truth
/// is finite and the mask is valid. Invalid predicted pixels score
/// `invalid_penalty` (conventionally the disparity level count).
pub fn avg_err(
    pred: &DisparityMap,
    gt: &DisparityMap,
    nocc_mask: &ValidityMask,
    invalid_penalty: f32,
) -> Result<EvalResult> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            what: "prediction vs ground truth",
            left_w: pred.width(),
            left_h: pred.height(),
            right_w: gt.width(),
            right_h: gt.height(),
        });
    }
    if nocc_mask.width() != gt.width() || nocc_mask.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            what: "mask vs ground truth",
            left_w: nocc_mask.width(),
            left_h: nocc_mask.height(),
            right_w: gt.width(),
            right_h: gt.height(),
        });
    }
    let mut sum = 0.0f64;
    let mut evaluated = 0usize;
    let mut bad1 = 0usize;
    let mut bad2 = 0usize;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let g = gt.at(x, y);
            if !g.is_finite() || !nocc_mask.at(x, y) {
                continue;
            }
            let p = pred.at(x, y);
            let err = if p.is_finite() { f64::from((p - g).abs()) } else { f64::from(invalid_penalty) };
            sum += err;
            evaluated += 1;
            if err > 1.0 {
                bad1 += 1;
            }
            if err > 2.0 {
                bad2 += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::NothingToEvaluate);
    }
    Ok(EvalResult {
        avg_err: sum / evaluated as f64,
        bad1: bad1 as f64 / evaluated as f64,
        bad2: bad2 as f64 / evaluated as f64,
        evaluated,
        runtime_s: 0.0,
    })
}

/// Nearest-neighbor upsampling by an integer factor with disparities
/// multiplied by the same factor; the invalid marker passes through.
pub fn upsample_disparity(pred: &DisparityMap, s: usize) -> Result<DisparityMap> {
    if s == 0 {
        return Err(Error::InvalidParam("upsample factor must be >= 1".into()));
    }
    if s == 1 {
        return Ok(pred.clone());
    }
    let (w, h) = (pred.width(), pred.height());
    let mut data = Vec::with_capacity(w * s * h * s);
    for y in 0..h * s {
        for x in 0..w * s {
            let v = pred.at(x / s, y / s);
            data.push(if v.is_finite() { v * s as f32 } else { INVALID_DISPARITY });
        }
    }
    DisparityMap::new(w * s, h * s, data)
}

/// Crop to the top-left `width` x `height` region; used to align an
/// upsampled quarter-size prediction with full-resolution ground truth
/// whose dimensions are not exact multiples of the scale.
pub fn crop_disparity(map: &DisparityMap, width: usize, height: usize) -> Result<DisparityMap> {
    if width > map.width() || height > map.height() {
        return Err(Error::InvalidParam(format!(
            "cannot crop {}x{} out of {}x{}",
            width,
            height,
            map.width(),
            map.height()
        )));
    }
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            data.push(map.at(x, y));
        }
    }
    DisparityMap::new(width, height, data)
}

/// Unweighted mean of the per-dataset average errors.
pub fn mean_avg_err(results: &[(String, EvalResult)]) -> f64 {
    results.iter().map(|(_, r)| r.avg_err).sum::<f64>() / results.len() as f64
}

/// Plain-text table: one row per dataset, a trailing unweighted `Avg`
/// row, deterministic formatting. `metric_label` names the evaluated
/// pixel set ("nocc" or "all").
pub fn report(results: &[(String, EvalResult)], metric_label: &str) -> Result<String> {
    if results.is_empty() {
        return Err(Error::InvalidParam("nothing to report".into()));
    }
    let name_w = results.iter().map(|(n, _)| n.len()).max().unwrap().max(8);
    let metric = format!("avgErr({metric_label})");
    let err_w = metric.len().max(10);
    let mut out = String::new();
    writeln!(
        out,
        "{:name_w$}  {:>err_w$}  {:>7}  {:>7}  {:>9}  {:>8}",
        "dataset", metric, "bad1", "bad2", "pixels", "time(s)"
    )
    .unwrap();
    for (name, r) in results {
        writeln!(
            out,
            "{:name_w$}  {:>err_w$.3}  {:>7.4}  {:>7.4}  {:>9}  {:>8.2}",
            name, r.avg_err, r.bad1, r.bad2, r.evaluated, r.runtime_s
        )
        .unwrap();
    }
    let avg = mean_avg_err(results);
    let bad1 = results.iter().map(|(_, r)| r.bad1).sum::<f64>() / results.len() as f64;
    let bad2 = results.iter().map(|(_, r)| r.bad2).sum::<f64>() / results.len() as f64;
    writeln!(
        out,
        "{:name_w$}  {:>err_w$.3}  {:>7.4}  {:>7.4}  {:>9}  {:>8}",
        "Avg", avg, bad1, bad2, "", ""
    )
    .unwrap();
    Ok(out)
}

/// Wide table with one avgErr column per post-processing mode, mirroring
/// the per-mode comparison layout.
pub fn report_multi(
    mode_names: &[String],
    rows: &[(String, Vec<EvalResult>)],
    metric_label: &str,
) -> Result<String> {
    if rows.is_empty() || mode_names.is_empty() {
        return Err(Error::InvalidParam("nothing to report".into()));
    }
    if rows.iter().any(|(_, r)| r.len() != mode_names.len()) {
        return Err(Error::InvalidParam("ragged report rows".into()));
    }
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap().max(8);
    let col_w = mode_names.iter().map(|m| m.len()).max().unwrap().max(9);
    let mut out = String::new();
    write!(out, "{:name_w$}", format!("avgErr({metric_label})")).unwrap();
    for m in mode_names {
        write!(out, "  {m:>col_w$}").unwrap();
    }
    out.push('\n');
    for (name, results) in rows {
        write!(out, "{name:name_w$}").unwrap();
        for r in results {
            write!(out, "  {:>col_w$.3}", r.avg_err).unwrap();
        }
        out.push('\n');
    }
    write!(out, "{:name_w$}", "Avg").unwrap();
    for k in 0..mode_names.len() {
        let avg = rows.iter().map(|(_, r)| r[k].avg_err).sum::<f64>() / rows.len() as f64;
        write!(out, "  {avg:>col_w$.3}").unwrap();
    }
    out.push('\n');
    Ok(out)
}
