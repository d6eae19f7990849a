//! Middlebury v3 `calib.txt`: flat `key=value` lines. Only `ndisp`,
//! `width` and `height` are consumed; everything else is ignored.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibInfo {
    /// Number of disparity levels M at full resolution.
    pub ndisp: usize,
    pub width: usize,
    pub height: usize,
}

pub fn parse_calib(path: &Path) -> Result<CalibInfo> {
    let text =
        std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_calib_str(&text).map_err(|e| match e {
        Error::Format { reason, .. } => {
            Error::Format { context: path.display().to_string(), reason }
        }
        other => other,
    })
}

pub fn parse_calib_str(text: &str) -> Result<CalibInfo> {
    let mut ndisp = None;
    let mut width = 0;
    let mut height = 0;
    for line in text.lines() {
        let line = line.trim();
        let Some((key, value)) = line.split_once('=') else { continue };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "ndisp" => {
                let v: usize = value.parse().map_err(|_| Error::Format {
                    context: "calib".into(),
                    reason: format!("ndisp value {value:?} is not a positive integer"),
                })?;
                if v < 2 {
                    return Err(Error::Format {
                        context: "calib".into(),
                        reason: format!("ndisp must be >= 2, got {v}"),
                    });
                }
                ndisp = Some(v);
            }
            "width" => width = value.parse().unwrap_or(0),
            "height" => height = value.parse().unwrap_or(0),
            _ => {}
        }
    }
    let ndisp = ndisp.ok_or_else(|| Error::Format {
        context: "calib".into(),
        reason: "missing ndisp line".into(),
    })?;
    Ok(CalibInfo { ndisp, width, height })
}

/// Disparity levels needed after downsampling by `scale`:
/// ceil(ndisp / scale).
pub fn effective_levels(ndisp: usize, scale: usize) -> usize {
    ndisp.div_ceil(scale.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "cam0=[3997.684 0 1176.728; 0 3997.684 1011.728; 0 0 1]\n\
                          doffs=131.111\nbaseline=193.001\nwidth=2964\nheight=1988\n\
                          ndisp=290\nisint=0\nvmin=23\nvmax=245\n";

    #[test]
    fn parses_middlebury_sample() {
        let c = parse_calib_str(SAMPLE).unwrap();
        assert_eq!(c, CalibInfo { ndisp: 290, width: 2964, height: 1988 });
    }

    #[test]
    fn missing_ndisp_is_an_error() {
        let err = parse_calib_str("width=10\nheight=10\n").unwrap_err();
        assert!(err.to_string().contains("ndisp"), "message was: {err}");
    }

    #[test]
    fn line_order_and_whitespace_do_not_matter() {
        let a = parse_calib_str("ndisp=70\nwidth=4\nheight=2\n").unwrap();
        let b = parse_calib_str("height = 2  \n\n  width=4\n ndisp = 70 \n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quarter_size_level_count_rounds_up() {
        assert_eq!(effective_levels(70, 4), 18);
        assert_eq!(effective_levels(290, 4), 73);
        assert_eq!(effective_levels(290, 1), 290);
    }
}
