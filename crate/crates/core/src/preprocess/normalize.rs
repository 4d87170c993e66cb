use super::otsu::{histogram_u16, otsu_threshold, percentile_nearest_rank};
use super::raw::RawSlice;
use crate::error::{Error, Result};

pub const CLIP_PERCENTILE: f64 = 99.0;

/// Slice-level cytoplasm normalization with its Otsu foreground mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CytoplasmMap {
    /// Row-major, in `[0, 1]`; background pixels are 0.
    pub values: Vec<f64>,
    pub foreground: Vec<bool>,
    pub threshold: usize,
    pub clip: u16,
    /// Foreground was constant after clipping, so every value is 0.
    pub degenerate: bool,
}

/// Clips the masked values at their 99th percentile and min-max scales them
/// to `[0, 1]`. Unmasked entries become 0. Returns the values, the clip
/// level, and whether the masked range collapsed to a point.
pub fn normalize_foreground(values: &[u16], mask: &[bool]) -> Result<(Vec<f64>, u16, bool)> {
    let fg: Vec<u16> = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    let clip = percentile_nearest_rank(&fg, CLIP_PERCENTILE)
        .ok_or_else(|| Error::Degenerate("slice has no foreground".into()))?;
    let lo = *fg.iter().min().expect("nonempty") as f64;
    let hi = clip as f64;
    let degenerate = hi <= lo;
    let out = values
        .iter()
        .zip(mask)
        .map(|(&v, &m)| {
            if !m || degenerate {
                0.0
            } else {
                ((v.min(clip) as f64 - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok((out, clip, degenerate))
}

/// Otsu on the cytoplasm channel, then [`normalize_foreground`] over the
/// foreground. The percentile is taken per slice.
pub fn normalize_cytoplasm(slice: &RawSlice) -> Result<CytoplasmMap> {
    let threshold = otsu_threshold(&histogram_u16(&slice.cytoplasm))?;
    let foreground: Vec<bool> = slice.cytoplasm.iter().map(|&v| v as usize >= threshold).collect();
    let (values, clip, degenerate) = normalize_foreground(&slice.cytoplasm, &foreground)?;
    Ok(CytoplasmMap {
        values,
        foreground,
        threshold,
        clip,
        degenerate,
    })
}

/// Per-patch 99th-percentile clip then min-max to `[0, 1]`. A constant patch
/// maps to zeros.
pub fn normalize_nuclear_patch(patch: &[u16]) -> Vec<f64> {
    let Some(clip) = percentile_nearest_rank(patch, CLIP_PERCENTILE) else {
        return Vec::new();
    };
    let lo = *patch.iter().min().expect("nonempty") as f64;
    let hi = clip as f64;
    if hi <= lo {
        return vec![0.0; patch.len()];
    }
    patch
        .iter()
        .map(|&v| ((v.min(clip) as f64 - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}
