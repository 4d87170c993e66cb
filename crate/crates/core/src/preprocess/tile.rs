use rayon::prelude::*;

use super::normalize::{normalize_cytoplasm, normalize_nuclear_patch};
use super::raw::RawSlice;
use crate::error::{Error, Result};

pub const DEFAULT_PATCH_PX: usize = 256;
pub const DEFAULT_MIN_FOREGROUND: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TileConfig {
    pub patch_px: usize,
    /// Patches with a smaller Otsu-foreground fraction are discarded.
    pub min_foreground: f64,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            patch_px: DEFAULT_PATCH_PX,
            min_foreground: DEFAULT_MIN_FOREGROUND,
        }
    }
}

/// A normalized 3-channel patch, channel-planar. Channel 0 holds the
/// nuclear stain, channel 1 the cytoplasm stain, channel 2 is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedPatch {
    /// Grid position `(row, col)` in units of patches.
    pub origin: (u32, u32),
    pub size: usize,
    pub data: Vec<f32>,
}

impl NormalizedPatch {
    pub fn zeros(origin: (u32, u32), size: usize) -> Self {
        Self {
            origin,
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.size * self.size;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Top-left pixel `(row, col)`.
    pub fn pixel_origin(&self) -> (usize, usize) {
        (self.origin.0 as usize * self.size, self.origin.1 as usize * self.size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileResult {
    pub patches: Vec<NormalizedPatch>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// No patch survived (or no foreground exists); the slice should be
    /// left out of the dataset.
    pub excluded: bool,
}

/// Non-overlapping grid tiling with stride equal to the patch size.
/// Trailing pixels that do not fill a patch are dropped.
pub fn tile(slice: &RawSlice, config: &TileConfig) -> Result<TileResult> {
    let p = config.patch_px;
    if p == 0 {
        return Err(Error::Config("patch size must be >= 1".into()));
    }
    if slice.width < p || slice.height < p {
        return Err(Error::dim(
            "tile",
            format!("{}x{} slice is smaller than one {p}px patch", slice.width, slice.height),
        ));
    }
    let (grid_rows, grid_cols) = (slice.height / p, slice.width / p);
    let cyto = match normalize_cytoplasm(slice) {
        Ok(c) => c,
        Err(Error::Degenerate(_)) => {
            return Ok(TileResult {
                patches: Vec::new(),
                grid_rows,
                grid_cols,
                excluded: true,
            })
        }
        Err(e) => return Err(e),
    };
    let min_fg = (config.min_foreground * (p * p) as f64).ceil() as usize;
    let cells: Vec<(usize, usize)> = (0..grid_rows)
        .flat_map(|r| (0..grid_cols).map(move |c| (r, c)))
        .collect();
    let patches: Vec<NormalizedPatch> = cells
        .par_iter()
        .filter_map(|&(r, c)| {
            let pixels = || {
                (0..p).flat_map(move |y| {
                    let row = (r * p + y) * slice.width + c * p;
                    row..row + p
                })
            };
            let fg = pixels().filter(|&i| cyto.foreground[i]).count();
            if fg < min_fg.max(1) {
                return None;
            }
            let mut patch = NormalizedPatch::zeros((r as u32, c as u32), p);
            let raw_nuc: Vec<u16> = pixels().map(|i| slice.nuclear[i]).collect();
            for (dst, v) in patch.channel_mut(0).iter_mut().zip(normalize_nuclear_patch(&raw_nuc)) {
                *dst = v as f32;
            }
            for (dst, i) in patch.channel_mut(1).iter_mut().zip(pixels()) {
                *dst = cyto.values[i] as f32;
            }
            Some(patch)
        })
        .collect();
    Ok(TileResult {
        excluded: patches.is_empty(),
        patches,
        grid_rows,
        grid_cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tissue(w: usize, h: usize) -> RawSlice {
        let cyto: Vec<u16> = (0..w * h).map(|i| 1000 + (i % 97) as u16).collect();
        let nuc: Vec<u16> = (0..w * h).map(|i| (i % 4099) as u16).collect();
        let mut s = RawSlice::new(w, h, nuc, cyto, 1.0).unwrap();
        // A little background so Otsu has two classes.
        s.cytoplasm[0] = 0;
        s
    }

    #[test]
    fn exact_grid() {
        let out = tile(&tissue(512, 512), &TileConfig::default()).unwrap();
        let origins: Vec<(usize, usize)> = out.patches.iter().map(|p| p.pixel_origin()).collect();
        assert_eq!(origins, vec![(0, 0), (0, 256), (256, 0), (256, 256)]);
        assert!(!out.excluded);
        for p in &out.patches {
            assert!(p.channel(2).iter().all(|&v| v == 0.0));
            assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn remainder_dropped() {
        let out = tile(&tissue(600, 300), &TileConfig::default()).unwrap();
        assert_eq!((out.grid_rows, out.grid_cols), (1, 2));
        assert_eq!(out.patches.len(), 2);
    }

    #[test]
    fn all_background_excluded() {
        let s = RawSlice::new(512, 512, vec![0; 512 * 512], vec![0; 512 * 512], 1.0).unwrap();
        let out = tile(&s, &TileConfig::default()).unwrap();
        assert!(out.excluded);
        assert!(out.patches.is_empty());
    }

    #[test]
    fn too_small_is_error() {
        let s = RawSlice::new(100, 300, vec![0; 30_000], vec![0; 30_000], 1.0).unwrap();
        assert!(matches!(tile(&s, &TileConfig::default()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sparse_patches_filtered() {
        // Tissue only in the top-left patch of a 2x2 grid.
        let (w, h) = (64, 64);
        let cyto: Vec<u16> = (0..w * h)
            .map(|i| if i / w < 32 && i % w < 32 { 3000 } else { 10 })
            .collect();
        let s = RawSlice::new(w, h, vec![5; w * h], cyto, 1.0).unwrap();
        let cfg = TileConfig {
            patch_px: 32,
            min_foreground: 0.1,
        };
        let out = tile(&s, &cfg).unwrap();
        assert_eq!(out.patches.len(), 1);
        assert_eq!(out.patches[0].origin, (0, 0));
    }

    #[test]
    fn retained_pixels_covered_once() {
        let s = tissue(100, 70);
        let cfg = TileConfig {
            patch_px: 16,
            min_foreground: 0.0,
        };
        let out = tile(&s, &cfg).unwrap();
        let mut hits = vec![0u8; 100 * 70];
        for p in &out.patches {
            let (r0, c0) = p.pixel_origin();
            for y in 0..16 {
                for x in 0..16 {
                    hits[(r0 + y) * 100 + c0 + x] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h <= 1));
        assert_eq!(hits.iter().filter(|&&h| h == 1).count(), 96 * 64);
    }
}
