use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::SliceOutput;

/// Files written for one slice's attention map.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapExport {
    pub slice_id: String,
    pub tsv_path: PathBuf,
    pub pgm_path: PathBuf,
    /// Attention range mapped onto the 8-bit gray scale.
    pub min: f64,
    pub max: f64,
}

pub fn heatmap_tsv(output: &SliceOutput) -> String {
    let mut out = String::from("row\tcol\tattention\n");
    for (&(r, c), a) in output.patch_coords.iter().zip(&output.attention) {
        let _ = writeln!(out, "{r}\t{c}\t{a}");
    }
    out
}

/// Binary PGM of the patch lattice. Patch cells are min-max scaled to
/// 0..=255; a constant map is drawn as mid gray (128). Cells without a
/// patch are 0.
pub fn heatmap_pgm(output: &SliceOutput) -> Vec<u8> {
    let rows = output.patch_coords.iter().map(|c| c.0 as usize + 1).max().unwrap_or(0);
    let cols = output.patch_coords.iter().map(|c| c.1 as usize + 1).max().unwrap_or(0);
    let (lo, hi) = range(&output.attention);
    let mut pixels = vec![0u8; rows * cols];
    for (&(r, c), &a) in output.patch_coords.iter().zip(&output.attention) {
        let g = if hi > lo {
            (255.0 * (a - lo) / (hi - lo)).round() as u8
        } else {
            128
        };
        pixels[r as usize * cols + c as usize] = g;
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

fn range(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Writes `<slice_id>.attention.tsv` and `<slice_id>.attention.pgm` into `dir`.
pub fn export_heatmap(output: &SliceOutput, slice_id: &str, dir: &Path) -> Result<HeatmapExport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tsv_path = dir.join(format!("{slice_id}.attention.tsv"));
    let pgm_path = dir.join(format!("{slice_id}.attention.pgm"));
    fs::write(&tsv_path, heatmap_tsv(output)).map_err(|e| Error::io(&tsv_path, e))?;
    fs::write(&pgm_path, heatmap_pgm(output)).map_err(|e| Error::io(&pgm_path, e))?;
    let (min, max) = range(&output.attention);
    Ok(HeatmapExport {
        slice_id: slice_id.to_string(),
        tsv_path,
        pgm_path,
        min,
        max,
    })
}
