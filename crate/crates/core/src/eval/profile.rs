use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{load_feature_bag, neighborhood_positions, FeatureBag, VolumeManifest};
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams, SoiPrediction};

pub const PROFILE_HEADER: [&str; 3] = ["slice_index", "depth_um", "prob_class1"];

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileEntry {
    pub slice_index: usize,
    pub depth_um: f64,
    pub prob: f64,
}

/// Predicted class-1 probability along the depth of one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskProfile {
    pub volume_id: String,
    pub entries: Vec<ProfileEntry>,
    /// Index into `entries` of the highest probability (shallowest on ties).
    pub argmax: usize,
}

impl RiskProfile {
    pub fn argmax_depth(&self) -> f64 {
        self.entries[self.argmax].depth_um
    }

    /// The `k` highest-risk entries, by probability then shallower depth.
    pub fn top_k(&self, k: usize) -> Vec<&ProfileEntry> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| {
            self.entries[b]
                .prob
                .total_cmp(&self.entries[a].prob)
                .then(a.cmp(&b))
        });
        idx.into_iter().take(k).map(|i| &self.entries[i]).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = PROFILE_HEADER.join("\t");
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.slice_index, e.depth_um, e.prob);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> Option<usize> {
    (0..values.len()).reduce(|best, i| if values[i] > values[best] { i } else { best })
}

fn load_positions(volume: &VolumeManifest, positions: &BTreeSet<usize>) -> Result<Vec<Option<FeatureBag>>> {
    let loaded: Vec<(usize, FeatureBag)> = positions
        .par_iter()
        .map(|&p| {
            let rec = &volume.slices[p];
            load_feature_bag(&rec.feature_path)
                .map(|b| (p, b.with_slice_index(rec.slice_index)))
                .map_err(|e| {
                    Error::InvalidBag(format!("{} slice {}: {e}", volume.id(), rec.slice_index))
                })
        })
        .collect::<Result<_>>()?;
    let mut out = vec![None; volume.slices.len()];
    for (p, b) in loaded {
        out[p] = Some(b);
    }
    Ok(out)
}

/// Forward pass for the slices at the given positions of `volume`, each with
/// its neighborhood. Results are in input order.
pub fn predict_positions(
    volume: &VolumeManifest,
    positions: &[usize],
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<Vec<SoiPrediction>> {
    let hoods = positions
        .iter()
        .map(|&p| neighborhood_positions(volume, volume.slices[p].slice_index, &config.neighborhood))
        .collect::<Result<Vec<_>>>()?;
    let needed: BTreeSet<usize> = hoods.iter().flat_map(|(ps, _)| ps.iter().copied()).collect();
    let bags = load_positions(volume, &needed)?;
    hoods
        .par_iter()
        .map(|(ps, soi_pos)| {
            let refs: Vec<&FeatureBag> = ps.iter().map(|&p| bags[p].as_ref().expect("loaded")).collect();
            forward(&refs, *soi_pos, config, params)
        })
        .collect()
}

/// Evaluates every `stride`-th slice starting from the first.
pub fn infer_profile(
    volume: &VolumeManifest,
    params: &ModelParams,
    config: &ModelConfig,
    stride: usize,
) -> Result<RiskProfile> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    if volume.slices.is_empty() {
        return Err(Error::Manifest(format!("{} has no slices", volume.id())));
    }
    let positions: Vec<usize> = (0..volume.slices.len()).step_by(stride).collect();
    let preds = predict_positions(volume, &positions, config, params)?;
    let entries: Vec<ProfileEntry> = positions
        .iter()
        .zip(&preds)
        .map(|(&p, pred)| ProfileEntry {
            slice_index: volume.slices[p].slice_index,
            depth_um: volume.slices[p].depth_um,
            prob: pred.risk(),
        })
        .collect();
    let probs: Vec<f64> = entries.iter().map(|e| e.prob).collect();
    Ok(RiskProfile {
        volume_id: volume.id(),
        argmax: argmax(&probs).expect("nonempty"),
        entries,
    })
}
