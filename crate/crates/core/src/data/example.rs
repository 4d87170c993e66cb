//! Neighborhood assembly at the volume level.

use rayon::prelude::*;

use super::bag::{load_feature_bag, FeatureBag};
use super::manifest::VolumeManifest;
use crate::error::{Error, Result};
use crate::model::NeighborhoodSpec;

/// One SOI with its neighbors, ordered by depth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub bags: Vec<FeatureBag>,
    /// Position of the SOI within `bags`.
    pub soi_pos: usize,
    pub label: Option<usize>,
    pub patient_id: String,
    pub biopsy_id: String,
    pub depth_um: f64,
}

impl TrainingExample {
    pub fn soi(&self) -> &FeatureBag {
        &self.bags[self.soi_pos]
    }

    pub fn neighbors(&self) -> impl Iterator<Item = &FeatureBag> {
        self.bags
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.soi_pos)
            .map(|(_, b)| b)
    }

    pub fn bag_refs(&self) -> Vec<&FeatureBag> {
        self.bags.iter().collect()
    }

    pub fn soi_slice_index(&self) -> usize {
        self.soi().slice_index
    }
}

/// Positions (into `volume.slices`) of the slices at `soi_index ± i·d_slices`
/// for `i = 1..=m` that exist, in depth order, plus the SOI's place in that
/// list. Slices beyond the volume edge are dropped.
pub fn neighborhood_positions(
    volume: &VolumeManifest,
    soi_index: usize,
    spec: &NeighborhoodSpec,
) -> Result<(Vec<usize>, usize)> {
    spec.validate()?;
    let soi = volume.position_of(soi_index).ok_or_else(|| {
        Error::Manifest(format!("{} has no slice {soi_index}", volume.id()))
    })?;
    let mut positions = Vec::with_capacity(2 * spec.m + 1);
    for i in (1..=spec.m).rev() {
        if let Some(idx) = soi_index.checked_sub(i * spec.d_slices) {
            if let Some(p) = volume.position_of(idx) {
                positions.push(p);
            }
        }
    }
    let soi_pos = positions.len();
    positions.push(soi);
    for i in 1..=spec.m {
        if let Some(p) = volume.position_of(soi_index + i * spec.d_slices) {
            positions.push(p);
        }
    }
    Ok((positions, soi_pos))
}

fn load_slice(volume: &VolumeManifest, pos: usize) -> Result<FeatureBag> {
    let rec = &volume.slices[pos];
    Ok(load_feature_bag(&rec.feature_path)?.with_slice_index(rec.slice_index))
}

/// Loads the SOI at `soi_index` and its neighbors from disk.
pub fn assemble_example(
    volume: &VolumeManifest,
    soi_index: usize,
    spec: &NeighborhoodSpec,
) -> Result<TrainingExample> {
    let (positions, soi_pos) = neighborhood_positions(volume, soi_index, spec)?;
    let bags = positions
        .iter()
        .map(|&p| load_slice(volume, p))
        .collect::<Result<Vec<_>>>()?;
    let soi = &volume.slices[positions[soi_pos]];
    Ok(TrainingExample {
        bags,
        soi_pos,
        label: soi.label,
        patient_id: volume.patient_id.clone(),
        biopsy_id: volume.biopsy_id.clone(),
        depth_um: soi.depth_um,
    })
}

/// Every bag of a volume, in slice order. Loads in parallel; order is fixed.
pub fn load_volume_bags(volume: &VolumeManifest) -> Result<Vec<FeatureBag>> {
    (0..volume.slices.len())
        .into_par_iter()
        .map(|p| load_slice(volume, p))
        .collect()
}

/// Every supervised SOI of every volume, as assembled examples.
pub fn training_examples(
    volumes: &[VolumeManifest],
    spec: &NeighborhoodSpec,
) -> Result<Vec<TrainingExample>> {
    let jobs: Vec<(&VolumeManifest, usize)> = volumes
        .iter()
        .flat_map(|v| {
            v.training_positions()
                .into_iter()
                .map(move |p| (v, v.slices[p].slice_index))
        })
        .collect();
    jobs.par_iter()
        .map(|&(v, idx)| assemble_example(v, idx, spec))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::data::{save_feature_bag, SliceRecord};
    use crate::diffmath::Matrix;

    fn volume(n: usize) -> VolumeManifest {
        let mut v = VolumeManifest::new("P", "B");
        for i in 0..n {
            v.slices.push(SliceRecord {
                slice_index: i,
                depth_um: i as f64,
                label: None,
                is_train: false,
                feature_path: PathBuf::from(format!("{i}.cfs")),
            });
        }
        v
    }

    fn indices(v: &VolumeManifest, soi: usize, m: usize, d: usize) -> Vec<usize> {
        let spec = NeighborhoodSpec {
            m,
            d_slices: d,
            pitch_um: 1.0,
        };
        let (pos, sp) = neighborhood_positions(v, soi, &spec).unwrap();
        assert_eq!(v.slices[pos[sp]].slice_index, soi);
        pos.iter().map(|&p| v.slices[p].slice_index).collect()
    }

    #[test]
    fn m_zero_is_soi_only() {
        assert_eq!(indices(&volume(300), 100, 0, 40), vec![100]);
    }

    #[test]
    fn centered_neighborhood() {
        assert_eq!(indices(&volume(300), 100, 2, 40), vec![20, 60, 100, 140, 180]);
    }

    #[test]
    fn edge_truncation() {
        assert_eq!(indices(&volume(300), 10, 2, 40), vec![10, 50, 90]);
        assert_eq!(indices(&volume(300), 290, 2, 40), vec![210, 250, 290]);
    }

    #[test]
    fn missing_soi_is_error() {
        let spec = NeighborhoodSpec::soi_only();
        assert!(neighborhood_positions(&volume(5), 9, &spec).is_err());
    }

    #[test]
    fn missing_feature_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = volume(3);
        v.resolve_paths(dir.path());
        let spec = NeighborhoodSpec {
            m: 1,
            d_slices: 1,
            pitch_um: 1.0,
        };
        for i in [0, 2] {
            let bag = FeatureBag::new(Matrix::zeros(1, 2), vec![(0, 0)], 256).unwrap();
            save_feature_bag(&v.slices[i].feature_path, &bag).unwrap();
        }
        let err = assemble_example(&v, 1, &spec).unwrap_err().to_string();
        assert!(err.contains("1.cfs"), "{err}");
        let ex = assemble_example(&v, 0, &NeighborhoodSpec::soi_only()).unwrap();
        assert_eq!(ex.soi_pos, 0);
        assert_eq!(ex.bags.len(), 1);
    }

    #[test]
    fn indices_stay_in_range() {
        let v = volume(7);
        for soi in 0..7 {
            for m in 0..5 {
                for d in 1..4 {
                    let idx = indices(&v, soi, m, d);
                    assert!(idx.iter().all(|&i| i < 7));
                    assert!(idx.windows(2).all(|w| w[0] < w[1]));
                    assert!(idx.len() <= 2 * m + 1);
                }
            }
        }
    }
}
