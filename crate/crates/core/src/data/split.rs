//! Patient-level leave-one-out splits.

use std::collections::BTreeSet;

use super::manifest::VolumeManifest;
use crate::error::{Error, Result};

/// One LOOCV fold. Indices refer to the manifest list the fold was built
/// from; every biopsy of the held-out patient is on the test side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub held_out: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per patient that has at least one supervised slice, in sorted
/// patient order.
pub fn loocv_splits(volumes: &[VolumeManifest]) -> Result<Vec<Fold>> {
    let patients: BTreeSet<&str> = volumes
        .iter()
        .filter(|v| !v.training_positions().is_empty())
        .map(|v| v.patient_id.as_str())
        .collect();
    if patients.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "LOOCV needs at least 2 patients with labeled slices, found {}",
            patients.len()
        )));
    }
    Ok(patients
        .into_iter()
        .map(|p| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..volumes.len()).partition(|&i| volumes[i].patient_id == p);
            Fold {
                held_out: p.to_string(),
                train,
                test,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::data::SliceRecord;

    fn vol(p: &str, b: &str) -> VolumeManifest {
        let mut v = VolumeManifest::new(p, b);
        v.slices.push(SliceRecord {
            slice_index: 0,
            depth_um: 0.0,
            label: Some(1),
            is_train: true,
            feature_path: PathBuf::from("x"),
        });
        v
    }

    #[test]
    fn three_patients_three_folds() {
        let vols = vec![vol("A", "1"), vol("B", "1"), vol("C", "1")];
        let folds = loocv_splits(&vols).unwrap();
        assert_eq!(folds.len(), 3);
        for f in &folds {
            assert_eq!(f.train.len(), 2);
            assert_eq!(f.test.len(), 1);
        }
    }

    #[test]
    fn biopsies_held_out_together() {
        let vols = vec![vol("A", "1"), vol("B", "1"), vol("A", "2")];
        let folds = loocv_splits(&vols).unwrap();
        assert_eq!(folds[0].held_out, "A");
        assert_eq!(folds[0].test, vec![0, 2]);
        assert_eq!(folds[0].train, vec![1]);
        for f in &folds {
            let train: BTreeSet<&str> = f.train.iter().map(|&i| vols[i].patient_id.as_str()).collect();
            assert!(!train.contains(f.held_out.as_str()));
        }
        let mut covered: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        covered.sort();
        assert_eq!(covered, vec![0, 1, 2]);
    }

    #[test]
    fn single_patient_rejected() {
        let vols = vec![vol("A", "1"), vol("A", "2")];
        assert!(matches!(loocv_splits(&vols), Err(Error::InsufficientData(_))));
    }
}
