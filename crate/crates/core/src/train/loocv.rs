use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::fit::{label_of, predict, train_fold, TrainConfig};
use crate::data::{loocv_splits, training_examples, TrainingExample, VolumeManifest};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ModelConfig};
use crate::seed::fold_seed;

pub const PREDICTIONS_HEADER: [&str; 5] = ["patient_id", "biopsy_id", "slice_index", "prob_class1", "label"];

/// Out-of-fold prediction for one labeled slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub patient_id: String,
    pub biopsy_id: String,
    pub slice_index: usize,
    pub prob: f64,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub held_out: String,
    pub predictions: Vec<Prediction>,
    pub checkpoint: Option<PathBuf>,
    pub train_examples: usize,
    pub final_loss: Option<f64>,
    pub single_class: bool,
}

/// Patient-level leave-one-out: one model per held-out patient, trained on
/// every other patient's supervised slices with seed
/// `fold_seed(seed, patient)`. Folds run in parallel; results come back in
/// sorted patient order. With `checkpoint_dir`, each fold's parameters are
/// saved as `fold_<patient>.ckpt` there.
pub fn run_loocv(
    volumes: &[VolumeManifest],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<FoldResult>> {
    let folds = loocv_splits(volumes)?;
    let per_volume: Vec<Vec<TrainingExample>> = volumes
        .par_iter()
        .map(|v| training_examples(std::slice::from_ref(v), &model_config.neighborhood))
        .collect::<Result<_>>()?;
    folds
        .par_iter()
        .map(|fold| {
            let wrap = |e: Error| Error::Fold {
                patient: fold.held_out.clone(),
                source: Box::new(e),
            };
            let train: Vec<&TrainingExample> = fold.train.iter().flat_map(|&i| &per_volume[i]).collect();
            let fit = train_fold(&train, train_config, model_config, fold_seed(seed, &fold.held_out)).map_err(wrap)?;
            let predictions = fold
                .test
                .iter()
                .flat_map(|&i| &per_volume[i])
                .map(|ex| {
                    Ok(Prediction {
                        patient_id: ex.patient_id.clone(),
                        biopsy_id: ex.biopsy_id.clone(),
                        slice_index: ex.soi_slice_index(),
                        prob: predict(ex, model_config, &fit.params)?.risk(),
                        label: label_of(ex)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(wrap)?;
            let checkpoint = match checkpoint_dir {
                Some(dir) => {
                    let path = dir.join(format!("fold_{}.ckpt", fold.held_out));
                    save_checkpoint(&path, model_config, &fit.params).map_err(wrap)?;
                    Some(path)
                }
                None => None,
            };
            Ok(FoldResult {
                held_out: fold.held_out.clone(),
                predictions,
                checkpoint,
                train_examples: train.len(),
                final_loss: fit.epoch_losses.last().copied(),
                single_class: fit.single_class,
            })
        })
        .collect()
}

pub fn cohort_predictions(folds: &[FoldResult]) -> Vec<Prediction> {
    folds.iter().flat_map(|f| f.predictions.iter().cloned()).collect()
}

pub fn predictions_to_string(preds: &[Prediction]) -> String {
    let mut out = PREDICTIONS_HEADER.join("\t");
    out.push('\n');
    for p in preds {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            p.patient_id, p.biopsy_id, p.slice_index, p.prob, p.label
        );
    }
    out
}

pub fn save_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, predictions_to_string(preds)).map_err(|e| Error::io(path, e))
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<Prediction>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != PREDICTIONS_HEADER {
        return Err(err(hline + 1, format!("expected header {:?}", PREDICTIONS_HEADER.join("\t"))));
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            if f.len() != PREDICTIONS_HEADER.len() {
                return Err(err(i + 1, format!("expected 5 fields, found {}", f.len())));
            }
            let prob: f64 = f[3].parse().map_err(|e| err(i + 1, format!("prob_class1 {:?}: {e}", f[3])))?;
            if !(0.0..=1.0).contains(&prob) {
                return Err(err(i + 1, format!("prob_class1 {prob} outside [0, 1]")));
            }
            Ok(Prediction {
                patient_id: f[0].to_string(),
                biopsy_id: f[1].to_string(),
                slice_index: f[2].parse().map_err(|e| err(i + 1, format!("slice_index {:?}: {e}", f[2])))?,
                prob,
                label: match f[4] {
                    "0" => 0,
                    "1" => 1,
                    other => return Err(err(i + 1, format!("label {other:?} is not 0 or 1"))),
                },
            })
        })
        .collect()
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path)
}
