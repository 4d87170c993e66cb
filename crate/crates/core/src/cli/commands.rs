use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{write_config_echo, EvalArgs, PreprocessArgs, SynthArgs, TrainArgs, TriageArgs};
use crate::data::{
    generate_planted_volume, generate_synthetic, load_feature_bag, load_manifest_resolved, save_feature_bag,
    save_manifest, training_examples, ContextMode, PlantedSpec, SliceRecord, SynthSpec, TrainingExample,
    VolumeManifest, MANIFEST_NAME,
};
use crate::error::{Error, Result};
use crate::eval::{export_heatmap, infer_profile, predict_positions, MetricReport};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, NeighborhoodSpec, Pooling};
use crate::preprocess::{encode_slice, load_raw_slice, TileConfig, ToyEncoder};
use crate::seed::{hash_str, mix};
use crate::train::{cohort_predictions, load_predictions, run_loocv, save_predictions, train_fold, TrainConfig};

pub const RAW_EXT: &str = "craw";
pub const FEATURE_EXT: &str = "cfs";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

struct RawJob {
    patient: String,
    biopsy: String,
    slice_index: usize,
    path: PathBuf,
}

/// `<raw_dir>/<patient>/<biopsy>/<slice_index>.craw`, sorted by patient,
/// biopsy, then slice index.
fn discover_raw(raw_dir: &Path) -> Result<Vec<RawJob>> {
    let mut jobs = Vec::new();
    for pdir in sorted_entries(raw_dir)?.into_iter().filter(|p| p.is_dir()) {
        for bdir in sorted_entries(&pdir)?.into_iter().filter(|p| p.is_dir()) {
            let mut slices = Vec::new();
            for f in sorted_entries(&bdir)? {
                if f.extension().and_then(|e| e.to_str()) != Some(RAW_EXT) {
                    continue;
                }
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                let idx: usize = stem.parse().map_err(|_| {
                    Error::Manifest(format!("{}: file stem is not a slice index", f.display()))
                })?;
                slices.push((idx, f));
            }
            slices.sort();
            for (slice_index, path) in slices {
                jobs.push(RawJob {
                    patient: file_name(&pdir),
                    biopsy: file_name(&bdir),
                    slice_index,
                    path,
                });
            }
        }
    }
    Ok(jobs)
}

pub const LABELS_HEADER: [&str; 4] = ["patient_id", "biopsy_id", "slice_index", "label"];

type LabelMap = BTreeMap<(String, String, usize), usize>;

fn load_labels(path: &Path) -> Result<LabelMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut out = BTreeMap::new();
    match lines.next() {
        None => return Ok(out),
        Some((i, h)) => {
            let cols: Vec<&str> = h.split('\t').map(str::trim).collect();
            if cols != LABELS_HEADER {
                return Err(perr(i + 1, format!("expected header {:?}", LABELS_HEADER.join("\t"))));
            }
        }
    }
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 4 {
            return Err(perr(i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let idx = f[2]
            .parse()
            .map_err(|e| perr(i + 1, format!("slice_index {:?}: {e}", f[2])))?;
        let label = match f[3] {
            "0" => 0,
            "1" => 1,
            other => return Err(perr(i + 1, format!("label {other:?} is not 0 or 1"))),
        };
        if out.insert((f[0].to_string(), f[1].to_string(), idx), label).is_some() {
            return Err(perr(i + 1, "duplicate label row".into()));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessSummary {
    pub manifest: PathBuf,
    pub volumes: Vec<VolumeManifest>,
    /// `(patient, biopsy, slice_index)` of slices dropped for lack of tissue.
    pub excluded: Vec<(String, String, usize)>,
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<PreprocessSummary> {
    if args.feature_dim == 0 {
        return Err(Error::Config("--feature-dim must be >= 1".into()));
    }
    if !(args.slice_pitch_um > 0.0 && args.slice_pitch_um.is_finite()) {
        return Err(Error::Config("--slice-pitch-um must be positive".into()));
    }
    let tile_cfg = TileConfig {
        patch_px: args.patch_px,
        min_foreground: args.min_foreground,
    };
    let jobs = discover_raw(&args.raw_dir)?;
    if jobs.is_empty() {
        return Err(Error::Manifest(format!(
            "no slices found under {} (expected <patient>/<biopsy>/<slice_index>.{RAW_EXT})",
            args.raw_dir.display()
        )));
    }
    let labels = match &args.labels {
        Some(p) => load_labels(p)?,
        None => LabelMap::new(),
    };
    for key in labels.keys() {
        if !jobs
            .iter()
            .any(|j| (&j.patient, &j.biopsy, j.slice_index) == (&key.0, &key.1, key.2))
        {
            return Err(Error::Manifest(format!(
                "labeled slice {}/{}/{} has no raw file",
                key.0, key.1, key.2
            )));
        }
    }
    write_config_echo(&args.out, "preprocess", args)?;
    let encoder = ToyEncoder::new(args.seed);
    let rel_paths: Vec<PathBuf> = jobs
        .iter()
        .map(|j| {
            Path::new(&j.patient)
                .join(&j.biopsy)
                .join(format!("{}.{FEATURE_EXT}", j.slice_index))
        })
        .collect();
    let kept: Vec<bool> = jobs
        .par_iter()
        .zip(&rel_paths)
        .map(|(job, rel)| {
            let slice = load_raw_slice(&job.path)?;
            match encode_slice(&slice, &tile_cfg, &encoder, args.feature_dim)? {
                Some(bag) => {
                    let path = args.out.join(rel);
                    if let Some(parent) = path.parent() {
                        create_dir(parent)?;
                    }
                    save_feature_bag(&path, &bag)?;
                    Ok(true)
                }
                None => Ok(false),
            }
        })
        .collect::<Result<_>>()?;

    let mut volumes: Vec<VolumeManifest> = Vec::new();
    let mut excluded = Vec::new();
    for ((job, rel), keep) in jobs.iter().zip(rel_paths).zip(kept) {
        let key = (job.patient.clone(), job.biopsy.clone(), job.slice_index);
        if !keep {
            if labels.contains_key(&key) {
                eprintln!(
                    "warning: labeled slice {}/{}/{} has no usable tissue; dropped",
                    job.patient, job.biopsy, job.slice_index
                );
            }
            excluded.push(key);
            continue;
        }
        let label = labels.get(&key).copied();
        let record = SliceRecord {
            slice_index: job.slice_index,
            depth_um: job.slice_index as f64 * args.slice_pitch_um,
            label,
            is_train: label.is_some(),
            feature_path: rel,
        };
        match volumes.last_mut() {
            Some(v) if v.patient_id == job.patient && v.biopsy_id == job.biopsy => v.slices.push(record),
            _ => {
                let mut v = VolumeManifest::new(job.patient.clone(), job.biopsy.clone());
                v.slices.push(record);
                volumes.push(v);
            }
        }
    }
    let manifest = args.out.join(MANIFEST_NAME);
    save_manifest(&manifest, &volumes)?;
    let mut ex = String::from("patient_id\tbiopsy_id\tslice_index\n");
    for (p, b, i) in &excluded {
        let _ = writeln!(ex, "{p}\t{b}\t{i}");
    }
    write_text(&args.out.join("excluded.tsv"), &ex)?;
    println!(
        "preprocess: {} slices kept, {} excluded, manifest {}",
        jobs.len() - excluded.len(),
        excluded.len(),
        manifest.display()
    );
    Ok(PreprocessSummary {
        manifest,
        volumes,
        excluded,
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let manifest = args.out.join(MANIFEST_NAME);
    match (args.planted_lo_um, args.planted_hi_um) {
        (Some(lo), Some(hi)) => {
            let spec = PlantedSpec {
                slices: args.slices,
                pitch_um: args.pitch_um,
                patches_per_slice: args.patches,
                feature_dim: args.feature_dim,
                signal_fraction: args.signal_fraction,
                separation: args.separation,
                sigma: args.sigma,
                band_lo_um: lo,
                band_hi_um: hi,
            };
            write_config_echo(&args.out, "synth", &Echo { args, spec: &spec })?;
            generate_planted_volume(&spec, args.seed, &args.out)?;
        }
        _ => {
            let spec = SynthSpec {
                n_patients: args.patients,
                biopsies_per_patient: args.biopsies,
                slices_per_volume: args.slices,
                pitch_um: args.pitch_um,
                patches_per_slice: args.patches,
                feature_dim: args.feature_dim,
                signal_fraction: args.signal_fraction,
                separation: args.separation,
                sigma: args.sigma,
                positive_rate: args.positive_rate,
                context: args.context.parse::<ContextMode>()?,
                band_half_width_um: args.band_half_width_um,
                soi_gap_um: args.soi_gap_um,
                soi_residual: args.soi_residual,
            };
            spec.validate()?;
            write_config_echo(&args.out, "synth", &Echo { args, spec: &spec })?;
            generate_synthetic(&spec, args.seed, &args.out)?;
        }
    }
    println!("synth: manifest {}", manifest.display());
    Ok(manifest)
}

#[derive(Serialize)]
struct Echo<'a, A: Serialize, S: Serialize> {
    args: &'a A,
    spec: &'a S,
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    args: &'a TrainArgs,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub model_config: ModelConfig,
    pub predictions: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

/// Resolves the model configuration for `train` from its flags and the
/// feature width of the first training bag.
pub fn resolve_model_config(args: &TrainArgs, feature_dim: usize) -> Result<ModelConfig> {
    let pooling: Pooling = args.pooling.parse()?;
    let m = args
        .m
        .unwrap_or(if pooling == Pooling::None { 0 } else { 2 });
    if pooling == Pooling::None && m > 0 {
        return Err(Error::Config(format!("--pooling none takes no neighbors, got --m {m}")));
    }
    let hood = NeighborhoodSpec::from_half_range(m, args.half_range_um, args.pitch_um)?;
    let cfg = ModelConfig::new(feature_dim, pooling, hood).with_dims(args.embed_dim, args.attn_dim);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let volumes = load_manifest_resolved(&args.manifest)?;
    let first = volumes
        .iter()
        .find_map(|v| v.training_positions().first().map(|&p| &v.slices[p]))
        .ok_or_else(|| Error::InsufficientData("manifest has no labeled training slices".into()))?;
    let feature_dim = load_feature_bag(&first.feature_path)?.feature_dim();
    let model_config = resolve_model_config(args, feature_dim)?;
    let train_config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        ..TrainConfig::default()
    };
    train_config.validate()?;
    write_config_echo(
        &args.out,
        "train",
        &TrainEcho {
            args,
            model: &model_config,
            train: &train_config,
        },
    )?;

    let mut summary = TrainSummary {
        model_config,
        predictions: None,
        model: None,
    };
    if !args.no_loocv {
        let fold_dir = args.out.join("folds");
        create_dir(&fold_dir)?;
        let folds = run_loocv(&volumes, &model_config, &train_config, args.seed, Some(&fold_dir))?;
        let preds = cohort_predictions(&folds);
        let path = args.out.join("predictions.tsv");
        save_predictions(&path, &preds)?;
        let mut table = String::from("held_out\ttrain_examples\tfinal_loss\tsingle_class\n");
        for f in &folds {
            let loss = f.final_loss.map_or("-".to_string(), |l| l.to_string());
            let _ = writeln!(
                table,
                "{}\t{}\t{loss}\t{}",
                f.held_out,
                f.train_examples,
                u8::from(f.single_class)
            );
            if f.single_class {
                eprintln!("warning: fold {} trained on a single class", f.held_out);
            }
        }
        write_text(&args.out.join("folds.tsv"), &table)?;
        println!("train: {} folds, predictions {}", folds.len(), path.display());
        summary.predictions = Some(path);
    }
    if args.fit_all {
        let examples = training_examples(&volumes, &model_config.neighborhood)?;
        let refs: Vec<&TrainingExample> = examples.iter().collect();
        let fit = train_fold(&refs, &train_config, &model_config, mix(args.seed, hash_str("all")))?;
        let path = args.out.join("model.ckpt");
        save_checkpoint(&path, &model_config, &fit.params)?;
        println!("train: full-cohort model {}", path.display());
        summary.model = Some(path);
    }
    Ok(summary)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricReport> {
    let preds = load_predictions(&args.predictions)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.prob).collect();
    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
    write_config_echo(&args.out, "eval", args)?;
    let report = MetricReport::compute(&scores, &labels, args.n_boot, args.seed)?;
    let tsv = report.to_tsv();
    write_text(&args.out.join("metrics.tsv"), &tsv)?;
    print!("{tsv}");
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriageSummary {
    /// Per volume: id, argmax slice index, argmax depth.
    pub argmax: Vec<(String, usize, f64)>,
    pub topk_path: PathBuf,
}

pub const TOPK_HEADER: [&str; 6] = ["patient_id", "biopsy_id", "rank", "slice_index", "depth_um", "prob_class1"];

pub fn cmd_triage(args: &TriageArgs) -> Result<TriageSummary> {
    if args.stride == 0 {
        return Err(Error::Config("--stride must be >= 1".into()));
    }
    let (config, params) = load_checkpoint(&args.checkpoint)?;
    let mut volumes = load_manifest_resolved(&args.manifest)?;
    if let Some(sel) = &args.volume {
        volumes.retain(|v| &v.id() == sel);
        if volumes.is_empty() {
            return Err(Error::Manifest(format!("no volume {sel:?} in manifest")));
        }
    }
    if volumes.is_empty() {
        return Err(Error::Manifest("manifest has no volumes".into()));
    }
    write_config_echo(&args.out, "triage", args)?;
    let profile_dir = args.out.join("profiles");
    let heat_dir = args.out.join("heatmaps");
    create_dir(&profile_dir)?;
    create_dir(&heat_dir)?;

    let mut topk = TOPK_HEADER.join("\t");
    topk.push('\n');
    let mut argmax = Vec::new();
    for v in &volumes {
        let stem = format!("{}_{}", v.patient_id, v.biopsy_id);
        let profile = infer_profile(v, &params, &config, args.stride)?;
        profile.save(profile_dir.join(format!("{stem}.profile.tsv")))?;
        let top = profile.top_k(args.top_k);
        let positions: Vec<usize> = top
            .iter()
            .map(|e| v.position_of(e.slice_index).expect("profile slice in manifest"))
            .collect();
        let preds = predict_positions(v, &positions, &config, &params)?;
        for (rank, (e, pred)) in top.iter().zip(&preds).enumerate() {
            let _ = writeln!(
                topk,
                "{}\t{}\t{}\t{}\t{}\t{}",
                v.patient_id,
                v.biopsy_id,
                rank + 1,
                e.slice_index,
                e.depth_um,
                e.prob
            );
            export_heatmap(&pred.soi_attention(), &format!("{stem}_{}", e.slice_index), &heat_dir)?;
        }
        let best = &profile.entries[profile.argmax];
        println!("triage: {} peak at slice {} ({} um), p={}", v.id(), best.slice_index, best.depth_um, best.prob);
        argmax.push((v.id(), best.slice_index, best.depth_um));
    }
    let topk_path = args.out.join("topk.tsv");
    write_text(&topk_path, &topk)?;
    Ok(TriageSummary { argmax, topk_path })
}
