//! Planted-signal synthetic datasets.
//!
//! Background patches are `N(0, σ²I)`. A signal patch is `N(μ₁, σ²I)` with
//! `μ₁ = separation·σ/√d · 1`, so `‖μ₁‖ = separation·σ`. A slice carrying
//! signal fraction `f` holds `⌈fJ⌉` signal patches at random grid cells.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::bag::FeatureBag;
use super::manifest::{save_manifest, SliceRecord, VolumeManifest};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};
use crate::seed::mix;

pub const MANIFEST_NAME: &str = "manifest.tsv";
const PATCH_SIZE_PX: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    /// Positive volumes carry signal throughout a band around the center
    /// slice, SOI included.
    SoiSignal,
    /// Inside the band, slices within `soi_gap_um` of the center carry only
    /// `soi_residual` of the signal fraction; the flanking slices carry it in
    /// full.
    NeighborOnly,
}

impl FromStr for ContextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soi-signal" => Ok(Self::SoiSignal),
            "neighbor-only" | "neighbor-only-signal" => Ok(Self::NeighborOnly),
            other => Err(Error::Config(format!(
                "unknown context mode {other:?} (soi-signal, neighbor-only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub biopsies_per_patient: usize,
    pub slices_per_volume: usize,
    pub pitch_um: f64,
    pub patches_per_slice: usize,
    pub feature_dim: usize,
    /// ρ, the fraction of patches carrying signal on a signal slice.
    pub signal_fraction: f64,
    /// ‖μ₁ − μ₀‖ in units of σ.
    pub separation: f64,
    pub sigma: f64,
    /// Fraction of patients whose volumes are positive, rounded to a count.
    pub positive_rate: f64,
    pub context: ContextMode,
    pub band_half_width_um: f64,
    pub soi_gap_um: f64,
    pub soi_residual: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_patients: 10,
            biopsies_per_patient: 1,
            slices_per_volume: 161,
            pitch_um: 1.0,
            patches_per_slice: 16,
            feature_dim: 32,
            signal_fraction: 0.25,
            separation: 3.0,
            sigma: 1.0,
            positive_rate: 0.5,
            context: ContextMode::SoiSignal,
            band_half_width_um: 80.0,
            soi_gap_um: 20.0,
            soi_residual: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad(format!("signal fraction {} outside (0, 1]", self.signal_fraction));
        }
        if self.n_patients == 0 || self.biopsies_per_patient == 0 || self.slices_per_volume == 0 {
            return bad("patients, biopsies and slices must all be >= 1".into());
        }
        if self.patches_per_slice == 0 || self.feature_dim == 0 {
            return bad("patches per slice and feature dim must be >= 1".into());
        }
        if !(self.pitch_um > 0.0 && self.pitch_um.is_finite()) {
            return bad(format!("pitch {} must be positive", self.pitch_um));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || !self.separation.is_finite() {
            return bad("sigma must be positive and separation finite".into());
        }
        if !(0.0..=1.0).contains(&self.positive_rate) || !(0.0..=1.0).contains(&self.soi_residual) {
            return bad("positive rate and SOI residual must lie in [0, 1]".into());
        }
        if self.band_half_width_um < 0.0 || self.soi_gap_um < 0.0 {
            return bad("band and gap widths must be non-negative".into());
        }
        Ok(())
    }

    pub fn center_index(&self) -> usize {
        (self.slices_per_volume - 1) / 2
    }

    /// Signal fraction carried by slice `i` of a positive volume.
    pub fn slice_signal(&self, i: usize) -> f64 {
        let offset = (i as f64 - self.center_index() as f64).abs() * self.pitch_um;
        if offset > self.band_half_width_um + 1e-9 {
            return 0.0;
        }
        match self.context {
            ContextMode::SoiSignal => self.signal_fraction,
            ContextMode::NeighborOnly if offset <= self.soi_gap_um + 1e-9 => {
                self.signal_fraction * self.soi_residual
            }
            ContextMode::NeighborOnly => self.signal_fraction,
        }
    }

    pub fn signal_mean(&self) -> f64 {
        self.separation * self.sigma / (self.feature_dim as f64).sqrt()
    }
}

/// Number of signal patches for fraction `f` of `j` patches: `⌈fJ⌉`.
pub fn signal_count(f: f64, j: usize) -> usize {
    if f <= 0.0 {
        0
    } else {
        ((f * j as f64) - 1e-9).ceil().clamp(0.0, j as f64) as usize
    }
}

struct SliceGen {
    j: usize,
    d: usize,
    sigma: f64,
    mu1: f64,
}

impl SliceGen {
    fn bag(&self, n_signal: usize, rng: &mut ChaCha8Rng) -> Result<FeatureBag> {
        let noise = Normal::new(0.0, self.sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut cells: Vec<usize> = (0..self.j).collect();
        cells.shuffle(rng);
        let mut is_signal = vec![false; self.j];
        for &c in &cells[..n_signal] {
            is_signal[c] = true;
        }
        let mut data = Vec::with_capacity(self.j * self.d);
        for &s in &is_signal {
            let mean = if s { self.mu1 } else { 0.0 };
            data.extend((0..self.d).map(|_| mean + noise.sample(rng)));
        }
        let side = (self.j as f64).sqrt().ceil() as u32;
        let coords = (0..self.j as u32).map(|i| (i / side, i % side)).collect();
        FeatureBag::new(Matrix::new(self.j, self.d, data)?, coords, PATCH_SIZE_PX)
    }
}

struct VolumePlan<'a> {
    patient: String,
    biopsy: String,
    n_slices: usize,
    pitch_um: f64,
    slice_gen: &'a SliceGen,
    label: Option<usize>,
    /// Slice that carries the label and is marked for training.
    labeled: Option<usize>,
}

fn write_volume(out_dir: &Path, plan: &VolumePlan, signal: impl Fn(usize) -> f64, seed: u64) -> Result<VolumeManifest> {
    let VolumePlan {
        patient,
        biopsy,
        n_slices,
        pitch_um,
        slice_gen,
        label,
        labeled,
    } = plan;
    let (n_slices, pitch_um, label, labeled) = (*n_slices, *pitch_um, *label, *labeled);
    let rel_dir = PathBuf::from(patient).join(biopsy);
    let dir = out_dir.join(&rel_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut volume = VolumeManifest::new(patient, biopsy);
    for i in 0..n_slices {
        let n_signal = signal_count(signal(i), slice_gen.j);
        let bag = slice_gen.bag(n_signal, &mut rng)?;
        let name = format!("{i:04}.cfs");
        let path = dir.join(&name);
        fs::write(&path, bag.to_bytes()).map_err(|e| Error::io(&path, e))?;
        let is_soi = labeled == Some(i);
        volume.slices.push(SliceRecord {
            slice_index: i,
            depth_um: i as f64 * pitch_um,
            label: if is_soi { label } else { None },
            is_train: is_soi,
            feature_path: rel_dir.join(name),
        });
    }
    Ok(volume)
}

/// Writes a dataset under `out_dir` (feature files plus `manifest.tsv` with
/// paths relative to `out_dir`) and returns its manifests with paths resolved
/// against `out_dir`. Only the center slice of each volume is labeled.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<Vec<VolumeManifest>> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = (spec.positive_rate * spec.n_patients as f64).round() as usize;
    let mut labels: Vec<usize> = (0..spec.n_patients).map(|i| usize::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);
    let slice_gen = SliceGen {
        j: spec.patches_per_slice,
        d: spec.feature_dim,
        sigma: spec.sigma,
        mu1: spec.signal_mean(),
    };
    let jobs: Vec<(usize, usize)> = (0..spec.n_patients)
        .flat_map(|p| (0..spec.biopsies_per_patient).map(move |b| (p, b)))
        .collect();
    let volumes = jobs
        .par_iter()
        .map(|&(p, b)| {
            let label = labels[p];
            let vol_seed = mix(mix(seed, p as u64), b as u64);
            let plan = VolumePlan {
                patient: format!("P{p:03}"),
                biopsy: format!("B{b}"),
                n_slices: spec.slices_per_volume,
                pitch_um: spec.pitch_um,
                slice_gen: &slice_gen,
                label: Some(label),
                labeled: Some(spec.center_index()),
            };
            let signal = |i| if label == 1 { spec.slice_signal(i) } else { 0.0 };
            write_volume(out_dir, &plan, signal, vol_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    save_manifest(out_dir.join(MANIFEST_NAME), &volumes)?;
    Ok(resolved(volumes, out_dir))
}

fn resolved(mut volumes: Vec<VolumeManifest>, base: &Path) -> Vec<VolumeManifest> {
    for v in &mut volumes {
        v.resolve_paths(base);
    }
    volumes
}

/// A single unlabeled volume with signal on every slice whose depth lies in
/// `[band_lo_um, band_hi_um]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlantedSpec {
    pub slices: usize,
    pub pitch_um: f64,
    pub patches_per_slice: usize,
    pub feature_dim: usize,
    pub signal_fraction: f64,
    pub separation: f64,
    pub sigma: f64,
    pub band_lo_um: f64,
    pub band_hi_um: f64,
}

impl PlantedSpec {
    pub fn in_band(&self, depth_um: f64) -> bool {
        depth_um >= self.band_lo_um - 1e-9 && depth_um <= self.band_hi_um + 1e-9
    }
}

pub fn generate_planted_volume(spec: &PlantedSpec, seed: u64, out_dir: &Path) -> Result<VolumeManifest> {
    if !(spec.signal_fraction > 0.0 && spec.signal_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "signal fraction {} outside (0, 1]",
            spec.signal_fraction
        )));
    }
    if spec.slices == 0 || spec.patches_per_slice == 0 || spec.feature_dim == 0 {
        return Err(Error::Config("planted volume dimensions must be >= 1".into()));
    }
    if !(spec.sigma > 0.0) || !(spec.pitch_um > 0.0) || spec.band_hi_um < spec.band_lo_um {
        return Err(Error::Config("planted volume needs sigma, pitch > 0 and an ordered band".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let slice_gen = SliceGen {
        j: spec.patches_per_slice,
        d: spec.feature_dim,
        sigma: spec.sigma,
        mu1: spec.separation * spec.sigma / (spec.feature_dim as f64).sqrt(),
    };
    let plan = VolumePlan {
        patient: "planted".into(),
        biopsy: "V0".into(),
        n_slices: spec.slices,
        pitch_um: spec.pitch_um,
        slice_gen: &slice_gen,
        label: None,
        labeled: None,
    };
    let signal = |i: usize| {
        if spec.in_band(i as f64 * spec.pitch_um) {
            spec.signal_fraction
        } else {
            0.0
        }
    };
    let volume = write_volume(out_dir, &plan, signal, seed)?;
    save_manifest(out_dir.join(MANIFEST_NAME), std::slice::from_ref(&volume))?;
    Ok(resolved(vec![volume], out_dir).remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_feature_bag, load_manifest_resolved};

    fn small(context: ContextMode) -> SynthSpec {
        SynthSpec {
            n_patients: 4,
            slices_per_volume: 21,
            band_half_width_um: 6.0,
            soi_gap_um: 2.0,
            context,
            ..SynthSpec::default()
        }
    }

    fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn rejects_bad_fraction() {
        let dir = tempfile::tempdir().unwrap();
        for rho in [0.0, -0.1, 1.5] {
            let spec = SynthSpec {
                signal_fraction: rho,
                ..small(ContextMode::SoiSignal)
            };
            assert!(matches!(generate_synthetic(&spec, 0, dir.path()), Err(Error::Config(_))));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = small(ContextMode::NeighborOnly);
        generate_synthetic(&spec, 11, a.path()).unwrap();
        generate_synthetic(&spec, 11, b.path()).unwrap();
        assert_eq!(read_tree(a.path()), read_tree(b.path()));
        let c = tempfile::tempdir().unwrap();
        generate_synthetic(&spec, 12, c.path()).unwrap();
        assert_ne!(read_tree(a.path()), read_tree(c.path()));
    }

    #[test]
    fn manifest_reloads_and_labels_center() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small(ContextMode::SoiSignal);
        let vols = generate_synthetic(&spec, 3, dir.path()).unwrap();
        assert_eq!(load_manifest_resolved(dir.path().join(MANIFEST_NAME)).unwrap(), vols);
        let positives = vols.iter().filter(|v| v.slices[10].label == Some(1)).count();
        assert_eq!(positives, 2);
        for v in &vols {
            assert_eq!(v.training_positions(), vec![10]);
        }
    }

    #[test]
    fn neighbor_only_profile() {
        let spec = small(ContextMode::NeighborOnly);
        assert_eq!(spec.slice_signal(10), 0.0);
        assert_eq!(spec.slice_signal(12), 0.0);
        assert_eq!(spec.slice_signal(13), 0.25);
        assert_eq!(spec.slice_signal(16), 0.25);
        assert_eq!(spec.slice_signal(17), 0.0);
        let soi = small(ContextMode::SoiSignal);
        assert_eq!(soi.slice_signal(10), 0.25);
    }

    #[test]
    fn signal_counts_round_up() {
        assert_eq!(signal_count(0.25, 16), 4);
        assert_eq!(signal_count(0.3, 16), 5);
        assert_eq!(signal_count(1.0, 7), 7);
        assert_eq!(signal_count(0.0, 7), 0);
    }

    #[test]
    fn positive_patch_mean_near_mu1() {
        // Separate the planted patches by projecting on the signal direction.
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_patients: 2,
            positive_rate: 1.0,
            slices_per_volume: 1,
            patches_per_slice: 64,
            feature_dim: 8,
            signal_fraction: 1.0,
            separation: 4.0,
            ..SynthSpec::default()
        };
        let vols = generate_synthetic(&spec, 5, dir.path()).unwrap();
        let mu1 = spec.signal_mean();
        for v in &vols {
            let bag = load_feature_bag(&v.slices[0].feature_path).unwrap();
            let n = bag.num_patches() as f64;
            let tol = 3.0 * spec.sigma / (spec.signal_fraction * n).sqrt();
            for k in 0..spec.feature_dim {
                let mean: f64 = (0..bag.num_patches()).map(|j| bag.features.get(j, k)).sum::<f64>() / n;
                assert!((mean - mu1).abs() < tol, "coord {k}: {mean} vs {mu1}");
            }
        }
    }

    #[test]
    fn planted_volume_band() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PlantedSpec {
            slices: 30,
            pitch_um: 10.0,
            patches_per_slice: 8,
            feature_dim: 4,
            signal_fraction: 1.0,
            separation: 50.0,
            sigma: 1.0,
            band_lo_um: 100.0,
            band_hi_um: 150.0,
        };
        let v = generate_planted_volume(&spec, 1, dir.path()).unwrap();
        for s in &v.slices {
            let bag = load_feature_bag(&s.feature_path).unwrap();
            let mean = bag.features.sum() / bag.features.len() as f64;
            assert_eq!(mean > 12.5, spec.in_band(s.depth_um), "depth {}", s.depth_um);
        }
    }
}
