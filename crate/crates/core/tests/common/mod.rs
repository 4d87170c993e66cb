#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use carp3d::data::{FeatureBag, TrainingExample};
use carp3d::diffmath::Matrix;
use carp3d::preprocess::{save_raw_slice, RawSlice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `j` patches of standard-normal features on a 3-wide grid.
pub fn random_bag(rng: &mut ChaCha8Rng, j: usize, d: usize) -> FeatureBag {
    let n = Normal::new(0.0, 1.0).unwrap();
    let data = (0..j * d).map(|_| n.sample(rng)).collect();
    let coords = (0..j as u32).map(|i| (i / 3, i % 3)).collect();
    FeatureBag::new(Matrix::new(j, d, data).unwrap(), coords, 256).unwrap()
}

/// Single-slice bags; class-1 bags have a +2 shift on their first 4 patches.
pub fn separable_examples(n: usize, j: usize, d: usize, seed: u64) -> Vec<TrainingExample> {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let label = i % 2;
            let data = (0..j * d)
                .map(|k| noise.sample(&mut r) + if label == 1 && k / d < 4 { 2.0 } else { 0.0 })
                .collect();
            let coords = (0..j as u32).map(|c| (0, c)).collect();
            let bag = FeatureBag::new(Matrix::new(j, d, data).unwrap(), coords, 256).unwrap();
            TrainingExample {
                bags: vec![bag],
                soi_pos: 0,
                label: Some(label),
                patient_id: format!("P{i:02}"),
                biopsy_id: "B".into(),
                depth_um: 0.0,
            }
        })
        .collect()
}

/// A two-channel slice with a bright disc of tissue on a dim background.
pub fn tissue_slice(seed: u64, width: usize, height: usize) -> RawSlice {
    let mut r = rng(seed);
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let radius = 0.45 * width.min(height) as f64;
    let mut nuc = Vec::with_capacity(width * height);
    let mut cyt = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let inside = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() < radius;
            if inside {
                cyt.push(r.random_range(2000..6000));
                nuc.push(r.random_range(500..20000));
            } else {
                cyt.push(r.random_range(50..150));
                nuc.push(r.random_range(0..100));
            }
        }
    }
    RawSlice::new(width, height, nuc, cyt, 0.5).unwrap()
}

/// `<dir>/<patient>/<biopsy>/<slice>.craw` for the given layout.
pub fn write_raw_tree(dir: &Path, layout: &[(&str, &str, usize)], size: usize, seed: u64) {
    for (k, &(p, b, s)) in layout.iter().enumerate() {
        let path = dir.join(p).join(b).join(format!("{s}.craw"));
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_raw_slice(&path, &tissue_slice(seed + k as u64, size, size)).unwrap();
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// First differing path between two snapshots, if any.
pub fn first_difference(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) -> Option<String> {
    for (k, v) in a {
        match b.get(k) {
            None => return Some(format!("{} missing on rerun", k.display())),
            Some(w) if w != v => return Some(format!("{} differs", k.display())),
            _ => {}
        }
    }
    b.keys()
        .find(|k| !a.contains_key(*k))
        .map(|k| format!("{} only on rerun", k.display()))
}

/// `n` bags with patch counts drawn from `j`.
pub fn random_bags(rng: &mut ChaCha8Rng, n: usize, j: std::ops::Range<usize>, d: usize) -> Vec<FeatureBag> {
    (0..n)
        .map(|_| {
            let jj = rng.random_range(j.clone());
            random_bag(rng, jj, d)
        })
        .collect()
}
