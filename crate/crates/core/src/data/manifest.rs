//! Volume manifests: UTF-8 TSV with a header row, one row per slice.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 7] = [
    "patient_id",
    "biopsy_id",
    "slice_index",
    "depth_um",
    "label",
    "is_train",
    "feature_path",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub slice_index: usize,
    pub depth_um: f64,
    /// 0 = low grade, 1 = higher grade, `None` = unlabeled.
    pub label: Option<usize>,
    pub is_train: bool,
    pub feature_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeManifest {
    pub patient_id: String,
    pub biopsy_id: String,
    pub slices: Vec<SliceRecord>,
}

impl VolumeManifest {
    pub fn new(patient_id: impl Into<String>, biopsy_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            biopsy_id: biopsy_id.into(),
            slices: Vec::new(),
        }
    }

    pub fn id(&self) -> String {
        format!("{}/{}", self.patient_id, self.biopsy_id)
    }

    pub fn position_of(&self, slice_index: usize) -> Option<usize> {
        self.slices
            .binary_search_by_key(&slice_index, |s| s.slice_index)
            .ok()
    }

    /// Position of the middle slice (lower middle for even counts).
    pub fn center_position(&self) -> Option<usize> {
        (!self.slices.is_empty()).then(|| (self.slices.len() - 1) / 2)
    }

    /// Positions of the slices used as supervised SOIs: those marked
    /// `is_train`, or the labeled center slice when none is marked.
    pub fn training_positions(&self) -> Vec<usize> {
        let marked: Vec<usize> = (0..self.slices.len())
            .filter(|&i| self.slices[i].is_train)
            .collect();
        if !marked.is_empty() {
            return marked;
        }
        self.center_position()
            .filter(|&c| self.slices[c].label.is_some())
            .into_iter()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.slices.windows(2) {
            if w[1].slice_index <= w[0].slice_index {
                return Err(Error::Manifest(format!(
                    "{}: slice_index {} follows {} (must increase)",
                    self.id(),
                    w[1].slice_index,
                    w[0].slice_index
                )));
            }
            if w[1].depth_um <= w[0].depth_um {
                return Err(Error::Manifest(format!(
                    "{}: slice {} has depth {} not above slice {} at {}",
                    self.id(),
                    w[1].slice_index,
                    w[1].depth_um,
                    w[0].slice_index,
                    w[0].depth_um
                )));
            }
        }
        for s in &self.slices {
            if !s.depth_um.is_finite() {
                return Err(Error::Manifest(format!(
                    "{}: slice {} has non-finite depth",
                    self.id(),
                    s.slice_index
                )));
            }
            if s.is_train && s.label.is_none() {
                return Err(Error::Manifest(format!(
                    "{}: training slice {} has no label",
                    self.id(),
                    s.slice_index
                )));
            }
            if matches!(s.label, Some(l) if l > 1) {
                return Err(Error::Manifest(format!(
                    "{}: slice {} label must be 0, 1 or -",
                    self.id(),
                    s.slice_index
                )));
            }
        }
        Ok(())
    }

    /// Rebases relative feature paths onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for s in &mut self.slices {
            if s.feature_path.is_relative() {
                s.feature_path = base.join(&s.feature_path);
            }
        }
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<VolumeManifest>> {
    let mut volumes: Vec<VolumeManifest> = Vec::new();
    let mut seen = HashSet::new();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Ok(volumes);
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != MANIFEST_HEADER {
        return Err(parse_err(
            hline + 1,
            format!("expected header {:?}", MANIFEST_HEADER.join("\t")),
        ));
    }
    for (i, line) in lines {
        let line_no = i + 1;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != MANIFEST_HEADER.len() {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", MANIFEST_HEADER.len(), f.len()),
            ));
        }
        let (patient, biopsy) = (f[0].trim(), f[1].trim());
        if patient.is_empty() || biopsy.is_empty() {
            return Err(parse_err(line_no, "empty patient_id or biopsy_id".into()));
        }
        let slice_index: usize = f[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("slice_index {:?}: {e}", f[2])))?;
        let depth_um: f64 = f[3]
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("depth_um {:?}: {e}", f[3])))?;
        let label = match f[4].trim() {
            "0" => Some(0),
            "1" => Some(1),
            "-" => None,
            other => return Err(parse_err(line_no, format!("label {other:?} is not 0, 1 or -"))),
        };
        let is_train = match f[5].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line_no, format!("is_train {other:?} is not 0 or 1"))),
        };
        let feature_path = f[6].trim();
        if feature_path.is_empty() {
            return Err(parse_err(line_no, "empty feature_path".into()));
        }
        if !seen.insert((patient.to_string(), biopsy.to_string(), slice_index)) {
            return Err(Error::Manifest(format!(
                "duplicate slice {patient}/{biopsy}/{slice_index} at line {line_no}"
            )));
        }
        let record = SliceRecord {
            slice_index,
            depth_um,
            label,
            is_train,
            feature_path: PathBuf::from(feature_path),
        };
        match volumes
            .iter_mut()
            .find(|v| v.patient_id == patient && v.biopsy_id == biopsy)
        {
            Some(v) => v.slices.push(record),
            None => {
                let mut v = VolumeManifest::new(patient, biopsy);
                v.slices.push(record);
                volumes.push(v);
            }
        }
    }
    for v in &volumes {
        v.validate()?;
    }
    Ok(volumes)
}

/// Reads a manifest. Feature paths are returned as written; see
/// [`VolumeManifest::resolve_paths`].
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<VolumeManifest>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Loads a manifest and rebases relative feature paths onto its directory.
pub fn load_manifest_resolved(path: impl AsRef<Path>) -> Result<Vec<VolumeManifest>> {
    let path = path.as_ref();
    let mut volumes = load_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for v in &mut volumes {
        v.resolve_paths(base);
    }
    Ok(volumes)
}

pub fn manifest_to_string(volumes: &[VolumeManifest]) -> String {
    let mut out = MANIFEST_HEADER.join("\t");
    out.push('\n');
    for v in volumes {
        for s in &v.slices {
            let label = s.label.map_or("-".to_string(), |l| l.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                v.patient_id,
                v.biopsy_id,
                s.slice_index,
                s.depth_um,
                label,
                u8::from(s.is_train),
                s.feature_path.display()
            );
        }
    }
    out
}

pub fn save_manifest(path: impl AsRef<Path>, volumes: &[VolumeManifest]) -> Result<()> {
    let path = path.as_ref();
    for v in volumes {
        v.validate()?;
    }
    fs::write(path, manifest_to_string(volumes)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(p: &str, b: &str, n: usize) -> VolumeManifest {
        let mut v = VolumeManifest::new(p, b);
        for i in 0..n {
            v.slices.push(SliceRecord {
                slice_index: i * 2,
                depth_um: i as f64 * 2.5,
                label: (i == n / 2).then_some(i % 2),
                is_train: i == n / 2,
                feature_path: PathBuf::from(format!("{p}/{b}/{i}.cfs")),
            });
        }
        v
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_manifest("", Path::new("m")).unwrap().is_empty());
    }

    #[test]
    fn roundtrip_two_by_two() {
        let vols = vec![
            volume("P1", "B1", 3),
            volume("P1", "B2", 4),
            volume("P2", "B1", 5),
            volume("P2", "B2", 2),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        save_manifest(&p, &vols).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), vols);
    }

    #[test]
    fn out_of_order_depth_names_slice() {
        let text = "patient_id\tbiopsy_id\tslice_index\tdepth_um\tlabel\tis_train\tfeature_path\n\
                    P\tB\t0\t0\t-\t0\ta\n\
                    P\tB\t1\t5\t-\t0\tb\n\
                    P\tB\t2\t4\t-\t0\tc\n";
        let err = parse_manifest(text, Path::new("m")).unwrap_err().to_string();
        assert!(err.contains("slice 2"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "patient_id\tbiopsy_id\tslice_index\tdepth_um\tlabel\tis_train\tfeature_path\n\
                    P\tB\t0\t0\t-\t0\ta\n\
                    P\tB\tx\t1\t-\t0\tb\n";
        match parse_manifest(text, Path::new("m")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad_label = text.replace("\tx\t1\t-", "\t1\t1\t7");
        assert!(matches!(
            parse_manifest(&bad_label, Path::new("m")),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn duplicates_and_unlabeled_training_rejected() {
        let head = MANIFEST_HEADER.join("\t");
        let dup = format!("{head}\nP\tB\t0\t0\t-\t0\ta\nP\tB\t0\t0\t-\t0\ta\n");
        assert!(matches!(parse_manifest(&dup, Path::new("m")), Err(Error::Manifest(_))));
        let unl = format!("{head}\nP\tB\t0\t0\t-\t1\ta\n");
        assert!(matches!(parse_manifest(&unl, Path::new("m")), Err(Error::Manifest(_))));
    }

    #[test]
    fn training_positions_fall_back_to_center() {
        let mut v = volume("P", "B", 5);
        assert_eq!(v.training_positions(), vec![2]);
        v.slices[2].is_train = false;
        assert_eq!(v.training_positions(), vec![2]);
        v.slices[2].label = None;
        assert!(v.training_positions().is_empty());
    }
}
