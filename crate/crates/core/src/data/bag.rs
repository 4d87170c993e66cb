//! Patch-feature bags and the `CARPFS1` feature store.
//!
//! Layout (little-endian): 7-byte magic `CARPFS1`, `u32` version, `u32` J,
//! `u32` d, `u32` patch_size_px, then J records of `u32` row, `u32` col and
//! d `f32` features. Features are widened to `f64` in memory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 7] = b"CARPFS1";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 7 + 4 * 4;

/// Patch features of one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    /// Position of the slice in its volume. Not stored in the feature file;
    /// set from the manifest when a bag is assembled into an example.
    pub slice_index: usize,
    /// J×d, one row per patch.
    pub features: Matrix,
    /// Patch grid position `(row, col)` of each feature row.
    pub coords: Vec<(u32, u32)>,
    pub patch_size_px: u32,
}

impl FeatureBag {
    pub fn new(features: Matrix, coords: Vec<(u32, u32)>, patch_size_px: u32) -> Result<Self> {
        let bag = Self {
            slice_index: 0,
            features,
            coords,
            patch_size_px,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn with_slice_index(mut self, slice_index: usize) -> Self {
        self.slice_index = slice_index;
        self
    }

    pub fn num_patches(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() == 0 {
            return Err(Error::EmptyBag("bag has no patches".into()));
        }
        if self.coords.len() != self.features.rows() {
            return Err(Error::InvalidBag(format!(
                "{} coordinates for {} patches",
                self.coords.len(),
                self.features.rows()
            )));
        }
        if let Some(i) = self.features.data().iter().position(|v| !v.is_finite()) {
            let d = self.features.cols().max(1);
            return Err(Error::InvalidBag(format!(
                "non-finite feature at patch {}, dim {}",
                i / d,
                i % d
            )));
        }
        let mut seen = HashSet::with_capacity(self.coords.len());
        for c in &self.coords {
            if !seen.insert(*c) {
                return Err(Error::InvalidBag(format!("duplicate patch coordinate {c:?}")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (j, d) = self.features.shape();
        let mut out = Vec::with_capacity(HEADER_LEN + j * (8 + 4 * d));
        out.extend_from_slice(FEATURE_MAGIC);
        for v in [FEATURE_VERSION, j as u32, d as u32, self.patch_size_px] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (r, &(row, col)) in self.coords.iter().enumerate() {
            out.extend_from_slice(&row.to_le_bytes());
            out.extend_from_slice(&col.to_le_bytes());
            for &v in self.features.row(r) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < FEATURE_MAGIC.len() || &bytes[..FEATURE_MAGIC.len()] != FEATURE_MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "CARPFS1",
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.into(),
                detail: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
            });
        }
        let word = |i: usize| {
            let o = 7 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice"))
        };
        let (version, j, d, patch_size_px) = (word(0), word(1) as usize, word(2) as usize, word(3));
        if version != FEATURE_VERSION {
            return Err(Error::Version {
                path: path.into(),
                version,
            });
        }
        if j == 0 {
            return Err(Error::EmptyBag(format!("{} declares zero patches", path.display())));
        }
        if d == 0 {
            return Err(Error::InvalidBag(format!("{} declares zero feature width", path.display())));
        }
        let payload = &bytes[HEADER_LEN..];
        if !payload.len().is_multiple_of(4) {
            return Err(Error::Truncated {
                path: path.into(),
                detail: format!("payload of {} bytes ends mid-value", payload.len()),
            });
        }
        let expected = j * (2 + d);
        if payload.len() / 4 != expected {
            return Err(Error::LengthMismatch {
                path: path.into(),
                expected,
                found: payload.len() / 4,
            });
        }
        let mut coords = Vec::with_capacity(j);
        let mut data = Vec::with_capacity(j * d);
        for rec in payload.chunks_exact(4 * (2 + d)) {
            let mut words = rec.chunks_exact(4).map(|w| <[u8; 4]>::try_from(w).expect("4 bytes"));
            let row = u32::from_le_bytes(words.next().expect("row"));
            let col = u32::from_le_bytes(words.next().expect("col"));
            coords.push((row, col));
            data.extend(words.map(|w| f32::from_le_bytes(w) as f64));
        }
        let features = Matrix::new(j, d, data)?;
        if !features.is_finite() {
            return Err(Error::InvalidBag(format!("{} holds non-finite features", path.display())));
        }
        Self::new(features, coords, patch_size_px)
    }
}

pub fn load_feature_bag(path: impl AsRef<Path>) -> Result<FeatureBag> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureBag::from_bytes(&bytes, path)
}

pub fn save_feature_bag(path: impl AsRef<Path>, bag: &FeatureBag) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bag.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bag(j: usize, d: usize, seed: u64) -> FeatureBag {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..j * d).map(|_| rng.random::<f32>() as f64 * 4.0 - 2.0).collect();
        let coords = (0..j as u32).map(|i| (i / 3, i % 3)).collect();
        FeatureBag::new(Matrix::new(j, d, data).unwrap(), coords, 256).unwrap()
    }

    #[test]
    fn roundtrip_7x16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bag.cfs");
        let bag = random_bag(7, 16, 3);
        save_feature_bag(&p, &bag).unwrap();
        let back = load_feature_bag(&p).unwrap();
        assert_eq!(back, bag);
        for (a, b) in back.features.data().iter().zip(bag.features.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let bytes = random_bag(4, 5, 1).to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        let err = FeatureBag::from_bytes(cut, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
        let err = FeatureBag::from_bytes(&bytes[..12], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn header_payload_mismatch() {
        // Header declares 3 patches of width 4; only 11 values follow.
        let mut bytes = FEATURE_MAGIC.to_vec();
        for v in [1u32, 3, 4, 256] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..11 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let err = FeatureBag::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(
            matches!(err, Error::LengthMismatch { expected: 18, found: 11, .. }),
            "{err}"
        );
    }

    #[test]
    fn bad_magic_and_empty() {
        let mut bytes = random_bag(2, 2, 0).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            FeatureBag::from_bytes(&bytes, Path::new("x")),
            Err(Error::BadMagic { .. })
        ));
        let mut empty = FEATURE_MAGIC.to_vec();
        for v in [1u32, 0, 4, 256] {
            empty.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            FeatureBag::from_bytes(&empty, Path::new("x")),
            Err(Error::EmptyBag(_))
        ));
    }

    #[test]
    fn duplicate_coords_rejected() {
        let m = Matrix::zeros(2, 3);
        assert!(FeatureBag::new(m, vec![(0, 0), (0, 0)], 256).is_err());
    }

    proptest! {
        #[test]
        fn bytes_roundtrip(j in 1usize..12, d in 1usize..20, seed in any::<u64>()) {
            let bag = random_bag(j, d, seed);
            let back = FeatureBag::from_bytes(&bag.to_bytes(), Path::new("x")).unwrap();
            prop_assert_eq!(back, bag);
        }
    }
}
