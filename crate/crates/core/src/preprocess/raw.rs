//! Raw two-channel slices.
//!
//! Layout (little-endian): magic `CARPRAW1`, `u32` width, `u32` height,
//! `f64` pitch in µm per pixel, then the nuclear plane and the cytoplasm
//! plane, each `width·height` `u16` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 8] = b"CARPRAW1";
const HEADER_LEN: usize = 8 + 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct RawSlice {
    pub width: usize,
    pub height: usize,
    pub nuclear: Vec<u16>,
    pub cytoplasm: Vec<u16>,
    pub pitch_um_per_px: f64,
}

impl RawSlice {
    pub fn new(
        width: usize,
        height: usize,
        nuclear: Vec<u16>,
        cytoplasm: Vec<u16>,
        pitch_um_per_px: f64,
    ) -> Result<Self> {
        let n = width * height;
        if nuclear.len() != n || cytoplasm.len() != n {
            return Err(Error::dim(
                "RawSlice",
                format!(
                    "{width}x{height} needs {n} pixels per channel, got {} and {}",
                    nuclear.len(),
                    cytoplasm.len()
                ),
            ));
        }
        if !(pitch_um_per_px > 0.0 && pitch_um_per_px.is_finite()) {
            return Err(Error::Config(format!("pixel pitch {pitch_um_per_px} must be positive")));
        }
        Ok(Self {
            width,
            height,
            nuclear,
            cytoplasm,
            pitch_um_per_px,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.nuclear.len());
        out.extend_from_slice(RAW_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&self.pitch_um_per_px.to_le_bytes());
        for v in self.nuclear.iter().chain(&self.cytoplasm) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < RAW_MAGIC.len() || &bytes[..RAW_MAGIC.len()] != RAW_MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "CARPRAW1",
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.into(),
                detail: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
            });
        }
        let width = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let height = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let pitch = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let payload = &bytes[HEADER_LEN..];
        if !payload.len().is_multiple_of(2) {
            return Err(Error::Truncated {
                path: path.into(),
                detail: "payload ends mid-value".into(),
            });
        }
        let n = width * height;
        if payload.len() / 2 != 2 * n {
            return Err(Error::LengthMismatch {
                path: path.into(),
                expected: 2 * n,
                found: payload.len() / 2,
            });
        }
        let mut values = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]));
        let nuclear: Vec<u16> = values.by_ref().take(n).collect();
        let cytoplasm: Vec<u16> = values.collect();
        Self::new(width, height, nuclear, cytoplasm, pitch)
    }
}

pub fn load_raw_slice(path: impl AsRef<Path>) -> Result<RawSlice> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawSlice::from_bytes(&bytes, path)
}

pub fn save_raw_slice(path: impl AsRef<Path>, slice: &RawSlice) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, slice.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let s = RawSlice::new(3, 2, vec![0, 1, 2, 3, 4, 65535], vec![9; 6], 0.5).unwrap();
        let back = RawSlice::from_bytes(&s.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn corruption_detected() {
        let s = RawSlice::new(2, 2, vec![1; 4], vec![2; 4], 1.0).unwrap();
        let bytes = s.to_bytes();
        assert!(matches!(
            RawSlice::from_bytes(&bytes[..bytes.len() - 2], Path::new("x")),
            Err(Error::LengthMismatch { expected: 8, found: 7, .. })
        ));
        assert!(matches!(
            RawSlice::from_bytes(&bytes[..10], Path::new("x")),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[3] = b'?';
        assert!(matches!(RawSlice::from_bytes(&bad, Path::new("x")), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn channel_mismatch_rejected() {
        assert!(RawSlice::new(2, 2, vec![0; 4], vec![0; 3], 1.0).is_err());
    }
}
