use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 512;
pub const DEFAULT_ATTN_DIM: usize = 256;
pub const DEFAULT_N_CLASSES: usize = 2;
pub const DEFAULT_HALF_RANGE_UM: f64 = 80.0;
pub const DEFAULT_PITCH_UM: f64 = 1.0;

/// Inter-slice aggregation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// SOI only.
    None,
    /// One attention module over the union of all patches.
    Naive,
    /// Arithmetic mean of slice features.
    Average,
    /// Bidirectional tanh recurrence; output is both hidden states at the SOI.
    Rnn,
    /// Learned softmax weights over slice features.
    #[serde(rename = "weighted")]
    WeightedAverage,
}

impl Pooling {
    pub const ALL: [Pooling; 5] = [
        Pooling::None,
        Pooling::Naive,
        Pooling::Average,
        Pooling::Rnn,
        Pooling::WeightedAverage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::None => "none",
            Pooling::Naive => "naive",
            Pooling::Average => "average",
            Pooling::Rnn => "rnn",
            Pooling::WeightedAverage => "weighted",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Pooling::None => 0,
            Pooling::Naive => 1,
            Pooling::Average => 2,
            Pooling::Rnn => 3,
            Pooling::WeightedAverage => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Pooling::ALL.into_iter().find(|p| p.code() == code)
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooling::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown pooling {s:?}; expected one of none, naive, average, rnn, weighted"
                ))
            })
    }
}

/// Which neighbouring slices feed the inter-slice pooling: `m` slices on
/// each side of the SOI, `d_slices` apart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub m: usize,
    pub d_slices: usize,
    pub pitch_um: f64,
}

impl NeighborhoodSpec {
    /// The SOI alone.
    pub fn soi_only() -> Self {
        Self {
            m: 0,
            d_slices: 1,
            pitch_um: DEFAULT_PITCH_UM,
        }
    }

    /// Derives the slice spacing so that `m * d_slices * pitch_um` equals
    /// `half_range_um`. The spacing must come out as a whole number of slices.
    pub fn from_half_range(m: usize, half_range_um: f64, pitch_um: f64) -> Result<Self> {
        if !(pitch_um > 0.0 && pitch_um.is_finite()) {
            return Err(Error::Config(format!("pitch_um must be positive, got {pitch_um}")));
        }
        if m == 0 {
            return Ok(Self {
                m: 0,
                d_slices: 1,
                pitch_um,
            });
        }
        let spacing = half_range_um / (m as f64 * pitch_um);
        let rounded = spacing.round();
        if rounded < 1.0 || (spacing - rounded).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "half-range {half_range_um} um is not divisible into {m} steps of whole slices at pitch {pitch_um} um"
            )));
        }
        Ok(Self {
            m,
            d_slices: rounded as usize,
            pitch_um,
        })
    }

    pub fn half_range_um(&self) -> f64 {
        self.m as f64 * self.d_slices as f64 * self.pitch_um
    }

    /// Maximum number of slices in a neighbourhood, `2m + 1`.
    pub fn max_slices(&self) -> usize {
        2 * self.m + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.m > 0 && self.d_slices == 0 {
            return Err(Error::Config("d_slices must be >= 1 when m > 0".into()));
        }
        if !(self.pitch_um > 0.0 && self.pitch_um.is_finite()) {
            return Err(Error::Config(format!(
                "pitch_um must be positive, got {}",
                self.pitch_um
            )));
        }
        Ok(())
    }
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        Self::soi_only()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub n_classes: usize,
    pub pooling: Pooling,
    pub neighborhood: NeighborhoodSpec,
}

impl ModelConfig {
    /// Default widths (512 embedding, 256 attention, 2 classes).
    pub fn new(feature_dim: usize, pooling: Pooling, neighborhood: NeighborhoodSpec) -> Self {
        Self {
            feature_dim,
            embed_dim: DEFAULT_EMBED_DIM,
            attn_dim: DEFAULT_ATTN_DIM,
            n_classes: DEFAULT_N_CLASSES,
            pooling,
            neighborhood,
        }
    }

    pub fn with_dims(mut self, embed_dim: usize, attn_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self.attn_dim = attn_dim;
        self
    }

    /// Width of the context-aware feature fed to the classifier.
    pub fn context_dim(&self) -> usize {
        match self.pooling {
            Pooling::Rnn => 2 * self.embed_dim,
            _ => self.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("attn_dim", self.attn_dim),
            ("n_classes", self.n_classes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        self.neighborhood.validate()?;
        if self.pooling == Pooling::None && self.neighborhood.m != 0 {
            return Err(Error::Config(format!(
                "pooling none uses the SOI only, but m = {}",
                self.neighborhood.m
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_from_half_range() {
        let n = NeighborhoodSpec::from_half_range(2, 80.0, 1.0).unwrap();
        assert_eq!(n.d_slices, 40);
        assert_eq!(n.half_range_um(), 80.0);
        for m in [1, 2, 4, 8] {
            let n = NeighborhoodSpec::from_half_range(m, 80.0, 1.0).unwrap();
            assert_eq!(n.m * n.d_slices, 80);
        }
        assert!(NeighborhoodSpec::from_half_range(3, 80.0, 1.0).is_err());
        assert!(NeighborhoodSpec::from_half_range(100, 80.0, 1.0).is_err());
    }

    #[test]
    fn none_pooling_forces_m_zero() {
        let n = NeighborhoodSpec::from_half_range(2, 80.0, 1.0).unwrap();
        assert!(ModelConfig::new(8, Pooling::None, n).validate().is_err());
        assert!(ModelConfig::new(8, Pooling::None, NeighborhoodSpec::soi_only())
            .validate()
            .is_ok());
    }

    #[test]
    fn pooling_names_roundtrip() {
        for p in Pooling::ALL {
            assert_eq!(p.as_str().parse::<Pooling>().unwrap(), p);
            assert_eq!(Pooling::from_code(p.code()), Some(p));
        }
        assert!("max".parse::<Pooling>().is_err());
    }

    #[test]
    fn context_dim_by_pooling() {
        let c = ModelConfig::new(8, Pooling::Rnn, NeighborhoodSpec::soi_only());
        assert_eq!(c.context_dim(), 1024);
        let c = ModelConfig::new(8, Pooling::WeightedAverage, NeighborhoodSpec::soi_only());
        assert_eq!(c.context_dim(), 512);
    }
}
