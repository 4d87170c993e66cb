//! Raw slice to patch features: Otsu masking, intensity normalization,
//! tiling, and a toy encoder.

mod encode;
mod normalize;
mod otsu;
mod raw;
mod tile;

pub use encode::{toy_encode, ToyEncoder, HIST_BINS_PER_CHANNEL, PROJECTION_DIM};
pub use normalize::{normalize_cytoplasm, normalize_foreground, normalize_nuclear_patch, CytoplasmMap};
pub use otsu::{histogram_u16, otsu_threshold, percentile_nearest_rank, HIST_BINS};
pub use raw::{load_raw_slice, save_raw_slice, RawSlice, RAW_MAGIC};
pub use tile::{tile, NormalizedPatch, TileConfig, TileResult, DEFAULT_MIN_FOREGROUND, DEFAULT_PATCH_PX};

use crate::data::FeatureBag;
use crate::diffmath::Matrix;
use crate::error::Result;

/// Tiles and encodes one slice. `None` when the slice has no usable tissue.
pub fn encode_slice(slice: &RawSlice, tile_config: &TileConfig, encoder: &ToyEncoder, d: usize) -> Result<Option<FeatureBag>> {
    let tiles = tile(slice, tile_config)?;
    if tiles.excluded {
        return Ok(None);
    }
    let rows: Vec<Vec<f64>> = tiles.patches.iter().map(|p| encoder.encode(p, d)).collect();
    let coords = tiles.patches.iter().map(|p| p.origin).collect();
    let features = Matrix::from_rows(&rows)?;
    FeatureBag::new(features, coords, tile_config.patch_px as u32).map(Some)
}
