//! Deterministic stand-in for a pretrained patch encoder.
//!
//! Output: a 64-dim seeded Gaussian projection of the patch, followed by
//! 16-bin intensity histograms of each of the 3 channels (48 values), then
//! truncated or zero-padded to `d`. The projection acts on a 16×16
//! average-pooled copy of the two stain channels rather than on every pixel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tile::NormalizedPatch;

pub const HIST_BINS_PER_CHANNEL: usize = 16;
pub const POOL_GRID: usize = 16;
pub const PROJECTION_DIM: usize = 64;
const POOLED_LEN: usize = 2 * POOL_GRID * POOL_GRID;

#[derive(Clone, Debug)]
pub struct ToyEncoder {
    /// `POOLED_LEN × PROJECTION_DIM`, row-major.
    projection: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (POOLED_LEN as f64).sqrt();
        let projection = (0..POOLED_LEN * PROJECTION_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self { projection }
    }

    pub fn encode(&self, patch: &NormalizedPatch, d: usize) -> Vec<f64> {
        let pooled = pool(patch);
        let mut out = vec![0.0; PROJECTION_DIM];
        for (i, &x) in pooled.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.projection[i * PROJECTION_DIM..(i + 1) * PROJECTION_DIM];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        for c in 0..3 {
            out.extend(histogram(patch.channel(c)));
        }
        out.resize(d, 0.0);
        out
    }
}

pub fn toy_encode(patch: &NormalizedPatch, d: usize, seed: u64) -> Vec<f64> {
    ToyEncoder::new(seed).encode(patch, d)
}

/// Fraction of pixels in each of 16 equal-width bins over `[0, 1]`.
fn histogram(values: &[f32]) -> [f64; HIST_BINS_PER_CHANNEL] {
    let mut h = [0.0; HIST_BINS_PER_CHANNEL];
    if values.is_empty() {
        return h;
    }
    for &v in values {
        let b = ((v as f64 * HIST_BINS_PER_CHANNEL as f64) as usize).min(HIST_BINS_PER_CHANNEL - 1);
        h[b] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// Block means of channels 0 and 1 on a 16×16 grid.
fn pool(patch: &NormalizedPatch) -> Vec<f64> {
    let s = patch.size;
    let mut out = Vec::with_capacity(POOLED_LEN);
    for c in 0..2 {
        let ch = patch.channel(c);
        for gr in 0..POOL_GRID {
            let (y0, y1) = (gr * s / POOL_GRID, (gr + 1) * s / POOL_GRID);
            for gc in 0..POOL_GRID {
                let (x0, x1) = (gc * s / POOL_GRID, (gc + 1) * s / POOL_GRID);
                let n = (y1 - y0) * (x1 - x0);
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += ch[y * s + x0..y * s + x1].iter().map(|&v| v as f64).sum::<f64>();
                }
                out.push(if n == 0 { 0.0 } else { acc / n as f64 });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch_with(value: f32) -> NormalizedPatch {
        let mut p = NormalizedPatch::zeros((0, 0), 32);
        p.channel_mut(0).fill(value);
        p.channel_mut(1).fill(value);
        p
    }

    #[test]
    fn deterministic() {
        let mut p = patch_with(0.3);
        p.channel_mut(0)[5] = 0.9;
        assert_eq!(toy_encode(&p, 128, 4), toy_encode(&p, 128, 4));
        assert_ne!(toy_encode(&p, 128, 4), toy_encode(&p, 128, 5));
    }

    #[test]
    fn zero_patch() {
        let v = toy_encode(&NormalizedPatch::zeros((0, 0), 32), 128, 1);
        assert!(v[..PROJECTION_DIM].iter().all(|&x| x == 0.0));
        for c in 0..3 {
            let h = &v[PROJECTION_DIM + c * 16..PROJECTION_DIM + (c + 1) * 16];
            assert_eq!(h[0], 1.0);
            assert!(h[1..].iter().all(|&x| x == 0.0));
        }
        assert!(v[PROJECTION_DIM + 48..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn disjoint_ranges_give_disjoint_histograms() {
        let lo = toy_encode(&patch_with(0.1), 112, 0);
        let hi = toy_encode(&patch_with(0.8), 112, 0);
        for c in 0..2 {
            let r = PROJECTION_DIM + c * 16..PROJECTION_DIM + (c + 1) * 16;
            let (a, b) = (&lo[r.clone()], &hi[r]);
            assert_ne!(a, b);
            assert!(a.iter().zip(b).all(|(x, y)| *x == 0.0 || *y == 0.0));
        }
    }

    #[test]
    fn truncate_and_pad() {
        let p = patch_with(0.5);
        let full = toy_encode(&p, 200, 2);
        assert_eq!(full.len(), 200);
        assert_eq!(&toy_encode(&p, 10, 2)[..], &full[..10]);
    }
}
