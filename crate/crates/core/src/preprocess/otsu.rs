use num_bigint::BigUint;

use crate::error::{Error, Result};

/// Number of bins of a 16-bit intensity histogram.
pub const HIST_BINS: usize = 1 << 16;

pub fn histogram_u16(values: &[u16]) -> Vec<u64> {
    let mut h = vec![0u64; HIST_BINS];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

/// Otsu threshold `t` of a histogram: pixels with value `>= t` are
/// foreground. Maximizes the between-class variance over `t in 1..len`;
/// ties go to the lowest `t`.
///
/// Class counts and sums are accumulated in integers, and the variance is
/// evaluated as `(N·s0 − S·n0)² / (n0·n1)`, which differs from
/// `w0·w1·(μ0 − μ1)²` only by the constant factor `N²`. Candidates within
/// float noise of the incumbent are compared exactly.
pub fn otsu_threshold(hist: &[u64]) -> Result<usize> {
    let total: u128 = hist.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(Error::Degenerate("histogram is empty".into()));
    }
    let sum: u128 = hist.iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();
    let (mut n0, mut s0) = (0u128, 0u128);
    let mut best: Option<Split> = None;
    for t in 1..hist.len() {
        n0 += hist[t - 1] as u128;
        s0 += (t as u128 - 1) * hist[t - 1] as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (total * s0).abs_diff(sum * n0);
        let cand = Split {
            t,
            diff,
            den: n0 * n1,
            var: (diff as f64).powi(2) / (n0 as f64 * n1 as f64),
        };
        let better = match &best {
            None => true,
            Some(b) if cand.var > b.var * (1.0 + 1e-9) => true,
            Some(b) if cand.var < b.var * (1.0 - 1e-9) => false,
            Some(b) => cand.exceeds(b),
        };
        if better {
            best = Some(cand);
        }
    }
    match best {
        Some(b) if b.diff > 0 => Ok(b.t),
        _ => Err(Error::Degenerate("constant image has no Otsu split".into())),
    }
}

struct Split {
    t: usize,
    diff: u128,
    den: u128,
    var: f64,
}

impl Split {
    /// Exact `diff²/den > other.diff²/other.den`.
    fn exceeds(&self, other: &Split) -> bool {
        let sq = |v: u128| BigUint::from(v).pow(2);
        sq(self.diff) * other.den > sq(other.diff) * self.den
    }
}

/// Nearest-rank percentile of unsorted values: the `⌈p/100 · n⌉`-th smallest.
pub fn percentile_nearest_rank(values: &[u16], p: f64) -> Option<u16> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Some(sorted[nearest_rank(sorted.len(), p) - 1])
}

pub(crate) fn nearest_rank(n: usize, p: f64) -> usize {
    // The small slack keeps exact products such as 0.99·100 from rounding up.
    ((p / 100.0 * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bimodal_deltas() {
        let mut h = vec![0u64; HIST_BINS];
        h[100] = 40;
        h[200] = 60;
        let t = otsu_threshold(&h).unwrap();
        assert!(t > 100 && t <= 200, "{t}");
        assert_eq!(t, 101);
    }

    #[test]
    fn constant_and_empty_are_degenerate() {
        let mut h = vec![0u64; HIST_BINS];
        assert!(matches!(otsu_threshold(&h), Err(Error::Degenerate(_))));
        h[7] = 10;
        assert!(matches!(otsu_threshold(&h), Err(Error::Degenerate(_))));
    }

    #[test]
    fn percentile_cases() {
        let v: Vec<u16> = (1..=100).collect();
        assert_eq!(percentile_nearest_rank(&v, 99.0), Some(99));
        assert_eq!(percentile_nearest_rank(&v, 100.0), Some(100));
        assert_eq!(percentile_nearest_rank(&[5], 99.0), Some(5));
        assert_eq!(percentile_nearest_rank(&[], 99.0), None);
        assert_eq!(nearest_rank(65536, 99.0), 64881);
    }

    proptest! {
        #[test]
        fn scaling_counts_is_invariant(bins in prop::collection::vec((0usize..HIST_BINS, 1u64..50), 2..30)) {
            let mut h = vec![0u64; HIST_BINS];
            for (b, c) in &bins {
                h[*b] += c;
            }
            let scaled: Vec<u64> = h.iter().map(|c| c * 7).collect();
            prop_assert_eq!(otsu_threshold(&h).ok(), otsu_threshold(&scaled).ok());
        }
    }
}
