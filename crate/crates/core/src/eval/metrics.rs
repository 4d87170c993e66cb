use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::mix;

pub const DEFAULT_N_BOOT: usize = 1000;

fn check_inputs(scores: &[f64], labels: &[usize]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "metric",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Metric(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by ascending score.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    idx
}

/// Area under the ROC curve via the Mann–Whitney statistic, ties credited
/// one half. Midranks are kept doubled so the statistic is an exact integer
/// until the final division.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    let order = ascending(scores);
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the midrank (i+j+2)/2.
        let twice_mid = (i + j + 2) as u128;
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_mid * group_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// `F2 = 5·TP / (5·TP + 4·FN + FP)`, which equals `5PR/(4P+R)`; 0 when
/// nothing is predicted positive.
pub fn f2_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    (5 * tp) as f64 / (5 * tp + 4 * fn_ + fp) as f64
}

/// F2 when every score `>= threshold` is called positive.
pub fn f2_at(scores: &[f64], labels: &[usize], threshold: f64) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f2_from_counts(tp, fp, fn_))
}

/// Best F2 over every distinct score used as the threshold, and that
/// threshold. Equal F2 values resolve to the highest threshold.
pub fn f2_sweep(scores: &[f64], labels: &[usize]) -> Result<(f64, f64)> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::Metric("F2 needs at least one positive".into()));
    }
    let mut order = ascending(scores);
    order.reverse();
    let (mut tp, mut fp) = (0usize, 0usize);
    // Compared as exact fractions 5TP / (5TP + 4FN + FP).
    let mut best: Option<(usize, usize, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (num, den) = (5 * tp, 5 * tp + 4 * (pos - tp) + fp);
        let better = match best {
            None => true,
            Some((bn, bd, _)) => (num as u128) * (bd as u128) > (bn as u128) * (den as u128),
        };
        if better {
            best = Some((num, den, t));
        }
    }
    let (num, den, t) = best.expect("nonempty");
    Ok((if num == 0 { 0.0 } else { num as f64 / den as f64 }, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    F2,
}

impl Metric {
    pub fn eval(self, scores: &[f64], labels: &[usize]) -> Result<f64> {
        match self {
            Metric::Auc => auc(scores, labels),
            Metric::F2 => f2_sweep(scores, labels).map(|(f, _)| f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    /// Resamples that held a single class and were skipped.
    pub skipped: usize,
    pub valid: usize,
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Percentile bootstrap: `n_boot` resamples of the (score, label) pairs with
/// replacement, resample `b` drawn from ChaCha8 seeded with `mix(seed, b)`.
/// Resamples missing a class are skipped and counted. Reports the 2.5th and
/// 97.5th percentiles of the metric over the rest.
pub fn bootstrap_ci(scores: &[f64], labels: &[usize], metric: Metric, n_boot: usize, seed: u64) -> Result<BootstrapCi> {
    check_inputs(scores, labels)?;
    if n_boot == 0 {
        return Err(Error::Config("n_boot must be >= 1".into()));
    }
    let n = scores.len();
    if n == 0 {
        return Err(Error::Metric("no samples to resample".into()));
    }
    let draws: Vec<Option<f64>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, b));
            let mut s = Vec::with_capacity(n);
            let mut l = Vec::with_capacity(n);
            for _ in 0..n {
                let k = rng.random_range(0..n);
                s.push(scores[k]);
                l.push(labels[k]);
            }
            let pos = l.iter().filter(|&&x| x == 1).count();
            if pos == 0 || pos == n {
                return Ok(None);
            }
            metric.eval(&s, &l).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let skipped = n_boot - values.len();
    if values.is_empty() {
        return Err(Error::Metric(format!("all {n_boot} bootstrap resamples were single-class")));
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    Ok(BootstrapCi {
        low: quantile_sorted(&values, 0.025),
        high: quantile_sorted(&values, 0.975),
        skipped,
        valid: values.len(),
    })
}

pub const REPORT_HEADER: [&str; 13] = [
    "n_samples",
    "n_positive",
    "auc",
    "auc_ci_low",
    "auc_ci_high",
    "f2_best",
    "f2_threshold",
    "f2_ci_low",
    "f2_ci_high",
    "n_bootstrap",
    "auc_skipped",
    "f2_skipped",
    "seed",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub n_samples: usize,
    pub n_positive: usize,
    pub auc: f64,
    pub auc_ci: BootstrapCi,
    pub f2_best: f64,
    pub f2_threshold: f64,
    pub f2_ci: BootstrapCi,
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn compute(scores: &[f64], labels: &[usize], n_boot: usize, seed: u64) -> Result<Self> {
        let (n_positive, _) = check_inputs(scores, labels)?;
        let auc = auc(scores, labels)?;
        let (f2_best, f2_threshold) = f2_sweep(scores, labels)?;
        Ok(Self {
            n_samples: scores.len(),
            n_positive,
            auc,
            auc_ci: bootstrap_ci(scores, labels, Metric::Auc, n_boot, seed)?,
            f2_best,
            f2_threshold,
            f2_ci: bootstrap_ci(scores, labels, Metric::F2, n_boot, mix(seed, 0xF2))?,
            n_bootstrap: n_boot,
            seed,
        })
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\n{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            REPORT_HEADER.join("\t"),
            self.n_samples,
            self.n_positive,
            self.auc,
            self.auc_ci.low,
            self.auc_ci.high,
            self.f2_best,
            self.f2_threshold,
            self.f2_ci.low,
            self.f2_ci.high,
            self.n_bootstrap,
            self.auc_ci.skipped,
            self.f2_ci.skipped,
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_example() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn auc_extremes_and_ties() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::Metric(_))));
    }

    #[test]
    fn f2_from_confusion() {
        assert_eq!(f2_from_counts(2, 1, 0), 10.0 / 11.0);
        // Scores [0.9, 0.8, 0.7], labels [1, 1, 0]: threshold 0.7 gives TP=2, FP=1.
        assert_eq!(f2_at(&[0.9, 0.8, 0.7], &[1, 1, 0], 0.7).unwrap(), 10.0 / 11.0);
    }

    #[test]
    fn f2_all_positive() {
        let (f, t) = f2_sweep(&[0.3, 0.1, 0.7], &[1, 1, 1]).unwrap();
        assert_eq!(f, 1.0);
        assert_eq!(t, 0.1);
        assert!(matches!(f2_sweep(&[0.3, 0.1], &[0, 0]), Err(Error::Metric(_))));
    }

    #[test]
    fn bootstrap_constant_metric() {
        // Perfectly separated with no ties: every two-class resample has AUC 1.
        let scores = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let labels = [0, 0, 0, 1, 1, 1];
        let ci = bootstrap_ci(&scores, &labels, Metric::Auc, 200, 4).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
        assert_eq!(ci.valid + ci.skipped, 200);
    }

    #[test]
    fn bootstrap_deterministic() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.5, 0.2];
        let labels = [0, 0, 1, 1, 1, 0];
        let a = bootstrap_ci(&scores, &labels, Metric::F2, 300, 9).unwrap();
        assert_eq!(a, bootstrap_ci(&scores, &labels, Metric::F2, 300, 9).unwrap());
        assert!(a.low <= a.high);
    }

    #[test]
    fn bootstrap_all_degenerate() {
        assert!(matches!(
            bootstrap_ci(&[0.3], &[1], Metric::Auc, 10, 0),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.975), 4.9);
        assert_eq!(quantile_sorted(&[2.0], 0.025), 2.0);
    }

    #[test]
    fn report_fields() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.5, 0.2, 0.9, 0.05];
        let labels = [0, 0, 1, 1, 1, 0, 1, 0];
        let r = MetricReport::compute(&scores, &labels, 100, 1).unwrap();
        assert_eq!(r.auc, auc(&scores, &labels).unwrap());
        assert_eq!(r.n_samples, 8);
        assert_eq!(r.n_positive, 4);
        let tsv = r.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split('\t').count(), REPORT_HEADER.len());
    }
}
