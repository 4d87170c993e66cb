//! Cohort metrics, risk profiles, PCA and attention heatmaps.

mod heatmap;
mod metrics;
mod pca;
mod profile;

pub use heatmap::{export_heatmap, heatmap_pgm, heatmap_tsv, HeatmapExport};
pub use metrics::{
    auc, bootstrap_ci, f2_at, f2_from_counts, f2_sweep, quantile_sorted, BootstrapCi, Metric, MetricReport,
    DEFAULT_N_BOOT, REPORT_HEADER,
};
pub use pca::{pca2, Pca2};
pub use profile::{argmax, infer_profile, predict_positions, ProfileEntry, RiskProfile, PROFILE_HEADER};
