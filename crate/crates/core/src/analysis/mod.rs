//! Spectral-dynamics diagnostics, embedding geometry, and closed-form
//! representational-complexity calculators.

mod complexity;
mod geometry;
mod render;
mod spectral;

pub use complexity::{
    bit_complexity, complexity_csv, complexity_row, l2_complexity, margin_rescaled_norm,
    min_margin, ComplexityRow, MemoryMode,
};
pub use geometry::{
    arm_silhouette, cosine_distance_matrix, diagonal_advantage, diagonal_permutation_test,
    geometry_report, leaf_first_heatmap, path_pair_heatmap, pca_project, silhouette,
    GeometryReport, PermutationTest,
};
pub use render::{heatmap_svg, scatter_svg};
pub use spectral::{
    eigen_alignment, spectral_diagnostics, spectral_trace, DiagnosticsRecord, SpectralReport,
};

/// Slack on the approximate spectral propositions.
pub const DEFAULT_DELTA: f64 = 0.05;
