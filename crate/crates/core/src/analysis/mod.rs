//! Post-hoc analyses: per-class feature ranking and gaze-angle densities.

mod kde;
mod mrmr;

pub use kde::{kde_density, scott_bandwidth, DensityGrid, MIN_BANDWIDTH};
pub use mrmr::{discretize_equal_frequency, mrmr_rank, mutual_information, RankedFeature};

/// Default number of equal-frequency bins for feature discretisation.
pub const DEFAULT_BINS: usize = 3;
