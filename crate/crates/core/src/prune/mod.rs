//! Weight importance scoring, mask selection and layer-wise profile
//! application.

mod mask;
mod metric;
mod profile;

pub use mask::{prune_count, reconstruction_loss, select_mask, select_mask_with, BinaryMask, Granularity};
pub use metric::{metric_magnitude, metric_optspa, metric_wanda, MetricKind};
pub use profile::{
    apply_profile, measure_masks, measure_sparsity, LayerSparsity, SparsityProfile, SparsityReport, BUDGET_EPS,
};
