//! Exact and approximate tensor kernels.

mod basic;
mod conv;
mod cost;
mod softmax;

pub use basic::{
    activation, batch_norm, bias_add, dense, elementwise_add, pool, Activation, BatchNormParams,
    PoolKind, PoolParams,
};
pub use conv::{
    conv2d_exact, conv2d_filter_sampled, conv2d_perforated, interpolate_skipped, sampled_filter,
    ConvGeometry, FilterSampleSpec, PerforationAxis, PerforationSpec,
};
pub use cost::CostCounter;
pub use softmax::{argmax, entropy, softmax_row, softmax_t};
pub(crate) use softmax::log_softmax_at;
