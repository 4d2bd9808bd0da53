//! Approximate CNN inference with tunable per-layer approximations.
//!
//! The crate covers the whole offline and online flow:
//!
//! * [`ops`]: exact, perforated and filter-sampled convolution plus the
//!   remaining tensor kernels, all reporting their work to a [`CostCounter`].
//! * [`graph`] / [`config`]: network definitions, approximation knobs and
//!   the configuration file.
//! * [`executor`]: one inference of a graph under a configuration.
//! * [`tuner`], [`profiler`], [`calibration`]: charting the accuracy/cost
//!   space and measuring the resulting frontier.
//! * [`adapt`] / [`stream`]: the runtime ladder, adaptation strategies and
//!   trace-driven evaluation.
//! * [`dataset`]: synthetic inertial data, the signal image transform and a
//!   matched-filter reference model.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod archive;
pub mod calibration;
pub mod config;
pub mod dataset;
pub mod error;
pub mod executor;
pub mod fp16;
pub mod graph;
pub mod ops;
pub mod profiler;
pub mod stream;
pub mod tensor;
pub mod tuner;

pub use config::{Configuration, KnobDomain, KnobSetting, KnobVariant, ProfileRecord};
pub use error::{Error, Result};
pub use executor::{run_batch, run_inference, Clock, InferenceResult, RunOptions};
pub use graph::{build_graph, NetworkGraph};
pub use ops::CostCounter;
pub use tensor::{tensor_quantize, PrecisionMode, Tensor};
