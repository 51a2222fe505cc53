//! Preference-optimization losses with analytic gradients, a small
//! autoregressive policy, a deterministic trainer and training-dynamics
//! diagnostics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for callers that do not need the choice.

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod trainer;

pub use analysis::{
    collapse_metrics, decile_bin_map, derivative_curve, shift_report, CollapseReport, CurveKind, CurveSample,
    EvalSource, ShiftAnalysis, ShiftReport,
};
pub use data::{Dataset, Label, PreferenceExample, TokenId};
pub use error::{Error, Result};
pub use gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
pub use losses::{LossHyperparams, Method};
pub use model::{Arch, LogitsMatrix, ModelParams};
pub use numerics::SeededRng;
pub use scalar::{Precision, Scalar};
pub use trainer::{train_run, MetricsLog, TrainConfig, TrainOutcome};

pub type LogitsMatrixF64 = LogitsMatrix<f64>;
pub type LogitsMatrixF32 = LogitsMatrix<f32>;
pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type TrainOutcomeF64 = TrainOutcome<f64>;
pub type TrainOutcomeF32 = TrainOutcome<f32>;
