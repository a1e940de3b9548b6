//! Double-softmax cross-entropy and the machinery around it: numerically
//! stable simplex primitives, noise-robust baseline losses, transition-matrix
//! label noise, a prototype classifier standing in for prompt tuning, a
//! deterministic SGD trainer, and executable checks of the loss's gradient,
//! boundedness and risk properties.

pub mod benchmark;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use benchmark::Benchmark;
pub use data::{Dataset, Split, SyntheticParams};
pub use error::{Error, FormatError, Result};
pub use losses::{LossEval, LossKind};
pub use model::{PrototypeModel, ShiftMode};
pub use noise::{NoiseReport, NoiseSpec, TransitionMatrix};
pub use numerics::{LogitVector, ProbVector};
pub use trainer::{MetricsLog, TrainConfig};
pub use verify::{Status, VerificationReport};
