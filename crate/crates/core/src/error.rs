use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("mask length mismatch: {0}")]
    Mask(String),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("keep_channels {keep} exceeds head channels {max}")]
    KeepChannels { keep: usize, max: usize },
    #[error("unknown router axis `{0}`")]
    UnknownAxis(String),
    #[error("count {count} exceeds maximum {max} on axis {axis}")]
    CountExceeds { axis: &'static str, count: usize, max: usize },
    #[error("router output of length {len} cannot be split into segments of {segment}")]
    Segment { len: usize, segment: usize },
    #[error("every position is padding")]
    AllPadding,
    #[error("trainable teacher on the full budget needs alpha_ce > 0 (self-distillation collapse)")]
    SelfDistillation,
    #[error("non-finite loss at step {step} (stage {stage})")]
    Diverged { step: usize, stage: u8 },
    #[error("budget `{0}` is not in the trained budget table")]
    UnknownBudget(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("parameter inventory mismatch: {0}")]
    Inventory(String),
    #[error("invalid training config: {0}")]
    Train(String),
}
