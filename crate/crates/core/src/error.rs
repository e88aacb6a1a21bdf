use thiserror::Error;

use crate::actions::ActionKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation: columns are parallel or zero")]
    DegenerateRotation,
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("expected a {expected:?} trajectory, got {got:?}")]
    WrongKind { expected: ActionKind, got: ActionKind },
    #[error("group elements belong to different groups (C_{0} vs C_{1})")]
    GroupMismatch(usize, usize),
    #[error("vector length {len} is not a multiple of group order {order}")]
    BadLength { len: usize, order: usize },
    #[error("image is not square ({h}x{w})")]
    NonSquare { h: usize, w: usize },
    #[error("frame returned no group elements")]
    EmptyFrame,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a matching forward pass")]
    StaleActivations,
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("noise schedule needs at least one step, got {0}")]
    BadK(usize),
    #[error("normalization statistics have not been fitted")]
    UnfittedStats,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("world transform is not planar")]
    BadTransform,
    #[error("task is unsolvable from this state: {0}")]
    Unsolvable(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
