//! Grid quantization, the dwell-time transition system and finite abstractions.

mod dwell;
mod export;
mod finite;
mod grid;
mod union;

use thiserror::Error;

use crate::model::ModelError;

pub use dwell::{
    concrete_successors, first_dwell_violation, label_after, next_labels, run_equivalence_check, AugState,
    ConcreteState,
};
pub use export::{read_dump, to_dot, write_dump, DOT_STATE_LIMIT, FTS_MAGIC, FTS_VERSION};
pub use finite::{
    abstract_post, abstract_successors, build_finite_ts, build_quantized, BuildOptions, CsrTable, FiniteTs,
    InputSource, Post, SinkPolicy,
};
pub use grid::{BoxGrid, Grid, IndexBox, InputPoints, BALL_TOL};
pub use union::{InputUnion, SweepPlan};

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("quantization parameter {eta} exceeds the domain span {span}")]
    EtaTooLarge { eta: f64, span: f64 },
    #[error("quantization parameter must be positive and finite, got {0}")]
    InvalidQuantization(f64),
    #[error("domain has no boxes")]
    EmptyDomain,
    #[error("domain boxes share grid points")]
    OverlappingBoxes,
    #[error("internal-input points are empty or have the wrong dimension")]
    BadInputPoints,
    #[error("a zero internal-input quantization needs an explicit point list")]
    ZeroVarpiNeedsPoints,
    #[error("switching sequence switches at step {step}, before the dwell time elapsed")]
    DwellViolation { step: usize },
    #[error("image of state {state} under mode {mode}, input {input} has no grid point within eta")]
    Blocking { state: usize, mode: usize, input: usize },
    #[error("abstraction is not materialized")]
    NotMaterialized,
    #[error("too large: {0}")]
    TooLarge(String),
    #[error("malformed dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}
