use alloc::string::String;
use alloc::vec::Vec;

use crate::geom::Point3;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no navigable location within {radius} m of {point}{}", fmt_context(.context))]
    SnapFailure {
        point: Point3,
        radius: f64,
        context: Option<String>,
    },
    #[error("no navigable route from {from} to {to}{}", fmt_context(.context))]
    Disconnected {
        from: Point3,
        to: Point3,
        context: Option<String>,
    },
    #[error("empty point sequence{}", fmt_context(.context))]
    EmptySequence { context: Option<String> },
    #[error("exact solver supports at most {max} nodes, got {n}")]
    SizeLimit { n: usize, max: usize },
    #[error("paths without exactly {expected} instructions: {path_ids:?}")]
    InstructionCountMismatch {
        expected: usize,
        path_ids: Vec<String>,
    },
    #[error("depth frame is {depth:?} but semantic frame is {semantics:?}")]
    DimensionMismatch {
        depth: (usize, usize),
        semantics: (usize, usize),
    },
    #[error("operation requires a grid scene")]
    UnsupportedScene,
    #[error("known maps are immutable")]
    ImmutableMap,
    #[error("floorplan infeasible: {0}")]
    SpecInfeasible(String),
    #[error("gave up sampling after {attempts} attempts ({found} of {requested} found)")]
    SamplingExhausted {
        attempts: usize,
        found: usize,
        requested: usize,
    },
    #[error("policy did not answer within {millis} ms")]
    PolicyTimeout { millis: u64 },
    #[error("policy protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("unknown episode {0}")]
    MissingEpisode(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn fmt_context(context: &Option<String>) -> String {
    match context {
        Some(c) => alloc::format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a context string to errors that carry one.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        let ctx = Some(ctx.into());
        match self {
            Error::SnapFailure { point, radius, .. } => Error::SnapFailure {
                point,
                radius,
                context: ctx,
            },
            Error::Disconnected { from, to, .. } => Error::Disconnected {
                from,
                to,
                context: ctx,
            },
            Error::EmptySequence { .. } => Error::EmptySequence { context: ctx },
            other => other,
        }
    }
}
