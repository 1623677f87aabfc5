use thiserror::Error;

use crate::rational::Q;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty complex")]
    EmptyComplex,
    #[error("unknown vertex {0}")]
    UnknownVertex(u32),
    #[error("invalid complex: {0}")]
    InvalidComplex(String),
    #[error("simplex {simplex:?} is not affinely independent")]
    Degenerate { simplex: Vec<u32> },
    #[error("mesh not reached: {mesh} after {rounds} subdivisions (target < {target})")]
    MeshNotReached { rounds: usize, mesh: String, target: Q },
    #[error("star mesh hypothesis fails at vertex {vertex}: diameter {diameter} is not < {epsilon}")]
    MeshHypothesis { vertex: u32, diameter: String, epsilon: Q },
    #[error("not in complex: {0}")]
    NotInComplex(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("parameter inequality violated: {0}")]
    ParamInequality(String),
    #[error("empty language")]
    EmptyLanguage,
    #[error("not a cover: uncovered word {word:?} at offset {offset}")]
    NotACover { offset: i64, word: Vec<String> },
    #[error("size budget exceeded: estimated {estimate} simplices (limit {limit})")]
    Budget { estimate: u128, limit: u128 },
    #[error("mismatched epsilon: {left} vs {right}")]
    MismatchedEpsilon { left: String, right: String },
    #[error("insufficient window: need coordinates [{need_lo}, {need_hi})")]
    Window { need_lo: i64, need_hi: i64 },
    #[error("inconsistent itinerary: {0}")]
    Itinerary(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
