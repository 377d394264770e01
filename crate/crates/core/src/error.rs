use thiserror::Error;

use crate::numeric::Var;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
    #[error("layer {layer}: hidden layers must use relu, output layer must be identity")]
    Activation { layer: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid input specification: {0}")]
    Spec(String),
    #[error("invalid query: {0}")]
    Query(String),
    #[error("invalid resume data: {0}")]
    Resume(String),
    #[error("no value for variable {0}")]
    MissingVariable(Var),
    #[error("polyhedron is unbounded along {0}")]
    Unbounded(Var),
    #[error("polyhedron is empty")]
    Empty,
    #[error("partition has no splittable non-sensitive dimension")]
    NoSplittableDimension,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
