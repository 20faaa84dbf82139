//! Dense tensors, a reverse-mode tape, recurrent/feed-forward building blocks,
//! AdamW and finite-difference gradient checking.

mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod store;
mod tensor;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION,
};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{sigmoid, Graph, Var};
pub use layers::{Linear, Lstm, LstmVars, Mlp};
pub use store::{AdamW, Parameter, ParameterStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),
    #[error(
        "parameter `{name}` has shape {expected:?} in the model but {found:?} in the checkpoint"
    )]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Euclidean distance between the mean-pooled rows of two sequence
/// representations of equal width (lengths may differ).
pub fn pairwise_distance(g: &mut Graph, a: Var, b: Var) -> Result<Var, NumError> {
    if g.value(a).cols() != g.value(b).cols() {
        return Err(NumError::Shape {
            op: "pairwise_distance",
            left: g.value(a).shape().to_vec(),
            right: g.value(b).shape().to_vec(),
        });
    }
    let pa = g.mean_rows(a)?;
    let pb = g.mean_rows(b)?;
    let sq = g.sq_dist(pa, pb)?;
    g.sqrt(sq)
}
