pub mod alignment;
pub mod autodiff;
pub mod data;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod text;
pub mod training;

pub use tensor::{Tensor, TensorError};
