//! Minimal dense-tensor autodiff: a tape of primitives with a reverse sweep.

mod backward;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod param;

pub use gradcheck::{finite_difference_check, relative_error, GradCheckError, GradCheckOptions, GradCheckReport, GradSample};
pub use graph::{BackwardFault, GradMode, Graph, GraphError, NodeId, COSINE_EPS};
pub use param::{ParamError, ParamId, ParamStore, Parameter, Step, StepSet};
