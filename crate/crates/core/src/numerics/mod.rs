//! Dense grids, differentiable primitives, reverse-mode gradients and Adam.

mod adam;
pub mod checkpoint;
mod grid;
pub mod kernels;
mod params;
mod primitives;
mod tape;

pub use adam::{adam_step, AdamConfig};
pub use grid::ValueGrid;
pub use kernels::AttentionBlock;
pub use params::{Init, ParamId, ParamSet, Parameter};
pub use primitives::{feed_forward, layer_normalize, linear_map, softmax_rows, LAYER_NORM_EPS};
pub use tape::{sigmoid, Gradients, Tape, Var, PROB_CLAMP};
