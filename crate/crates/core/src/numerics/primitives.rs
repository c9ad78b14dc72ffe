//! Eager forms of the differentiable primitives, for callers that do not need
//! gradients.

use super::grid::ValueGrid;
use super::kernels;
use super::params::Parameter;
use crate::error::{DginError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x · w (+ bias)`.
pub fn linear_map(x: &ValueGrid, w: &Parameter, bias: Option<&Parameter>) -> Result<ValueGrid> {
    let mut out = kernels::matmul(x, &w.grid)?;
    if let Some(b) = bias {
        if b.shape() != (1, out.cols()) {
            return Err(DginError::Dimension {
                op: "linear_map bias",
                left: out.shape(),
                right: b.shape(),
            });
        }
        for r in 0..out.rows() {
            for (o, v) in out.row_mut(r).iter_mut().zip(b.grid.values()) {
                *o += v;
            }
        }
    }
    Ok(out)
}

pub fn softmax_rows(x: &ValueGrid, mask: Option<&[Vec<bool>]>) -> Result<ValueGrid> {
    kernels::softmax_rows(x, mask)
}

pub fn layer_normalize(x: &ValueGrid, gain: &Parameter, shift: &Parameter, eps: f64) -> Result<ValueGrid> {
    kernels::layer_norm_forward(x, &gain.grid, &shift.grid, eps).map(|(y, _)| y)
}

/// `relu(x·w1 + b1)·w2 + b2`.
pub fn feed_forward(
    x: &ValueGrid,
    w1: &Parameter,
    b1: &Parameter,
    w2: &Parameter,
    b2: &Parameter,
) -> Result<ValueGrid> {
    let hidden = linear_map(x, w1, Some(b1))?.map(|v| v.max(0.0));
    let out = linear_map(&hidden, w2, Some(b2))?;
    if out.shape() != x.shape() {
        return Err(DginError::Dimension {
            op: "feed_forward",
            left: x.shape(),
            right: out.shape(),
        });
    }
    Ok(out)
}
