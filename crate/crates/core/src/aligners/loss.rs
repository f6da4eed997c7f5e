use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, norm, Matrix};
use crate::optim::Loss;
use crate::{Error, Result};

/// `1 − cos(pred, target)`.
pub fn cosine_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            what: "cosine_loss target",
            expected: pred.len(),
            found: target.len(),
        });
    }
    let (np, nt) = (norm(pred), norm(target));
    if np == 0.0 {
        return Err(Error::ZeroNorm {
            what: "prediction",
            index: 0,
        });
    }
    if nt == 0.0 {
        return Err(Error::ZeroNorm {
            what: "target",
            index: 0,
        });
    }
    Ok(1.0 - dot(pred, target) / (np * nt))
}

/// Batch loss with gradients with respect to both the predictions and the
/// targets (the latter only matters when the targets are themselves produced
/// by trainable parameters).
pub(crate) struct LossGrad {
    pub loss: f64,
    pub d_pred: Matrix,
    pub d_target: Option<Matrix>,
}

pub(crate) fn batch_loss(
    pred: &Matrix,
    target: &Matrix,
    loss: Loss,
    want_target_grad: bool,
) -> Result<LossGrad> {
    let (m, d) = (pred.rows(), pred.cols());
    let mut d_pred = Matrix::zeros(m, d);
    let mut d_target = want_target_grad.then(|| Matrix::zeros(m, d));
    let mut total = 0.0;
    match loss {
        Loss::Cosine => {
            let inv_m = 1.0 / m as f64;
            for r in 0..m {
                let (y, x) = (pred.row(r), target.row(r));
                let (ny, nx) = (norm(y), norm(x));
                if ny == 0.0 {
                    return Err(Error::ZeroNorm {
                        what: "prediction",
                        index: r,
                    });
                }
                if nx == 0.0 {
                    return Err(Error::ZeroNorm {
                        what: "alignment source",
                        index: r,
                    });
                }
                let c = dot(y, x) / (ny * nx);
                total += 1.0 - c;
                // d(1 - cos)/dy = -(x̂ - c ŷ)/‖y‖
                let gy = d_pred.row_mut(r);
                for ((g, &yi), &xi) in gy.iter_mut().zip(y).zip(x) {
                    *g = -inv_m * (xi / nx - c * yi / ny) / ny;
                }
                if let Some(dt) = d_target.as_mut() {
                    let gx = dt.row_mut(r);
                    for ((g, &yi), &xi) in gx.iter_mut().zip(y).zip(x) {
                        *g = -inv_m * (yi / ny - c * xi / nx) / nx;
                    }
                }
            }
            total *= inv_m;
        }
        Loss::Mse => {
            let inv = 1.0 / (m * d) as f64;
            for r in 0..m {
                let (y, x) = (pred.row(r), target.row(r));
                let gy = d_pred.row_mut(r);
                let mut diffs: Vec<f64> = vec![0.0; d];
                for (((g, &yi), &xi), df) in gy.iter_mut().zip(y).zip(x).zip(diffs.iter_mut()) {
                    let e = yi - xi;
                    total += e * e;
                    *g = 2.0 * inv * e;
                    *df = e;
                }
                if let Some(dt) = d_target.as_mut() {
                    for (g, e) in dt.row_mut(r).iter_mut().zip(&diffs) {
                        *g = -2.0 * inv * e;
                    }
                }
            }
            total *= inv;
        }
    }
    Ok(LossGrad {
        loss: total,
        d_pred,
        d_target,
    })
}
