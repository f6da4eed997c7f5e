//! Single linear map from text space into image space (text-to-concepts).

use alloc::vec::Vec;

use super::loss::batch_loss;
use super::{check_nonempty, train_loop, FitReport};
use crate::dataset::AlignmentDataset;
use crate::linalg::{axpy, Matrix};
use crate::optim::{Loss, TrainConfig};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// `y = A·t + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAligner {
    a: Matrix,
    b: Vec<f64>,
}

impl LinearAligner {
    pub fn from_parts(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(Error::DimensionMismatch {
                what: "linear bias",
                expected: a.rows(),
                found: b.len(),
            });
        }
        if let Some(i) = a.first_non_finite() {
            return Err(Error::NonFinite {
                what: "linear weights",
                index: i,
            });
        }
        Ok(LinearAligner { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn text_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn image_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn forward(&self, t: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.a.matvec(t)?;
        axpy(1.0, &self.b, &mut y);
        Ok(y)
    }

    pub fn forward_batch(&self, texts: &Matrix) -> Result<Matrix> {
        let mut y = texts.matmul_t(&self.a)?;
        for r in 0..y.rows() {
            axpy(1.0, &self.b, y.row_mut(r));
        }
        Ok(y)
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = self.a.as_slice().to_vec();
        v.extend_from_slice(&self.b);
        v
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let n = self.a.as_slice().len();
        self.a.as_mut_slice().copy_from_slice(&flat[..n]);
        self.b.copy_from_slice(&flat[n..]);
    }

    /// Mean loss of mapping the targets onto the sources, and its gradient
    /// (flattened as `A` row-major followed by `b`).
    pub fn loss_and_gradient(&self, batch: &AlignmentDataset, loss: Loss) -> Result<(f64, Vec<f64>)> {
        let texts = batch.target();
        let y = self.forward_batch(texts)?;
        if batch.source_dim() != self.image_dim() {
            return Err(Error::DimensionMismatch {
                what: "alignment source dimension",
                expected: self.image_dim(),
                found: batch.source_dim(),
            });
        }
        let lg = batch_loss(&y, batch.source(), loss, false)?;
        let mut ga = Matrix::zeros(self.image_dim(), self.text_dim());
        let mut gb = alloc::vec![0.0; self.image_dim()];
        for r in 0..texts.rows() {
            let dy = lg.d_pred.row(r);
            axpy(1.0, dy, &mut gb);
            for (i, &g) in dy.iter().enumerate() {
                axpy(g, texts.row(r), ga.row_mut(i));
            }
        }
        let mut flat = ga.into_vec();
        flat.extend_from_slice(&gb);
        Ok((lg.loss, flat))
    }
}

/// Trains `A`, `b` with the shared AdamW loop; `cfg.loss` selects the
/// objective (mean squared error for text-to-concepts).
pub fn fit_linear(dataset: &AlignmentDataset, cfg: &TrainConfig) -> Result<FitReport<LinearAligner>> {
    cfg.validate()?;
    check_nonempty(dataset)?;
    let (d, dt) = (dataset.source_dim(), dataset.target_dim());
    let mut rng = SeededRng::new(cfg.seed);
    let a = Matrix::from_vec(d, dt, rng.normal_vec(d * dt, libm::sqrt(2.0 / dt as f64)))?;
    let mut model = LinearAligner {
        a,
        b: alloc::vec![0.0; d],
    };
    let mut params = model.flatten();
    let mut scratch = model.clone();
    let trace = train_loop(&mut params, cfg, |p| {
        scratch.load_flat(p);
        scratch.loss_and_gradient(dataset, cfg.loss)
    })?;
    model.load_flat(&params);
    Ok(FitReport {
        model,
        loss_trace: trace,
    })
}
