//! Aligner families `(g, ḡ)` mapping image and text embeddings to a shared space.
//!
//! The MLP and linear families learn `ḡ` from text into the image space and
//! leave `g` as the identity. CSA learns linear projections for both sides.

mod csa;
mod gap;
mod linear;
mod loss;
mod mlp;

use alloc::vec::Vec;

pub use csa::{fit_csa, CsaAligner, CCA_RIDGE};
pub use gap::{apply_gap_transform, GapKind, GapTransform};
pub use linear::{fit_linear, LinearAligner};
pub use loss::cosine_loss;
pub use mlp::{
    fit_fewshot, fit_fewshot_with, fit_mlp, fit_mlp_projected, gelu, gelu_derivative,
    mlp_gradients, MlpAligner, MlpGradients, ProjectedFit, FEWSHOT_FINETUNE_EPOCHS,
};

use crate::dataset::AlignmentDataset;
use crate::linalg::{cosine, Matrix};
use crate::optim::{cosine_lr, AdamW, TrainConfig};
use crate::{Error, Result};

/// A fitted model with its loss trace: entry `e` is the loss before step `e`,
/// the last entry the loss after the final step.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T> {
    pub model: T,
    pub loss_trace: Vec<f64>,
}

impl<T> FitReport<T> {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

fn check_nonempty(ds: &AlignmentDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Empty("alignment dataset"));
    }
    Ok(())
}

/// Full-batch AdamW under cosine annealing. `objective` returns the loss and
/// its gradient at the given parameters.
pub(crate) fn train_loop<F>(params: &mut [f64], cfg: &TrainConfig, mut objective: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut opt = AdamW::new(cfg, params.len());
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = objective(params)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        trace.push(loss);
        opt.step(params, &grad, cosine_lr(cfg.lr, epoch, cfg.epochs));
    }
    let (loss, _) = objective(params)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { epoch: cfg.epochs });
    }
    trace.push(loss);
    Ok(trace)
}

/// Any fitted aligner.
#[derive(Debug, Clone, PartialEq)]
pub enum Aligner {
    Mlp(MlpAligner),
    Linear(LinearAligner),
    Csa(CsaAligner),
}

impl Aligner {
    pub fn family(&self) -> &'static str {
        match self {
            Aligner::Mlp(_) => "mlp",
            Aligner::Linear(_) => "text2cpts",
            Aligner::Csa(_) => "csa",
        }
    }

    pub fn image_dim(&self) -> usize {
        match self {
            Aligner::Mlp(m) => m.image_dim(),
            Aligner::Linear(l) => l.image_dim(),
            Aligner::Csa(c) => c.image_dim(),
        }
    }

    pub fn text_dim(&self) -> usize {
        match self {
            Aligner::Mlp(m) => m.text_dim(),
            Aligner::Linear(l) => l.text_dim(),
            Aligner::Csa(c) => c.text_dim(),
        }
    }

    /// `g(x)`: identity for the MLP and linear families.
    pub fn map_image(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Aligner::Csa(c) => c.project_image(x),
            _ => {
                if x.len() != self.image_dim() {
                    return Err(Error::DimensionMismatch {
                        what: "image input",
                        expected: self.image_dim(),
                        found: x.len(),
                    });
                }
                Ok(x.to_vec())
            }
        }
    }

    /// `ḡ(t)`.
    pub fn map_text(&self, t: &[f64]) -> Result<Vec<f64>> {
        match self {
            Aligner::Mlp(m) => m.forward(t),
            Aligner::Linear(l) => l.forward(t),
            Aligner::Csa(c) => c.project_text(t),
        }
    }

    pub fn map_images(&self, xs: &Matrix) -> Result<Matrix> {
        map_rows(xs, |r| self.map_image(r))
    }

    pub fn map_texts(&self, ts: &Matrix) -> Result<Matrix> {
        match self {
            Aligner::Mlp(m) => m.forward_batch(ts),
            _ => map_rows(ts, |r| self.map_text(r)),
        }
    }
}

fn map_rows<F: Fn(&[f64]) -> Result<Vec<f64>>>(m: &Matrix, f: F) -> Result<Matrix> {
    let rows = m.iter_rows().map(f).collect::<Result<Vec<_>>>()?;
    let cols = rows.first().map_or(0, |r| r.len());
    Matrix::from_rows(&rows, cols)
}

/// Cosine similarity of an image and a text in the aligner's shared space.
pub fn align_score(aligner: &Aligner, image: &[f64], text: &[f64]) -> Result<f64> {
    let gi = aligner.map_image(image)?;
    let gt = aligner.map_text(text)?;
    cosine(&gi, &gt).ok_or(Error::ZeroNorm {
        what: "mapped vector",
        index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Origin;
    use crate::rng::SeededRng;
    use alloc::vec;

    #[test]
    fn csa_on_identical_sides_scores_one() {
        let mut rng = SeededRng::new(4);
        let x = Matrix::from_vec(30, 3, rng.normal_vec(90, 1.0)).unwrap();
        let ds = AlignmentDataset::new(x.clone(), x.clone(), vec![Origin::Pair; 30]).unwrap();
        let a = Aligner::Csa(fit_csa(&ds, 3).unwrap());
        let s = align_score(&a, x.row(7), x.row(7)).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn mlp_fitted_on_a_pair_scores_high() {
        let ds = AlignmentDataset::new(
            Matrix::from_vec(1, 3, vec![0.2, -0.5, 0.9]).unwrap(),
            Matrix::from_vec(1, 2, vec![1.0, 0.3]).unwrap(),
            vec![Origin::Pair],
        )
        .unwrap();
        let a = Aligner::Mlp(fit_mlp(&ds, &TrainConfig::with_seed(1)).unwrap().model);
        assert!(align_score(&a, &[0.2, -0.5, 0.9], &[1.0, 0.3]).unwrap() > 0.99);
        assert!(align_score(&a, &[0.2, -0.5], &[1.0, 0.3]).is_err());
        assert!(align_score(&a, &[0.2, -0.5, 0.9], &[1.0]).is_err());
    }
}
