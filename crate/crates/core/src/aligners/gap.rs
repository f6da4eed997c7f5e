//! Transforms that move head rows toward the image-feature population.

use alloc::vec::Vec;

use crate::dataset::EmbeddingMatrix;
use crate::linalg::{norm, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapKind {
    /// `normalize(w − μ_w + μ_img)`
    CenterRescale,
    /// `P·w`
    LinearProjection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapTransform {
    pub kind: GapKind,
    pub mu_w: Option<Vec<f64>>,
    pub mu_img: Option<Vec<f64>>,
    pub proj: Option<Matrix>,
}

impl GapTransform {
    pub fn center_rescale(mu_w: Vec<f64>, mu_img: Vec<f64>) -> Self {
        GapTransform {
            kind: GapKind::CenterRescale,
            mu_w: Some(mu_w),
            mu_img: Some(mu_img),
            proj: None,
        }
    }

    /// Centre-and-rescale using the means of the two populations.
    pub fn center_rescale_from(weights: &EmbeddingMatrix, images: &EmbeddingMatrix) -> Self {
        Self::center_rescale(weights.matrix().column_means(), images.matrix().column_means())
    }

    pub fn linear_projection(proj: Matrix) -> Self {
        GapTransform {
            kind: GapKind::LinearProjection,
            mu_w: None,
            mu_img: None,
            proj: Some(proj),
        }
    }
}

pub fn apply_gap_transform(t: &GapTransform, weights: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let d = weights.dim();
    let w = weights.matrix();
    let out = match t.kind {
        GapKind::CenterRescale => {
            let (Some(mu_w), Some(mu_img)) = (&t.mu_w, &t.mu_img) else {
                return Err(Error::InvalidArgument(
                    "center-and-rescale needs both population means".into(),
                ));
            };
            for (what, mu) in [("weight mean", mu_w), ("image mean", mu_img)] {
                if mu.len() != d {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: d,
                        found: mu.len(),
                    });
                }
            }
            let mut out = Matrix::zeros(w.rows(), d);
            for r in 0..w.rows() {
                let row = out.row_mut(r);
                for (k, o) in row.iter_mut().enumerate() {
                    *o = w[(r, k)] - mu_w[k] + mu_img[k];
                }
                let n = norm(row);
                if n == 0.0 {
                    return Err(Error::ZeroNorm {
                        what: "shifted weight",
                        index: r,
                    });
                }
                row.iter_mut().for_each(|v| *v /= n);
            }
            out
        }
        GapKind::LinearProjection => {
            let Some(p) = &t.proj else {
                return Err(Error::InvalidArgument("linear projection needs a matrix".into()));
            };
            if p.cols() != d {
                return Err(Error::DimensionMismatch {
                    what: "projection input",
                    expected: d,
                    found: p.cols(),
                });
            }
            w.matmul_t(p)?
        }
    };
    let (_, labels, names) = weights.clone().into_parts();
    EmbeddingMatrix::with_labels(out, labels, names)
}
