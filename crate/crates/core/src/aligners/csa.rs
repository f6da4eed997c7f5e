//! Canonical correlation alignment: both sides are centred, whitened and
//! projected onto their top-`s` canonical directions.

use alloc::vec::Vec;

use crate::dataset::AlignmentDataset;
use crate::linalg::{covariance, cross_covariance, svd, symmetric_eigen, Matrix};
use crate::{Error, Result};

/// Ridge added to covariance eigenvalues, relative to the mean eigenvalue.
pub const CCA_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CsaAligner {
    /// `s × d`, image side.
    pub p_img: Matrix,
    /// `s × d̄`, text side.
    pub p_txt: Matrix,
    /// Canonical correlations, nonincreasing, clamped to `[0, 1]`.
    pub correlations: Vec<f64>,
    pub mean_img: Vec<f64>,
    pub mean_txt: Vec<f64>,
}

impl CsaAligner {
    pub fn shared_dim(&self) -> usize {
        self.p_img.rows()
    }

    pub fn image_dim(&self) -> usize {
        self.p_img.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.p_txt.cols()
    }

    pub fn project_image(&self, x: &[f64]) -> Result<Vec<f64>> {
        project(&self.p_img, &self.mean_img, x, "csa image input")
    }

    pub fn project_text(&self, t: &[f64]) -> Result<Vec<f64>> {
        project(&self.p_txt, &self.mean_txt, t, "csa text input")
    }
}

fn project(p: &Matrix, mean: &[f64], v: &[f64], what: &'static str) -> Result<Vec<f64>> {
    if v.len() != mean.len() {
        return Err(Error::DimensionMismatch {
            what,
            expected: mean.len(),
            found: v.len(),
        });
    }
    let centred: Vec<f64> = v.iter().zip(mean).map(|(a, m)| a - m).collect();
    p.matvec(&centred)
}

/// Symmetric inverse square root of `cov + λI`, `λ` relative to the mean
/// eigenvalue.
fn inverse_sqrt(cov: &Matrix, side: &'static str) -> Result<Matrix> {
    let n = cov.rows();
    let eig = symmetric_eigen(cov)?;
    let trace: f64 = eig.values.iter().sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::DegenerateCovariance(side));
    }
    let ridge = CCA_RIDGE * trace / n as f64;
    let mut scaled = eig.vectors.clone();
    for (j, &e) in eig.values.iter().enumerate() {
        let shifted = e.max(0.0) + ridge;
        if !(shifted > 0.0) {
            return Err(Error::DegenerateCovariance(side));
        }
        let f = 1.0 / libm::sqrt(shifted);
        for k in 0..n {
            scaled[(k, j)] *= f;
        }
    }
    // V · diag(f) · Vᵀ
    scaled.matmul_t(&eig.vectors)
}

pub fn fit_csa(dataset: &AlignmentDataset, s: usize) -> Result<CsaAligner> {
    let m = dataset.len();
    if m < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "canonical correlation needs at least 2 pairs, got {m}"
        )));
    }
    let (d, dt) = (dataset.source_dim(), dataset.target_dim());
    let max_s = d.min(dt).min(m - 1);
    if s == 0 || s > max_s {
        return Err(Error::InvalidArgument(alloc::format!(
            "shared dimension must be in 1..={max_s}, got {s}"
        )));
    }
    let (x, y) = (dataset.source(), dataset.target());
    let mx = x.column_means();
    let my = y.column_means();
    let wx = inverse_sqrt(&covariance(x, &mx), "image-side")?;
    let wy = inverse_sqrt(&covariance(y, &my), "text-side")?;
    let sxy = cross_covariance(x, &mx, y, &my);
    let k = wx.matmul(&sxy)?.matmul(&wy)?;
    let dec = svd(&k);

    let mut u_s = Matrix::zeros(s, d);
    let mut v_s = Matrix::zeros(s, dt);
    for j in 0..s {
        for i in 0..d {
            u_s[(j, i)] = dec.u[(i, j)];
        }
        for i in 0..dt {
            v_s[(j, i)] = dec.v[(i, j)];
        }
    }
    let mut p_img = u_s.matmul(&wx)?;
    let mut p_txt = v_s.matmul(&wy)?;

    // sign convention: largest-magnitude image-side entry positive
    for j in 0..s {
        let row = p_img.row(j);
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = i;
            }
        }
        if row[best] < 0.0 {
            p_img.row_mut(j).iter_mut().for_each(|v| *v = -*v);
            p_txt.row_mut(j).iter_mut().for_each(|v| *v = -*v);
        }
    }

    let correlations = dec.sigma[..s].iter().map(|c| c.clamp(0.0, 1.0)).collect();
    Ok(CsaAligner {
        p_img,
        p_txt,
        correlations,
        mean_img: mx,
        mean_txt: my,
    })
}
