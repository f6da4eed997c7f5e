//! Two-layer GELU MLP mapping text embeddings into the image space.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use super::loss::batch_loss;
use super::{check_nonempty, train_loop, FitReport};
use crate::dataset::{AlignmentDataset, Origin};
use crate::linalg::{axpy, Matrix};
use crate::optim::TrainConfig;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// `Φ(x) + x·φ(x)`.
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI);
    cdf + x * pdf
}

/// `y = W2·gelu(W1·t + b1) + b2`. Fitted aligners use a hidden width of four
/// times the text dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAligner {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

/// Gradients of the mean loss, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub loss: f64,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl MlpGradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }
}

impl MlpAligner {
    /// Shapes: `w1` is `h × d̄`, `b1` is `h`, `w2` is `d × h`, `b2` is `d`.
    pub fn from_parts(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        let h = w1.rows();
        if b1.len() != h {
            return Err(Error::DimensionMismatch {
                what: "b1",
                expected: h,
                found: b1.len(),
            });
        }
        if w2.cols() != h {
            return Err(Error::DimensionMismatch {
                what: "w2 columns",
                expected: h,
                found: w2.cols(),
            });
        }
        if b2.len() != w2.rows() {
            return Err(Error::DimensionMismatch {
                what: "b2",
                expected: w2.rows(),
                found: b2.len(),
            });
        }
        let m = MlpAligner { w1, b1, w2, b2 };
        if let Some(i) = m.flatten().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "mlp parameters",
                index: i,
            });
        }
        Ok(m)
    }

    /// He-initialized aligner from `text_dim` to `image_dim` with hidden width
    /// `4·text_dim`; biases start at zero.
    pub fn init(text_dim: usize, image_dim: usize, seed: u64) -> Self {
        let h = 4 * text_dim;
        let mut rng = SeededRng::new(seed);
        let s1 = libm::sqrt(2.0 / text_dim as f64);
        let s2 = libm::sqrt(2.0 / h as f64);
        let w1 = Matrix::from_vec(h, text_dim, rng.normal_vec(h * text_dim, s1)).unwrap();
        let w2 = Matrix::from_vec(image_dim, h, rng.normal_vec(image_dim * h, s2)).unwrap();
        MlpAligner {
            w1,
            b1: alloc::vec![0.0; h],
            w2,
            b2: alloc::vec![0.0; image_dim],
        }
    }

    pub fn text_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn image_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }
    pub fn b1(&self) -> &[f64] {
        &self.b1
    }
    pub fn w2(&self) -> &Matrix {
        &self.w2
    }
    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for dst in [
            self.w1.as_mut_slice(),
            &mut self.b1[..],
            self.w2.as_mut_slice(),
            &mut self.b2[..],
        ] {
            let n = dst.len();
            dst.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Maps one text embedding.
    pub fn forward(&self, t: &[f64]) -> Result<Vec<f64>> {
        if t.len() != self.text_dim() {
            return Err(Error::DimensionMismatch {
                what: "mlp input",
                expected: self.text_dim(),
                found: t.len(),
            });
        }
        let mut a = self.w1.matvec(t)?;
        for (z, b) in a.iter_mut().zip(&self.b1) {
            *z = gelu(*z + b);
        }
        let mut y = self.w2.matvec(&a)?;
        axpy(1.0, &self.b2, &mut y);
        Ok(y)
    }

    /// Maps every row of `texts`.
    pub fn forward_batch(&self, texts: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(texts)?.2)
    }

    /// Pre-activations, activations and outputs for a batch.
    fn forward_cached(&self, texts: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        if texts.cols() != self.text_dim() {
            return Err(Error::DimensionMismatch {
                what: "mlp input",
                expected: self.text_dim(),
                found: texts.cols(),
            });
        }
        let mut z = texts.matmul_t(&self.w1)?;
        for r in 0..z.rows() {
            axpy(1.0, &self.b1, z.row_mut(r));
        }
        let mut a = z.clone();
        a.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
        let mut y = a.matmul_t(&self.w2)?;
        for r in 0..y.rows() {
            axpy(1.0, &self.b2, y.row_mut(r));
        }
        Ok((z, a, y))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the outputs) through the
    /// cached forward pass.
    fn backward(&self, texts: &Matrix, z: &Matrix, a: &Matrix, d_out: &Matrix) -> MlpGradients {
        let (m, h) = (texts.rows(), self.hidden_dim());
        let mut gw2 = Matrix::zeros(self.image_dim(), h);
        let mut gb2 = alloc::vec![0.0; self.image_dim()];
        for r in 0..m {
            let dy = d_out.row(r);
            axpy(1.0, dy, &mut gb2);
            for (i, &g) in dy.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, a.row(r), gw2.row_mut(i));
                }
            }
        }
        // dA = dY · W2, then through GELU
        let mut dz = d_out.matmul(&self.w2).expect("shapes checked in forward");
        for (g, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *g *= gelu_derivative(zv);
        }
        let mut gw1 = Matrix::zeros(h, self.text_dim());
        let mut gb1 = alloc::vec![0.0; h];
        for r in 0..m {
            let dzr = dz.row(r);
            axpy(1.0, dzr, &mut gb1);
            for (j, &g) in dzr.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, texts.row(r), gw1.row_mut(j));
                }
            }
        }
        MlpGradients {
            loss: 0.0,
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
        }
    }

    /// Loss of mapping the dataset's targets onto its sources, and its
    /// gradient with respect to every parameter.
    pub(crate) fn loss_and_gradients(
        &self,
        batch: &AlignmentDataset,
        loss: crate::optim::Loss,
    ) -> Result<MlpGradients> {
        if batch.source_dim() != self.image_dim() {
            return Err(Error::DimensionMismatch {
                what: "alignment source dimension",
                expected: self.image_dim(),
                found: batch.source_dim(),
            });
        }
        let (z, a, y) = self.forward_cached(batch.target())?;
        let lg = batch_loss(&y, batch.source(), loss, false)?;
        let mut g = self.backward(batch.target(), &z, &a, &lg.d_pred);
        g.loss = lg.loss;
        Ok(g)
    }
}

/// Analytic gradients of the mean cosine loss between `MLP(target rows)` and
/// the source rows.
pub fn mlp_gradients(model: &MlpAligner, batch: &AlignmentDataset) -> Result<MlpGradients> {
    check_nonempty(batch)?;
    model.loss_and_gradients(batch, crate::optim::Loss::Cosine)
}

fn train_from(
    mut model: MlpAligner,
    dataset: &AlignmentDataset,
    cfg: &TrainConfig,
) -> Result<FitReport<MlpAligner>> {
    let mut params = model.flatten();
    let mut scratch = model.clone();
    let trace = train_loop(&mut params, cfg, |p| {
        scratch.load_flat(p);
        let g = scratch.loss_and_gradients(dataset, cfg.loss)?;
        Ok((g.loss, g.flatten()))
    })?;
    model.load_flat(&params);
    Ok(FitReport {
        model,
        loss_trace: trace,
    })
}

/// Full-batch AdamW training of a fresh MLP that maps the dataset's text side
/// onto its image side.
pub fn fit_mlp(dataset: &AlignmentDataset, cfg: &TrainConfig) -> Result<FitReport<MlpAligner>> {
    cfg.validate()?;
    check_nonempty(dataset)?;
    let model = MlpAligner::init(dataset.target_dim(), dataset.source_dim(), cfg.seed);
    train_from(model, dataset, cfg)
}

/// Epochs of the second, pair-only stage of [`fit_fewshot`].
pub const FEWSHOT_FINETUNE_EPOCHS: usize = 200;

/// Sequential few-shot training: fit on the weight dataset for `cfg.epochs`,
/// then keep training the same parameters on the few-shot pairs for
/// `finetune_epochs` under a fresh optimizer and cosine schedule.
pub fn fit_fewshot_with(
    weights_ds: &AlignmentDataset,
    fewshot_ds: &AlignmentDataset,
    cfg: &TrainConfig,
    finetune_epochs: usize,
) -> Result<FitReport<MlpAligner>> {
    cfg.validate()?;
    check_nonempty(weights_ds)?;
    if fewshot_ds.is_empty() {
        return Err(Error::Empty("few-shot dataset"));
    }
    if fewshot_ds.source_dim() != weights_ds.source_dim()
        || fewshot_ds.target_dim() != weights_ds.target_dim()
    {
        return Err(Error::DimensionMismatch {
            what: "few-shot dataset dimensions",
            expected: weights_ds.source_dim(),
            found: fewshot_ds.source_dim(),
        });
    }
    let stage1 = fit_mlp(weights_ds, cfg)?;
    let stage2_cfg = TrainConfig {
        epochs: finetune_epochs,
        ..cfg.clone()
    };
    stage2_cfg.validate()?;
    let stage2 = train_from(stage1.model, fewshot_ds, &stage2_cfg)?;
    let mut loss_trace = stage1.loss_trace;
    loss_trace.extend(stage2.loss_trace);
    Ok(FitReport {
        model: stage2.model,
        loss_trace,
    })
}

pub fn fit_fewshot(
    weights_ds: &AlignmentDataset,
    fewshot_ds: &AlignmentDataset,
    cfg: &TrainConfig,
) -> Result<FitReport<MlpAligner>> {
    fit_fewshot_with(weights_ds, fewshot_ds, cfg, FEWSHOT_FINETUNE_EPOCHS)
}

/// An MLP trained jointly with a bias-free `d × d` projection applied to the
/// weight-tagged source rows, pulling head rows toward the image manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedFit {
    pub mlp: MlpAligner,
    /// Starts at the identity.
    pub projection: Matrix,
    pub loss_trace: Vec<f64>,
}

pub fn fit_mlp_projected(dataset: &AlignmentDataset, cfg: &TrainConfig) -> Result<ProjectedFit> {
    cfg.validate()?;
    check_nonempty(dataset)?;
    let d = dataset.source_dim();
    let mut mlp = MlpAligner::init(dataset.target_dim(), d, cfg.seed);
    let n_mlp = mlp.num_params();
    let mut params = mlp.flatten();
    params.extend_from_slice(Matrix::identity(d).as_slice());
    let weight_rows: Vec<usize> = (0..dataset.len())
        .filter(|&r| dataset.origin()[r] == Origin::Weight)
        .collect();

    let mut scratch = mlp.clone();
    let trace = train_loop(&mut params, cfg, |p| {
        scratch.load_flat(&p[..n_mlp]);
        let proj = Matrix::from_vec(d, d, p[n_mlp..].to_vec())?;
        let mut targets = dataset.source().clone();
        for &r in &weight_rows {
            let v = proj.matvec(dataset.source().row(r))?;
            targets.row_mut(r).copy_from_slice(&v);
        }
        let (z, a, y) = scratch.forward_cached(dataset.target())?;
        let lg = batch_loss(&y, &targets, cfg.loss, true)?;
        let g = scratch.backward(dataset.target(), &z, &a, &lg.d_pred);
        let mut flat = g.flatten();
        let dt = lg.d_target.expect("requested");
        let mut gp = Matrix::zeros(d, d);
        for &r in &weight_rows {
            let w = dataset.source().row(r);
            for (i, &gi) in dt.row(r).iter().enumerate() {
                axpy(gi, w, gp.row_mut(i));
            }
        }
        flat.extend_from_slice(gp.as_slice());
        Ok((lg.loss, flat))
    })?;
    mlp.load_flat(&params[..n_mlp]);
    Ok(ProjectedFit {
        mlp,
        projection: Matrix::from_vec(d, d, params[n_mlp..].to_vec())?,
        loss_trace: trace,
    })
}
