//! Classifier heads and accuracy metrics.
//!
//! Every predictor returns a full score vector and resolves ties toward the
//! smallest class index, flagging when that happened.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{ClassHead, EmbeddingMatrix};
use crate::linalg::{cosine, dot, norm, squared_distance, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    /// Smallest index attaining the maximum score.
    pub argmax: usize,
    /// More than one class attained the maximum.
    pub tie_broken: bool,
}

impl Prediction {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut argmax = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[argmax] {
                argmax = i;
            }
        }
        let best = scores.get(argmax).copied();
        let tie_broken = scores.iter().filter(|&&s| Some(s) == best).count() > 1;
        Prediction {
            scores,
            argmax,
            tie_broken,
        }
    }
}

fn check_dim(what: &'static str, expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

/// Scores `⟨w_i, x⟩ + b_i`.
pub fn linear_predict(head: &ClassHead, x: &[f64]) -> Result<Prediction> {
    check_dim("linear_predict input", head.dim(), x)?;
    let scores = head
        .weights()
        .iter_rows()
        .zip(head.bias())
        .map(|(w, b)| dot(w, x) + b)
        .collect();
    Ok(Prediction::from_scores(scores))
}

/// Scores `cos(w_i, x)`; bias and row magnitudes play no part.
pub fn cosine_predict(head: &ClassHead, x: &[f64]) -> Result<Prediction> {
    check_dim("cosine_predict input", head.dim(), x)?;
    cosine_scores(head.weights(), x, "head row").map(Prediction::from_scores)
}

fn cosine_scores(protos: &Matrix, x: &[f64], what: &'static str) -> Result<Vec<f64>> {
    let nx = norm(x);
    if nx == 0.0 {
        return Err(Error::ZeroNorm {
            what: "query",
            index: 0,
        });
    }
    protos
        .iter_rows()
        .enumerate()
        .map(|(i, w)| {
            let nw = norm(w);
            if nw == 0.0 {
                return Err(Error::ZeroNorm { what, index: i });
            }
            Ok(dot(w, x) / (nw * nx))
        })
        .collect()
}

/// One mean per class.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub centroids: Matrix,
    pub class_names: Vec<String>,
}

/// Class means of labelled features. Every class in `0..num_classes` needs a
/// sample; the class count comes from the names if present, else the labels.
pub fn fit_centroids(features: &EmbeddingMatrix) -> Result<CentroidModel> {
    let labels = features.require_labels()?;
    let c = features.num_classes().unwrap_or(0);
    if c == 0 {
        return Err(Error::Empty("labelled features"));
    }
    let d = features.dim();
    let mut sums = Matrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, x) in sums.row_mut(l).iter_mut().zip(features.row(r)) {
            *s += x;
        }
    }
    for (i, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptyClass(i));
        }
        sums.row_mut(i).iter_mut().for_each(|s| *s /= n as f64);
    }
    let class_names = match features.names() {
        Some(n) => n.to_vec(),
        None => (0..c).map(|i| alloc::format!("class{i}")).collect(),
    };
    Ok(CentroidModel {
        centroids: sums,
        class_names,
    })
}

/// Scores `−‖x − μ_i‖`.
pub fn ncc_predict(model: &CentroidModel, x: &[f64]) -> Result<Prediction> {
    check_dim("ncc_predict input", model.centroids.cols(), x)?;
    let scores = model
        .centroids
        .iter_rows()
        .map(|mu| -libm::sqrt(squared_distance(x, mu)))
        .collect();
    Ok(Prediction::from_scores(scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnnMetric {
    #[default]
    Euclidean,
    Cosine,
}

/// Majority vote among the `k` nearest labelled rows; scores are vote counts.
///
/// Neighbours at equal distance are taken in ascending row order.
pub fn knn_predict(
    train: &EmbeddingMatrix,
    x: &[f64],
    k: usize,
    metric: KnnMetric,
) -> Result<Prediction> {
    let labels = train.require_labels()?;
    let n = train.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(alloc::format!(
            "k must be in 1..={n}, got {k}"
        )));
    }
    check_dim("knn_predict input", train.dim(), x)?;
    let mut dist: Vec<(f64, usize)> = match metric {
        KnnMetric::Euclidean => (0..n)
            .map(|r| (squared_distance(x, train.row(r)), r))
            .collect(),
        KnnMetric::Cosine => (0..n)
            .map(|r| {
                cosine(x, train.row(r))
                    .map(|c| (-c, r))
                    .ok_or(Error::ZeroNorm {
                        what: "knn row or query",
                        index: r,
                    })
            })
            .collect::<Result<_>>()?,
    };
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let c = train.num_classes().unwrap_or(0);
    let mut votes = vec![0.0; c];
    for &(_, r) in &dist[..k] {
        votes[labels[r]] += 1.0;
    }
    Ok(Prediction::from_scores(votes))
}

/// Scores are cosines between the aligned image and each aligned class prompt.
pub fn zero_shot_predict(aligned_class_texts: &Matrix, aligned_image: &[f64]) -> Result<Prediction> {
    check_dim("zero_shot_predict image", aligned_class_texts.cols(), aligned_image)?;
    cosine_scores(aligned_class_texts, aligned_image, "class prompt").map(Prediction::from_scores)
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction count",
            expected: truth.len(),
            found: preds.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("truth labels"));
    }
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean per-class recall over the classes present in `truth`.
pub fn balanced_accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction count",
            expected: truth.len(),
            found: preds.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("truth labels"));
    }
    let c = truth.iter().max().map_or(0, |m| m + 1);
    let mut support = vec![0usize; c];
    let mut hits = vec![0usize; c];
    for (&p, &t) in preds.iter().zip(truth) {
        support[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let (sum, present) = support
        .iter()
        .zip(&hits)
        .filter(|(&s, _)| s > 0)
        .fold((0.0, 0usize), |(acc, k), (&s, &h)| (acc + h as f64 / s as f64, k + 1));
    Ok(sum / present as f64)
}
