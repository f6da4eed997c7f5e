//! Evaluation protocols that combine the pieces: cosine-vs-linear head
//! comparison, zero-shot classification through an aligner, pair sampling,
//! and the seeded few-shot comparison against nearest-centroid and k-NN.

use alloc::vec;
use alloc::vec::Vec;

use crate::aligners::{fit_fewshot_with, Aligner, FEWSHOT_FINETUNE_EPOCHS};
use crate::classify::{
    accuracy, balanced_accuracy, cosine_predict, fit_centroids, knn_predict, linear_predict,
    ncc_predict, zero_shot_predict, KnnMetric,
};
use crate::dataset::{build_weight_dataset, AlignmentDataset, ClassHead, EmbeddingMatrix, Origin};
use crate::linalg::Matrix;
use crate::optim::TrainConfig;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Linear head versus cosine-on-rows head on labelled features.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadComparison {
    pub linear_accuracy: f64,
    pub cosine_accuracy: f64,
    /// Fraction of samples where both heads pick the same class.
    pub agreement: f64,
}

pub fn compare_heads(head: &ClassHead, features: &EmbeddingMatrix) -> Result<HeadComparison> {
    let truth = features.require_labels()?;
    let mut lin = Vec::with_capacity(features.n());
    let mut cos = Vec::with_capacity(features.n());
    for r in 0..features.n() {
        lin.push(linear_predict(head, features.row(r))?.argmax);
        cos.push(cosine_predict(head, features.row(r))?.argmax);
    }
    Ok(HeadComparison {
        linear_accuracy: accuracy(&lin, truth)?,
        cosine_accuracy: accuracy(&cos, truth)?,
        agreement: accuracy(&lin, &cos)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotOutcome {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

/// Classifies each labelled image by the aligned class prompt with the
/// highest cosine similarity to the aligned image.
pub fn zero_shot_classify(
    aligner: &Aligner,
    images: &EmbeddingMatrix,
    class_texts: &Matrix,
) -> Result<ZeroShotOutcome> {
    let truth = images.require_labels()?;
    let prompts = aligner.map_texts(class_texts)?;
    let mapped = aligner.map_images(images.matrix())?;
    let predictions = mapped
        .iter_rows()
        .map(|x| zero_shot_predict(&prompts, x).map(|p| p.argmax))
        .collect::<Result<Vec<_>>>()?;
    Ok(ZeroShotOutcome {
        accuracy: accuracy(&predictions, truth)?,
        balanced_accuracy: balanced_accuracy(&predictions, truth)?,
        predictions,
    })
}

/// Row indices grouped by label.
pub fn rows_by_class(labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); classes];
    for (r, &l) in labels.iter().enumerate() {
        by[l].push(r);
    }
    by
}

/// `k` distinct rows per class, class-major, drawn from `rng`.
pub fn sample_shots(
    labels: &[usize],
    classes: usize,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let mut picked = Vec::with_capacity(classes * k);
    for (c, rows) in rows_by_class(labels, classes).iter().enumerate() {
        if rows.len() < k {
            return Err(Error::InvalidArgument(alloc::format!(
                "class {c} has {} rows, cannot draw {k} shots",
                rows.len()
            )));
        }
        picked.extend(rng.sample_indices(rows.len(), k).into_iter().map(|i| rows[i]));
    }
    Ok(picked)
}

/// Image-text pairs pairing each selected image with its class's text row.
pub fn class_pairs(
    images: &EmbeddingMatrix,
    rows: &[usize],
    class_texts: &Matrix,
) -> Result<AlignmentDataset> {
    let labels = images.require_labels()?;
    let src = images.matrix().select_rows(rows);
    let tgt_rows: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    if let Some(&bad) = tgt_rows.iter().find(|&&l| l >= class_texts.rows()) {
        return Err(Error::LabelOutOfRange {
            index: 0,
            label: bad,
            classes: class_texts.rows(),
        });
    }
    AlignmentDataset::new(src, class_texts.select_rows(&tgt_rows), vec![Origin::Pair; rows.len()])
}

/// Split of labelled features into a shot pool and a test set, the first
/// `train_per_class` rows of each class going to the pool.
pub fn split_per_class(
    features: &EmbeddingMatrix,
    train_per_class: usize,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let labels = features.require_labels()?;
    let classes = features.num_classes().unwrap_or(0);
    let mut pool = Vec::new();
    let mut test = Vec::new();
    for (c, rows) in rows_by_class(labels, classes).iter().enumerate() {
        if rows.len() <= train_per_class {
            return Err(Error::InvalidArgument(alloc::format!(
                "class {c} has {} rows; need more than {train_per_class} to leave a test set",
                rows.len()
            )));
        }
        pool.extend_from_slice(&rows[..train_per_class]);
        test.extend_from_slice(&rows[train_per_class..]);
    }
    Ok((features.select(&pool), features.select(&test)))
}

/// Settings of one few-shot comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotProtocol {
    pub shots: usize,
    /// Neighbours for the k-NN baseline; `None` uses `shots`.
    pub knn_k: Option<usize>,
    pub knn_metric: KnnMetric,
    pub train: TrainConfig,
    pub finetune_epochs: usize,
}

impl FewShotProtocol {
    pub fn new(shots: usize) -> Self {
        FewShotProtocol {
            shots,
            knn_k: None,
            knn_metric: KnnMetric::Euclidean,
            train: TrainConfig::default(),
            finetune_epochs: FEWSHOT_FINETUNE_EPOCHS,
        }
    }
}

/// Accuracies of the three methods on one seeded draw of shots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FewShotAccuracies {
    pub aligned: f64,
    pub ncc: f64,
    pub knn: f64,
}

/// One repeat: draws the shots once from `pool`, then evaluates the
/// sequentially trained MLP, nearest-centroid and k-NN on `test` with those
/// same shots. The MLP starts from the head rows paired with `class_texts`.
pub fn run_fewshot_repeat(
    protocol: &FewShotProtocol,
    head: &ClassHead,
    class_texts: &EmbeddingMatrix,
    pool: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    seed: u64,
) -> Result<FewShotAccuracies> {
    let classes = class_texts.n();
    let pool_labels = pool.require_labels()?;
    let truth = test.require_labels()?;
    let mut rng = SeededRng::new(seed);
    let shots = sample_shots(pool_labels, classes, protocol.shots, &mut rng)?;
    let support = pool.select(&shots);

    let weights_ds = build_weight_dataset(head, class_texts)?;
    let pairs = class_pairs(pool, &shots, class_texts.matrix())?;
    let cfg = TrainConfig {
        seed,
        ..protocol.train.clone()
    };
    let mlp = fit_fewshot_with(&weights_ds, &pairs, &cfg, protocol.finetune_epochs)?.model;
    let aligned = zero_shot_classify(&Aligner::Mlp(mlp), test, class_texts.matrix())?.accuracy;

    let centroids = fit_centroids(&support)?;
    let k = protocol.knn_k.unwrap_or(protocol.shots);
    let mut ncc = Vec::with_capacity(test.n());
    let mut knn = Vec::with_capacity(test.n());
    for r in 0..test.n() {
        ncc.push(ncc_predict(&centroids, test.row(r))?.argmax);
        knn.push(knn_predict(&support, test.row(r), k, protocol.knn_metric)?.argmax);
    }
    Ok(FewShotAccuracies {
        aligned,
        ncc: accuracy(&ncc, truth)?,
        knn: accuracy(&knn, truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_collapsed, SynthSpec};

    #[test]
    fn shots_are_per_class_and_seeded() {
        let labels = [0, 1, 0, 1, 0, 1, 2, 2];
        let mut a = SeededRng::new(1);
        let mut b = SeededRng::new(1);
        let s = sample_shots(&labels, 3, 2, &mut a).unwrap();
        assert_eq!(s, sample_shots(&labels, 3, 2, &mut b).unwrap());
        let got: Vec<usize> = s.iter().map(|&r| labels[r]).collect();
        assert_eq!(got, vec![0, 0, 1, 1, 2, 2]);
        assert!(sample_shots(&labels, 3, 3, &mut a).is_err());
    }

    #[test]
    fn collapsed_heads_agree() {
        let out = generate_collapsed(&SynthSpec::new(5, 8, 20, 0.0, 3)).unwrap();
        let cmp = compare_heads(&out.head, &out.features).unwrap();
        assert_eq!(cmp.agreement, 1.0);
        assert_eq!(cmp.cosine_accuracy, 1.0);
    }

    #[test]
    fn split_keeps_classes() {
        let out = generate_collapsed(&SynthSpec::new(3, 4, 5, 0.1, 3)).unwrap();
        let (pool, test) = split_per_class(&out.features, 2).unwrap();
        assert_eq!(pool.n(), 6);
        assert_eq!(test.n(), 9);
        assert!(split_per_class(&out.features, 5).is_err());
    }
}
