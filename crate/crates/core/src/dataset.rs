//! Embedding containers and the alignment datasets built from them.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::{Error, Result};

/// `n × d` embeddings with optional per-row class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Matrix,
    labels: Option<Vec<usize>>,
    names: Option<Vec<String>>,
}

impl EmbeddingMatrix {
    /// Unlabelled embeddings. Fails on any non-finite value.
    pub fn new(data: Matrix) -> Result<Self> {
        Self::with_labels(data, None, None)
    }

    pub fn with_labels(
        data: Matrix,
        labels: Option<Vec<usize>>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        if let Some(pos) = data.first_non_finite() {
            return Err(Error::NonFinite {
                what: "embedding matrix",
                index: pos,
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != data.rows() {
                return Err(Error::DimensionMismatch {
                    what: "label count",
                    expected: data.rows(),
                    found: labels.len(),
                });
            }
            if let Some(names) = &names {
                for (index, &label) in labels.iter().enumerate() {
                    if label >= names.len() {
                        return Err(Error::LabelOutOfRange {
                            index,
                            label,
                            classes: names.len(),
                        });
                    }
                }
            }
        }
        if let Some(names) = &names {
            check_unique(names)?;
        }
        Ok(EmbeddingMatrix {
            data,
            labels,
            names,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.data.rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Labels, or an error naming the caller's need for them.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or(Error::InvalidArgument("embedding matrix has no labels".into()))
    }

    /// Number of classes: the name count if present, else `max(label) + 1`.
    pub fn num_classes(&self) -> Option<usize> {
        match (&self.names, &self.labels) {
            (Some(n), _) => Some(n.len()),
            (None, Some(l)) => Some(l.iter().max().map_or(0, |m| m + 1)),
            _ => None,
        }
    }

    pub fn into_parts(self) -> (Matrix, Option<Vec<usize>>, Option<Vec<String>>) {
        (self.data, self.labels, self.names)
    }

    /// Rows picked by index; labels follow, names are kept whole.
    pub fn select(&self, idx: &[usize]) -> EmbeddingMatrix {
        EmbeddingMatrix {
            data: self.data.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            names: self.names.clone(),
        }
    }

    /// Copy with unit-norm rows.
    pub fn normalized(&self) -> Result<EmbeddingMatrix> {
        Ok(EmbeddingMatrix {
            data: self.data.normalized_rows("embedding")?,
            labels: self.labels.clone(),
            names: self.names.clone(),
        })
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateName(n.clone()));
        }
    }
    Ok(())
}

/// The final linear layer `W x + b` of a supervised image model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHead {
    weights: Matrix,
    bias: Vec<f64>,
    class_names: Vec<String>,
}

impl ClassHead {
    /// `weights` is `C × d`, one row per class. `bias` defaults to zeros.
    pub fn new(weights: Matrix, bias: Option<Vec<f64>>, class_names: Vec<String>) -> Result<Self> {
        let c = weights.rows();
        if c < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "a classification head needs at least 2 classes, got {c}"
            )));
        }
        if class_names.len() != c {
            return Err(Error::DimensionMismatch {
                what: "class name count",
                expected: c,
                found: class_names.len(),
            });
        }
        check_unique(&class_names)?;
        if let Some(pos) = weights.first_non_finite() {
            return Err(Error::NonFinite {
                what: "head weights",
                index: pos,
            });
        }
        let bias = bias.unwrap_or_else(|| alloc::vec![0.0; c]);
        if bias.len() != c {
            return Err(Error::DimensionMismatch {
                what: "bias length",
                expected: c,
                found: bias.len(),
            });
        }
        if let Some(pos) = bias.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                what: "head bias",
                index: pos,
            });
        }
        Ok(ClassHead {
            weights,
            bias,
            class_names,
        })
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Head rows as an embedding matrix labelled `0..C`.
    pub fn rows_as_embeddings(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            data: self.weights.clone(),
            labels: Some((0..self.num_classes()).collect()),
            names: Some(self.class_names.clone()),
        }
    }
}

/// Where an alignment pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    /// A real image-text embedding pair.
    Pair,
    /// A recycled head row paired with its class-name embedding.
    Weight,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Pair => "pair",
            Origin::Weight => "weight",
        }
    }

    pub fn parse(s: &str) -> Option<Origin> {
        match s {
            "pair" => Some(Origin::Pair),
            "weight" => Some(Origin::Weight),
            _ => None,
        }
    }
}

/// Paired rows: `source` lives in image space (image features or head rows),
/// `target` in text space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentDataset {
    source: Matrix,
    target: Matrix,
    origin: Vec<Origin>,
}

impl AlignmentDataset {
    pub fn new(source: Matrix, target: Matrix, origin: Vec<Origin>) -> Result<Self> {
        if source.rows() != target.rows() {
            return Err(Error::DimensionMismatch {
                what: "alignment pair count",
                expected: source.rows(),
                found: target.rows(),
            });
        }
        if origin.len() != source.rows() {
            return Err(Error::DimensionMismatch {
                what: "origin tag count",
                expected: source.rows(),
                found: origin.len(),
            });
        }
        for (what, m) in [("alignment source", &source), ("alignment target", &target)] {
            if let Some(index) = m.first_non_finite() {
                return Err(Error::NonFinite { what, index });
            }
        }
        Ok(AlignmentDataset {
            source,
            target,
            origin,
        })
    }

    /// Image-text pairs: row `j` of `images` goes with row `j` of `texts`.
    pub fn from_pairs(images: &EmbeddingMatrix, texts: &EmbeddingMatrix) -> Result<Self> {
        let m = images.n();
        Self::new(
            images.matrix().clone(),
            texts.matrix().clone(),
            alloc::vec![Origin::Pair; m],
        )
    }

    /// Empty dataset with fixed dimensions, the identity for [`union_datasets`].
    pub fn empty(source_dim: usize, target_dim: usize) -> Self {
        AlignmentDataset {
            source: Matrix::zeros(0, source_dim),
            target: Matrix::zeros(0, target_dim),
            origin: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn source(&self) -> &Matrix {
        &self.source
    }

    pub fn target(&self) -> &Matrix {
        &self.target
    }

    pub fn origin(&self) -> &[Origin] {
        &self.origin
    }

    pub fn source_dim(&self) -> usize {
        self.source.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.target.cols()
    }

    pub fn count(&self, tag: Origin) -> usize {
        self.origin.iter().filter(|&&o| o == tag).count()
    }

    /// Fraction of rows that are real image-text pairs.
    pub fn pair_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.count(Origin::Pair) as f64 / self.len() as f64
    }

    pub fn into_parts(self) -> (Matrix, Matrix, Vec<Origin>) {
        (self.source, self.target, self.origin)
    }
}

/// Pairs every head row `w_i` with text row `i`.
///
/// The caller guarantees that text row `i` embeds `class_names[i]`; only the
/// counts are checked.
pub fn build_weight_dataset(
    head: &ClassHead,
    text_embeddings: &EmbeddingMatrix,
) -> Result<AlignmentDataset> {
    if text_embeddings.n() != head.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "class text rows",
            expected: head.num_classes(),
            found: text_embeddings.n(),
        });
    }
    AlignmentDataset::new(
        head.weights().clone(),
        text_embeddings.matrix().clone(),
        alloc::vec![Origin::Weight; head.num_classes()],
    )
}

/// Rows of `a` followed by rows of `b`, tags preserved.
pub fn union_datasets(a: &AlignmentDataset, b: &AlignmentDataset) -> Result<AlignmentDataset> {
    if a.source_dim() != b.source_dim() {
        return Err(Error::DimensionMismatch {
            what: "union source dimension",
            expected: a.source_dim(),
            found: b.source_dim(),
        });
    }
    if a.target_dim() != b.target_dim() {
        return Err(Error::DimensionMismatch {
            what: "union target dimension",
            expected: a.target_dim(),
            found: b.target_dim(),
        });
    }
    let mut origin = a.origin.clone();
    origin.extend_from_slice(&b.origin);
    Ok(AlignmentDataset {
        source: a.source.vstack(&b.source)?,
        target: a.target.vstack(&b.target)?,
        origin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn tagged(m: usize, d: usize, dt: usize, tag: Origin) -> AlignmentDataset {
        AlignmentDataset::new(Matrix::zeros(m, d), Matrix::zeros(m, dt), vec![tag; m]).unwrap()
    }

    #[test]
    fn head_defaults_and_errors() {
        let w = Matrix::identity(2);
        let h = ClassHead::new(w.clone(), None, names(&["cat", "dog"])).unwrap();
        assert_eq!(h.bias(), &[0.0, 0.0]);
        let h = ClassHead::new(w.clone(), Some(vec![0.1, -0.2]), names(&["cat", "dog"])).unwrap();
        assert_eq!(h.num_classes(), 2);
        assert_eq!(h.bias(), &[0.1, -0.2]);

        let w3 = Matrix::zeros(3, 2);
        assert!(matches!(
            ClassHead::new(w3, None, names(&["a", "b"])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            ClassHead::new(w.clone(), None, names(&["a", "a"])),
            Err(Error::DuplicateName(_))
        ));
        assert!(ClassHead::new(Matrix::zeros(1, 2), None, names(&["a"])).is_err());
    }

    #[test]
    fn embedding_invariants() {
        let m = Matrix::from_vec(2, 1, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(EmbeddingMatrix::new(m), Err(Error::NonFinite { index: 1, .. })));
        let m = Matrix::zeros(2, 1);
        assert!(EmbeddingMatrix::with_labels(m.clone(), Some(vec![0, 2]), Some(names(&["a", "b"]))).is_err());
        assert!(EmbeddingMatrix::with_labels(m, Some(vec![0]), None).is_err());
    }

    #[test]
    fn weight_dataset() {
        let head = ClassHead::new(Matrix::identity(3), None, names(&["a", "b", "c"])).unwrap();
        let texts = EmbeddingMatrix::new(Matrix::zeros(3, 5)).unwrap();
        let ds = build_weight_dataset(&head, &texts).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.count(Origin::Weight), 3);
        assert_eq!(ds.source().row(1), &[0.0, 1.0, 0.0]);
        let short = EmbeddingMatrix::new(Matrix::zeros(2, 5)).unwrap();
        assert!(build_weight_dataset(&head, &short).is_err());
    }

    #[test]
    fn thousand_class_weight_dataset() {
        let c = 1000;
        let labels: Vec<String> = (0..c).map(|i| alloc::format!("class{i}")).collect();
        let head = ClassHead::new(Matrix::zeros(c, 4), None, labels).unwrap();
        let texts = EmbeddingMatrix::new(Matrix::zeros(c, 3)).unwrap();
        assert_eq!(build_weight_dataset(&head, &texts).unwrap().len(), 1000);
    }

    #[test]
    fn union_counts_and_fraction() {
        let pairs = tagged(817, 2, 3, Origin::Pair);
        let weights = tagged(21841, 2, 3, Origin::Weight);
        let aug = union_datasets(&pairs, &weights).unwrap();
        assert_eq!(aug.len(), 22658);
        assert_eq!(aug.count(Origin::Pair), 817);
        assert!((aug.pair_fraction() - 0.036).abs() < 5e-4);
        assert_eq!(&aug.origin()[..817], &vec![Origin::Pair; 817][..]);

        let e = AlignmentDataset::empty(2, 3);
        assert_eq!(union_datasets(&pairs, &e).unwrap(), pairs);

        let wide = tagged(1, 512, 3, Origin::Pair);
        let wider = tagged(1, 768, 3, Origin::Pair);
        assert!(union_datasets(&wide, &wider).is_err());
    }
}
