//! Retrieval and alignment-quality metrics.
//!
//! Rankings sort gallery items by descending cosine similarity with ties going
//! to the smaller gallery index. Averages use compensated summation so the
//! result does not depend on accumulation order beyond the last ulp.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::aligners::Aligner;
use crate::linalg::{dot, norm, Matrix};
use crate::{Error, Result};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn unit_rows(m: &Matrix, what: &'static str) -> Result<Matrix> {
    m.normalized_rows(what)
}

/// Queries and gallery in a shared space plus per-query relevant sets.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    queries: Matrix,
    gallery: Matrix,
    relevance: Vec<BTreeSet<usize>>,
}

impl RetrievalTask {
    pub fn new(queries: &Matrix, gallery: &Matrix, relevance: Vec<Vec<usize>>) -> Result<Self> {
        if queries.cols() != gallery.cols() {
            return Err(Error::DimensionMismatch {
                what: "query/gallery dimension",
                expected: gallery.cols(),
                found: queries.cols(),
            });
        }
        if relevance.len() != queries.rows() {
            return Err(Error::DimensionMismatch {
                what: "relevance lists",
                expected: queries.rows(),
                found: relevance.len(),
            });
        }
        let n = gallery.rows();
        let mut sets = Vec::with_capacity(relevance.len());
        for (q, rel) in relevance.into_iter().enumerate() {
            if rel.is_empty() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "query {q} has no relevant gallery items"
                )));
            }
            if let Some(&bad) = rel.iter().find(|&&g| g >= n) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "query {q} lists gallery index {bad} but the gallery has {n} items"
                )));
            }
            sets.push(rel.into_iter().collect());
        }
        Ok(RetrievalTask {
            queries: unit_rows(queries, "query")?,
            gallery: unit_rows(gallery, "gallery item")?,
            relevance: sets,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.queries.rows()
    }

    pub fn gallery_size(&self) -> usize {
        self.gallery.rows()
    }

    pub fn relevant(&self, q: usize) -> &BTreeSet<usize> {
        &self.relevance[q]
    }
}

/// Gallery indices by descending cosine similarity to query `q`.
pub fn rank_gallery(task: &RetrievalTask, q: usize) -> Vec<usize> {
    let qv = task.queries.row(q);
    let sims: Vec<f64> = task.gallery.iter_rows().map(|g| dot(qv, g)).collect();
    rank_by_scores(&sims)
}

/// Indices sorted by descending score, ties by ascending index.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `(1/R) Σ_k P(k)·1{item at rank k is relevant}` over the whole ranking.
pub fn average_precision(ranking: &[usize], relevant: &BTreeSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Empty("relevant set"));
    }
    let mut hits = 0usize;
    let mut terms = Vec::with_capacity(relevant.len());
    for (pos, g) in ranking.iter().enumerate() {
        if relevant.contains(g) {
            hits += 1;
            terms.push(hits as f64 / (pos + 1) as f64);
        }
    }
    Ok(compensated_sum(terms) / relevant.len() as f64)
}

/// `|top-k ∩ relevant| / k`.
pub fn precision_at_k(ranking: &[usize], relevant: &BTreeSet<usize>, k: usize) -> Result<f64> {
    if k == 0 || k > ranking.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "k must be in 1..={}, got {k}",
            ranking.len()
        )));
    }
    let hits = ranking[..k].iter().filter(|g| relevant.contains(g)).count();
    Ok(hits as f64 / k as f64)
}

pub fn mean_average_precision(task: &RetrievalTask) -> Result<f64> {
    let q = task.num_queries();
    if q == 0 {
        return Err(Error::Empty("query set"));
    }
    let aps = (0..q)
        .map(|i| average_precision(&rank_gallery(task, i), task.relevant(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(aps) / q as f64)
}

/// Mean P@k over all queries.
pub fn mean_precision_at_k(task: &RetrievalTask, k: usize) -> Result<f64> {
    let q = task.num_queries();
    if q == 0 {
        return Err(Error::Empty("query set"));
    }
    let ps = (0..q)
        .map(|i| precision_at_k(&rank_gallery(task, i), task.relevant(i), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(ps) / q as f64)
}

/// Indices of the `k` most cosine-similar rows to each row, self excluded,
/// ties by ascending index. Rows must be unit norm.
fn knn_sets(unit: &Matrix, k: usize) -> Vec<BTreeSet<usize>> {
    let n = unit.rows();
    (0..n)
        .map(|i| {
            let sims: Vec<f64> = (0..n)
                .map(|j| {
                    if j == i {
                        f64::NEG_INFINITY
                    } else {
                        dot(unit.row(i), unit.row(j))
                    }
                })
                .collect();
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx.into_iter().collect()
        })
        .collect()
}

/// Mutual k-nearest-neighbour alignment: the mean fraction of row `i`'s `k`
/// cosine neighbours in `space_a` that are also among its `k` neighbours in
/// `space_b`. Rows are paired by index.
pub fn mutual_knn_alignment(space_a: &Matrix, space_b: &Matrix, k: usize) -> Result<f64> {
    let n = space_a.rows();
    if space_b.rows() != n {
        return Err(Error::DimensionMismatch {
            what: "paired row count",
            expected: n,
            found: space_b.rows(),
        });
    }
    if k == 0 || n <= k {
        return Err(Error::InvalidArgument(alloc::format!(
            "mutual k-NN needs 1 <= k < n, got k={k}, n={n}"
        )));
    }
    let a = knn_sets(&unit_rows(space_a, "space a")?, k);
    let b = knn_sets(&unit_rows(space_b, "space b")?, k);
    let overlaps = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.intersection(y).count() as f64 / k as f64);
    Ok(compensated_sum(overlaps) / n as f64)
}

/// Cross-modal retrieval scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalScores {
    pub i2t_map: f64,
    pub i2t_p1: f64,
    /// `None` when the text gallery has fewer than five items.
    pub i2t_p5: Option<f64>,
    pub t2i_p1: f64,
}

/// Image→text mAP, P@1, P@5 and text→image P@1 through the aligner.
/// `relevance[i]` lists the texts matching image `i`; the text→image
/// relevance is its transpose and every text must match some image.
pub fn evaluate_retrieval(
    aligner: &Aligner,
    images: &Matrix,
    texts: &Matrix,
    relevance: &[Vec<usize>],
) -> Result<RetrievalScores> {
    let gi = aligner.map_images(images)?;
    let gt = aligner.map_texts(texts)?;
    evaluate_shared(&gi, &gt, relevance)
}

/// [`evaluate_retrieval`] on embeddings already in a shared space.
pub fn evaluate_shared(
    images: &Matrix,
    texts: &Matrix,
    relevance: &[Vec<usize>],
) -> Result<RetrievalScores> {
    let mut inverse = vec![Vec::new(); texts.rows()];
    for (i, rel) in relevance.iter().enumerate() {
        for &t in rel {
            if t >= texts.rows() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "image {i} lists text {t} but there are {} texts",
                    texts.rows()
                )));
            }
            inverse[t].push(i);
        }
    }
    let i2t = RetrievalTask::new(images, texts, relevance.to_vec())?;
    let t2i = RetrievalTask::new(texts, images, inverse)?;
    Ok(RetrievalScores {
        i2t_map: mean_average_precision(&i2t)?,
        i2t_p1: mean_precision_at_k(&i2t, 1)?,
        i2t_p5: if texts.rows() >= 5 {
            Some(mean_precision_at_k(&i2t, 5)?)
        } else {
            None
        },
        t2i_p1: mean_precision_at_k(&t2i, 1)?,
    })
}

/// Mean of `cos` over rows; used by reports as a quick alignment summary.
pub fn mean_paired_cosine(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.rows() == 0 {
        return Err(Error::DimensionMismatch {
            what: "paired rows",
            expected: a.rows(),
            found: b.rows(),
        });
    }
    let cs = a
        .iter_rows()
        .zip(b.iter_rows())
        .enumerate()
        .map(|(i, (x, y))| {
            let (nx, ny) = (norm(x), norm(y));
            if nx == 0.0 || ny == 0.0 {
                Err(Error::ZeroNorm {
                    what: "paired row",
                    index: i,
                })
            } else {
                Ok(dot(x, y) / (nx * ny))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(cs) / a.rows() as f64)
}
