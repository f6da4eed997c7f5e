//! Modality-gap statistics between two embedding populations (typically head
//! rows and image features): a centroid-distance permutation test, a linear
//! probe, and cosine-similarity histograms.

use alloc::vec;
use alloc::vec::Vec;

use crate::aligners::train_loop;
use crate::dataset::EmbeddingMatrix;
use crate::linalg::{dot, norm, Matrix};
use crate::metrics::compensated_sum;
use crate::optim::{Loss, TrainConfig};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTestResult {
    /// `‖mean(a) − mean(b)‖₂`.
    pub observed: f64,
    pub null_mean: f64,
    /// Sample standard deviation of the null distances.
    pub null_std: f64,
    /// `(1 + #{null ≥ observed}) / (1 + n_permutations)`.
    pub p_value: f64,
    /// `(observed − null_mean) / null_std`.
    pub cohens_d: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

fn check_groups(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.n() == 0 {
        return Err(Error::Empty("group a"));
    }
    if b.n() == 0 {
        return Err(Error::Empty("group b"));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "group dimension",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

fn centroid_distance(pool: &Matrix, in_a: &[bool], na: usize, nb: usize) -> f64 {
    let d = pool.cols();
    let mut sa = vec![0.0; d];
    let mut sb = vec![0.0; d];
    for (r, &a) in in_a.iter().enumerate() {
        let dst = if a { &mut sa } else { &mut sb };
        for (s, x) in dst.iter_mut().zip(pool.row(r)) {
            *s += x;
        }
    }
    let (ia, ib) = (1.0 / na as f64, 1.0 / nb as f64);
    let diff: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x * ia - y * ib).collect();
    norm(&diff)
}

/// Permutation test on the distance between group centroids. Replicate `r`
/// draws from RNG stream `r`, so results are fixed by `seed` alone.
pub fn centroid_permutation_test(
    group_a: &EmbeddingMatrix,
    group_b: &EmbeddingMatrix,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationTestResult> {
    check_groups(group_a, group_b)?;
    if n_perm < 99 {
        return Err(Error::InvalidArgument(alloc::format!(
            "need at least 99 permutations, got {n_perm}"
        )));
    }
    let (na, nb) = (group_a.n(), group_b.n());
    let pool = group_a.matrix().vstack(group_b.matrix())?;
    let n = na + nb;
    let mut mask: Vec<bool> = (0..n).map(|r| r < na).collect();
    let observed = centroid_distance(&pool, &mask, na, nb);

    let mut null = Vec::with_capacity(n_perm);
    for rep in 0..n_perm {
        let mut rng = SeededRng::with_stream(seed, rep as u64);
        mask.iter_mut().for_each(|m| *m = false);
        for i in rng.sample_indices(n, na) {
            mask[i] = true;
        }
        null.push(centroid_distance(&pool, &mask, na, nb));
    }
    let exceed = null.iter().filter(|&&x| x >= observed).count();
    let null_mean = compensated_sum(null.iter().copied()) / n_perm as f64;
    let var = compensated_sum(null.iter().map(|x| (x - null_mean) * (x - null_mean)))
        / (n_perm - 1) as f64;
    let null_std = libm::sqrt(var);
    let cohens_d = if null_std > 0.0 {
        (observed - null_mean) / null_std
    } else {
        0.0
    };
    Ok(PermutationTestResult {
        observed,
        null_mean,
        null_std,
        p_value: (1 + exceed) as f64 / (1 + n_perm) as f64,
        cohens_d,
        n_permutations: n_perm,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub train_fraction: f64,
    /// Held-out rows per group, `[a, b]`.
    pub test_counts: [usize; 2],
    /// Correctly classified held-out rows per group.
    pub per_class_correct: [usize; 2],
    pub test_accuracy: f64,
}

/// Epochs of the separability probe.
pub const PROBE_EPOCHS: usize = 200;

/// Logistic regression (one linear layer) separating `group_a` (label 0) from
/// `group_b` (label 1). Each group is split `train_fraction` / rest with a
/// seeded shuffle; training uses the shared AdamW loop.
pub fn linear_probe_separability(
    group_a: &EmbeddingMatrix,
    group_b: &EmbeddingMatrix,
    train_fraction: f64,
    seed: u64,
) -> Result<ProbeResult> {
    check_groups(group_a, group_b)?;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut train_rows: Vec<(&[f64], f64)> = Vec::new();
    let mut test_rows: Vec<Vec<&[f64]>> = vec![Vec::new(), Vec::new()];
    for (label, g) in [group_a, group_b].into_iter().enumerate() {
        let n = g.n();
        let n_test = libm::round((n as f64) * (1.0 - train_fraction)) as usize;
        let n_test = n_test.max(1);
        if n < 2 || n_test >= n {
            return Err(Error::InvalidArgument(alloc::format!(
                "group {} has {n} rows, too few for a train/test split",
                if label == 0 { "a" } else { "b" }
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        for (k, &r) in idx.iter().enumerate() {
            if k < n_test {
                test_rows[label].push(g.row(r));
            } else {
                train_rows.push((g.row(r), label as f64));
            }
        }
    }

    let d = group_a.dim();
    let cfg = TrainConfig {
        epochs: PROBE_EPOCHS,
        loss: Loss::Mse, // unused by the probe objective
        ..TrainConfig::with_seed(seed)
    };
    let mut params = vec![0.0; d + 1];
    let m = train_rows.len() as f64;
    train_loop(&mut params, &cfg, |p| {
        let (w, c) = p.split_at(d);
        let mut grad = vec![0.0; d + 1];
        let mut loss = 0.0;
        for &(x, y) in &train_rows {
            let z = dot(w, x) + c[0];
            // log(1 + e^z) - y z, stable form
            loss += if z > 0.0 {
                z + libm::log1p(libm::exp(-z))
            } else {
                libm::log1p(libm::exp(z))
            } - y * z;
            let g = (sigmoid(z) - y) / m;
            for (gi, xi) in grad[..d].iter_mut().zip(x) {
                *gi += g * xi;
            }
            grad[d] += g;
        }
        Ok((loss / m, grad))
    })?;

    let (w, c) = params.split_at(d);
    let mut correct = [0usize; 2];
    for (label, rows) in test_rows.iter().enumerate() {
        for x in rows {
            let predicted = usize::from(dot(w, x) + c[0] > 0.0);
            if predicted == label {
                correct[label] += 1;
            }
        }
    }
    let counts = [test_rows[0].len(), test_rows[1].len()];
    Ok(ProbeResult {
        train_fraction,
        test_counts: counts,
        per_class_correct: correct,
        test_accuracy: (correct[0] + correct[1]) as f64 / (counts[0] + counts[1]) as f64,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

pub const HISTOGRAM_BINS: usize = 50;

/// Histograms over `[−1, 1]` of within-a, within-b (`i < j`) and cross cosine
/// similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSummary {
    pub counts_aa: Vec<usize>,
    pub counts_bb: Vec<usize>,
    pub counts_ab: Vec<usize>,
    pub mean_aa: f64,
    pub mean_bb: f64,
    pub mean_ab: f64,
}

impl CosineSummary {
    /// `(left, right)` edges of bin `i`.
    pub fn bin_edges(i: usize) -> (f64, f64) {
        let w = 2.0 / HISTOGRAM_BINS as f64;
        (-1.0 + w * i as f64, -1.0 + w * (i + 1) as f64)
    }
}

fn bin_of(c: f64) -> usize {
    let c = c.clamp(-1.0, 1.0);
    (((c + 1.0) / 2.0 * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

fn accumulate(sims: Vec<f64>) -> (Vec<usize>, f64) {
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &s in &sims {
        counts[bin_of(s)] += 1;
    }
    let n = sims.len() as f64;
    (counts, compensated_sum(sims) / n)
}

pub fn cosine_distribution_summary(
    group_a: &EmbeddingMatrix,
    group_b: &EmbeddingMatrix,
) -> Result<CosineSummary> {
    check_groups(group_a, group_b)?;
    for (what, g) in [("group a", group_a), ("group b", group_b)] {
        if g.n() < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "{what} needs at least 2 rows for within-group similarities"
            )));
        }
    }
    let ua = group_a.matrix().normalized_rows("group a")?;
    let ub = group_b.matrix().normalized_rows("group b")?;
    let within = |u: &Matrix| {
        let mut v = Vec::with_capacity(u.rows() * (u.rows() - 1) / 2);
        for i in 0..u.rows() {
            for j in i + 1..u.rows() {
                v.push(dot(u.row(i), u.row(j)));
            }
        }
        v
    };
    let cross: Vec<f64> = ua
        .iter_rows()
        .flat_map(|x| ub.iter_rows().map(move |y| dot(x, y)))
        .collect();
    let (counts_aa, mean_aa) = accumulate(within(&ua));
    let (counts_bb, mean_bb) = accumulate(within(&ub));
    let (counts_ab, mean_ab) = accumulate(cross);
    Ok(CosineSummary {
        counts_aa,
        counts_bb,
        counts_ab,
        mean_aa,
        mean_bb,
        mean_ab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: usize, cols: usize, data: Vec<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::new(Matrix::from_vec(rows, cols, data).unwrap()).unwrap()
    }

    fn gaussian(n: usize, d: usize, shift: f64, rng: &mut SeededRng) -> EmbeddingMatrix {
        let mut v = rng.normal_vec(n * d, 1.0);
        for r in 0..n {
            v[r * d] += shift;
        }
        emb(n, d, v)
    }

    #[test]
    fn identical_groups_give_p_one() {
        let mut rng = SeededRng::new(1);
        let a = gaussian(10, 3, 0.0, &mut rng);
        let r = centroid_permutation_test(&a, &a, 99, 3).unwrap();
        assert_eq!(r.observed, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn separated_groups_reject() {
        let mut rng = SeededRng::new(2);
        let a = gaussian(40, 4, 5.0, &mut rng);
        let b = gaussian(40, 4, 0.0, &mut rng);
        let r = centroid_permutation_test(&a, &b, 199, 9).unwrap();
        assert_eq!(r.p_value, 1.0 / 200.0);
        assert!(r.cohens_d > 0.0);
        let again = centroid_permutation_test(&a, &b, 199, 9).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn permutation_errors() {
        let a = emb(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let none = emb(0, 2, vec![]);
        assert!(centroid_permutation_test(&a, &none, 99, 0).is_err());
        assert!(centroid_permutation_test(&a, &a, 50, 0).is_err());
    }

    #[test]
    fn probe_rejects_tiny_groups() {
        let a = emb(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let b = emb(1, 2, vec![1.0, 1.0]);
        assert!(linear_probe_separability(&a, &b, 0.8, 0).is_err());
    }

    #[test]
    fn probe_separates_clusters() {
        let mut rng = SeededRng::new(3);
        let a = gaussian(100, 5, 6.0, &mut rng);
        let b = gaussian(100, 5, -6.0, &mut rng);
        let r = linear_probe_separability(&a, &b, 0.8, 1).unwrap();
        assert_eq!(r.test_counts, [20, 20]);
        assert!(r.test_accuracy >= 0.99, "{r:?}");
    }

    #[test]
    fn cosine_summary_shapes() {
        let dup = emb(3, 2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let basis = emb(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let s = cosine_distribution_summary(&dup, &dup).unwrap();
        assert!((s.mean_aa - 1.0).abs() < 1e-12);
        assert_eq!(s.counts_aa.iter().sum::<usize>(), 3);
        assert_eq!(s.counts_ab.iter().sum::<usize>(), 9);
        assert_eq!(s.counts_aa[HISTOGRAM_BINS - 1], 3);
        let s = cosine_distribution_summary(&basis, &basis).unwrap();
        assert_eq!(s.mean_aa, 0.0);
        let one = emb(1, 3, vec![1.0, 0.0, 0.0]);
        assert!(cosine_distribution_summary(&one, &basis).is_err());
    }

    #[test]
    fn bins_cover_interval() {
        assert_eq!(bin_of(-1.0), 0);
        assert_eq!(bin_of(1.0), HISTOGRAM_BINS - 1);
        assert_eq!(CosineSummary::bin_edges(0), (-1.0, -0.96));
        let (_, r) = CosineSummary::bin_edges(HISTOGRAM_BINS - 1);
        assert!((r - 1.0).abs() < 1e-15);
    }
}
