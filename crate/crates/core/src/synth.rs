//! Synthetic collapse-geometry fixtures.
//!
//! Class means sit on a simplex equiangular tight frame (or on random unit
//! directions), image features are noisy copies of their class mean, head rows
//! are positively rescaled class means, and each class gets one text
//! embedding that is another noisy copy of its mean. With zero noise this is
//! exactly the terminal-training geometry where the linear head, the cosine
//! head and the nearest-centroid rule all coincide.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{ClassHead, EmbeddingMatrix};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// Unit means with pairwise inner product `−1/(C−1)`; needs `C ≤ d+1`.
    SimplexEtf,
    /// Independent uniformly random unit means.
    RandomGaussian,
}

/// Parameters of a synthetic fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Per-coordinate std of the feature and text noise.
    pub noise_sigma: f64,
    /// Per-coordinate std of noise added to head rows before rescaling.
    /// Zero gives exact self-duality.
    pub head_noise: f64,
    pub seed: u64,
    pub geometry: Geometry,
}

impl SynthSpec {
    pub fn new(classes: usize, dim: usize, per_class: usize, noise_sigma: f64, seed: u64) -> Self {
        SynthSpec {
            classes,
            dim,
            per_class,
            noise_sigma,
            head_noise: 0.0,
            seed,
            geometry: Geometry::SimplexEtf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if self.geometry == Geometry::SimplexEtf && self.classes > self.dim + 1 {
            return Err(Error::InvalidArgument(format!(
                "a simplex ETF of {} classes needs dimension at least {}, got {}",
                self.classes,
                self.classes - 1,
                self.dim
            )));
        }
        for (name, v) in [("noise sigma", self.noise_sigma), ("head noise", self.head_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Output of [`generate_collapsed`].
#[derive(Debug, Clone)]
pub struct Collapsed {
    /// `C·per_class` unit image features, class-major, labelled.
    pub features: EmbeddingMatrix,
    /// `W` rows `s_i·(μ_i + η_i)` with `s_i ~ U[0.5, 2]`, zero bias.
    pub head: ClassHead,
    /// One unit text embedding per class, labelled `0..C`.
    pub texts: EmbeddingMatrix,
    /// The unit class means.
    pub means: Matrix,
    /// The positive head scales `s_i`.
    pub scales: Vec<f64>,
}

pub fn class_names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("class{i}")).collect()
}

/// Random orthogonal `n × n` matrix (Gram-Schmidt on a Gaussian matrix, two
/// passes for orthogonality to working precision).
pub fn random_orthogonal(n: usize, rng: &mut SeededRng) -> Matrix {
    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        let mut v: Vec<f64> = rng.normal_vec(n, 1.0);
        for _ in 0..2 {
            for j in 0..i {
                let p = dot(&v, q.row(j));
                for (x, y) in v.iter_mut().zip(q.row(j)) {
                    *x -= p * y;
                }
            }
        }
        let nv = norm(&v);
        for (x, y) in q.row_mut(i).iter_mut().zip(&v) {
            *x = y / nv;
        }
    }
    q
}

/// `C` unit vectors in `R^d` with pairwise inner product `−1/(C−1)`,
/// randomly rotated.
pub fn simplex_etf(c: usize, d: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if c < 2 || c > d + 1 {
        return Err(Error::InvalidArgument(format!(
            "simplex ETF needs 2 <= C <= d+1, got C={c}, d={d}"
        )));
    }
    // Helmert basis of the sum-zero subspace of R^C gives the centred
    // one-hot vertices C-1 coordinates each.
    let scale = libm::sqrt(c as f64 / (c - 1) as f64);
    let mut coords = Matrix::zeros(c, d);
    for k in 1..c {
        let h = 1.0 / libm::sqrt((k * (k + 1)) as f64);
        for i in 0..c {
            let v = if i < k {
                h
            } else if i == k {
                -(k as f64) * h
            } else {
                0.0
            };
            coords[(i, k - 1)] = v * scale;
        }
    }
    let q = random_orthogonal(d, rng);
    let mut means = coords.matmul(&q)?;
    for i in 0..c {
        let r = means.row_mut(i);
        let n = norm(r);
        r.iter_mut().for_each(|x| *x /= n);
    }
    Ok(means)
}

fn random_unit_means(c: usize, d: usize, rng: &mut SeededRng) -> Matrix {
    let mut m = Matrix::zeros(c, d);
    for i in 0..c {
        let v = loop {
            let v = rng.normal_vec(d, 1.0);
            if norm(&v) > 1e-12 {
                break v;
            }
        };
        let n = norm(&v);
        for (x, y) in m.row_mut(i).iter_mut().zip(&v) {
            *x = y / n;
        }
    }
    m
}

fn noisy_unit(mean: &[f64], sigma: f64, rng: &mut SeededRng, out: &mut [f64]) {
    if sigma == 0.0 {
        out.copy_from_slice(mean);
        return;
    }
    loop {
        for (o, m) in out.iter_mut().zip(mean) {
            *o = m + sigma * rng.normal();
        }
        let n = norm(out);
        if n > 1e-12 {
            out.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

pub fn generate_collapsed(spec: &SynthSpec) -> Result<Collapsed> {
    spec.validate()?;
    let (c, d) = (spec.classes, spec.dim);
    let mut rng = SeededRng::new(spec.seed);
    let means = match spec.geometry {
        Geometry::SimplexEtf => simplex_etf(c, d, &mut rng)?,
        Geometry::RandomGaussian => random_unit_means(c, d, &mut rng),
    };

    let scales: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.5, 2.0)).collect();
    let mut w = Matrix::zeros(c, d);
    for i in 0..c {
        let s = scales[i];
        for (o, m) in w.row_mut(i).iter_mut().zip(means.row(i)) {
            let eta = if spec.head_noise > 0.0 {
                spec.head_noise * rng.normal()
            } else {
                0.0
            };
            *o = s * (m + eta);
        }
    }

    let n = c * spec.per_class;
    let mut feats = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..c {
        for j in 0..spec.per_class {
            noisy_unit(means.row(i), spec.noise_sigma, &mut rng, feats.row_mut(i * spec.per_class + j));
            labels.push(i);
        }
    }

    let mut texts = Matrix::zeros(c, d);
    for i in 0..c {
        noisy_unit(means.row(i), spec.noise_sigma, &mut rng, texts.row_mut(i));
    }

    let names = class_names(c);
    Ok(Collapsed {
        features: EmbeddingMatrix::with_labels(feats, Some(labels), Some(names.clone()))?,
        head: ClassHead::new(w, None, names.clone())?,
        texts: EmbeddingMatrix::with_labels(texts, Some((0..c).collect()), Some(names))?,
        means,
        scales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn etf_inner_products() {
        for (c, d) in [(4, 3), (10, 16), (2, 1), (17, 16)] {
            let mut rng = SeededRng::new(11);
            let m = simplex_etf(c, d, &mut rng).unwrap();
            let target = -1.0 / (c as f64 - 1.0);
            for i in 0..c {
                assert!((norm(m.row(i)) - 1.0).abs() < 1e-10);
                for j in 0..c {
                    if i != j {
                        let ip = dot(m.row(i), m.row(j));
                        assert!((ip - target).abs() < 1e-10, "C={c} d={d}: {ip}");
                    }
                }
            }
        }
    }

    #[test]
    fn four_class_etf_is_minus_one_third() {
        let out = generate_collapsed(&SynthSpec::new(4, 3, 1, 0.0, 5)).unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let ip = dot(out.means.row(i), out.means.row(j));
                assert!((ip + 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_noise_collapses() {
        let out = generate_collapsed(&SynthSpec::new(5, 8, 3, 0.0, 2)).unwrap();
        let labels = out.features.labels().unwrap();
        for r in 0..out.features.n() {
            assert_eq!(out.features.row(r), out.means.row(labels[r]));
        }
        for i in 0..5 {
            let w = out.head.weights().row(i);
            let n = norm(w);
            for (a, b) in w.iter().zip(out.means.row(i)) {
                assert!((a / n - b).abs() < 1e-12);
            }
            assert!((0.5..2.0).contains(&out.scales[i]));
        }
        assert_eq!(out.head.bias(), &[0.0; 5]);
    }

    #[test]
    fn rejects_oversized_etf() {
        let spec = SynthSpec::new(20, 8, 1, 0.1, 0);
        assert!(generate_collapsed(&spec).is_err());
        let mut ok = spec.clone();
        ok.geometry = Geometry::RandomGaussian;
        assert!(generate_collapsed(&ok).is_ok());
        let mut bad = SynthSpec::new(3, 4, 1, -0.1, 0);
        assert!(generate_collapsed(&bad).is_err());
        bad.noise_sigma = 0.1;
        bad.classes = 1;
        assert!(generate_collapsed(&bad).is_err());
    }

    #[test]
    fn deterministic() {
        let mut spec = SynthSpec::new(6, 8, 4, 0.05, 42);
        spec.head_noise = 0.1;
        let a = generate_collapsed(&spec).unwrap();
        let b = generate_collapsed(&spec).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.head, b.head);
        assert_eq!(a.texts, b.texts);
    }
}
