//! Summary statistics across repeated runs.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTTest {
    pub mean_difference: f64,
    /// `None` when the differences have zero spread.
    pub t: Option<f64>,
    pub df: usize,
    /// Two-sided.
    pub p_value: f64,
}

/// Paired two-sided t-test of `a − b`. Needs at least two pairs. Differences
/// that are all equal give `p = 1` when they are zero and `p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let MeanStd { mean, std } = mean_std(&diffs);
    let df = diffs.len() - 1;
    if std == 0.0 {
        let p_value = if mean == 0.0 { 1.0 } else { 0.0 };
        return Some(PairedTTest {
            mean_difference: mean,
            t: None,
            df,
            p_value,
        });
    }
    let t = mean / (std / (diffs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).ok()?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Some(PairedTTest {
        mean_difference: mean,
        t: Some(t),
        df,
        p_value,
    })
}
