//! Change-class evaluation metrics built on pixel confusion counts.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pixel confusion counts for the binary change class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fnn: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    /// Merges counts from another tile/scene (micro-averaging).
    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fnn += other.fnn;
        self.tn += other.tn;
    }

    /// `2TP / (2TP + FP + FN)`; an empty problem (no positives anywhere,
    /// none predicted) scores 1.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 && self.fp == 0 && self.fnn == 0 {
            return 1.0;
        }
        2.0 * self.tp as f64 / (2.0 * self.tp as f64 + self.fp as f64 + self.fnn as f64)
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            return 1.0;
        }
        self.tp as f64 / (self.tp + self.fp) as f64
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fnn == 0 {
            return 1.0;
        }
        self.tp as f64 / (self.tp + self.fnn) as f64
    }
}

/// Binarizes probabilities at `threshold` and counts against the mask.
pub fn confusion<T: Scalar>(
    probs: &Tensor<T>,
    mask: &Tensor<T>,
    threshold: f64,
) -> Result<ConfusionCounts> {
    if probs.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: probs.shape().to_vec(),
            rhs: mask.shape().to_vec(),
        });
    }
    if !mask.data().iter().all(|&v| v == T::ZERO || v == T::ONE) {
        return Err(Error::NonBinaryMask);
    }
    let thr = T::from_f64(threshold);
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.data().iter().zip(mask.data()) {
        let pred = p > thr;
        let actual = y == T::ONE;
        match (pred, actual) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fnn += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// F1 of the change class after thresholding at `threshold` (default 0.5).
pub fn f1_change<T: Scalar>(probs: &Tensor<T>, mask: &Tensor<T>, threshold: f64) -> Result<f64> {
    Ok(confusion(probs, mask, threshold)?.f1())
}

/// Mean and (population) standard deviation of a sample.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_prediction_scores_one() {
        let y = Tensor::new(vec![6], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = y.map(|v| if v == 1.0 { 0.9 } else { 0.1 });
        assert_eq!(f1_change(&p, &y, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn all_negative_prediction_scores_zero() {
        let y = Tensor::new(vec![4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let p = Tensor::full(&[4], 0.1);
        assert_eq!(f1_change(&p, &y, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn hand_counted_case() {
        // TP=3, FP=1, FN=2 -> F1 = 6/9
        let c = ConfusionCounts {
            tp: 3,
            fp: 1,
            fnn: 2,
            tn: 10,
        };
        assert!((c.f1() - 2.0 * 3.0 / 9.0).abs() < 1e-12);
        assert!((c.f1() - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn empty_problem_scores_one() {
        let y = Tensor::zeros(&[8]);
        let p = Tensor::full(&[8], 0.2);
        assert_eq!(f1_change(&p, &y, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn monotone_transform_with_rederived_threshold_is_invariant() {
        use crate::rng::Rng;
        let mut rng = Rng::seed_from_u64(3);
        let p = Tensor::new(vec![50], (0..50).map(|_| rng.uniform()).collect()).unwrap();
        let y = Tensor::new(
            vec![50],
            (0..50).map(|_| if rng.chance(0.5) { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let p2 = p.map(|v| v * v);
        // p > 0.5 iff p^2 > 0.25
        let a = f1_change(&p, &y, 0.5).unwrap();
        let b = f1_change(&p2, &y, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merge_is_additive() {
        let mut a = ConfusionCounts {
            tp: 1,
            fp: 2,
            fnn: 3,
            tn: 4,
        };
        a.merge(&a.clone());
        assert_eq!(
            a,
            ConfusionCounts {
                tp: 2,
                fp: 4,
                fnn: 6,
                tn: 8
            }
        );
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((m - 5.0).abs() < 1e-12);
        assert!((s - 2.0).abs() < 1e-12);
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[3.5]), (3.5, 0.0));
    }
}
