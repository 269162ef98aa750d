use std::ops::Add;

use crate::detector::DetectionVerdict;
use crate::error::{Error, Result};

/// Confusion counts with drifting (unknown-family) samples as the positive
/// class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DriftCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl DriftCounts {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn metrics(self) -> DriftMetrics {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.true_positive, self.true_positive + self.false_positive);
        let recall = ratio(self.true_positive, self.true_positive + self.false_negative);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        DriftMetrics {
            counts: self,
            precision,
            recall,
            f1,
        }
    }
}

impl Add for DriftCounts {
    type Output = DriftCounts;

    fn add(self, o: DriftCounts) -> DriftCounts {
        DriftCounts {
            true_positive: self.true_positive + o.true_positive,
            false_positive: self.false_positive + o.false_positive,
            true_negative: self.true_negative + o.true_negative,
            false_negative: self.false_negative + o.false_negative,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DriftMetrics {
    pub counts: DriftCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DriftMetrics {
    /// Metrics of the summed confusion counts.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a DriftMetrics>) -> DriftMetrics {
        parts
            .into_iter()
            .fold(DriftCounts::default(), |acc, m| acc + m.counts)
            .metrics()
    }
}

/// Scores DRIFT verdicts against `is_unknown` ground truth.
pub fn score_drift(verdicts: &[DetectionVerdict], is_unknown: &[bool]) -> Result<DriftMetrics> {
    if verdicts.len() != is_unknown.len() {
        return Err(Error::shape("drift truth labels", verdicts.len(), is_unknown.len()));
    }
    let mut c = DriftCounts::default();
    for (v, &unknown) in verdicts.iter().zip(is_unknown) {
        match (v.is_drift(), unknown) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_positive += 1,
            (false, false) => c.true_negative += 1,
            (false, true) => c.false_negative += 1,
        }
    }
    Ok(c.metrics())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Verdict;

    fn verdict(drift: bool) -> DetectionVerdict {
        DetectionVerdict {
            verdict: if drift { Verdict::Drift } else { Verdict::Known("a".into()) },
            nearest_family: "a".into(),
            nearest_cluster_id: 0,
            distance: 1.0,
            threshold_used: 1.0,
        }
    }

    #[test]
    fn perfect_detector() {
        let v: Vec<_> = [true, true, false].into_iter().map(verdict).collect();
        let m = score_drift(&v, &[true, true, false]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_computed_f1() {
        let m = DriftCounts {
            true_positive: 8,
            false_positive: 2,
            true_negative: 5,
            false_negative: 2,
        }
        .metrics();
        assert!((m.precision - 0.8).abs() < 1e-12);
        assert!((m.recall - 0.8).abs() < 1e-12);
        assert!((m.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn no_drift_flags_gives_zero() {
        let v: Vec<_> = (0..4).map(|_| verdict(false)).collect();
        let m = score_drift(&v, &[true, true, false, false]).unwrap();
        assert_eq!((m.recall, m.f1, m.counts.total()), (0.0, 0.0, 4));
        assert!(score_drift(&v, &[true]).is_err());
    }

    #[test]
    fn pooling_sums_counts() {
        let a = DriftCounts { true_positive: 3, false_positive: 1, true_negative: 4, false_negative: 0 }.metrics();
        let b = DriftCounts { true_positive: 1, false_positive: 0, true_negative: 2, false_negative: 5 }.metrics();
        let p = DriftMetrics::pooled([&a, &b]);
        assert_eq!(p.counts, DriftCounts { true_positive: 4, false_positive: 1, true_negative: 6, false_negative: 5 });
        assert_eq!(DriftMetrics::pooled([]), DriftMetrics::default());
    }
}
