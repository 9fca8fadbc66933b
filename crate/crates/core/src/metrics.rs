//! Entropy, expected calibration error, accuracy and seed aggregation.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least one value")]
    Empty,
    #[error("bin count must be >= 1")]
    NoBins,
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

/// Shannon entropy in bits, with `0 · log 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum();
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean_entropy: f64,
}

impl EntropyHistogram {
    /// Two-column CSV `bin_left_edge,count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left_edge", "count"])?;
        for (edge, count) in self.bin_edges.iter().zip(&self.counts) {
            w.write_record([edge.to_string(), count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the equal-width bin over `[lo, hi]` holding `x`. Bins are
/// left-closed; the last one is closed on both sides. Membership is decided
/// against the values produced by [`bin_edge`].
fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let edge = |m: usize| bin_edge(lo, hi, m, bins);
    let mut m = (((x - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    while m > 0 && x < edge(m) {
        m -= 1;
    }
    while m + 1 < bins && x >= edge(m + 1) {
        m += 1;
    }
    m
}

/// Left edge of bin `m`; on `[0, 1]` this is exactly the rounded `m / bins`.
fn bin_edge(lo: f64, hi: f64, m: usize, bins: usize) -> f64 {
    lo + (hi - lo) * (m as f64 / bins as f64)
}

/// Entropy histogram with equal-width bins over `[0, log2 C]`.
pub fn entropy_histogram<P: AsRef<[f64]>>(
    probs: &[P],
    classes: usize,
    bins: usize,
) -> Result<EntropyHistogram, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::NoBins);
    }
    let top = (classes as f64).log2();
    let bin_edges: Vec<f64> = (0..=bins).map(|m| bin_edge(0.0, top, m, bins)).collect();
    let mut counts = vec![0; bins];
    let mut total = 0.0;
    for p in probs {
        let h = shannon_entropy(p.as_ref()).min(top);
        total += h;
        counts[bin_index(h, 0.0, top, bins)] += 1;
    }
    let mean_entropy = if probs.is_empty() {
        0.0
    } else {
        total / probs.len() as f64
    };
    Ok(EntropyHistogram {
        bin_edges,
        counts,
        mean_entropy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EceBin {
    pub count: usize,
    /// Fraction correct in the bin (0 when empty).
    pub accuracy: f64,
    /// Mean confidence in the bin (0 when empty).
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceResult {
    pub bins: usize,
    pub per_bin: Vec<EceBin>,
    pub ece: f64,
}

impl EceResult {
    /// `Σ (|B_m| / n) · |o_m − e_m|` from the stored bins.
    pub fn recompute(&self) -> f64 {
        let n: usize = self.per_bin.iter().map(|b| b.count).sum();
        if n == 0 {
            return 0.0;
        }
        self.per_bin
            .iter()
            .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs())
            .sum()
    }
}

/// Neumaier summation; keeps bin means like (0.9 + 0.8 + 0.7 + 0.6) / 4 exact.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Expected calibration error over `bins` equal-width confidence bins.
pub fn expected_calibration_error(
    confidences: &[f64],
    correct: &[bool],
    bins: usize,
) -> Result<EceResult, MetricsError> {
    if confidences.len() != correct.len() {
        return Err(MetricsError::LengthMismatch {
            left: confidences.len(),
            right: correct.len(),
        });
    }
    if confidences.is_empty() {
        return Err(MetricsError::Empty);
    }
    if bins == 0 {
        return Err(MetricsError::NoBins);
    }
    if let Some(&bad) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(MetricsError::Confidence(bad));
    }
    let mut hits = vec![0usize; bins];
    let mut conf_sum = vec![CompensatedSum::default(); bins];
    let mut counts = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let m = bin_index(c, 0.0, 1.0, bins);
        counts[m] += 1;
        conf_sum[m].add(c);
        hits[m] += usize::from(ok);
    }
    let per_bin: Vec<EceBin> = (0..bins)
        .map(|m| match counts[m] {
            0 => EceBin {
                count: 0,
                accuracy: 0.0,
                confidence: 0.0,
            },
            n => EceBin {
                count: n,
                accuracy: hits[m] as f64 / n as f64,
                confidence: conf_sum[m].value() / n as f64,
            },
        })
        .collect();
    let mut result = EceResult {
        bins,
        per_bin,
        ece: 0.0,
    };
    result.ece = result.recompute();
    Ok(result)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_examples() {
        assert_eq!(shannon_entropy(&[0.25; 4]), 2.0);
        assert_eq!(shannon_entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(shannon_entropy(&[0.5, 0.25, 0.25]), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn histogram_examples() {
        let onehot = vec![vec![1.0, 0.0]; 3];
        let h = entropy_histogram(&onehot, 2, 4).unwrap();
        assert_eq!(h.counts, vec![3, 0, 0, 0]);
        assert_eq!(h.mean_entropy, 0.0);

        let uniform = vec![vec![1.0 / 3.0; 3]; 2];
        let h = entropy_histogram(&uniform, 3, 5).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0, 0, 2]);
        assert_abs_diff_eq!(h.mean_entropy, 3f64.log2(), epsilon = 1e-12);

        let mixed = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let h = entropy_histogram(&mixed, 2, 2).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
        assert_eq!(h.mean_entropy, 0.5);
        assert_eq!(h.bin_edges, vec![0.0, 0.5, 1.0]);

        let empty: Vec<Vec<f64>> = Vec::new();
        let h = entropy_histogram(&empty, 2, 3).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0]);
        assert!(entropy_histogram(&empty, 2, 0).is_err());
    }

    #[test]
    fn histogram_csv() {
        let h = entropy_histogram(&[vec![0.5, 0.5]], 2, 2).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bin_left_edge,count\n0,0\n0.5,1\n");
    }

    #[test]
    fn ece_examples() {
        let r = expected_calibration_error(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, true], 1)
            .unwrap();
        assert_abs_diff_eq!(r.per_bin[0].accuracy, 0.75);
        assert_eq!(r.per_bin[0].confidence, 0.75);
        assert_eq!(r.ece, 0.0);

        let half = [true, false, true, false];
        let r = expected_calibration_error(&[1.0; 4], &half, 10).unwrap();
        assert_eq!(r.per_bin[9].count, 4);
        assert_eq!(r.ece, 0.5);

        let r = expected_calibration_error(&[1.0; 3], &[true; 3], 10).unwrap();
        assert_eq!(r.ece, 0.0);
    }

    #[test]
    fn ece_errors() {
        assert!(matches!(
            expected_calibration_error(&[0.5], &[true, false], 10),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(expected_calibration_error(&[], &[], 10).is_err());
        assert!(expected_calibration_error(&[1.5], &[true], 10).is_err());
        assert!(expected_calibration_error(&[0.5], &[true], 0).is_err());
    }

    #[test]
    fn bin_edges_are_left_closed() {
        assert_eq!(bin_index(0.0, 0.0, 1.0, 10), 0);
        assert_eq!(bin_index(0.1, 0.0, 1.0, 10), 1);
        assert_eq!(bin_index(0.3, 0.0, 1.0, 10), 3);
        assert_eq!(bin_index(0.7, 0.0, 1.0, 10), 7);
        assert_eq!(bin_index(1.0, 0.0, 1.0, 10), 9);
        for m in 0..10 {
            assert_eq!(bin_index(m as f64 / 10.0, 0.0, 1.0, 10), m);
            assert_eq!(bin_index(m as f64 / 10.0 - 1e-12, 0.0, 1.0, 10), m.saturating_sub(1));
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 1, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[64.5]).unwrap(), (64.5, 0.0));
        assert_eq!(mean_std(&[1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
        assert_eq!(mean_std(&[0.0, 1.0]).unwrap(), (0.5, 0.5));
        assert!(mean_std(&[]).is_err());
    }
}
