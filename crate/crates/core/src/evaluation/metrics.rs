use std::collections::HashMap;

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean of `(a − b)²`.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mse", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.len().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / n)
}

/// Predicted cluster labels against ground-truth instance ids (0 = background).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationPair {
    pub predicted: Vec<u32>,
    pub truth: Vec<u32>,
}

impl SegmentationPair {
    /// Drops pixels whose ground truth is background.
    pub fn foreground(&self) -> (Vec<u32>, Vec<u32>) {
        self.truth
            .iter()
            .zip(&self.predicted)
            .filter(|(t, _)| **t != 0)
            .map(|(t, p)| (*p, *t))
            .unzip()
    }
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index of two labelings of the same items, from the
/// contingency table. `None` for zero items. Two single-cluster labelings
/// (or any case where the index cannot vary) score 1.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    if a.is_empty() {
        return None;
    }
    let mut table: HashMap<(u32, u32), u64> = HashMap::new();
    let mut rows: HashMap<u32, u64> = HashMap::new();
    let mut cols: HashMap<u32, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| pairs(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| pairs(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| pairs(n)).sum();
    let total = pairs(a.len() as u64);
    if total == 0.0 {
        return Some(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return Some(1.0);
    }
    Some((index - expected) / (max - expected))
}

/// ARI over the foreground pixels of `pair`; `None` when no pixel is foreground.
pub fn ari(pair: &SegmentationPair) -> Option<f64> {
    let (pred, truth) = pair.foreground();
    adjusted_rand_index(&pred, &truth)
}

/// Hard labels: argmax over the slot axis of alphas `[K, P]`.
pub fn argmax_labels<T: Real>(alpha: &[T], slots: usize) -> Vec<u32> {
    let px = alpha.len() / slots.max(1);
    (0..px)
        .map(|i| {
            (0..slots)
                .fold((0usize, T::neg_infinity()), |best, k| {
                    let v = alpha[k * px + i];
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0 as u32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, -1.0]).unwrap();
        let z = Tensor::<f64>::zeros(&[2]);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert_eq!(mse(&z, &x).unwrap(), 1.0);
        assert_eq!(mse(&x.map(|v| v + 1.0), &x).unwrap(), 1.0);
        assert!(mse(&x, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[1, 1, 1, 2]), Some(0.0));
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 2], &[0, 0, 1, 2]), Some(1.0));
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 2], &[5, 5, 3, 9]), Some(1.0));
        assert_eq!(adjusted_rand_index(&[3, 3, 3], &[1, 1, 1]), Some(1.0));
        assert_eq!(adjusted_rand_index(&[], &[]), None);
    }

    #[test]
    fn background_is_excluded() {
        let pair = SegmentationPair {
            predicted: vec![0, 0, 1, 1, 2],
            truth: vec![0, 0, 1, 1, 2],
        };
        assert_eq!(pair.foreground().0.len(), 3);
        assert_eq!(ari(&pair), Some(1.0));
        let empty = SegmentationPair {
            predicted: vec![1, 2],
            truth: vec![0, 0],
        };
        assert_eq!(ari(&empty), None);
    }

    #[test]
    fn argmax_over_slots() {
        // two slots, three pixels
        let alpha = [0.9, 0.2, 0.5, 0.1, 0.8, 0.5];
        assert_eq!(argmax_labels(&alpha, 2), vec![0, 1, 0]);
    }
}
