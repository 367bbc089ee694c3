//! Hashed character n-gram features and a logistic model trained by SGD.
//! Shared by the validity filter and the clause-classifier ablation.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hashing::fnv1a;

/// Sorted `(index, value)` pairs.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub min_order: usize,
    pub max_order: usize,
    pub dim_bits: u32,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            min_order: 1,
            max_order: 3,
            dim_bits: 18,
        }
    }
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        1 << self.dim_bits
    }

    /// L2-normalized counts of hashed character n-grams. Each n-gram is
    /// hashed together with its order so equal strings of different orders
    /// never share a bucket by construction.
    pub fn features(&self, text: &str) -> SparseVec {
        let chars: Vec<char> = text.chars().collect();
        let mask = (self.dim() - 1) as u64;
        let mut idx: Vec<u32> = Vec::new();
        let mut buf = String::new();
        for order in self.min_order..=self.max_order {
            if order == 0 || chars.len() < order {
                continue;
            }
            for window in chars.windows(order) {
                buf.clear();
                buf.push(char::from(b'0' + (order % 10) as u8));
                buf.push('\u{1f}');
                buf.extend(window);
                idx.push((fnv1a(buf.as_bytes()) & mask) as u32);
            }
        }
        idx.sort_unstable();
        let mut out: SparseVec = Vec::new();
        for i in idx {
            match out.last_mut() {
                Some((last, count)) if *last == i => *count += 1.0,
                _ => out.push((i, 1.0)),
            }
        }
        let norm = out.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut out {
                *v /= norm;
            }
        }
        out
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights for `dim` features followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; dim + 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn margin(&self, x: &[(u32, f64)]) -> f64 {
        let bias = self.weights[self.dim()];
        x.iter().map(|&(i, v)| self.weights[i as usize] * v).sum::<f64>() + bias
    }

    pub fn probability(&self, x: &[(u32, f64)]) -> f64 {
        sigmoid(self.margin(x))
    }

    /// One shuffled pass of per-sample SGD on log loss with L2 decay on the
    /// touched weights. Returns the mean loss seen during the pass.
    pub fn sgd_epoch(&mut self, samples: &[(SparseVec, bool)], learning_rate: f64, l2: f64, rng: &mut ChaCha8Rng) -> f64 {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        let bias = self.dim();
        let mut loss = 0.0;
        for i in order {
            let (x, y) = &samples[i];
            let target = if *y { 1.0 } else { 0.0 };
            let p = self.probability(x);
            let p_clamped = p.clamp(1e-12, 1.0 - 1e-12);
            loss -= target * p_clamped.ln() + (1.0 - target) * (1.0 - p_clamped).ln();
            let grad = p - target;
            for &(j, v) in x {
                let w = &mut self.weights[j as usize];
                *w -= learning_rate * (grad * v + l2 * *w);
            }
            self.weights[bias] -= learning_rate * grad;
        }
        loss / samples.len().max(1) as f64
    }
}
