use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum KappaResult {
    Value(f64),
    /// Chance agreement is 1: every rating in the matrix is the same category.
    Undefined,
}

impl KappaResult {
    pub fn value(self) -> Option<f64> {
        match self {
            KappaResult::Value(v) => Some(v),
            KappaResult::Undefined => None,
        }
    }
}

/// Fleiss' kappa over an items × raters matrix of categorical ratings.
///
/// Sums are kept as integers and the final ratio is taken once, so perfect
/// agreement gives exactly 1.0.
pub fn fleiss_kappa<T: Ord>(matrix: &[Vec<T>]) -> Result<KappaResult> {
    let items = matrix.len();
    if items == 0 {
        return Err(Error::Empty("rating matrix"));
    }
    let raters = matrix[0].len();
    if raters < 2 {
        return Err(Error::Precondition("need at least two ratings per item".into()));
    }
    if let Some(i) = matrix.iter().position(|row| row.len() != raters) {
        return Err(Error::Precondition(format!(
            "item {i} has {} ratings, expected {raters}",
            matrix[i].len()
        )));
    }

    let mut column: BTreeMap<&T, i128> = BTreeMap::new();
    let mut agreement: i128 = 0; // Σ_i Σ_j n_ij²
    for row in matrix {
        let mut counts: BTreeMap<&T, i128> = BTreeMap::new();
        for r in row {
            *counts.entry(r).or_default() += 1;
            *column.entry(r).or_default() += 1;
        }
        agreement += counts.values().map(|c| c * c).sum::<i128>();
    }
    let n = raters as i128;
    let big_n = items as i128;
    // P̄ = a / d1, P̄e = b / d2
    let a = agreement - big_n * n;
    let d1 = big_n * n * (n - 1);
    let b: i128 = column.values().map(|c| c * c).sum();
    let d2 = (big_n * n) * (big_n * n);
    if b == d2 {
        return Ok(KappaResult::Undefined);
    }
    let numerator = a * d2 - b * d1;
    let denominator = d1 * (d2 - b);
    Ok(KappaResult::Value(numerator as f64 / denominator as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    /// Textbook definition, step by step, in exact rationals.
    fn oracle(matrix: &[Vec<u8>], categories: u8) -> Option<Ratio<i64>> {
        let big_n = matrix.len() as i64;
        let n = matrix[0].len() as i64;
        let count = |row: &Vec<u8>, j: u8| row.iter().filter(|&&r| r == j).count() as i64;
        let p_i: Vec<Ratio<i64>> = matrix
            .iter()
            .map(|row| {
                let s: i64 = (0..categories).map(|j| count(row, j) * (count(row, j) - 1)).sum();
                Ratio::new(s, n * (n - 1))
            })
            .collect();
        let p_bar = p_i.iter().sum::<Ratio<i64>>() / Ratio::from_integer(big_n);
        let p_e: Ratio<i64> = (0..categories)
            .map(|j| {
                let p_j = Ratio::new(matrix.iter().map(|row| count(row, j)).sum::<i64>(), big_n * n);
                p_j * p_j
            })
            .sum();
        if p_e == Ratio::from_integer(1) {
            return None;
        }
        Some((p_bar - p_e) / (Ratio::from_integer(1) - p_e))
    }

    #[test]
    fn unanimous_is_exactly_one() {
        let m = vec![vec!["valid"; 3], vec!["invalid"; 3], vec!["valid"; 3]];
        assert_eq!(fleiss_kappa(&m).unwrap(), KappaResult::Value(1.0));
    }

    #[test]
    fn two_items_three_raters() {
        let m = vec![vec![0u8, 0, 0], vec![0, 0, 1]];
        let k = fleiss_kappa(&m).unwrap().value().unwrap();
        assert!((k - (-0.2)).abs() < 1e-12, "{k}");
    }

    #[test]
    fn single_category_is_undefined() {
        let m = vec![vec![1u8, 1], vec![1, 1]];
        assert_eq!(fleiss_kappa(&m).unwrap(), KappaResult::Undefined);
    }

    #[test]
    fn malformed_matrices() {
        assert!(fleiss_kappa::<u8>(&[]).is_err());
        assert!(fleiss_kappa(&[vec![1u8]]).is_err());
        assert!(fleiss_kappa(&[vec![1u8, 0], vec![1]]).is_err());
    }

    #[test]
    fn matches_oracle_on_every_small_binary_matrix() {
        let mut checked = 0;
        for items in 1..=4usize {
            for raters in 2..=3usize {
                let cells = items * raters;
                for bits in 0u32..(1 << cells) {
                    let m: Vec<Vec<u8>> = (0..items)
                        .map(|i| (0..raters).map(|r| ((bits >> (i * raters + r)) & 1) as u8).collect())
                        .collect();
                    let got = fleiss_kappa(&m).unwrap();
                    match oracle(&m, 2) {
                        None => assert_eq!(got, KappaResult::Undefined, "{m:?}"),
                        Some(want) => {
                            let want = *want.numer() as f64 / *want.denom() as f64;
                            let got = got.value().unwrap();
                            assert!((got - want).abs() < 1e-12, "{m:?}: {got} vs {want}");
                            let unanimous = m.iter().all(|row| row.iter().all(|&r| r == row[0]));
                            assert_eq!(got == 1.0, unanimous, "{m:?}");
                        }
                    }
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, (1..=4).map(|i| (1 << (2 * i)) + (1 << (3 * i))).sum::<usize>());
    }
}
