//! Clause-level cause classification with and without the indicator bit.
//!
//! A logistic model over hashed character n-grams is trained under k-fold
//! cross-validation. With the feature on, one extra dimension carries the
//! clause's indicator bit. Each test instance gets every candidate clause
//! scoring at least 0.5, or its single best clause when none does.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ece::{ece_metrics, indicator_feature, EceInstance, IndicatorMatcher, MetricsReport};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::linear::{FeatureSpec, LogisticModel, SparseVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub folds: usize,
    pub seed: u64,
    pub features: FeatureSpec,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub include_keyword_clause: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            folds: 10,
            seed: 0,
            features: FeatureSpec {
                dim_bits: 16,
                ..FeatureSpec::default()
            },
            epochs: 30,
            learning_rate: 0.5,
            l2: 1e-6,
            include_keyword_clause: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub with_feature: bool,
    pub folds_used: usize,
    /// Means over folds.
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub per_fold: Vec<MetricsReport>,
    pub warning: Option<String>,
}

fn candidates(inst: &EceInstance, include_keyword: bool) -> impl Iterator<Item = usize> + '_ {
    (0..inst.clauses.len()).filter(move |&c| include_keyword || c != inst.keyword_clause)
}

fn clause_features(clause: &str, spec: &FeatureSpec, matcher: Option<&IndicatorMatcher>) -> SparseVec {
    let mut x = spec.features(clause);
    if let Some(m) = matcher {
        if indicator_feature(clause, m) == 1 {
            x.push((spec.dim() as u32, 1.0));
        }
    }
    x
}

pub fn run_ece_ablation(
    corpus: &[EceInstance],
    matcher: &IndicatorMatcher,
    with_feature: bool,
    config: &AblationConfig,
) -> Result<AblationReport> {
    if corpus.len() < 2 {
        return Err(Error::Precondition(format!(
            "cross-validation needs at least 2 instances, have {}",
            corpus.len()
        )));
    }
    if config.folds < 2 {
        return Err(Error::Precondition("at least 2 folds".into()));
    }
    let (folds, warning) = if corpus.len() < config.folds {
        let w = format!(
            "{} instances is too few for {} folds; using leave-one-out",
            corpus.len(),
            config.folds
        );
        tracing::warn!("{w}");
        (corpus.len(), Some(w))
    } else {
        (config.folds, None)
    };

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut fold_of = vec![0usize; corpus.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let spec = config.features;
    let feature_matcher = with_feature.then_some(matcher);
    let dim = spec.dim() + usize::from(with_feature);
    let encoded: Vec<Vec<(usize, SparseVec)>> = corpus
        .iter()
        .map(|inst| {
            candidates(inst, config.include_keyword_clause)
                .map(|c| (c, clause_features(&inst.clauses[c], &spec, feature_matcher)))
                .collect()
        })
        .collect();

    let per_fold: Vec<MetricsReport> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<(SparseVec, bool)> = (0..corpus.len())
                .filter(|&i| fold_of[i] != fold)
                .flat_map(|i| {
                    encoded[i]
                        .iter()
                        .map(move |(c, x)| (x.clone(), corpus[i].cause_clauses.contains(c)))
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, fold as u64));
            let mut model = LogisticModel::zeros(dim);
            for _ in 0..config.epochs {
                model.sgd_epoch(&train, config.learning_rate, config.l2, &mut rng);
            }
            let test: Vec<usize> = (0..corpus.len()).filter(|&i| fold_of[i] == fold).collect();
            let mut proposed = BTreeSet::new();
            for (local, &i) in test.iter().enumerate() {
                let scored: Vec<(usize, f64)> = encoded[i].iter().map(|(c, x)| (*c, model.probability(x))).collect();
                let mut any = false;
                for &(c, p) in &scored {
                    if p >= 0.5 {
                        proposed.insert((local, c));
                        any = true;
                    }
                }
                if !any {
                    if let Some(&(c, _)) = scored.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0))) {
                        proposed.insert((local, c));
                    }
                }
            }
            let gold: Vec<EceInstance> = test.iter().map(|&i| corpus[i].clone()).collect();
            ece_metrics(&proposed, &gold)
        })
        .collect::<Result<_>>()?;

    let mean = |f: fn(&MetricsReport) -> f64| per_fold.iter().map(f).sum::<f64>() / folds as f64;
    Ok(AblationReport {
        with_feature,
        folds_used: folds,
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f_score: mean(|m| m.f_score),
        per_fold,
        warning,
    })
}

/// Parameters for a synthetic corpus in which indicators are planted into
/// clauses at controlled rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedCorpusSpec {
    pub instances: usize,
    pub seed: u64,
    /// Probability that a cause clause carries an indicator.
    pub cause_rate: f64,
    /// Probability that any other clause carries one.
    pub other_rate: f64,
}

impl Default for PlantedCorpusSpec {
    fn default() -> Self {
        PlantedCorpusSpec {
            instances: 100,
            seed: 0,
            cause_rate: 1.0,
            other_rate: 0.0,
        }
    }
}

const FILLER: &str = "天地山水风云花草树林江河湖海春夏秋冬东西南北早晚明暗长短远近新旧城乡街巷门窗桌椅书画茶酒米面";
const KEYWORDS: [&str; 6] = ["怨恨", "高兴", "难过", "愤怒", "害怕", "欣慰"];

/// Corpus text in the inline-markup format, one record per blank-line block.
pub fn planted_corpus(spec: &PlantedCorpusSpec, indicators: &[String]) -> Result<String> {
    if indicators.is_empty() {
        return Err(Error::Empty("indicator list"));
    }
    let matcher = IndicatorMatcher::new(indicators)?;
    let pool: Vec<char> = FILLER
        .chars()
        .filter(|c| !matcher.contains_indicator(c.encode_utf8(&mut [0; 4])))
        .collect();
    if pool.len() < 8 {
        return Err(Error::Precondition("indicator list covers the filler alphabet".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let filler = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> String {
        loop {
            let len = rng.random_range(lo..=hi);
            let s: String = (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect();
            if !matcher.contains_indicator(&s) {
                return s;
            }
        }
    };
    let mut records = Vec::with_capacity(spec.instances);
    for _ in 0..spec.instances {
        let n = rng.random_range(4..=7usize);
        let keyword_clause = rng.random_range(0..n);
        let cause_clause = loop {
            let c = rng.random_range(0..n);
            if c != keyword_clause {
                break c;
            }
        };
        let mut clauses = Vec::with_capacity(n);
        for c in 0..n {
            let rate = if c == cause_clause { spec.cause_rate } else { spec.other_rate };
            let keyword = (c == keyword_clause).then(|| KEYWORDS[rng.random_range(0..KEYWORDS.len())]);
            let planted = keyword.is_none() && rng.random_bool(rate.clamp(0.0, 1.0));
            let middle = if planted { indicators[rng.random_range(0..indicators.len())].as_str() } else { keyword.unwrap_or("") };
            let (head, tail) = loop {
                let head = filler(&mut rng, 2, 5);
                let tail = filler(&mut rng, 1, 4);
                // fillers must not form an indicator across the seams
                if planted || !matcher.contains_indicator(&format!("{head}{middle}{tail}")) {
                    break (head, tail);
                }
            };
            let body = match keyword {
                Some(kw) => format!("{head}<keyword>{kw}</keyword>{tail}"),
                None => format!("{head}{middle}{tail}"),
            };
            clauses.push(if c == cause_clause { format!("<cause>{body}</cause>") } else { body });
        }
        records.push(format!("{}。", clauses.join("，")));
    }
    Ok(records.join("\n\n") + "\n")
}
