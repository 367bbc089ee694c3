//! Evaluation arithmetic: sample precision, inter-annotator agreement, and
//! emotion-cause-extraction scoring with an indicator-feature ablation.

mod ablation;
mod ece;
mod kappa;

pub use ablation::{planted_corpus, run_ece_ablation, AblationConfig, AblationReport, PlantedCorpusSpec};
pub use ece::{
    clause_spans, ece_metrics, f_score, indicator_feature, parse_ece_corpus, parse_ece_instance, read_ece_corpus,
    read_gold, segment_clauses, segment_clauses_with, write_gold, ClauseVector, EceInstance, IndicatorMatcher,
    MetricsReport, DEFAULT_DELIMITERS,
};
pub use kappa::{fleiss_kappa, KappaResult};

use crate::error::{Error, Result};

/// `valid / (valid + invalid)`.
pub fn sample_precision(valid: u64, invalid: u64) -> Result<f64> {
    let total = valid
        .checked_add(invalid)
        .ok_or_else(|| Error::Precondition("count overflow".into()))?;
    if total == 0 {
        return Err(Error::Empty("annotated sample"));
    }
    Ok(valid as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_from_counts() {
        assert_eq!(sample_precision(4800, 200).unwrap(), 0.96);
        assert_eq!(sample_precision(0, 5).unwrap(), 0.0);
        assert_eq!(sample_precision(7, 0).unwrap(), 1.0);
        assert!(sample_precision(0, 0).is_err());
    }
}
