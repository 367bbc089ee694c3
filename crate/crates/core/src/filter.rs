//! Validity filtering of generated events.
//!
//! Covers the annotation round trip (sampling, TSV, majority merge), the
//! stratified 80/10/10 split, the in-repo hashed n-gram logistic filter,
//! precision-recall curves, the operating-threshold policy and the final
//! accept/reject partition.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EmotionalEvent, EventKind, EventStatus};
use crate::hashing::{derive_seed, fnv1a};
use crate::linear::{FeatureSpec, LogisticModel, SparseVec};
use crate::text::nfc;

pub const DEFAULT_SAMPLES_PER_INDICATOR: usize = 10;
pub const DEFAULT_RECALL_FLOOR: f64 = 0.80;
pub const ANNOTATION_HEADER: &str = "event\tlabel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Valid,
    Invalid,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Valid => "valid",
            Label::Invalid => "invalid",
        }
    }

    pub fn is_valid(self) -> bool {
        self == Label::Valid
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Label::Valid),
            "invalid" => Ok(Label::Invalid),
            other => Err(Error::UnknownToken {
                kind: "label",
                token: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub event_surface: String,
    pub label: Label,
    #[serde(default)]
    pub annotator_ids: Vec<String>,
}

impl LabeledSample {
    pub fn new(event_surface: &str, label: Label) -> Self {
        LabeledSample {
            event_surface: event_surface.to_string(),
            label,
            annotator_ids: Vec::new(),
        }
    }
}

/// Up to `k` events per indicator, drawn without replacement. Implicit events
/// never pass through the filter and are not sampled.
///
/// Each indicator's draw uses its own RNG stream derived from `seed` and the
/// indicator, so adding an indicator never changes another one's sample.
/// Output is sorted by (indicator, surface).
pub fn sample_for_annotation(events: &[EmotionalEvent], k: usize, seed: u64) -> Result<Vec<String>> {
    if events.is_empty() {
        return Err(Error::Empty("raw event set"));
    }
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for event in events {
        if let Some(indicator) = event.indicator_surface.as_deref() {
            groups.entry(indicator).or_default().push(&event.surface);
        }
    }
    if groups.is_empty() {
        return Err(Error::Empty("indicator-derived events"));
    }
    let mut out = Vec::new();
    for (indicator, surfaces) in groups {
        let mut picked: Vec<&str> = if surfaces.len() <= k {
            surfaces
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, fnv1a(indicator.as_bytes())));
            rand::seq::index::sample(&mut rng, surfaces.len(), k)
                .iter()
                .map(|i| surfaces[i])
                .collect()
        };
        picked.sort_unstable();
        out.extend(picked.into_iter().map(String::from));
    }
    Ok(out)
}

/// Annotation sheet with an empty label column.
pub fn annotation_sheet(surfaces: &[String]) -> String {
    let mut out = format!("{ANNOTATION_HEADER}\n");
    for s in surfaces {
        out.push_str(s);
        out.push_str("\t\n");
    }
    out
}

/// Rows of a (possibly partially) completed annotation sheet.
pub fn parse_annotation_sheet(text: &str, file: &str) -> Result<Vec<(String, Option<Label>)>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || (i == 0 && line.trim_end() == ANNOTATION_HEADER) {
            continue;
        }
        let (event, label) = line.split_once('\t').unwrap_or((line, ""));
        let event = nfc(event.trim());
        if event.is_empty() {
            return Err(Error::malformed(file, i + 1, "empty event"));
        }
        let label = match label.trim() {
            "" => None,
            other => Some(
                other
                    .parse()
                    .map_err(|e: Error| Error::malformed(file, i + 1, e.to_string()))?,
            ),
        };
        rows.push((event, label));
    }
    Ok(rows)
}

pub fn labeled_samples(rows: &[(String, Option<Label>)]) -> Vec<LabeledSample> {
    rows.iter()
        .filter_map(|(e, l)| l.map(|l| LabeledSample::new(e, l)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedAnnotations {
    pub samples: Vec<LabeledSample>,
    /// One row per sample, one column per annotator, in input order.
    pub ratings: Vec<Vec<Label>>,
}

/// Majority vote over several annotators' sheets. Only events every annotator
/// labeled are kept. A tie resolves to `invalid`.
pub fn merge_annotations(sheets: &[(String, Vec<(String, Option<Label>)>)]) -> Result<MergedAnnotations> {
    if sheets.len() < 2 {
        return Err(Error::Precondition("need at least two annotators".into()));
    }
    let lookups: Vec<BTreeMap<&str, Label>> = sheets
        .iter()
        .map(|(_, rows)| {
            rows.iter()
                .filter_map(|(e, l)| l.map(|l| (e.as_str(), l)))
                .collect()
        })
        .collect();
    let mut samples = Vec::new();
    let mut ratings = Vec::new();
    let mut seen = HashSet::new();
    for (event, _) in &sheets[0].1 {
        if !seen.insert(event.as_str()) {
            continue;
        }
        let row: Option<Vec<Label>> = lookups.iter().map(|m| m.get(event.as_str()).copied()).collect();
        let Some(row) = row else { continue };
        let valid = row.iter().filter(|l| l.is_valid()).count();
        let label = if 2 * valid > row.len() { Label::Valid } else { Label::Invalid };
        samples.push(LabeledSample {
            event_surface: event.clone(),
            label,
            annotator_ids: sheets.iter().map(|(id, _)| id.clone()).collect(),
        });
        ratings.push(row);
    }
    Ok(MergedAnnotations { samples, ratings })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Largest-remainder allocation of `total` slots across classes in
/// proportion to `counts`. Ties go to the earlier class.
fn allocate(total: usize, counts: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc: Vec<usize> = counts.iter().map(|&c| total * c / n).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((total * counts[i]) % n));
    let mut left = total - alloc.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        if alloc[i] < counts[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Stratified 80/10/10 split. Validation and test each get ⌊N/10⌋ samples,
/// train takes the remainder.
pub fn split(labeled: &[LabeledSample], seed: u64) -> Result<Split> {
    let n = labeled.len();
    if n < 10 {
        return Err(Error::Precondition(format!("need at least 10 labeled samples, have {n}")));
    }
    let mut by_label: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in labeled.iter().enumerate() {
        by_label[usize::from(!s.label.is_valid())].push(i);
    }
    for (label, idx) in [Label::Valid, Label::Invalid].iter().zip(&by_label) {
        if !idx.is_empty() && idx.len() < 3 {
            return Err(Error::Precondition(format!(
                "only {} `{label}` samples; need at least 3 to stratify",
                idx.len()
            )));
        }
    }
    let n_val = n / 10;
    let n_test = n / 10;
    let counts = [by_label[0].len(), by_label[1].len()];
    let val_alloc = allocate(n_val, &counts);
    let remaining = [counts[0] - val_alloc[0], counts[1] - val_alloc[1]];
    let test_alloc = allocate(n_test, &remaining);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (c, idx) in by_label.iter_mut().enumerate() {
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        val_idx.extend_from_slice(&idx[..val_alloc[c]]);
        test_idx.extend_from_slice(&idx[val_alloc[c]..val_alloc[c] + test_alloc[c]]);
        train_idx.extend_from_slice(&idx[val_alloc[c] + test_alloc[c]..]);
    }
    let collect = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        idx.into_iter().map(|i| labeled[i].clone()).collect::<Vec<_>>()
    };
    Ok(Split {
        train: collect(train_idx),
        validation: collect(val_idx),
        test: collect(test_idx),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Points ordered by strictly increasing threshold.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PrPoint>,
}

impl PRCurve {
    /// Precision averaged over recall steps, walking thresholds from high to low.
    pub fn average_precision(&self) -> f64 {
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for p in self.points.iter().rev() {
            ap += (p.recall - prev_recall) * p.precision;
            prev_recall = p.recall;
        }
        ap
    }

    pub fn is_well_formed(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[0].threshold < w[1].threshold && w[0].recall >= w[1].recall)
    }
}

/// PR curve over `(score, is_valid)` pairs, one point per distinct score; an
/// event counts as predicted-valid when its score is at least the threshold.
pub fn pr_curve_from_scores(scored: &[(f64, bool)]) -> Result<PRCurve> {
    let positives = scored.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == scored.len() {
        return Err(Error::Precondition("evaluation set needs both labels".into()));
    }
    if scored.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Precondition("non-finite score".into()));
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    points.reverse();
    let curve = PRCurve { points };
    debug_assert!(curve.is_well_formed());
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// False when no point reached the recall floor and the max-recall point was used.
    pub meets_floor: bool,
}

/// Highest-precision point with recall ≥ `recall_floor`; ties prefer higher
/// recall, then the lower threshold. Falls back to the max-recall point.
pub fn select_threshold(curve: &PRCurve, recall_floor: f64) -> Result<ThresholdChoice> {
    if curve.points.is_empty() {
        return Err(Error::Empty("precision-recall curve"));
    }
    let better = |a: &PrPoint, b: &PrPoint| {
        // true if `a` beats `b`
        (a.precision, a.recall, -a.threshold) > (b.precision, b.recall, -b.threshold)
    };
    let mut best: Option<&PrPoint> = None;
    for p in curve.points.iter().filter(|p| p.recall >= recall_floor) {
        if best.is_none_or(|b| better(p, b)) {
            best = Some(p);
        }
    }
    if let Some(p) = best {
        return Ok(ThresholdChoice {
            threshold: p.threshold,
            precision: p.precision,
            recall: p.recall,
            meets_floor: true,
        });
    }
    let p = curve
        .points
        .iter()
        .max_by(|a, b| {
            (a.recall, a.precision, -a.threshold)
                .partial_cmp(&(b.recall, b.precision, -b.threshold))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("non-empty");
    tracing::warn!("no point reaches recall {recall_floor}; using max-recall threshold {}", p.threshold);
    Ok(ThresholdChoice {
        threshold: p.threshold,
        precision: p.precision,
        recall: p.recall,
        meets_floor: false,
    })
}

/// Anything that maps event texts to validity scores in [0,1].
pub trait Scorer {
    fn score_texts(&self, texts: &[String]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub features: FeatureSpec,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay: f64,
    pub l2: f64,
    /// Epochs without validation-AP improvement before stopping.
    pub patience: usize,
    pub recall_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            features: FeatureSpec::default(),
            max_epochs: 40,
            learning_rate: 0.5,
            decay: 0.95,
            l2: 1e-6,
            patience: 6,
            recall_floor: DEFAULT_RECALL_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub config: TrainConfig,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub validation_average_precision: f64,
    pub validation_precision: f64,
    pub validation_recall: f64,
    pub threshold_meets_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FilterModelRepr", into = "FilterModelRepr")]
pub struct FilterModel {
    pub feature_spec: FeatureSpec,
    pub model: LogisticModel,
    pub threshold: f64,
    pub training_meta: Option<TrainingMeta>,
}

/// On-disk form: only non-zero weights are stored.
#[derive(Serialize, Deserialize)]
struct FilterModelRepr {
    feature_spec: FeatureSpec,
    dim: usize,
    bias: f64,
    weights: Vec<(u32, f64)>,
    threshold: f64,
    training_meta: Option<TrainingMeta>,
}

impl From<FilterModel> for FilterModelRepr {
    fn from(m: FilterModel) -> Self {
        let dim = m.model.dim();
        FilterModelRepr {
            feature_spec: m.feature_spec,
            dim,
            bias: m.model.weights[dim],
            weights: m.model.weights[..dim]
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
            threshold: m.threshold,
            training_meta: m.training_meta,
        }
    }
}

impl TryFrom<FilterModelRepr> for FilterModel {
    type Error = String;

    fn try_from(r: FilterModelRepr) -> std::result::Result<Self, String> {
        if r.dim != r.feature_spec.dim() {
            return Err(format!("weight dimension {} does not match feature spec {}", r.dim, r.feature_spec.dim()));
        }
        if !(0.0..=1.0).contains(&r.threshold) {
            return Err(format!("threshold {} outside [0,1]", r.threshold));
        }
        let mut model = LogisticModel::zeros(r.dim);
        for (i, w) in r.weights {
            *model
                .weights
                .get_mut(i as usize)
                .filter(|_| (i as usize) < r.dim)
                .ok_or_else(|| format!("weight index {i} out of range"))? = w;
        }
        model.weights[r.dim] = r.bias;
        Ok(FilterModel {
            feature_spec: r.feature_spec,
            model,
            threshold: r.threshold,
            training_meta: r.training_meta,
        })
    }
}

impl FilterModel {
    pub fn score(&self, text: &str) -> f64 {
        self.model.probability(&self.feature_spec.features(text))
    }

    pub fn curve(&self, eval: &[LabeledSample]) -> Result<PRCurve> {
        pr_curve(self, eval)
    }
}

impl Scorer for FilterModel {
    fn score_texts(&self, texts: &[String]) -> Result<Vec<f64>> {
        Ok(texts.iter().map(|t| self.score(t)).collect())
    }
}

fn both_labels(samples: &[LabeledSample]) -> bool {
    samples.iter().any(|s| s.label.is_valid()) && samples.iter().any(|s| !s.label.is_valid())
}

/// Seeded SGD with per-epoch learning-rate decay and early stopping on
/// validation average precision. The operating threshold is picked on the
/// validation curve with [`select_threshold`].
pub fn train_filter(
    train: &[LabeledSample],
    validation: &[LabeledSample],
    config: &TrainConfig,
    seed: u64,
) -> Result<FilterModel> {
    if !both_labels(train) {
        return Err(Error::Training("training set needs both valid and invalid samples".into()));
    }
    if !both_labels(validation) {
        return Err(Error::Training("validation set needs both valid and invalid samples".into()));
    }
    let spec = config.features;
    let featurize = |s: &[LabeledSample]| -> Vec<(SparseVec, bool)> {
        s.iter()
            .map(|x| (spec.features(&x.event_surface), x.label.is_valid()))
            .collect()
    };
    let train_x = featurize(train);
    let val_x = featurize(validation);
    let val_ap = |m: &LogisticModel| -> Result<f64> {
        let scored: Vec<(f64, bool)> = val_x.iter().map(|(x, y)| (m.probability(x), *y)).collect();
        Ok(pr_curve_from_scores(&scored)?.average_precision())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LogisticModel::zeros(spec.dim());
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize);
    let mut epochs_run = 0;
    for epoch in 0..config.max_epochs {
        let lr = config.learning_rate * config.decay.powi(epoch as i32);
        let loss = model.sgd_epoch(&train_x, lr, config.l2, &mut rng);
        epochs_run = epoch + 1;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
        }
        let ap = val_ap(&model)?;
        if ap > best.1 + 1e-12 {
            best = (model.clone(), ap, epoch);
        } else if epoch - best.2 >= config.patience {
            break;
        }
    }
    let (model, ap, best_epoch) = best;
    let mut filter = FilterModel {
        feature_spec: spec,
        model,
        threshold: 0.5,
        training_meta: None,
    };
    let curve = pr_curve(&filter, validation)?;
    let choice = select_threshold(&curve, config.recall_floor)?;
    filter.threshold = choice.threshold;
    filter.training_meta = Some(TrainingMeta {
        seed,
        config: *config,
        epochs_run,
        best_epoch,
        validation_average_precision: ap,
        validation_precision: choice.precision,
        validation_recall: choice.recall,
        threshold_meets_floor: choice.meets_floor,
    });
    Ok(filter)
}

pub fn pr_curve(scorer: &dyn Scorer, eval: &[LabeledSample]) -> Result<PRCurve> {
    if eval.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let texts: Vec<String> = eval.iter().map(|s| s.event_surface.clone()).collect();
    let scores = scorer.score_texts(&texts)?;
    let scored: Vec<(f64, bool)> = scores
        .into_iter()
        .zip(eval)
        .map(|(s, x)| (s, x.label.is_valid()))
        .collect();
    pr_curve_from_scores(&scored)
}

/// Events are split by whether their surface starts with 被.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCurves {
    pub explicit: Option<PRCurve>,
    pub bei: Option<PRCurve>,
}

/// Separate curves for non-neutral-indicator events and 被 events. A slice
/// lacking one of the labels gets no curve.
pub fn slice_curves(scorer: &dyn Scorer, eval: &[LabeledSample]) -> Result<SliceCurves> {
    let (bei, explicit): (Vec<LabeledSample>, Vec<LabeledSample>) =
        eval.iter().cloned().partition(|s| s.event_surface.starts_with('被'));
    let curve = |s: &[LabeledSample]| -> Result<Option<PRCurve>> {
        if both_labels(s) {
            pr_curve(scorer, s).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(SliceCurves {
        explicit: curve(&explicit)?,
        bei: curve(&bei)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub accepted: Vec<EmotionalEvent>,
    pub filtered_out: Vec<EmotionalEvent>,
}

/// Partitions events by `score >= threshold`. Implicit events bypass the
/// filter and are always accepted.
pub fn apply_scores(events: Vec<EmotionalEvent>, scores: &[f64], threshold: f64) -> Result<FilterOutcome> {
    if scores.len() != events.len() {
        return Err(Error::Precondition(format!(
            "{} scores for {} events",
            scores.len(),
            events.len()
        )));
    }
    let mut out = FilterOutcome {
        accepted: Vec::new(),
        filtered_out: Vec::new(),
    };
    for (mut event, &score) in events.into_iter().zip(scores) {
        if event.kind == EventKind::Implicit {
            event.status = EventStatus::Accepted;
            out.accepted.push(event);
            continue;
        }
        event.validity_score = Some(score);
        if score >= threshold {
            event.status = EventStatus::Accepted;
            out.accepted.push(event);
        } else {
            event.status = EventStatus::FilteredOutInvalid;
            out.filtered_out.push(event);
        }
    }
    Ok(out)
}

pub fn apply_filter(scorer: &dyn Scorer, threshold: f64, events: Vec<EmotionalEvent>) -> Result<FilterOutcome> {
    let texts: Vec<String> = events.iter().map(|e| e.surface.clone()).collect();
    let scores = scorer.score_texts(&texts)?;
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Protocol(format!("score {bad} outside [0,1]")));
    }
    apply_scores(events, &scores, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::GeneratedProvenance;
    use proptest::prelude::*;

    fn sample(s: &str, valid: bool) -> LabeledSample {
        LabeledSample::new(s, if valid { Label::Valid } else { Label::Invalid })
    }

    fn event(indicator: &str, theme: &str) -> EmotionalEvent {
        EmotionalEvent::generated(
            indicator,
            theme,
            EventKind::ExplicitNonneutral,
            GeneratedProvenance {
                prompt_hash: "h".into(),
                provider_id: "mock".into(),
                timestamp: "t".into(),
                polarity_query: None,
            },
        )
    }

    fn events_for(indicator: &str, n: usize) -> Vec<EmotionalEvent> {
        (0..n).map(|i| event(indicator, &format!("主题{i:03}"))).collect()
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let events = events_for("遭受", 100);
        let a = sample_for_annotation(&events, 10, 1).unwrap();
        let b = sample_for_annotation(&events, 10, 1).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, sample_for_annotation(&events, 10, 2).unwrap());
    }

    #[test]
    fn small_groups_contribute_everything() {
        let events = events_for("遭受", 4);
        assert_eq!(sample_for_annotation(&events, 10, 1).unwrap().len(), 4);
        let mut two = events_for("遭受", 100);
        two.extend(events_for("获得", 100));
        assert_eq!(sample_for_annotation(&two, 10, 1).unwrap().len(), 20);
        assert!(sample_for_annotation(&[], 10, 1).is_err());
    }

    #[test]
    fn implicit_events_are_not_sampled() {
        let mut events = events_for("遭受", 3);
        events.push(EmotionalEvent::implicit("中奖", crate::event::EventPolarity::Positive));
        let sample = sample_for_annotation(&events, 10, 1).unwrap();
        assert_eq!(sample.len(), 3);
        assert!(!sample.contains(&"中奖".to_string()));
        assert!(sample_for_annotation(&events[3..], 10, 1).is_err());
    }

    #[test]
    fn annotation_sheet_round_trip() {
        let sheet = annotation_sheet(&["遭受挫折".to_string(), "获得奖学金".to_string()]);
        let rows = parse_annotation_sheet(&sheet, "a").unwrap();
        assert_eq!(rows, vec![("遭受挫折".into(), None), ("获得奖学金".into(), None)]);
        let done = "event\tlabel\n遭受挫折\tvalid\n获得奖学金\tinvalid\n获得\t\n";
        let rows = parse_annotation_sheet(done, "a").unwrap();
        assert_eq!(labeled_samples(&rows).len(), 2);
        assert!(parse_annotation_sheet("遭受挫折\tmaybe\n", "a").is_err());
    }

    #[test]
    fn majority_merge() {
        let sheet = |labels: [&str; 2]| -> Vec<(String, Option<Label>)> {
            vec![
                ("甲".into(), labels[0].parse().ok()),
                ("乙".into(), labels[1].parse().ok()),
            ]
        };
        let merged = merge_annotations(&[
            ("a1".into(), sheet(["valid", "invalid"])),
            ("a2".into(), sheet(["valid", "valid"])),
            ("a3".into(), sheet(["invalid", "invalid"])),
        ])
        .unwrap();
        assert_eq!(merged.samples[0].label, Label::Valid);
        assert_eq!(merged.samples[1].label, Label::Invalid);
        assert_eq!(merged.ratings[0], vec![Label::Valid, Label::Valid, Label::Invalid]);
        assert_eq!(merged.samples[0].annotator_ids, ["a1", "a2", "a3"]);
    }

    #[test]
    fn split_sizes() {
        let data: Vec<_> = (0..100).map(|i| sample(&format!("e{i}"), i % 2 == 0)).collect();
        let s = split(&data, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s.validation.iter().filter(|x| x.label.is_valid()).count(), 5);

        let data: Vec<_> = (0..10).map(|i| sample(&format!("e{i}"), i < 5)).collect();
        let s = split(&data, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert!(s.train.iter().any(|x| x.label.is_valid()));
        assert!(s.train.iter().any(|x| !x.label.is_valid()));
        // validation takes the tie for `valid`; test then takes `invalid`
        assert!(s.validation[0].label.is_valid());
        assert!(!s.test[0].label.is_valid());

        let data: Vec<_> = (0..4).map(|i| sample(&format!("e{i}"), i < 2)).collect();
        assert!(split(&data, 3).is_err());
        let data: Vec<_> = (0..12).map(|i| sample(&format!("e{i}"), i < 2)).collect();
        assert!(split(&data, 3).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_stratified_partition(valid in 3usize..60, invalid in 3usize..60, seed in any::<u64>()) {
            prop_assume!(valid + invalid >= 10);
            let data: Vec<_> = (0..valid + invalid).map(|i| sample(&format!("e{i}"), i < valid)).collect();
            let s = split(&data, seed).unwrap();
            let n = data.len();
            let mut all: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).map(|x| x.event_surface.clone()).collect();
            all.sort();
            let mut want: Vec<_> = data.iter().map(|x| x.event_surface.clone()).collect();
            want.sort();
            prop_assert_eq!(all, want);
            prop_assert_eq!(s.validation.len(), n / 10);
            prop_assert_eq!(s.test.len(), n / 10);
            for part in [&s.train, &s.validation, &s.test] {
                let got = part.iter().filter(|x| x.label.is_valid()).count() as f64;
                let quota = part.len() as f64 * valid as f64 / n as f64;
                prop_assert!((got - quota).abs() <= 1.0, "got {} quota {}", got, quota);
            }
        }
    }

    /// Independent oracle: confusion counts at one threshold by direct scan.
    fn brute_force_point(scored: &[(f64, bool)], t: f64) -> (f64, f64) {
        let tp = scored.iter().filter(|(s, y)| *s >= t && *y).count() as f64;
        let fp = scored.iter().filter(|(s, y)| *s >= t && !*y).count() as f64;
        let fneg = scored.iter().filter(|(s, y)| *s < t && *y).count() as f64;
        (tp / (tp + fp), tp / (tp + fneg))
    }

    #[test]
    fn perfect_and_constant_scorers() {
        let perfect = [(1.0, true), (1.0, true), (0.0, false), (0.0, false)];
        let curve = pr_curve_from_scores(&perfect).unwrap();
        assert!(curve
            .points
            .iter()
            .any(|p| p.precision == 1.0 && p.recall == 1.0));

        // 4 samples, 1 valid, all scored 0.3: one point, precision = base rate 1/4
        let constant = [(0.3, true), (0.3, false), (0.3, false), (0.3, false)];
        let curve = pr_curve_from_scores(&constant).unwrap();
        assert_eq!(
            curve.points,
            vec![PrPoint {
                threshold: 0.3,
                precision: 0.25,
                recall: 1.0
            }]
        );
        assert!(pr_curve_from_scores(&[(0.3, true)]).is_err());
    }

    #[test]
    fn ten_sample_curve_matches_enumeration() {
        let scored = [
            (0.91, true),
            (0.85, true),
            (0.85, false),
            (0.70, true),
            (0.62, false),
            (0.55, true),
            (0.40, false),
            (0.33, true),
            (0.20, false),
            (0.05, false),
        ];
        let curve = pr_curve_from_scores(&scored).unwrap();
        assert_eq!(curve.points.len(), 9);
        for p in &curve.points {
            let (precision, recall) = brute_force_point(&scored, p.threshold);
            assert_eq!((p.precision, p.recall), (precision, recall));
        }
        assert!(curve.is_well_formed());
    }

    #[test]
    fn threshold_policy() {
        let curve = PRCurve {
            points: vec![
                PrPoint { threshold: 0.3, precision: 0.90, recall: 0.95 },
                PrPoint { threshold: 0.5, precision: 0.96, recall: 0.85 },
                PrPoint { threshold: 0.7, precision: 0.99, recall: 0.60 },
            ],
        };
        let c = select_threshold(&curve, 0.8).unwrap();
        assert_eq!(c.threshold, 0.5);
        assert!(c.meets_floor);

        let low = PRCurve {
            points: vec![
                PrPoint { threshold: 0.3, precision: 0.90, recall: 0.70 },
                PrPoint { threshold: 0.5, precision: 0.96, recall: 0.50 },
            ],
        };
        let c = select_threshold(&low, 0.8).unwrap();
        assert_eq!(c.threshold, 0.3);
        assert!(!c.meets_floor);

        let single = PRCurve {
            points: vec![PrPoint { threshold: 0.4, precision: 0.5, recall: 1.0 }],
        };
        assert_eq!(select_threshold(&single, 0.8).unwrap().threshold, 0.4);
        assert!(select_threshold(&PRCurve::default(), 0.8).is_err());
    }

    #[test]
    fn threshold_tie_breaks() {
        let curve = PRCurve {
            points: vec![
                PrPoint { threshold: 0.2, precision: 0.9, recall: 0.9 },
                PrPoint { threshold: 0.4, precision: 0.9, recall: 0.9 },
                PrPoint { threshold: 0.6, precision: 0.9, recall: 0.85 },
            ],
        };
        assert_eq!(select_threshold(&curve, 0.8).unwrap().threshold, 0.2);
    }

    #[test]
    fn average_precision_of_perfect_curve_is_one() {
        let curve = pr_curve_from_scores(&[(0.9, true), (0.8, true), (0.1, false)]).unwrap();
        assert!((curve.average_precision() - 1.0).abs() < 1e-12);
        // ranking: valid, invalid, valid -> AP = 1*0.5 + (2/3)*0.5
        let curve = pr_curve_from_scores(&[(0.9, true), (0.8, false), (0.1, true)]).unwrap();
        assert!((curve.average_precision() - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn apply_scores_partitions() {
        let events = events_for("遭受", 20);
        let scores: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let out = apply_scores(events.clone(), &scores, 0.5).unwrap();
        let expected_accept: Vec<_> = events
            .iter()
            .zip(&scores)
            .filter(|(_, s)| **s >= 0.5)
            .map(|(e, _)| e.surface.clone())
            .collect();
        assert_eq!(out.accepted.iter().map(|e| e.surface.clone()).collect::<Vec<_>>(), expected_accept);
        assert_eq!(out.accepted.len() + out.filtered_out.len(), 20);
        assert!(out.accepted.iter().all(|e| e.status == EventStatus::Accepted && e.validity_score.unwrap() >= 0.5));
        assert!(out.filtered_out.iter().all(|e| e.status == EventStatus::FilteredOutInvalid));

        assert_eq!(apply_scores(events.clone(), &scores, 0.0).unwrap().accepted.len(), 20);
        assert!(apply_scores(events.clone(), &scores, 1.0 + 1e-9).unwrap().accepted.is_empty());
        assert!(apply_scores(events, &scores[..3], 0.5).is_err());
    }

    #[test]
    fn implicit_events_bypass_the_filter() {
        let events = vec![EmotionalEvent::implicit("获奖", crate::event::EventPolarity::Positive)];
        let out = apply_scores(events, &[0.0], 0.9).unwrap();
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.accepted[0].validity_score, None);
    }

    #[test]
    fn training_needs_both_labels() {
        let one: Vec<_> = (0..10).map(|i| sample(&format!("遭受{i}"), true)).collect();
        let both = vec![sample("遭受挫折", true), sample("折挫遭受", false)];
        assert!(matches!(
            train_filter(&one, &both, &TrainConfig::default(), 1),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn model_serialization_round_trip() {
        let train = vec![
            sample("遭受挫折", true),
            sample("遭受校园暴力", true),
            sample("折挫受遭", false),
            sample("力暴园受校遭", false),
        ];
        let config = TrainConfig {
            features: FeatureSpec { dim_bits: 12, ..FeatureSpec::default() },
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let model = train_filter(&train, &train, &config, 9).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: FilterModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.model.weights.len(), config.features.dim() + 1);
    }
}
