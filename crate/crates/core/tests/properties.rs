use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;

use emoevent_core::clock::Clock;
use emoevent_core::eval::ClauseVector;
use emoevent_core::filter::pr_curve_from_scores;
use emoevent_core::gateway::{CompletionParams, Gateway, MockConfig, MockProvider, RetryPolicy};
use emoevent_core::harvest::{harvest_all, harvest_indicator, HarvestOptions};
use emoevent_core::indicator::{
    registry_stats, Indicator, IndicatorRegistry, Origin, PatternClass, Polarity,
};
use emoevent_core::prompt::{
    extract_indicator, parse_prompt, render_prompt, ExampleSet, PackLibrary, PromptTemplate,
};
use emoevent_core::text::normalize_event;

const CLASSES: [PatternClass; 11] = [
    PatternClass::Classic,
    PatternClass::NeutralBei,
    PatternClass::ResultativeVerb,
    PatternClass::BaiV,
    PatternClass::VPo,
    PatternClass::CuoV,
    PatternClass::VCuo,
    PatternClass::VDui,
    PatternClass::LouV,
    PatternClass::Other,
    PatternClass::BeiComposed,
];
const POLARITIES: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

fn surface() -> impl Strategy<Value = String> {
    "[被遭受获得丢失错漏白打破对吃拿]{1,4}"
}

fn registry_from(rows: &[(String, usize, usize)]) -> IndicatorRegistry {
    let mut registry = IndicatorRegistry::new();
    for (surface, class, polarity) in rows {
        if let Ok(indicator) = Indicator::new(surface, POLARITIES[*polarity], CLASSES[*class], Origin::Manual) {
            let _ = registry.insert(indicator);
        }
    }
    registry
}

fn example_set(indicator: &str, themes: &[String]) -> ExampleSet {
    ExampleSet::new(indicator, themes.iter().map(|t| format!("{indicator}{t}")))
}

fn themes() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::btree_set("[天地山水风云花草树林]{1,5}", 8).prop_map(|s| s.into_iter().collect())
}

fn indicator(surface: &str) -> Indicator {
    Indicator::new(surface, Polarity::Negative, PatternClass::Classic, Origin::Manual).unwrap()
}

proptest! {
    #[test]
    fn stats_totals_equal_registry_size(rows in proptest::collection::vec((surface(), 0usize..11, 0usize..3), 0..80)) {
        let registry = registry_from(&rows);
        let stats = registry_stats(&registry);
        prop_assert_eq!(stats.total, registry.len());
        prop_assert_eq!(stats.by_class.iter().map(|c| c.count).sum::<usize>(), registry.len());
        prop_assert_eq!(stats.by_polarity.total(), registry.len());
    }

    #[test]
    fn rendered_prompt_round_trips(surface in "[遭受获得丢失错漏]{1,3}", themes in themes()) {
        let set = example_set(&surface, &themes);
        let prompt = render_prompt(&indicator(&surface), &set, &PromptTemplate::v1()).unwrap();
        prop_assert!(prompt.rendered_text.contains("100"));
        prop_assert_eq!(extract_indicator(&prompt.rendered_text), Some(surface.as_str()));
        prop_assert_eq!(parse_prompt(&prompt.rendered_text), Some(set));
    }

    #[test]
    fn batches_respect_cap_and_reconcile(
        unique in 0usize..150,
        duplicates in 0usize..40,
        garbage in 0usize..40,
        blanks in 0usize..10,
        seed in any::<u64>(),
    ) {
        let config = MockConfig { unique, duplicates, garbage, blanks, ..MockConfig::default() };
        let gateway = Gateway::new(Arc::new(MockProvider::with_config(seed, config))).with_retry(RetryPolicy::none());
        let themes: Vec<String> = ["考试", "工作", "生活", "比赛", "健康", "家庭", "财产", "名誉"].map(String::from).to_vec();
        let batch = harvest_indicator(
            &indicator("遭受"),
            &example_set("遭受", &themes),
            &PromptTemplate::v1(),
            &gateway,
            &CompletionParams::default(),
            &Clock::Frozen("2024-01-01T00:00:00Z".into()),
        ).unwrap();
        prop_assert!(batch.accepted_events.len() <= batch.requested);
        prop_assert!(batch.reconciles());
        let distinct: HashSet<String> = batch.accepted_events.iter().map(|e| normalize_event(&e.surface)).collect();
        prop_assert_eq!(distinct.len(), batch.accepted_events.len());
        for e in &batch.accepted_events {
            prop_assert!(e.surface.starts_with("遭受") && !e.theme.is_empty());
        }
    }

    #[test]
    fn pr_curves_are_well_formed(mut scored in proptest::collection::vec((0u8..20, any::<bool>()), 2..80)) {
        scored[0].1 = true;
        scored[1].1 = false;
        let scored: Vec<(f64, bool)> = scored.into_iter().map(|(s, y)| (f64::from(s) / 20.0, y)).collect();
        let curve = pr_curve_from_scores(&scored).unwrap();
        prop_assert!(curve.is_well_formed());
        prop_assert_eq!(curve.points.first().map(|p| p.recall), Some(1.0));
    }

    #[test]
    fn augmented_vector_grows_by_one_bit(values in proptest::collection::vec(-10.0f64..10.0, 0..20), bit in 0u8..4) {
        let base = ClauseVector { values };
        match base.augment(bit) {
            Ok(v) => {
                prop_assert!(bit <= 1);
                prop_assert_eq!(v.values.len(), base.values.len() + 1);
                prop_assert_eq!(&v.values[..base.values.len()], &base.values[..]);
                prop_assert_eq!(v.values.last().copied(), Some(f64::from(bit)));
            }
            Err(_) => prop_assert!(bit > 1),
        }
    }
}

#[test]
fn resumed_harvest_matches_an_uninterrupted_one() {
    let surfaces = ["遭受", "获得", "丢失", "摆脱", "荣获", "面临"];
    let registry = IndicatorRegistry::from_indicators(surfaces.iter().map(|s| indicator(s))).unwrap();
    let mut packs = PackLibrary::new();
    let themes: Vec<String> = ["考试", "工作", "生活", "比赛", "健康", "家庭", "财产", "名誉"].map(String::from).to_vec();
    packs.insert_default(PatternClass::Classic, example_set("遭受", &themes));
    let gateway = Gateway::new(Arc::new(MockProvider::new(3))).with_workers(3);
    let params = CompletionParams::default();
    let dir = tempfile::tempdir().unwrap();
    let checkpoint = dir.path().join("harvest.ckpt.jsonl");
    let options = HarvestOptions {
        workers: 3,
        checkpoint: Some(checkpoint.clone()),
        clock: Clock::Frozen("2024-01-01T00:00:00Z".into()),
        ..HarvestOptions::default()
    };

    let full = harvest_all(&registry, &packs, &gateway, &params, &options).unwrap();
    assert!(full.batches.iter().all(|b| !b.from_checkpoint));

    // simulate a crash after two batches, with a torn third line
    let text = std::fs::read_to_string(&checkpoint).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let torn = format!("{}\n{}\n{}", lines[0], lines[1], &lines[2][..lines[2].len() / 2]);
    std::fs::write(&checkpoint, torn).unwrap();

    let resumed = harvest_all(&registry, &packs, &gateway, &params, &options).unwrap();
    assert_eq!(resumed.queried().count(), surfaces.len() - 2);
    assert_eq!(resumed.events, full.events);
    let digests = |r: &emoevent_core::harvest::HarvestReport| r.batches.iter().map(|b| b.digest.clone()).collect::<Vec<_>>();
    assert_eq!(digests(&resumed), digests(&full));

    let again = harvest_all(&registry, &packs, &gateway, &params, &options).unwrap();
    assert_eq!(again.queried().count(), 0);
    assert_eq!(again.events, full.events);
}
