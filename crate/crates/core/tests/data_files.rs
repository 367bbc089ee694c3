use std::path::PathBuf;

use emoevent_core::gateway::MockProvider;
use emoevent_core::indicator::{
    compose_bei_indicators, load_registry, parse_surface_list, prune, registry_stats, VerbLexicon,
};
use emoevent_core::polarity::ImplicitTable;
use emoevent_core::prompt::{validate_example_set, PackLibrary};

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn list(rel: &str) -> std::collections::BTreeSet<String> {
    parse_surface_list(&std::fs::read_to_string(repo(rel)).unwrap())
}

#[test]
fn seed_registry_prunes_cleanly_and_every_indicator_has_a_pack() {
    let registry = load_registry(&repo("data/indicators.tsv")).unwrap();
    let stats = registry_stats(&registry);
    assert_eq!(stats.total, registry.len());
    assert!(stats.mismatches.is_empty(), "{:?}", stats.mismatches);

    let pruned = prune(&registry, &list("data/weak.txt"), &list("data/ambiguous.txt"));
    assert!(pruned.warnings.is_empty(), "{:?}", pruned.warnings);
    assert_eq!(pruned.excluded.len(), 3);
    assert!(pruned.registry.iter().all(|i| i.is_harvestable()));

    let packs = PackLibrary::load_dir(&repo("data/packs")).unwrap();
    for indicator in &pruned.registry {
        let set = packs.examples_for(indicator).unwrap();
        assert!(validate_example_set(&set).is_empty(), "{}: {:?}", indicator.surface, validate_example_set(&set));
    }

    let verbs = VerbLexicon::load(&repo("data/bei_verbs.txt")).unwrap();
    for indicator in compose_bei_indicators(&verbs).unwrap() {
        let set = packs.examples_for(&indicator).unwrap();
        assert!(validate_example_set(&set).is_empty(), "{}", indicator.surface);
    }
}

#[test]
fn published_count_fixture_matches_its_own_metadata() {
    let registry = load_registry(&repo("fixtures/published-counts.tsv")).unwrap();
    assert!(registry.expected().is_some());
    let stats = registry_stats(&registry);
    assert_eq!(stats.total, 726);
    assert!(stats.mismatches.is_empty(), "{:?}", stats.mismatches);
}

#[test]
fn implicit_table_and_answer_book_load() {
    let table = ImplicitTable::load(&repo("data/implicit_events.tsv")).unwrap();
    assert_eq!(table.len(), 14);
    let book = std::fs::read_to_string(repo("data/mock_answers.tsv")).unwrap();
    MockProvider::new(0).with_answer_book(&book).unwrap();
}
