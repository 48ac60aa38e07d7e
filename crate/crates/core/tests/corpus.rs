use std::collections::HashSet;

use capp_core::corpus::{
    build_dataset, detokenize, split_dataset, tokenize, BatchSize, Geometry, Holes, SurfaceFinish,
    Threads, Tolerance, MAX_CHAIN_LEN, MIN_CHAIN_LEN, N_PARTS,
};
use capp_core::{enumerate_parts, plan_feasible_chains, Dataset, Operation, Vocabulary};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn digest(path: &std::path::Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn part_space_is_complete_and_ordered() {
    let parts = enumerate_parts();
    assert_eq!(parts.len(), N_PARTS);
    assert_eq!(parts.iter().collect::<HashSet<_>>().len(), N_PARTS);
    let first = parts[0];
    assert_eq!(first.geometry, Geometry::Prismatic);
    assert_eq!(first.holes, Holes::None);
    assert_eq!(first.external_threads, Threads::Yes);
    assert_eq!(first.surface_finish, SurfaceFinish::Coarse);
    assert_eq!(first.tolerance, Tolerance::Coarse);
    assert_eq!(first.batch_size, BatchSize::Single);
    for (i, p) in parts.iter().enumerate() {
        assert_eq!(p.index(), i);
    }
}

#[test]
fn dataset_bounds_and_threading_rules_hold_exhaustively() {
    let ds = Dataset::generate();
    assert_eq!(ds.len(), N_PARTS);
    let mut threaded = 0;
    for rec in ds.records() {
        assert!((1..=3).contains(&rec.chains.len()));
        let want = rec.part.external_threads == Threads::Yes;
        threaded += usize::from(want);
        for c in &rec.chains {
            assert!((MIN_CHAIN_LEN..=MAX_CHAIN_LEN).contains(&c.len()));
            let has = c.contains(Operation::Tapping) || c.contains(Operation::ThreadMilling);
            assert_eq!(has, want, "{}: {c}", rec.part);
        }
        assert_eq!(rec.chains, plan_feasible_chains(&rec.part));
    }
    assert_eq!(threaded, 1024);
    assert!((N_PARTS..=3 * N_PARTS).contains(&ds.pair_count()));
}

#[test]
fn dataset_file_is_reproducible_and_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a/dataset.jsonl");
    let b = dir.path().join("b/dataset.jsonl");
    let ds = build_dataset(&a).unwrap();
    build_dataset(&b).unwrap();
    assert_eq!(digest(&a), digest(&b));
    assert_eq!(Dataset::load(&a).unwrap().records(), ds.records());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), N_PARTS);
    assert!(!dir.path().join("a/dataset.jsonl.tmp").exists());
}

#[test]
fn tokenization_is_a_bijection_over_dataset_pairs() {
    let ds = Dataset::generate();
    let mut seen = HashSet::new();
    for rec in ds.records() {
        let prompt = tokenize(&rec.part, None);
        assert_eq!(prompt.len(), 8);
        assert_eq!(detokenize(&prompt).unwrap(), (rec.part, None));
        for c in &rec.chains {
            let toks = tokenize(&rec.part, Some(c));
            assert_eq!(toks.len(), 8 + c.len() + 1);
            assert_eq!(detokenize(&toks).unwrap(), (rec.part, Some(c.clone())));
            assert!(seen.insert(toks));
        }
    }
}

#[test]
fn committed_vocabulary_matches_the_standard_table() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/vocab.json");
    let committed = std::fs::read_to_string(path).unwrap();
    assert_eq!(committed, Vocabulary::standard().to_json());
    assert_eq!(
        Vocabulary::load(std::path::Path::new(path)).unwrap(),
        Vocabulary::standard()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn splits_partition_and_nest(seed in any::<u64>()) {
        let ds = Dataset::generate();
        let small = split_dataset(&ds, 0.01, seed).unwrap();
        let big = split_dataset(&ds, 0.05, seed).unwrap();
        prop_assert_eq!(small.train_parts.len(), 20);
        prop_assert_eq!(small.val_parts.len(), 205);
        prop_assert_eq!(small.test_parts.len(), 1823);
        prop_assert!(small.is_disjoint());
        let all: HashSet<_> = small
            .train_parts
            .iter()
            .chain(&small.val_parts)
            .chain(&small.test_parts)
            .collect();
        prop_assert_eq!(all.len(), N_PARTS);
        prop_assert_eq!(&big.train_parts[..20], &small.train_parts[..]);
        prop_assert_eq!(split_dataset(&ds, 0.01, seed).unwrap(), small);
    }
}
