use std::collections::BTreeSet;

use garlic::eval::{brute_force_knn, recall_10_at_10};
use garlic::io::synth_mixture;
use garlic::refinement::RefinementKind;
use garlic::{build_index, fit, search, BucketMode, HyperParams, Index, QueryBudget, TrainState, VectorSet};

struct Setup {
    data: VectorSet,
    queries: VectorSet,
    hp: HyperParams,
    state: TrainState,
    index: Index,
}

fn short_schedule() -> HyperParams {
    HyperParams {
        k_init: 6,
        epochs_max: 40,
        warmup_epochs: 8,
        splitclone_period: 8,
        prune_period: 16,
        batch_size: 250,
        gamma_split: 0.05,
        seed: 3,
        ..Default::default()
    }
}

fn setup() -> Setup {
    let ds = synth_mixture(1600, 8, 5, 0.25, 12).unwrap();
    let data = ds.vectors.subset(&(0..1500).collect::<Vec<_>>()).unwrap();
    let queries = ds.vectors.subset(&(1500..1600).collect::<Vec<_>>()).unwrap();
    let hp = short_schedule();
    let state = fit(&data, &hp).unwrap();
    let index = build_index(&data, &state.gaussians, &hp).unwrap();
    Setup { data, queries, hp, state, index }
}

#[test]
fn refinement_log_accounts_for_active_count() {
    let s = setup();
    assert!(s.state.events.iter().any(|e| e.kind == RefinementKind::Split), "schedule should split");
    assert_eq!(s.state.gaussians.active_count(), s.state.expected_active_count());
    assert_eq!(s.index.n_buckets(), s.state.gaussians.active_count());
    for h in &s.state.history {
        assert!(h.loss.is_finite());
    }
}

#[test]
fn buckets_cover_every_point_and_bins_partition_buckets() {
    let s = setup();
    let mut union = BTreeSet::new();
    for b in &s.index.buckets {
        let binned: usize = b.grid.bins.iter().map(|bin| bin.len as usize).sum();
        if b.is_degenerate() {
            assert!(b.grid.bins.is_empty());
            assert_eq!(b.grid.pool.len(), b.members.len());
        } else {
            assert_eq!(binned, b.members.len());
        }
        union.extend(b.members.iter().copied());
    }
    assert_eq!(union.len(), s.data.len());
    assert_eq!(union.last().copied(), Some(s.data.len() as u32 - 1));
}

#[test]
fn full_budget_is_exact_and_ratio_is_monotone() {
    let s = setup();
    let gt = brute_force_knn(&s.data, &s.queries, 10).unwrap();
    let all = QueryBudget::new(BucketMode::TopK(s.index.n_buckets()), 1.0);
    for i in 0..s.queries.len() {
        let r = search(s.queries.row(i), &s.index, &s.data, 10, &all).unwrap();
        assert_eq!(r.ids, gt.ids[i]);
        assert_eq!(r.distances, gt.distances[i]);
    }
    for mode in [BucketMode::Argmin, BucketMode::Threshold(s.hp.tau), BucketMode::TopK(2)] {
        let mut last = 0.0;
        for ratio in [0.1, 0.2, 0.3, 0.5, 1.0] {
            let budget = QueryBudget::new(mode, ratio);
            let res: Vec<Vec<usize>> = (0..s.queries.len())
                .map(|i| search(s.queries.row(i), &s.index, &s.data, 10, &budget).unwrap().ids)
                .collect();
            let r = recall_10_at_10(&res, &gt);
            assert!(r + 1e-12 >= last, "{mode} at {ratio}: {r} < {last}");
            last = r;
        }
    }
}

#[test]
fn candidate_cap_is_respected() {
    let s = setup();
    let budget = QueryBudget::new(BucketMode::TopK(3), 1.0).with_max_candidates(37);
    for i in 0..s.queries.len() {
        let r = search(s.queries.row(i), &s.index, &s.data, 10, &budget).unwrap();
        assert!(r.candidates_examined <= 37);
        assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn saved_index_answers_identically() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.grlc");
    s.index.save(&path).unwrap();
    let loaded = Index::load(&path).unwrap();
    assert_eq!(loaded, s.index);
    let budget = QueryBudget::new(BucketMode::Argmin, 0.3);
    for i in 0..50.min(s.queries.len()) {
        let a = search(s.queries.row(i), &s.index, &s.data, 10, &budget).unwrap();
        let b = search(s.queries.row(i), &loaded, &s.data, 10, &budget).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn same_seed_same_bytes() {
    let s = setup();
    let again = fit(&s.data, &s.hp).unwrap();
    let index = build_index(&s.data, &again.gaussians, &s.hp).unwrap();
    assert_eq!(index.to_bytes(), s.index.to_bytes());
    let mut a = Vec::new();
    let mut b = Vec::new();
    s.state.write_csv(&mut a).unwrap();
    again.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_epoch_still_builds_a_queryable_index() {
    let ds = synth_mixture(300, 5, 3, 0.3, 1).unwrap();
    let hp = HyperParams { k_init: 4, epochs_max: 1, ..Default::default() };
    let state = fit(&ds.vectors, &hp).unwrap();
    assert_eq!(state.epochs, 1);
    let index = build_index(&ds.vectors, &state.gaussians, &hp).unwrap();
    index.validate().unwrap();
    let r = search(ds.vectors.row(0), &index, &ds.vectors, 1, &QueryBudget::new(BucketMode::Argmin, 1.0)).unwrap();
    assert_eq!(r.ids, vec![0]);
}

#[test]
fn training_log_has_one_row_per_epoch_and_event() {
    let s = setup();
    let mut out = Vec::new();
    s.state.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("type,epoch,l_div"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.iter().filter(|l| l.starts_with("epoch,")).count(), s.state.epochs);
    assert_eq!(rows.len(), s.state.epochs + s.state.events.len());
}
