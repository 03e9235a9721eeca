use mqa_core::graph::build_index;
use mqa_core::search::{
    brute_force_topk, compare_frameworks, greedy_search, incremental_distance, Eval, RetrievalIndex,
};
use mqa_core::{BuildParams, Framework, FusedLayout, ModalitySpec, SearchParams, VectorSet, WeightVector};
use mqa_testkit::{exact_topk, mean, recall, sq_dist, uniform_rows, weighted_sq, SkewDataset};

fn vector_set(rows: &[Vec<f32>]) -> VectorSet {
    VectorSet::from_rows(rows[0].len(), rows.iter().map(|r| r.as_slice())).unwrap()
}

fn split(row: &[f32], dims: &[usize]) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    let mut at = 0;
    for d in dims {
        out.push(row[at..at + d].to_vec());
        at += d;
    }
    out
}

/// 1,000 objects with 32 + 32 dims, indexed under weights (0.7, 0.3).
fn two_modal_index() -> (RetrievalIndex, Vec<Vec<f32>>) {
    let rows = uniform_rows(1000, 64, 21);
    let modalities = vec![ModalitySpec::new("a", 32), ModalitySpec::new("b", 32)];
    let weights = WeightVector::new(vec![0.7, 0.3]).unwrap();
    let index = RetrievalIndex::from_vectors(modalities, vector_set(&rows), weights, &BuildParams::default(), &[Framework::Must])
        .unwrap();
    (index, rows)
}

#[test]
fn pruning_is_exact_and_saves_work() {
    let (index, rows) = two_modal_index();
    let graph = index.must_graph().unwrap();
    let queries = uniform_rows(200, 64, 22);
    let mut abandoned = 0;
    for l in [10, 50, 100] {
        for q in &queries {
            let fused = index.fused_query(&split(q, &[32, 32])).unwrap();
            let mut params = SearchParams::new(10, l);
            let pruned = greedy_search(graph, index.fused(), index.layout(), &fused, &params).unwrap();
            params.prune = false;
            let full = greedy_search(graph, index.fused(), index.layout(), &fused, &params).unwrap();
            assert_eq!(pruned.hits, full.hits, "L={l}");
            assert!(pruned.stats.full_evals <= full.stats.full_evals);
            assert_eq!(full.stats.abandoned, 0);
            abandoned += pruned.stats.abandoned;
        }
    }
    assert!(abandoned > 0);
    assert_eq!(rows.len(), 1000);
}

#[test]
fn beam_width_is_monotone_and_recall_meets_the_bar() {
    let (index, rows) = two_modal_index();
    let graph = index.must_graph().unwrap();
    let w = [0.7, 0.3];
    let queries = uniform_rows(100, 64, 23);
    let k = 10;
    let mut last = 0.0;
    for l in [k, 2 * k, 50, 100] {
        let r = mean(queries.iter().map(|q| {
            let qs = split(q, &[32, 32]);
            let truth = exact_topk(rows.len(), k, |i| weighted_sq(&qs, &split(&rows[i], &[32, 32]), &w));
            let fused = index.fused_query(&qs).unwrap();
            let got = greedy_search(graph, index.fused(), index.layout(), &fused, &SearchParams::new(k, l)).unwrap();
            recall(&truth, &got.vertices())
        }));
        assert!(r >= last, "recall fell from {last} to {r} at L={l}");
        last = r;
    }
    assert!(last >= 0.95, "recall@10 at L=100 = {last}");
}

#[test]
fn indexed_object_is_its_own_nearest() {
    let (index, rows) = two_modal_index();
    for x in [0usize, 17, 999] {
        let r = index.search(&split(&rows[x], &[32, 32]), &SearchParams::new(5, 50)).unwrap();
        assert_eq!(r.hits[0].vertex, x as u32);
        assert_eq!(r.hits[0].distance, 0.0);
    }
}

#[test]
fn incremental_distance_hand_example() {
    // per-segment squared gaps 0.5 and 0.9
    let layout = FusedLayout::new(&[1, 1]);
    let q = [0.0, 0.0];
    let o = [0.5f32.sqrt(), 0.9f32.sqrt()];
    assert_eq!(incremental_distance(&q, &o, &layout, 0.4).unwrap(), Eval::Abandoned { segments: 1 });
    match incremental_distance(&q, &o, &layout, f32::INFINITY).unwrap() {
        Eval::Full(d) => assert!((d - 1.4).abs() < 1e-6),
        other => panic!("{other:?}"),
    }
    assert_eq!(incremental_distance(&o, &o, &layout, 0.0).unwrap(), Eval::Full(0.0));
}

#[test]
fn brute_force_definition() {
    let rows = uniform_rows(100, 8, 24);
    let vectors = vector_set(&rows);
    let q = &uniform_rows(1, 8, 25)[0];
    let r = brute_force_topk(&vectors, q, 10).unwrap();
    let returned = r.vertices();
    let worst = r.hits.iter().map(|h| h.distance).fold(0.0f32, f32::max);
    for i in 0..100u32 {
        if !returned.contains(&i) {
            assert!(sq_dist(q, &rows[i as usize]) as f32 >= worst);
        }
    }
    let all = brute_force_topk(&vectors, q, 500).unwrap();
    assert_eq!(all.hits.len(), 100);
    assert!(all.hits.windows(2).all(|w| w[0].distance <= w[1].distance));
    assert_eq!(brute_force_topk(&vectors, &rows[42], 1).unwrap().hits[0].vertex, 42);
}

#[test]
fn single_modality_frameworks_coincide() {
    let rows = uniform_rows(500, 16, 26);
    let vectors = vector_set(&rows);
    let params = BuildParams::default();
    let index = RetrievalIndex::from_vectors(
        vec![ModalitySpec::new("only", 16)],
        vectors.clone(),
        WeightVector::uniform(1),
        &params,
        &Framework::ALL,
    )
    .unwrap();
    let plain = build_index(&vectors, &params).unwrap();
    let layout = FusedLayout::single(16);
    for q in uniform_rows(30, 16, 27) {
        let sp = SearchParams::new(10, 50);
        let reference = greedy_search(&plain, &vectors, &layout, &q, &sp).unwrap();
        let outcomes = compare_frameworks(&index, &[q.clone()], &sp);
        assert_eq!(outcomes.len(), 3);
        for o in outcomes {
            let r = o.result.unwrap();
            assert_eq!(r.vertices(), reference.vertices(), "{:?}", o.framework);
            assert!(r.stats.visited > 0);
        }
    }
}

#[test]
fn zeroed_modality_is_ignored() {
    let rows = uniform_rows(300, 12, 28);
    let index = RetrievalIndex::from_vectors(
        vec![ModalitySpec::new("text", 8), ModalitySpec::new("image", 4)],
        vector_set(&rows),
        WeightVector::new(vec![1.0, 0.0]).unwrap(),
        &BuildParams::default(),
        &[Framework::Must],
    )
    .unwrap();
    for x in [3usize, 150, 299] {
        let query = vec![rows[x][..8].to_vec(), vec![9.0; 4]];
        let r = index.search(&query, &SearchParams::new(3, 30)).unwrap();
        assert_eq!(r.hits[0].vertex, x as u32);
    }
}

#[test]
fn skew_dataset_orders_the_frameworks() {
    let data = SkewDataset::generate(2000, 100, 29);
    let je_ceiling = data.check(10).unwrap();

    let modalities = vec![ModalitySpec::new("m0", data.dim), ModalitySpec::new("m1", data.dim)];
    let weights = WeightVector::new(data.weights.to_vec()).unwrap();
    let index = RetrievalIndex::from_vectors(
        modalities,
        vector_set(&data.rows()),
        weights,
        &BuildParams::default(),
        &Framework::ALL,
    )
    .unwrap();
    let params = SearchParams::new(10, 100);
    let mut sums = [0.0; 3];
    for q in &data.queries {
        let truth = data.truth(q, 10);
        for o in compare_frameworks(&index, &q.to_vec(), &params) {
            let slot = Framework::ALL.iter().position(|f| *f == o.framework).unwrap();
            sums[slot] += recall(&truth, &o.result.unwrap().vertices());
        }
    }
    let [must, mr, je] = sums.map(|s| s / data.queries.len() as f64);
    assert!(must >= mr, "MUST {must} < MR {mr}");
    assert!(must - je >= 0.2, "MUST {must} JE {je} (exact joint ceiling {je_ceiling})");
}
