mod common;

use nudgerank::ranker::{hit_rate_at_k, rank, rank_random, train, Hyperparams};

#[test]
fn planted_blocks_are_recovered_with_defaults() {
    let planted = common::planted_blocks(1);
    let hp = Hyperparams::default();
    let (model, trace) = train(&planted.graph.snapshot(common::day0()), &hp).unwrap();
    assert!(trace.epochs.last().unwrap().total() < trace.epochs[0].total());
    let reps = model.represent(&planted.graph).unwrap();
    let hit = hit_rate_at_k(
        |p, pool| Ok(rank(&reps, p, pool, common::day0())?.keys().into_iter().map(String::from).collect()),
        &planted.heldout,
        &planted.nudges,
        &planted.train_pairs,
        5,
    )
    .unwrap();
    let random = hit_rate_at_k(
        |p, pool| Ok(rank_random(p, pool, common::day0(), 3).keys().into_iter().map(String::from).collect()),
        &planted.heldout,
        &planted.nudges,
        &planted.train_pairs,
        5,
    )
    .unwrap();
    assert!(hit >= 2.0 * 5.0 / 50.0, "hit-rate {hit}");
    assert!(hit >= random, "hit-rate {hit} below random {random}");
}
