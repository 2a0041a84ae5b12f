//! Reciprocal rank fusion next to the score-averaging baselines, and the
//! shipped instance where rescaling one criterion flips the mean but not RRF.

use redbench::crrf::{fuse, ranking_from_scores, FusionMethod, RankingSet};
use redbench::fixtures::monotone_counterexample;

fn show(label: &str, set: &RankingSet) {
    for m in FusionMethod::ALL {
        let f = fuse(set, m).expect("fusable");
        let scores: Vec<String> = f.order.iter().map(|id| format!("{id}={:.3}", f.scores[id])).collect();
        println!("{label:<10} {:<7} {}", m.name(), scores.join("  "));
    }
}

fn main() {
    let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let crit = |name: &str, s: [f64; 4]| ranking_from_scores(name, &ids.iter().cloned().zip(s).collect::<Vec<_>>());
    let set = RankingSet::new(
        ids.clone(),
        vec![crit("validity", [0.9, 0.8, 0.2, 0.1]), crit("clarity", [0.3, 0.9, 0.8, 0.1]), crit("specificity", [0.7, 0.1, 0.6, 0.5])],
    )
    .expect("valid set");
    show("example", &set);

    let (before, after) = monotone_counterexample();
    show("before", &before);
    show("after", &after);
}
