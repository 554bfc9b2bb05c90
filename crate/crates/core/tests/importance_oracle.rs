mod common;

use common::{brute_force_scores, random_pair};
use concept_neurons::select::importance_scores;

#[test]
fn library_scores_equal_double_loop_bitwise() {
    for seed in 0..100 {
        let (w, c) = random_pair(seed);
        let got = importance_scores("layer", &w, &c).unwrap();
        let want = brute_force_scores(&w, &c);
        assert_eq!(got.scores.shape(), w.shape());
        for (k, (a, b)) in got.scores.data().iter().zip(&want).enumerate() {
            assert_eq!(a.to_bits(), b.to_bits(), "pair {seed} entry {k}");
        }
    }
}
