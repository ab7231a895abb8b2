//! Seeded train/eval split of 1500 images at a 10% hold-out.

use canopy::record::split_train_eval;

fn main() {
    let ids: Vec<u64> = (1..=1500).collect();
    for seed in [42, 43] {
        let plan = split_train_eval(&ids, 0.1, seed).unwrap();
        println!(
            "seed {seed}: train {} / eval {}; first eval ids {:?}",
            plan.train.len(),
            plan.eval.len(),
            &plan.eval[..5]
        );
    }
}
