//! Adjusted Rand index on small labelings, with background pixels dropped.
//!
//! cargo run --release --example segmentation_metrics

use setcon::evaluation::{adjusted_rand_index, ari, SegmentationPair};

fn main() {
    println!(
        "perfect:        {:?}",
        adjusted_rand_index(&[1, 1, 2, 2], &[1, 1, 2, 2])
    );
    println!(
        "relabeled:      {:?}",
        adjusted_rand_index(&[7, 7, 3, 3], &[1, 1, 2, 2])
    );
    println!(
        "chance level:   {:?}",
        adjusted_rand_index(&[1, 1, 1, 2], &[1, 1, 2, 2])
    );
    let pair = SegmentationPair {
        predicted: vec![0, 0, 1, 1, 2, 3],
        truth: vec![0, 0, 1, 1, 2, 2],
    };
    println!("foreground ARI: {:?}", ari(&pair));
}
