#![allow(dead_code)]

use empdial_model::input::build_input;
use empdial_model::{EncodedExample, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        num_heads: 2,
        d_model: 12,
        d_ff: 24,
        dropout: 0.0,
        max_input_tokens: 24,
        max_target_tokens: 10,
        vocab_size: 13,
        num_labels: 41,
        seed,
    }
}

/// Random context of 1..=3 utterances over content ids `4..vocab`.
pub fn random_example(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> EncodedExample {
    let m = rng.gen_range(1..=3);
    let utts: Vec<Vec<u32>> = (0..m)
        .map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(4..cfg.vocab_size as u32)).collect())
        .collect();
    let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..cfg.num_labels)).collect();
    let input = build_input(&utts, &labels, cfg.max_input_tokens).unwrap();
    let response = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(4..cfg.vocab_size)).collect();
    EncodedExample {
        input,
        response,
        label: rng.gen_range(0..cfg.num_labels),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
