//! Shared fixtures for the benchmarks.

use dwrl_core::data::generate_channel_cue;
use dwrl_core::{Dataset, GpmModel, PreferencePair, SeedStream, Split, SyntheticTask};

pub fn task(vocab: usize, thought_len: usize) -> SyntheticTask {
    SyntheticTask {
        vocab,
        thought_len,
        dim: 2 * vocab,
        ..SyntheticTask::default()
    }
}

pub fn dataset(vocab: usize, thought_len: usize, count: usize) -> Dataset {
    generate_channel_cue(&task(vocab, thought_len), count, Split::Train, 0).expect("valid task")
}

pub fn model_and_pair(vocab: usize, thought_len: usize) -> (GpmModel, PreferencePair) {
    let mut rng = SeedStream::new(1).rng();
    let model = GpmModel::random(vocab, thought_len, 2 * vocab, 0.5, &mut rng).expect("valid shape");
    let pair = dataset(vocab, thought_len, 1).pairs.remove(0);
    (model, pair)
}
