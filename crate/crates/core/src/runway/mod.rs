//! Training, decoding, evaluation and transfer runs.
//!
//! Training batches examples by token budget, accumulates gradients over
//! micro-batches and keeps two checkpoint directories: `latest` (with
//! optimizer state, for resuming) and `best` (highest validation ROUGE-L).

mod checkpoint;
mod config;
mod data;
mod decode;
mod evaluate;
mod train;
mod transfer;

pub use checkpoint::{load_state, Checkpoint, TrainState, ValidationRecord};
pub use config::{DecodeConfig, EvalMode, TrainConfig};
pub use data::{build_vocab, derive_seed, encode_all, load_triplets, make_batch, pack, triplet_id, BatchStream};
pub use decode::{
    beam_search, decode_best, greedy, has_repeated_trigram, length_penalty, Hypothesis, ModelScorer, StepScorer,
};
pub use evaluate::{decode_triplets, evaluate, score_outputs, score_pair, Decoded, EvalReport, EvalRow, Scores};
pub use train::{greedy_rouge_l, mean_loss, train, train_step, TrainOutcome};
pub use transfer::{transfer, Source, TransferConfig};
