//! Text-to-flow matching: text embedders, cross-modal attention, contrastive
//! training, and the pre-encoded segment index answering top-k queries.

mod attention;
mod index;
mod model;
mod text;

pub use attention::{attention_weights, cross_attention, infonce_loss, infonce_with_grad, InfoNceGrad};
pub use index::{
    build_index, build_index_from_latents, decode_index, encode_index, load_index, save_index,
    segments_fingerprint, MatchIndex, MatchResult,
};
pub use model::{
    caption_accuracy, decode_matcher, in_batch_top1, encode_matcher, load_matcher, save_matcher, train_matcher, MatchSample,
    MatcherConfig, MatcherModel, MatcherReport,
};
pub use text::{embed_text_fallback, EmbeddingSource, HashedEmbedder, TextEmbedder, TextEmbedding, TEXT_DIM};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
