//! Classical baselines producing the same [`RankedList`](crate::retrieve::RankedList)
//! output as the sequence model: Okapi BM25 over an inverted index and a
//! contrastively trained shared-tower dual encoder with exact search.

mod bm25;
mod dual_encoder;

pub use bm25::{bm25_build, bm25_retrieve, Bm25Index};
pub use dual_encoder::{
    contrastive_loss, de_batch_backward, de_batch_loss, de_retrieve, de_train, DeTrainOptions,
    DualEncoderState,
};
