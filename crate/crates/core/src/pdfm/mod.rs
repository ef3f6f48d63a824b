//! Partitioned GraphSAGE autoencoder.
//!
//! Node features are encoded by one GeLU layer, passed through one round of
//! message passing (per-edge-set FC+ReLU transforms of the seed's sampled
//! neighbours, pooled by sum and added to a linear self transform), then mapped
//! by a linear layer to the embedding. The embedding is split into disjoint
//! partitions and each source is reconstructed by a linear head that reads only
//! its partition.

mod config;
mod model;
mod table;
mod train;

pub use config::{Partition, PdfmConfig, Pooling};
pub use model::{
    embed, encode_inputs, init_model, reconstruct, sage_forward, Batch, BatchLoss, DecoderHead, ForwardCache,
    PdfmGrads, PdfmModel,
};
pub use table::EmbeddingTable;
pub use train::{
    evaluate_loss, export_embeddings, model_inputs, read_training_log, split_seeds, train_pdfm, write_training_log,
    EpochLog, TrainOutcome,
};

#[cfg(test)]
mod tests;
