//! Tokenization, vocabulary, embeddings, dataset readers, the synthetic
//! keyword task, and batching.

pub mod batch;
pub mod dataset;
pub mod glove;
pub mod synth;
pub mod tokenize;
pub mod vocab;

pub use batch::{make_batches, SequenceBatch};
pub use dataset::{encode_examples, read_dataset, DataFormat, EncodedExample, LabelMap, RawExample};
pub use glove::{load_embeddings, random_table, EmbeddingTable};
pub use synth::{synth_keyword_task, SynthDataset};
pub use tokenize::tokenize;
pub use vocab::{Vocab, PAD_ID, UNK_ID};
