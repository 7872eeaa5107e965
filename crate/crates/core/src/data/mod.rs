//! TREC-6 ingestion, batching and the checkpoint format.

mod batch;
pub mod checkpoint;
mod synthetic;
mod trec;

pub use batch::batches;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use synthetic::{render_dataset, synthetic_dataset};
pub use trec::{
    class_index, decode_line, load_dataset, parse_dataset, parse_trec_line, Dataset, Example,
    Split, CLASS_LABELS, NUM_CLASSES,
};
