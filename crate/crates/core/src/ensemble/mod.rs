//! The question classifier: contextual encoder features and GloVe vectors are
//! concatenated per token, passed through two stacked LSTMs, and the final hidden
//! state of the second layer is classified.

mod lstm;
mod model;
mod train;

pub use lstm::{
    lstm_cell_step, lstm_layer_forward, lstm_packed, LstmCell, LstmState, PackPlan, PackedOutput,
    FORGET_BIAS,
};
pub use model::{
    argmax, concat_features, encode_dataset, ensemble_forward, predict_batch, EncodedExample,
    EnsembleClassifier, EnsembleConfig, QuestionClassifier, ELECTRA_PREFIX, EVAL_CHUNK,
    GLOVE_TABLE,
};
pub use train::{evaluate, train_ensemble, EpochMetrics, Evaluation, TrainConfig, TrainTrace};
