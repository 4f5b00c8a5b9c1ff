//! One-dimensional CNN QC classifier: template construction, forward and
//! backward passes, Adam training and model files.

mod adam;
mod engine;
mod io;
mod network;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use engine::{activation_pattern, backward, forward_with_pattern, classify, count_rejections, forward, loss, misclassification_rate, Gradients, GRAD_CHUNK, PROB_CLAMP};
pub use io::{
    load_model, load_model_metadata, parameter_checksum, read_model, save_model, write_model, ModelMetadata,
    Provenance, MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use network::{
    build_template_network, default_linear_widths, LayerKind, LayerSpec, NetworkSpec, Parameters, Shape,
    BRANCH_COUNT, BRANCH_DEPTH, TRUNK_DEPTH,
};
pub use train::{init_live, train, TrainReport, TrainerConfig, MAX_INIT_ATTEMPTS};
