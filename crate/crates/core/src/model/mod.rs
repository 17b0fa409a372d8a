//! Toy two-tower audio-text model: encoders, weights, file format and pretraining.

mod encode;
mod io;
mod pretrain;
mod vocab;
mod weights;

pub use encode::{
    argmax, audio_encode, audio_encode_mels, audio_features, audio_forward, class_logits, class_probs, pool_frames,
    text_encode, text_encode_on, text_forward, AudioVars, TextVars,
};
pub use io::{load_weights, save_weights, weights_from_bytes, weights_to_bytes, FORMAT_VERSION, MAGIC};
pub use pretrain::{
    contrastive_pretrain, dataset_loss, infonce_loss, retrieval_accuracy, PretrainConfig, PretrainOutcome,
    TrainingPair,
};
pub use vocab::{tokenize, ClassPromptSet, Vocabulary, PAD_TOKEN, UNKNOWN_TOKEN};
pub use weights::{init_weights, DomainVector, ModelDims, ModelWeights, Pooling, DEFAULT_TEMPERATURE, INIT_STD};
