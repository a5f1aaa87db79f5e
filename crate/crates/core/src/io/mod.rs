//! File formats: WAV audio, binary feature/embedding archives, text score
//! and trial-key files.

pub mod archive;
pub mod embeddings;
pub mod model;
pub mod scores;
pub mod wav;

pub use archive::{read_features, write_features};
pub use embeddings::{read_embeddings, write_embeddings};
pub use model::{
    load_embedder, load_ivector_extractor, load_ubm, save_embedder, save_ivector_extractor,
    save_ubm,
};
pub use scores::{read_scores, read_trial_key, write_scores, write_trial_key};
pub use wav::{encode_wav, parse_wav, read_wav, write_wav, WavFormat};
