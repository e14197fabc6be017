//! Synthetic binaural scene generation and clip ingestion.

pub mod binaural;
pub mod corpus;
pub mod io;
pub mod render;

pub use binaural::binauralize;
pub use corpus::{generate_corpus, load_clip, sample_scene, CorpusConfig, Manifest, ManifestRecord};
pub use render::{render_scene, ClipLabels, FrameLabels, SceneSpec, SpeakerLabel, SpeakerSpec};
