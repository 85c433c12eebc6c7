//! Recording ingestion, per-repetition normalization, context channels,
//! window extraction and patient-level cross-validation splits.

pub mod dataset;
pub mod recording;
pub mod schema;
pub mod split;
pub mod window;

pub use dataset::{Dataset, DatasetManifest, PipelineConfig, RecordingEntry};
pub use recording::{attach_context, load_recording, normalize_repetition, write_recording, Impairment, PareticSide, PatientMeta, Recording, RecordingId, SAMPLE_RATE_HZ};
pub use schema::{ChannelDesc, ChannelKind, ChannelSchema};
pub use split::{split_patients, Fold};
pub use window::{class_distribution, extract_windows, ExtractSummary, Window, WindowConfig};
