//! Recording ingestion, preprocessing, benchmark splits and the synthetic
//! multi-domain generator.

pub mod bit;
pub mod classes;
pub mod ingest;
pub mod manifest;
pub mod preprocess;
pub mod splits;
pub mod synth;
#[cfg(test)]
mod tests;
pub mod windows;

pub use bit::{read_bit_as, read_bit_tensor, write_bit_tensor, BitHeader, BitTensor};
pub use classes::{map_labels, ClassRegistry, MappedLabels, ECG_CLASSES, EEG_CLASSES};
pub use ingest::{ingest_manifest, IngestReport};
pub use manifest::{load_manifest, parse_manifest, write_manifest, Modality, RecordingMeta};
pub use preprocess::{
    normalize_minmax, preprocess_ecg, resample, resample_to_500hz, window_ecg, window_eeg_de, window_signal,
    ECG_WINDOW, EEG_WINDOW,
};
pub use splits::{
    make_ecg_split, make_lodo_iterations, make_lodo_plans, make_split, split_counts, Assignment, SplitPlan, EEG_DOMAINS,
};
pub use synth::{class_frequency, matched_filter_class, synth_domain_dataset, SynthConfig};
pub use windows::{load_dataset, save_dataset, DatasetInfo, Target, Window, WindowDataset};
