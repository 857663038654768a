mod metrics;
mod predict;
mod report;


pub use metrics::{
    aggregate_repeats, argmax, macro_f1, multiclass_accuracy, multiclass_confusion, per_class_f1, Aggregate,
    ClassCounts, ConfusionCounts, MacroF1, DEFAULT_THRESHOLD,
};
pub use predict::{
    embed_windows, evaluate_model, export_embeddings, predict, predict_logits, read_embeddings, write_embeddings,
    EmbeddingRow,
};
pub use report::{
    read_report, render_tables, write_report, ComplexityReport, MetricsReport, Report, Section, RUN_LOG_FILE,
    SUMMARY_FILE, TABLE_FILE,
};
