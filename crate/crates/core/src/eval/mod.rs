//! Accuracy, calibration, abstention and report emission.

pub mod report;
pub mod scores;

pub use scores::{
    accuracy_by_dnmed, argmax, calibration_report, confusion_matrix, default_temperature_grid, dnmed_trend, ece,
    rank_of, records_from, spearman, temper, tempered_probs, temperature_sweep, threshold_abstain, top_k_accuracy,
    AbstentionRow, CalibrationReport, ClassStats, ConfusionMatrix, DnMedBin, EvalRecord, ReliabilityBin, TemperMode,
};
