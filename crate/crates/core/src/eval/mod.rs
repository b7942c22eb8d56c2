//! Sample-quality metrics and the comparison report.

pub mod auc;
pub mod classifier;
pub mod emd;
pub mod hist;
pub mod observables;
pub mod report;

pub use auc::auc;
pub use classifier::{features, train_classifier, ClassifierHyper, ClassifierResult};
pub use emd::{emd_1d, emd_weighted, profile_emd};
pub use hist::{deviation_band, BandFlag, DeviationBand, Histogram, BAND};
pub use observables::{observable, ObservableKind, ObservableValue, Shower};
pub use report::{build_report, EvalReport, ObservableEntry, ObservableReport, ReportInputs, SampleSet, TableRow};
