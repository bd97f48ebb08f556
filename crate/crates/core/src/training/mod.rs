//! Hyperparameter training, data handling and the experiment harnesses.

pub mod adagrad;
pub mod compare;
pub mod data;
pub mod report;
pub mod synth;
pub mod track;

pub use adagrad::{adagrad_step, AdagradState};
pub use compare::{precond_comparison, write_comparison, CompareRow, ExperimentGrid};
pub use data::{load_csv, parse_csv, write_csv, LoadedData, Standardizer};
pub use report::{emit_report, parse_report, RunRecord, REPORT_HEADER};
pub use track::{split, average_folds, default_theta, train_and_track, Method, Task, TrackConfig, TrackResult};
