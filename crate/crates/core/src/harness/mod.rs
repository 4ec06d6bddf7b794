//! Experiment harness: configuration, training, segmentation, evaluation
//! and report emission.

pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod report;
pub mod segment;
pub mod sweep;
pub mod train;

pub use config::{Mode, Preset, RunConfig, SplitSizes};
pub use dataset::{generate_phantom_dataset, load_split, load_split_capped, load_subject, training_slices, PhantomSpec, SPLITS};
pub use evaluate::{
    error_map, evaluate_model, evaluate_predictions, slice_dsc_by_tissue, ErrorMap, Evaluation, TissueAgreement,
};
pub use report::{read_metrics_csv, recompute_report, write_evaluation};
pub use segment::{segment_volume, Segmentation, SliceTiming, TimingReport};
pub use sweep::{run_sweep, write_sweep_csv, SweepRow, SWEEP_WEIGHTS};
pub use train::{load_trained, save_trained, train, EpochLog, TrainOutcome};
