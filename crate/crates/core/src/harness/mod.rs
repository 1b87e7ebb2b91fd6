//! Experiment orchestration: configuration, the three-stage protocol,
//! metrics, seed sweeps and file outputs.

pub mod config;
pub mod io;
pub mod metrics;
pub mod protocol;
pub mod sweep;

pub use config::{EstimationConfig, EvaluationConfig, ExperimentConfig, GridConfig, SweepAxis, SweepConfig};
pub use metrics::{detection_error, detection_error_rate, nmse, DetectionError, MetricsReport, StageTimings};
pub use protocol::{
    prepare, prepare_with_scenario, run_protocol, run_protocol_with_scenario, run_stage_one, run_stage_three,
    run_stage_two, Context, NoiseModel, ProtocolOutput, StageOne, StageThree, StageTwo,
};
pub use sweep::{summary_means, sweep, write_sweep_outputs, SummaryRow, SweepResult, SweepRow};
