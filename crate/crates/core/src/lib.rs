//! Koopman lifted linear predictors identified from dither-quantized data.
//!
//! The crate covers the whole pipeline: uniform quantizers with subtractive
//! dither ([`quantization`]), lifting dictionaries ([`dictionary`]), plant
//! simulators ([`dynamics`]), least-squares and ridge identification
//! ([`ident`]), rollouts ([`predictor`]), condensed linear MPC ([`mpc`]) and
//! Monte-Carlo word-length sweeps ([`harness`]).

// NaN must fail validation, so `!(x > 0.0)` is preferred to `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dictionary;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod ident;
pub mod mpc;
pub mod predictor;
pub mod quantization;
pub mod seeds;

pub use dictionary::{Dictionary, DictionaryKind, Observable};
pub use dynamics::{
    generate_training_set, rk4_step, simulate, PlantKind, PlantModel, Trajectory, TrajectorySet,
};
pub use error::{Error, Result};
pub use quantization::{
    dither_quantize_vector, error_moment_report, sample_dither_errors, DitherStream, ErrorSampleSet, MomentReport,
    Quantizer, QuantizerBank,
};
pub use harness::{
    emit_outputs, fit_log_slope, run_sweep, ExperimentConfig, MpcScenario, Prepared, SweepRecord, SweepResult,
};
pub use ident::{
    assemble_snapshots, edmd_fit, estimate_gap, fit_decoder, identify, mismatch_bound, ridge_fit,
    EstimateGap, FitReport, GramAccumulator, LiftedModel, LinearPredictor, QuantizationConfig,
    QuantizationMode, QuantizationTag, SnapshotSet,
};
pub use mpc::{
    condense, run_closed_loop, solve_qp, ClosedLoopRun, Condenser, MpcConfig, QpProblem, QpSolution,
    Reference,
};
pub use predictor::{predict_trajectory, prediction_error, rollout, PredictionRun};
