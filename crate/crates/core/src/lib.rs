//! Active learning of species ranges.
//!
//! A species range is modeled as a logistic classifier over per-cell feature
//! vectors on a global grid. Instead of training from scratch, the learner
//! keeps a fixed set of candidate range models, weights them by how well
//! they explain the presence/absence observations gathered so far, and
//! picks the next cell to survey from that weighted committee.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, with `*32` variants for single precision.
//!
//! ```
//! use activerange::{build_fibonacci_grid, FeatureEncoder, Grid};
//!
//! let grid: Grid = build_fibonacci_grid(100, &FeatureEncoder::TrigLoc, None).unwrap();
//! assert_eq!(grid.len(), 100);
//! assert_eq!(grid.feature_dim(), 4);
//! ```

pub mod chart;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geo;
pub mod hypothesis;
pub mod learner;
pub mod oracle;
pub mod scalar;
pub mod strategies;
pub mod synth;
mod textio;

pub use chart::render_map_chart;
pub use error::{Error, Result};
pub use eval::{average_precision, map_at, map_auc, AggregateCurve, RunTrace, StepRecord};
pub use experiment::{
    run_experiment, run_on_world, run_species, write_outputs, ExperimentConfig, ExperimentOutcome, RunSettings,
    WorldSource,
};
pub use geo::{build_fibonacci_grid, encode_trig, load_grid, Cell, FeatureEncoder, SurveyGrid};
pub use hypothesis::{
    committee_prediction, log_likelihood, predict, update_posterior, Hypothesis, HypothesisSet, Observation,
    ObservationLog, PosteriorState, VoteMode,
};
pub use learner::{fit_logistic, weighted_average_model, FittedModel, TrainConfig};
pub use oracle::{query_label, GroundTruth, NoiseModel};
pub use scalar::Scalar;
pub use strategies::{Family, Selector, StrategySpec};
pub use synth::SynthConfig;

pub type Grid = SurveyGrid<f64>;
pub type Grid32 = SurveyGrid<f32>;
pub type Hypotheses = HypothesisSet<f64>;
pub type Hypotheses32 = HypothesisSet<f32>;
pub type Posterior = PosteriorState<f64>;
pub type Posterior32 = PosteriorState<f32>;
pub type Model = FittedModel<f64>;
pub type Model32 = FittedModel<f32>;
pub type World = experiment::World<f64>;
pub type World32 = experiment::World<f32>;
