//! Open-circuit switch fault diagnosis for a three-level NPC inverter.
//!
//! The crate covers the whole chain: a switching-level model of the
//! inverter with a star RL load ([`sim`]), amplitude-invariant slope
//! features of the phase currents ([`features`]), a random forest classifier
//! ([`forest`]), dataset generation and the cross-load experiment
//! ([`pipeline`]) and a framed online diagnosis engine ([`stream`]).

pub mod config;
pub mod error;
pub mod fault;
pub mod features;
pub mod forest;
pub mod pipeline;
pub mod sim;
pub mod stream;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use fault::{ClassSet, FaultClass, FaultSet, LabelCode, Phase, SwitchId};
pub use features::{feature_vector, FeatureMode, FeatureVector};
pub use forest::{
    evaluate, read_model, train_forest, write_model, Evaluation, Forest, ForestParams, Samples,
};
pub use pipeline::{Dataset, ExperimentSetup, LoadScaling, RobustnessReport};
pub use sim::{simulate, CurrentSample, CurrentTrace, FaultSchedule, Scenario, SimConfig};
pub use stream::{serve, SessionSummary, StreamOptions, WireFrame};
