//! Chance-constrained trajectory planning for an ego vehicle following a
//! target on a curved lane.
//!
//! A [`Scenario`] is transcribed into a nonlinear program by direct
//! collocation ([`build_continuous_nlp`]) or by a forward-Euler baseline
//! ([`build_discrete_nlp`]), solved with an augmented-Lagrangian method
//! ([`solve`]), and scored by the experiment pipelines in [`harness`].

pub mod chance;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod nlp;
pub mod scenario;
pub mod solve;
pub mod transcribe;
pub mod vehicle;

pub use chance::{ChanceMode, ChanceParams, TargetModel};
pub use error::{
    ChanceError, GeometryError, HarnessError, ScenarioError, SolveError, TranscribeError,
};
pub use geometry::{CenterLane, LaneSpec, Point2, RoadBounds};
pub use scenario::{Realization, Scenario};
pub use solve::{initial_guess, solve, SolveOptions, SolveReport, SolveStatus};
pub use transcribe::{
    build_continuous_nlp, build_discrete_nlp, EgoTrajectory, NlpProblem, TimeGrid, Transcription,
};
pub use vehicle::{ControlInput, EgoState, Limits, Weights};
