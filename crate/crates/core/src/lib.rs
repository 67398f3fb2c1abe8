//! Behavioral tests for navigation instruction-following agents.
//!
//! Trajectories from an aligned corpus are truncated, extended with short
//! skill-specific instructions (stop, turn, walk to an object, walk to a
//! room), and replayed to an agent under teacher forcing. The agent's action
//! distribution at the cut point is compared with and without the extra
//! instruction, scored, and analysed with mixed models that account for
//! episodes sharing scenes and trajectories.

pub mod action;
pub mod agents;
pub mod alignment;
pub mod interventions;
pub mod metrics;
pub mod stats;
pub mod world;

pub use action::{Action, ActionDistribution, DistributionError};
pub use agents::{Agent, AgentError, Observation, ProbeResult};
pub use alignment::{AlignedTrajectory, TruncationCandidate};
pub use interventions::{Direction, DirectionRegion, InterventionEpisode, Skill, TemplateLibrary, Variant};
pub use stats::{EffectDataset, EffectRow, LmmFit};
pub use world::{Heading, World, WorldError};
