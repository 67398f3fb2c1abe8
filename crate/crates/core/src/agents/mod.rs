//! Agents and the executors that probe them.
//!
//! An agent sees one [`Observation`] per visited node and answers with a
//! distribution over its neighbors and `stop`. [`teacher_force`] drives the
//! agent along an episode's trajectory regardless of what it predicts and
//! records only the distribution at the terminal node; [`rollout`] then lets
//! the agent continue on its own argmax actions.

mod builtin;
mod external;
pub mod protocol;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionDistribution, DistributionError};
use crate::interventions::{InterventionEpisode, Variant};
use crate::world::{Heading, World, WorldError};

pub use builtin::{
    forward_bias_weights, ForwardBiasAgent, KeywordOracleAgent, OracleConfig, StopToGoalAgent, UniformAgent,
};
pub use external::ExternalAgent;

/// Default cap on self-directed moves after forcing.
pub const DEFAULT_MAX_STEPS: usize = 15;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("failed to spawn agent {command:?}: {message}")]
    Spawn { command: String, message: String },
    #[error("agent did not answer within {seconds}s")]
    Timeout { seconds: f64 },
    #[error("protocol violation: {message} (message: {raw})")]
    Protocol { message: String, raw: String },
    #[error("invalid action distribution at {node}: {source}")]
    Distribution { node: String, source: DistributionError },
    #[error("agent process exited: {0}")]
    Exited(String),
    #[error("agent I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborView {
    pub node_id: String,
    pub rel_heading_deg: f64,
    pub distance_m: f64,
    pub room_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub name: String,
    pub rel_heading_deg: f64,
    pub distance_m: f64,
}

/// Symbolic view of the agent's surroundings at one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub current_node: String,
    pub agent_heading: Heading,
    pub neighbors: Vec<NeighborView>,
    pub visible_objects: Vec<ObjectView>,
    pub step_index: usize,
}

impl Observation {
    pub fn at(world: &World, node: &str, heading: Heading, step_index: usize) -> Result<Self, WorldError> {
        let neighbors = world
            .neighbors(node)?
            .into_iter()
            .map(|n| {
                Ok(NeighborView {
                    node_id: n.to_owned(),
                    rel_heading_deg: world.relative_heading(heading, node, n)?,
                    distance_m: world.edge_length(node, n).expect("neighbor edge exists"),
                    room_type: world.room_type(n)?.to_owned(),
                })
            })
            .collect::<Result<Vec<_>, WorldError>>()?;
        let visible_objects = world
            .visible_objects(node)?
            .into_iter()
            .map(|(obj, vis)| ObjectView {
                name: obj.name.clone(),
                rel_heading_deg: heading.relative_to(Heading::new(vis.heading_deg)),
                distance_m: vis.distance_m,
            })
            .collect();
        Ok(Observation {
            current_node: node.to_owned(),
            agent_heading: heading,
            neighbors,
            visible_objects,
            step_index,
        })
    }

    pub fn neighbor_ids(&self) -> Vec<&str> {
        self.neighbors.iter().map(|n| n.node_id.as_str()).collect()
    }
}

/// An instruction-following policy under test.
pub trait Agent: Send {
    fn id(&self) -> String;

    /// Starts a new episode.
    fn reset(&mut self, episode_id: &str, instruction: &str) -> Result<(), AgentError>;

    /// Distribution over the observation's neighbors and `stop`.
    fn act(&mut self, observation: &Observation) -> Result<BTreeMap<Action, f64>, AgentError>;

    /// Informs the agent that it was moved to `next_node`.
    fn force(&mut self, next_node: &str) -> Result<(), AgentError>;

    /// Ends the current episode.
    fn finish(&mut self) -> Result<(), AgentError> {
        Ok(())
    }
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn reset(&mut self, episode_id: &str, instruction: &str) -> Result<(), AgentError> {
        (**self).reset(episode_id, instruction)
    }
    fn act(&mut self, observation: &Observation) -> Result<BTreeMap<Action, f64>, AgentError> {
        (**self).act(observation)
    }
    fn force(&mut self, next_node: &str) -> Result<(), AgentError> {
        (**self).force(next_node)
    }
    fn finish(&mut self) -> Result<(), AgentError> {
        (**self).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub episode_id: String,
    pub variant: Variant,
    pub final_distribution: ActionDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_path: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_node: Option<String>,
}

/// What a single probe should do once the forced prefix is exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    TeacherForce,
    Rollout { max_steps: usize },
}

/// Counts of the messages exchanged during one probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProbeTrace {
    pub observations: usize,
    pub forced_moves: usize,
    pub free_moves: usize,
}

fn observe(
    agent: &mut dyn Agent,
    world: &World,
    node: &str,
    heading: Heading,
    step: usize,
) -> Result<ActionDistribution, AgentError> {
    let obs = Observation::at(world, node, heading, step)?;
    let raw = agent.act(&obs)?;
    ActionDistribution::validate(raw, &obs.neighbor_ids())
        .map_err(|source| AgentError::Distribution { node: node.to_owned(), source })
}

/// Forces `agent` along `path` starting with `start_heading`, records the
/// distribution at the last node, and optionally continues with argmax moves.
#[allow(clippy::too_many_arguments)]
pub fn probe_path(
    agent: &mut dyn Agent,
    world: &World,
    episode_id: &str,
    variant: Variant,
    instruction: &str,
    path: &[String],
    start_heading: Heading,
    mode: ProbeMode,
) -> Result<(ProbeResult, ProbeTrace), AgentError> {
    assert!(!path.is_empty(), "probe path is empty");
    let mut trace = ProbeTrace::default();
    agent.reset(episode_id, instruction)?;
    let mut heading = start_heading;
    let mut dist = None;
    for (i, node) in path.iter().enumerate() {
        if i > 0 {
            heading = world.bearing(&path[i - 1], node)?;
        }
        let d = observe(agent, world, node, heading, i)?;
        trace.observations += 1;
        if let Some(next) = path.get(i + 1) {
            if !world.is_edge(node, next) {
                return Err(WorldError::UnknownNode(format!("{node} -> {next} is not an edge")).into());
            }
            agent.force(next)?;
            trace.forced_moves += 1;
        } else {
            dist = Some(d);
        }
    }
    let final_distribution = dist.expect("path is nonempty");

    let (rollout_path, final_node) = match mode {
        ProbeMode::TeacherForce => (None, None),
        ProbeMode::Rollout { max_steps } => {
            let mut current = path.last().unwrap().clone();
            let mut walked = vec![current.clone()];
            let mut d = final_distribution.clone();
            let mut step = path.len();
            while let Action::Move(next) = d.argmax() {
                if trace.free_moves >= max_steps {
                    break;
                }
                agent.force(&next)?;
                trace.free_moves += 1;
                heading = world.bearing(&current, &next)?;
                current = next;
                walked.push(current.clone());
                if trace.free_moves >= max_steps {
                    break;
                }
                d = observe(agent, world, &current, heading, step)?;
                trace.observations += 1;
                step += 1;
            }
            (Some(walked), Some(current))
        }
    };
    agent.finish()?;
    Ok((
        ProbeResult { episode_id: episode_id.to_owned(), variant, final_distribution, rollout_path, final_node },
        trace,
    ))
}

/// Teacher-forces `agent` through `episode.tau` and records its distribution at the terminal node.
pub fn teacher_force(
    agent: &mut dyn Agent,
    episode: &InterventionEpisode,
    world: &World,
) -> Result<ProbeResult, AgentError> {
    run_episode(agent, episode, world, ProbeMode::TeacherForce).map(|(r, _)| r)
}

/// Teacher forcing followed by at most `max_steps` argmax moves.
pub fn rollout(
    agent: &mut dyn Agent,
    episode: &InterventionEpisode,
    world: &World,
    max_steps: usize,
) -> Result<ProbeResult, AgentError> {
    run_episode(agent, episode, world, ProbeMode::Rollout { max_steps }).map(|(r, _)| r)
}

pub fn run_episode(
    agent: &mut dyn Agent,
    episode: &InterventionEpisode,
    world: &World,
    mode: ProbeMode,
) -> Result<(ProbeResult, ProbeTrace), AgentError> {
    if episode.tau.len() < 2 {
        return Err(WorldError::SameNode(episode.terminal_node().to_owned()).into());
    }
    let start = world.bearing(&episode.tau[0], &episode.tau[1])?;
    probe_path(agent, world, &episode.episode_id, episode.variant, &episode.instruction, &episode.tau, start, mode)
}
