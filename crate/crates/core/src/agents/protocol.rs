//! Newline-delimited JSON messages exchanged with external agent processes.
//!
//! The harness sends `reset`, then one `observe` per node; the agent answers
//! every `observe` with exactly one `action_dist`. `force` tells the agent
//! which node it was moved to (also used for its own moves during rollouts)
//! and `done` ends the episode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HarnessMessage {
    Reset { episode_id: String, instruction: String },
    Observe { observation: Observation },
    Force { next_node: String },
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentMessage {
    ActionDist { probs: BTreeMap<String, f64> },
    Error { message: String },
}

impl HarnessMessage {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }
}

impl AgentMessage {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }
}
