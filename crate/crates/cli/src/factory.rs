//! Builds the configured agent.

use sha2::{Digest, Sha256};

use skillprobe_core::agents::{ExternalAgent, ForwardBiasAgent, KeywordOracleAgent, StopToGoalAgent, UniformAgent};
use skillprobe_core::Agent;

use crate::config::Resolved;

pub fn build_agent(r: &Resolved) -> Box<dyn Agent> {
    let a = &r.config.agent;
    if let Some(cmd) = &a.command {
        return Box::new(ExternalAgent::new(cmd.clone(), r.config.execution.timeout_s));
    }
    builtin(a.builtin.as_deref().unwrap_or_default(), r).expect("validated builtin agent name")
}

pub fn builtin(name: &str, r: &Resolved) -> Option<Box<dyn Agent>> {
    let eps = r.config.agent.epsilon_deg.unwrap_or(1.0);
    Some(match name {
        "uniform" => Box::new(UniformAgent),
        "stop_to_goal" => Box::new(StopToGoalAgent),
        "forward_bias" => Box::new(ForwardBiasAgent { epsilon_deg: eps }),
        "keyword_oracle" => Box::new(KeywordOracleAgent::new(r.oracle_config())),
        _ => return None,
    })
}

/// Directory-safe name for an agent's report: the builtin name, suffixed by
/// a digest of the agent id when parameters or a command distinguish it.
pub fn agent_slug(r: &Resolved, agent_id: &str) -> String {
    let a = &r.config.agent;
    let base = match (&a.builtin, &a.command) {
        (Some(b), _) if b != "keyword_oracle" => return b.clone(),
        (Some(b), _) => b.clone(),
        _ => "external".to_owned(),
    };
    let digest = hex::encode(Sha256::digest(agent_id.as_bytes()));
    format!("{base}-{}", &digest[..8])
}
