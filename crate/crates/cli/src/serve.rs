//! Agent side of the JSON-lines protocol, serving a builtin agent.

use std::io::{BufRead, Write};

use anyhow::bail;

use skillprobe_core::agents::protocol::{AgentMessage, HarnessMessage};
use skillprobe_core::agents::{ForwardBiasAgent, KeywordOracleAgent, OracleConfig, StopToGoalAgent, UniformAgent};
use skillprobe_core::Agent;

pub fn named_agent(name: &str, competence: f64) -> anyhow::Result<Box<dyn Agent>> {
    Ok(match name {
        "uniform" => Box::new(UniformAgent),
        "stop_to_goal" => Box::new(StopToGoalAgent),
        "forward_bias" => Box::new(ForwardBiasAgent::default()),
        "keyword_oracle" => Box::new(KeywordOracleAgent::new(OracleConfig::with_competence(competence))),
        other => bail!("unknown agent {other:?}"),
    })
}

fn reply(out: &mut impl Write, msg: &AgentMessage) -> anyhow::Result<()> {
    out.write_all(msg.to_line().as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Answers every `observe` with one `action_dist` until the input closes.
/// A malformed message or agent failure is answered with an `error` and ends
/// the session with an error.
pub fn serve(agent: &mut dyn Agent, input: impl BufRead, mut out: impl Write) -> anyhow::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: HarnessMessage = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(e) => {
                let message = format!("malformed message: {e}");
                reply(&mut out, &AgentMessage::Error { message: message.clone() })?;
                bail!(message);
            }
        };
        let outcome = match msg {
            HarnessMessage::Reset { episode_id, instruction } => agent.reset(&episode_id, &instruction),
            HarnessMessage::Force { next_node } => agent.force(&next_node),
            HarnessMessage::Done => agent.finish(),
            HarnessMessage::Observe { observation } => match agent.act(&observation) {
                Ok(dist) => {
                    let probs = dist.into_iter().map(|(a, p)| (a.as_str().to_owned(), p)).collect();
                    reply(&mut out, &AgentMessage::ActionDist { probs })?;
                    Ok(())
                }
                Err(e) => Err(e),
            },
        };
        if let Err(e) = outcome {
            reply(&mut out, &AgentMessage::Error { message: e.to_string() })?;
            bail!(e);
        }
    }
    Ok(())
}
