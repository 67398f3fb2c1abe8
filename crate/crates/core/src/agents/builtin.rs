use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, Observation};
use crate::action::Action;
use crate::interventions::{DirectionRegion, Skill, TemplateLibrary};
use crate::world::angular_difference;

/// Always stops.
#[derive(Debug, Clone, Copy, Default)]
pub struct StopToGoalAgent;

impl Agent for StopToGoalAgent {
    fn id(&self) -> String {
        "stop_to_goal".into()
    }
    fn reset(&mut self, _: &str, _: &str) -> Result<(), AgentError> {
        Ok(())
    }
    fn act(&mut self, _: &Observation) -> Result<BTreeMap<Action, f64>, AgentError> {
        Ok(BTreeMap::from([(Action::Stop, 1.0)]))
    }
    fn force(&mut self, _: &str) -> Result<(), AgentError> {
        Ok(())
    }
}

/// Equal mass on every neighbor and on `stop`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformAgent;

impl Agent for UniformAgent {
    fn id(&self) -> String {
        "uniform".into()
    }
    fn reset(&mut self, _: &str, _: &str) -> Result<(), AgentError> {
        Ok(())
    }
    fn act(&mut self, obs: &Observation) -> Result<BTreeMap<Action, f64>, AgentError> {
        let p = 1.0 / (obs.neighbors.len() + 1) as f64;
        let mut out: BTreeMap<Action, f64> =
            obs.neighbors.iter().map(|n| (Action::Move(n.node_id.clone()), p)).collect();
        out.insert(Action::Stop, p);
        Ok(out)
    }
    fn force(&mut self, _: &str) -> Result<(), AgentError> {
        Ok(())
    }
}

/// Normalized weights `1 / max(|θ|, epsilon)` over neighbors, keyed by node id.
pub fn forward_bias_weights(obs: &Observation, epsilon_deg: f64) -> BTreeMap<Action, f64> {
    let raw: Vec<(Action, f64)> = obs
        .neighbors
        .iter()
        .map(|n| (Action::Move(n.node_id.clone()), 1.0 / n.rel_heading_deg.abs().max(epsilon_deg)))
        .collect();
    // sum in id order so the result does not depend on neighbor ordering
    let sorted: BTreeMap<Action, f64> = raw.into_iter().collect();
    let total: f64 = sorted.values().sum();
    sorted.into_iter().map(|(a, w)| (a, w / total)).collect()
}

/// Prefers neighbors straight ahead; never stops.
#[derive(Debug, Clone, Copy)]
pub struct ForwardBiasAgent {
    pub epsilon_deg: f64,
}

impl Default for ForwardBiasAgent {
    fn default() -> Self {
        ForwardBiasAgent { epsilon_deg: 1.0 }
    }
}

impl Agent for ForwardBiasAgent {
    fn id(&self) -> String {
        "forward_bias".into()
    }
    fn reset(&mut self, _: &str, _: &str) -> Result<(), AgentError> {
        Ok(())
    }
    fn act(&mut self, obs: &Observation) -> Result<BTreeMap<Action, f64>, AgentError> {
        Ok(forward_bias_weights(obs, self.epsilon_deg))
    }
    fn force(&mut self, _: &str) -> Result<(), AgentError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Mass placed on the correct actions of a recognized skill.
    pub competence: BTreeMap<Skill, f64>,
    /// Stop probability when no template is recognized.
    pub fallback_stop_prob: f64,
    pub epsilon_deg: f64,
    pub object_max_dist_m: f64,
    pub cone_deg: f64,
    pub regions: Vec<DirectionRegion>,
    pub templates: TemplateLibrary,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            competence: Skill::ALL.into_iter().map(|s| (s, 1.0)).collect(),
            fallback_stop_prob: 0.65,
            epsilon_deg: 1.0,
            object_max_dist_m: 3.0,
            cone_deg: 15.0,
            regions: DirectionRegion::defaults(),
            templates: TemplateLibrary::default(),
        }
    }
}

impl OracleConfig {
    pub fn with_competence(competence: f64) -> Self {
        OracleConfig {
            competence: Skill::ALL.into_iter().map(|s| (s, competence)).collect(),
            ..OracleConfig::default()
        }
    }
}

/// Recognizes intervention templates at the end of the instruction and puts a
/// configurable share of its mass on the actions the template asks for.
#[derive(Debug, Clone)]
pub struct KeywordOracleAgent {
    config: OracleConfig,
    instruction: String,
}

impl KeywordOracleAgent {
    pub fn new(config: OracleConfig) -> Self {
        KeywordOracleAgent { config, instruction: String::new() }
    }

    /// The skill recognized in the current instruction and its correct actions
    /// at `obs`, if any.
    pub fn recognize(&self, obs: &Observation) -> Option<(Skill, BTreeSet<Action>)> {
        let text = self.instruction.trim_end();
        let t = &self.config.templates;

        let khop = text.strip_suffix(t.room_khop_suffix.as_str()).map(str::trim_end);
        for candidate in [Some(text), khop].into_iter().flatten() {
            if let Some(name) = fill_slot(candidate, &t.object, "{object}") {
                if let Some(set) = self.object_actions(obs, name) {
                    return Some((Skill::Object, set));
                }
            }
            if let Some(name) = fill_slot(candidate, &t.room, "{room}") {
                let set: BTreeSet<Action> = obs
                    .neighbors
                    .iter()
                    .filter(|n| n.room_type == name)
                    .map(|n| Action::Move(n.node_id.clone()))
                    .collect();
                if !set.is_empty() {
                    return Some((Skill::Room, set));
                }
            }
        }

        let mut directions: Vec<_> = t.direction.iter().collect();
        directions.sort_by_key(|(_, s)| std::cmp::Reverse(s.len()));
        for (dir, template) in directions {
            if ends_with_sentence(text, template) {
                let region = self.config.regions.iter().find(|r| r.direction == *dir)?;
                let set: BTreeSet<Action> = obs
                    .neighbors
                    .iter()
                    .filter(|n| region.contains(n.rel_heading_deg))
                    .map(|n| Action::Move(n.node_id.clone()))
                    .collect();
                return (!set.is_empty()).then_some((Skill::Direction, set));
            }
        }

        if t.stop.iter().any(|s| ends_with_sentence(text, s)) {
            return Some((Skill::Stop, BTreeSet::from([Action::Stop])));
        }
        None
    }

    fn object_actions(&self, obs: &Observation, name: &str) -> Option<BTreeSet<Action>> {
        let cone = self.config.cone_deg;
        let cone_set = |rel: f64| -> BTreeSet<Action> {
            obs.neighbors
                .iter()
                .filter(|n| angular_difference(n.rel_heading_deg, rel) <= cone)
                .map(|n| Action::Move(n.node_id.clone()))
                .collect()
        };
        obs.visible_objects
            .iter()
            .filter(|o| o.name == name && o.distance_m <= self.config.object_max_dist_m)
            .map(|o| (o, cone_set(o.rel_heading_deg)))
            .filter(|(_, set)| !set.is_empty())
            .min_by(|a, b| a.0.distance_m.total_cmp(&b.0.distance_m))
            .map(|(_, set)| set)
    }
}

fn ends_with_sentence(text: &str, sentence: &str) -> bool {
    match text.strip_suffix(sentence) {
        Some(rest) => rest.is_empty() || rest.ends_with(' '),
        None => false,
    }
}

/// If `text` ends with `template` where `slot` is replaced by some word
/// sequence, returns that filler.
fn fill_slot<'a>(text: &'a str, template: &str, slot: &str) -> Option<&'a str> {
    let (pre, post) = template.split_once(slot)?;
    let body = text.strip_suffix(post)?;
    let start = body.rfind(pre)?;
    if start > 0 && !body[..start].ends_with(' ') {
        return None;
    }
    let filler = &body[start + pre.len()..];
    (!filler.is_empty()).then_some(filler)
}

impl Agent for KeywordOracleAgent {
    fn id(&self) -> String {
        let c: Vec<String> = self.config.competence.iter().map(|(s, v)| format!("{s}={v}")).collect();
        format!("keyword_oracle[{}]", c.join(","))
    }

    fn reset(&mut self, _: &str, instruction: &str) -> Result<(), AgentError> {
        self.instruction = instruction.to_owned();
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<BTreeMap<Action, f64>, AgentError> {
        let all: Vec<Action> = obs
            .neighbors
            .iter()
            .map(|n| Action::Move(n.node_id.clone()))
            .chain(std::iter::once(Action::Stop))
            .collect();

        let Some((skill, correct)) = self.recognize(obs) else {
            let stop = self.config.fallback_stop_prob;
            let mut out: BTreeMap<Action, f64> = forward_bias_weights(obs, self.config.epsilon_deg)
                .into_iter()
                .map(|(a, w)| (a, w * (1.0 - stop)))
                .collect();
            if obs.neighbors.is_empty() {
                out.insert(Action::Stop, 1.0);
            } else {
                out.insert(Action::Stop, stop);
            }
            return Ok(out);
        };

        let competence = self.config.competence.get(&skill).copied().unwrap_or(0.0);
        let others: Vec<&Action> = all.iter().filter(|a| !correct.contains(a)).collect();
        let on_correct = if others.is_empty() { 1.0 } else { competence };
        let mut out = BTreeMap::new();
        for a in &correct {
            out.insert(a.clone(), on_correct / correct.len() as f64);
        }
        for a in others {
            out.insert(a.clone(), (1.0 - on_correct) / (all.len() - correct.len()) as f64);
        }
        Ok(out)
    }

    fn force(&mut self, _: &str) -> Result<(), AgentError> {
        Ok(())
    }
}
