//! Skill-specific filtering of truncation candidates and construction of
//! intervention episodes.
//!
//! Every builder emits a `no_intervention` episode next to each `intervention`
//! episode; both share a pair key (the episode id without its variant suffix)
//! and the same correct-action set, so responses can be compared pairwise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::alignment::TruncationCandidate;
use crate::world::{angular_difference, wrap_signed, Heading, ObjectRecord, Visibility, World, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Stop,
    Direction,
    Object,
    Room,
}

impl Skill {
    pub const ALL: [Skill; 4] = [Skill::Stop, Skill::Direction, Skill::Object, Skill::Room];

    pub fn as_str(self) -> &'static str {
        match self {
            Skill::Stop => "stop",
            Skill::Direction => "direction",
            Skill::Object => "object",
            Skill::Room => "room",
        }
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Skill {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Skill::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown skill {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoIntervention,
    Intervention,
    OneStepAhead,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NoIntervention => "no_intervention",
            Variant::Intervention => "intervention",
            Variant::OneStepAhead => "one_step_ahead",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Right,
    BackRight,
    Backward,
    BackLeft,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Forward,
        Direction::Right,
        Direction::BackRight,
        Direction::Backward,
        Direction::BackLeft,
        Direction::Left,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Right => "right",
            Direction::BackRight => "back_right",
            Direction::Backward => "backward",
            Direction::BackLeft => "back_left",
            Direction::Left => "left",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction::ALL.into_iter().find(|d| d.as_str() == s).ok_or_else(|| format!("unknown direction {s:?}"))
    }
}

/// A direction with its arc `(start, start + width]` of relative headings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionRegion {
    pub direction: Direction,
    /// Exclusive lower bound in degrees.
    pub start_deg: f64,
    pub width_deg: f64,
}

impl DirectionRegion {
    /// Six 60° sectors centred on forward, right, back-right, backward, back-left, left.
    pub fn default_for(direction: Direction) -> Self {
        let start_deg = match direction {
            Direction::Forward => -30.0,
            Direction::Right => 30.0,
            Direction::BackRight => 90.0,
            Direction::Backward => 150.0,
            Direction::BackLeft => -150.0,
            Direction::Left => -90.0,
        };
        DirectionRegion { direction, start_deg, width_deg: 60.0 }
    }

    pub fn defaults() -> Vec<DirectionRegion> {
        Direction::ALL.into_iter().map(Self::default_for).collect()
    }

    /// Whether a relative heading falls inside the half-open arc.
    pub fn contains(&self, rel_deg: f64) -> bool {
        let offset = (rel_deg - self.start_deg).rem_euclid(360.0);
        offset > 0.0 && offset <= self.width_deg
    }
}

/// Template text appended as intervention instructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateLibrary {
    pub stop: Vec<String>,
    pub direction: BTreeMap<Direction, String>,
    /// Must contain `{object}`.
    pub object: String,
    /// Must contain `{room}`.
    pub room: String,
    pub room_khop_suffix: String,
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        let direction = [
            (Direction::Forward, "Walk forward."),
            (Direction::Backward, "Turn around and walk forward."),
            (Direction::Left, "Turn left and walk forward."),
            (Direction::Right, "Turn right and walk forward."),
            (Direction::BackLeft, "Turn around and go to your right."),
            (Direction::BackRight, "Turn around and go to your left."),
        ]
        .into_iter()
        .map(|(d, s)| (d, s.to_owned()))
        .collect();
        TemplateLibrary {
            stop: [
                "This is your destination.",
                "This is your end point.",
                "You reached your destination.",
                "You are done.",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            direction,
            object: "Walk towards the {object}.".into(),
            room: "Walk towards the {room}.".into(),
            room_khop_suffix: "This is your destination.".into(),
        }
    }
}

impl TemplateLibrary {
    pub fn check(&self) -> Result<(), String> {
        if self.stop.is_empty() {
            return Err("templates.stop is empty".into());
        }
        if let Some(d) = Direction::ALL.iter().find(|d| !self.direction.contains_key(d)) {
            return Err(format!("templates.direction is missing {d}"));
        }
        if !self.object.contains("{object}") {
            return Err("templates.object must contain {object}".into());
        }
        if !self.room.contains("{room}") {
            return Err("templates.room must contain {room}".into());
        }
        Ok(())
    }

    pub fn object_text(&self, name: &str) -> String {
        self.object.replace("{object}", name)
    }

    pub fn room_text(&self, room: &str, k: usize) -> String {
        let base = self.room.replace("{room}", room);
        if k >= 2 {
            format!("{base} {}", self.room_khop_suffix)
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAux {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_heading_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nearest_target_node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

/// One probe: a truncated trajectory, an instruction variant and the actions
/// that count as a correct grounding of the intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEpisode {
    pub episode_id: String,
    pub scene_id: String,
    pub trajectory_id: String,
    pub cut_index: usize,
    pub skill: Skill,
    pub variant: Variant,
    pub target: Option<String>,
    pub tau: Vec<String>,
    pub instruction: String,
    pub correct_actions: BTreeSet<Action>,
    #[serde(default)]
    pub aux: EpisodeAux,
}

impl InterventionEpisode {
    pub fn terminal_node(&self) -> &str {
        self.tau.last().expect("tau is nonempty")
    }

    /// Agent heading at the terminal node: the bearing of the last step.
    pub fn arrival_heading(&self, world: &World) -> Result<Heading, WorldError> {
        let n = self.tau.len();
        if n < 2 {
            return Err(WorldError::SameNode(self.terminal_node().to_owned()));
        }
        world.bearing(&self.tau[n - 2], &self.tau[n - 1])
    }

    /// Identifier shared by all variants built from the same candidate and target.
    pub fn pair_key(&self) -> &str {
        self.episode_id.rsplit_once('/').map(|(k, _)| k).unwrap_or(&self.episode_id)
    }

    pub fn direction(&self) -> Option<Direction> {
        match self.skill {
            Skill::Direction => self.target.as_deref()?.parse().ok(),
            _ => None,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn episode(
    candidate: &TruncationCandidate,
    skill: Skill,
    variant: Variant,
    target: Option<&str>,
    key_extra: Option<String>,
    instruction: String,
    correct_actions: BTreeSet<Action>,
    aux: EpisodeAux,
) -> InterventionEpisode {
    let src = &candidate.source;
    let mut id = format!("{}/{}/j{}/{}", src.scene_id, src.instruction_id, candidate.cut_index, skill);
    if let Some(t) = target {
        id.push('/');
        id.push_str(&t.replace([' ', '/'], "_"));
    }
    if let Some(extra) = key_extra {
        id.push('/');
        id.push_str(&extra);
    }
    id.push('/');
    id.push_str(variant.as_str());
    InterventionEpisode {
        episode_id: id,
        scene_id: src.scene_id.clone(),
        trajectory_id: src.trajectory_id.clone(),
        cut_index: candidate.cut_index,
        skill,
        variant,
        target: target.map(str::to_owned),
        tau: candidate.tau.clone(),
        instruction,
        correct_actions,
        aux,
    }
}

fn append(base: &str, suffix: &str) -> String {
    if base.is_empty() {
        suffix.to_owned()
    } else {
        format!("{base} {suffix}")
    }
}

/// Implicit, explicit and one-step-ahead stop probes for every candidate.
/// The explicit stop template is drawn uniformly per candidate from a stream seeded by `seed`.
pub fn build_stop_episodes(
    candidates: &[TruncationCandidate],
    templates: &TemplateLibrary,
    seed: u64,
) -> Vec<InterventionEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let correct: BTreeSet<Action> = [Action::Stop].into();
    let mut out = Vec::with_capacity(candidates.len() * 3);
    for c in candidates {
        let template = &templates.stop[rng.random_range(0..templates.stop.len())];
        let mk =
            |variant, text| episode(c, Skill::Stop, variant, None, None, text, correct.clone(), EpisodeAux::default());
        out.push(mk(Variant::NoIntervention, c.instruction_text.clone()));
        out.push(mk(Variant::Intervention, append(&c.instruction_text, template)));
        out.push(mk(Variant::OneStepAhead, append(&c.instruction_text, &c.next_segment)));
    }
    out
}

fn neighbor_headings(candidate: &TruncationCandidate, world: &World) -> Vec<(String, f64)> {
    let terminal = &candidate.terminal_node;
    world
        .neighbors(terminal)
        .expect("candidate terminal node exists")
        .into_iter()
        .map(|n| {
            let rel =
                world.relative_heading(candidate.arrival_heading, terminal, n).expect("neighbors are distinct nodes");
            (n.to_owned(), rel)
        })
        .collect()
}

/// At least one neighbor inside the region and at least two outside it.
pub fn filter_direction(candidate: &TruncationCandidate, region: &DirectionRegion, world: &World) -> bool {
    let (inside, outside): (Vec<_>, Vec<_>) =
        neighbor_headings(candidate, world).into_iter().partition(|(_, rel)| region.contains(*rel));
    !inside.is_empty() && outside.len() >= 2
}

/// Neighbors of the terminal node whose relative heading lies in `region`.
pub fn direction_correct_actions(
    candidate: &TruncationCandidate,
    region: &DirectionRegion,
    world: &World,
) -> BTreeSet<Action> {
    neighbor_headings(candidate, world)
        .into_iter()
        .filter(|(_, rel)| region.contains(*rel))
        .map(|(n, _)| Action::Move(n))
        .collect()
}

/// Pairs for candidates passing [`filter_direction`]; others are skipped.
pub fn build_direction_episodes(
    candidates: &[TruncationCandidate],
    region: &DirectionRegion,
    templates: &TemplateLibrary,
    world: &World,
) -> Vec<InterventionEpisode> {
    let template = &templates.direction[&region.direction];
    let target = region.direction.as_str();
    let mut out = Vec::new();
    for c in candidates {
        if !filter_direction(c, region, world) {
            continue;
        }
        let correct = direction_correct_actions(c, region, world);
        for (variant, text) in [
            (Variant::NoIntervention, c.instruction_text.clone()),
            (Variant::Intervention, append(&c.instruction_text, template)),
        ] {
            out.push(episode(
                c,
                Skill::Direction,
                variant,
                Some(target),
                None,
                text,
                correct.clone(),
                EpisodeAux::default(),
            ));
        }
    }
    out
}

/// Eligibility rules for object-seeking episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectFilterConfig {
    pub allow_list: Vec<String>,
    pub exclude_list: Vec<String>,
    pub max_dist_m: f64,
    pub cone_deg: f64,
    pub min_neighbors: usize,
}

impl Default for ObjectFilterConfig {
    fn default() -> Self {
        let allow = [
            "chair",
            "table",
            "picture",
            "cushion",
            "curtain",
            "plant",
            "cabinet",
            "gym equipment",
            "stool",
            "chest of drawers",
            "bed",
            "towel",
            "bathtub",
            "tv monitor",
            "seating",
        ];
        let exclude = ["door", "window", "shelving", "railing", "wall", "stairs", "column", "beam", "ceiling", "floor"];
        ObjectFilterConfig {
            allow_list: allow.iter().map(|s| s.to_string()).collect(),
            exclude_list: exclude.iter().map(|s| s.to_string()).collect(),
            max_dist_m: 3.0,
            cone_deg: 15.0,
            min_neighbors: 2,
        }
    }
}

/// Objects a candidate can reasonably be asked to walk towards.
pub fn filter_object<'w>(
    candidate: &TruncationCandidate,
    world: &'w World,
    config: &ObjectFilterConfig,
) -> Vec<(&'w ObjectRecord, &'w Visibility)> {
    let terminal = &candidate.terminal_node;
    let nbrs = world.neighbors(terminal).expect("candidate terminal node exists");
    if nbrs.len() < config.min_neighbors {
        return Vec::new();
    }
    let bearings: Vec<f64> = nbrs.iter().map(|n| world.bearing(terminal, n).expect("distinct").degrees()).collect();
    world
        .visible_objects(terminal)
        .expect("candidate terminal node exists")
        .into_iter()
        .filter(|(obj, vis)| {
            vis.distance_m <= config.max_dist_m
                && config.allow_list.contains(&obj.name)
                && !config.exclude_list.contains(&obj.name)
                && bearings.iter().any(|&b| angular_difference(b, vis.heading_deg) <= config.cone_deg)
        })
        .collect()
}

/// Neighbors whose bearing is within `cone_deg` of an absolute object heading.
pub fn cone_correct_actions(world: &World, node: &str, object_heading_deg: f64, cone_deg: f64) -> BTreeSet<Action> {
    world
        .neighbors(node)
        .expect("node exists")
        .into_iter()
        .filter(|n| {
            let b = world.bearing(node, n).expect("distinct").degrees();
            angular_difference(b, object_heading_deg) <= cone_deg
        })
        .map(|n| Action::Move(n.to_owned()))
        .collect()
}

/// One pair per candidate targeting its nearest eligible object (ties: smallest id).
pub fn build_object_episodes(
    candidates: &[TruncationCandidate],
    world: &World,
    templates: &TemplateLibrary,
    config: &ObjectFilterConfig,
) -> Vec<InterventionEpisode> {
    let mut out = Vec::new();
    for c in candidates {
        let chosen = filter_object(c, world, config)
            .into_iter()
            .min_by(|a, b| a.1.distance_m.total_cmp(&b.1.distance_m).then_with(|| a.0.id.cmp(&b.0.id)));
        let Some((obj, vis)) = chosen else { continue };
        let correct = cone_correct_actions(world, &c.terminal_node, vis.heading_deg, config.cone_deg);
        let aux = EpisodeAux { object_heading_deg: Some(vis.heading_deg), ..EpisodeAux::default() };
        for (variant, text) in [
            (Variant::NoIntervention, c.instruction_text.clone()),
            (Variant::Intervention, append(&c.instruction_text, &templates.object_text(&obj.name))),
        ] {
            out.push(episode(
                c,
                Skill::Object,
                variant,
                Some(&obj.name),
                Some(obj.id.clone()),
                text,
                correct.clone(),
                aux.clone(),
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomTarget {
    pub room_type: String,
    pub nearest_target_node: String,
    pub distance_m: f64,
}

/// Room types other than the terminal node's own that occur within `k` hops,
/// each with the geodesically nearest node of that type.
pub fn filter_room_khop(candidate: &TruncationCandidate, world: &World, k: usize) -> Vec<RoomTarget> {
    let terminal = &candidate.terminal_node;
    let own = world.room_type(terminal).expect("candidate terminal node exists");
    let rooms: BTreeSet<&str> = world
        .hop_ball(terminal, k.max(1))
        .expect("candidate terminal node exists")
        .into_iter()
        .map(|(n, _)| world.room_type(n).expect("node exists"))
        .filter(|r| *r != own)
        .collect();
    rooms
        .into_iter()
        .map(|r| {
            let (node, d) =
                world.nearest_node_with_room(terminal, r).expect("node exists").expect("room type occurs in the ball");
            RoomTarget { room_type: r.to_owned(), nearest_target_node: node, distance_m: d }
        })
        .collect()
}

/// Neighbors whose room type is `room_type`.
pub fn room_correct_actions(world: &World, node: &str, room_type: &str) -> BTreeSet<Action> {
    world
        .neighbors(node)
        .expect("node exists")
        .into_iter()
        .filter(|n| world.room_type(n).expect("node exists") == room_type)
        .map(|n| Action::Move(n.to_owned()))
        .collect()
}

/// Pairs per (candidate, reachable room type). When no neighbor has the target
/// room type (only possible for `k >= 2`), the correct set falls back to the
/// neighbors that shorten the geodesic distance to the nearest target node.
pub fn build_room_episodes(
    candidates: &[TruncationCandidate],
    world: &World,
    templates: &TemplateLibrary,
    k: usize,
) -> Vec<InterventionEpisode> {
    let mut out = Vec::new();
    for c in candidates {
        let terminal = &c.terminal_node;
        for target in filter_room_khop(c, world, k) {
            let mut correct = room_correct_actions(world, terminal, &target.room_type);
            if correct.is_empty() {
                correct = world
                    .neighbors(terminal)
                    .expect("node exists")
                    .into_iter()
                    .filter(|n| world.geodesic_distance(n, &target.nearest_target_node).unwrap() < target.distance_m)
                    .map(|n| Action::Move(n.to_owned()))
                    .collect();
            }
            let aux = EpisodeAux {
                nearest_target_node: Some(target.nearest_target_node.clone()),
                k: Some(k),
                ..EpisodeAux::default()
            };
            for (variant, text) in [
                (Variant::NoIntervention, c.instruction_text.clone()),
                (Variant::Intervention, append(&c.instruction_text, &templates.room_text(&target.room_type, k))),
            ] {
                out.push(episode(
                    c,
                    Skill::Room,
                    variant,
                    Some(&target.room_type),
                    Some(format!("k{k}")),
                    text,
                    correct.clone(),
                    aux.clone(),
                ));
            }
        }
    }
    out
}

pub fn write_episodes<'a>(
    mut out: impl Write,
    episodes: impl IntoIterator<Item = &'a InterventionEpisode>,
) -> std::io::Result<()> {
    for e in episodes {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_episodes(reader: impl BufRead) -> Result<Vec<InterventionEpisode>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Relative heading of each neighbor of the episode's terminal node.
pub fn terminal_neighbor_headings(
    episode: &InterventionEpisode,
    world: &World,
) -> Result<Vec<(String, f64)>, WorldError> {
    let heading = episode.arrival_heading(world)?;
    let terminal = episode.terminal_node();
    world
        .neighbors(terminal)?
        .into_iter()
        .map(|n| Ok((n.to_owned(), wrap_signed(world.relative_heading(heading, terminal, n)?))))
        .collect()
}
