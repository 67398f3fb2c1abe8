//! Trajectory–instruction pairs segmented per node, and their truncations.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::world::{Heading, World};

#[derive(Debug, thiserror::Error)]
pub enum AlignmentError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Resolves a scene id to its world.
pub trait SceneLookup {
    fn scene(&self, scene_id: &str) -> Option<&World>;
}

impl SceneLookup for World {
    fn scene(&self, scene_id: &str) -> Option<&World> {
        (self.scene_id() == scene_id).then_some(self)
    }
}

impl SceneLookup for BTreeMap<String, World> {
    fn scene(&self, scene_id: &str) -> Option<&World> {
        self.get(scene_id)
    }
}

/// A trajectory where `sub_instructions[t]` is the text uttered at `nodes[t]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignedTrajectory {
    pub scene_id: String,
    pub trajectory_id: String,
    pub instruction_id: String,
    pub language: String,
    pub nodes: Vec<String>,
    pub sub_instructions: Vec<String>,
}

impl AlignedTrajectory {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Checks the record against its world; the error is a human-readable reason.
    pub fn validate(&self, world: &World) -> Result<(), String> {
        if self.nodes.len() != self.sub_instructions.len() {
            return Err(format!("{} nodes but {} sub-instructions", self.nodes.len(), self.sub_instructions.len()));
        }
        if self.nodes.len() < 2 {
            return Err("trajectory has fewer than 2 nodes".into());
        }
        if let Some(n) = self.nodes.iter().find(|n| !world.contains(n)) {
            return Err(format!("unknown node {n:?}"));
        }
        for pair in self.nodes.windows(2) {
            if !world.is_edge(&pair[0], &pair[1]) {
                return Err(format!("non-adjacent step {} -> {}", pair[0], pair[1]));
            }
        }
        Ok(())
    }

    pub fn full_instruction(&self) -> String {
        join_segments(&self.sub_instructions)
    }
}

/// Identifies the trajectory–instruction pair a candidate was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceKey {
    pub scene_id: String,
    pub trajectory_id: String,
    pub instruction_id: String,
}

/// Prefix `n_1..n_j` of a trajectory with the instruction given before `n_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationCandidate {
    pub source: SourceKey,
    pub tau: Vec<String>,
    pub instruction_text: String,
    pub terminal_node: String,
    pub arrival_heading: Heading,
    /// 1-based cut index `j`; equals `tau.len()`.
    pub cut_index: usize,
    pub next_segment: String,
}

/// Trims each segment and joins with single spaces, skipping empty ones.
pub fn join_segments<S: AsRef<str>>(segments: &[S]) -> String {
    let mut out = String::new();
    for s in segments {
        let s = s.as_ref().trim();
        if s.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(s);
    }
    out
}

/// All cuts `j` in `2..=T-1` of a validated trajectory.
pub fn truncation_candidates(traj: &AlignedTrajectory, world: &World) -> Vec<TruncationCandidate> {
    let t = traj.len();
    if t < 3 {
        return Vec::new();
    }
    let source = SourceKey {
        scene_id: traj.scene_id.clone(),
        trajectory_id: traj.trajectory_id.clone(),
        instruction_id: traj.instruction_id.clone(),
    };
    (2..t)
        .map(|j| {
            let terminal = &traj.nodes[j - 1];
            let previous = &traj.nodes[j - 2];
            TruncationCandidate {
                source: source.clone(),
                tau: traj.nodes[..j].to_vec(),
                instruction_text: join_segments(&traj.sub_instructions[..j - 1]),
                terminal_node: terminal.clone(),
                arrival_heading: world
                    .bearing(previous, terminal)
                    .expect("validated trajectory has distinct consecutive nodes"),
                cut_index: j,
                next_segment: traj.sub_instructions[j - 1].trim().to_owned(),
            }
        })
        .collect()
}

/// A record that failed validation during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub line: usize,
    pub trajectory_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedAlignments {
    pub trajectories: Vec<AlignedTrajectory>,
    pub rejected: Vec<Rejected>,
}

/// Reads Alignment JSONL. Malformed JSON is fatal; records that do not fit
/// their world are collected in `rejected`.
pub fn load_alignments(path: impl AsRef<Path>, scenes: &impl SceneLookup) -> Result<LoadedAlignments, AlignmentError> {
    let path = path.as_ref();
    let io_err = |source| AlignmentError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io_err)?;
    read_alignments(BufReader::new(file), scenes).map_err(|e| match e {
        ReadError::Io(source) => io_err(source),
        ReadError::Parse(e) => e,
    })
}

enum ReadError {
    Io(std::io::Error),
    Parse(AlignmentError),
}

fn read_alignments(reader: impl BufRead, scenes: &impl SceneLookup) -> Result<LoadedAlignments, ReadError> {
    let mut out = LoadedAlignments::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(ReadError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AlignedTrajectory = serde_json::from_str(&line)
            .map_err(|e| ReadError::Parse(AlignmentError::Parse { line: i + 1, message: e.to_string() }))?;
        let verdict = match scenes.scene(&rec.scene_id) {
            None => Err(format!("unknown scene {:?}", rec.scene_id)),
            Some(world) => rec.validate(world),
        };
        match verdict {
            Ok(()) => out.trajectories.push(rec),
            Err(reason) => {
                out.rejected.push(Rejected { line: i + 1, trajectory_id: rec.trajectory_id.clone(), reason })
            }
        }
    }
    Ok(out)
}

pub fn write_alignments<'a>(
    mut out: impl Write,
    trajectories: impl IntoIterator<Item = &'a AlignedTrajectory>,
) -> std::io::Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parameters for random-walk corpora over a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusParams {
    pub n_trajectories: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub instructions_per_trajectory: usize,
}

impl Default for SyntheticCorpusParams {
    fn default() -> Self {
        SyntheticCorpusParams { n_trajectories: 20, min_len: 3, max_len: 8, instructions_per_trajectory: 1 }
    }
}

const STRAIGHT: &[&str] = &[
    "Continue straight through the {room}.",
    "Keep going ahead into the {room}.",
    "Head on past the {room} entrance.",
];
const RIGHT: &[&str] = &["Bear right toward the {room}.", "Veer to the right into the {room}."];
const LEFT: &[&str] = &["Bear left toward the {room}.", "Veer to the left into the {room}."];
const AROUND: &[&str] = &["Go back the way you came into the {room}.", "Double back toward the {room}."];
const FINAL: &[&str] = &["Wait there by the {room} doorway.", "Pause once you reach the {room}."];

/// Random walks that avoid immediate backtracking where possible, with
/// sub-instruction text describing each step.
pub fn generate_synthetic_corpus(world: &World, seed: u64, params: &SyntheticCorpusParams) -> Vec<AlignedTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_len = params.min_len.max(2);
    let max_len = params.max_len.max(min_len);
    let ids: Vec<&str> = world.nodes().iter().map(|n| n.id.as_str()).collect();
    let mut out = Vec::new();
    for t in 0..params.n_trajectories {
        let len = rng.random_range(min_len..=max_len);
        let mut path = vec![ids[rng.random_range(0..ids.len())].to_owned()];
        while path.len() < len {
            let cur = path.last().unwrap();
            let nbrs = world.neighbors(cur).expect("node exists");
            let prev = path.len().checked_sub(2).map(|i| path[i].clone());
            let fresh: Vec<&str> = nbrs.iter().copied().filter(|n| Some(*n) != prev.as_deref()).collect();
            let pool = if fresh.is_empty() { &nbrs } else { &fresh };
            path.push(pool.choose(&mut rng).expect("connected world").to_string());
        }
        for k in 0..params.instructions_per_trajectory.max(1) {
            let mut segments = Vec::with_capacity(path.len());
            for i in 0..path.len() {
                let bank = if i + 1 == path.len() {
                    FINAL
                } else if i == 0 {
                    STRAIGHT
                } else {
                    let heading = world.bearing(&path[i - 1], &path[i]).unwrap();
                    let turn = world.relative_heading(heading, &path[i], &path[i + 1]).unwrap();
                    match turn {
                        t if t.abs() <= 45.0 => STRAIGHT,
                        t if t.abs() >= 135.0 => AROUND,
                        t if t > 0.0 => RIGHT,
                        _ => LEFT,
                    }
                };
                let room_node = if i + 1 == path.len() { &path[i] } else { &path[i + 1] };
                let room = world.room_type(room_node).unwrap();
                let phrase = bank.choose(&mut rng).unwrap();
                segments.push(phrase.replace("{room}", room));
            }
            out.push(AlignedTrajectory {
                scene_id: world.scene_id().to_owned(),
                trajectory_id: format!("{}_t{t:04}", world.scene_id()),
                instruction_id: format!("{}_t{t:04}_i{k}", world.scene_id()),
                language: "en-US".into(),
                nodes: path.clone(),
                sub_instructions: segments,
            });
        }
    }
    out
}
