//! `gen`: worlds, aligned corpus, intervention episodes and forcing tasks.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use skillprobe_core::alignment::{generate_synthetic_corpus, load_alignments, truncation_candidates, write_alignments};
use skillprobe_core::interventions::{
    build_direction_episodes, build_object_episodes, build_room_episodes, build_stop_episodes, write_episodes,
};
use skillprobe_core::world::{generate_synthetic_world, load_world};
use skillprobe_core::{AlignedTrajectory, InterventionEpisode, Skill, TruncationCandidate, World};

use crate::config::Resolved;
use crate::layout::{read_json, write_file, write_json, write_jsonl, Layout};

/// Full-instruction navigation from the start (`free`) or after forcing the
/// agent along the first `cut_index` nodes (`forced`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfTask {
    pub task_id: String,
    pub scene_id: String,
    pub trajectory_id: String,
    pub mode: TfMode,
    pub cut_index: usize,
    pub instruction: String,
    pub prefix: Vec<String>,
    pub reference: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfMode {
    Forced,
    Free,
}

impl TfMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TfMode::Forced => "forced",
            TfMode::Free => "free",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene_id: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub gen_hash: String,
    pub generated_unix_s: u64,
    pub scenes: Vec<SceneFile>,
    pub n_trajectories: usize,
    pub n_rejected: usize,
    pub n_candidates: usize,
    pub n_episodes: usize,
    /// Episode counts per skill and variant.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// Room episode counts per hop limit.
    pub room_by_k: BTreeMap<usize, usize>,
    pub n_tf_tasks: usize,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn load(layout: &Layout) -> anyhow::Result<Self> {
        let path = layout.manifest();
        if !path.exists() {
            bail!("{} not found; run `skillprobe gen` first", path.display());
        }
        read_json(&path)
    }

    /// Fails unless these outputs were generated by `r`.
    pub fn check(&self, r: &Resolved) -> anyhow::Result<()> {
        if self.gen_hash != r.gen_hash {
            bail!(
                "episodes in {} were generated from a different configuration; rerun `skillprobe gen`",
                r.out_dir.display()
            );
        }
        Ok(())
    }

    pub fn load_worlds(&self, layout: &Layout) -> anyhow::Result<BTreeMap<String, World>> {
        self.scenes
            .iter()
            .map(|s| {
                let w = load_world(layout.worlds_dir().join(&s.file))?;
                Ok((s.scene_id.clone(), w))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct RejectedLine<'a> {
    line: usize,
    trajectory_id: &'a str,
    reason: &'a str,
}

fn rename_scene(world: &World, scene_id: &str) -> anyhow::Result<World> {
    let mut v: serde_json::Value = serde_json::from_str(&world.to_json_string())?;
    v["scene_id"] = scene_id.into();
    Ok(World::from_json_str(&v.to_string())?)
}

pub fn load_scenes(r: &Resolved) -> anyhow::Result<Vec<World>> {
    let src = &r.config.world;
    let mut worlds = Vec::new();
    for f in &src.files {
        worlds.push(load_world(f).with_context(|| f.display().to_string())?);
    }
    if let Some(s) = &src.synthetic {
        for i in 0..s.n_scenes {
            let w =
                generate_synthetic_world(r.derived_seed("world", i as u64), &s.params).context("world.synthetic")?;
            worlds.push(rename_scene(&w, &format!("scene_{i:03}"))?);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for w in &worlds {
        if !seen.insert(w.scene_id().to_owned()) {
            bail!("world.files: scene id {:?} occurs twice", w.scene_id());
        }
    }
    Ok(worlds)
}

pub struct Generated {
    pub manifest: Manifest,
    pub episodes: Vec<InterventionEpisode>,
    pub tf_tasks: Vec<TfTask>,
}

fn tf_tasks(traj: &AlignedTrajectory, candidates: &[TruncationCandidate]) -> Vec<TfTask> {
    let task = |mode: TfMode, cut: usize| TfTask {
        task_id: format!(
            "{}/{}/{}",
            traj.scene_id,
            traj.instruction_id,
            match mode {
                TfMode::Free => "free".to_owned(),
                TfMode::Forced => format!("j{cut}"),
            }
        ),
        scene_id: traj.scene_id.clone(),
        trajectory_id: traj.trajectory_id.clone(),
        mode,
        cut_index: cut,
        instruction: traj.full_instruction(),
        prefix: traj.nodes[..cut].to_vec(),
        reference: traj.nodes.clone(),
    };
    let mut out = vec![task(TfMode::Free, 1)];
    out.extend(candidates.iter().map(|c| task(TfMode::Forced, c.cut_index)));
    out
}

/// Scenes, aligned corpus, rejected input lines and generated artifacts.
pub type Generation = (Vec<World>, Vec<AlignedTrajectory>, Vec<String>, Generated);

/// Builds every artifact in memory.
pub fn generate(r: &Resolved) -> anyhow::Result<Generation> {
    let worlds = load_scenes(r)?;
    let by_id: BTreeMap<String, World> = worlds.iter().map(|w| (w.scene_id().to_owned(), w.clone())).collect();
    let mut warnings = Vec::new();
    let mut rejected_lines = Vec::new();

    let corpus: Vec<AlignedTrajectory> = match (&r.config.corpus.file, &r.config.corpus.synthetic) {
        (Some(path), _) => {
            let loaded = load_alignments(path, &by_id)?;
            for rej in &loaded.rejected {
                rejected_lines.push(serde_json::to_string(&RejectedLine {
                    line: rej.line,
                    trajectory_id: &rej.trajectory_id,
                    reason: &rej.reason,
                })?);
            }
            loaded.trajectories
        }
        (None, Some(params)) => worlds
            .iter()
            .enumerate()
            .flat_map(|(i, w)| generate_synthetic_corpus(w, r.derived_seed("corpus", i as u64), params))
            .collect(),
        (None, None) => bail!("corpus: set either `file` or `synthetic`"),
    };
    if !rejected_lines.is_empty() {
        warnings.push(format!("{} alignment records rejected (see rejected.jsonl)", rejected_lines.len()));
    }

    let skills = &r.config.skills;
    let templates = &r.templates;
    let mut episodes = Vec::new();
    let mut tasks = Vec::new();
    let mut n_candidates = 0;
    for (i, world) in worlds.iter().enumerate() {
        let trajs: Vec<&AlignedTrajectory> = corpus.iter().filter(|t| t.scene_id == world.scene_id()).collect();
        let mut cands = Vec::new();
        for t in &trajs {
            let c = truncation_candidates(t, world);
            tasks.extend(tf_tasks(t, &c));
            cands.extend(c);
        }
        n_candidates += cands.len();
        if skills.is_enabled(Skill::Stop) {
            episodes.extend(build_stop_episodes(&cands, templates, r.derived_seed("stop", i as u64)));
        }
        if skills.is_enabled(Skill::Direction) {
            for &d in &skills.directions {
                episodes.extend(build_direction_episodes(&cands, &skills.region_for(d), templates, world));
            }
        }
        if skills.is_enabled(Skill::Object) {
            episodes.extend(build_object_episodes(&cands, world, templates, &skills.object));
        }
        if skills.is_enabled(Skill::Room) {
            for &k in &skills.khop {
                episodes.extend(build_room_episodes(&cands, world, templates, k));
            }
        }
    }
    if n_candidates == 0 {
        warnings.push("no truncation candidates: every trajectory has fewer than 3 nodes".into());
    }
    if episodes.is_empty() {
        warnings.push("no intervention episodes were generated".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut room_by_k: BTreeMap<usize, usize> = BTreeMap::new();
    for e in &episodes {
        *counts.entry(e.skill.to_string()).or_default().entry(e.variant.to_string()).or_default() += 1;
        if e.skill == Skill::Room {
            *room_by_k.entry(e.aux.k.unwrap_or(1)).or_default() += 1;
        }
    }
    let manifest = Manifest {
        gen_hash: r.gen_hash.clone(),
        generated_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        scenes: worlds
            .iter()
            .map(|w| SceneFile {
                scene_id: w.scene_id().to_owned(),
                file: format!("{}.json", w.scene_id().replace(['/', '\\'], "_")),
            })
            .collect(),
        n_trajectories: corpus.len(),
        n_rejected: rejected_lines.len(),
        n_candidates,
        n_episodes: episodes.len(),
        counts,
        room_by_k,
        n_tf_tasks: tasks.len(),
        warnings,
    };
    Ok((worlds, corpus, rejected_lines, Generated { manifest, episodes, tf_tasks: tasks }))
}

/// Generates and writes all artifacts into the output directory.
pub fn cmd_gen(r: &Resolved) -> anyhow::Result<Manifest> {
    let layout = Layout::new(&r.out_dir);
    let (worlds, corpus, rejected, g) = generate(r)?;
    std::fs::create_dir_all(layout.worlds_dir())?;
    for (w, s) in worlds.iter().zip(&g.manifest.scenes) {
        write_file(&layout.worlds_dir().join(&s.file), w.to_json_string())?;
    }
    let mut buf = Vec::new();
    write_alignments(&mut buf, &corpus)?;
    write_file(&layout.alignments(), buf)?;
    let mut rej = rejected.join("\n");
    if !rej.is_empty() {
        rej.push('\n');
    }
    write_file(&layout.rejected(), rej)?;
    let mut buf = Vec::new();
    write_episodes(&mut buf, &g.episodes)?;
    write_file(&layout.episodes(), buf)?;
    write_jsonl(&layout.tf_tasks(), &g.tf_tasks)?;
    write_json(&layout.manifest(), &g.manifest)?;
    log::info!(
        "generated {} episodes from {} candidates in {} scenes",
        g.manifest.n_episodes,
        g.manifest.n_candidates,
        worlds.len()
    );
    Ok(g.manifest)
}

pub fn load_episodes(layout: &Layout) -> anyhow::Result<Vec<InterventionEpisode>> {
    let path = layout.episodes();
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    skillprobe_core::interventions::read_episodes(std::io::BufReader::new(file))
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
