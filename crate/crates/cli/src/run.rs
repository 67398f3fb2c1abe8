//! `run`: probes every episode not yet in the result store.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use skillprobe_core::agents::{probe_path, run_episode, ProbeMode, ProbeResult};
use skillprobe_core::{Agent, InterventionEpisode, Skill, Variant, World};

use crate::config::Resolved;
use crate::factory::build_agent;
use crate::gen::{load_episodes, Manifest, TfTask};
use crate::layout::{read_jsonl, write_jsonl, Layout};
use crate::store::{ResultRecord, ResultStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub episode_id: String,
    pub variant: Variant,
    pub error: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub executed: usize,
    pub cached: usize,
    pub errors: usize,
    pub tf_executed: usize,
    pub tf_cached: usize,
}

enum Job<'a> {
    Episode(&'a InterventionEpisode),
    Tf(&'a TfTask),
}

impl Job<'_> {
    fn is_tf(&self) -> bool {
        matches!(self, Job::Tf(_))
    }

    fn id(&self) -> (&str, Variant) {
        match self {
            Job::Episode(e) => (&e.episode_id, e.variant),
            Job::Tf(t) => (&t.task_id, Variant::NoIntervention),
        }
    }

    fn execute(
        &self,
        agent: &mut dyn Agent,
        worlds: &BTreeMap<String, World>,
        max_steps: usize,
    ) -> Result<ProbeResult, String> {
        match self {
            Job::Episode(e) => {
                let world = worlds.get(&e.scene_id).ok_or_else(|| format!("unknown scene {:?}", e.scene_id))?;
                let mode = if e.skill == Skill::Room && e.aux.k.unwrap_or(1) >= 2 {
                    ProbeMode::Rollout { max_steps }
                } else {
                    ProbeMode::TeacherForce
                };
                run_episode(agent, e, world, mode).map(|(r, _)| r).map_err(|e| e.to_string())
            }
            Job::Tf(t) => {
                let world = worlds.get(&t.scene_id).ok_or_else(|| format!("unknown scene {:?}", t.scene_id))?;
                let start = world.bearing(&t.reference[0], &t.reference[1]).map_err(|e| e.to_string())?;
                probe_path(
                    agent,
                    world,
                    &t.task_id,
                    Variant::NoIntervention,
                    &t.instruction,
                    &t.prefix,
                    start,
                    ProbeMode::Rollout { max_steps },
                )
                .map(|(r, _)| r)
                .map_err(|e| e.to_string())
            }
        }
    }
}

/// Forcing-experiment tasks selected by the report settings.
pub fn selected_tf_tasks(r: &Resolved, tasks: Vec<TfTask>) -> Vec<TfTask> {
    if !r.config.report.tf_experiment {
        return Vec::new();
    }
    let cap = r.config.report.tf_max_candidates;
    tasks.into_iter().filter(|t| t.reference.len() >= 2).filter(|t| cap == 0 || t.cut_index <= cap + 1).collect()
}

pub fn cmd_run(r: &Resolved) -> anyhow::Result<RunSummary> {
    let layout = Layout::new(&r.out_dir);
    let manifest = Manifest::load(&layout)?;
    manifest.check(r)?;
    let worlds = manifest.load_worlds(&layout)?;
    let episodes = load_episodes(&layout)?;
    let tf = selected_tf_tasks(r, read_jsonl(&layout.tf_tasks())?);
    let agent_id = build_agent(r).id();

    let mut store = ResultStore::open(layout.results())?;
    let mut tf_store = ResultStore::open(layout.tf_results())?;
    let mut summary = RunSummary::default();
    let mut jobs = Vec::new();
    for e in &episodes {
        let key = (r.config_hash.clone(), agent_id.clone(), e.episode_id.clone(), e.variant);
        if store.contains(&key) {
            summary.cached += 1;
        } else {
            jobs.push(Job::Episode(e));
        }
    }
    for t in &tf {
        let key = (r.config_hash.clone(), agent_id.clone(), t.task_id.clone(), Variant::NoIntervention);
        if tf_store.contains(&key) {
            summary.tf_cached += 1;
        } else {
            jobs.push(Job::Tf(t));
        }
    }
    log::info!("{} probes to run, {} cached", jobs.len(), summary.cached + summary.tf_cached);

    let workers = r.workers().min(jobs.len()).max(1);
    let max_steps = r.config.execution.max_steps;
    let next = AtomicUsize::new(0);
    let mut errors = Vec::new();
    std::thread::scope(|s| -> anyhow::Result<()> {
        let (tx, rx) = mpsc::channel::<(usize, Result<ProbeResult, String>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, worlds, next) = (&jobs, &worlds, &next);
            s.spawn(move || {
                let mut agent = build_agent(r);
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    let out = job.execute(agent.as_mut(), worlds, max_steps);
                    if tx.send((i, out)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        // results are committed in job order so store files do not depend on scheduling
        let mut pending: HashMap<usize, Result<ProbeResult, String>> = HashMap::new();
        let mut cursor = 0;
        let step = (jobs.len() / 10).max(1);
        for (i, out) in rx {
            pending.insert(i, out);
            let mut batch = Vec::new();
            let mut tf_batch = Vec::new();
            while let Some(out) = pending.remove(&cursor) {
                let job = &jobs[cursor];
                match out {
                    Ok(result) => {
                        let rec =
                            ResultRecord { config_hash: r.config_hash.clone(), agent_id: agent_id.clone(), result };
                        if job.is_tf() {
                            tf_batch.push(rec);
                        } else {
                            batch.push(rec);
                        }
                    }
                    Err(error) => {
                        let (id, variant) = job.id();
                        log::warn!("{id} ({variant}): {error}");
                        errors.push(ErrorRecord {
                            kind: if job.is_tf() { "tf" } else { "episode" }.into(),
                            episode_id: id.to_owned(),
                            variant,
                            error,
                        });
                    }
                }
                cursor += 1;
                if cursor % step == 0 {
                    log::info!("{cursor}/{} probes done", jobs.len());
                }
            }
            summary.executed += store.append(batch)?;
            summary.tf_executed += tf_store.append(tf_batch)?;
        }
        Ok(())
    })?;
    summary.errors = errors.len();
    write_jsonl(&layout.errors(), &errors)?;
    if summary.errors > 0 {
        log::warn!("{} probes failed; see {}", summary.errors, layout.errors().display());
    }
    Ok(summary)
}
