//! `report`: scores, plot-ready histograms, effect datasets and statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::bail;
use serde::Serialize;

use skillprobe_core::agents::ProbeResult;
use skillprobe_core::metrics::{
    angular_error_distribution, delta_geodesic_distribution, expected_delta_distance, group_final_distance, join,
    khop_final_distance, mean_metrics, polar_histogram, region_mass, skill_score, stop_probability_by_length,
    vln_metrics, within_cone_mass, EpisodeMetrics, FinalDistance, Probe,
};
use skillprobe_core::stats::StatsError;
use skillprobe_core::{EffectDataset, InterventionEpisode, Skill, Variant, World};

use crate::analysis::{analyze, AnalysisOptions, ExperimentStats};
use crate::config::Resolved;
use crate::factory::{agent_slug, build_agent};
use crate::gen::{load_episodes, Manifest, TfMode, TfTask};
use crate::layout::{read_jsonl, write_file, write_json, Layout};
use crate::run::{selected_tf_tasks, ErrorRecord};
use crate::store::ResultStore;

/// Scores on the 0–100 scale; `None` where the skill was not probed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub agent_id: String,
    pub stop: Option<f64>,
    /// Unweighted mean of the per-direction scores.
    pub turn: Option<f64>,
    pub turn_by_direction: BTreeMap<String, f64>,
    pub object: Option<f64>,
    /// 1-hop room episodes.
    pub room: Option<f64>,
    pub room_by_k: BTreeMap<usize, f64>,
    /// Mean of the four skill scores; `None` unless all are present.
    pub avg: Option<f64>,
}

impl TableRow {
    pub fn csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or("NA".to_owned(), |x| format!("{x:.2}"));
        format!(
            "agent,stop,turn,object,room,avg\n{},{},{},{},{},{}\n",
            csv_field(&self.agent_id),
            f(self.stop),
            f(self.turn),
            f(self.object),
            f(self.room),
            f(self.avg)
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Excluded {
    pub episode_id: String,
    pub variant: Variant,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub dir: PathBuf,
    pub table: TableRow,
    pub n_excluded: usize,
}

#[derive(Serialize)]
struct ExperimentOut<'a> {
    config_hash: &'a str,
    agent_id: &'a str,
    experiments: BTreeMap<String, ExperimentStats>,
}

fn intervention<'a>(probes: &[Probe<'a>], pred: impl Fn(&InterventionEpisode) -> bool) -> Vec<Probe<'a>> {
    probes.iter().copied().filter(|p| p.result.variant == Variant::Intervention && pred(p.episode)).collect()
}

fn score(probes: &[Probe], agent_id: &str) -> anyhow::Result<Option<f64>> {
    if probes.is_empty() {
        return Ok(None);
    }
    Ok(Some(skill_score(probes, agent_id)?.score))
}

fn room_k(e: &InterventionEpisode) -> usize {
    e.aux.k.unwrap_or(1)
}

/// The comparison row from a set of probes.
pub fn table_row(probes: &[Probe], agent_id: &str) -> anyhow::Result<TableRow> {
    let stop = score(&intervention(probes, |e| e.skill == Skill::Stop), agent_id)?;
    let object = score(&intervention(probes, |e| e.skill == Skill::Object), agent_id)?;
    let mut turn_by_direction = BTreeMap::new();
    let dirs: BTreeSet<String> = probes
        .iter()
        .filter(|p| p.episode.skill == Skill::Direction)
        .filter_map(|p| p.episode.target.clone())
        .collect();
    for d in dirs {
        let ps = intervention(probes, |e| e.skill == Skill::Direction && e.target.as_deref() == Some(&d));
        if let Some(s) = score(&ps, agent_id)? {
            turn_by_direction.insert(d, s);
        }
    }
    let turn = (!turn_by_direction.is_empty())
        .then(|| turn_by_direction.values().sum::<f64>() / turn_by_direction.len() as f64);
    let ks: BTreeSet<usize> =
        probes.iter().filter(|p| p.episode.skill == Skill::Room).map(|p| room_k(p.episode)).collect();
    let mut room_by_k = BTreeMap::new();
    for k in ks {
        if let Some(s) = score(&intervention(probes, |e| e.skill == Skill::Room && room_k(e) == k), agent_id)? {
            room_by_k.insert(k, s);
        }
    }
    let room = room_by_k.get(&1).copied();
    let avg = match (stop, turn, object, room) {
        (Some(a), Some(b), Some(c), Some(d)) => Some((a + b + c + d) / 4.0),
        _ => None,
    };
    Ok(TableRow { agent_id: agent_id.to_owned(), stop, turn, turn_by_direction, object, room, room_by_k, avg })
}

fn by_variant<'a>(probes: &[Probe<'a>]) -> BTreeMap<String, Vec<Probe<'a>>> {
    let mut out: BTreeMap<String, Vec<Probe>> = BTreeMap::new();
    for p in probes {
        out.entry(p.result.variant.to_string()).or_default().push(*p);
    }
    out
}

fn world<'w>(worlds: &'w BTreeMap<String, World>, e: &InterventionEpisode) -> Result<&'w World, StatsError> {
    worlds.get(&e.scene_id).ok_or_else(|| StatsError::Response(format!("unknown scene {:?}", e.scene_id)))
}

/// Keeps only probes whose paired variant is also present.
fn complete_pairs<'a>(probes: &[Probe<'a>], excluded: &mut Vec<Excluded>) -> Vec<Probe<'a>> {
    let mut flags: HashMap<&str, BTreeSet<Variant>> = HashMap::new();
    for p in probes {
        flags.entry(p.episode.pair_key()).or_default().insert(p.result.variant);
    }
    let paired = |p: &Probe| {
        let f = &flags[p.episode.pair_key()];
        f.contains(&Variant::Intervention) && f.contains(&Variant::NoIntervention)
    };
    let mut out = Vec::new();
    for p in probes.iter().filter(|p| p.result.variant != Variant::OneStepAhead) {
        if paired(p) {
            out.push(*p);
        } else {
            excluded.push(Excluded {
                episode_id: p.episode.episode_id.clone(),
                variant: p.result.variant,
                reason: "paired variant has no result".into(),
            });
        }
    }
    out
}

fn metric_err(e: skillprobe_core::metrics::MetricsError) -> StatsError {
    StatsError::Response(e.to_string())
}

type Response<'a> = Box<dyn Fn(&Probe) -> Result<f64, StatsError> + 'a>;

struct Experiment<'a> {
    name: String,
    probes: Vec<Probe<'a>>,
    response: Response<'a>,
}

fn experiments<'a>(r: &'a Resolved, probes: &[Probe<'a>], worlds: &'a BTreeMap<String, World>) -> Vec<Experiment<'a>> {
    let skills = &r.config.skills;
    let of = |pred: &dyn Fn(&InterventionEpisode) -> bool| -> Vec<Probe<'a>> {
        probes.iter().copied().filter(|p| pred(p.episode)).collect()
    };
    let mut out = vec![Experiment {
        name: "stop".into(),
        probes: of(&|e| e.skill == Skill::Stop),
        response: Box::new(|p: &Probe| Ok(p.result.final_distribution.stop_prob())),
    }];
    for &d in &skills.directions {
        let region = skills.region_for(d);
        out.push(Experiment {
            name: format!("direction_{d}"),
            probes: of(&|e| e.skill == Skill::Direction && e.direction() == Some(d)),
            response: Box::new(move |p: &Probe| {
                region_mass(p.result, p.episode, &region, world(worlds, p.episode)?).map_err(metric_err)
            }),
        });
    }
    let cone = skills.object.cone_deg;
    out.push(Experiment {
        name: "object".into(),
        probes: of(&|e| e.skill == Skill::Object),
        response: Box::new(move |p: &Probe| {
            within_cone_mass(world(worlds, p.episode)?, p.episode, p.result, cone).map_err(metric_err)
        }),
    });
    for &k in &skills.khop {
        out.push(Experiment {
            name: if k == 1 { "room".into() } else { format!("room_k{k}") },
            probes: of(&|e| e.skill == Skill::Room && room_k(e) == k),
            response: Box::new(|p: &Probe| {
                expected_delta_distance(world(worlds, p.episode)?, p.episode, p.result).map_err(metric_err)
            }),
        });
    }
    out.retain(|e| !e.probes.is_empty());
    out
}

#[derive(Serialize)]
struct LengthPoint {
    length: usize,
    mean: f64,
    n: usize,
}

#[derive(Serialize)]
struct KhopMean {
    k: usize,
    variant: Variant,
    mean_m: f64,
    n: usize,
}

#[derive(Serialize)]
struct KhopOut {
    rows: Vec<FinalDistance>,
    means: Vec<KhopMean>,
}

fn tf_table(
    tasks: &[TfTask],
    results: &[ProbeResult],
    worlds: &BTreeMap<String, World>,
    radius: f64,
) -> anyhow::Result<String> {
    let by_id: HashMap<&str, &ProbeResult> = results.iter().map(|r| (r.episode_id.as_str(), r)).collect();
    let mut rows: BTreeMap<TfMode, Vec<EpisodeMetrics>> = BTreeMap::new();
    let mut sorted: Vec<&TfTask> = tasks.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    for t in sorted {
        let Some(res) = by_id.get(t.task_id.as_str()) else { continue };
        let Some(walk) = &res.rollout_path else { continue };
        let mut pred = t.prefix.clone();
        pred.extend(walk.iter().skip(1).cloned());
        let w = &worlds[&t.scene_id];
        rows.entry(t.mode).or_default().push(vln_metrics(&pred, &t.reference, w, radius)?);
    }
    let mut s = String::from("mode,n,ne,oe,sr,spl,ndtw,sdtw\n");
    for (mode, ms) in rows {
        if let Some(m) = mean_metrics(&ms) {
            writeln!(
                s,
                "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                mode.as_str(),
                ms.len(),
                m.ne,
                m.oe,
                m.sr,
                m.spl,
                m.ndtw,
                m.sdtw
            )?;
        }
    }
    Ok(s)
}

pub fn cmd_report(r: &Resolved) -> anyhow::Result<ReportSummary> {
    let layout = Layout::new(&r.out_dir);
    let manifest = Manifest::load(&layout)?;
    manifest.check(r)?;
    let worlds = manifest.load_worlds(&layout)?;
    let episodes = load_episodes(&layout)?;
    let agent_id = build_agent(r).id();
    let dir = layout.report_dir(&agent_slug(r, &agent_id));
    let rep = &r.config.report;

    let store = ResultStore::open(layout.results())?;
    let known: BTreeSet<&str> = episodes.iter().map(|e| e.episode_id.as_str()).collect();
    let results: Vec<ProbeResult> = store
        .results(&r.config_hash, &agent_id)
        .into_iter()
        .filter(|res| known.contains(res.episode_id.as_str()))
        .collect();
    let errors: Vec<ErrorRecord> = if layout.errors().exists() { read_jsonl(&layout.errors())? } else { Vec::new() };
    let error_of: HashMap<(&str, Variant), &str> =
        errors.iter().map(|e| ((e.episode_id.as_str(), e.variant), e.error.as_str())).collect();

    let have: BTreeSet<(&str, Variant)> = results.iter().map(|r| (r.episode_id.as_str(), r.variant)).collect();
    let mut excluded: Vec<Excluded> = Vec::new();
    for e in &episodes {
        if !have.contains(&(e.episode_id.as_str(), e.variant)) {
            excluded.push(Excluded {
                episode_id: e.episode_id.clone(),
                variant: e.variant,
                reason: error_of
                    .get(&(e.episode_id.as_str(), e.variant))
                    .map_or("no result".to_owned(), |m| format!("error: {m}")),
            });
        }
    }
    let skill_of: HashMap<&str, Skill> = episodes.iter().map(|e| (e.episode_id.as_str(), e.skill)).collect();
    for skill in Skill::ALL {
        let expected = episodes.iter().filter(|e| e.skill == skill).count();
        let got = results.iter().filter(|res| skill_of[res.episode_id.as_str()] == skill).count();
        if r.config.skills.is_enabled(skill) && expected > 0 && got == 0 {
            bail!("no results for skill {skill} (agent {agent_id}); run `skillprobe run` first");
        }
    }

    let probes = join(&results, &episodes)?;
    let table = table_row(&probes, &agent_id)?;
    write_file(&dir.join("table1.csv"), table.csv())?;
    let skill_scores: Vec<_> = Skill::ALL
        .iter()
        .filter_map(|&s| {
            let ps = intervention(&probes, |e| e.skill == s && (s != Skill::Room || room_k(e) == 1));
            (!ps.is_empty()).then(|| skill_score(&ps, &agent_id))
        })
        .collect::<Result<_, _>>()?;
    write_json(
        &dir.join("scores.json"),
        &serde_json::json!({
            "config_hash": r.config_hash,
            "agent_id": agent_id,
            "skill_scores": skill_scores,
            "table": table,
        }),
    )?;

    // stop probability against prefix length
    let stop: Vec<Probe> = probes.iter().copied().filter(|p| p.episode.skill == Skill::Stop).collect();
    let fig3: BTreeMap<String, Vec<LengthPoint>> = stop_probability_by_length(&stop)
        .into_iter()
        .map(|(v, g)| {
            let pts = g.into_iter().map(|(length, m)| LengthPoint { length, mean: m.mean, n: m.n }).collect();
            (v.to_string(), pts)
        })
        .collect();
    write_json(&dir.join("fig3_stop_by_length.json"), &fig3)?;

    let mut fig5 = BTreeMap::new();
    for &d in &r.config.skills.directions {
        let ps: Vec<Probe> = probes
            .iter()
            .copied()
            .filter(|p| p.episode.skill == Skill::Direction && p.episode.direction() == Some(d))
            .collect();
        let mut per = BTreeMap::new();
        for (v, group) in by_variant(&ps) {
            per.insert(v, polar_histogram(&group, &worlds, rep.polar_bin_deg)?);
        }
        if !per.is_empty() {
            fig5.insert(d.to_string(), per);
        }
    }
    write_json(&dir.join("fig5_polar.json"), &fig5)?;

    let object: Vec<Probe> = probes.iter().copied().filter(|p| p.episode.skill == Skill::Object).collect();
    let mut fig6 = BTreeMap::new();
    for (v, group) in by_variant(&object) {
        fig6.insert(
            v,
            angular_error_distribution(&group, &worlds, rep.angular_bin_deg, r.config.skills.object.cone_deg)?,
        );
    }
    write_json(&dir.join("fig6_angular_error.json"), &fig6)?;

    let room: Vec<Probe> = probes.iter().copied().filter(|p| p.episode.skill == Skill::Room).collect();
    let mut fig7: BTreeMap<String, BTreeMap<String, _>> = BTreeMap::new();
    for &k in &r.config.skills.khop {
        let ps: Vec<Probe> = room.iter().copied().filter(|p| room_k(p.episode) == k).collect();
        for (v, group) in by_variant(&ps) {
            fig7.entry(format!("k{k}"))
                .or_default()
                .insert(v, delta_geodesic_distribution(&group, &worlds, rep.delta_bin_m)?);
        }
    }
    write_json(&dir.join("fig7_delta_distance.json"), &fig7)?;

    let rolled: Vec<Probe> = room.iter().copied().filter(|p| p.result.final_node.is_some()).collect();
    let rows = khop_final_distance(&rolled, &worlds)?;
    let means = group_final_distance(&rows)
        .into_iter()
        .map(|((k, variant), m)| KhopMean { k, variant, mean_m: m.mean, n: m.n })
        .collect();
    write_json(&dir.join("fig8_khop.json"), &KhopOut { rows, means })?;

    if rep.tf_experiment {
        let tasks = selected_tf_tasks(r, read_jsonl(&layout.tf_tasks())?);
        let tf_results = ResultStore::open(layout.tf_results())?.results(&r.config_hash, &agent_id);
        write_file(&dir.join("supp_tf.csv"), tf_table(&tasks, &tf_results, &worlds, rep.success_radius_m)?)?;
    }

    let opts = |name: &str| AnalysisOptions {
        n_boot: rep.n_boot,
        level: rep.level,
        seed: r.derived_seed(&format!("bootstrap/{name}"), 0),
        lmm: rep.lmm,
    };
    let mut stats = BTreeMap::new();
    for exp in experiments(r, &probes, &worlds) {
        let paired = complete_pairs(&exp.probes, &mut excluded);
        let entry = match EffectDataset::from_probes(&paired, |p| (exp.response)(p)) {
            Ok(data) => {
                let mut buf = Vec::new();
                data.write_csv(&mut buf)?;
                write_file(&dir.join("effects").join(format!("{}.csv", exp.name)), buf)?;
                analyze(&data, &opts(&exp.name))
            }
            Err(e) => ExperimentStats {
                n_rows: 0,
                n_scenes: 0,
                n_trajectories: 0,
                mean_difference: None,
                lmm: None,
                errors: vec![format!("dataset: {e}")],
            },
        };
        stats.insert(exp.name, entry);
    }
    write_json(
        &dir.join("stats.json"),
        &ExperimentOut { config_hash: &r.config_hash, agent_id: &agent_id, experiments: stats },
    )?;

    excluded.sort_by(|a, b| (&a.episode_id, a.variant).cmp(&(&b.episode_id, b.variant)));
    excluded.dedup_by(|a, b| a.episode_id == b.episode_id && a.variant == b.variant);
    write_json(&dir.join("excluded.json"), &excluded)?;
    log::info!("report written to {}", dir.display());
    Ok(ReportSummary { dir, table, n_excluded: excluded.len() })
}
