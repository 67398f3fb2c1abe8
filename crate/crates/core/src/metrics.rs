//! Per-skill measurements over probe results, the skill score, and standard
//! path-fidelity metrics.
//!
//! Aggregations sort their inputs by episode id first so floating-point sums
//! are independent of the order results were produced in.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::agents::ProbeResult;
use crate::alignment::SceneLookup;
use crate::interventions::{DirectionRegion, InterventionEpisode, Skill, Variant};
use crate::world::{angular_difference, World, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no episodes to aggregate")]
    Empty,
    #[error("result for unknown episode {0:?}")]
    UnknownEpisode(String),
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("episode {0:?} has no object heading")]
    MissingObjectHeading(String),
    #[error("episode {0:?} has no nearest target node")]
    MissingTarget(String),
    #[error("episode {0:?} has no direction target")]
    MissingDirection(String),
    #[error("episode {episode:?} is {found}, expected {expected}")]
    WrongKind { episode: String, found: String, expected: String },
    #[error("episode {0:?} has no rollout")]
    MissingRollout(String),
    #[error("bin width {0} does not divide the range")]
    BadBinWidth(f64),
    #[error("path step {0} -> {1} is not an edge")]
    InvalidPath(String, String),
    #[error("path is empty")]
    EmptyPath,
    #[error(transparent)]
    World(#[from] WorldError),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// A probe result with the episode it answers.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    pub episode: &'a InterventionEpisode,
    pub result: &'a ProbeResult,
}

/// Pairs results with episodes by id, sorted by episode id.
pub fn join<'a>(results: &'a [ProbeResult], episodes: &'a [InterventionEpisode]) -> Result<Vec<Probe<'a>>> {
    let by_id: HashMap<&str, &InterventionEpisode> = episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
    let mut out = results
        .iter()
        .map(|r| {
            by_id
                .get(r.episode_id.as_str())
                .map(|&episode| Probe { episode, result: r })
                .ok_or_else(|| MetricsError::UnknownEpisode(r.episode_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.episode.episode_id.cmp(&b.episode.episode_id));
    Ok(out)
}

fn world_for<'w>(scenes: &'w impl SceneLookup, e: &InterventionEpisode) -> Result<&'w World> {
    scenes.scene(&e.scene_id).ok_or_else(|| MetricsError::UnknownScene(e.scene_id.clone()))
}

/// Total probability the agent put on the episode's correct actions.
pub fn correct_mass(probe: &Probe) -> f64 {
    probe.result.final_distribution.mass_on(&probe.episode.correct_actions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub mean: f64,
    pub n: usize,
}

/// Mean stop probability per variant and trajectory-prefix length.
pub fn stop_probability_by_length(probes: &[Probe]) -> BTreeMap<Variant, BTreeMap<usize, GroupMean>> {
    let mut acc: BTreeMap<Variant, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for p in probes {
        let slot = acc.entry(p.result.variant).or_default().entry(p.episode.tau.len()).or_default();
        slot.0 += p.result.final_distribution.stop_prob();
        slot.1 += 1;
    }
    acc.into_iter()
        .map(|(v, groups)| {
            let groups =
                groups.into_iter().map(|(len, (sum, n))| (len, GroupMean { mean: sum / n as f64, n })).collect();
            (v, groups)
        })
        .collect()
}

/// Relative heading of each neighbor of the episode's terminal node, as seen on arrival.
fn neighbor_rel_headings(world: &World, e: &InterventionEpisode) -> Result<HashMap<String, f64>> {
    let heading = e.arrival_heading(world)?;
    let t = e.terminal_node();
    world.neighbors(t)?.into_iter().map(|n| Ok((n.to_owned(), world.relative_heading(heading, t, n)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarHistogram {
    pub bin_width_deg: f64,
    /// Lower (exclusive) edge of each bin, starting at -180.
    pub bin_starts_deg: Vec<f64>,
    pub bin_masses: Vec<f64>,
    pub stop_rate: f64,
    pub n_episodes: usize,
}

fn bin_count(range: f64, width: f64) -> Result<usize> {
    let n = range / width;
    if (width.is_nan() || width <= 0.0) || (n - n.round()).abs() > 1e-9 || n < 1.0 {
        return Err(MetricsError::BadBinWidth(width));
    }
    Ok(n.round() as usize)
}

/// Bin index of `value` for half-open bins `(lo + i*w, lo + (i+1)*w]`; the
/// lowest edge itself falls in bin 0.
fn half_open_bin(value: f64, lo: f64, width: f64, n: usize) -> usize {
    let i = ((value - lo) / width).ceil() as isize - 1;
    i.clamp(0, n as isize - 1) as usize
}

/// Averages per-episode neighbor mass into relative-heading bins.
pub fn polar_histogram(probes: &[Probe], scenes: &impl SceneLookup, bin_width_deg: f64) -> Result<PolarHistogram> {
    let n_bins = bin_count(360.0, bin_width_deg)?;
    let mut bins = vec![0.0; n_bins];
    let mut stop = 0.0;
    for p in probes {
        let world = world_for(scenes, p.episode)?;
        let rel = neighbor_rel_headings(world, p.episode)?;
        for (node, prob) in p.result.final_distribution.moves() {
            let theta = rel[node];
            bins[half_open_bin(theta, -180.0, bin_width_deg, n_bins)] += prob;
        }
        stop += p.result.final_distribution.stop_prob();
    }
    let n = probes.len();
    let scale = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    Ok(PolarHistogram {
        bin_width_deg,
        bin_starts_deg: (0..n_bins).map(|i| -180.0 + i as f64 * bin_width_deg).collect(),
        bin_masses: bins.into_iter().map(|b| b * scale).collect(),
        stop_rate: stop * scale,
        n_episodes: n,
    })
}

/// Neighbor probability whose relative heading lies in `region`.
pub fn region_mass(
    result: &ProbeResult,
    episode: &InterventionEpisode,
    region: &DirectionRegion,
    world: &World,
) -> Result<f64> {
    let rel = neighbor_rel_headings(world, episode)?;
    Ok(result.final_distribution.moves().filter(|(n, _)| region.contains(rel[*n])).map(|(_, p)| p).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularErrorHistogram {
    pub bin_width_deg: f64,
    /// Normalized over all accumulated neighbor mass; empty mass gives zeros.
    pub bin_masses: Vec<f64>,
    /// Per-episode probability on neighbors within the cone, keyed by episode id.
    pub within_cone: Vec<(String, f64)>,
    pub cone_deg: f64,
    pub stop_rate: f64,
}

/// Probability on neighbors whose bearing is within `cone_deg` of the object heading.
pub fn within_cone_mass(world: &World, e: &InterventionEpisode, r: &ProbeResult, cone_deg: f64) -> Result<f64> {
    let heading = e.aux.object_heading_deg.ok_or_else(|| MetricsError::MissingObjectHeading(e.episode_id.clone()))?;
    let t = e.terminal_node();
    let mut mass = 0.0;
    for (n, p) in r.final_distribution.moves() {
        if angular_difference(world.bearing(t, n)?.degrees(), heading) <= cone_deg {
            mass += p;
        }
    }
    Ok(mass)
}

/// Distribution of absolute angular error between chosen neighbors and the target object.
pub fn angular_error_distribution(
    probes: &[Probe],
    scenes: &impl SceneLookup,
    bin_width_deg: f64,
    cone_deg: f64,
) -> Result<AngularErrorHistogram> {
    let n_bins = bin_count(180.0, bin_width_deg)?;
    let mut bins = vec![0.0; n_bins];
    let mut within = Vec::with_capacity(probes.len());
    let mut stop = 0.0;
    for p in probes {
        let e = p.episode;
        let world = world_for(scenes, e)?;
        let heading =
            e.aux.object_heading_deg.ok_or_else(|| MetricsError::MissingObjectHeading(e.episode_id.clone()))?;
        let t = e.terminal_node();
        for (n, prob) in p.result.final_distribution.moves() {
            let err = angular_difference(world.bearing(t, n)?.degrees(), heading);
            bins[half_open_bin(err, 0.0, bin_width_deg, n_bins)] += prob;
        }
        within.push((e.episode_id.clone(), within_cone_mass(world, e, p.result, cone_deg)?));
        stop += p.result.final_distribution.stop_prob();
    }
    let total: f64 = bins.iter().sum();
    if total > 0.0 {
        bins.iter_mut().for_each(|b| *b /= total);
    }
    Ok(AngularErrorHistogram {
        bin_width_deg,
        bin_masses: bins,
        within_cone: within,
        cone_deg,
        stop_rate: if probes.is_empty() { 0.0 } else { stop / probes.len() as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaDistanceDistribution {
    /// Expected Δd per episode; positive means moving closer to the target room.
    pub expected: Vec<(String, f64)>,
    pub bin_width_m: f64,
    /// `(bin lower edge, mean probability mass)`, pooled over episodes.
    pub histogram: Vec<(f64, f64)>,
}

/// `Σ P(n) · (d(terminal, target) − d(n, target))`; stopping contributes 0.
pub fn expected_delta_distance(world: &World, e: &InterventionEpisode, r: &ProbeResult) -> Result<f64> {
    Ok(delta_terms(world, e, r)?.iter().map(|(d, p)| d * p).sum())
}

fn delta_terms(world: &World, e: &InterventionEpisode, r: &ProbeResult) -> Result<Vec<(f64, f64)>> {
    let target =
        e.aux.nearest_target_node.as_deref().ok_or_else(|| MetricsError::MissingTarget(e.episode_id.clone()))?;
    let base = world.geodesic_distance(e.terminal_node(), target)?;
    let mut out = Vec::new();
    for (a, p) in r.final_distribution.iter() {
        let delta = match a {
            Action::Stop => 0.0,
            Action::Move(n) => base - world.geodesic_distance(n, target)?,
        };
        out.push((delta, p));
    }
    Ok(out)
}

pub fn delta_geodesic_distribution(
    probes: &[Probe],
    scenes: &impl SceneLookup,
    bin_width_m: f64,
) -> Result<DeltaDistanceDistribution> {
    if bin_width_m.is_nan() || bin_width_m <= 0.0 {
        return Err(MetricsError::BadBinWidth(bin_width_m));
    }
    let mut expected = Vec::with_capacity(probes.len());
    let mut bins: BTreeMap<i64, f64> = BTreeMap::new();
    for p in probes {
        let world = world_for(scenes, p.episode)?;
        let terms = delta_terms(world, p.episode, p.result)?;
        expected.push((p.episode.episode_id.clone(), terms.iter().map(|(d, q)| d * q).sum()));
        for (d, q) in terms {
            *bins.entry((d / bin_width_m).floor() as i64).or_default() += q;
        }
    }
    let n = probes.len().max(1) as f64;
    Ok(DeltaDistanceDistribution {
        expected,
        bin_width_m,
        histogram: bins.into_iter().map(|(i, m)| (i as f64 * bin_width_m, m / n)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalDistance {
    pub episode_id: String,
    pub k: usize,
    pub variant: Variant,
    /// Distance from the rollout's final node to the nearest target node.
    pub distance_m: f64,
    /// Distance had the agent stopped at the terminal node.
    pub stop_baseline_m: f64,
}

pub fn khop_final_distance(probes: &[Probe], scenes: &impl SceneLookup) -> Result<Vec<FinalDistance>> {
    probes
        .iter()
        .map(|p| {
            let e = p.episode;
            let world = world_for(scenes, e)?;
            let target = e
                .aux
                .nearest_target_node
                .as_deref()
                .ok_or_else(|| MetricsError::MissingTarget(e.episode_id.clone()))?;
            let end =
                p.result.final_node.as_deref().ok_or_else(|| MetricsError::MissingRollout(e.episode_id.clone()))?;
            Ok(FinalDistance {
                episode_id: e.episode_id.clone(),
                k: e.aux.k.unwrap_or(1),
                variant: p.result.variant,
                distance_m: world.geodesic_distance(end, target)?,
                stop_baseline_m: world.geodesic_distance(e.terminal_node(), target)?,
            })
        })
        .collect()
}

/// Mean final distance per (k, variant).
pub fn group_final_distance(rows: &[FinalDistance]) -> BTreeMap<(usize, Variant), GroupMean> {
    let mut acc: BTreeMap<(usize, Variant), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let slot = acc.entry((r.k, r.variant)).or_default();
        slot.0 += r.distance_m;
        slot.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, GroupMean { mean: s / n as f64, n })).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillScore {
    pub skill: Skill,
    pub agent_id: String,
    /// Percentage in [0, 100].
    pub score: f64,
    pub n_episodes: usize,
}

/// `100 · mean_e Σ_{a ∈ correct(e)} P(a)` over intervention probes of one skill.
pub fn skill_score(probes: &[Probe], agent_id: &str) -> Result<SkillScore> {
    let first = probes.first().ok_or(MetricsError::Empty)?;
    let skill = first.episode.skill;
    let mut sum = 0.0;
    for p in probes {
        if p.episode.skill != skill || p.result.variant != Variant::Intervention {
            return Err(MetricsError::WrongKind {
                episode: p.episode.episode_id.clone(),
                found: format!("{}/{}", p.episode.skill, p.result.variant),
                expected: format!("{skill}/intervention"),
            });
        }
        sum += correct_mass(p);
    }
    Ok(SkillScore {
        skill,
        agent_id: agent_id.to_owned(),
        score: 100.0 * sum / probes.len() as f64,
        n_episodes: probes.len(),
    })
}

/// One row of the skill comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub agent_id: String,
    pub stop: f64,
    /// Unweighted mean of the per-direction scores.
    pub turn: f64,
    pub turn_by_direction: BTreeMap<String, f64>,
    pub object: f64,
    /// 1-hop room episodes only.
    pub room: f64,
    pub avg: f64,
}

/// Builds the comparison row from intervention probes of all skills. Room
/// episodes with k ≥ 2 are excluded. Missing skills yield an error.
pub fn score_row(probes: &[Probe], agent_id: &str) -> Result<ScoreRow> {
    let select = |skill: Skill| -> Vec<Probe> {
        probes
            .iter()
            .copied()
            .filter(|p| p.episode.skill == skill && p.result.variant == Variant::Intervention)
            .filter(|p| skill != Skill::Room || p.episode.aux.k.unwrap_or(1) == 1)
            .collect()
    };
    let stop = skill_score(&select(Skill::Stop), agent_id)?.score;
    let object = skill_score(&select(Skill::Object), agent_id)?.score;
    let room = skill_score(&select(Skill::Room), agent_id)?.score;
    let mut by_dir: BTreeMap<String, Vec<Probe>> = BTreeMap::new();
    for p in select(Skill::Direction) {
        let d = p.episode.target.clone().ok_or_else(|| MetricsError::MissingDirection(p.episode.episode_id.clone()))?;
        by_dir.entry(d).or_default().push(p);
    }
    if by_dir.is_empty() {
        return Err(MetricsError::Empty);
    }
    let turn_by_direction: BTreeMap<String, f64> =
        by_dir.into_iter().map(|(d, ps)| Ok((d, skill_score(&ps, agent_id)?.score))).collect::<Result<_>>()?;
    let turn = turn_by_direction.values().sum::<f64>() / turn_by_direction.len() as f64;
    Ok(ScoreRow {
        agent_id: agent_id.to_owned(),
        stop,
        turn,
        turn_by_direction,
        object,
        room,
        avg: (stop + turn + object + room) / 4.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Navigation error: geodesic distance from the final node to the goal.
    pub ne: f64,
    /// Oracle error: closest approach to the goal along the path.
    pub oe: f64,
    pub sr: f64,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

fn path_length(world: &World, path: &[String]) -> Result<f64> {
    let mut len = 0.0;
    for w in path.windows(2) {
        len += world.edge_length(&w[0], &w[1]).ok_or_else(|| MetricsError::InvalidPath(w[0].clone(), w[1].clone()))?;
    }
    Ok(len)
}

/// Dynamic time warping cost between two node sequences under geodesic distance.
pub fn dtw_geodesic(world: &World, pred: &[String], reference: &[String]) -> Result<f64> {
    let (n, m) = (pred.len(), reference.len());
    let mut table = vec![vec![f64::INFINITY; m + 1]; n + 1];
    table[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost = world.geodesic_distance(&pred[i - 1], &reference[j - 1])?;
            let best = table[i - 1][j].min(table[i][j - 1]).min(table[i - 1][j - 1]);
            table[i][j] = cost + best;
        }
    }
    Ok(table[n][m])
}

pub fn vln_metrics(
    pred: &[String],
    reference: &[String],
    world: &World,
    success_radius_m: f64,
) -> Result<EpisodeMetrics> {
    let (Some(end), Some(goal)) = (pred.last(), reference.last()) else {
        return Err(MetricsError::EmptyPath);
    };
    let l_pred = path_length(world, pred)?;
    let l_ref = path_length(world, reference)?;
    let ne = world.geodesic_distance(end, goal)?;
    let mut oe = f64::INFINITY;
    for n in pred {
        oe = oe.min(world.geodesic_distance(n, goal)?);
    }
    let sr = if ne <= success_radius_m { 1.0 } else { 0.0 };
    let spl = if l_ref == 0.0 { sr } else { sr * l_ref / l_pred.max(l_ref) };
    let dtw = dtw_geodesic(world, pred, reference)?;
    let ndtw = (-dtw / (reference.len() as f64 * success_radius_m)).exp();
    Ok(EpisodeMetrics { ne, oe, sr, spl, ndtw, sdtw: sr * ndtw })
}

/// Column-wise mean of episode metrics.
pub fn mean_metrics(rows: &[EpisodeMetrics]) -> Option<EpisodeMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let sum = |f: fn(&EpisodeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Some(EpisodeMetrics {
        ne: sum(|m| m.ne),
        oe: sum(|m| m.oe),
        sr: sum(|m| m.sr),
        spl: sum(|m| m.spl),
        ndtw: sum(|m| m.ndtw),
        sdtw: sum(|m| m.sdtw),
    })
}
