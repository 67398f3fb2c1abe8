//! Acceptance suite: one PASS/FAIL line per criterion, each checked against an
//! independent oracle and a wall-clock budget.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use skillprobe_cli::report::{cmd_report, ReportSummary, TableRow};
use skillprobe_cli::{gen, run, Layout, Resolved, RunConfig};
use skillprobe_core::agents::{forward_bias_weights, teacher_force, ForwardBiasAgent, Observation};
use skillprobe_core::alignment::truncation_candidates;
use skillprobe_core::interventions::EpisodeAux;
use skillprobe_core::metrics::{angular_error_distribution, dtw_geodesic, join, vln_metrics};
use skillprobe_core::stats::bootstrap::hierarchical_bootstrap;
use skillprobe_core::stats::lmm::{fit_model, ModelTerms};
use skillprobe_core::stats::{fit_lmm, mean_difference, mean_response};
use skillprobe_core::world::{angular_difference, euclidean, generate_synthetic_world, SyntheticWorldParams};
use skillprobe_core::{Action, EffectDataset, EffectRow, Heading, InterventionEpisode, Skill, Variant, World};

const BIN: &str = env!("CARGO_BIN_EXE_skillprobe");

/// Whether the criterion held, and the measurements behind the verdict.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> anyhow::Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn check(name: &str, budget: Duration, f: impl FnOnce() -> anyhow::Result<Verdict>) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let (pass, detail) = match outcome {
        Ok(v) => (v.pass && elapsed <= budget, v.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    println!(
        "{} {name}: {detail} [{:.2}s of {}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

/// A resolved configuration writing under `dir/out`.
fn resolved(dir: &Path, seed: u64, body: &str) -> anyhow::Result<Resolved> {
    let text = format!("seed = {seed}\nout_dir = {:?}\n{body}", dir.join("out"));
    RunConfig::from_toml(&text)?.resolve()
}

fn world_body(n_scenes: usize, n_nodes: usize, n_traj: usize, agent: &str, extra: &str) -> String {
    format!(
        "[world.synthetic]\nn_scenes = {n_scenes}\nn_nodes = {n_nodes}\n\
         [corpus.synthetic]\nn_trajectories = {n_traj}\n\
         [agent]\n{agent}\n\
         [report]\ntf_experiment = false\n{extra}\n"
    )
}

fn probe_and_report(r: &Resolved) -> anyhow::Result<ReportSummary> {
    let s = run::cmd_run(r)?;
    ensure!(s.errors == 0, "{} probe errors", s.errors);
    cmd_report(r)
}

fn approx(a: Option<f64>, b: f64, tol: f64) -> bool {
    a.is_some_and(|a| (a - b).abs() <= tol)
}

fn skill_scores(t: &TableRow) -> [(&'static str, Option<f64>); 4] {
    [("stop", t.stop), ("turn", t.turn), ("object", t.object), ("room", t.room)]
}

fn candidate_counts() -> anyhow::Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let mut n_traj = 0;
    for seed in 0..5 {
        let r = resolved(dir.path(), seed, &world_body(2, 40, 12, "builtin = \"uniform\"", ""))?;
        let (worlds, corpus, _, g) = gen::generate(&r)?;
        let by_id: BTreeMap<&str, &World> = worlds.iter().map(|w| (w.scene_id(), w)).collect();
        let mut total = 0;
        for t in &corpus {
            let c = truncation_candidates(t, by_id[t.scene_id.as_str()]);
            let want = t.len().saturating_sub(2);
            if c.len() != want {
                return verdict(
                    false,
                    format!("seed {seed} {}: {} candidates, T={}", t.trajectory_id, c.len(), t.len()),
                );
            }
            total += want;
        }
        n_traj += corpus.len();
        let m = &g.manifest;
        let stop: usize = m.counts.get("stop").map_or(0, |v| v.values().sum());
        if m.n_candidates != total || stop != 3 * total {
            return verdict(false, format!("seed {seed}: candidates {} vs {total}, stop {stop}", m.n_candidates));
        }
    }
    verdict(true, format!("{n_traj} trajectories over 5 seeds, candidates = T-2, stop = 3 x candidates"))
}

/// `100 · |correct| / (degree + 1)` averaged over intervention episodes.
fn uniform_expectation(episodes: &[&InterventionEpisode], worlds: &BTreeMap<String, World>) -> anyhow::Result<f64> {
    let mut sum = 0.0;
    for e in episodes {
        let d = worlds[&e.scene_id].degree(e.terminal_node())?;
        sum += 100.0 * e.correct_actions.len() as f64 / (d + 1) as f64;
    }
    Ok(sum / episodes.len() as f64)
}

fn score_extremes() -> anyhow::Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let body = |agent: &str| world_body(1, 50, 16, agent, "lmm = false\nn_boot = 10\n[skills]\nkhop = [1]");
    let oracle = resolved(dir.path(), 5, &body("builtin = \"keyword_oracle\"\ncompetence = 1.0"))?;
    let m = gen::cmd_gen(&oracle)?;
    let n_int: usize = m.counts.values().filter_map(|v| v.get("intervention")).sum();

    let t = probe_and_report(&oracle)?.table;
    let mut bad: Vec<String> = skill_scores(&t)
        .iter()
        .filter(|(_, s)| !approx(*s, 100.0, 1e-9))
        .map(|(k, s)| format!("oracle {k}={s:?}"))
        .collect();
    bad.extend(
        t.turn_by_direction.iter().filter(|(_, s)| (**s - 100.0).abs() > 1e-9).map(|(d, s)| format!("oracle {d}={s}")),
    );

    let t = probe_and_report(&resolved(dir.path(), 5, &body("builtin = \"stop_to_goal\""))?)?.table;
    for (k, s) in skill_scores(&t) {
        let want = if k == "stop" { 100.0 } else { 0.0 };
        if !approx(s, want, 1e-9) {
            bad.push(format!("stop_to_goal {k}={s:?}"));
        }
    }

    let uniform = resolved(dir.path(), 5, &body("builtin = \"uniform\""))?;
    let t = probe_and_report(&uniform)?.table;
    let layout = Layout::new(&uniform.out_dir);
    let worlds = gen::Manifest::load(&layout)?.load_worlds(&layout)?;
    let episodes = gen::load_episodes(&layout)?;
    let of = |skill: Skill, target: Option<&str>| -> Vec<&InterventionEpisode> {
        episodes
            .iter()
            .filter(|e| e.variant == Variant::Intervention && e.skill == skill)
            .filter(|e| target.is_none() || e.target.as_deref() == target)
            .filter(|e| skill != Skill::Room || e.aux.k.unwrap_or(1) == 1)
            .collect()
    };
    let mut max_diff: f64 = 0.0;
    let mut compare = |label: String, got: Option<f64>, want: f64| {
        let d = got.map_or(f64::INFINITY, |g| (g - want).abs());
        max_diff = max_diff.max(d);
        if d > 1e-9 {
            bad.push(format!("uniform {label}: {got:?} vs {want}"));
        }
    };
    compare("stop".into(), t.stop, uniform_expectation(&of(Skill::Stop, None), &worlds)?);
    compare("object".into(), t.object, uniform_expectation(&of(Skill::Object, None), &worlds)?);
    compare("room".into(), t.room, uniform_expectation(&of(Skill::Room, None), &worlds)?);
    let mut per_dir = Vec::new();
    for d in t.turn_by_direction.keys() {
        let want = uniform_expectation(&of(Skill::Direction, Some(d)), &worlds)?;
        compare(format!("direction {d}"), t.turn_by_direction.get(d).copied(), want);
        per_dir.push(want);
    }
    compare("turn".into(), t.turn, per_dir.iter().sum::<f64>() / per_dir.len() as f64);

    let ok = bad.is_empty() && (400..=700).contains(&n_int);
    let mut detail = format!("{n_int} intervention episodes on a 50-node world, uniform max |diff| {max_diff:.1e}");
    if !bad.is_empty() {
        detail = format!("{detail}; {}", bad.join("; "));
    }
    verdict(ok, detail)
}

fn monotone_competence() -> anyhow::Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut rows = Vec::new();
    for c in levels {
        let agent = format!("builtin = \"keyword_oracle\"\ncompetence = {c}");
        let r = resolved(dir.path(), 9, &world_body(2, 40, 8, &agent, "lmm = false\nn_boot = 10"))?;
        gen::cmd_gen(&r)?;
        rows.push(probe_and_report(&r)?.table);
    }
    let mut lines = Vec::new();
    let mut ok = true;
    for i in 0..4 {
        let series: Vec<Option<f64>> = rows.iter().map(|t| skill_scores(t)[i].1).collect();
        let increasing = series.iter().all(Option::is_some) && series.windows(2).all(|w| w[0].unwrap() < w[1].unwrap());
        ok &= increasing;
        let shown: Vec<String> = series.iter().map(|s| s.map_or("NA".into(), |v| format!("{v:.1}"))).collect();
        lines.push(format!("{} {}", skill_scores(&rows[0])[i].0, shown.join("<")));
    }
    verdict(ok, lines.join(", "))
}

/// `(effect, p)` per experiment from the report's stats.json.
fn effects(summary: &ReportSummary) -> anyhow::Result<BTreeMap<String, Option<(f64, f64)>>> {
    let v: Value = serde_json::from_slice(&std::fs::read(summary.dir.join("stats.json"))?)?;
    let exps = v["experiments"].as_object().context("stats.json has no experiments")?;
    Ok(exps
        .iter()
        .map(|(k, e)| {
            let lmm = &e["lmm"];
            let fit = lmm["fit"]["beta_fixed"].as_f64().zip(lmm["lrt"]["p_value"].as_f64());
            (k.clone(), fit)
        })
        .collect())
}

fn effect_detection() -> anyhow::Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let body = |agent: &str| world_body(4, 40, 10, agent, "n_boot = 100");
    let r = resolved(dir.path(), 2024, &body("builtin = \"keyword_oracle\"\ncompetence = 0.9"))?;
    gen::cmd_gen(&r)?;
    let oracle = effects(&probe_and_report(&r)?)?;
    let mut ok = oracle.len() >= 4;
    let mut worst_p: f64 = 0.0;
    let mut failures = Vec::new();
    for (k, fit) in &oracle {
        match fit {
            Some((b, p)) if *b > 0.0 && *p < 0.01 => worst_p = worst_p.max(*p),
            other => {
                ok = false;
                failures.push(format!("{k}: {other:?}"));
            }
        }
    }

    let seeds = 20;
    let mut null_ok: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 0..seeds {
        let udir = tempfile::tempdir()?;
        let r = resolved(udir.path(), 500 + seed, &world_body(3, 40, 8, "builtin = \"uniform\"", "n_boot = 50"))?;
        gen::cmd_gen(&r)?;
        for (k, fit) in effects(&probe_and_report(&r)?)? {
            let accepted = fit.is_some_and(|(_, p)| p > 0.05);
            *null_ok.entry(k).or_default() += accepted as usize;
        }
    }
    let min_null = null_ok.values().copied().min().unwrap_or(0);
    ok &= !null_ok.is_empty() && min_null * 10 >= seeds as usize * 9;
    let mut detail = format!(
        "oracle(0.9): {} experiments with effect > 0, max p {worst_p:.1e}; uniform: p > 0.05 in >= {min_null}/{seeds} seeds for each of {} experiments",
        oracle.len() - failures.len(),
        null_ok.len()
    );
    if !failures.is_empty() {
        detail = format!("{detail}; failed {}", failures.join(", "));
    }
    verdict(ok, detail)
}

fn effect_row(scene: String, traj: String, ep: String, flag: u8, y: f64) -> EffectRow {
    EffectRow { scene_id: scene, trajectory_id: traj, episode_id: ep, intervention: flag, response: y }
}

fn ols_slope(rows: &[EffectRow]) -> f64 {
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.intervention as f64).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.response).sum::<f64>() / n;
    let sxy: f64 = rows.iter().map(|r| (r.intervention as f64 - mx) * (r.response - my)).sum();
    let sxx: f64 = rows.iter().map(|r| (r.intervention as f64 - mx).powi(2)).sum();
    sxy / sxx
}

/// ANOVA variance components for a balanced one-way layout, with the between
/// component truncated at zero.
fn anova(groups: &[Vec<f64>]) -> (f64, f64) {
    let a = groups.len() as f64;
    let n = groups[0].len() as f64;
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / a;
    let ssb: f64 = means.iter().map(|m| n * (m - grand).powi(2)).sum();
    let ssw: f64 = groups.iter().zip(&means).map(|(g, m)| g.iter().map(|y| (y - m).powi(2)).sum::<f64>()).sum();
    let (msb, msw) = (ssb / (a - 1.0), ssw / (a * (n - 1.0)));
    if msb >= msw {
        ((msb - msw) / n, msw)
    } else {
        (0.0, (ssb + ssw) / (a * n - 1.0))
    }
}

/// Paired two-level data with random scene and trajectory intercepts.
struct Design {
    n_scenes: usize,
    n_traj: usize,
    n_episodes: usize,
    alpha: f64,
    beta: f64,
    sd_scene: f64,
    sd_traj: f64,
    sd_resid: f64,
}

fn simulate(d: &Design, seed: u64) -> EffectDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    for s in 0..d.n_scenes {
        let a = d.sd_scene * unit.sample(&mut rng);
        for t in 0..d.n_traj {
            let b = d.sd_traj * unit.sample(&mut rng);
            for e in 0..d.n_episodes {
                for flag in [0u8, 1] {
                    let y = d.alpha + a + b + d.beta * flag as f64 + d.sd_resid * unit.sample(&mut rng);
                    rows.push(effect_row(format!("s{s}"), format!("s{s}/t{t}"), format!("s{s}/t{t}/e{e}"), flag, y));
                }
            }
        }
    }
    EffectDataset::new(rows).unwrap()
}

fn lmm_correctness() -> anyhow::Result<Verdict> {
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut ols_diff: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<EffectRow> = (0..40)
            .map(|i| {
                let flag = (i % 2) as u8;
                let y = 0.2 + 0.45 * flag as f64 + 0.1 * unit.sample(&mut rng);
                effect_row(format!("s{i}"), format!("t{i}"), format!("e{i}"), flag, y)
            })
            .collect();
        let d = EffectDataset::new(rows)?;
        ols_diff = ols_diff.max((fit_lmm(&d)?.beta_fixed - ols_slope(d.rows())).abs());
    }

    let mut anova_diff: f64 = 0.0;
    for seed in 0..20u64 {
        let sd = if seed % 4 == 3 { 0.0 } else { 0.4 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups = Vec::new();
        let mut rows = Vec::new();
        for g in 0..8 {
            let effect = sd * unit.sample(&mut rng);
            let ys: Vec<f64> = (0..5).map(|_| 1.0 + effect + 0.3 * unit.sample(&mut rng)).collect();
            for (k, &y) in ys.iter().enumerate() {
                rows.push(effect_row(format!("g{g}"), format!("g{g}/{k}"), format!("g{g}/{k}"), 0, y));
            }
            groups.push(ys);
        }
        let vc = fit_model(&EffectDataset::new(rows)?, ModelTerms::one_way())?.variance_components;
        let (between, within) = anova(&groups);
        anova_diff = anova_diff.max((vc.scene_intercept - between).abs()).max((vc.residual - within).abs());
    }

    let design = Design {
        n_scenes: 20,
        n_traj: 5,
        n_episodes: 4,
        alpha: 0.5,
        beta: 0.3,
        sd_scene: 0.1,
        sd_traj: 0.1,
        sd_resid: 0.05,
    };
    let mut err_sum = 0.0;
    for seed in 0..100 {
        err_sum += (fit_lmm(&simulate(&design, seed))?.beta_fixed - 0.3).abs();
    }
    let mean_err = err_sum / 100.0;
    verdict(
        ols_diff <= 1e-6 && anova_diff <= 1e-6 && mean_err <= 0.05,
        format!(
            "(a) max |b - ols| {ols_diff:.1e}; (b) max ANOVA diff {anova_diff:.1e}; (c) mean |b - 0.30| {mean_err:.4}"
        ),
    )
}

fn bootstrap() -> anyhow::Result<Verdict> {
    let base = Design {
        n_scenes: 20,
        n_traj: 5,
        n_episodes: 4,
        alpha: 0.5,
        beta: 0.3,
        sd_scene: 0.1,
        sd_traj: 0.1,
        sd_resid: 0.05,
    };
    let d = simulate(&base, 4);
    let a = hierarchical_bootstrap(&d, mean_difference, 1000, 42, 0.95)?;
    let b = hierarchical_bootstrap(&d, mean_difference, 1000, 42, 0.95)?;
    let reproducible = [(a.point, b.point), (a.ci_low, b.ci_low), (a.ci_high, b.ci_high)]
        .iter()
        .all(|(x, y)| x.to_bits() == y.to_bits());

    let flat: Vec<EffectRow> = (0..40)
        .map(|i| effect_row(format!("s{}", i % 4), format!("s{}/t{}", i % 4, i % 3), format!("e{i}"), 0, 0.5))
        .collect();
    let ci = hierarchical_bootstrap(&EffectDataset::new(flat)?, mean_response, 1000, 0, 0.95)?;
    let zero_width = ci.ci_low == ci.ci_high && ci.point == 0.5;

    let design = Design { n_scenes: 30, beta: 0.0, sd_scene: 0.2, sd_traj: 0.1, sd_resid: 0.1, ..base };
    let sims = 300;
    let mut covered = 0;
    for s in 0..sims {
        let ci = hierarchical_bootstrap(&simulate(&design, 20_000 + s), mean_response, 1000, s, 0.95)?;
        covered += (ci.ci_low <= design.alpha && design.alpha <= ci.ci_high) as usize;
    }
    let rate = covered as f64 / sims as f64;
    verdict(
        reproducible && zero_width && (0.91..=0.99).contains(&rate),
        format!(
            "bit-reproducible {reproducible}, degenerate width {}, coverage {rate:.3} over {sims}",
            ci.ci_high - ci.ci_low
        ),
    )
}

fn floyd_warshall(w: &World) -> Vec<Vec<f64>> {
    let n = w.len();
    let index: BTreeMap<&str, usize> = w.nodes().iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in w.edges() {
        let (a, b) = (index[e.a.as_str()], index[e.b.as_str()]);
        let len = e.weight.unwrap_or_else(|| euclidean(w.nodes()[a].position, w.nodes()[b].position));
        d[a][b] = d[a][b].min(len);
        d[b][a] = d[b][a].min(len);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Quadratic DTW table over a precomputed distance matrix.
fn dtw_table(dist: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let mut t = vec![vec![f64::INFINITY; b.len() + 1]; a.len() + 1];
    t[0][0] = 0.0;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = dist[a[i - 1]][b[j - 1]] + t[i - 1][j].min(t[i][j - 1]).min(t[i - 1][j - 1]);
        }
    }
    t[a.len()][b.len()]
}

fn geometry() -> anyhow::Result<Verdict> {
    let params = SyntheticWorldParams { n_nodes: 30, ..Default::default() };
    let radius = 3.0;
    let (mut geo_diff, mut room_mismatch, mut ndtw_diff, mut n_pairs): (f64, usize, f64, usize) = (0.0, 0, 0.0, 0);
    let mut identity_ok = true;
    for seed in 0..10 {
        let w = generate_synthetic_world(seed, &params)?;
        let fw = floyd_warshall(&w);
        let ids: Vec<String> = w.nodes().iter().map(|n| n.id.clone()).collect();
        for (i, a) in ids.iter().enumerate() {
            for (j, b) in ids.iter().enumerate() {
                geo_diff = geo_diff.max((w.geodesic_distance(a, b)? - fw[i][j]).abs());
            }
        }
        let rooms: BTreeSet<&str> = w.regions().values().map(String::as_str).collect();
        for (i, origin) in ids.iter().enumerate() {
            for room in &rooms {
                // distances within 1e-12 count as ties, broken by node id
                let mut want: Option<(f64, &str)> = None;
                for j in (0..ids.len()).filter(|&j| w.room_type(&ids[j]).ok() == Some(*room)) {
                    let cand = (fw[i][j], ids[j].as_str());
                    if want.is_none_or(|b| cand.0 < b.0 - 1e-12 || ((cand.0 - b.0).abs() <= 1e-12 && cand.1 < b.1)) {
                        want = Some(cand);
                    }
                }
                let got = w.nearest_node_with_room(origin, room)?;
                let same = match (got, want) {
                    (Some((id, d)), Some((wd, wid))) => id == wid && (d - wd).abs() <= 1e-9,
                    (None, None) => true,
                    _ => false,
                };
                room_mismatch += !same as usize;
            }
        }
        let walks: Vec<Vec<usize>> = (0..8)
            .map(|k| {
                let mut path = vec![k % ids.len()];
                for _ in 0..(2 + k % 4) {
                    let cur = *path.last().unwrap();
                    let next = w.neighbors(&ids[cur]).unwrap()[(cur + k) % w.degree(&ids[cur]).unwrap()];
                    path.push(ids.iter().position(|x| x == next).unwrap());
                }
                path
            })
            .collect();
        let names = |p: &[usize]| p.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
        for p in &walks {
            for r in &walks {
                let got = vln_metrics(&names(p), &names(r), &w, radius)?.ndtw;
                let want = (-dtw_table(&fw, p, r) / (r.len() as f64 * radius)).exp();
                ndtw_diff = ndtw_diff.max((got - want).abs());
                ndtw_diff = ndtw_diff.max((dtw_geodesic(&w, &names(p), &names(r))? - dtw_table(&fw, p, r)).abs());
                n_pairs += 1;
            }
            let m = vln_metrics(&names(p), &names(p), &w, radius)?;
            identity_ok &= m.ndtw == 1.0 && m.spl == 1.0 && m.sr == 1.0;
        }
    }
    verdict(
        geo_diff <= 1e-9 && room_mismatch == 0 && ndtw_diff <= 1e-9 && identity_ok,
        format!(
            "geodesic max diff {geo_diff:.1e}, nearest-room mismatches {room_mismatch}, nDTW max diff {ndtw_diff:.1e} over {n_pairs} pairs, identical paths give nDTW = SPL = SR = 1: {identity_ok}"
        ),
    )
}

/// A hub `c` at the origin entered from `p` due south (heading 0) with
/// further neighbors at the given bearings.
fn star_world(bearings: &[f64], with_entry: bool) -> World {
    let mut nodes = vec![serde_json::json!({"id": "c", "pos": [0.0, 0.0, 0.0], "region": "r0"})];
    let mut edges = Vec::new();
    if with_entry {
        nodes.push(serde_json::json!({"id": "p", "pos": [0.0, -2.0, 0.0], "region": "r0"}));
        edges.push(serde_json::json!(["p", "c"]));
    }
    for (i, b) in bearings.iter().enumerate() {
        let (s, c) = b.to_radians().sin_cos();
        let id = format!("n{i}");
        nodes.push(serde_json::json!({"id": id, "pos": [2.0 * s, 2.0 * c, 0.0], "region": "r0"}));
        edges.push(serde_json::json!(["c", id]));
    }
    let text = serde_json::json!({
        "scene_id": "fixture",
        "nodes": nodes,
        "edges": edges,
        "regions": {"r0": "hallway"},
    });
    World::from_json_str(&text.to_string()).unwrap()
}

fn forward_bias() -> anyhow::Result<Verdict> {
    let w = star_world(&[10.0, 170.0], false);
    let obs = Observation::at(&w, "c", Heading::new(0.0), 0)?;
    let probs = forward_bias_weights(&obs, 1.0);
    let (p10, p170) = (probs[&Action::Move("n0".into())], probs[&Action::Move("n1".into())]);
    let exact_diff = (p10 - 17.0 / 18.0).abs().max((p170 - 1.0 / 18.0).abs());
    let no_stop = !probs.contains_key(&Action::Stop);

    let fixtures: [(&[f64], f64); 5] = [
        (&[10.0, 170.0], 0.0),
        (&[0.0, 45.0, 90.0, 270.0], 30.0),
        (&[30.0, 300.0, 120.0], 300.0),
        (&[5.0, 355.0, 95.0, 200.0, 250.0], 100.0),
        (&[60.0], 200.0),
    ];
    let bin = 15.0;
    let mut hist_diff: f64 = 0.0;
    for (bearings, object_heading) in fixtures {
        let w = star_world(bearings, true);
        let episode = InterventionEpisode {
            episode_id: "fixture/i/j2/object/o/intervention".into(),
            scene_id: "fixture".into(),
            trajectory_id: "fixture_t0000".into(),
            cut_index: 2,
            skill: Skill::Object,
            variant: Variant::Intervention,
            target: Some("o".into()),
            tau: vec!["p".into(), "c".into()],
            instruction: "Walk to the lamp.".into(),
            correct_actions: BTreeSet::new(),
            aux: EpisodeAux { object_heading_deg: Some(object_heading), ..Default::default() },
        };
        let result = teacher_force(&mut ForwardBiasAgent::default(), &episode, &w)?;
        let episodes = [episode];
        let results = [result];
        let probes = join(&results, &episodes)?;
        let got = angular_error_distribution(&probes, &w, bin, 15.0)?;

        // closed form: neighbor weights 1/max(|relative heading|, 1) with the
        // entry node directly behind, binned by angular error to the object
        let mut all: Vec<(f64, f64)> = bearings.iter().map(|&b| (b, b)).collect();
        all.push((180.0, 180.0));
        let raw: Vec<(f64, f64)> = all
            .iter()
            .map(|&(bearing, rel)| {
                let rel = if rel > 180.0 { rel - 360.0 } else { rel };
                (bearing, 1.0 / rel.abs().max(1.0))
            })
            .collect();
        let total: f64 = raw.iter().map(|r| r.1).sum();
        let mut want = vec![0.0; (180.0 / bin) as usize];
        for (bearing, weight) in raw {
            let err = angular_difference(bearing, object_heading);
            let i = ((err / bin).ceil() as usize).saturating_sub(1).min(want.len() - 1);
            want[i] += weight / total;
        }
        for (g, w) in got.bin_masses.iter().zip(&want) {
            hist_diff = hist_diff.max((g - w).abs());
        }
        hist_diff = hist_diff.max(if got.bin_masses.len() == want.len() { 0.0 } else { 1.0 });
    }
    verdict(
        exact_diff <= 1e-12 && no_stop && hist_diff <= 1e-12,
        format!(
            "P(10) = {p10}, P(170) = {p170} (|diff| {exact_diff:.1e} from 17/18, 1/18); histogram max diff {hist_diff:.1e} over {} fixtures",
            fixtures.len()
        ),
    )
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> anyhow::Result<Verdict> {
    let text = format!(
        "seed = 77\nout_dir = \"out\"\n{}",
        world_body(3, 40, 8, "builtin = \"keyword_oracle\"\ncompetence = 0.8", "n_boot = 200\ntf_experiment = true")
            .replace("tf_experiment = false\n", "")
    );
    let mut snaps = Vec::new();
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    for (d, workers) in dirs.iter().zip(["1", "4"]) {
        std::fs::write(d.path().join("config.toml"), &text)?;
        for cmd in ["gen", "run", "report"] {
            let out = Command::new(BIN)
                .args([cmd, "--config", "config.toml", "--workers", workers])
                .current_dir(d.path())
                .env_remove("SKILLPROBE_OUT")
                .output()?;
            ensure!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
        snaps.push(snapshot(&d.path().join("out")));
    }
    let strip = |bytes: &[u8]| -> anyhow::Result<Value> {
        let mut v: Value = serde_json::from_slice(bytes)?;
        v.as_object_mut().context("manifest")?.remove("generated_unix_s");
        Ok(v)
    };
    let mut differing = Vec::new();
    if snaps[0].keys().ne(snaps[1].keys()) {
        differing.push("file set".to_owned());
    }
    for (path, bytes) in &snaps[0] {
        let Some(other) = snaps[1].get(path) else { continue };
        let same = if path == Path::new("manifest.json") { strip(bytes)? == strip(other)? } else { bytes == other };
        if !same {
            differing.push(path.display().to_string());
        }
    }
    verdict(
        differing.is_empty(),
        format!("{} files compared across two executions (1 and 4 workers); differing: {differing:?}", snaps[0].len()),
    )
}

fn main() -> ExitCode {
    let s = Duration::from_secs;
    let results = [
        check("candidate counts", s(1), candidate_counts),
        check("score extremes", s(10), score_extremes),
        check("monotone competence", s(30), monotone_competence),
        check("end-to-end effect detection", s(300), effect_detection),
        check("LMM correctness", s(300), lmm_correctness),
        check("hierarchical bootstrap", s(120), bootstrap),
        check("geometry oracles", s(30), geometry),
        check("forward-bias analytics", s(1), forward_bias),
        check("determinism", s(120), determinism),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
