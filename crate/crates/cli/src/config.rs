//! Run configuration: a TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use skillprobe_core::agents::OracleConfig;
use skillprobe_core::alignment::SyntheticCorpusParams;
use skillprobe_core::interventions::{Direction, DirectionRegion, ObjectFilterConfig, Skill, TemplateLibrary};
use skillprobe_core::world::SyntheticWorldParams;

pub const OUT_ENV: &str = "SKILLPROBE_OUT";
pub const DEFAULT_OUT: &str = "skillprobe-out";
pub const BUILTIN_AGENTS: [&str; 4] = ["keyword_oracle", "uniform", "forward_bias", "stop_to_goal"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub world: WorldSource,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub skills: SkillsConfig,
    /// TOML file overriding the instruction templates.
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub agent: AgentSpec,
    #[serde(default)]
    pub execution: ExecutionConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSource {
    #[serde(default)]
    pub files: Vec<PathBuf>,
    pub synthetic: Option<SyntheticWorlds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorlds {
    #[serde(default = "one")]
    pub n_scenes: usize,
    #[serde(flatten)]
    pub params: SyntheticWorldParams,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub file: Option<PathBuf>,
    /// Random-walk corpus generated per scene.
    pub synthetic: Option<SyntheticCorpusParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillsConfig {
    pub enabled: Vec<Skill>,
    pub directions: Vec<Direction>,
    /// Replaces the default 60° arcs for the listed directions.
    pub regions: Vec<DirectionRegion>,
    pub object: ObjectFilterConfig,
    pub khop: Vec<usize>,
}

impl Default for SkillsConfig {
    fn default() -> Self {
        SkillsConfig {
            enabled: Skill::ALL.to_vec(),
            directions: Direction::ALL.to_vec(),
            regions: Vec::new(),
            object: ObjectFilterConfig::default(),
            khop: vec![1, 2, 3],
        }
    }
}

impl SkillsConfig {
    pub fn region_for(&self, d: Direction) -> DirectionRegion {
        self.regions.iter().find(|r| r.direction == d).copied().unwrap_or_else(|| DirectionRegion::default_for(d))
    }

    pub fn is_enabled(&self, s: Skill) -> bool {
        self.enabled.contains(&s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub builtin: Option<String>,
    /// Shell command of an agent speaking the JSON-lines protocol.
    pub command: Option<String>,
    /// Keyword oracle: mass on correct actions for every skill.
    pub competence: Option<f64>,
    /// Keyword oracle: per-skill overrides of `competence`.
    #[serde(default)]
    pub competence_by_skill: BTreeMap<Skill, f64>,
    pub fallback_stop_prob: Option<f64>,
    pub epsilon_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutionConfig {
    /// 0 means one worker per logical core.
    pub workers: usize,
    pub max_steps: usize,
    pub timeout_s: f64,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig { workers: 0, max_steps: skillprobe_core::agents::DEFAULT_MAX_STEPS, timeout_s: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub n_boot: usize,
    pub level: f64,
    pub polar_bin_deg: f64,
    pub angular_bin_deg: f64,
    pub delta_bin_m: f64,
    pub success_radius_m: f64,
    /// Full-instruction runs with and without forcing along each prefix.
    pub tf_experiment: bool,
    /// Caps the number of prefixes used by the forcing experiment; 0 = all.
    pub tf_max_candidates: usize,
    pub lmm: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            n_boot: 1000,
            level: 0.95,
            polar_bin_deg: 30.0,
            angular_bin_deg: 15.0,
            delta_bin_m: 0.5,
            success_radius_m: 3.0,
            tf_experiment: true,
            tf_max_candidates: 0,
            lmm: true,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub agent: Option<String>,
    pub agent_cmd: Option<String>,
    pub skills: Option<Vec<Skill>>,
    pub khop: Option<Vec<usize>>,
}

/// A validated configuration with paths resolved against the config file.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub templates: TemplateLibrary,
    /// Digest of everything that determines the generated episodes.
    pub gen_hash: String,
    /// Digest of everything that determines probe results.
    pub config_hash: String,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Makes relative input paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.world.files.iter_mut().for_each(fix);
        self.corpus.file.as_mut().map(fix);
        self.templates.as_mut().map(fix);
        self.out_dir.as_mut().map(fix);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(w) = o.workers {
            self.execution.workers = w;
        }
        if let Some(out) = &o.out {
            self.out_dir = Some(out.clone());
        }
        if let Some(a) = &o.agent {
            self.agent.builtin = Some(a.clone());
            self.agent.command = None;
        }
        if let Some(c) = &o.agent_cmd {
            self.agent.command = Some(c.clone());
            self.agent.builtin = None;
        }
        if let Some(s) = &o.skills {
            self.skills.enabled = s.clone();
        }
        if let Some(k) = &o.khop {
            self.skills.khop = k.clone();
        }
    }

    /// Every problem found, each prefixed by its field path.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let w = &self.world;
        match (w.files.is_empty(), &w.synthetic) {
            (true, None) => p.push("world: set either `files` or `synthetic`".into()),
            (false, Some(_)) => p.push("world: `files` and `synthetic` are mutually exclusive".into()),
            _ => {}
        }
        for (i, f) in w.files.iter().enumerate() {
            if !f.is_file() {
                p.push(format!("world.files[{i}]: {} does not exist", f.display()));
            }
        }
        if let Some(s) = &w.synthetic {
            if s.n_scenes == 0 {
                p.push("world.synthetic.n_scenes: must be at least 1".into());
            }
            if s.params.n_nodes < 2 {
                p.push("world.synthetic.n_nodes: must be at least 2".into());
            }
        }
        match (&self.corpus.file, &self.corpus.synthetic) {
            (None, None) => p.push("corpus: set either `file` or `synthetic`".into()),
            (Some(_), Some(_)) => p.push("corpus: `file` and `synthetic` are mutually exclusive".into()),
            (Some(f), None) if !f.is_file() => p.push(format!("corpus.file: {} does not exist", f.display())),
            _ => {}
        }
        if let Some(t) = &self.templates {
            if !t.is_file() {
                p.push(format!("templates: {} does not exist", t.display()));
            }
        }
        if self.skills.enabled.is_empty() {
            p.push("skills.enabled: no skills selected".into());
        }
        for (i, k) in self.skills.khop.iter().enumerate() {
            if *k == 0 {
                p.push(format!("skills.khop[{i}]: hop counts start at 1"));
            }
        }
        if self.skills.is_enabled(Skill::Direction) && self.skills.directions.is_empty() {
            p.push("skills.directions: direction skill enabled without directions".into());
        }
        if self.skills.is_enabled(Skill::Room) && self.skills.khop.is_empty() {
            p.push("skills.khop: room skill enabled without hop counts".into());
        }

        let a = &self.agent;
        match (&a.builtin, &a.command) {
            (None, None) => p.push("agent: set either `builtin` or `command`".into()),
            (Some(_), Some(_)) => p.push("agent: `builtin` and `command` are mutually exclusive".into()),
            (Some(b), None) if !BUILTIN_AGENTS.contains(&b.as_str()) => {
                p.push(format!("agent.builtin: unknown agent {b:?} (expected one of {})", BUILTIN_AGENTS.join(", ")))
            }
            _ => {}
        }
        let unit = |name: &str, v: f64, p: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&v) {
                p.push(format!("{name}: {v} is outside [0, 1]"));
            }
        };
        if let Some(c) = a.competence {
            unit("agent.competence", c, &mut p);
        }
        for (s, c) in &a.competence_by_skill {
            unit(&format!("agent.competence_by_skill.{s}"), *c, &mut p);
        }
        if let Some(f) = a.fallback_stop_prob {
            unit("agent.fallback_stop_prob", f, &mut p);
        }
        if let Some(e) = a.epsilon_deg {
            if e.is_nan() || e <= 0.0 {
                p.push(format!("agent.epsilon_deg: {e} must be positive"));
            }
        }
        if self.execution.timeout_s.is_nan() || self.execution.timeout_s <= 0.0 {
            p.push("execution.timeout_s: must be positive".into());
        }
        let r = &self.report;
        if !(r.level > 0.0 && r.level < 1.0) {
            p.push(format!("report.level: {} is outside (0, 1)", r.level));
        }
        for (name, v) in [
            ("report.polar_bin_deg", r.polar_bin_deg),
            ("report.angular_bin_deg", r.angular_bin_deg),
            ("report.delta_bin_m", r.delta_bin_m),
            ("report.success_radius_m", r.success_radius_m),
        ] {
            if v.is_nan() || v <= 0.0 {
                p.push(format!("{name}: must be positive"));
            }
        }
        let stochastic = w.synthetic.is_some()
            || self.corpus.synthetic.is_some()
            || self.skills.is_enabled(Skill::Stop)
            || r.n_boot > 0;
        if stochastic && self.seed.is_none() {
            p.push("seed: required (synthetic generation, stop templates and the bootstrap are seeded)".into());
        }
        p
    }

    pub fn resolve(self) -> anyhow::Result<Resolved> {
        let problems = self.problems();
        if !problems.is_empty() {
            bail!("invalid config:\n  {}", problems.join("\n  "));
        }
        let templates = match &self.templates {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<TemplateLibrary>(&text).map_err(|e| anyhow::anyhow!("templates: {e}"))?
            }
            None => TemplateLibrary::default(),
        };
        templates.check().map_err(|e| anyhow::anyhow!("templates: {e}"))?;
        let out_dir = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let gen_hash = self.digest(&templates, false)?;
        let config_hash = self.digest(&templates, true)?;
        Ok(Resolved { config: self, out_dir, templates, gen_hash, config_hash })
    }

    /// Hashes what determines the outputs: inputs by content rather than
    /// path, and nothing about output location or parallelism.
    fn digest(&self, templates: &TemplateLibrary, with_agent: bool) -> anyhow::Result<String> {
        let mut h = Sha256::new();
        let mut put = |label: &str, bytes: &[u8]| {
            h.update(label.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        put("seed", &self.seed.unwrap_or(0).to_le_bytes());
        for f in &self.world.files {
            put("world", &std::fs::read(f).with_context(|| format!("reading {}", f.display()))?);
        }
        put("synthetic_world", serde_json::to_string(&self.world.synthetic)?.as_bytes());
        if let Some(f) = &self.corpus.file {
            put("corpus", &std::fs::read(f).with_context(|| format!("reading {}", f.display()))?);
        }
        put("synthetic_corpus", serde_json::to_string(&self.corpus.synthetic)?.as_bytes());
        put("skills", serde_json::to_string(&self.skills)?.as_bytes());
        put("templates", serde_json::to_string(templates)?.as_bytes());
        if with_agent {
            put("agent", serde_json::to_string(&self.agent)?.as_bytes());
            put("max_steps", &(self.execution.max_steps as u64).to_le_bytes());
            put("tf", &[self.report.tf_experiment as u8]);
            put("tf_max", &(self.report.tf_max_candidates as u64).to_le_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }
}

impl Resolved {
    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }

    /// Seed of an independent stream for a named purpose.
    pub fn derived_seed(&self, purpose: &str, index: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed().to_le_bytes());
        h.update(purpose.as_bytes());
        h.update(index.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn oracle_config(&self) -> OracleConfig {
        let a = &self.config.agent;
        let mut cfg = OracleConfig::with_competence(a.competence.unwrap_or(1.0));
        for (s, c) in &a.competence_by_skill {
            cfg.competence.insert(*s, *c);
        }
        if let Some(f) = a.fallback_stop_prob {
            cfg.fallback_stop_prob = f;
        }
        if let Some(e) = a.epsilon_deg {
            cfg.epsilon_deg = e;
        }
        let skills = &self.config.skills;
        cfg.object_max_dist_m = skills.object.max_dist_m;
        cfg.cone_deg = skills.object.cone_deg;
        cfg.regions = Direction::ALL.iter().map(|&d| skills.region_for(d)).collect();
        cfg.templates = self.templates.clone();
        cfg
    }

    pub fn workers(&self) -> usize {
        match self.config.execution.workers {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[world.synthetic]
n_scenes = 2
n_nodes = 40
[corpus.synthetic]
n_trajectories = 5
[agent]
builtin = "uniform"
"#;

    #[test]
    fn parses_and_hashes() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.world.synthetic.as_ref().unwrap().params.n_nodes, 40);
        assert_eq!(cfg.world.synthetic.as_ref().unwrap().params.n_regions, 8);
        let a = cfg.clone().resolve().unwrap();
        let mut other = cfg.clone();
        other.execution.workers = 3;
        other.out_dir = Some("elsewhere".into());
        let b = other.resolve().unwrap();
        assert_eq!(a.config_hash, b.config_hash);

        let mut changed = cfg.clone();
        changed.agent.builtin = Some("forward_bias".into());
        let c = changed.resolve().unwrap();
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.gen_hash, c.gen_hash);
    }

    #[test]
    fn problems_name_fields() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.seed = None;
        cfg.agent.builtin = Some("hamt".into());
        cfg.agent.competence = Some(1.5);
        cfg.skills.khop = vec![0];
        cfg.corpus.file = Some("/nonexistent.jsonl".into());
        let p = cfg.problems().join("\n");
        for needle in ["seed:", "agent.builtin:", "agent.competence:", "skills.khop[0]:", "corpus:"] {
            assert!(p.contains(needle), "{needle} missing from\n{p}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml(&format!("{MINIMAL}\n[execution]\nworkerz = 2\n")).unwrap_err();
        assert!(err.to_string().contains("workerz"), "{err}");
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            agent_cmd: Some("python agent.py".into()),
            skills: Some(vec![Skill::Stop]),
            ..Default::default()
        });
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.agent.builtin, None);
        assert_eq!(cfg.skills.enabled, vec![Skill::Stop]);
        assert!(cfg.problems().is_empty());
    }
}
