use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use skillprobe_cli::analysis::{analyze, AnalysisOptions};
use skillprobe_cli::config::{Overrides, RunConfig};
use skillprobe_cli::{gen, report, run, serve, Resolved};
use skillprobe_core::stats::bootstrap::DEFAULT_N_BOOT;
use skillprobe_core::{EffectDataset, Skill};

#[derive(Parser)]
#[command(name = "skillprobe", version, about = "Skill-specific behavioral probes for navigation agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every logical core.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: config `out_dir`, then $SKILLPROBE_OUT, then ./skillprobe-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Builtin agent: keyword_oracle, uniform, forward_bias or stop_to_goal.
    #[arg(long, conflicts_with = "agent_cmd")]
    agent: Option<String>,
    /// Shell command of an agent speaking the JSON-lines protocol.
    #[arg(long)]
    agent_cmd: Option<String>,
    /// Comma-separated skills to probe.
    #[arg(long, value_delimiter = ',')]
    skills: Option<Vec<Skill>>,
    /// Comma-separated hop limits for room episodes.
    #[arg(long, value_delimiter = ',')]
    khop: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Build worlds, the aligned corpus and intervention episodes.
    Gen(Common),
    /// Probe the agent on every episode missing from the result store.
    Run(Common),
    /// Write scores, histograms, effect datasets and statistics.
    Report(Common),
    /// Run gen, run and report in sequence.
    All(Common),
    /// Bootstrap and mixed-model analysis of effect CSVs.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Effect dataset CSV; repeatable. Defaults to the report's effects/ directory.
        #[arg(long)]
        data: Vec<PathBuf>,
        #[arg(long)]
        n_boot: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        /// Skip the mixed model.
        #[arg(long)]
        no_lmm: bool,
    },
    /// Check the configuration and its inputs.
    Validate(Common),
    /// Serve a builtin agent over stdin/stdout.
    #[command(hide = true)]
    Serve {
        #[arg(long)]
        agent: String,
        #[arg(long, default_value_t = 1.0)]
        competence: f64,
    },
}

fn resolve(c: &Common) -> anyhow::Result<Resolved> {
    let Some(path) = &c.config else {
        bail!("--config is required");
    };
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: c.seed,
        workers: c.workers,
        out: c.out.clone(),
        agent: c.agent.clone(),
        agent_cmd: c.agent_cmd.clone(),
        skills: c.skills.clone(),
        khop: c.khop.clone(),
    });
    cfg.resolve()
}

/// Writes to stdout; a closed pipe on the reading side is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    emit(&format!("{}\n", serde_json::to_string_pretty(v)?))
}

fn execute(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Gen(c) => {
            let m = gen::cmd_gen(&resolve(&c)?)?;
            print_json(&serde_json::json!({
                "episodes": m.n_episodes,
                "candidates": m.n_candidates,
                "counts": m.counts,
                "warnings": m.warnings,
            }))?;
        }
        Command::Run(c) => {
            let s = run::cmd_run(&resolve(&c)?)?;
            print_json(&s)?;
            if s.errors > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report(c) => {
            let s = report::cmd_report(&resolve(&c)?)?;
            emit(&s.table.csv())?;
        }
        Command::All(c) => {
            let r = resolve(&c)?;
            gen::cmd_gen(&r)?;
            let s = run::cmd_run(&r)?;
            let rep = report::cmd_report(&r)?;
            emit(&rep.table.csv())?;
            if s.errors > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Stats { common, data, n_boot, level, no_lmm } => {
            let (files, seed, defaults) = if data.is_empty() {
                let r = resolve(&common)?;
                let agent_id = skillprobe_cli::factory::build_agent(&r).id();
                let dir = skillprobe_cli::Layout::new(&r.out_dir)
                    .report_dir(&skillprobe_cli::factory::agent_slug(&r, &agent_id))
                    .join("effects");
                let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<Result<_, _>>()?;
                files.sort();
                (files, r.seed(), Some(r.config.report.clone()))
            } else {
                (data, common.seed.unwrap_or(0), None)
            };
            let opts = AnalysisOptions {
                n_boot: n_boot.or(defaults.as_ref().map(|d| d.n_boot)).unwrap_or(DEFAULT_N_BOOT),
                level: level.or(defaults.as_ref().map(|d| d.level)).unwrap_or(0.95),
                seed,
                lmm: !no_lmm,
            };
            let mut out = std::collections::BTreeMap::new();
            for f in files {
                let file = std::fs::File::open(&f).with_context(|| format!("opening {}", f.display()))?;
                let data = EffectDataset::read_csv(file).with_context(|| f.display().to_string())?;
                out.insert(f.display().to_string(), analyze(&data, &opts));
            }
            print_json(&out)?;
        }
        Command::Validate(c) => {
            let r = resolve(&c)?;
            let (worlds, corpus, rejected, g) = gen::generate(&r)?;
            print_json(&serde_json::json!({
                "config_hash": r.config_hash,
                "scenes": worlds.len(),
                "trajectories": corpus.len(),
                "rejected": rejected.len(),
                "episodes": g.episodes.len(),
                "warnings": g.manifest.warnings,
            }))?;
        }
        Command::Serve { agent, competence } => {
            let mut a = serve::named_agent(&agent, competence)?;
            let stdin = std::io::stdin();
            serve::serve(a.as_mut(), stdin.lock(), std::io::stdout().lock())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
