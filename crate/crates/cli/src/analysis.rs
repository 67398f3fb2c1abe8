//! Bootstrap and mixed-model analysis of one effect dataset.

use serde::Serialize;

use skillprobe_core::stats::{hierarchical_bootstrap, lrt_fixed_effect, mean_difference, BootstrapCi, LrtResult};
use skillprobe_core::{EffectDataset, LmmFit};

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
    pub lmm: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LmmReport {
    pub fit: LmmFit,
    pub lrt: LrtResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentStats {
    pub n_rows: usize,
    pub n_scenes: usize,
    pub n_trajectories: usize,
    /// Mean response with the intervention minus without, with a
    /// scene-then-trajectory bootstrap interval.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_difference: Option<BootstrapCi>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lmm: Option<LmmReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

pub fn analyze(data: &EffectDataset, opts: &AnalysisOptions) -> ExperimentStats {
    let groups = data.groups();
    let mut out = ExperimentStats {
        n_rows: data.len(),
        n_scenes: groups.len(),
        n_trajectories: groups.values().map(|t| t.len()).sum(),
        mean_difference: None,
        lmm: None,
        errors: Vec::new(),
    };
    let has_both = [0u8, 1].iter().all(|f| data.rows().iter().any(|r| r.intervention == *f));
    if !has_both {
        out.errors.push("both intervention levels are required".into());
        return out;
    }
    if opts.n_boot > 0 {
        match hierarchical_bootstrap(data, mean_difference, opts.n_boot, opts.seed, opts.level) {
            Ok(ci) => out.mean_difference = Some(ci),
            Err(e) => out.errors.push(format!("bootstrap: {e}")),
        }
    }
    if opts.lmm {
        match lrt_fixed_effect(data) {
            Ok((fit, lrt)) => out.lmm = Some(LmmReport { fit, lrt }),
            Err(e) => out.errors.push(format!("lmm: {e}")),
        }
    }
    out
}
