use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{EffectDataset, EffectRow};
use super::StatsError;

pub const DEFAULT_N_BOOT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n_boot: usize,
}

/// Indices into the sorted replicate vector that bound a percentile interval.
pub fn percentile_indices(n_boot: usize, level: f64) -> (usize, usize) {
    let alpha = 1.0 - level;
    // the epsilon keeps e.g. 0.05 * 500 from rounding down to 24
    let lo = (alpha / 2.0 * n_boot as f64 + 1e-9).floor() as usize;
    let hi = ((1.0 - alpha / 2.0) * n_boot as f64 - 1e-9).ceil() as usize;
    (lo.min(n_boot - 1), hi.saturating_sub(1).clamp(lo.min(n_boot - 1), n_boot - 1))
}

/// One resample: scenes with replacement, then trajectories with replacement
/// within each drawn scene, keeping every row of a drawn trajectory.
fn resample<'a>(groups: &[Vec<Vec<&'a EffectRow>>], rng: &mut ChaCha8Rng) -> Vec<&'a EffectRow> {
    let mut out = Vec::new();
    for _ in 0..groups.len() {
        let scene = &groups[rng.random_range(0..groups.len())];
        for _ in 0..scene.len() {
            out.extend_from_slice(&scene[rng.random_range(0..scene.len())]);
        }
    }
    out
}

/// Replicate values of `statistic`, in replicate order. Replicate `r` draws
/// from its own stream `(seed, r)`, so results do not depend on scheduling.
pub fn bootstrap_replicates<F>(
    data: &EffectDataset,
    statistic: F,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<f64>, StatsError>
where
    F: Fn(&[&EffectRow]) -> f64 + Sync,
{
    if data.is_empty() {
        return Err(StatsError::Empty);
    }
    let rows = data.rows();
    let groups: Vec<Vec<Vec<&EffectRow>>> = data
        .groups()
        .into_values()
        .map(|trajs| trajs.into_values().map(|idx| idx.into_iter().map(|i| &rows[i]).collect()).collect())
        .collect();
    Ok((0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            statistic(&resample(&groups, &mut rng))
        })
        .collect())
}

pub fn hierarchical_bootstrap<F>(
    data: &EffectDataset,
    statistic: F,
    n_boot: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapCi, StatsError>
where
    F: Fn(&[&EffectRow]) -> f64 + Sync,
{
    if n_boot == 0 || !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidArgument(format!("n_boot = {n_boot}, level = {level}")));
    }
    let all: Vec<&EffectRow> = data.rows().iter().collect();
    let mut reps = bootstrap_replicates(data, &statistic, n_boot, seed)?;
    let point = statistic(&all);
    reps.sort_by(f64::total_cmp);
    let (lo, hi) = percentile_indices(n_boot, level);
    Ok(BootstrapCi { point, ci_low: reps[lo], ci_high: reps[hi], level, n_boot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::dataset::mean_response;

    fn data(values: &[(&str, &str, f64)]) -> EffectDataset {
        EffectDataset::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &(s, t, y))| EffectRow {
                    scene_id: s.into(),
                    trajectory_id: t.into(),
                    episode_id: format!("e{i}"),
                    intervention: 0,
                    response: y,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn indices() {
        assert_eq!(percentile_indices(1000, 0.95), (25, 974));
        assert_eq!(percentile_indices(1, 0.95), (0, 0));
    }

    #[test]
    fn single_trajectory_collapses() {
        let d = data(&[("s", "t", 1.0), ("s", "t", 2.0), ("s", "t", 6.0)]);
        let ci = hierarchical_bootstrap(&d, mean_response, 200, 1, 0.95).unwrap();
        assert_eq!((ci.point, ci.ci_low, ci.ci_high), (3.0, 3.0, 3.0));
    }

    #[test]
    fn reproducible() {
        let d = data(&[("a", "t1", 1.0), ("a", "t2", 2.0), ("b", "t3", 6.0), ("b", "t4", 0.5)]);
        let x = bootstrap_replicates(&d, mean_response, 300, 9).unwrap();
        let y = bootstrap_replicates(&d, mean_response, 300, 9).unwrap();
        assert_eq!(
            x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(x, bootstrap_replicates(&d, mean_response, 300, 10).unwrap());
    }

    #[test]
    fn empty_is_error() {
        let d = EffectDataset::new(vec![]).unwrap();
        assert!(matches!(hierarchical_bootstrap(&d, mean_response, 10, 0, 0.95), Err(StatsError::Empty)));
    }
}
