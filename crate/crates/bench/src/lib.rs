//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use skillprobe_core::alignment::{generate_synthetic_corpus, truncation_candidates, SyntheticCorpusParams};
use skillprobe_core::world::{generate_synthetic_world, SyntheticWorldParams};
use skillprobe_core::{EffectDataset, EffectRow, TruncationCandidate, World};

pub fn world(seed: u64, n_nodes: usize) -> World {
    let params = SyntheticWorldParams { n_nodes, ..Default::default() };
    generate_synthetic_world(seed, &params).expect("synthetic world")
}

/// Truncation candidates of a synthetic corpus on `world`.
pub fn candidates(world: &World, seed: u64, n_trajectories: usize) -> Vec<TruncationCandidate> {
    let params = SyntheticCorpusParams { n_trajectories, ..Default::default() };
    generate_synthetic_corpus(world, seed, &params).iter().flat_map(|t| truncation_candidates(t, world)).collect()
}

/// Paired rows with random scene and trajectory intercepts and a 0.3 effect.
pub fn effect_dataset(seed: u64, n_scenes: usize, n_traj: usize, n_episodes: usize) -> EffectDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::new();
    for s in 0..n_scenes {
        let a = 0.1 * unit.sample(&mut rng);
        for t in 0..n_traj {
            let b = 0.1 * unit.sample(&mut rng);
            for e in 0..n_episodes {
                for flag in [0u8, 1] {
                    rows.push(EffectRow {
                        scene_id: format!("s{s}"),
                        trajectory_id: format!("s{s}/t{t}"),
                        episode_id: format!("s{s}/t{t}/e{e}"),
                        intervention: flag,
                        response: 0.5 + a + b + 0.3 * flag as f64 + 0.05 * unit.sample(&mut rng),
                    });
                }
            }
        }
    }
    EffectDataset::new(rows).expect("well-formed rows")
}
