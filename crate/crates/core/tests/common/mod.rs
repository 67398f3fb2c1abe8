#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use skillprobe_core::stats::{EffectDataset, EffectRow};

/// Parameters of paired two-level synthetic data: every episode contributes a
/// row with and without the intervention.
#[derive(Debug, Clone, Copy)]
pub struct Design {
    pub n_scenes: usize,
    pub n_traj: usize,
    pub n_episodes: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sd_scene_intercept: f64,
    pub sd_scene_slope: f64,
    pub sd_traj_intercept: f64,
    pub sd_traj_slope: f64,
    pub sd_resid: f64,
}

impl Default for Design {
    fn default() -> Self {
        Design {
            n_scenes: 20,
            n_traj: 5,
            n_episodes: 4,
            alpha: 0.5,
            beta: 0.3,
            sd_scene_intercept: 0.1,
            sd_scene_slope: 0.0,
            sd_traj_intercept: 0.1,
            sd_traj_slope: 0.0,
            sd_resid: 0.05,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).unwrap().sample(rng)
    }
}

pub fn simulate(design: &Design, seed: u64) -> EffectDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for s in 0..design.n_scenes {
        let a = draw(&mut rng, design.sd_scene_intercept);
        let u = draw(&mut rng, design.sd_scene_slope);
        for t in 0..design.n_traj {
            let b = draw(&mut rng, design.sd_traj_intercept);
            let v = draw(&mut rng, design.sd_traj_slope);
            for e in 0..design.n_episodes {
                for flag in [0u8, 1] {
                    let i = flag as f64;
                    let y = design.alpha + a + b + (design.beta + u + v) * i + draw(&mut rng, design.sd_resid);
                    rows.push(EffectRow {
                        scene_id: format!("s{s:02}"),
                        trajectory_id: format!("s{s:02}/t{t}"),
                        episode_id: format!("s{s:02}/t{t}/e{e}"),
                        intervention: flag,
                        response: y,
                    });
                }
            }
        }
    }
    EffectDataset::new(rows).unwrap()
}
