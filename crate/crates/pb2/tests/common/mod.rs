#![allow(dead_code)]

use pb2_core::config::{Algorithm, RunConfig};
use pb2_core::population::DiscriminatorConfig;
use pb2_core::rewardmodel::RewardConfig;
use pb2_core::sac::SacConfig;

/// A configuration small enough to train in about a second.
pub fn tiny(algorithm: Algorithm) -> RunConfig {
    RunConfig {
        algorithm,
        seeds: vec![0, 1],
        feedback_budget: 4,
        queries_per_iter: 2,
        population: 3,
        pretrain_steps: 150,
        interact_steps: 150,
        eval_episodes: 2,
        sac: SacConfig {
            hidden: 16,
            batch_size: 16,
            warmup_steps: 50,
            ..SacConfig::default()
        },
        reward: RewardConfig {
            hidden: 16,
            hidden_layers: 2,
            epochs: 5,
            ..RewardConfig::default()
        },
        discriminator: DiscriminatorConfig {
            hidden: 16,
            batch_size: 32,
            lr: 1e-3,
            ..DiscriminatorConfig::default()
        },
        ..RunConfig::nav2d()
    }
}
