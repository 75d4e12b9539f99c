#![allow(dead_code)]

use scenecomp::config::RunConfig;

/// A run config small enough for tests: few clips, small rooms, two
/// sampling steps.
pub fn tiny_config() -> RunConfig {
    RunConfig::parse(
        "",
        &[
            "world.points=3000".into(),
            "world.train_scenes=2".into(),
            "world.heldout_scenes=1".into(),
            "world.train_clips=6".into(),
            "world.val_clips=2".into(),
            "train.steps=4".into(),
            "eval.sampling_steps=2".into(),
            "eval.long_seeds=1".into(),
        ],
    )
    .unwrap()
}
