#![allow(dead_code)]

use subspace_cl::harness::ExperimentConfig;

/// A small synthetic experiment that runs in well under a second.
pub fn small_toml(tasks: usize, noise: f64) -> String {
    format!(
        r#"
seed = 1993
mode = "aee"

[stream]
kind = "synthetic"
tasks = {tasks}
classes_per_task = 4
input_dim = {input_dim}
block_dims = 3
noise = {noise}
per_class = 20

[backbone]
kind = "random_projection"
dim = 16

[peft]
rank = 2
epochs = 5
lr = 0.01

[classifier]
epochs = 10
"#,
        input_dim = 3 * tasks
    )
}

pub fn small_config(tasks: usize, noise: f64) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&small_toml(tasks, noise)).expect("small config is valid")
}
