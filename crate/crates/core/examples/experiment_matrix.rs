//! A reduced version of the encoder/action comparison: every arm on one task,
//! two seeds, then the grouped summary.

use eqpk::harness::{comparison_arms, report_csv, run_matrix, ExperimentConfig};

const BASE: &str = r#"
seeds = [0, 1]
demos = 20
train_steps = 200
batch_size = 16
eval_episodes = 8
eval_rotations = 3

[env]
task = "reach"

[policy]
image_size = 28
crop = 28

[policy.encoder]
input_size = 28
"#;

fn main() -> eqpk::Result<()> {
    let base = ExperimentConfig::from_toml(BASE)?;
    let arms = comparison_arms(&base);
    let records = run_matrix(&arms, |r| {
        eprintln!("{:<26} seed {}  success {:.3}", r.name, r.seed, r.success_rate);
    })?;
    let (_, summary) = report_csv(&records)?;
    print!("{summary}");
    Ok(())
}
