//! Collect demonstrations, train a small relative eye-in-hand policy and
//! evaluate it under rotated worlds.

use eqpk::harness::{collect, evaluate, train, ExperimentConfig};

const CONFIG: &str = r#"
seeds = [0]
demos = 30
train_steps = 400
batch_size = 16
eval_episodes = 10
eval_rotations = 3

[env]
task = "reach"

[policy]
image_size = 28
crop = 28

[policy.encoder]
feature_dim = 32
input_size = 28

[policy.encoder.kind]
type = "equi_cnn"
order = 4
"#;

fn main() -> eqpk::Result<()> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let seed = cfg.seeds[0];
    let ds = collect(&cfg, seed)?;
    println!("collected {} episodes, {} steps", ds.episodes.len(), ds.n_steps());
    let mut log = Vec::new();
    let out = train(&cfg, seed, &ds, &mut log)?;
    print!("{}", String::from_utf8_lossy(&log));
    let rec = evaluate(&cfg, seed, &out.bundle)?;
    for t in &rec.transforms {
        println!("rz {:>6.1} deg: {}/{}", t.angle.to_degrees(), t.successes, t.episodes);
    }
    println!("success {:.3}  equivariance error {:.2e}", rec.success_rate, rec.equivariance_error);
    Ok(())
}
