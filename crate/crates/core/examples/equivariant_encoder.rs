//! Rotating the input of a C4 encoder cyclically shifts its features; a plain
//! CNN has no such structure.

use eqpk::encoders::{build_encoder, EncoderConfig, EncoderKind};
use eqpk::groups::{rotate_image, CyclicGroup};
use eqpk::se3::Pose;
use eqpk::sim::{render, reset, CameraConfig, EnvConfig, Task};

fn main() -> eqpk::Result<()> {
    let env = EnvConfig::new(Task::PickPlace);
    let state = reset(&env, 3, &Pose::default())?;
    let img = render(&state, &CameraConfig::external(28));
    let quarter = CyclicGroup::new(4)?.element(1);
    let turned = rotate_image(&quarter, &img)?;

    for kind in [EncoderKind::PlainCnn, EncoderKind::EquiCnn { order: 4 }] {
        let enc = build_encoder(&EncoderConfig::new(kind, 32, 28), 0)?;
        let f = enc.encode(&img)?;
        let ft = enc.encode(&turned)?;
        let expected = f.rep.apply(&quarter, &f.values)?;
        let err = ft
            .values
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{:<12} |f(g·x) - ρ(g)f(x)| = {err:.3e}", kind.label());
    }
    Ok(())
}
