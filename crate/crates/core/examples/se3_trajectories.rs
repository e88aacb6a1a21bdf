//! Expert trajectories in the three action encodings, and what a world
//! transform does to each of them.

use eqpk::actions::{from_absolute, to_absolute, transform_world, ActionKind};
use eqpk::se3::{random_pose, Pose};
use eqpk::sim::{expert_action, reset, EnvConfig, Task};

fn main() -> eqpk::Result<()> {
    let env = EnvConfig::new(Task::PushToGoal);
    let state = reset(&env, 7, &Pose::default())?;
    let plan = expert_action(&env, &state, 8)?;
    let anchor = state.gripper;
    println!("gripper at {:?}", anchor.trans);
    for (i, s) in plan.steps().iter().enumerate() {
        println!("  step {i}: xyz {:>7.3?}  yaw {:>6.3}  width {:.3}", s.pose.trans, s.pose.rot.yaw(), s.width);
    }

    let g = Pose::planar(0.3, -0.2, 0.0, 1.1);
    let moved = transform_world(&g, &plan);
    let moved_anchor = g.compose(&anchor);
    for kind in [ActionKind::Absolute, ActionKind::Relative, ActionKind::Delta] {
        let a = from_absolute(&anchor, &plan, kind)?;
        let b = from_absolute(&moved_anchor, &moved, kind)?;
        let back = to_absolute(&anchor, &a)?;
        println!(
            "{:<9} change under world transform {:.2e}   round trip error {:.2e}",
            kind.as_str(),
            a.max_abs_diff(&b),
            back.max_abs_diff(&plan)
        );
    }

    let p = random_pose(11, 1.0, true);
    let v = p.to_vector();
    println!("pose vector {:.3?}", v.0);
    println!("decode error {:.2e}", v.to_pose()?.max_abs_diff(&p));
    Ok(())
}
