//! With only an eye-in-hand camera, relative and delta policies are invariant
//! to world transforms while absolute ones are not.

use eqpk::actions::ActionKind;
use eqpk::checks::policy_error;

fn main() -> eqpk::Result<()> {
    for kind in [ActionKind::Relative, ActionKind::Delta, ActionKind::Absolute] {
        for pose in [false, true] {
            let err = policy_error(kind, pose, 10, 1)?;
            println!(
                "{:<9} pose-conditioned {:<5}  max |g·π(o) − π(g·o)| = {err:.3e}",
                kind.as_str(),
                pose
            );
        }
    }
    Ok(())
}
