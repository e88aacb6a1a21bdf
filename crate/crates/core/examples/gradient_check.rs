//! Finite-difference checks of every layer's backward pass.

use eqpk::checks::gradient_suite;

fn main() -> eqpk::Result<()> {
    for row in gradient_suite(&[0, 1])? {
        println!("{:<40} {:.3e}  {}", row.name, row.max_error, if row.passes(1.0) { "ok" } else { "FAIL" });
    }
    Ok(())
}
