//! Frame averaging turns an arbitrary map into a C_n-equivariant one.

use eqpk::groups::{equivariance_error, symmetrize, CyclicGroup, Representation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> eqpk::Result<()> {
    let order = 6;
    let group = CyclicGroup::new(order)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w: Vec<f64> = (0..order * order).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = move |x: &[f64]| -> eqpk::Result<Vec<f64>> {
        Ok((0..order)
            .map(|r| (0..order).map(|c| w[r * order + c] * x[c]).sum::<f64>().tanh())
            .collect())
    };
    let samples: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..order).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let rho = Representation::regular(order, 1);

    let before = equivariance_error(&f, &group, &rho, &rho, &samples)?;
    let sym = symmetrize(f, group, rho.clone(), rho.clone());
    let after = equivariance_error(|x: &[f64]| sym.eval(x), &group, &rho, &rho, &samples)?;
    println!("C{order} regular -> regular");
    println!("  raw map         {before:.3e}");
    println!("  symmetrized map {after:.3e}");
    Ok(())
}
