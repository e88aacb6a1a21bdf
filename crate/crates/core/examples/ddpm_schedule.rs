//! Noise schedules and a forward/reverse pass with a perfect noise
//! predictor.

use eqpk::policy::{make_noise_schedule, ScheduleKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> eqpk::Result<()> {
    let k = 50;
    for kind in [ScheduleKind::Linear, ScheduleKind::SquaredCosine] {
        let s = make_noise_schedule(k, kind)?;
        println!("{kind:?}");
        for step in [1, 10, 25, 40, 50] {
            println!(
                "  k {step:>2}  beta {:.5}  alpha_bar {:.5}  sigma {:.5}",
                s.betas[step - 1],
                s.alpha_bars[step - 1],
                s.sigma(step)
            );
        }
    }

    let s = make_noise_schedule(k, ScheduleKind::SquaredCosine)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a0 = vec![0.5, -0.25, 0.8];
    let eps: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
    let t = 20;
    let mut a = s.add_noise(&a0, t, &eps)?;
    println!("noised to k={t}: {a:.4?}");
    let zeros = vec![0.0; 3];
    for step in (1..=t).rev() {
        // The exact noise that maps the current sample back to a0.
        let ab = s.alpha_bars[step - 1];
        let eps_hat: Vec<f64> = a.iter().zip(&a0).map(|(x, x0)| (x - ab.sqrt() * x0) / (1.0 - ab).sqrt()).collect();
        s.reverse_step(step, &mut a, &eps_hat, &zeros);
    }
    println!("denoised:        {a:.4?} (target {a0:?})");
    Ok(())
}
