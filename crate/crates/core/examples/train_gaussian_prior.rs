// Train the score network on draws from a Gaussian image law and compare
// it with the exact score of the diffused law.
//
// ```bash
// cargo run --release --example train_gaussian_prior -- 20000
// ```

use mtd::eval::{derive_seed, SweepPlan};
use mtd::prior::{smoothed, train, MlpScoreNet, TrainConfig, VpSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Returns the relative L2 error of the trained score at `t = 0.1`.
pub fn run_example(steps: usize) -> mtd::Result<f64> {
    let plan = SweepPlan::default();
    let law = plan.law();
    let schedule = VpSchedule::default();
    let data = plan.training_set(&law);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[5]));
    let net = MlpScoreNet::new(&[25, 128, 128, 25], true, &mut rng)?;
    let config = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let out = train(net, data.view(), &schedule, &config)?;
    let curve = smoothed(&out.history, 200);
    for step in (0..curve.len()).step_by((curve.len() / 6).max(1)) {
        println!("step {step:5}  loss {:.4}", curve[step]);
    }

    let t = 0.1;
    let mut held_out = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[9]));
    let rel = law.score_error(&out.net, &schedule, t, 1000, &mut held_out)?;
    println!("relative L2 error of the score at t = {t}: {rel:.4}");
    Ok(rel)
}

fn main() -> mtd::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    run_example(steps)?;
    Ok(())
}
