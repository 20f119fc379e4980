// Approximate EM on a synthetic measurement: a noiseless run started near
// the truth, then a noisy run from a random start with and without the
// exact Gaussian prior.
//
// ```bash
// cargo run --release --example reconstruct -- 2.0
// ```

use mtd::em::{run, uniform_init, EmConfig};
use mtd::eval::{relative_error, SweepPlan};
use mtd::prior::{GaussianPrior, ZeroPrior};
use mtd::synth::{synthesize, MeasurementSpec, NoiseLevel};
use mtd::Grid;

fn spec(noise: NoiseLevel, seed: u64) -> MeasurementSpec {
    MeasurementSpec {
        n: 55,
        l: 5,
        k: 4,
        density: 0.1,
        noise,
        area: None,
        seed,
    }
}

/// Returns the errors of (noiseless, noisy without prior, noisy with prior).
pub fn run_example(snr: f64, iters: usize) -> mtd::Result<(f64, f64, f64)> {
    let plan = SweepPlan::default();
    let law = plan.law();
    let target = plan.target(&law, 0);

    let clean = synthesize(&spec(NoiseLevel::Sigma(0.0), 1), &target)?;
    let near = Grid::from_fn(5, |i, j| target[(i, j)] + if (i + j) % 2 == 0 { 0.05 } else { -0.05 });
    let state = run(&clean, &near, &ZeroPrior, &EmConfig::default())?;
    let e0 = relative_error(&target, &state.estimate, 4)?;
    println!("noiseless, near-truth start: error {e0:.2e} after {} iterations", state.iterations);

    let noisy = synthesize(&spec(NoiseLevel::Snr(snr), 2), &target)?;
    let init = uniform_init(5, 3);
    let config = EmConfig {
        max_iters: iters,
        ..EmConfig::default()
    };
    println!("SNR {snr}, sigma {:.3}, random start, {iters} iterations", noisy.sigma);
    let plain = run(&noisy, &init, &ZeroPrior, &config)?;
    let e1 = relative_error(&target, &plain.estimate, 4)?;
    println!("  no prior       error {e1:.4}");
    let prior = GaussianPrior::new(law.mean().to_vec());
    let with = run(&noisy, &init, &prior, &config)?;
    let e2 = relative_error(&target, &with.estimate, 4)?;
    println!("  Gaussian prior error {e2:.4}");
    Ok((e0, e1, e2))
}

fn main() -> mtd::Result<()> {
    let snr = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let iters = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    run_example(snr, iters)?;
    Ok(())
}
