// Build a noisy measurement from a random Gaussian-law target and write it
// to disk in the grid format with its JSON sidecar.
//
// ```bash
// cargo run --example synthesize -- 5.0
// ```

use mtd::eval::SweepPlan;
use mtd::io;
use mtd::synth::{synthesize, Measurement, MeasurementSpec, NoiseLevel};

pub fn run_example(snr: f64, dir: &std::path::Path) -> mtd::Result<Measurement> {
    let plan = SweepPlan::default();
    let law = plan.law();
    let target = plan.target(&law, 0);
    let spec = MeasurementSpec {
        n: 55,
        l: 5,
        k: 4,
        density: 0.1,
        noise: NoiseLevel::Snr(snr),
        area: None,
        seed: 7,
    };
    let m = synthesize(&spec, &target)?;
    println!("planted {} copies, sigma = {:.4}", m.truth.len(), m.sigma);
    for occ in &m.truth {
        println!("  corner ({:2}, {:2}) rotated {:3} degrees", occ.row, occ.col, 90 * occ.rotation);
    }
    let path = dir.join("measurement.grid");
    io::write_measurement(&path, &m)?;
    io::write_image(&dir.join("target.grid"), &target)?;
    let back = io::read_measurement(&path)?;
    println!("wrote {} (reload identical: {})", path.display(), back == m);
    Ok(m)
}

fn main() -> mtd::Result<()> {
    let snr = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5.0);
    let dir = std::env::temp_dir().join("mtd-synthesize");
    std::fs::create_dir_all(&dir).map_err(|e| mtd::MtdError::Io { path: dir.clone(), source: e })?;
    run_example(snr, &dir)?;
    Ok(())
}
