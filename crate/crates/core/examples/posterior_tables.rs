// E-step: the posterior over (shift, rotation) for each patch, evaluated by
// direct template matching and by FFT cross-correlation.
//
// ```bash
// cargo run --example posterior_tables
// ```

use mtd::em::uniform_init;
use mtd::eval::SweepPlan;
use mtd::likelihood::{partition, Likelihood, TablePath};
use mtd::synth::{synthesize, MeasurementSpec, NoiseLevel};
use mtd::ShiftIndex;

pub fn run_example() -> mtd::Result<f64> {
    let plan = SweepPlan::default();
    let target = plan.target(&plan.law(), 0);
    let spec = MeasurementSpec {
        n: 55,
        l: 5,
        k: 4,
        density: 0.1,
        noise: NoiseLevel::Snr(10.0),
        area: None,
        seed: 3,
    };
    let m = synthesize(&spec, &target)?;
    let patches = partition(&m.values, 5, m.sigma)?;
    let direct = Likelihood::new(&patches, 4, TablePath::Direct)?;
    let fast = Likelihood::new(&patches, 4, TablePath::Fast)?;

    let post = direct.posterior(&target)?;
    let occ = m.truth[0];
    let patch = (occ.row / 5) * 11 + occ.col / 5;
    let row = post.row(patch);
    let (best, w) = row
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc });
    let shift = ShiftIndex::from_flat(best / 4, 5);
    println!(
        "patch {patch} holds an occurrence at ({}, {}) rotated {} quarter turns",
        occ.row, occ.col, occ.rotation
    );
    println!("  most likely hypothesis: shift ({}, {}), rotation {}, weight {:.3}", shift.lx(), shift.ly(), best % 4, w);

    let empty = (0..patches.len()).find(|&p| {
        !m.truth
            .iter()
            .any(|o| o.row / 5 <= p / 11 && p / 11 <= (o.row + 4) / 5 && o.col / 5 <= p % 11 && p % 11 <= (o.col + 4) / 5)
    });
    if let Some(p) = empty {
        let absent = ShiftIndex::new(5, 5, 5)?.flat(5);
        let mass: f64 = (0..4).map(|k| post.weight(p, absent, k)).sum();
        println!("patch {p} is pure noise; weight on the empty hypothesis {mass:.3}");
    }

    let guess = uniform_init(5, 1);
    let a = direct.tables(&guess)?;
    let b = fast.tables(&guess)?;
    let mut worst = 0.0f64;
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        worst = worst.max((x - y).abs() / x.abs().max(1.0));
    }
    println!("direct and FFT tables agree to {worst:.2e} (relative)");
    Ok(worst)
}

fn main() -> mtd::Result<()> {
    run_example()?;
    Ok(())
}
