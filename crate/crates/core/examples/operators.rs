// The linear operators behind the patch model: rotation, zero padding,
// circular shift and crop, each with its adjoint.
//
// ```bash
// cargo run --example operators
// ```

use mtd::grid::{adjoint_rotate, circ_shift, patch_template, rotate, zero_pad, RotationSet};
use mtd::{Grid, RotationIndex, ShiftIndex};

fn show(title: &str, g: &Grid) {
    println!("{title}");
    for i in 0..g.side() {
        let row: Vec<String> = (0..g.side()).map(|j| format!("{:5.1}", g[(i, j)])).collect();
        println!("  {}", row.join(" "));
    }
}

pub fn run_example() -> mtd::Result<()> {
    let f = Grid::from_fn(3, |i, j| (3 * i + j + 1) as f64);
    show("target", &f);
    let quarter = RotationIndex::new(1, 4)?;
    show("rotated a quarter turn counter-clockwise", &rotate(&f, quarter));
    show("adjoint of that rotation", &adjoint_rotate(&rotate(&f, quarter), quarter));

    let padded = zero_pad(&f);
    show("zero padded to 2L", padded.as_grid());
    let shift = ShiftIndex::new(1, 2, 3)?;
    show("padded image shifted by (1, 2)", circ_shift(&padded, shift).as_grid());
    show("patch template for that shift", &patch_template(&f, shift, RotationIndex::new(0, 4)?));

    let absent = ShiftIndex::new(3, 3, 3)?;
    let empty = patch_template(&f, absent, quarter);
    println!("shift (L, L) leaves the patch empty: {}", empty.norm_sq() == 0.0);

    // off-grid angles use bilinear interpolation about the centre
    let eight = RotationSet::new(5, 8)?;
    let g = Grid::from_fn(5, |i, j| ((i + 2 * j) % 5) as f64);
    let r = eight.plan(1).apply(&g);
    let back = eight.plan(1).apply_adjoint(&r);
    println!(
        "45 degree rotation: <Rg, Rg> = {:.6}, <g, R^T R g> = {:.6}",
        r.dot(&r),
        g.dot(&back)
    );
    Ok(())
}

fn main() -> mtd::Result<()> {
    run_example()
}
