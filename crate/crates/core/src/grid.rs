//! Square grids and the discrete operators of the patch model.
//!
//! A patch of the measurement is modelled as `C T_l Z R_phi F`: rotate the
//! `L x L` target, zero-pad it to `2L x 2L`, circularly shift it, and crop the
//! top-left `L x L` window. Every operator here has an adjoint under the
//! Frobenius inner product so the Q-gradient can pull residuals back to image
//! space.
//!
//! Rotation convention: increasing `k` rotates counter-clockwise. For the
//! `2 x 2` grid `[[1, 2], [3, 4]]` a quarter turn gives `[[2, 4], [1, 3]]`.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use crate::error::{MtdError, Result};

/// Square real-valued grid stored row-major; `[i, j]` has `i` as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    side: usize,
    values: Vec<f64>,
}

/// An `L x L` target image.
pub type ImageGrid = Grid;

impl Grid {
    pub fn zeros(side: usize) -> Self {
        Grid {
            side,
            values: vec![0.0; side * side],
        }
    }

    pub fn filled(side: usize, value: f64) -> Self {
        Grid {
            side,
            values: vec![value; side * side],
        }
    }

    /// Builds a grid from row-major values, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_vec(side: usize, values: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(MtdError::InvalidParameter("grid side must be at least 1".into()));
        }
        if values.len() != side * side {
            return Err(MtdError::DimensionMismatch(format!(
                "{} values cannot fill a {side}x{side} grid",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(MtdError::NonFinite(format!("grid entry {pos} is {}", values[pos])));
        }
        Ok(Grid { side, values })
    }

    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                values.push(f(i, j));
            }
        }
        Grid { side, values }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Grid) -> f64 {
        debug_assert_eq!(self.side, other.side);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn sub(&self, other: &Grid) -> Grid {
        debug_assert_eq!(self.side, other.side);
        Grid {
            side: self.side,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Grid) {
        debug_assert_eq!(self.side, other.side);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Grid {
        Grid {
            side: self.side,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Copies the `size x size` block whose top-left corner is `(row, col)`.
    pub fn block(&self, row: usize, col: usize, size: usize) -> Grid {
        Grid::from_fn(size, |i, j| self[(row + i, col + j)])
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[i * self.side + j]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.values[i * self.side + j]
    }
}

/// A `2L x 2L` grid: the zero-padded frame of an `L x L` image.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGrid(Grid);

impl PaddedGrid {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.side() % 2 != 0 {
            return Err(MtdError::DimensionMismatch(format!(
                "padded grid side {} is odd",
                grid.side()
            )));
        }
        Ok(PaddedGrid(grid))
    }

    pub fn zeros(source_side: usize) -> Self {
        PaddedGrid(Grid::zeros(2 * source_side))
    }

    /// Side `L` of the image this frame pads.
    pub fn source_side(&self) -> usize {
        self.0.side() / 2
    }

    pub fn side(&self) -> usize {
        self.0.side()
    }

    pub fn as_grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

/// Circular shift `(lx, ly)` with both components in `0..2L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShiftIndex {
    lx: usize,
    ly: usize,
}

impl ShiftIndex {
    pub fn new(lx: usize, ly: usize, source_side: usize) -> Result<Self> {
        let period = 2 * source_side;
        if lx >= period || ly >= period {
            return Err(MtdError::InvalidParameter(format!(
                "shift ({lx}, {ly}) outside 0..{period}"
            )));
        }
        Ok(ShiftIndex { lx, ly })
    }

    pub fn lx(&self) -> usize {
        self.lx
    }

    pub fn ly(&self) -> usize {
        self.ly
    }

    /// Position in the row-major enumeration of all `(2L)^2` shifts.
    pub fn flat(&self, source_side: usize) -> usize {
        self.lx * 2 * source_side + self.ly
    }

    pub fn from_flat(flat: usize, source_side: usize) -> Self {
        let period = 2 * source_side;
        ShiftIndex {
            lx: flat / period,
            ly: flat % period,
        }
    }

    /// The shift that undoes this one.
    pub fn inverse(&self, source_side: usize) -> Self {
        let period = 2 * source_side;
        ShiftIndex {
            lx: (period - self.lx) % period,
            ly: (period - self.ly) % period,
        }
    }

    /// All `(2L)^2` shifts in row-major order.
    pub fn all(source_side: usize) -> impl Iterator<Item = ShiftIndex> {
        let period = 2 * source_side;
        (0..period * period).map(move |f| ShiftIndex {
            lx: f / period,
            ly: f % period,
        })
    }
}

/// Rotation `k` out of a uniform grid of `count` angles, `phi = 2 pi k / count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RotationIndex {
    k: usize,
    count: usize,
}

impl RotationIndex {
    pub fn new(k: usize, count: usize) -> Result<Self> {
        if count == 0 || k >= count {
            return Err(MtdError::InvalidParameter(format!(
                "rotation index {k} outside 0..{count}"
            )));
        }
        Ok(RotationIndex { k, count })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn angle(&self) -> f64 {
        2.0 * PI * self.k as f64 / self.count as f64
    }

    /// Number of counter-clockwise quarter turns when the angle is a
    /// multiple of 90 degrees.
    pub fn quarter_turns(&self) -> Option<usize> {
        let q = 4 * self.k;
        (q % self.count == 0).then(|| (q / self.count) % 4)
    }

    pub fn all(count: usize) -> impl Iterator<Item = RotationIndex> {
        (0..count).map(move |k| RotationIndex { k, count })
    }
}

/// Sparse linear map for one rotation: `out[dst] = sum w * in[src]`.
///
/// Gathering applies the rotation; scattering the same taps applies its
/// adjoint. Quarter turns are stored as a permutation with unit weights.
#[derive(Debug, Clone)]
pub struct RotationPlan {
    side: usize,
    rotation: RotationIndex,
    taps: Vec<(u32, u32, f64)>,
}

impl RotationPlan {
    pub fn new(side: usize, rotation: RotationIndex) -> Self {
        let taps = match rotation.quarter_turns() {
            Some(q) => quarter_turn_taps(side, q),
            None => bilinear_taps(side, rotation.angle()),
        };
        RotationPlan {
            side,
            rotation,
            taps,
        }
    }

    pub fn rotation(&self) -> RotationIndex {
        self.rotation
    }

    pub fn is_exact(&self) -> bool {
        self.rotation.quarter_turns().is_some()
    }

    pub fn apply(&self, image: &Grid) -> Grid {
        debug_assert_eq!(image.side(), self.side);
        let src = image.values();
        let mut out = Grid::zeros(self.side);
        let dst = out.values_mut();
        for &(d, s, w) in &self.taps {
            dst[d as usize] += w * src[s as usize];
        }
        out
    }

    pub fn apply_adjoint(&self, image: &Grid) -> Grid {
        debug_assert_eq!(image.side(), self.side);
        let src = image.values();
        let mut out = Grid::zeros(self.side);
        let dst = out.values_mut();
        for &(d, s, w) in &self.taps {
            dst[s as usize] += w * src[d as usize];
        }
        out
    }
}

fn quarter_turn_taps(side: usize, q: usize) -> Vec<(u32, u32, f64)> {
    let last = side - 1;
    let mut taps = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let (si, sj) = match q {
                0 => (i, j),
                1 => (j, last - i),
                2 => (last - i, last - j),
                _ => (last - j, i),
            };
            taps.push(((i * side + j) as u32, (si * side + sj) as u32, 1.0));
        }
    }
    taps
}

fn bilinear_taps(side: usize, angle: f64) -> Vec<(u32, u32, f64)> {
    let center = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let n = side as isize;
    let mut taps = Vec::with_capacity(4 * side * side);
    for i in 0..side {
        for j in 0..side {
            let y = i as f64 - center;
            let x = j as f64 - center;
            let sy = cos * y + sin * x + center;
            let sx = -sin * y + cos * x + center;
            let y0 = sy.floor();
            let x0 = sx.floor();
            let fy = sy - y0;
            let fx = sx - x0;
            let (y0, x0) = (y0 as isize, x0 as isize);
            let corners = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x0 + 1, (1.0 - fy) * fx),
                (y0 + 1, x0, fy * (1.0 - fx)),
                (y0 + 1, x0 + 1, fy * fx),
            ];
            for (r, c, w) in corners {
                if w == 0.0 || r < 0 || c < 0 || r >= n || c >= n {
                    continue;
                }
                let src = r as usize * side + c as usize;
                taps.push(((i * side + j) as u32, src as u32, w));
            }
        }
    }
    taps
}

/// `R_phi F`. Quarter turns are exact permutations; other angles use
/// bilinear interpolation about the grid center with zero fill.
pub fn rotate(image: &Grid, rotation: RotationIndex) -> Grid {
    if rotation.k() == 0 {
        return image.clone();
    }
    RotationPlan::new(image.side(), rotation).apply(image)
}

/// `R_phi^T G`. For quarter turns this is the inverse rotation.
pub fn adjoint_rotate(image: &Grid, rotation: RotationIndex) -> Grid {
    if rotation.k() == 0 {
        return image.clone();
    }
    RotationPlan::new(image.side(), rotation).apply_adjoint(image)
}

/// `Z F`: pads `L` zeros to the right and bottom.
pub fn zero_pad(image: &Grid) -> PaddedGrid {
    let l = image.side();
    let mut out = Grid::zeros(2 * l);
    for i in 0..l {
        out.values_mut()[i * 2 * l..i * 2 * l + l].copy_from_slice(&image.values()[i * l..(i + 1) * l]);
    }
    PaddedGrid(out)
}

/// `Z^T P`: the top-left `L x L` block.
pub fn adjoint_pad(padded: &PaddedGrid) -> Grid {
    padded.as_grid().block(0, 0, padded.source_side())
}

/// `(T_l P)[i, j] = P[(i + lx) mod 2L, (j + ly) mod 2L]`.
pub fn circ_shift(padded: &PaddedGrid, shift: ShiftIndex) -> PaddedGrid {
    let n = padded.side();
    let src = padded.as_grid();
    let (lx, ly) = (shift.lx() % n, shift.ly() % n);
    PaddedGrid(Grid::from_fn(n, |i, j| src[((i + lx) % n, (j + ly) % n)]))
}

/// `T_l^T P`, which is the shift by `-l`.
pub fn adjoint_shift(padded: &PaddedGrid, shift: ShiftIndex) -> PaddedGrid {
    circ_shift(padded, shift.inverse(padded.source_side()))
}

/// `C P`: the top-left `L x L` window.
pub fn crop(padded: &PaddedGrid) -> Grid {
    padded.as_grid().block(0, 0, padded.source_side())
}

/// `C^T G`: embeds `G` in the top-left of a zero `2L x 2L` frame.
pub fn adjoint_crop(image: &Grid) -> PaddedGrid {
    zero_pad(image)
}

/// The patch template `C T_l Z R_phi F`.
pub fn patch_template(image: &Grid, shift: ShiftIndex, rotation: RotationIndex) -> Grid {
    crop(&circ_shift(&zero_pad(&rotate(image, rotation)), shift))
}

/// Precomputed rotation plans for all `K` angles of one image side.
#[derive(Debug, Clone)]
pub struct RotationSet {
    side: usize,
    plans: Vec<RotationPlan>,
}

impl RotationSet {
    pub fn new(side: usize, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(MtdError::InvalidParameter("rotation count must be positive".into()));
        }
        let plans = RotationIndex::all(count).map(|r| RotationPlan::new(side, r)).collect();
        Ok(RotationSet { side, plans })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn count(&self) -> usize {
        self.plans.len()
    }

    pub fn plan(&self, k: usize) -> &RotationPlan {
        &self.plans[k]
    }

    pub fn rotate_all(&self, image: &Grid) -> Vec<Grid> {
        self.plans.iter().map(|p| p.apply(image)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(side: usize, rng: &mut ChaCha8Rng) -> Grid {
        Grid::from_fn(side, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let f = Grid::from_vec(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = rotate(&f, RotationIndex::new(1, 4).unwrap());
        assert_eq!(r.values(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn quarter_turns_compose_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_grid(5, &mut rng);
        let once = rotate(&f, RotationIndex::new(1, 4).unwrap());
        let back = rotate(&once, RotationIndex::new(3, 4).unwrap());
        assert_eq!(back, f);
        assert_eq!(rotate(&f, RotationIndex::new(0, 4).unwrap()), f);
        // 8-fold grid reuses the exact path on even k
        let half = rotate(&f, RotationIndex::new(4, 8).unwrap());
        assert_eq!(half, rotate(&f, RotationIndex::new(2, 4).unwrap()));
    }

    #[test]
    fn quarter_turn_preserves_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_grid(6, &mut rng);
        for k in 0..4 {
            let r = rotate(&f, RotationIndex::new(k, 4).unwrap());
            assert!((r.norm_sq() - f.norm_sq()).abs() <= 1e-12 * f.norm_sq());
        }
    }

    #[test]
    fn interpolated_rotation_keeps_center_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rot = RotationIndex::new(1, 8).unwrap();
        let mut f = Grid::zeros(5);
        f[(2, 2)] = 1.0;
        let r = rotate(&f, rot);
        assert!((r[(2, 2)] - 1.0).abs() < 1e-12);

        let x = random_grid(7, &mut rng);
        let y = random_grid(7, &mut rng);
        for k in 0..5 {
            let rot = RotationIndex::new(k, 5).unwrap();
            let lhs = rotate(&x, rot).dot(&y);
            let rhs = x.dot(&adjoint_rotate(&y, rot));
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_crop_shift_identities() {
        let f = Grid::filled(2, 1.0);
        let p = zero_pad(&f);
        assert_eq!(p.side(), 4);
        assert_eq!(p.as_grid().values(), &[1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(p.as_grid().sum(), f.sum());
        assert_eq!(crop(&p), f);
        assert_eq!(adjoint_pad(&p), f);
        assert_eq!(crop(&PaddedGrid::zeros(3)), Grid::zeros(3));
    }

    #[test]
    fn shift_follows_modular_indexing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = PaddedGrid::new(random_grid(8, &mut rng)).unwrap();
        let s = ShiftIndex::new(3, 6, 4).unwrap();
        let out = circ_shift(&p, s);
        assert_eq!(out.as_grid()[(0, 0)], p.as_grid()[(3, 6)]);
        assert_eq!(out.as_grid()[(7, 7)], p.as_grid()[(2, 5)]);
        assert_eq!(circ_shift(&out, s.inverse(4)), p);
        assert_eq!(circ_shift(&p, ShiftIndex::new(0, 0, 4).unwrap()), p);
    }

    #[test]
    fn absent_image_shift_gives_zero_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for l in 1..7 {
            let f = random_grid(l, &mut rng);
            let s = ShiftIndex::new(l, l, l).unwrap();
            assert_eq!(crop(&circ_shift(&zero_pad(&f), s)), Grid::zeros(l));
        }
    }

    #[test]
    fn large_frame_geometry() {
        let f = Grid::filled(28, 1.0);
        let p = zero_pad(&f);
        assert_eq!(p.side(), 56);
        let shifted = circ_shift(&p, ShiftIndex::new(7, 10, 28).unwrap());
        let c = crop(&shifted);
        assert_eq!(c.side(), 28);
        // rows 0..21 and cols 0..18 still see the image
        assert_eq!(c[(20, 17)], 1.0);
        assert_eq!(c[(21, 0)], 0.0);
        assert_eq!(c[(0, 18)], 0.0);
    }

    #[test]
    fn invalid_indices_rejected() {
        assert!(ShiftIndex::new(10, 0, 5).is_err());
        assert!(RotationIndex::new(4, 4).is_err());
        assert!(Grid::from_vec(2, vec![1.0; 3]).is_err());
        assert!(Grid::from_vec(1, vec![f64::NAN]).is_err());
        assert!(PaddedGrid::new(Grid::zeros(3)).is_err());
    }

    #[test]
    fn flat_shift_round_trip() {
        for s in ShiftIndex::all(3) {
            assert_eq!(ShiftIndex::from_flat(s.flat(3), 3), s);
        }
        assert_eq!(ShiftIndex::all(3).count(), 36);
    }
}
