//! Scalar reference implementations written directly from the model
//! definitions, independent of the library's operator code.

#![allow(dead_code)]

use mtd::Grid;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(g: &Grid) -> Mat {
    (0..g.side()).map(|i| (0..g.side()).map(|j| g[(i, j)]).collect()).collect()
}

pub fn random_grid<R: Rng>(side: usize, rng: &mut R) -> Grid {
    Grid::from_fn(side, |_, _| rng.random_range(-1.0..1.0))
}

/// Counter-clockwise quarter turns: one turn maps `F[j][L-1-i]` to `out[i][j]`.
pub fn rotate_quarter(f: &Mat, turns: usize) -> Mat {
    let l = f.len();
    let mut cur = f.clone();
    for _ in 0..turns % 4 {
        let mut next = vec![vec![0.0; l]; l];
        for i in 0..l {
            for j in 0..l {
                next[i][j] = cur[j][l - 1 - i];
            }
        }
        cur = next;
    }
    cur
}

/// Crop of the circularly shifted, zero-padded, rotated image.
pub fn template(f: &Mat, lx: usize, ly: usize, turns: usize) -> Mat {
    let l = f.len();
    let r = rotate_quarter(f, turns);
    let mut out = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in 0..l {
            let a = (i + lx) % (2 * l);
            let b = (j + ly) % (2 * l);
            if a < l && b < l {
                out[i][j] = r[a][b];
            }
        }
    }
    out
}

/// `log p(patch | shift, rotation, F)` without the constant, ordered by
/// shift row-major and rotation innermost.
pub fn loglik_table(patch: &Mat, f: &Mat, sigma: f64, k: usize) -> Vec<f64> {
    let l = f.len();
    let mut out = Vec::with_capacity(4 * l * l * k);
    for lx in 0..2 * l {
        for ly in 0..2 * l {
            for rot in 0..k {
                let t = template(f, lx, ly, rot * 4 / k);
                let mut ss = 0.0;
                for i in 0..l {
                    for j in 0..l {
                        let d = patch[i][j] - t[i][j];
                        ss += d * d;
                    }
                }
                out.push(-ss / (2.0 * sigma * sigma));
            }
        }
    }
    out
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn posterior(patches: &[Mat], f: &Mat, sigma: f64, k: usize) -> Vec<Vec<f64>> {
    patches.iter().map(|p| softmax(&loglik_table(p, f, sigma, k))).collect()
}

pub fn q_value(patches: &[Mat], f: &Mat, sigma: f64, k: usize, weights: &[Vec<f64>]) -> f64 {
    patches
        .iter()
        .zip(weights)
        .map(|(p, w)| loglik_table(p, f, sigma, k).iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rel_l2(a: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(reference).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = reference.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
