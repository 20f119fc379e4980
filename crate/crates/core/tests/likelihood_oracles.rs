mod common;

use common::{max_abs_diff, to_mat};
use mtd::likelihood::{partition, Likelihood, PatchSet, TablePath};
use mtd::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(l: usize, patches: usize, sigma: f64, seed: u64) -> (PatchSet, Grid, Grid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ps: Vec<Grid> = (0..patches).map(|_| common::random_grid(l, &mut rng)).collect();
    let prev = common::random_grid(l, &mut rng);
    let f = Grid::from_fn(l, |_, _| rng.random_range(-1.0..1.0));
    (PatchSet::from_patches(ps, sigma).unwrap(), prev, f)
}

#[test]
fn posterior_matches_brute_force() {
    for (seed, (l, k)) in [(3, 2), (3, 4), (4, 2), (4, 4)].into_iter().enumerate() {
        let (set, _, f) = instance(l, 4, 0.7, seed as u64);
        let lik = Likelihood::new(&set, k, TablePath::Direct).unwrap();
        let post = lik.posterior(&f).unwrap();
        let mats: Vec<_> = set.patches().iter().map(to_mat).collect();
        let oracle = common::posterior(&mats, &to_mat(&f), 0.7, k);
        for (m, row) in oracle.iter().enumerate() {
            assert!(max_abs_diff(post.row(m), row) < 1e-10);
        }
    }
}

#[test]
fn q_value_matches_scalar_oracle() {
    let (set, prev, f) = instance(4, 4, 0.9, 11);
    let lik = Likelihood::new(&set, 4, TablePath::Direct).unwrap();
    let post = lik.posterior(&prev).unwrap();
    let mats: Vec<_> = set.patches().iter().map(to_mat).collect();
    let w: Vec<Vec<f64>> = (0..set.len()).map(|m| post.row(m).to_vec()).collect();
    let oracle = common::q_value(&mats, &to_mat(&f), 0.9, 4, &w);
    let got = lik.q_value(&f, &post).unwrap();
    assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
}

#[test]
fn gradient_matches_finite_differences_on_both_paths() {
    for path in [TablePath::Direct, TablePath::Fast] {
        let (set, prev, f) = instance(4, 4, 1.0, 5);
        let lik = Likelihood::new(&set, 4, path).unwrap();
        let post = lik.posterior(&prev).unwrap();
        let g = lik.q_gradient(&f, &post).unwrap();
        let h = 1e-5;
        let mut fd = vec![0.0; f.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut p = f.clone();
            let mut q = f.clone();
            p.values_mut()[i] += h;
            q.values_mut()[i] -= h;
            *slot = (lik.q_value(&p, &post).unwrap() - lik.q_value(&q, &post).unwrap()) / (2.0 * h);
        }
        assert!(common::rel_l2(g.values(), &fd) < 1e-6, "{path:?}");
    }
}

#[test]
fn fast_path_matches_direct_on_measurement() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let values = common::random_grid(30, &mut rng);
    let set = partition(&values, 10, 0.5).unwrap();
    let direct = Likelihood::new(&set, 4, TablePath::Direct).unwrap();
    let auto = Likelihood::new(&set, 4, TablePath::Auto).unwrap();
    assert!(auto.uses_fast_path());
    let f = common::random_grid(10, &mut rng);
    let a = direct.posterior(&f).unwrap();
    let b = auto.posterior(&f).unwrap();
    assert!(max_abs_diff(a.weights(), b.weights()) < 1e-8);
    let ga = direct.q_gradient(&f, &a).unwrap();
    let gb = auto.q_gradient(&f, &a).unwrap();
    assert!(common::rel_l2(gb.values(), ga.values()) < 1e-8);
}
