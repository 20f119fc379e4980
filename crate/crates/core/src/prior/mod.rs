//! Score priors `grad log p(F)` used in the M-step.

mod loss;
mod mlp;
mod schedule;
mod train;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub use loss::{dsm_loss, dsm_loss_with_draws, dsm_objective, ism_loss, DsmDraws, TraceMethod, TraceableScore, Weighting};
pub use mlp::{Dense, LayerDocument, MlpScoreNet, NetGradients, WeightDocument, WEIGHT_FORMAT};
pub use schedule::VpSchedule;
pub use train::{smoothed, train, OptimizerKind, TrainConfig, TrainOutcome};

use crate::error::{MtdError, Result};
use crate::grid::Grid;

/// Time at which a time-conditioned network is queried during EM.
pub const DEFAULT_T_EVAL: f64 = 0.01;

/// A score function over flattened `L x L` images.
pub trait ScorePrior: Send + Sync {
    fn score(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn describe(&self) -> String;

    /// True when the score is identically zero, letting callers skip it.
    fn is_uninformative(&self) -> bool {
        false
    }
}

/// The uninformative prior: score identically zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPrior;

pub fn zero_score(x: &[f64]) -> Vec<f64> {
    vec![0.0; x.len()]
}

impl ScorePrior for ZeroPrior {
    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(zero_score(x))
    }

    fn describe(&self) -> String {
        "none".into()
    }

    fn is_uninformative(&self) -> bool {
        true
    }
}

/// Score of `N(mean, I)`: `-(x - mean)`.
pub fn gaussian_score(x: &[f64], mean: &[f64]) -> Result<Vec<f64>> {
    if x.len() != mean.len() {
        return Err(MtdError::DimensionMismatch(format!(
            "input of length {} against mean of length {}",
            x.len(),
            mean.len()
        )));
    }
    Ok(x.iter().zip(mean).map(|(x, m)| m - x).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>) -> Self {
        GaussianPrior { mean }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

impl ScorePrior for GaussianPrior {
    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        gaussian_score(x, &self.mean)
    }

    fn describe(&self) -> String {
        "gaussian".into()
    }
}

impl TraceableScore for GaussianPrior {
    fn score_of(&self, x: &[f64]) -> Result<Vec<f64>> {
        gaussian_score(x, &self.mean)
    }

    fn exact_trace(&self, x: &[f64]) -> Result<f64> {
        Ok(-(x.len() as f64))
    }
}

pub fn mlp_score(net: &MlpScoreNet, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
    net.score(x, t)
}

/// A trained network used as a prior; time-conditioned nets are queried at
/// a fixed small diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct NetPrior {
    net: MlpScoreNet,
    t_eval: f64,
}

impl NetPrior {
    pub fn new(net: MlpScoreNet) -> Self {
        NetPrior {
            net,
            t_eval: DEFAULT_T_EVAL,
        }
    }

    pub fn with_t_eval(mut self, t_eval: f64) -> Self {
        self.t_eval = t_eval;
        self
    }

    pub fn net(&self) -> &MlpScoreNet {
        &self.net
    }

    pub fn t_eval(&self) -> f64 {
        self.t_eval
    }
}

impl ScorePrior for NetPrior {
    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = self.net.is_time_conditioned().then_some(self.t_eval);
        self.net.score(x, t)
    }

    fn describe(&self) -> String {
        "net".into()
    }
}

/// Evaluates a prior's score on an image.
pub fn score_at_data(prior: &dyn ScorePrior, image: &Grid) -> Result<Grid> {
    let s = prior.score(image.values())?;
    if s.len() != image.len() {
        return Err(MtdError::DimensionMismatch(format!(
            "prior returned {} values for a {}-pixel image",
            s.len(),
            image.len()
        )));
    }
    Grid::from_vec(image.side(), s)
}

/// Images drawn from `N(mean, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    mean: Vec<f64>,
}

impl GaussianLaw {
    pub fn new(mean: Vec<f64>) -> Self {
        GaussianLaw { mean }
    }

    /// Mean with i.i.d. entries uniform over `{0, 1, 2, 3, 4}`.
    pub fn random<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Self {
        GaussianLaw {
            mean: (0..l * l).map(|_| rng.random_range(0..5u32) as f64).collect(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn side(&self) -> usize {
        (self.mean.len() as f64).sqrt().round() as usize
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn sample_image<R: Rng + ?Sized>(&self, rng: &mut R) -> Grid {
        Grid::from_vec(self.side(), self.sample(rng)).expect("square mean")
    }

    pub fn sample_rows<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Array2<f64> {
        let d = self.mean.len();
        let mut out = Array2::zeros((count, d));
        for mut row in out.rows_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v = m + rng.sample::<f64, _>(StandardNormal);
            }
        }
        out
    }

    /// Exact score of the diffused law at time `t`:
    /// `-(x - m(t) mean) / (m(t)^2 + var(t))`.
    pub fn marginal_score(&self, schedule: &VpSchedule, x: &[f64], t: f64) -> Vec<f64> {
        let m = schedule.mean_coeff(t);
        let total = m * m + schedule.variance(t);
        x.iter().zip(&self.mean).map(|(x, mu)| -(x - m * mu) / total).collect()
    }

    /// Relative L2 error `||s_net - s_exact|| / ||s_exact||` of a network's
    /// score at time `t`, pooled over `count` fresh draws diffused to `t`.
    pub fn score_error<R: Rng + ?Sized>(
        &self,
        net: &MlpScoreNet,
        schedule: &VpSchedule,
        t: f64,
        count: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let time = net.is_time_conditioned().then_some(t);
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..count {
            let (xt, _) = schedule.perturb(&self.sample(rng), t, rng)?;
            let exact = self.marginal_score(schedule, &xt, t);
            let got = net.score(&xt, time)?;
            num += exact.iter().zip(&got).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            den += exact.iter().map(|a| a * a).sum::<f64>();
        }
        Ok((num / den).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_prior_is_zero() {
        let x = [1.0, -2.0, 3.0];
        assert_eq!(ZeroPrior.score(&x).unwrap(), vec![0.0; 3]);
        let g = Grid::filled(2, 5.0);
        assert_eq!(score_at_data(&ZeroPrior, &g).unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn gaussian_score_cases() {
        let mean = [1.0, 2.0];
        assert_eq!(gaussian_score(&mean, &mean).unwrap(), vec![0.0, 0.0]);
        assert_eq!(gaussian_score(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        assert!(gaussian_score(&[1.0], &mean).is_err());
    }

    #[test]
    fn gaussian_score_matches_log_density_gradient() {
        let mean = [0.5, -1.0, 2.0];
        let log_density = |x: &[f64]| -> f64 {
            let q: f64 = x.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum();
            -0.5 * q - 1.5 * (2.0 * std::f64::consts::PI).ln()
        };
        let x = [1.3, 0.2, -0.7];
        let s = gaussian_score(&x, &mean).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut p = x;
            let mut q = x;
            p[i] += h;
            q[i] -= h;
            let fd = (log_density(&p) - log_density(&q)) / (2.0 * h);
            assert!((fd - s[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn delegation_matches_direct_calls() {
        let mean = vec![1.0, 2.0, 3.0, 4.0];
        let g = Grid::from_vec(2, vec![0.0, 1.0, 5.0, 2.0]).unwrap();
        let p = GaussianPrior::new(mean.clone());
        assert_eq!(score_at_data(&p, &g).unwrap().values(), gaussian_score(g.values(), &mean).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpScoreNet::new(&[4, 6, 4], true, &mut rng).unwrap();
        let prior = NetPrior::new(net.clone());
        assert_eq!(
            score_at_data(&prior, &g).unwrap().values(),
            net.score(g.values(), Some(DEFAULT_T_EVAL)).unwrap()
        );
    }

    #[test]
    fn gaussian_law_means_are_small_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let law = GaussianLaw::random(5, &mut rng);
        assert_eq!(law.mean().len(), 25);
        assert!(law.mean().iter().all(|m| [0.0, 1.0, 2.0, 3.0, 4.0].contains(m)));
        assert_eq!(law.sample_image(&mut rng).side(), 5);
    }
}
