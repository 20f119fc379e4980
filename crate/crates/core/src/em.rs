//! Approximate EM with a score prior in the M-step.
//!
//! Each outer iteration computes the patch posterior at the current estimate
//! (E-step), then takes `inner_steps` gradient-ascent steps
//! `F <- F + mu (grad Q(F | F_prev) + gamma s(F))` with the posterior frozen.
//! The loop stops after `max_iters` iterations or once the Frobenius change of
//! the estimate drops below `stop_eps`.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MtdError, Result};
use crate::grid::Grid;
use crate::likelihood::{partition, Likelihood, PatchSet, TablePath};
use crate::prior::{score_at_data, ScorePrior};
use crate::synth::Measurement;

/// Weight on the prior term as a function of the EM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaSchedule {
    Constant(f64),
    /// `tau / max_iters`
    Linear,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule::Constant(1.0)
    }
}

impl GammaSchedule {
    pub fn at(&self, iteration: usize, max_iters: usize) -> f64 {
        match *self {
            GammaSchedule::Constant(c) => c,
            GammaSchedule::Linear => iteration as f64 / max_iters as f64,
        }
    }
}

impl std::str::FromStr for GammaSchedule {
    type Err = MtdError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "linear" {
            return Ok(GammaSchedule::Linear);
        }
        s.parse::<f64>()
            .map(GammaSchedule::Constant)
            .map_err(|_| MtdError::InvalidParameter(format!("gamma must be a number or 'linear', got '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub max_iters: usize,
    pub inner_steps: usize,
    pub learning_rate: f64,
    pub stop_eps: f64,
    pub gamma: GammaSchedule,
    /// Size of the rotation grid searched in the E-step.
    pub rotations: usize,
    pub table_path: TablePath,
    /// For noiseless measurements the likelihood is evaluated with this
    /// multiple of the measurement RMS as its noise level.
    pub noiseless_sigma_rel: f64,
    #[serde(skip)]
    pub time_limit: Option<Duration>,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 100,
            inner_steps: 1,
            learning_rate: 1e-3,
            stop_eps: 1e-5,
            gamma: GammaSchedule::Constant(1.0),
            rotations: 4,
            table_path: TablePath::Auto,
            noiseless_sigma_rel: 0.35,
            time_limit: None,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.inner_steps == 0 {
            return Err(MtdError::InvalidParameter("max_iters and inner_steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(MtdError::InvalidParameter("learning rate must be positive".into()));
        }
        if !(self.stop_eps >= 0.0) {
            return Err(MtdError::InvalidParameter("stop_eps must be non-negative".into()));
        }
        if self.rotations == 0 {
            return Err(MtdError::InvalidParameter("rotation grid must be non-empty".into()));
        }
        if !(self.noiseless_sigma_rel > 0.0) {
            return Err(MtdError::InvalidParameter("noiseless_sigma_rel must be positive".into()));
        }
        Ok(())
    }
}

/// One completed EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `Q(F_next | F_prev)` under the frozen posterior.
    pub q_value: f64,
    pub delta: f64,
    pub gamma: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct EmState {
    pub estimate: Grid,
    /// Completed EM iterations.
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<IterationRecord>,
    /// Noise level the likelihood was evaluated with.
    pub sigma: f64,
}

/// `F0 ~ U[0, 1]` entrywise.
pub fn uniform_init(l: usize, seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(l, |_, _| rng.random::<f64>())
}

/// Noise level used by the likelihood for a measurement.
pub fn working_sigma(values: &Grid, sigma: f64, config: &EmConfig) -> Result<f64> {
    if sigma > 0.0 {
        return Ok(sigma);
    }
    let rms = (values.norm_sq() / values.len() as f64).sqrt();
    if rms == 0.0 {
        return Err(MtdError::InvalidParameter(
            "noiseless measurement is identically zero".into(),
        ));
    }
    Ok(config.noiseless_sigma_rel * rms)
}

pub struct StepOutcome {
    pub estimate: Grid,
    pub q_before: f64,
    pub q_after: f64,
}

/// One EM iteration: E-step at `current`, then the inner ascent steps.
pub fn em_step(
    lik: &Likelihood<'_>,
    current: &Grid,
    prior: &dyn ScorePrior,
    config: &EmConfig,
    iteration: usize,
) -> Result<StepOutcome> {
    let (post, q_before) = lik.posterior_and_q(current)?;
    let gamma = config.gamma.at(iteration, config.max_iters);
    let use_prior = gamma != 0.0 && !prior.is_uninformative();
    let mut f = current.clone();
    for _ in 0..config.inner_steps {
        let mut step = lik.q_gradient(&f, &post)?;
        if use_prior {
            step.add_scaled(gamma, &score_at_data(prior, &f)?);
        }
        f.add_scaled(config.learning_rate, &step);
        if !f.is_finite() {
            return Err(MtdError::Diverged {
                iteration,
                detail: "estimate has non-finite entries".into(),
            });
        }
    }
    let q_after = lik.q_value(&f, &post)?;
    if !use_prior && q_after < q_before {
        log::warn!("iteration {iteration}: Q decreased from {q_before} to {q_after} across the ascent step");
    }
    Ok(StepOutcome {
        estimate: f,
        q_before,
        q_after,
    })
}

/// Runs approximate EM on a measurement from the initial estimate `init`.
pub fn run(measurement: &Measurement, init: &Grid, prior: &dyn ScorePrior, config: &EmConfig) -> Result<EmState> {
    let sigma = working_sigma(&measurement.values, measurement.sigma, config)?;
    let patches = partition(&measurement.values, measurement.spec.l, sigma)?;
    run_on_patches(&patches, init, prior, config)
}

pub fn run_on_patches(patches: &PatchSet, init: &Grid, prior: &dyn ScorePrior, config: &EmConfig) -> Result<EmState> {
    config.validate()?;
    if !init.is_finite() {
        return Err(MtdError::NonFinite("initial estimate".into()));
    }
    let lik = Likelihood::new(patches, config.rotations, config.table_path)?;
    let started = Instant::now();
    let mut estimate = init.clone();
    let mut log = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    for iteration in 0..config.max_iters {
        if let Some(limit) = config.time_limit {
            if started.elapsed() > limit {
                return Err(MtdError::TimeLimit { iterations: iteration });
            }
        }
        let tick = Instant::now();
        let step = em_step(&lik, &estimate, prior, config, iteration)?;
        let delta = step.estimate.sub(&estimate).frobenius_norm();
        log.push(IterationRecord {
            iter: iteration,
            q_value: step.q_after,
            delta,
            gamma: config.gamma.at(iteration, config.max_iters),
            seconds: tick.elapsed().as_secs_f64(),
        });
        estimate = step.estimate;
        if delta < config.stop_eps {
            converged = true;
            break;
        }
    }
    Ok(EmState {
        estimate,
        iterations: log.len(),
        converged,
        log,
        sigma: patches.sigma(),
    })
}

/// Writes the iteration log as CSV. Wall time is left blank unless
/// `include_timing` is set, so logs of identical runs are byte-identical.
pub fn write_log_csv(log: &[IterationRecord], path: &Path, include_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "q_value", "delta", "gamma", "seconds"])?;
    for r in log {
        let seconds = if include_timing { r.seconds.to_string() } else { String::new() };
        w.write_record([
            r.iter.to_string(),
            r.q_value.to_string(),
            r.delta.to_string(),
            r.gamma.to_string(),
            seconds,
        ])?;
    }
    w.flush().map_err(|e| MtdError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{patch_template, RotationIndex, ShiftIndex};
    use crate::likelihood::PosteriorTable;
    use crate::prior::{GaussianPrior, ZeroPrior};
    use crate::synth::{synthesize, MeasurementSpec, NoiseLevel};

    fn measurement(seed: u64, noise: NoiseLevel) -> (Measurement, Grid) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let law = crate::prior::GaussianLaw::random(5, &mut rng);
        let target = law.sample_image(&mut rng);
        let spec = MeasurementSpec {
            n: 55,
            l: 5,
            k: 4,
            density: 0.1,
            noise,
            area: None,
            seed,
        };
        (synthesize(&spec, &target).unwrap(), target)
    }

    #[test]
    fn gamma_schedules() {
        assert_eq!(GammaSchedule::Linear.at(0, 100), 0.0);
        assert_eq!(GammaSchedule::Linear.at(100, 100), 1.0);
        assert_eq!(GammaSchedule::Constant(1.0).at(37, 100), 1.0);
        assert_eq!("linear".parse::<GammaSchedule>().unwrap(), GammaSchedule::Linear);
        assert_eq!("0.5".parse::<GammaSchedule>().unwrap(), GammaSchedule::Constant(0.5));
        assert!("fast".parse::<GammaSchedule>().is_err());
    }

    #[test]
    fn defaults_follow_experiment_table() {
        let c = EmConfig::default();
        assert_eq!((c.max_iters, c.inner_steps), (100, 1));
        assert_eq!((c.learning_rate, c.stop_eps), (1e-3, 1e-5));
    }

    #[test]
    fn infinite_eps_stops_after_one_iteration() {
        let (m, _) = measurement(1, NoiseLevel::Snr(5.0));
        let cfg = EmConfig {
            stop_eps: f64::INFINITY,
            ..EmConfig::default()
        };
        let out = run(&m, &uniform_init(5, 0), &ZeroPrior, &cfg).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
    }

    #[test]
    fn single_inner_step_is_one_update() {
        let (m, _) = measurement(2, NoiseLevel::Snr(5.0));
        let prior = GaussianPrior::new(vec![2.0; 25]);
        let cfg = EmConfig::default();
        let patches = partition(&m.values, 5, m.sigma).unwrap();
        let lik = Likelihood::new(&patches, 4, TablePath::Direct).unwrap();
        let f0 = uniform_init(5, 3);
        let got = em_step(&lik, &f0, &prior, &cfg, 0).unwrap().estimate;
        let post = lik.posterior(&f0).unwrap();
        let mut expect = lik.q_gradient(&f0, &post).unwrap();
        expect.add_scaled(1.0, &score_at_data(&prior, &f0).unwrap());
        let mut f1 = f0.clone();
        f1.add_scaled(1e-3, &expect);
        assert_eq!(got, f1);
    }

    #[test]
    fn zero_gamma_matches_zero_prior() {
        let (m, _) = measurement(3, NoiseLevel::Snr(1.0));
        let init = uniform_init(5, 1);
        let cfg = EmConfig {
            max_iters: 10,
            gamma: GammaSchedule::Constant(0.0),
            ..EmConfig::default()
        };
        let a = run(&m, &init, &GaussianPrior::new(vec![1.0; 25]), &cfg).unwrap();
        let b = run(&m, &init, &ZeroPrior, &EmConfig { gamma: GammaSchedule::Constant(3.0), ..cfg.clone() }).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.log.iter().map(|r| r.q_value).collect::<Vec<_>>(), b.log.iter().map(|r| r.q_value).collect::<Vec<_>>());
    }

    #[test]
    fn truth_with_zero_residual_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Grid::from_fn(4, |_, _| rng.random_range(0.0..1.0));
        let shift = ShiftIndex::new(0, 0, 4).unwrap();
        let set = PatchSet::from_patches(vec![patch_template(&f, shift, RotationIndex::new(0, 4).unwrap())], 1.0)
            .unwrap();
        let lik = Likelihood::new(&set, 4, TablePath::Direct).unwrap();
        let mut w = vec![0.0; 64 * 4];
        w[0] = 1.0;
        let post = PosteriorTable::from_weights(1, 64, 4, w).unwrap();
        assert_eq!(lik.q_gradient(&f, &post).unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn noiseless_recovery_from_near_truth() {
        let (m, target) = measurement(5, NoiseLevel::Sigma(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let init = Grid::from_fn(5, |i, j| target[(i, j)] + 0.1 * rng.random_range(-1.0..1.0));
        let out = run(&m, &init, &ZeroPrior, &EmConfig::default()).unwrap();
        let err = crate::eval::relative_error(&target, &out.estimate, 4).unwrap();
        assert!(err < 1e-2, "error {err}");
    }

    #[test]
    fn deterministic_logs() {
        let (m, _) = measurement(7, NoiseLevel::Snr(2.0));
        let cfg = EmConfig {
            max_iters: 5,
            ..EmConfig::default()
        };
        let a = run(&m, &uniform_init(5, 2), &ZeroPrior, &cfg).unwrap();
        let b = run(&m, &uniform_init(5, 2), &ZeroPrior, &cfg).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.log.len(), b.log.len());
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!((x.q_value, x.delta), (y.q_value, y.delta));
        }
    }

    #[test]
    fn divergence_aborts() {
        let (m, _) = measurement(8, NoiseLevel::Snr(10.0));
        let cfg = EmConfig {
            learning_rate: 1e6,
            inner_steps: 200,
            ..EmConfig::default()
        };
        let out = run(&m, &uniform_init(5, 0), &ZeroPrior, &cfg);
        assert!(matches!(out, Err(MtdError::Diverged { .. })), "{:?}", out.map(|s| s.log));
    }
}
