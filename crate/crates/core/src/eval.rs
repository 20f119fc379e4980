//! Rotation-aware error and the SNR sweep comparing EM with and without a
//! prior.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, EmConfig};
use crate::error::{MtdError, Result};
use crate::grid::{rotate, Grid, RotationIndex};
use crate::prior::{GaussianLaw, GaussianPrior, MlpScoreNet, NetPrior, ScorePrior, TrainConfig, VpSchedule, ZeroPrior};
use crate::synth::{synthesize, MeasurementSpec, NoiseLevel};

/// `min_phi ||R_phi F_hat - F|| / ||F||` over the `k`-point rotation grid.
pub fn relative_error(truth: &Grid, estimate: &Grid, k: usize) -> Result<f64> {
    if truth.side() != estimate.side() {
        return Err(MtdError::DimensionMismatch(format!(
            "truth is {0}x{0}, estimate is {1}x{1}",
            truth.side(),
            estimate.side()
        )));
    }
    let norm = truth.frobenius_norm();
    if norm == 0.0 {
        return Err(MtdError::ZeroImage);
    }
    let mut best = f64::INFINITY;
    for rotation in RotationIndex::all(k.max(1)) {
        best = best.min(rotate(estimate, rotation).sub(truth).frobenius_norm());
    }
    Ok(best / norm)
}

/// splitmix64 over the master seed and a list of coordinates.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepPrior {
    /// Score network trained on draws from the target law.
    Net,
    /// Exact score of the target law.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepPlan {
    pub snrs: Vec<f64>,
    pub targets: usize,
    pub trials: usize,
    pub n: usize,
    pub l: usize,
    pub k: usize,
    pub density: f64,
    pub area: Option<f64>,
    pub seed: u64,
    pub prior: SweepPrior,
    /// Wall-clock limit per EM run in seconds; a run that exceeds it is
    /// recorded as failed.
    pub row_timeout: Option<f64>,
    pub hidden: usize,
    pub train_size: usize,
    pub train: TrainConfig,
    pub em: EmConfig,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            snrs: vec![1.0, 5.0, 10.0],
            targets: 10,
            trials: 1,
            n: 55,
            l: 5,
            k: 4,
            density: 0.1,
            area: None,
            seed: 0,
            prior: SweepPrior::Net,
            row_timeout: None,
            hidden: 128,
            train_size: 10_000,
            train: TrainConfig::default(),
            em: EmConfig::default(),
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.snrs.is_empty() {
            return Err(MtdError::InvalidParameter("SNR list is empty".into()));
        }
        if self.snrs.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(MtdError::InvalidParameter("SNR values must be positive".into()));
        }
        if let Some(t) = self.row_timeout {
            if !(t > 0.0) {
                return Err(MtdError::InvalidParameter("row_timeout must be positive".into()));
            }
        }
        if self.targets == 0 || self.trials == 0 {
            return Err(MtdError::InvalidParameter("targets and trials must be at least 1".into()));
        }
        self.measurement_spec(self.snrs[0], 0).validate()?;
        self.em.validate()
    }

    fn measurement_spec(&self, snr: f64, seed: u64) -> MeasurementSpec {
        MeasurementSpec {
            n: self.n,
            l: self.l,
            k: self.k,
            density: self.density,
            noise: NoiseLevel::Snr(snr),
            area: self.area,
            seed,
        }
    }

    pub fn law(&self) -> GaussianLaw {
        GaussianLaw::random(self.l, &mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[0])))
    }

    pub fn target(&self, law: &GaussianLaw, target_id: usize) -> Grid {
        law.sample_image(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[1, target_id as u64])))
    }

    /// Training set and configuration for the sweep's score network.
    pub fn training_set(&self, law: &GaussianLaw) -> ndarray::Array2<f64> {
        law.sample_rows(self.train_size, &mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[4])))
    }

    /// Builds the prior used by the with-prior arm.
    pub fn build_prior(&self, law: &GaussianLaw) -> Result<Box<dyn ScorePrior>> {
        match self.prior {
            SweepPrior::Exact => Ok(Box::new(GaussianPrior::new(law.mean().to_vec()))),
            SweepPrior::Net => {
                let d = self.l * self.l;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[5]));
                let net = MlpScoreNet::new(&[d, self.hidden, self.hidden, d], true, &mut rng)?;
                let data = self.training_set(law);
                let config = TrainConfig {
                    seed: derive_seed(self.seed, &[6]),
                    ..self.train.clone()
                };
                let out = crate::prior::train(net, data.view(), &VpSchedule::default(), &config)?;
                Ok(Box::new(NetPrior::new(out.net)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "no-prior")]
    NoPrior,
    #[serde(rename = "with-prior")]
    WithPrior,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::NoPrior => "no-prior",
            Method::WithPrior => "with-prior",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr: f64,
    pub method: Method,
    pub trial: usize,
    pub target_id: usize,
    /// NaN when the run failed.
    pub error: f64,
    pub iters: usize,
    pub seconds: f64,
    pub status: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub snr: f64,
    pub method: Method,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Runs every (SNR, target, trial) cell for both methods. Both arms of a cell
/// see the same measurement and the same initial estimate.
pub fn run_sweep(plan: &SweepPlan, law: &GaussianLaw, prior: &dyn ScorePrior) -> Result<Vec<SweepRow>> {
    plan.validate()?;
    let em_config = EmConfig {
        time_limit: plan.row_timeout.map(std::time::Duration::from_secs_f64),
        ..plan.em.clone()
    };
    let targets: Vec<Grid> = (0..plan.targets).map(|t| plan.target(law, t)).collect();
    let mut cells = Vec::new();
    for (si, &snr) in plan.snrs.iter().enumerate() {
        for target_id in 0..plan.targets {
            for trial in 0..plan.trials {
                cells.push((si, snr, target_id, trial));
            }
        }
    }
    let rows: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(si, snr, target_id, trial)| {
            let coords = [si as u64, target_id as u64, trial as u64];
            let spec = plan.measurement_spec(snr, derive_seed(plan.seed, &[2, coords[0], coords[1], coords[2]]));
            let truth = &targets[target_id];
            let init = em::uniform_init(plan.l, derive_seed(plan.seed, &[3, coords[0], coords[1], coords[2]]));
            let measurement = synthesize(&spec, truth);
            [(Method::NoPrior, &ZeroPrior as &dyn ScorePrior), (Method::WithPrior, prior)]
                .into_iter()
                .map(|(method, p)| {
                    let tick = Instant::now();
                    let outcome = measurement
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|m| em::run(m, &init, p, &em_config).map_err(|e| e.to_string()))
                        .and_then(|s| {
                            relative_error(truth, &s.estimate, plan.k)
                                .map(|e| (e, s.iterations))
                                .map_err(|e| e.to_string())
                        });
                    let seconds = tick.elapsed().as_secs_f64();
                    match outcome {
                        Ok((error, iters)) => SweepRow {
                            snr,
                            method,
                            trial,
                            target_id,
                            error,
                            iters,
                            seconds,
                            status: "ok".into(),
                        },
                        Err(reason) => {
                            log::warn!("snr {snr} target {target_id} trial {trial} {}: {reason}", method.name());
                            SweepRow {
                                snr,
                                method,
                                trial,
                                target_id,
                                error: f64::NAN,
                                iters: 0,
                                seconds,
                                status: "failed".into(),
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();
    Ok(rows.concat())
}

/// Mean and sample standard deviation of the error per (SNR, method),
/// over successful runs only. Ordered by SNR as listed, then method.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, Method)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|k| k.0 == r.snr && k.1 == r.method) {
            keys.push((r.snr, r.method));
        }
    }
    keys.into_iter()
        .map(|(snr, method)| {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.snr == snr && r.method == method && r.ok())
                .map(|r| r.error)
                .collect();
            let n = errs.len();
            let mean = if n == 0 { f64::NAN } else { errs.iter().sum::<f64>() / n as f64 };
            let std = if n < 2 {
                0.0
            } else {
                (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            SummaryRow { snr, method, mean, std, n }
        })
        .collect()
}

pub fn summary_for(summary: &[SummaryRow], snr: f64, method: Method) -> Option<&SummaryRow> {
    summary.iter().find(|s| s.snr == snr && s.method == method)
}

pub fn write_rows_csv(rows: &[SweepRow], path: &Path, include_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["snr", "method", "trial", "target_id", "error", "iters", "seconds", "status"])?;
    for r in rows {
        w.write_record([
            r.snr.to_string(),
            r.method.name().to_string(),
            r.trial.to_string(),
            r.target_id.to_string(),
            r.error.to_string(),
            r.iters.to_string(),
            if include_timing { r.seconds.to_string() } else { String::new() },
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| MtdError::io(path, e))?;
    Ok(())
}

pub fn write_summary_csv(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["snr", "method", "mean", "std", "n"])?;
    for s in summary {
        w.write_record([
            s.snr.to_string(),
            s.method.name().to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| MtdError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_is_zero_for_truth_and_rotations() {
        let f = Grid::from_fn(4, |i, j| (i * 4 + j) as f64 + 1.0);
        assert_eq!(relative_error(&f, &f, 4).unwrap(), 0.0);
        for k in 1..4 {
            let r = rotate(&f, RotationIndex::new(k, 4).unwrap());
            assert!(relative_error(&f, &r, 4).unwrap() < 1e-15);
        }
    }

    #[test]
    fn error_of_zero_estimate_is_one() {
        let f = Grid::from_fn(3, |i, j| (i + j) as f64 - 1.5);
        assert_eq!(relative_error(&f, &Grid::zeros(3), 4).unwrap(), 1.0);
    }

    #[test]
    fn error_rejects_zero_truth_and_size_mismatch() {
        assert!(matches!(relative_error(&Grid::zeros(3), &Grid::filled(3, 1.0), 4), Err(MtdError::ZeroImage)));
        assert!(relative_error(&Grid::filled(3, 1.0), &Grid::filled(4, 1.0), 4).is_err());
    }

    #[test]
    fn error_is_scale_free() {
        let f = Grid::from_fn(3, |i, j| (i * 3 + j) as f64);
        let g = Grid::from_fn(3, |i, j| (i * 3 + j) as f64 + 0.5);
        let a = relative_error(&f, &g, 4).unwrap();
        let b = relative_error(&f.scaled(7.0), &g.scaled(7.0), 4).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn seeds_differ_by_coordinate() {
        let a = derive_seed(0, &[2, 0, 1, 0]);
        let b = derive_seed(0, &[2, 1, 0, 0]);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(0, &[2, 0, 1, 0]));
    }

    #[test]
    fn summary_skips_failures() {
        let row = |error: f64, status: &str| SweepRow {
            snr: 1.0,
            method: Method::NoPrior,
            trial: 0,
            target_id: 0,
            error,
            iters: 1,
            seconds: 0.0,
            status: status.into(),
        };
        let s = summarize(&[row(0.2, "ok"), row(0.4, "ok"), row(f64::NAN, "failed")]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].n, 2);
        assert!((s[0].mean - 0.3).abs() < 1e-15);
        assert!((s[0].std - 0.02f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_snr_list_rejected() {
        let plan = SweepPlan {
            snrs: vec![],
            ..SweepPlan::default()
        };
        assert!(plan.validate().is_err());
    }

    #[test]
    fn small_sweep_is_deterministic() {
        let plan = SweepPlan {
            snrs: vec![5.0],
            targets: 2,
            prior: SweepPrior::Exact,
            em: EmConfig {
                max_iters: 5,
                ..EmConfig::default()
            },
            ..SweepPlan::default()
        };
        let law = plan.law();
        let prior = plan.build_prior(&law).unwrap();
        let a = run_sweep(&plan, &law, prior.as_ref()).unwrap();
        let b = run_sweep(&plan, &law, prior.as_ref()).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|r| r.ok()));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.error.to_bits(), y.error.to_bits());
        }
    }
}
