//! Score-matching objectives.
//!
//! Training uses denoising score matching under the VP diffusion; the
//! Jacobian-trace (implicit) objective is kept for diagnostics.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpScoreNet, NetGradients};
use super::schedule::VpSchedule;
use crate::error::{MtdError, Result};

/// Weighting `lambda(t)` of the denoising objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `lambda(t) = var(t)`
    #[default]
    Variance,
    /// `lambda(t) = 1`
    Unit,
}

impl Weighting {
    pub fn at(self, schedule: &VpSchedule, t: f64) -> f64 {
        match self {
            Weighting::Variance => schedule.variance(t),
            Weighting::Unit => 1.0,
        }
    }
}

/// Diffusion times and noise for one minibatch, drawn up front so a loss
/// evaluation can be repeated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmDraws {
    pub times: Vec<f64>,
    pub noise: Array2<f64>,
}

impl DsmDraws {
    /// `t ~ U(t_min, T]`, `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(batch: usize, dim: usize, schedule: &VpSchedule, t_min: f64, rng: &mut R) -> Self {
        let times = (0..batch)
            .map(|_| {
                let u: f64 = rng.random();
                schedule.horizon - u * (schedule.horizon - t_min)
            })
            .collect();
        let noise = Array2::from_shape_simple_fn((batch, dim), || rng.sample(StandardNormal));
        DsmDraws { times, noise }
    }

    /// `x(t) = m(t) x0 + sqrt(var(t)) z` row by row.
    pub fn perturb(&self, batch: ArrayView2<f64>, schedule: &VpSchedule) -> Array2<f64> {
        let mut out = batch.to_owned();
        for (b, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let t = self.times[b];
            let m = schedule.mean_coeff(t);
            let s = schedule.variance(t).sqrt();
            for (x, z) in row.iter_mut().zip(self.noise.row(b)) {
                *x = m * *x + s * z;
            }
        }
        out
    }
}

/// Mean over the batch of `lambda(t) ||s + z / sqrt(var(t))||^2` for given
/// score values, together with its derivative in the scores.
pub fn dsm_objective(
    scores: ArrayView2<f64>,
    draws: &DsmDraws,
    schedule: &VpSchedule,
    weighting: Weighting,
) -> (f64, Array2<f64>) {
    let batch = scores.nrows() as f64;
    let mut grad = Array2::zeros(scores.raw_dim());
    let mut total = 0.0;
    for (b, (srow, mut grow)) in scores.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).enumerate() {
        let t = draws.times[b];
        let inv_std = 1.0 / schedule.variance(t).sqrt();
        let lambda = weighting.at(schedule, t);
        for ((s, z), g) in srow.iter().zip(draws.noise.row(b)).zip(grow.iter_mut()) {
            let r = s + z * inv_std;
            total += lambda * r * r;
            *g = 2.0 * lambda * r / batch;
        }
    }
    (total / batch, grad)
}

fn check_batch(batch: ArrayView2<f64>) -> Result<()> {
    if batch.nrows() == 0 {
        return Err(MtdError::InvalidParameter("empty batch".into()));
    }
    Ok(())
}

/// Denoising loss and exact parameter gradients for fixed draws.
pub fn dsm_loss_with_draws(
    net: &MlpScoreNet,
    batch: ArrayView2<f64>,
    schedule: &VpSchedule,
    weighting: Weighting,
    draws: &DsmDraws,
) -> Result<(f64, NetGradients)> {
    check_batch(batch)?;
    if !net.is_time_conditioned() {
        return Err(MtdError::InvalidParameter("denoising loss needs a time-conditioned net".into()));
    }
    if draws.times.len() != batch.nrows() || draws.noise.dim() != batch.dim() {
        return Err(MtdError::DimensionMismatch("draws do not match batch".into()));
    }
    let xt = draws.perturb(batch, schedule);
    let trace = net.forward_trace(xt.view(), Some(&draws.times))?;
    let (loss, grad_out) = dsm_objective(trace.output.view(), draws, schedule, weighting);
    let grads = net.backward(&trace, grad_out);
    Ok((loss, grads))
}

/// Monte-Carlo denoising loss with fresh draws from `rng`.
pub fn dsm_loss<R: Rng + ?Sized>(
    net: &MlpScoreNet,
    batch: ArrayView2<f64>,
    schedule: &VpSchedule,
    weighting: Weighting,
    t_min: f64,
    rng: &mut R,
) -> Result<(f64, NetGradients)> {
    check_batch(batch)?;
    let draws = DsmDraws::sample(batch.nrows(), batch.ncols(), schedule, t_min, rng);
    dsm_loss_with_draws(net, batch, schedule, weighting, &draws)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceMethod {
    Exact,
    FiniteDifference { step: f64 },
}

/// A time-free score with a computable Jacobian trace.
pub trait TraceableScore {
    fn score_of(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn exact_trace(&self, x: &[f64]) -> Result<f64>;

    fn trace(&self, x: &[f64], method: TraceMethod) -> Result<f64> {
        match method {
            TraceMethod::Exact => self.exact_trace(x),
            TraceMethod::FiniteDifference { step } => {
                let mut probe = x.to_vec();
                let mut total = 0.0;
                for i in 0..x.len() {
                    probe[i] = x[i] + step;
                    let plus = self.score_of(&probe)?[i];
                    probe[i] = x[i] - step;
                    let minus = self.score_of(&probe)?[i];
                    probe[i] = x[i];
                    total += (plus - minus) / (2.0 * step);
                }
                Ok(total)
            }
        }
    }
}

impl TraceableScore for MlpScoreNet {
    fn score_of(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.score(x, None)
    }

    fn exact_trace(&self, x: &[f64]) -> Result<f64> {
        self.jacobian_trace(x, None)
    }
}

/// Mean over the batch of `||s(x)||^2 / 2 + tr(ds/dx)`.
pub fn ism_loss<S: TraceableScore + ?Sized>(model: &S, batch: ArrayView2<f64>, method: TraceMethod) -> Result<f64> {
    check_batch(batch)?;
    let mut total = 0.0;
    for row in batch.axis_iter(Axis(0)) {
        let x = row.to_vec();
        let s = model.score_of(&x)?;
        total += 0.5 * s.iter().map(|v| v * v).sum::<f64>() + model.trace(&x, method)?;
    }
    Ok(total / batch.nrows() as f64)
}
