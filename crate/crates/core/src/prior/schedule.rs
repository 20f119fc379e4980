use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MtdError, Result};

/// Variance-preserving diffusion with linear rate `beta(t) = beta0 + (beta1 - beta0) t`.
///
/// The perturbation kernel is `x(t) | x(0) ~ N(m(t) x(0), var(t) I)` with
/// `m(t) = exp(-B(t) / 2)`, `var(t) = 1 - exp(-B(t))`, `B(t) = int_0^t beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpSchedule {
    pub beta0: f64,
    pub beta1: f64,
    pub horizon: f64,
}

impl Default for VpSchedule {
    fn default() -> Self {
        VpSchedule {
            beta0: 0.1,
            beta1: 20.0,
            horizon: 1.0,
        }
    }
}

impl VpSchedule {
    pub fn beta(&self, t: f64) -> f64 {
        self.beta0 + (self.beta1 - self.beta0) * t
    }

    /// `B(t) = beta0 t + (beta1 - beta0) t^2 / 2`
    pub fn integral(&self, t: f64) -> f64 {
        self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t * t
    }

    pub fn mean_coeff(&self, t: f64) -> f64 {
        (-0.5 * self.integral(t)).exp()
    }

    pub fn variance(&self, t: f64) -> f64 {
        -(-self.integral(t)).exp_m1()
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t > 0.0 && t <= self.horizon) {
            return Err(MtdError::InvalidParameter(format!(
                "diffusion time {t} outside (0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Draws `x(t) = m(t) x0 + sqrt(var(t)) z` and returns `(x(t), z)`.
    pub fn perturb<R: Rng + ?Sized>(&self, x0: &[f64], t: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_time(t)?;
        let m = self.mean_coeff(t);
        let s = self.variance(t).sqrt();
        let z: Vec<f64> = x0.iter().map(|_| rng.sample(StandardNormal)).collect();
        let xt = x0.iter().zip(&z).map(|(x, z)| m * x + s * z).collect();
        Ok((xt, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_forms_at_unit_time() {
        let s = VpSchedule::default();
        assert!((s.integral(1.0) - 10.05).abs() < 1e-12);
        assert!((s.variance(1.0) - (1.0 - (-10.05f64).exp())).abs() < 1e-15);
        assert!((s.variance(1.0) - 0.99996).abs() < 1e-5);
        assert_eq!(s.variance(0.0), 0.0);
        assert_eq!(s.mean_coeff(0.0), 1.0);
    }

    #[test]
    fn monotone_and_bounded() {
        let s = VpSchedule::default();
        let mut prev_var = -1.0;
        let mut prev_m = 2.0;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let (m, v) = (s.mean_coeff(t), s.variance(t));
            assert!(v > prev_var && m < prev_m);
            assert!(m * m + v <= 1.0 + 1e-12);
            assert!(s.beta(t) > 0.0);
            prev_var = v;
            prev_m = m;
        }
    }

    #[test]
    fn small_time_is_nearly_identity() {
        let s = VpSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = vec![1.0, -2.0, 3.0];
        let (xt, _) = s.perturb(&x0, 1e-9, &mut rng).unwrap();
        for (a, b) in xt.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(s.perturb(&x0, 0.0, &mut rng).is_err());
        assert!(s.perturb(&x0, 1.5, &mut rng).is_err());
    }

    #[test]
    fn perturbed_mean_matches_decay() {
        let s = VpSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 0.3;
        let x0 = [2.0];
        let n = 100_000;
        let total: f64 = (0..n).map(|_| s.perturb(&x0, t, &mut rng).unwrap().0[0]).sum();
        let mean = total / n as f64;
        let se = (s.variance(t) / n as f64).sqrt();
        assert!((mean - s.mean_coeff(t) * 2.0).abs() < 5.0 * se);
    }
}
