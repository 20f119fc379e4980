//! Measurement synthesis: rotated copies of a target planted at separated
//! locations in an `N x N` frame plus i.i.d. Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MtdError, Result};
use crate::grid::{rotate, Grid, RotationIndex};

/// Noise level, given either as an SNR or directly as a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    Snr(f64),
    Sigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    /// Measurement side `N`.
    pub n: usize,
    /// Target side `L`.
    pub l: usize,
    /// Number of rotation angles `K`.
    pub k: usize,
    /// Fraction `p L^2 / N^2` of the frame covered by occurrences.
    pub density: f64,
    pub noise: NoiseLevel,
    /// Pixel area used in the SNR definition; defaults to `L^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    pub seed: u64,
}

impl MeasurementSpec {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.n == 0 || self.n % self.l != 0 {
            return Err(MtdError::InvalidParameter(format!(
                "measurement side {} must be a positive multiple of target side {}",
                self.n, self.l
            )));
        }
        if self.k == 0 {
            return Err(MtdError::InvalidParameter("rotation count K must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.density) {
            return Err(MtdError::InvalidParameter(format!(
                "density {} outside [0, 1)",
                self.density
            )));
        }
        match self.noise {
            NoiseLevel::Snr(s) if !(s > 0.0) => {
                return Err(MtdError::InvalidParameter(format!("snr {s} must be positive")))
            }
            NoiseLevel::Sigma(s) if !(s >= 0.0) || !s.is_finite() => {
                return Err(MtdError::InvalidParameter(format!("sigma {s} must be non-negative")))
            }
            _ => {}
        }
        if let Some(a) = self.area {
            if !(a > 0.0) {
                return Err(MtdError::InvalidParameter(format!("area {a} must be positive")));
            }
        }
        Ok(())
    }

    /// Number of occurrences `p = round(density N^2 / L^2)`.
    pub fn occurrences(&self) -> usize {
        let ratio = (self.n * self.n) as f64 / (self.l * self.l) as f64;
        (self.density * ratio).round() as usize
    }

    /// Noise standard deviation for target `image` under this spec.
    pub fn sigma_for(&self, image: &Grid) -> Result<f64> {
        match self.noise {
            NoiseLevel::Sigma(s) => Ok(s),
            NoiseLevel::Snr(snr) => snr_to_sigma(image, snr, self.area),
        }
    }
}

/// One planted copy: top-left corner of its `L x L` block and rotation index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub row: usize,
    pub col: usize,
    pub rotation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub values: Grid,
    pub truth: Vec<Occurrence>,
    pub sigma: f64,
    pub spec: MeasurementSpec,
}

/// `sigma = sqrt(||F||^2 / (A snr))` with `A = L^2` unless overridden.
pub fn snr_to_sigma(image: &Grid, snr: f64, area: Option<f64>) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(MtdError::InvalidParameter(format!("snr {snr} must be positive")));
    }
    let energy = image.norm_sq();
    if energy == 0.0 {
        return Err(MtdError::ZeroImage);
    }
    let area = area.unwrap_or((image.side() * image.side()) as f64);
    Ok((energy / (area * snr)).sqrt())
}

/// Minimum Chebyshev distance between two occurrence corners, exclusive.
///
/// Corners further apart than `2L` in max-norm are also more than `2L`
/// apart in Euclidean norm, and no `L x L` patch can touch both blocks.
pub fn min_separation(l: usize) -> usize {
    2 * l
}

pub fn well_separated(a: (usize, usize), b: (usize, usize), l: usize) -> bool {
    let dr = a.0.abs_diff(b.0);
    let dc = a.1.abs_diff(b.1);
    dr.max(dc) > min_separation(l)
}

/// Dart-throwing placement of `p` separated corners, fully inside the frame.
pub fn place_occurrences<R: Rng + ?Sized>(spec: &MeasurementSpec, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    spec.validate()?;
    let wanted = spec.occurrences();
    let span = spec.n - spec.l + 1;
    let budget = 1000 * wanted;
    let mut placed: Vec<(usize, usize)> = Vec::with_capacity(wanted);
    let mut attempts = 0;
    while placed.len() < wanted {
        if attempts == budget {
            return Err(MtdError::PlacementInfeasible {
                wanted,
                placed: placed.len(),
                attempts,
            });
        }
        attempts += 1;
        let cand = (rng.random_range(0..span), rng.random_range(0..span));
        if placed.iter().all(|&p| well_separated(p, cand, spec.l)) {
            placed.push(cand);
        }
    }
    Ok(placed)
}

/// Synthesizes a measurement with the RNG seeded from `spec.seed`.
pub fn synthesize(spec: &MeasurementSpec, image: &Grid) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    synthesize_with_rng(spec, image, &mut rng)
}

pub fn synthesize_with_rng<R: Rng + ?Sized>(spec: &MeasurementSpec, image: &Grid, rng: &mut R) -> Result<Measurement> {
    spec.validate()?;
    if image.side() != spec.l {
        return Err(MtdError::DimensionMismatch(format!(
            "target side {} differs from spec L = {}",
            image.side(),
            spec.l
        )));
    }
    let sigma = spec.sigma_for(image)?;
    let corners = place_occurrences(spec, rng)?;

    let rotated: Vec<Grid> = RotationIndex::all(spec.k).map(|r| rotate(image, r)).collect();
    let mut values = Grid::zeros(spec.n);
    let mut truth = Vec::with_capacity(corners.len());
    for (row, col) in corners {
        let k = rng.random_range(0..spec.k);
        let copy = &rotated[k];
        for i in 0..spec.l {
            for j in 0..spec.l {
                values[(row + i, col + j)] += copy[(i, j)];
            }
        }
        truth.push(Occurrence { row, col, rotation: k });
    }
    if sigma > 0.0 {
        for v in values.values_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    Ok(Measurement {
        values,
        truth,
        sigma,
        spec: spec.clone(),
    })
}
