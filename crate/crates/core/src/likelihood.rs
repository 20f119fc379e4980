//! The E-step engine of approximate EM.
//!
//! The measurement is cut into `D = (N/L)^2` non-overlapping `L x L` patches.
//! Each patch is explained by one of `(2L)^2 K` hypotheses `(shift, rotation)`,
//! with template `C T_l Z R_phi F`; patches are treated as independent.
//! Log-likelihoods drop the Gaussian normalising constant, so a table entry is
//! `-||patch - template||^2 / (2 sigma^2)` and `Q` carries the same convention.
//!
//! Tables and gradients have two evaluation paths: direct per-template loops,
//! and circular correlations computed by FFT. Per-patch work runs in parallel
//! and is reduced in patch order, so results do not depend on thread count.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{MtdError, Result};
use crate::grid::{zero_pad, Grid, RotationSet};
use crate::xcorr::{Fft2, Spectrum};

/// Which evaluation path the likelihood engine uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TablePath {
    /// Direct for `L <= 8`, FFT above.
    #[default]
    Auto,
    Direct,
    Fast,
}

impl TablePath {
    pub fn uses_fast(self, l: usize) -> bool {
        match self {
            TablePath::Auto => l > 8,
            TablePath::Direct => false,
            TablePath::Fast => true,
        }
    }
}

impl std::str::FromStr for TablePath {
    type Err = MtdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TablePath::Auto),
            "direct" => Ok(TablePath::Direct),
            "fast" => Ok(TablePath::Fast),
            other => Err(MtdError::InvalidParameter(format!("unknown table path '{other}'"))),
        }
    }
}

/// Non-overlapping `L x L` patches of a measurement in row-major patch order:
/// patch `a * (N/L) + b` covers rows `aL..(a+1)L` and columns `bL..(b+1)L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    l: usize,
    per_row: usize,
    patches: Vec<Grid>,
    sigma: f64,
}

pub fn partition(values: &Grid, l: usize, sigma: f64) -> Result<PatchSet> {
    if l == 0 || values.side() % l != 0 {
        return Err(MtdError::DimensionMismatch(format!(
            "measurement side {} is not a multiple of patch side {l}",
            values.side()
        )));
    }
    let per_row = values.side() / l;
    let mut patches = Vec::with_capacity(per_row * per_row);
    for a in 0..per_row {
        for b in 0..per_row {
            patches.push(values.block(a * l, b * l, l));
        }
    }
    Ok(PatchSet {
        l,
        per_row,
        patches,
        sigma,
    })
}

impl PatchSet {
    pub fn from_measurement(m: &crate::synth::Measurement) -> Result<Self> {
        partition(&m.values, m.spec.l, m.sigma)
    }

    pub fn patch_side(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Grid] {
        &self.patches
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// Builds a patch set directly, e.g. for synthetic tests.
    pub fn from_patches(patches: Vec<Grid>, sigma: f64) -> Result<Self> {
        let l = patches.first().map(Grid::side).unwrap_or(0);
        if l == 0 || patches.iter().any(|p| p.side() != l) {
            return Err(MtdError::DimensionMismatch("patches must share one positive side".into()));
        }
        let per_row = (patches.len() as f64).sqrt().round() as usize;
        Ok(PatchSet {
            l,
            per_row,
            patches,
            sigma,
        })
    }

    /// Re-tiles the patches into the measurement they came from.
    pub fn assemble(&self) -> Result<Grid> {
        if self.per_row * self.per_row != self.patches.len() {
            return Err(MtdError::DimensionMismatch("patch count is not a square".into()));
        }
        let l = self.l;
        let mut out = Grid::zeros(self.per_row * l);
        for (idx, p) in self.patches.iter().enumerate() {
            let (a, b) = (idx / self.per_row, idx % self.per_row);
            for i in 0..l {
                for j in 0..l {
                    out[(a * l + i, b * l + j)] = p[(i, j)];
                }
            }
        }
        Ok(out)
    }
}

/// Posterior weights, laid out `(patch, shift row-major, rotation)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    patches: usize,
    shifts: usize,
    rotations: usize,
    weights: Vec<f64>,
}

impl PosteriorTable {
    pub fn from_weights(patches: usize, shifts: usize, rotations: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != patches * shifts * rotations {
            return Err(MtdError::DimensionMismatch(format!(
                "{} weights for {patches}x{shifts}x{rotations} table",
                weights.len()
            )));
        }
        Ok(PosteriorTable {
            patches,
            shifts,
            rotations,
            weights,
        })
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn shifts(&self) -> usize {
        self.shifts
    }

    pub fn rotations(&self) -> usize {
        self.rotations
    }

    pub fn hypotheses(&self) -> usize {
        self.shifts * self.rotations
    }

    pub fn row(&self, patch: usize) -> &[f64] {
        let h = self.hypotheses();
        &self.weights[patch * h..(patch + 1) * h]
    }

    pub fn weight(&self, patch: usize, shift: usize, rotation: usize) -> f64 {
        self.weights[(patch * self.shifts + shift) * self.rotations + rotation]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Normalised exponentials of a log-weight row, computed with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

struct FastCache {
    fft: Fft2,
    mask: Spectrum,
    patch_spectra: Vec<Spectrum>,
    patch_energy: Vec<f64>,
}

/// Likelihood engine bound to one patch set.
pub struct Likelihood<'a> {
    patches: &'a PatchSet,
    rotations: RotationSet,
    fast: Option<FastCache>,
}

/// Rotated, zero-padded copies `Z R_phi F` for every rotation.
struct Templates {
    padded: Vec<Grid>,
    spectra: Vec<Spectrum>,
    energy: Vec<Grid>,
}

impl<'a> Likelihood<'a> {
    pub fn new(patches: &'a PatchSet, rotations: usize, path: TablePath) -> Result<Self> {
        if !(patches.sigma() > 0.0) || !patches.sigma().is_finite() {
            return Err(MtdError::InvalidParameter(format!(
                "noise level {} must be positive",
                patches.sigma()
            )));
        }
        if patches.is_empty() {
            return Err(MtdError::InvalidParameter("no patches".into()));
        }
        let l = patches.patch_side();
        let rotations = RotationSet::new(l, rotations)?;
        let fast = path.uses_fast(l).then(|| {
            let fft = Fft2::new(2 * l);
            let mask = fft.forward(zero_pad(&Grid::filled(l, 1.0)).as_grid());
            let patch_spectra = patches.patches().iter().map(|p| fft.forward(zero_pad(p).as_grid())).collect();
            let patch_energy = patches.patches().iter().map(Grid::norm_sq).collect();
            FastCache {
                fft,
                mask,
                patch_spectra,
                patch_energy,
            }
        });
        Ok(Likelihood {
            patches,
            rotations,
            fast,
        })
    }

    pub fn patches(&self) -> &PatchSet {
        self.patches
    }

    pub fn rotation_count(&self) -> usize {
        self.rotations.count()
    }

    pub fn uses_fast_path(&self) -> bool {
        self.fast.is_some()
    }

    pub fn shift_count(&self) -> usize {
        let p = 2 * self.patches.patch_side();
        p * p
    }

    fn check_image(&self, image: &Grid) -> Result<()> {
        if image.side() != self.patches.patch_side() {
            return Err(MtdError::DimensionMismatch(format!(
                "image side {} differs from patch side {}",
                image.side(),
                self.patches.patch_side()
            )));
        }
        Ok(())
    }

    fn check_posterior(&self, post: &PosteriorTable) -> Result<()> {
        if post.patches() != self.patches.len()
            || post.shifts() != self.shift_count()
            || post.rotations() != self.rotation_count()
        {
            return Err(MtdError::DimensionMismatch(format!(
                "posterior is {}x{}x{}, expected {}x{}x{}",
                post.patches(),
                post.shifts(),
                post.rotations(),
                self.patches.len(),
                self.shift_count(),
                self.rotation_count()
            )));
        }
        Ok(())
    }

    fn templates(&self, image: &Grid) -> Templates {
        let padded: Vec<Grid> = self
            .rotations
            .rotate_all(image)
            .iter()
            .map(|r| zero_pad(r).into_grid())
            .collect();
        let (spectra, energy) = match &self.fast {
            Some(cache) => padded
                .iter()
                .map(|zf| {
                    let sq = Grid::from_fn(zf.side(), |i, j| zf[(i, j)] * zf[(i, j)]);
                    let e = cache.fft.correlate(&cache.mask, &cache.fft.forward(&sq));
                    (cache.fft.forward(zf), e)
                })
                .unzip(),
            None => (Vec::new(), Vec::new()),
        };
        Templates {
            padded,
            spectra,
            energy,
        }
    }

    fn table_for(&self, m: usize, t: &Templates) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.patches.sigma() * self.patches.sigma());
        match &self.fast {
            Some(cache) => fast_table(cache, m, t, inv),
            None => direct_table(&self.patches.patches()[m], &t.padded, inv),
        }
    }

    /// Per-patch log-likelihood tables, each `(2L)^2 K` long.
    pub fn tables(&self, image: &Grid) -> Result<Vec<Vec<f64>>> {
        self.check_image(image)?;
        let t = self.templates(image);
        Ok((0..self.patches.len()).into_par_iter().map(|m| self.table_for(m, &t)).collect())
    }

    /// Posterior over hypotheses for every patch under uniform nuisance priors.
    pub fn posterior(&self, image: &Grid) -> Result<PosteriorTable> {
        self.check_image(image)?;
        let t = self.templates(image);
        let rows: Vec<Vec<f64>> = (0..self.patches.len())
            .into_par_iter()
            .map(|m| softmax(&self.table_for(m, &t)))
            .collect();
        PosteriorTable::from_weights(
            self.patches.len(),
            self.shift_count(),
            self.rotation_count(),
            rows.concat(),
        )
    }

    /// Posterior at `image` together with `Q(image | image)`, from one pass
    /// over the tables.
    pub fn posterior_and_q(&self, image: &Grid) -> Result<(PosteriorTable, f64)> {
        self.check_image(image)?;
        let t = self.templates(image);
        let rows: Vec<(Vec<f64>, f64)> = (0..self.patches.len())
            .into_par_iter()
            .map(|m| {
                let table = self.table_for(m, &t);
                let w = softmax(&table);
                let q = w.iter().zip(&table).map(|(w, v)| w * v).sum();
                (w, q)
            })
            .collect();
        let q = rows.iter().map(|r| r.1).sum();
        let weights = rows.into_iter().flat_map(|r| r.0).collect();
        let post = PosteriorTable::from_weights(self.patches.len(), self.shift_count(), self.rotation_count(), weights)?;
        Ok((post, q))
    }

    /// `Q(F | F_prev) = sum w * log p(M_m | l, phi, F)` for the posterior of `F_prev`.
    pub fn q_value(&self, image: &Grid, post: &PosteriorTable) -> Result<f64> {
        self.check_image(image)?;
        self.check_posterior(post)?;
        let t = self.templates(image);
        let per_patch: Vec<f64> = (0..self.patches.len())
            .into_par_iter()
            .map(|m| {
                let table = self.table_for(m, &t);
                post.row(m).iter().zip(&table).map(|(w, v)| w * v).sum()
            })
            .collect();
        Ok(per_patch.iter().sum())
    }

    /// Analytic gradient of `Q` with respect to `F`, posterior held fixed.
    pub fn q_gradient(&self, image: &Grid, post: &PosteriorTable) -> Result<Grid> {
        self.check_image(image)?;
        self.check_posterior(post)?;
        let t = self.templates(image);
        let l = self.patches.patch_side();
        let sigma2 = self.patches.sigma() * self.patches.sigma();
        let padded_grads = match &self.fast {
            Some(cache) => self.fast_padded_gradient(cache, &t, post),
            None => self.direct_padded_gradient(&t, post),
        };
        let mut grad = Grid::zeros(l);
        for (k, g) in padded_grads.iter().enumerate() {
            let unpadded = g.block(0, 0, l);
            grad.add_scaled(1.0, &self.rotations.plan(k).apply_adjoint(&unpadded));
        }
        Ok(grad.scaled(1.0 / sigma2))
    }

    /// Per rotation, `sum_m sum_l w T_l^T C^T (M_m - C T_l Z F_phi)` in the padded frame.
    fn direct_padded_gradient(&self, t: &Templates, post: &PosteriorTable) -> Vec<Grid> {
        let l = self.patches.patch_side();
        let p = 2 * l;
        let k_count = self.rotation_count();
        let per_patch: Vec<Vec<Vec<f64>>> = (0..self.patches.len())
            .into_par_iter()
            .map(|m| {
                let patch = self.patches.patches()[m].values();
                let row = post.row(m);
                let mut acc = vec![vec![0.0; p * p]; k_count];
                for (k, zf) in t.padded.iter().enumerate() {
                    let zf = zf.values();
                    let acc = &mut acc[k];
                    for s in 0..p * p {
                        let w = row[s * k_count + k];
                        if w == 0.0 {
                            continue;
                        }
                        let (lx, ly) = (s / p, s % p);
                        for i in 0..l {
                            let base = ((i + lx) % p) * p;
                            for j in 0..l {
                                let idx = base + (j + ly) % p;
                                acc[idx] += w * (patch[i * l + j] - zf[idx]);
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![vec![0.0; p * p]; k_count];
        for acc in &per_patch {
            for (tk, ak) in total.iter_mut().zip(acc) {
                for (a, b) in tk.iter_mut().zip(ak) {
                    *a += b;
                }
            }
        }
        total
            .into_iter()
            .map(|v| Grid::from_fn(p, |i, j| v[i * p + j]))
            .collect()
    }

    /// Same quantity via convolutions: `sum_m W_m * ZM_m - ZF (sum_m W_m * mask)`.
    fn fast_padded_gradient(&self, cache: &FastCache, t: &Templates, post: &PosteriorTable) -> Vec<Grid> {
        let p = cache.fft.side();
        let k_count = self.rotation_count();
        let per_patch: Vec<Vec<(Spectrum, Spectrum)>> = (0..self.patches.len())
            .into_par_iter()
            .map(|m| {
                let row = post.row(m);
                (0..k_count)
                    .map(|k| {
                        let w = Grid::from_fn(p, |i, j| row[(i * p + j) * k_count + k]);
                        let ws = cache.fft.forward(&w);
                        let data: Spectrum = ws.iter().zip(&cache.patch_spectra[m]).map(|(a, b)| a * b).collect();
                        (data, ws)
                    })
                    .collect()
            })
            .collect();
        let zero = || vec![Complex64::default(); p * p];
        let mut data_sum: Vec<Spectrum> = (0..k_count).map(|_| zero()).collect();
        let mut weight_sum: Vec<Spectrum> = (0..k_count).map(|_| zero()).collect();
        for per_k in &per_patch {
            for (k, (d, w)) in per_k.iter().enumerate() {
                for (a, b) in data_sum[k].iter_mut().zip(d) {
                    *a += b;
                }
                for (a, b) in weight_sum[k].iter_mut().zip(w) {
                    *a += b;
                }
            }
        }
        (0..k_count)
            .map(|k| {
                let data = cache.fft.inverse_real(&data_sum[k]);
                let cover_spec: Spectrum = weight_sum[k].iter().zip(&cache.mask).map(|(a, b)| a * b).collect();
                let cover = cache.fft.inverse_real(&cover_spec);
                let zf = &t.padded[k];
                Grid::from_fn(p, |i, j| data[(i, j)] - zf[(i, j)] * cover[(i, j)])
            })
            .collect()
    }
}

fn direct_table(patch: &Grid, padded: &[Grid], inv_two_sigma2: f64) -> Vec<f64> {
    let l = patch.side();
    let p = 2 * l;
    let k_count = padded.len();
    let patch = patch.values();
    let mut out = vec![0.0; p * p * k_count];
    for (k, zf) in padded.iter().enumerate() {
        let zf = zf.values();
        for lx in 0..p {
            for ly in 0..p {
                let mut r = 0.0;
                for i in 0..l {
                    let base = ((i + lx) % p) * p;
                    for j in 0..l {
                        let d = patch[i * l + j] - zf[base + (j + ly) % p];
                        r += d * d;
                    }
                }
                out[(lx * p + ly) * k_count + k] = -r * inv_two_sigma2;
            }
        }
    }
    out
}

fn fast_table(cache: &FastCache, m: usize, t: &Templates, inv_two_sigma2: f64) -> Vec<f64> {
    let p = cache.fft.side();
    let k_count = t.padded.len();
    let energy = cache.patch_energy[m];
    let mut out = vec![0.0; p * p * k_count];
    for k in 0..k_count {
        let cross = cache.fft.correlate(&cache.patch_spectra[m], &t.spectra[k]);
        let tmpl = &t.energy[k];
        for s in 0..p * p {
            let (i, j) = (s / p, s % p);
            let r = energy - 2.0 * cross[(i, j)] + tmpl[(i, j)];
            out[s * k_count + k] = -r * inv_two_sigma2;
        }
    }
    out
}

/// Direct-path log-likelihood table of one patch, layout `(shift, rotation)`.
pub fn patch_log_likelihood_table(image: &Grid, patch: &Grid, sigma: f64, rotations: usize) -> Result<Vec<f64>> {
    single_patch_tables(image, patch, sigma, rotations, TablePath::Direct)
}

/// FFT-path log-likelihood table of one patch.
pub fn patch_log_likelihood_table_fast(image: &Grid, patch: &Grid, sigma: f64, rotations: usize) -> Result<Vec<f64>> {
    single_patch_tables(image, patch, sigma, rotations, TablePath::Fast)
}

fn single_patch_tables(image: &Grid, patch: &Grid, sigma: f64, rotations: usize, path: TablePath) -> Result<Vec<f64>> {
    let set = PatchSet::from_patches(vec![patch.clone()], sigma)?;
    let lik = Likelihood::new(&set, rotations, path)?;
    Ok(lik.tables(image)?.pop().unwrap_or_default())
}

pub fn posterior(image: &Grid, patches: &PatchSet, rotations: usize) -> Result<PosteriorTable> {
    Likelihood::new(patches, rotations, TablePath::Auto)?.posterior(image)
}

pub fn q_value(image: &Grid, patches: &PatchSet, post: &PosteriorTable) -> Result<f64> {
    Likelihood::new(patches, post.rotations(), TablePath::Auto)?.q_value(image, post)
}

pub fn q_gradient(image: &Grid, patches: &PatchSet, post: &PosteriorTable) -> Result<Grid> {
    Likelihood::new(patches, post.rotations(), TablePath::Auto)?.q_gradient(image, post)
}
