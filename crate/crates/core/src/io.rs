//! File formats: the `MTDGRID1` binary grid, measurement sidecars, score
//! network weight files, and the TOML run configuration.
//!
//! Grid layout: the 8-byte tag `MTDGRID1`, then `rows` and `cols` as
//! little-endian `u32`, then `rows * cols` little-endian `f64` in row-major
//! order. A measurement's metadata lives next to it in a JSON file with the
//! same basename and extension `.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{MtdError, Result};
use crate::eval::SweepPlan;
use crate::grid::Grid;
use crate::prior::{MlpScoreNet, TrainConfig, WeightDocument};
use crate::synth::{Measurement, MeasurementSpec, NoiseLevel, Occurrence};

pub const GRID_MAGIC: &[u8; 8] = b"MTDGRID1";
const HEADER_LEN: usize = 16;

/// A rectangular array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl GridFile {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != values.len() {
            return Err(MtdError::DimensionMismatch(format!(
                "{rows}x{cols} grid with {} values",
                values.len()
            )));
        }
        if rows > u32::MAX as usize || cols > u32::MAX as usize {
            return Err(MtdError::InvalidParameter("grid dimensions exceed u32".into()));
        }
        Ok(GridFile { rows, cols, values })
    }

    pub fn from_grid(grid: &Grid) -> Self {
        GridFile {
            rows: grid.side(),
            cols: grid.side(),
            values: grid.values().to_vec(),
        }
    }

    pub fn from_array(a: &Array2<f64>) -> Result<Self> {
        GridFile::new(a.nrows(), a.ncols(), a.iter().copied().collect())
    }

    pub fn into_grid(self) -> Result<Grid> {
        if self.rows != self.cols {
            return Err(MtdError::DimensionMismatch(format!(
                "expected a square grid, found {}x{}",
                self.rows, self.cols
            )));
        }
        Grid::from_vec(self.rows, self.values)
    }

    pub fn into_array(self) -> Array2<f64> {
        Array2::from_shape_vec((self.rows, self.cols), self.values).expect("checked shape")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| MtdError::Format {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < HEADER_LEN || &bytes[..8] != GRID_MAGIC {
            return Err(bad("missing MTDGRID1 header".into()));
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if rows == 0 || cols == 0 {
            return Err(bad(format!("non-positive dimensions {rows}x{cols}")));
        }
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != rows * cols * 8 {
            return Err(bad(format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                rows * cols * 8
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(GridFile { rows, cols, values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| MtdError::io(path, e))?;
        GridFile::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| MtdError::io(path, e))
    }
}

pub fn read_image(path: &Path) -> Result<Grid> {
    GridFile::read(path)?.into_grid()
}

pub fn write_image(path: &Path, image: &Grid) -> Result<()> {
    GridFile::from_grid(image).write(path)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Metadata stored beside a measurement grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementMeta {
    pub spec: MeasurementSpec,
    pub sigma: f64,
    pub truth: Vec<Occurrence>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| MtdError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| MtdError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| MtdError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn write_measurement(path: &Path, m: &Measurement) -> Result<()> {
    write_image(path, &m.values)?;
    let meta = MeasurementMeta {
        spec: m.spec.clone(),
        sigma: m.sigma,
        truth: m.truth.clone(),
    };
    write_json(&sidecar_path(path), &meta)
}

/// Reads a measurement and its sidecar; the sidecar is required because the
/// noise level drives the likelihood.
pub fn read_measurement(path: &Path) -> Result<Measurement> {
    let values = read_image(path)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(MtdError::MissingMetadata(format!(
            "{} has no sidecar {}",
            path.display(),
            side.display()
        )));
    }
    let meta: MeasurementMeta = read_json(&side)?;
    if meta.spec.n != values.side() {
        return Err(MtdError::Format {
            path: side,
            detail: format!("sidecar says N = {}, grid is {}x{}", meta.spec.n, values.side(), values.side()),
        });
    }
    if !(meta.sigma >= 0.0) || !meta.sigma.is_finite() {
        return Err(MtdError::MissingMetadata(format!("invalid sigma {} in sidecar", meta.sigma)));
    }
    Ok(Measurement {
        values,
        truth: meta.truth,
        sigma: meta.sigma,
        spec: meta.spec,
    })
}

pub fn write_weights(path: &Path, net: &MlpScoreNet) -> Result<()> {
    write_json(path, &net.to_document())
}

pub fn read_weights(path: &Path) -> Result<MlpScoreNet> {
    let doc: WeightDocument = read_json(path)?;
    MlpScoreNet::from_document(doc)
}

/// `[measurement]` section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub n: usize,
    pub l: usize,
    pub k: usize,
    pub density: f64,
    pub snr: Option<f64>,
    pub sigma: Option<f64>,
    pub area: Option<f64>,
    pub seed: u64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            n: 55,
            l: 5,
            k: 4,
            density: 0.1,
            snr: None,
            sigma: None,
            area: None,
            seed: 0,
        }
    }
}

impl MeasurementConfig {
    pub fn to_spec(&self) -> Result<MeasurementSpec> {
        let noise = match (self.snr, self.sigma) {
            (Some(s), None) => NoiseLevel::Snr(s),
            (None, Some(s)) => NoiseLevel::Sigma(s),
            (None, None) => return Err(MtdError::InvalidParameter("one of snr or sigma is required".into())),
            (Some(_), Some(_)) => return Err(MtdError::InvalidParameter("give snr or sigma, not both".into())),
        };
        let spec = MeasurementSpec {
            n: self.n,
            l: self.l,
            k: self.k,
            density: self.density,
            noise,
            area: self.area,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `[network]` section: architecture and training-set size for the score net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: usize,
    pub time_conditioned: bool,
    pub samples: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: 128,
            time_conditioned: true,
            samples: 10_000,
        }
    }
}

/// Whole-run configuration. Every field has a default, and unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub measurement: MeasurementConfig,
    pub em: EmConfig,
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub sweep: SweepPlan,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MtdError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MtdError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MtdError::io(path, e))?;
        RunConfig::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthesize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_bytes_layout() {
        let g = GridFile::new(1, 2, vec![1.0, -2.5]).unwrap();
        let b = g.to_bytes();
        assert_eq!(&b[..8], b"MTDGRID1");
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn grid_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.grid");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GridFile::new(3, 7, (0..21).map(|_| rng.random::<f64>() * 1e-300).collect()).unwrap();
        g.write(&p).unwrap();
        let first = fs::read(&p).unwrap();
        let back = GridFile::read(&p).unwrap();
        assert_eq!(back, g);
        back.write(&p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
    }

    #[test]
    fn malformed_grids_rejected() {
        let p = Path::new("x.grid");
        assert!(GridFile::from_bytes(b"NOTAGRID", p).is_err());
        let mut b = GridFile::new(2, 2, vec![0.0; 4]).unwrap().to_bytes();
        b.pop();
        assert!(matches!(GridFile::from_bytes(&b, p), Err(MtdError::Format { .. })));
        let mut z = GRID_MAGIC.to_vec();
        z.extend_from_slice(&[0; 8]);
        assert!(GridFile::from_bytes(&z, p).is_err());
        assert!(GridFile::new(2, 3, vec![0.0; 4]).is_err());
    }

    #[test]
    fn measurement_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.grid");
        let spec = MeasurementSpec {
            n: 55,
            l: 5,
            k: 4,
            density: 0.1,
            noise: NoiseLevel::Sigma(0.0),
            area: None,
            seed: 3,
        };
        let m = synthesize(&spec, &Grid::filled(5, 1.0)).unwrap();
        write_measurement(&p, &m).unwrap();
        let back = read_measurement(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.truth.len(), 12);
        fs::remove_file(sidecar_path(&p)).unwrap();
        assert!(matches!(read_measurement(&p), Err(MtdError::MissingMetadata(_))));
    }

    #[test]
    fn weights_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpScoreNet::new(&[4, 8, 4], true, &mut rng).unwrap();
        write_weights(&p, &net).unwrap();
        let first = fs::read(&p).unwrap();
        let back = read_weights(&p).unwrap();
        assert_eq!(back, net);
        write_weights(&p, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.em.max_iters, 100);
        assert_eq!(c.sweep.snrs, vec![1.0, 5.0, 10.0]);
        assert!(RunConfig::from_toml("[em]\nmax_iter = 3\n").is_err());
        assert!(RunConfig::from_toml("[bogus]\n").is_err());
        let c = RunConfig::from_toml("[em]\nmax_iters = 3\ngamma = \"linear\"\n[sweep]\nsnrs = [2.0]\n").unwrap();
        assert_eq!(c.em.max_iters, 3);
        assert_eq!(c.sweep.snrs, vec![2.0]);
    }

    #[test]
    fn config_serializes_back() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn measurement_config_noise_choice() {
        let mut c = MeasurementConfig::default();
        assert!(c.to_spec().is_err());
        c.snr = Some(2.0);
        assert_eq!(c.to_spec().unwrap().noise, NoiseLevel::Snr(2.0));
        c.sigma = Some(1.0);
        assert!(c.to_spec().is_err());
    }
}
