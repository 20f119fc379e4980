//! Fully-connected score network: affine layers with Softplus between them.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MtdError, Result};

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine layer, `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub layers: Vec<Dense>,
}

impl NetGradients {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weight.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// Activations recorded during a forward pass.
pub(crate) struct ForwardTrace {
    /// Input to every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    hidden: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Score network `s(x)` or `s(x, t)`.
///
/// `layer_dims` are the data-side widths, e.g. `[L^2, H, H, L^2]`; a
/// time-conditioned net receives `t` as one extra input column.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreNet {
    dims: Vec<usize>,
    time_conditioned: bool,
    layers: Vec<Dense>,
}

impl MlpScoreNet {
    /// Random init, uniform in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], time_conditioned: bool, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, time_conditioned)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.weight.ncols() as f64).sqrt();
            layer.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], time_conditioned: bool) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(MtdError::InvalidParameter(format!("bad layer dims {dims:?}")));
        }
        if dims[0] != dims[dims.len() - 1] {
            return Err(MtdError::InvalidParameter(format!(
                "score output width {} must equal data width {}",
                dims[dims.len() - 1],
                dims[0]
            )));
        }
        let extra = usize::from(time_conditioned);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::zeros(w[0] + if i == 0 { extra } else { 0 }, w[1]))
            .collect();
        Ok(MlpScoreNet {
            dims: dims.to_vec(),
            time_conditioned,
            layers,
        })
    }

    /// Assembles a network from explicit layers, checking shape compatibility.
    pub fn from_layers(dims: &[usize], time_conditioned: bool, layers: Vec<Dense>) -> Result<Self> {
        let template = Self::zeros(dims, time_conditioned)?;
        if layers.len() != template.layers.len() {
            return Err(MtdError::DimensionMismatch(format!(
                "{} layers for dims {dims:?}",
                layers.len()
            )));
        }
        for (got, want) in layers.iter().zip(&template.layers) {
            if got.weight.dim() != want.weight.dim() || got.bias.len() != want.bias.len() {
                return Err(MtdError::DimensionMismatch(format!(
                    "layer of shape {:?} where {:?} expected",
                    got.weight.dim(),
                    want.weight.dim()
                )));
            }
            if got.weight.iter().chain(got.bias.iter()).any(|v| !v.is_finite()) {
                return Err(MtdError::NonFinite("network parameter".into()));
            }
        }
        Ok(MlpScoreNet {
            dims: dims.to_vec(),
            time_conditioned,
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn is_time_conditioned(&self) -> bool {
        self.time_conditioned
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(MtdError::DimensionMismatch(format!(
                "{} parameters for a net with {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
        Ok(())
    }

    fn input_matrix(&self, x: ArrayView2<f64>, t: Option<&[f64]>) -> Result<Array2<f64>> {
        if x.ncols() != self.data_dim() {
            return Err(MtdError::DimensionMismatch(format!(
                "input width {} for a net over {} values",
                x.ncols(),
                self.data_dim()
            )));
        }
        match (self.time_conditioned, t) {
            (false, None) => Ok(x.to_owned()),
            (true, Some(t)) => {
                if t.len() != x.nrows() {
                    return Err(MtdError::DimensionMismatch(format!(
                        "{} times for {} inputs",
                        t.len(),
                        x.nrows()
                    )));
                }
                let mut input = Array2::zeros((x.nrows(), x.ncols() + 1));
                input.slice_mut(s![.., ..x.ncols()]).assign(&x);
                for (row, &tv) in t.iter().enumerate() {
                    input[[row, x.ncols()]] = tv;
                }
                Ok(input)
            }
            (true, None) => Err(MtdError::InvalidParameter("time-conditioned net needs t".into())),
            (false, Some(_)) => Err(MtdError::InvalidParameter("net is not time-conditioned".into())),
        }
    }

    pub(crate) fn forward_trace(&self, x: ArrayView2<f64>, t: Option<&[f64]>) -> Result<ForwardTrace> {
        let mut h = self.input_matrix(x, t)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let a = h.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(h);
            if i == last {
                return Ok(ForwardTrace {
                    inputs,
                    hidden,
                    output: a,
                });
            }
            h = a.mapv(softplus);
            hidden.push(a);
        }
        unreachable!("network has at least one layer")
    }

    /// Batched forward pass; rows of `x` are inputs.
    pub fn forward(&self, x: ArrayView2<f64>, t: Option<&[f64]>) -> Result<Array2<f64>> {
        Ok(self.forward_trace(x, t)?.output)
    }

    /// Backpropagates `d loss / d output` through a recorded pass.
    pub(crate) fn backward(&self, trace: &ForwardTrace, grad_out: Array2<f64>) -> NetGradients {
        let mut g = grad_out;
        let mut layers = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let weight = g.t().dot(&trace.inputs[i]);
            let bias = g.sum_axis(Axis(0));
            layers.push(Dense { weight, bias });
            if i > 0 {
                let mut back = g.dot(&self.layers[i].weight);
                back.zip_mut_with(&trace.hidden[i - 1], |b, &a| *b *= sigmoid(a));
                g = back;
            }
        }
        layers.reverse();
        NetGradients { layers }
    }

    pub fn score(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| MtdError::DimensionMismatch(e.to_string()))?;
        let t = t.map(|v| [v]);
        let out = self.forward(view, t.as_ref().map(|a| &a[..]))?;
        Ok(out.into_iter().collect())
    }

    /// Exact Jacobian `d s / d x` (data inputs only), by layerwise products.
    pub fn jacobian(&self, x: &[f64], t: Option<f64>) -> Result<Array2<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| MtdError::DimensionMismatch(e.to_string()))?;
        let t = t.map(|v| [v]);
        let trace = self.forward_trace(view, t.as_ref().map(|a| &a[..]))?;
        let last = self.layers.len() - 1;
        let mut acc = self.layers[last].weight.clone();
        for i in (0..last).rev() {
            let slope = trace.hidden[i].row(0).mapv(sigmoid);
            acc *= &slope;
            acc = acc.dot(&self.layers[i].weight);
        }
        Ok(acc.slice(s![.., ..self.data_dim()]).to_owned())
    }

    pub fn jacobian_trace(&self, x: &[f64], t: Option<f64>) -> Result<f64> {
        Ok(self.jacobian(x, t)?.diag().sum())
    }

    /// Jacobian trace by central differences along each coordinate.
    pub fn jacobian_trace_fd(&self, x: &[f64], t: Option<f64>, step: f64) -> Result<f64> {
        let mut probe = x.to_vec();
        let mut trace = 0.0;
        for i in 0..x.len() {
            probe[i] = x[i] + step;
            let plus = self.score(&probe, t)?[i];
            probe[i] = x[i] - step;
            let minus = self.score(&probe, t)?[i];
            probe[i] = x[i];
            trace += (plus - minus) / (2.0 * step);
        }
        Ok(trace)
    }

    pub fn to_document(&self) -> WeightDocument {
        WeightDocument {
            format: WEIGHT_FORMAT.into(),
            activation: "softplus".into(),
            time_conditioned: self.time_conditioned,
            layer_dims: self.dims.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: WeightDocument) -> Result<Self> {
        if doc.format != WEIGHT_FORMAT {
            return Err(MtdError::InvalidParameter(format!("unknown weight format '{}'", doc.format)));
        }
        if doc.activation != "softplus" {
            return Err(MtdError::InvalidParameter(format!(
                "unsupported activation '{}'",
                doc.activation
            )));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.rows, l.cols), l.weight)
                    .map_err(|e| MtdError::DimensionMismatch(e.to_string()))?;
                Ok(Dense {
                    weight,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(&doc.layer_dims, doc.time_conditioned, layers)
    }
}

pub const WEIGHT_FORMAT: &str = "mtd-score-mlp-v1";

/// On-disk form of a score network. Weights are row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDocument {
    pub format: String,
    pub activation: String,
    pub time_conditioned: bool,
    pub layer_dims: Vec<usize>,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDocument {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar re-evaluation of the same weights, independent of ndarray.
    fn reference_forward(net: &MlpScoreNet, x: &[f64], t: Option<f64>) -> Vec<f64> {
        let mut h: Vec<f64> = x.to_vec();
        if let Some(t) = t {
            h.push(t);
        }
        let last = net.layers().len() - 1;
        for (i, l) in net.layers().iter().enumerate() {
            let mut next = Vec::new();
            for r in 0..l.weight.nrows() {
                let mut acc = l.bias[r];
                for c in 0..l.weight.ncols() {
                    acc += l.weight[[r, c]] * h[c];
                }
                next.push(if i == last { acc } else { (1.0 + acc.exp()).ln() });
            }
            h = next;
        }
        h
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpScoreNet::zeros(&[4, 8, 8, 4], false).unwrap();
        assert_eq!(net.score(&[1.0, 2.0, 3.0, 4.0], None).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tc in [false, true] {
            let net = MlpScoreNet::new(&[5, 7, 6, 5], tc, &mut rng).unwrap();
            let x = [0.3, -1.2, 2.0, 0.0, 0.7];
            let t = tc.then_some(0.4);
            let out = net.score(&x, t).unwrap();
            assert_eq!(out.len(), 5);
            let reference = reference_forward(&net, &x, t);
            for (a, b) in out.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn time_argument_contract() {
        let net = MlpScoreNet::zeros(&[2, 3, 2], true).unwrap();
        assert!(net.score(&[0.0, 0.0], None).is_err());
        let net = MlpScoreNet::zeros(&[2, 3, 2], false).unwrap();
        assert!(net.score(&[0.0, 0.0], Some(0.5)).is_err());
        assert!(net.score(&[0.0], None).is_err());
        assert!(MlpScoreNet::zeros(&[2, 3, 4], false).is_err());
    }

    #[test]
    fn exact_trace_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for tc in [false, true] {
            let net = MlpScoreNet::new(&[6, 10, 10, 6], tc, &mut rng).unwrap();
            let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 0.8).collect();
            let t = tc.then_some(0.2);
            let exact = net.jacobian_trace(&x, t).unwrap();
            let fd = net.jacobian_trace_fd(&x, t, 1e-5).unwrap();
            assert!((exact - fd).abs() < 1e-4 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpScoreNet::new(&[3, 4, 3], true, &mut rng).unwrap();
        let mut other = MlpScoreNet::zeros(&[3, 4, 3], true).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
        assert_eq!(net.num_params(), 4 * 4 + 4 + 4 * 3 + 3);
        let doc = net.to_document();
        assert_eq!(MlpScoreNet::from_document(doc).unwrap(), net);
    }
}
