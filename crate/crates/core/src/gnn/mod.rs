//! Multi-layer polynomial graph filter networks.
//!
//! Layer `l` maps `F_{l-1}` input features to `F_l` outputs,
//! `f_l^p = sigma_l(sum_q sum_k h_{l,k}^{qp} S^k f_{l-1}^q)`, with
//! `sigma_l` the hidden activation on every layer but the last, which uses
//! the output activation. The operator powers are applied by repeated
//! matrix-vector products and kept for the backward pass.

mod train;

pub use train::{
    evaluate, lagrangian, policy_forward, policy_input, policy_operator, train, EvalRecord,
    HistoryRow, LagrangianValue, TrainConfig, TrainOutcome, OPERATOR_POWER_STEPS,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocators::Allocation;
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

pub const MODEL_SCHEMA: &str = "mnn-alloc/gnn-model/v1";

/// Pointwise nonlinearities. Each is 1-Lipschitz with `sigma(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    /// Slope 0.1 for negative inputs.
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Identity,
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Tanh,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Relu => x.max(0.0),
            Self::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    0.1 * x
                }
            }
            Self::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.1
                }
            }
            Self::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "relu" => Ok(Self::Relu),
            "leaky-relu" => Ok(Self::LeakyRelu),
            "tanh" => Ok(Self::Tanh),
            other => Err(invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// Map from the final scalar feature to a transmit power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMapping {
    /// `p0 / (1 + e^-z)`.
    ScaledLogistic,
}

impl OutputMapping {
    pub fn apply(self, z: f64, p0: f64) -> f64 {
        match self {
            Self::ScaledLogistic => p0 * logistic(z),
        }
    }

    pub fn derivative(self, z: f64, p0: f64) -> f64 {
        match self {
            Self::ScaledLogistic => {
                let s = logistic(z);
                p0 * s * (1.0 - s)
            }
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Graph signal fed to the policy network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSignal {
    /// All-ones vector.
    Ones,
    /// Direct-link log states `s_ii`, standardized to zero mean and unit
    /// variance within each network.
    DirectState,
}

impl std::str::FromStr for InputSignal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(Self::Ones),
            "direct-state" => Ok(Self::DirectState),
            other => Err(invalid(format!("unknown input signal '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: usize,
    pub taps: usize,
    /// Width of every hidden layer.
    pub width: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            layers: 10,
            taps: 5,
            width: 16,
        }
    }
}

impl Architecture {
    /// `[1, F, ..., F, 1]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![1];
        w.extend(std::iter::repeat_n(
            self.width,
            self.layers.saturating_sub(1),
        ));
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.taps == 0 || self.width == 0 {
            return Err(invalid("layers, taps and width must all be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub taps: usize,
    /// Feature counts `F_0 ..= F_L`.
    pub widths: Vec<usize>,
    /// Per layer, the bank `h^{qp}` flattened as `(q * F_out + p) * K + k`.
    pub coeffs: Vec<Vec<f64>>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub output_mapping: OutputMapping,
    pub input: InputSignal,
}

impl GnnModel {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        let coeffs = widths
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1] * arch.taps])
            .collect();
        Ok(Self {
            taps: arch.taps,
            widths,
            coeffs,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            output_mapping: OutputMapping::ScaledLogistic,
            input: InputSignal::DirectState,
        })
    }

    /// Coefficients drawn i.i.d. `N(0, init_scale^2)` in storage order.
    pub fn random(arch: &Architecture, init_scale: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = SeededRng::new(seed);
        for bank in &mut model.coeffs {
            for c in bank.iter_mut() {
                *c = rng.normal(0.0, init_scale);
            }
        }
        Ok(model)
    }

    pub fn layers(&self) -> usize {
        self.coeffs.len()
    }

    pub fn index(&self, layer: usize, q: usize, p: usize, k: usize) -> usize {
        (q * self.widths[layer + 1] + p) * self.taps + k
    }

    pub fn filter(&self, layer: usize, q: usize, p: usize) -> &[f64] {
        let start = self.index(layer, q, p, 0);
        &self.coeffs[layer][start..start + self.taps]
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.coeffs.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.widths.len() < 2 {
            return Err(invalid("model needs at least one layer and one tap"));
        }
        if self.widths[0] != 1 || *self.widths.last().unwrap() != 1 {
            return Err(invalid("input and output widths must be 1"));
        }
        if self.coeffs.len() + 1 != self.widths.len() {
            return Err(invalid("coefficient banks do not match the widths"));
        }
        for (l, bank) in self.coeffs.iter().enumerate() {
            if bank.len() != self.widths[l] * self.widths[l + 1] * self.taps {
                return Err(invalid(format!("layer {l} bank has the wrong size")));
            }
        }
        if self.coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("coefficients must be finite"));
        }
        Ok(())
    }

    /// Runs the filter cascade and keeps the intermediate products.
    pub fn forward_features(&self, op: &DMatrix<f64>, x: &DVector<f64>) -> Result<ForwardCache> {
        let n = x.len();
        if op.nrows() != n || op.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: op.nrows(),
                actual: n,
            });
        }
        let mut features = vec![x.clone()];
        let mut layers = Vec::with_capacity(self.layers());
        for l in 0..self.layers() {
            let f_out = self.widths[l + 1];
            let powers: Vec<Vec<DVector<f64>>> = features
                .iter()
                .map(|f| {
                    let mut seq = Vec::with_capacity(self.taps);
                    seq.push(f.clone());
                    for k in 1..self.taps {
                        let next = op * &seq[k - 1];
                        seq.push(next);
                    }
                    seq
                })
                .collect();
            let mut pre = vec![DVector::zeros(n); f_out];
            for (q, seq) in powers.iter().enumerate() {
                for (p, acc) in pre.iter_mut().enumerate() {
                    for (k, z) in seq.iter().enumerate() {
                        let h = self.coeffs[l][self.index(l, q, p, k)];
                        if h != 0.0 {
                            acc.axpy(h, z, 1.0);
                        }
                    }
                }
            }
            let act = self.activation(l);
            features = pre.iter().map(|u| u.map(|v| act.apply(v))).collect();
            layers.push(LayerCache { powers, pre });
        }
        let output = features.pop().expect("output feature");
        Ok(ForwardCache { layers, output })
    }

    /// Policy output: allocation `p_i = mapping(f_L(i))` with the trace.
    pub fn forward(&self, op: &DMatrix<f64>, x: &DVector<f64>, p0: f64) -> Result<Forward> {
        let cache = self.forward_features(op, x)?;
        let p = cache
            .output
            .iter()
            .map(|&z| self.output_mapping.apply(z, p0))
            .collect();
        Ok(Forward {
            allocation: Allocation { p },
            cache,
        })
    }

    /// Reverse-mode gradient of `<upstream, f_L>` with respect to every
    /// coefficient.
    pub fn backward_features(
        &self,
        op: &DMatrix<f64>,
        cache: &ForwardCache,
        upstream: &DVector<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        let n = cache.output.len();
        if upstream.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: upstream.len(),
            });
        }
        let op_t = op.transpose();
        let mut grads: Vec<Vec<f64>> = self.coeffs.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut upstream_features = vec![upstream.clone()];
        for l in (0..self.layers()).rev() {
            let layer = &cache.layers[l];
            let act = self.activation(l);
            let g_pre: Vec<DVector<f64>> = layer
                .pre
                .iter()
                .zip(&upstream_features)
                .map(|(u, g)| g.zip_map(u, |g, u| g * act.derivative(u)))
                .collect();
            let f_out = self.widths[l + 1];
            let mut g_in = Vec::with_capacity(self.widths[l]);
            for (q, seq) in layer.powers.iter().enumerate() {
                // d/dz_{q,k} = sum_p h^{qp}_k g_pre^p
                let mut g_powers = vec![DVector::zeros(n); self.taps];
                for (k, z) in seq.iter().enumerate() {
                    for p in 0..f_out {
                        let idx = self.index(l, q, p, k);
                        grads[l][idx] = g_pre[p].dot(z);
                        let h = self.coeffs[l][idx];
                        if h != 0.0 {
                            g_powers[k].axpy(h, &g_pre[p], 1.0);
                        }
                    }
                }
                if l > 0 {
                    // sum_k (S^T)^k g_powers[k], Horner form
                    let mut acc = g_powers.pop().expect("taps >= 1");
                    while let Some(g) = g_powers.pop() {
                        acc = &op_t * acc + g;
                    }
                    g_in.push(acc);
                }
            }
            upstream_features = g_in;
        }
        Ok(grads)
    }

    /// Gradient of `<upstream, p>` with respect to every coefficient, through
    /// the output mapping.
    pub fn backward(
        &self,
        op: &DMatrix<f64>,
        forward: &Forward,
        p0: f64,
        upstream: &DVector<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        let out = &forward.cache.output;
        if upstream.len() != out.len() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                actual: upstream.len(),
            });
        }
        let g = upstream.zip_map(out, |g, z| g * self.output_mapping.derivative(z, p0));
        self.backward_features(op, &forward.cache, &g)
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            schema: MODEL_SCHEMA.to_string(),
            layers: self.layers(),
            taps: self.taps,
            widths: self.widths.clone(),
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
            output_mapping: self.output_mapping,
            input: self.input,
            coeffs: self.coeffs.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.schema != MODEL_SCHEMA {
            return Err(Error::Document(format!(
                "unsupported schema '{}'",
                doc.schema
            )));
        }
        if doc.layers != doc.coeffs.len() {
            return Err(Error::Document(
                "layer count does not match coefficient banks".into(),
            ));
        }
        let model = Self {
            taps: doc.taps,
            widths: doc.widths,
            coeffs: doc.coeffs,
            hidden_activation: doc.hidden_activation,
            output_activation: doc.output_activation,
            output_mapping: doc.output_mapping,
            input: doc.input,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// Serialized [`GnnModel`]. `coeffs[l]` is layer-major, then `q`, `p`, `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: String,
    pub layers: usize,
    pub taps: usize,
    pub widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub output_mapping: OutputMapping,
    pub input: InputSignal,
    pub coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    /// `powers[q][k] = S^k f_{l-1}^q`.
    pub powers: Vec<Vec<DVector<f64>>>,
    /// Pre-activation features.
    pub pre: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    /// Final feature `f_L` before the output mapping.
    pub output: DVector<f64>,
}

impl ForwardCache {
    /// Hidden features `f_l` for `l = 1..L`, recovered from the stored inputs.
    pub fn hidden(&self) -> Vec<Vec<DVector<f64>>> {
        let mut out: Vec<Vec<DVector<f64>>> = self
            .layers
            .iter()
            .skip(1)
            .map(|l| l.powers.iter().map(|seq| seq[0].clone()).collect())
            .collect();
        out.push(vec![self.output.clone()]);
        out
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub allocation: Allocation,
    pub cache: ForwardCache,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::symmetrize;

    fn setup(seed: u64, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = SeededRng::new(seed);
        let op = symmetrize(&DMatrix::from_fn(n, n, |_, _| rng.gaussian())) / (n as f64).sqrt();
        let x = DVector::from_fn(n, |_, _| rng.gaussian());
        (op, x)
    }

    #[test]
    fn zero_model_outputs_half_power() {
        let (op, x) = setup(1, 6);
        let model = GnnModel::zeros(&Architecture::default()).unwrap();
        let fwd = model.forward(&op, &x, 2.0).unwrap();
        assert!(fwd.allocation.p.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn single_tap_identity_passes_input() {
        let (op, x) = setup(2, 5);
        let mut model = GnnModel::zeros(&Architecture {
            layers: 1,
            taps: 1,
            width: 1,
        })
        .unwrap();
        model.coeffs[0][0] = 1.0;
        let cache = model.forward_features(&op, &x).unwrap();
        assert_eq!(cache.output, x);
    }

    #[test]
    fn forward_rejects_mismatched_operator() {
        let (op, _) = setup(3, 5);
        let model = GnnModel::zeros(&Architecture::default()).unwrap();
        assert!(model.forward_features(&op, &DVector::zeros(4)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (op, x) = setup(4, 6);
        let model = GnnModel::random(
            &Architecture {
                layers: 3,
                taps: 3,
                width: 4,
            },
            0.5,
            9,
        )
        .unwrap();
        let fwd = model.forward(&op, &x, 1.0).unwrap();
        let g = model.backward(&op, &fwd, 1.0, &DVector::zeros(6)).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_input_feature_gives_zero_coefficient_gradient() {
        let (op, _) = setup(5, 6);
        let model = GnnModel::random(
            &Architecture {
                layers: 2,
                taps: 3,
                width: 3,
            },
            0.5,
            2,
        )
        .unwrap();
        let x = DVector::zeros(6);
        let fwd = model.forward(&op, &x, 1.0).unwrap();
        let g = model
            .backward(&op, &fwd, 1.0, &DVector::from_element(6, 1.0))
            .unwrap();
        assert!(g[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_features_have_layer_widths() {
        let (op, x) = setup(6, 7);
        let arch = Architecture {
            layers: 3,
            taps: 2,
            width: 4,
        };
        let model = GnnModel::random(&arch, 0.3, 1).unwrap();
        let cache = model.forward_features(&op, &x).unwrap();
        let widths: Vec<usize> = cache.hidden().iter().map(Vec::len).collect();
        assert_eq!(widths, vec![4, 4, 1]);
    }

    #[test]
    fn activations_are_normalized_lipschitz() {
        let grid: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.05).collect();
        for act in Activation::ALL {
            assert_eq!(act.apply(0.0), 0.0);
            for a in &grid {
                for b in &grid {
                    assert!((act.apply(*a) - act.apply(*b)).abs() <= (a - b).abs() + 1e-15);
                }
            }
        }
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let model = GnnModel::random(&Architecture::default(), 0.1, 77).unwrap();
        let back = GnnModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn malformed_document_rejected() {
        let mut doc = GnnModel::zeros(&Architecture::default())
            .unwrap()
            .to_document();
        doc.coeffs[0].pop();
        assert!(GnnModel::from_document(doc).is_err());
    }
}
