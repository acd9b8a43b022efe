use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at a pre-activation value; the rectifier uses 0 at exactly 0.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// A fully connected feedforward network.
///
/// Layer `l` maps `dims[l]` inputs to `dims[l + 1]` outputs through a weight of
/// shape `[dims[l + 1], dims[l]]` (row-major, `y = W x + b`) stored under
/// `layer{l}.weight` and a bias stored under `layer{l}.bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseNetSpec", into = "DenseNetSpec")]
pub struct DenseNet {
    dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
    names: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct DenseNetSpec {
    layer_dims: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl TryFrom<DenseNetSpec> for DenseNet {
    type Error = Error;

    fn try_from(spec: DenseNetSpec) -> Result<Self> {
        DenseNet::new(spec.layer_dims, spec.hidden_activation, spec.output_activation)
    }
}

impl From<DenseNet> for DenseNetSpec {
    fn from(net: DenseNet) -> Self {
        DenseNetSpec {
            layer_dims: net.dims,
            hidden_activation: net.hidden,
            output_activation: net.output,
        }
    }
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

impl DenseNet {
    pub fn new(dims: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("a dense network needs at least one layer"));
        }
        if dims.contains(&0) {
            return Err(Error::config(format!("layer dimensions must be positive: {dims:?}")));
        }
        let names = (0..dims.len() - 1)
            .map(|l| (format!("layer{l}.weight"), format!("layer{l}.bias")))
            .collect();
        Ok(Self {
            dims,
            hidden,
            output,
            names,
        })
    }

    /// Rectifier hidden layers with a linear output layer.
    pub fn mlp(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, Activation::Relu, Activation::Identity)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> &str {
        &self.names[layer].0
    }

    pub fn bias_name(&self, layer: usize) -> &str {
        &self.names[layer].1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            store
                .insert(
                    &self.names[l].0,
                    Tensor {
                        shape: vec![fan_out, fan_in],
                        data: weights,
                    },
                )
                .expect("shape matches by construction");
            store
                .insert(&self.names[l].1, Tensor::zeros(vec![fan_out]))
                .expect("shape matches by construction");
        }
        store
    }

    pub fn zero_params(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            store
                .insert(&self.names[l].0, Tensor::zeros(vec![fan_out, fan_in]))
                .unwrap();
            store.insert(&self.names[l].1, Tensor::zeros(vec![fan_out])).unwrap();
        }
        store
    }

    /// Verifies that `params` holds exactly this network's tensors, in order.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        if params.len() != 2 * self.num_layers() {
            return Err(Error::config(format!(
                "network with {} layers expects {} tensors, got {}",
                self.num_layers(),
                2 * self.num_layers(),
                params.len()
            )));
        }
        let mut iter = params.iter();
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            for (expected_name, expected_shape) in [
                (&self.names[l].0, vec![fan_out, fan_in]),
                (&self.names[l].1, vec![fan_out]),
            ] {
                let (name, tensor) = iter.next().unwrap();
                if name != expected_name || tensor.shape != expected_shape {
                    return Err(Error::config(format!(
                        "expected `{expected_name}` {expected_shape:?}, found `{name}` {:?}",
                        tensor.shape
                    )));
                }
            }
        }
        Ok(())
    }

    fn layer<'a>(&self, params: &'a ParamStore, l: usize) -> (&'a [f64], &'a [f64]) {
        let w = params.get(&self.names[l].0).expect("checked layout");
        let b = params.get(&self.names[l].1).expect("checked layout");
        (&w.data, &b.data)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::config(format!(
                "network input has {} values, expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(params, input)?.activations.pop().unwrap())
    }

    pub fn forward_trace(&self, params: &ParamStore, input: &[f64]) -> Result<ForwardTrace> {
        self.check_params(params)?;
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.dims.len());
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        activations.push(input.to_vec());
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(params, l);
            let x = &activations[l];
            let fan_in = self.dims[l];
            let pre: Vec<f64> = b
                .iter()
                .zip(w.chunks_exact(fan_in))
                .map(|(bias, row)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let act = self.activation(l);
            let out = pre.iter().map(|&p| act.apply(p)).collect();
            pre_activations.push(pre);
            activations.push(out);
        }
        Ok(ForwardTrace {
            activations,
            pre_activations,
        })
    }

    /// Reverse-mode pass for `upstream · output`, returning parameter and input gradients.
    pub fn backward(&self, params: &ParamStore, input: &[f64], upstream: &[f64]) -> Result<(ParamStore, Vec<f64>)> {
        let trace = self.forward_trace(params, input)?;
        let mut grads = params.zeros_like();
        let input_grad = self.backward_trace(params, &trace, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Backward pass over a recorded trace. Parameter gradients are added into
    /// `grads` so several passes can share one accumulator.
    pub fn backward_trace(
        &self,
        params: &ParamStore,
        trace: &ForwardTrace,
        upstream: &[f64],
        grads: &mut ParamStore,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::config(format!(
                "upstream gradient has {} values, expected {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        self.check_params(grads)?;
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation(l);
            for (d, &p) in delta.iter_mut().zip(&trace.pre_activations[l]) {
                *d *= act.derivative(p);
            }
            let fan_in = self.dims[l];
            let x = &trace.activations[l];
            {
                let gw = &mut grads.get_mut(&self.names[l].0).unwrap().data;
                for (row, &d) in gw.chunks_exact_mut(fan_in).zip(&delta) {
                    if d != 0.0 {
                        row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
                    }
                }
            }
            {
                let gb = &mut grads.get_mut(&self.names[l].1).unwrap().data;
                gb.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
            }
            let (w, _) = self.layer(params, l);
            let mut next = vec![0.0; fan_in];
            for (row, &d) in w.chunks_exact(fan_in).zip(&delta) {
                if d != 0.0 {
                    next.iter_mut().zip(row).for_each(|(n, wi)| *n += d * wi);
                }
            }
            delta = next;
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(dims: Vec<usize>) -> DenseNet {
        DenseNet::new(dims, Activation::Relu, Activation::Identity).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = linear(vec![2, 2]);
        let mut params = net.zero_params();
        params.get_mut("layer0.weight").unwrap().data = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(net.forward(&params, &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn rectifier_definition() {
        let out: Vec<f64> = [-1.0, 0.0, 2.0].iter().map(|&x| Activation::Relu.apply(x)).collect();
        assert_eq!(out, vec![0.0, 0.0, 2.0]);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn rectifier_at_zero_blocks_gradient() {
        // one hidden unit with pre-activation exactly 0
        let net = linear(vec![1, 1, 1]);
        let mut params = net.zero_params();
        params.get_mut("layer1.weight").unwrap().data = vec![1.0];
        params.get_mut("layer0.weight").unwrap().data = vec![1.0];
        let (grads, input_grad) = net.backward(&params, &[0.0], &[1.0]).unwrap();
        assert_eq!(input_grad, vec![0.0]);
        assert_eq!(grads.get("layer0.weight").unwrap().data, vec![0.0]);
        assert_eq!(grads.get("layer0.bias").unwrap().data, vec![0.0]);
    }

    #[test]
    fn linear_layer_gradients_are_outer_products() {
        let net = linear(vec![3, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = net.init_params(&mut rng);
        let x = [0.5, -1.0, 2.0];
        let g = [0.25, -3.0];
        let (grads, input_grad) = net.backward(&params, &x, &g).unwrap();
        let expected_w: Vec<f64> = g.iter().flat_map(|gi| x.iter().map(move |xi| gi * xi)).collect();
        assert_eq!(grads.get("layer0.weight").unwrap().data, expected_w);
        assert_eq!(grads.get("layer0.bias").unwrap().data, g.to_vec());
        let w = &params.get("layer0.weight").unwrap().data;
        for j in 0..3 {
            let expected = g[0] * w[j] + g[1] * w[3 + j];
            assert!((input_grad[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let net = linear(vec![2, 3, 1]);
        let params = net.zero_params();
        assert!(matches!(net.forward(&params, &[1.0]), Err(Error::Config(_))));
        assert!(matches!(
            net.backward(&params, &[1.0, 2.0], &[1.0, 1.0]),
            Err(Error::Config(_))
        ));
        let other = linear(vec![2, 4, 1]).zero_params();
        assert!(matches!(net.forward(&other, &[1.0, 2.0]), Err(Error::Config(_))));
        assert!(DenseNet::mlp(vec![3]).is_err());
        assert!(DenseNet::mlp(vec![3, 0, 1]).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let net = linear(vec![4, 8, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = net.init_params(&mut rng);
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(params
            .get("layer0.weight")
            .unwrap()
            .data
            .iter()
            .all(|w| w.abs() <= bound));
        assert!(params.get("layer1.bias").unwrap().data.iter().all(|&b| b == 0.0));
    }
}
