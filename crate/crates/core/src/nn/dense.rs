use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::gemm;
use super::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply_in_place(self, z: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }

    /// Scales `grad` by the derivative, expressed through the activation output.
    fn backprop_in_place(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => grad.iter_mut().zip(out).for_each(|(g, a)| *g *= 1.0 - a * a),
            Activation::Relu => grad.iter_mut().zip(out).for_each(|(g, a)| {
                if *a <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored row-major as
/// `n_out × n_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn init(n_in: usize, n_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = if n_in > 0 { 1.0 / (n_in as f64).sqrt() } else { 0.0 };
        let weights = (0..n_in * n_out)
            .map(|_| bound * (2.0 * rng.next_f64() - 1.0))
            .collect();
        Dense {
            n_in,
            n_out,
            activation,
            weights,
            bias: vec![0.0; n_out],
        }
    }

    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Dense {
            n_in,
            n_out,
            activation,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }
}

/// Activations recorded by a forward pass; `acts[0]` is the input batch and
/// `acts[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the input at least")
    }
}

/// Multilayer perceptron. Batches are row-major `batch × width` buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() + 1 != dims.len() {
            return Err(Error::invalid(format!(
                "{} layer widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::init(w[0], w[1], act, rng))
            .collect();
        Ok(DenseNet { layers })
    }

    /// `input → hidden… → output`, hidden layers sharing one activation.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
        rng: &mut Rng,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(output_act);
        DenseNet::new(&dims, &acts, rng).expect("widths and activations line up")
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::invalid(format!(
                    "layer {i} parameter shapes disagree with {}×{}",
                    l.n_out, l.n_in
                )));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].n_out != w[1].n_in {
                return Err(Error::invalid(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    w[0].n_out,
                    i + 1,
                    w[1].n_in
                )));
            }
        }
        Ok(DenseNet { layers })
    }

    /// A parameter record holding `values` as the bias of an input-free layer.
    pub fn constant(values: &[f64]) -> Self {
        DenseNet {
            layers: vec![Dense {
                n_in: 0,
                n_out: values.len(),
                activation: Activation::Identity,
                weights: Vec::new(),
                bias: values.to_vec(),
            }],
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.n_out))
            .collect()
    }

    /// Same shapes, all parameters zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        DenseNet {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.n_in, l.n_out, l.activation))
                .collect(),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_batch(input, 1)
    }

    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::invalid(format!(
                "expected {batch}×{} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let next = layer_forward(layer, acts.last().unwrap(), batch);
            acts.push(next);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, ForwardCache { batch, acts }))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict_batch(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::invalid(format!(
                "expected {batch}×{} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut cur = layer_forward(&self.layers[0], input, batch);
        for layer in &self.layers[1..] {
            cur = layer_forward(layer, &cur, batch);
        }
        Ok(cur)
    }

    /// Reverse pass: adds parameter gradients into `grads` and returns the
    /// gradient with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64], grads: &mut DenseNet) -> Result<Vec<f64>> {
        self.backward_impl(cache, output_grad, Some(grads), true)
    }

    /// Like [`DenseNet::backward`] but skips the input gradient.
    pub fn backward_params(&self, cache: &ForwardCache, output_grad: &[f64], grads: &mut DenseNet) -> Result<()> {
        self.backward_impl(cache, output_grad, Some(grads), false).map(|_| ())
    }

    /// Gradient with respect to the input batch only; parameters are treated
    /// as constants.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.backward_impl(cache, output_grad, None, true)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        mut grads: Option<&mut DenseNet>,
        input_grad: bool,
    ) -> Result<Vec<f64>> {
        let batch = cache.batch;
        if cache.acts.len() != self.layers.len() + 1 || output_grad.len() != batch * self.output_dim() {
            return Err(Error::invalid("backward pass does not match the cached forward pass"));
        }
        if grads.as_ref().is_some_and(|g| g.layers.len() != self.layers.len()) {
            return Err(Error::invalid("gradient accumulator has a different layer count"));
        }
        let mut delta = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.acts[l + 1];
            let inp = &cache.acts[l];
            layer.activation.backprop_in_place(out, &mut delta);
            if let Some(grads) = grads.as_deref_mut() {
                let g = &mut grads.layers[l];
                if g.n_in != layer.n_in || g.n_out != layer.n_out {
                    return Err(Error::invalid(format!(
                        "gradient accumulator layer {l} has the wrong shape"
                    )));
                }
                // dW += δᵀ · X
                gemm(
                    layer.n_out,
                    batch,
                    layer.n_in,
                    &delta,
                    1,
                    layer.n_out,
                    inp,
                    layer.n_in,
                    1,
                    &mut g.weights,
                    layer.n_in,
                    1.0,
                );
                for row in delta.chunks_exact(layer.n_out) {
                    g.bias.iter_mut().zip(row).for_each(|(b, d)| *b += d);
                }
            }
            if l == 0 && !input_grad {
                return Ok(Vec::new());
            }
            // dX = δ · W
            let mut prev = vec![0.0; batch * layer.n_in];
            gemm(
                batch,
                layer.n_out,
                layer.n_in,
                &delta,
                layer.n_out,
                1,
                &layer.weights,
                layer.n_in,
                1,
                &mut prev,
                layer.n_in,
                0.0,
            );
            delta = prev;
        }
        Ok(delta)
    }
}

fn layer_forward(layer: &Dense, input: &[f64], batch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * layer.n_out);
    for _ in 0..batch {
        out.extend_from_slice(&layer.bias);
    }
    // Y += X · Wᵀ
    gemm(
        batch,
        layer.n_in,
        layer.n_out,
        input,
        layer.n_in,
        1,
        &layer.weights,
        1,
        layer.n_in,
        &mut out,
        layer.n_out,
        1.0,
    );
    layer.activation.apply_in_place(&mut out);
    out
}

impl Parameters for DenseNet {
    fn for_each_param(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            f(&l.weights);
            f(&l.bias);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            f(&mut l.weights);
            f(&mut l.bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, Parameters};

    #[test]
    fn zero_weights_emit_activated_bias() {
        let mut rng = Rng::new(0);
        let mut net = DenseNet::new(&[3, 2], &[Activation::Tanh], &mut rng).unwrap();
        net.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        net.layers[0].bias = vec![0.5, -2.0];
        let (y, _) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5f64.tanh(), (-2.0f64).tanh()]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense {
            n_in: 3,
            n_out: 3,
            activation: Activation::Identity,
            weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            bias: vec![0.0; 3],
        };
        let net = DenseNet::from_layers(vec![layer]).unwrap();
        assert_eq!(net.forward(&[4.0, -1.0, 2.5]).unwrap().0, vec![4.0, -1.0, 2.5]);
    }

    #[test]
    fn hand_evaluated_tanh_net() {
        // 1-2-1: h = tanh([0.5x + 0.1, -0.3x + 0.2]); y = 1.5 h₀ - 0.7 h₁ + 0.05
        let net = DenseNet::from_layers(vec![
            Dense {
                n_in: 1,
                n_out: 2,
                activation: Activation::Tanh,
                weights: vec![0.5, -0.3],
                bias: vec![0.1, 0.2],
            },
            Dense {
                n_in: 2,
                n_out: 1,
                activation: Activation::Identity,
                weights: vec![1.5, -0.7],
                bias: vec![0.05],
            },
        ])
        .unwrap();
        let x = 0.8;
        let expect = 1.5 * (0.5 * x + 0.1f64).tanh() - 0.7 * (-0.3 * x + 0.2f64).tanh() + 0.05;
        let (y, _) = net.forward(&[x]).unwrap();
        assert!((y[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn linear_layer_gradients_by_hand() {
        let net = DenseNet::from_layers(vec![Dense {
            n_in: 2,
            n_out: 1,
            activation: Activation::Identity,
            weights: vec![0.3, -0.2],
            bias: vec![0.1],
        }])
        .unwrap();
        let x = [1.5, -4.0];
        let (_, cache) = net.forward(&x).unwrap();
        let mut g = net.zeros_like();
        let dx = net.backward(&cache, &[1.0], &mut g).unwrap();
        assert_eq!(g.layers[0].weights, x.to_vec());
        assert_eq!(g.layers[0].bias, vec![1.0]);
        assert_eq!(dx, vec![0.3, -0.2]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let mut rng = Rng::new(4);
        let net = DenseNet::mlp(4, &[8, 8], 2, Activation::Relu, Activation::Identity, &mut rng);
        let (_, cache) = net.forward_batch(&[0.3; 12], 3).unwrap();
        let mut g = net.zeros_like();
        net.backward(&cache, &[0.0; 6], &mut g).unwrap();
        assert!(flatten(&g).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_matches_single_samples() {
        let mut rng = Rng::new(5);
        let net = DenseNet::mlp(5, &[7], 3, Activation::Tanh, Activation::Identity, &mut rng);
        let input: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let batched = net.predict_batch(&input, 4).unwrap();
        for (row, x) in input.chunks(5).enumerate() {
            let (y, _) = net.forward(x).unwrap();
            assert_eq!(&batched[row * 3..row * 3 + 3], y.as_slice());
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = Rng::new(6);
        let net = DenseNet::mlp(3, &[4], 1, Activation::Relu, Activation::Identity, &mut rng);
        assert!(matches!(net.forward(&[1.0; 2]), Err(Error::InvalidArgument(_))));
        let (_, cache) = net.forward(&[1.0; 3]).unwrap();
        let mut g = net.zeros_like();
        assert!(net.backward(&cache, &[1.0, 1.0], &mut g).is_err());
        assert!(DenseNet::new(&[3, 4], &[], &mut rng).is_err());
        let bad = vec![
            Dense::zeros(3, 4, Activation::Relu),
            Dense::zeros(5, 1, Activation::Identity),
        ];
        assert!(DenseNet::from_layers(bad).is_err());
    }

    #[test]
    fn parameter_count_and_init_bounds() {
        let mut rng = Rng::new(7);
        let net = DenseNet::mlp(10, &[6, 4], 2, Activation::Relu, Activation::Identity, &mut rng);
        assert_eq!(net.param_count(), 10 * 6 + 6 + 6 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(net.layer_dims(), vec![10, 6, 4, 2]);
        for l in net.layers() {
            let bound = 1.0 / (l.n_in as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn constant_record_emits_its_values() {
        let rec = DenseNet::constant(&[1.25, -3.0]);
        assert_eq!(rec.forward_batch(&[], 1).unwrap().0, vec![1.25, -3.0]);
    }
}
