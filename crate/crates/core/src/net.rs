//! Dense ReLU networks with exact backpropagation and momentum SGD.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// `input → hidden… → output` with ReLU hidden layers and identity output.
pub fn mlp_specs(input: usize, hidden: &[usize], output: usize) -> Vec<LayerSpec> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::InvalidConfig(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].output_dim != w[1].input_dim {
            return Err(Error::InvalidConfig(format!(
                "layer {i} outputs {} but layer {} expects {}",
                w[0].output_dim,
                i + 1,
                w[1].input_dim
            )));
        }
    }
    if let Some(last) = specs.last() {
        if last.activation != Activation::Identity {
            return Err(Error::InvalidConfig(
                "final layer must use the identity activation".into(),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// output_dim × input_dim
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre_activations: Vec<Array2<f64>>,
}

/// Gradients shaped like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            weights: mlp.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: mlp.layers.iter().map(|l| Array1::zeros(l.biases.raw_dim())).collect(),
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

/// Velocity buffers for momentum SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub velocity: Gradients,
}

impl MomentumState {
    pub fn new(mlp: &Mlp) -> Self {
        MomentumState {
            velocity: Gradients::zeros_like(mlp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 100,
        }
    }
}

/// Fan-in scaled uniform initialization, U(−√(6/fan_in), √(6/fan_in)), zero
/// biases. Weights are drawn layer by layer in row-major order.
pub fn init_mlp(specs: &[LayerSpec], seed: u64) -> Result<Mlp> {
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|s| {
            let bound = (6.0 / s.input_dim as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((s.output_dim, s.input_dim), || {
                rng.gen_range(-bound..bound)
            });
            Dense {
                weights,
                biases: Array1::zeros(s.output_dim),
                activation: s.activation,
            }
        })
        .collect();
    Ok(Mlp { layers })
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Mlp> {
        validate_specs(specs)?;
        Ok(Mlp {
            layers: specs
                .iter()
                .map(|s| Dense {
                    weights: Array2::zeros((s.output_dim, s.input_dim)),
                    biases: Array1::zeros(s.output_dim),
                    activation: s.activation,
                })
                .collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Mlp> {
        let mlp = Mlp { layers };
        validate_specs(&mlp.specs())?;
        for (i, l) in mlp.layers.iter().enumerate() {
            if l.biases.len() != l.weights.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: {} biases for {} outputs",
                    l.biases.len(),
                    l.weights.nrows()
                )));
            }
        }
        mlp.check_finite()?;
        Ok(mlp)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.weights.ncols(), l.weights.nrows(), l.activation))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.ncols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.specs())
    }

    /// Every parameter, layer by layer: weights row-major then biases.
    pub fn iter_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    /// Mutable access to parameter `index` in [`Mlp::iter_params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let nw = l.weights.len();
            if index < nw {
                let cols = l.weights.ncols();
                return l.weights.get_mut((index / cols, index % cols));
            }
            index -= nw;
            let nb = l.biases.len();
            if index < nb {
                return l.biases.get_mut(index);
            }
            index -= nb;
        }
        None
    }

    fn check_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.iter().chain(l.biases.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {i}")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} features, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = batch.as_standard_layout().into_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.biases;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("activations of layer {i}")));
            }
            let out = match layer.activation {
                Activation::Relu => z.mapv(|v| v.max(0.0)),
                Activation::Identity => z.clone(),
            };
            inputs.push(current);
            pre_activations.push(z);
            current = out;
        }
        Ok((
            current,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without retaining the cache.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(batch).map(|(out, _)| out)
    }

    /// Parameter gradients of a scalar loss given its gradient with respect to
    /// the output logits of the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, d_logits: ArrayView2<f64>) -> Result<Gradients> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("cache does not match network depth".into()));
        }
        let n = cache.inputs.first().map_or(0, |x| x.nrows());
        if d_logits.dim() != (n, self.output_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "logit gradient is {:?}, expected {:?}",
                d_logits.dim(),
                (n, self.output_dim())
            )));
        }
        let depth = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); depth];
        let mut biases = vec![Array1::zeros(0); depth];
        let mut delta = d_logits.to_owned();
        for i in (0..depth).rev() {
            let layer = &self.layers[i];
            if layer.activation == Activation::Relu {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre_activations[i])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            weights[i] = delta.t().dot(&cache.inputs[i]);
            biases[i] = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&layer.weights);
            }
        }
        Ok(Gradients { weights, biases })
    }
}

pub fn param_count(specs: &[LayerSpec]) -> usize {
    specs
        .iter()
        .map(|s| s.input_dim * s.output_dim + s.output_dim)
        .sum()
}

/// Classical momentum with L2 weight decay on weights only:
/// v ← μv + g + wd·θ, θ ← θ − lr·v.
pub fn sgd_step(
    mlp: &mut Mlp,
    grads: &Gradients,
    state: &mut MomentumState,
    config: &SgdConfig,
) -> Result<()> {
    let depth = mlp.layers.len();
    if grads.weights.len() != depth || state.velocity.weights.len() != depth {
        return Err(Error::ShapeMismatch("gradient depth differs from network".into()));
    }
    let lr = config.learning_rate;
    let mu = config.momentum;
    let wd = config.weight_decay;
    for i in 0..depth {
        let layer = &mut mlp.layers[i];
        let (gw, gb) = (&grads.weights[i], &grads.biases[i]);
        let (vw, vb) = (&mut state.velocity.weights[i], &mut state.velocity.biases[i]);
        if gw.dim() != layer.weights.dim() || vw.dim() != layer.weights.dim() {
            return Err(Error::ShapeMismatch(format!("weight gradient of layer {i}")));
        }
        if gb.len() != layer.biases.len() || vb.len() != layer.biases.len() {
            return Err(Error::ShapeMismatch(format!("bias gradient of layer {i}")));
        }
        ndarray::Zip::from(&mut layer.weights)
            .and(vw)
            .and(gw)
            .for_each(|theta, v, &g| {
                *v = mu * *v + g + wd * *theta;
                *theta -= lr * *v;
            });
        ndarray::Zip::from(&mut layer.biases)
            .and(vb)
            .and(gb)
            .for_each(|theta, v, &g| {
                *v = mu * *v + g;
                *theta -= lr * *v;
            });
    }
    mlp.check_finite()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub spec: LayerSpec,
    /// Row-major, output_dim × input_dim.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// JSON checkpoint of a network and, optionally, its optimizer velocity.
/// Floats are written in shortest round-trip form so a reload is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub seed: Option<u64>,
    pub init: String,
    pub layers: Vec<LayerCheckpoint>,
    pub velocity: Option<Vec<LayerCheckpoint>>,
}

pub const INIT_SCHEME: &str = "uniform(+-sqrt(6/fan_in)), zero biases";

fn layer_checkpoints(layers: &[(LayerSpec, &Array2<f64>, &Array1<f64>)]) -> Vec<LayerCheckpoint> {
    layers
        .iter()
        .map(|(spec, w, b)| LayerCheckpoint {
            spec: *spec,
            weights: w.iter().copied().collect(),
            biases: b.to_vec(),
        })
        .collect()
}

fn restore_layer(c: &LayerCheckpoint) -> Result<Dense> {
    let weights = Array2::from_shape_vec((c.spec.output_dim, c.spec.input_dim), c.weights.clone())
        .map_err(|e| Error::ShapeMismatch(format!("checkpoint weights: {e}")))?;
    if c.biases.len() != c.spec.output_dim {
        return Err(Error::ShapeMismatch("checkpoint biases".into()));
    }
    Ok(Dense {
        weights,
        biases: Array1::from(c.biases.clone()),
        activation: c.spec.activation,
    })
}

impl MlpCheckpoint {
    pub fn capture(mlp: &Mlp, seed: Option<u64>, state: Option<&MomentumState>) -> Self {
        let specs = mlp.specs();
        let params: Vec<_> = mlp
            .layers
            .iter()
            .zip(&specs)
            .map(|(l, s)| (*s, &l.weights, &l.biases))
            .collect();
        let velocity = state.map(|st| {
            let v: Vec<_> = st
                .velocity
                .weights
                .iter()
                .zip(&st.velocity.biases)
                .zip(&specs)
                .map(|((w, b), s)| (*s, w, b))
                .collect();
            layer_checkpoints(&v)
        });
        MlpCheckpoint {
            seed,
            init: INIT_SCHEME.to_string(),
            layers: layer_checkpoints(&params),
            velocity,
        }
    }

    pub fn restore(&self) -> Result<(Mlp, Option<MomentumState>)> {
        let layers = self.layers.iter().map(restore_layer).collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::from_layers(layers)?;
        let state = match &self.velocity {
            Some(v) => {
                let dense = v.iter().map(restore_layer).collect::<Result<Vec<_>>>()?;
                Some(MomentumState {
                    velocity: Gradients {
                        weights: dense.iter().map(|d| d.weights.clone()).collect(),
                        biases: dense.into_iter().map(|d| d.biases).collect(),
                    },
                })
            }
            None => None,
        };
        Ok((mlp, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn same_seed_same_parameters() {
        let specs = mlp_specs(5, &[7, 3], 2);
        let a = init_mlp(&specs, 42).unwrap();
        let b = init_mlp(&specs, 42).unwrap();
        let c = init_mlp(&specs, 43).unwrap();
        assert!(a.iter_params().zip(b.iter_params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, c);
        let bound = (6.0f64 / 5.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() < bound));
        assert!(a.layers()[0].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn budget_parameter_counts() {
        assert_eq!(param_count(&mlp_specs(784, &[1024], 10)), 814_090);
        assert_eq!(param_count(&mlp_specs(784, &[4], 10)), 3_190);
        assert_eq!(256 * param_count(&mlp_specs(784, &[4], 10)), 816_640);
        assert_eq!(param_count(&mlp_specs(784, &[64], 10)), 50_890);
        assert_eq!(16 * param_count(&mlp_specs(784, &[64], 10)), 814_240);
        assert_eq!(param_count(&[]), 0);
        for (m, h) in [(1, 1024), (16, 64), (64, 16), (256, 4)] {
            let total = m * param_count(&mlp_specs(784, &[h], 10));
            let rel = (total as f64 - 815_000.0).abs() / 815_000.0;
            assert!(rel < 0.005, "{m}x{h}H: {total}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(init_mlp(
            &[
                LayerSpec::new(3, 4, Activation::Relu),
                LayerSpec::new(5, 2, Activation::Identity)
            ],
            0
        )
        .is_err());
        assert!(init_mlp(&[LayerSpec::new(3, 2, Activation::Relu)], 0).is_err());
        assert!(init_mlp(&[LayerSpec::new(0, 2, Activation::Identity)], 0).is_err());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let mlp = Mlp::zeros(&mlp_specs(3, &[4], 2)).unwrap();
        let out = mlp.predict(array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = Mlp::from_layers(vec![Dense {
            weights: Array2::eye(3),
            biases: Array1::zeros(3),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = array![[1.5, -2.0, 0.25]];
        assert_eq!(mlp.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn forward_rejects_wrong_width_and_non_finite() {
        let mut mlp = init_mlp(&mlp_specs(3, &[4], 2), 1).unwrap();
        assert!(mlp.predict(Array2::zeros((2, 4)).view()).is_err());
        mlp.layers_mut()[0].weights[[0, 0]] = f64::INFINITY;
        let err = mlp.predict(Array2::ones((1, 3)).view()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref s) if s.contains("layer 0")));
    }

    #[test]
    fn zero_logit_gradient_gives_zero_gradients() {
        let mlp = init_mlp(&mlp_specs(3, &[4, 5], 2), 7).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (_, cache) = mlp.forward(x.view()).unwrap();
        let g = mlp.backward(&cache, Array2::zeros((6, 2)).view()).unwrap();
        assert!(g.iter_values().all(|v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_logit_gradient() {
        let mlp = init_mlp(&mlp_specs(3, &[4], 2), 7).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let d = Array2::from_shape_fn((5, 2), |(i, j)| ((i + 2 * j) as f64).cos());
        let (_, cache) = mlp.forward(x.view()).unwrap();
        let g1 = mlp.backward(&cache, d.view()).unwrap();
        let g2 = mlp.backward(&cache, (&d * 2.0).view()).unwrap();
        for (a, b) in g1.iter_values().zip(g2.iter_values()) {
            assert_eq!(2.0 * a, b);
        }
        assert!(mlp.backward(&cache, Array2::zeros((4, 2)).view()).is_err());
    }

    #[test]
    fn plain_sgd_step() {
        let mut mlp = init_mlp(&mlp_specs(2, &[3], 2), 3).unwrap();
        let before = mlp.clone();
        let mut grads = Gradients::zeros_like(&mlp);
        grads.weights[0].fill(0.5);
        grads.biases[1].fill(-1.0);
        let mut state = MomentumState::new(&mlp);
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 1,
        };
        sgd_step(&mut mlp, &grads, &mut state, &cfg).unwrap();
        for (a, b) in mlp.layers()[0].weights.iter().zip(before.layers()[0].weights.iter()) {
            assert_eq!(*a, b - 0.1 * 0.5);
        }
        for (a, b) in mlp.layers()[1].biases.iter().zip(before.layers()[1].biases.iter()) {
            assert_eq!(*a, b + 0.1);
        }
        assert_eq!(mlp.layers()[1].weights, before.layers()[1].weights);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut mlp = init_mlp(&mlp_specs(2, &[3], 2), 3).unwrap();
        let before = mlp.clone();
        let mut state = MomentumState::new(&mlp);
        let grads = Gradients::zeros_like(&mlp);
        sgd_step(&mut mlp, &grads, &mut state, &SgdConfig { weight_decay: 0.0, ..Default::default() })
            .unwrap();
        assert_eq!(mlp, before);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        let mut mlp = Mlp::from_layers(vec![Dense {
            weights: array![[1.0]],
            biases: array![0.5],
            activation: Activation::Identity,
        }])
        .unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
            batch_size: 1,
        };
        let mut state = MomentumState::new(&mlp);
        let g = |w: f64, b: f64| Gradients {
            weights: vec![array![[w]]],
            biases: vec![array![b]],
        };
        sgd_step(&mut mlp, &g(0.2, -0.3), &mut state, &cfg).unwrap();
        sgd_step(&mut mlp, &g(0.4, 0.1), &mut state, &cfg).unwrap();

        // hand-unrolled
        let (mut w, mut b, mut vw, mut vb) = (1.0f64, 0.5f64, 0.0f64, 0.0f64);
        vw = 0.9 * vw + 0.2 + 0.01 * w;
        w -= 0.1 * vw;
        vb = 0.9 * vb - 0.3;
        b -= 0.1 * vb;
        vw = 0.9 * vw + 0.4 + 0.01 * w;
        w -= 0.1 * vw;
        vb = 0.9 * vb + 0.1;
        b -= 0.1 * vb;
        assert!((mlp.layers()[0].weights[[0, 0]] - w).abs() < 1e-14);
        assert!((mlp.layers()[0].biases[0] - b).abs() < 1e-14);
    }

    #[test]
    fn non_finite_update_is_an_error() {
        let mut mlp = init_mlp(&mlp_specs(2, &[2], 2), 0).unwrap();
        let mut grads = Gradients::zeros_like(&mlp);
        grads.weights[0][[0, 0]] = f64::NAN;
        let mut state = MomentumState::new(&mlp);
        assert!(matches!(
            sgd_step(&mut mlp, &grads, &mut state, &SgdConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sgd_config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        assert!(SgdConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { weight_decay: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn checkpoint_reload_is_bit_exact() {
        let mut mlp = init_mlp(&mlp_specs(4, &[6], 3), 9).unwrap();
        let mut state = MomentumState::new(&mlp);
        let mut g = Gradients::zeros_like(&mlp);
        g.weights[0].mapv_inplace(|_| 1.0 / 3.0);
        sgd_step(&mut mlp, &g, &mut state, &SgdConfig::default()).unwrap();
        let ckpt = MlpCheckpoint::capture(&mlp, Some(9), Some(&state));
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: MlpCheckpoint = serde_json::from_str(&text).unwrap();
        let (mlp2, state2) = back.restore().unwrap();
        assert!(mlp.iter_params().zip(mlp2.iter_params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(state2.unwrap(), state);
    }
}
