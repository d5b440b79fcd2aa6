//! Trainable student velocity field `v_θ(x, t)`.
//!
//! A dense SiLU network over `[x, t, sin(2πkt), cos(2πkt) for k = 1..K]`
//! with a linear output layer of the same width as `x`. Gradients are
//! accumulated explicitly so batches can be assembled sample by sample.

mod checkpoint;

pub use checkpoint::{from_json, load_checkpoint, save_checkpoint, to_json, CHECKPOINT_VERSION};

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::rng::{tags, Stream};
use crate::{Error, Result, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

pub const DEFAULT_TIME_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub time_features: usize,
    pub activation: Activation,
}

impl FieldArchitecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, time_features: usize) -> Result<Self> {
        let arch = FieldArchitecture {
            input_dim,
            hidden_dims,
            time_features,
            activation: Activation::Silu,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("at least one hidden layer is required".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.time_features == 0 {
            return Err(Error::Config("time_features must be positive".into()));
        }
        Ok(())
    }

    /// Width of the network input: data, raw time, then sin/cos pairs.
    pub fn feature_dim(&self) -> usize {
        self.input_dim + 1 + 2 * self.time_features
    }

    /// `(out, in)` for every dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.feature_dim();
        for &h in &self.hidden_dims {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes.push((self.input_dim, fan_in));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Dense layer `y = W a + b`; `w` is row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseLayer {
            out_dim,
            in_dim,
            w: vec![0.0; out_dim * in_dim],
            b: vec![0.0; out_dim],
        }
    }

    fn affine(&self, a: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.in_dim)
            .zip(&self.b)
            .map(|(row, b)| b + row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(&self.b)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Network weights with gradient and Adam moment buffers of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    arch: FieldArchitecture,
    layers: Vec<DenseLayer>,
    grads: Vec<DenseLayer>,
    first_moment: Vec<DenseLayer>,
    second_moment: Vec<DenseLayer>,
    adam_steps: u64,
}

/// Per-layer pre-activations and outputs from one forward pass.
struct Trace {
    /// `inputs[l]` is the input of layer `l`; `inputs[0]` is the feature vector.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

pub fn time_features(t: f64, count: usize) -> impl Iterator<Item = f64> {
    std::iter::once(t).chain((1..=count).flat_map(move |k| {
        let w = TAU * k as f64 * t;
        [w.sin(), w.cos()]
    }))
}

impl FieldParams {
    /// Hidden layers get uniform fan-in-scaled weights from the seeded stream;
    /// the output layer starts at zero so the untrained field is the zero field.
    pub fn init(arch: FieldArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Stream::new(seed, tags::INIT);
        let shapes = arch.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(l, &(o, i))| {
                let mut layer = DenseLayer::zeros(o, i);
                if l != last {
                    let bound = (6.0 / i as f64).sqrt();
                    for w in &mut layer.w {
                        *w = bound * (2.0 * rng.uniform() - 1.0);
                    }
                }
                layer
            })
            .collect();
        Self::from_layers(arch, layers)
    }

    /// Wrap existing weights; shapes and finiteness are checked.
    pub fn from_layers(arch: FieldArchitecture, layers: Vec<DenseLayer>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "architecture has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (l, (layer, &(o, i))) in layers.iter().zip(&shapes).enumerate() {
            if layer.out_dim != o || layer.in_dim != i || layer.w.len() != o * i || layer.b.len() != o {
                return Err(Error::Shape(format!(
                    "layer {l}: expected {o}x{i} weights and {o} biases, got {}x{} ({} weights, {} biases)",
                    layer.out_dim,
                    layer.in_dim,
                    layer.w.len(),
                    layer.b.len()
                )));
            }
            if layer.values().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {l} holds a non-finite parameter")));
            }
        }
        let zeros: Vec<DenseLayer> = shapes.iter().map(|&(o, i)| DenseLayer::zeros(o, i)).collect();
        Ok(FieldParams {
            arch,
            layers,
            grads: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            adam_steps: 0,
        })
    }

    pub fn architecture(&self) -> &FieldArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn gradients(&self) -> &[DenseLayer] {
        &self.grads
    }

    pub fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    /// Flat view over all parameters (weights then biases, layer by layer).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    /// Flat view over the gradient buffer, ordered as [`FieldParams::parameters`].
    pub fn gradient_vector(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn parameter_mut(&mut self, index: usize) -> Option<&mut f64> {
        self.layers.iter_mut().flat_map(|l| l.values_mut()).nth(index)
    }

    fn features(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "field input_dim is {}, got a vector of {}",
                self.arch.input_dim,
                x.len()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                expected: "[0, 1]",
            });
        }
        let mut f = Vec::with_capacity(self.arch.feature_dim());
        f.extend_from_slice(x);
        f.extend(time_features(t, self.arch.time_features));
        Ok(f)
    }

    fn trace(&self, x: &[f64], t: f64) -> Result<Trace> {
        let act = self.arch.activation;
        let mut inputs = vec![self.features(x, t)?];
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        for layer in hidden {
            let z = layer.affine(inputs.last().expect("non-empty"));
            inputs.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        let output = last[0].affine(inputs.last().expect("non-empty"));
        if let Some(i) = output.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("field output {i} is {} at t = {t}", output[i])));
        }
        Ok(Trace { inputs, pre, output })
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.trace(x, t).map(|tr| tr.output)
    }

    /// Accumulate `∂‖v_θ(x, t) − target‖² / ∂θ` into the gradient buffer and
    /// return the squared error.
    pub fn backward(&mut self, x: &[f64], t: f64, target: &[f64]) -> Result<f64> {
        self.backward_scaled(x, t, target, 1.0)
    }

    /// As [`FieldParams::backward`], with the accumulated gradient multiplied by `weight`.
    pub fn backward_scaled(&mut self, x: &[f64], t: f64, target: &[f64], weight: f64) -> Result<f64> {
        if target.len() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "target has {} entries, field output has {}",
                target.len(),
                self.arch.input_dim
            )));
        }
        let tr = self.trace(x, t)?;
        let loss: f64 = tr.output.iter().zip(target).map(|(o, y)| (o - y) * (o - y)).sum();
        let mut delta: Vec<f64> = tr
            .output
            .iter()
            .zip(target)
            .map(|(o, y)| 2.0 * weight * (o - y))
            .collect();

        let act = self.arch.activation;
        for l in (0..self.layers.len()).rev() {
            if delta.iter().any(|d| !d.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in layer {l}")));
            }
            let input = &tr.inputs[l];
            let layer = &self.layers[l];
            let grad = &mut self.grads[l];
            for (o, &d) in delta.iter().enumerate() {
                grad.b[o] += d;
                let row = &mut grad.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&tr.pre[l - 1]) {
                    *p *= act.derivative(*z);
                }
                delta = prev;
            }
        }
        Ok(loss)
    }

    pub fn zero_gradients(&mut self) {
        for g in &mut self.grads {
            g.values_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale_gradients(&mut self, k: f64) {
        for g in &mut self.grads {
            g.values_mut().for_each(|v| *v *= k);
        }
    }

    /// Bias-corrected Adam update from the accumulated gradient, which is then cleared.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.adam_steps += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.adam_steps as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.adam_steps as i32);
        for l in 0..self.layers.len() {
            let params = self.layers[l].values_mut();
            let grads = self.grads[l].values_mut();
            let m = self.first_moment[l].values_mut();
            let v = self.second_moment[l].values_mut();
            for (((p, g), m), v) in params.zip(grads).zip(m).zip(v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                *g = 0.0;
            }
        }
    }
}

impl VelocityField for FieldParams {
    fn dim(&self) -> Option<usize> {
        Some(self.arch.input_dim)
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.forward(x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomized(arch: FieldArchitecture, seed: u64) -> FieldParams {
        let mut p = FieldParams::init(arch, seed).unwrap();
        let mut rng = Stream::new(seed, 99);
        for layer in p.layers_mut() {
            for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *v = 0.8 * rng.normal();
            }
        }
        p
    }

    #[test]
    fn architecture_rules() {
        assert!(FieldArchitecture::new(2, vec![], 4).is_err());
        assert!(FieldArchitecture::new(0, vec![8], 4).is_err());
        assert!(FieldArchitecture::new(2, vec![8, 0], 4).is_err());
        let a = FieldArchitecture::new(2, vec![8, 8], 4).unwrap();
        assert_eq!(a.feature_dim(), 11);
        assert_eq!(a.layer_shapes(), vec![(8, 11), (8, 8), (2, 8)]);
        assert_eq!(a.parameter_count(), 8 * 11 + 8 + 8 * 8 + 8 + 2 * 8 + 2);
    }

    #[test]
    fn untrained_field_is_zero() {
        let p = FieldParams::init(FieldArchitecture::new(3, vec![16], 4).unwrap(), 1).unwrap();
        assert_eq!(p.forward(&[0.2, -5.0, 9.0], 0.3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn forward_is_deterministic() {
        let arch = FieldArchitecture::new(2, vec![8, 8], 3).unwrap();
        let a = randomized(arch.clone(), 5).forward(&[0.1, 0.2], 0.7).unwrap();
        let b = randomized(arch, 5).forward(&[0.1, 0.2], 0.7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_shape_and_time_checks() {
        let p = FieldParams::init(FieldArchitecture::new(2, vec![4], 1).unwrap(), 1).unwrap();
        assert!(matches!(p.forward(&[1.0], 0.5), Err(Error::Shape(_))));
        assert!(matches!(p.forward(&[1.0, 2.0], 1.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let mut p = randomized(FieldArchitecture::new(2, vec![5], 2).unwrap(), 3);
        let x = [0.4, -0.3];
        let out = p.forward(&x, 0.25).unwrap();
        assert_eq!(p.backward(&x, 0.25, &out).unwrap(), 0.0);
        assert!(p.gradient_vector().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = FieldArchitecture::new(1, vec![2], 1).unwrap();
        let mut p = randomized(arch, 17);
        let (x, t, target) = ([0.7], 0.3, [0.25]);
        p.backward(&x, t, &target).unwrap();
        let analytic = p.gradient_vector();
        let delta = 1e-5;
        for i in 0..p.parameter_count() {
            let base = *p.parameter_mut(i).unwrap();
            *p.parameter_mut(i).unwrap() = base + delta;
            let up = sq_err(&p, &x, t, &target);
            *p.parameter_mut(i).unwrap() = base - delta;
            let down = sq_err(&p, &x, t, &target);
            *p.parameter_mut(i).unwrap() = base;
            let fd = (up - down) / (2.0 * delta);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
        }
    }

    fn sq_err(p: &FieldParams, x: &[f64], t: f64, target: &[f64]) -> f64 {
        p.forward(x, t)
            .unwrap()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    #[test]
    fn gradients_accumulate_linearly() {
        let arch = FieldArchitecture::new(2, vec![6, 4], 2).unwrap();
        let base = randomized(arch, 23);
        let samples = [([0.1, 0.9], 0.2, [1.0, -1.0]), ([-0.5, 0.3], 0.8, [0.0, 2.0])];

        let mut joint = base.clone();
        for (x, t, y) in &samples {
            joint.backward(x, *t, y).unwrap();
        }
        let mut sum = vec![0.0; base.parameter_count()];
        for (x, t, y) in &samples {
            let mut single = base.clone();
            single.backward(x, *t, y).unwrap();
            for (s, g) in sum.iter_mut().zip(single.gradient_vector()) {
                *s += g;
            }
        }
        for (a, b) in joint.gradient_vector().iter().zip(&sum) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = randomized(FieldArchitecture::new(2, vec![4], 1).unwrap(), 2);
        let before = p.parameters();
        p.adam_step(&AdamConfig::default());
        assert_eq!(p.parameters(), before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = FieldParams::init(FieldArchitecture::new(1, vec![1], 1).unwrap(), 2).unwrap();
        let n = p.parameter_count();
        let before = p.parameters();
        for layer in &mut p.grads {
            layer.values_mut().for_each(|g| *g = 1.0);
        }
        let cfg = AdamConfig::default();
        p.adam_step(&cfg);
        let after = p.parameters();
        for i in 0..n {
            assert!((before[i] - after[i] - cfg.lr).abs() < 1e-10);
        }
        assert!(p.gradient_vector().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_weights_are_rejected() {
        let arch = FieldArchitecture::new(1, vec![2], 1).unwrap();
        let mut layers: Vec<DenseLayer> = arch
            .layer_shapes()
            .iter()
            .map(|&(o, i)| DenseLayer::zeros(o, i))
            .collect();
        layers[0].w[1] = f64::NAN;
        assert!(matches!(
            FieldParams::from_layers(arch.clone(), layers),
            Err(Error::Numeric(_))
        ));
        let wrong = vec![DenseLayer::zeros(2, 4)];
        assert!(matches!(FieldParams::from_layers(arch, wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn overflowing_gradient_names_the_layer() {
        let arch = FieldArchitecture::new(1, vec![2], 1).unwrap();
        let mut p = randomized(arch, 4);
        p.layers_mut()[1].w.iter_mut().for_each(|w| *w = 1e300);
        p.layers_mut()[1].b.iter_mut().for_each(|b| *b = 1e300);
        let err = p.backward(&[1.0], 0.5, &[-1.2e308]).unwrap_err();
        assert!(err.to_string().contains("layer"), "{err}");
    }
}
