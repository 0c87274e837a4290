//! Minimal differentiable MLP machinery: forward pass, exact
//! backpropagation, Adam, and soft target updates. Just enough for a small
//! actor-critic pair; no convolutions, no GPU, f64 throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    /// self * x for a column vector x.
    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
        }
    }

    /// self^T * x.
    fn matvec_t(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (r, xr) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * xr;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    /// Squashes each component into (-1, 1); used by the actor.
    Tanh,
    /// Linear output; used by the critic.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Fully connected network with ReLU hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub output_activation: OutputActivation,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
pub struct ForwardCache {
    /// Input to each layer (activations of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Per-parameter gradients (or any quantity shaped like the parameters:
/// Adam moments reuse this).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Matrix::zeros(l.weights.rows, l.weights.cols),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, factor: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data.iter_mut().zip(&b.weights.data) {
                *x += factor * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += factor * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.data.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }
}

impl Mlp {
    /// Builds a network with the given layer sizes, e.g. `[7, 64, 64, 2]`.
    /// Weights use uniform fan-in initialisation; the final layer starts
    /// near zero so early outputs are small.
    pub fn new(dims: &[usize], output_activation: OutputActivation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "network needs at least one layer");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(idx, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound =
                    if idx == last { 3e-3 } else { 1.0 / (fan_in as f64).sqrt() };
                let mut weights = Matrix::zeros(fan_out, fan_in);
                for v in &mut weights.data {
                    *v = rng.random_range(-bound..=bound);
                }
                let bias = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
                Layer { weights, bias }
            })
            .collect();
        Mlp { layers, output_activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows
    }

    /// Plain forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    /// Forward pass retaining pre-activations for the backward pass.
    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input of length {} into a network expecting {}",
                input.len(),
                self.input_dim()
            )));
        }
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut x = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.weights.rows];
            layer.weights.matvec(&x, &mut z);
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            inputs.push(std::mem::take(&mut x));
            let last = idx == depth - 1;
            x = if last {
                match self.output_activation {
                    OutputActivation::Tanh => z.iter().map(|v| v.tanh()).collect(),
                    OutputActivation::Identity => z.clone(),
                }
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            pre.push(z);
        }
        Ok(ForwardCache { inputs, pre, output: x })
    }

    /// Exact gradients of `output . grad_output` with respect to every
    /// parameter and the input, given the cache of the matching forward
    /// call.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if grad_output.len() != self.output_dim() {
            return Err(Error::Dimension("grad_output length does not match network output".into()));
        }
        if cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.len() != l.weights.cols)
        {
            return Err(Error::Dimension("forward cache does not match this network".into()));
        }

        let mut grads = MlpGrads::zeros_like(self);
        let depth = self.layers.len();

        // Delta at the output layer.
        let mut delta: Vec<f64> = match self.output_activation {
            OutputActivation::Identity => grad_output.to_vec(),
            OutputActivation::Tanh => grad_output
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
        };

        for idx in (0..depth).rev() {
            let layer = &self.layers[idx];
            let grad_layer = &mut grads.layers[idx];
            let x = &cache.inputs[idx];
            for (r, d) in delta.iter().enumerate() {
                grad_layer.bias[r] = *d;
                let row = &mut grad_layer.weights.data[r * x.len()..(r + 1) * x.len()];
                for (w, xi) in row.iter_mut().zip(x) {
                    *w = d * xi;
                }
            }
            let mut grad_input = vec![0.0; x.len()];
            layer.weights.matvec_t(&delta, &mut grad_input);
            if idx > 0 {
                // Gate through the previous layer's ReLU.
                delta = grad_input
                    .iter()
                    .zip(&cache.pre[idx - 1])
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect();
            } else {
                return Ok((grads, grad_input));
            }
        }
        unreachable!("loop returns at idx == 0")
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.rows == b.weights.rows && a.weights.cols == b.weights.cols
            })
    }
}

/// target <- tau * online + (1 - tau) * target, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(0.0 < tau && tau <= 1.0) {
        return Err(Error::Config("tau must lie in (0, 1]".into()));
    }
    if !target.same_shape(online) {
        return Err(Error::Dimension("target and online networks differ in shape".into()));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        for (tv, ov) in t.weights.data.iter_mut().zip(&o.weights.data) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
        for (tv, ov) in t.bias.iter_mut().zip(&o.bias) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamParams { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam state; moments mirror the parameter shapes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub params: AdamParams,
    pub step: u64,
    m: MlpGrads,
    v: MlpGrads,
}

impl AdamState {
    pub fn new(mlp: &Mlp, params: AdamParams) -> Self {
        AdamState { params, step: 0, m: MlpGrads::zeros_like(mlp), v: MlpGrads::zeros_like(mlp) }
    }
}

/// One deterministic Adam update in place.
pub fn adam_step(mlp: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != mlp.layers.len() {
        return Err(Error::Dimension("gradient set does not match network".into()));
    }
    state.step += 1;
    let AdamParams { learning_rate, beta1, beta2, epsilon } = state.params;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);

    for (layer_idx, layer) in mlp.layers.iter_mut().enumerate() {
        let g = &grads.layers[layer_idx];
        let m = &mut state.m.layers[layer_idx];
        let v = &mut state.v.layers[layer_idx];
        if g.weights.data.len() != layer.weights.data.len() || g.bias.len() != layer.bias.len() {
            return Err(Error::Dimension("gradient set does not match network".into()));
        }

        let update = |param: &mut f64, grad: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * grad;
            *v = beta2 * *v + (1.0 - beta2) * grad * grad;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *param -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        };
        for i in 0..layer.weights.data.len() {
            update(&mut layer.weights.data[i], g.weights.data[i], &mut m.weights.data[i], &mut v.weights.data[i]);
        }
        for i in 0..layer.bias.len() {
            update(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let mut net = Mlp::new(&[3, 4, 2], OutputActivation::Identity, &mut rng(0));
        for layer in &mut net.layers {
            layer.weights.data.fill(0.0);
            layer.bias.fill(0.0);
        }
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::new(&[3, 3], OutputActivation::Identity, &mut rng(0));
        net.layers[0].weights.data.fill(0.0);
        for i in 0..3 {
            *net.layers[0].weights.get_mut(i, i) = 1.0;
        }
        net.layers[0].bias.fill(0.0);
        let x = [0.5, -1.5, 2.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn tanh_output_stays_in_the_open_unit_box() {
        let net = Mlp::new(&[4, 8, 8, 3], OutputActivation::Tanh, &mut rng(3));
        let mut r = rng(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-10.0..10.0)).collect();
            for y in net.forward(&x).unwrap() {
                assert!(y > -1.0 && y < 1.0);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = Mlp::new(&[4, 2], OutputActivation::Identity, &mut rng(0));
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient() {
        let net = Mlp::new(&[3, 5, 2], OutputActivation::Tanh, &mut rng(1));
        let cache = net.forward_cached(&[0.3, -0.2, 0.9]).unwrap();
        let (grads, grad_in) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(grads.layers.iter().all(|l| l.weights.data.iter().all(|&v| v == 0.0)));
        assert!(grad_in.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient_is_the_outer_product() {
        let net = Mlp::new(&[2, 1], OutputActivation::Identity, &mut rng(2));
        let x = [0.7, -1.3];
        let cache = net.forward_cached(&x).unwrap();
        let (grads, grad_in) = net.backward(&cache, &[1.0]).unwrap();
        // d(w.x + b)/dw = x, /db = 1, /dx = w.
        assert_eq!(grads.layers[0].weights.data, vec![0.7, -1.3]);
        assert_eq!(grads.layers[0].bias, vec![1.0]);
        assert_eq!(grad_in, net.layers[0].weights.data);
    }

    /// Central finite differences of `output . weights_vec` with respect to
    /// one parameter, addressed through a mutation closure.
    fn numeric_grad(
        net: &Mlp,
        input: &[f64],
        weights_vec: &[f64],
        mutate: &dyn Fn(&mut Mlp, f64),
    ) -> f64 {
        let h = 1e-5;
        let eval = |delta: f64| -> f64 {
            let mut probe = net.clone();
            mutate(&mut probe, delta);
            let out = probe.forward(input).unwrap();
            out.iter().zip(weights_vec).map(|(o, w)| o * w).sum()
        };
        (eval(h) - eval(-h)) / (2.0 * h)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut seeds = rng(7);
        for trial in 0..12 {
            let dims: Vec<usize> = match trial % 3 {
                0 => vec![4, 8, 3],
                1 => vec![3, 6, 6, 2],
                _ => vec![5, 4, 1],
            };
            let act = if trial % 2 == 0 { OutputActivation::Tanh } else { OutputActivation::Identity };
            let net = Mlp::new(&dims, act, &mut seeds);
            let input: Vec<f64> = (0..dims[0]).map(|_| seeds.random_range(-1.0..1.0)).collect();
            let gout: Vec<f64> =
                (0..*dims.last().unwrap()).map(|_| seeds.random_range(-1.0..1.0)).collect();

            let cache = net.forward_cached(&input).unwrap();
            let (grads, grad_in) = net.backward(&cache, &gout).unwrap();

            for l in 0..net.layers.len() {
                for i in (0..net.layers[l].weights.data.len()).step_by(3) {
                    let expected = numeric_grad(&net, &input, &gout, &|m, d| {
                        m.layers[l].weights.data[i] += d;
                    });
                    let got = grads.layers[l].weights.data[i];
                    let scale = expected.abs().max(got.abs()).max(1e-6);
                    assert!(
                        (got - expected).abs() / scale < 1e-4,
                        "layer {l} weight {i}: {got} vs {expected}"
                    );
                }
                for i in 0..net.layers[l].bias.len() {
                    let expected = numeric_grad(&net, &input, &gout, &|m, d| {
                        m.layers[l].bias[i] += d;
                    });
                    let got = grads.layers[l].bias[i];
                    let scale = expected.abs().max(got.abs()).max(1e-6);
                    assert!((got - expected).abs() / scale < 1e-4);
                }
            }
            for (i, &got) in grad_in.iter().enumerate() {
                let mut shifted = input.clone();
                let h = 1e-5;
                shifted[i] += h;
                let plus: f64 = net
                    .forward(&shifted)
                    .unwrap()
                    .iter()
                    .zip(&gout)
                    .map(|(o, w)| o * w)
                    .sum();
                shifted[i] -= 2.0 * h;
                let minus: f64 = net
                    .forward(&shifted)
                    .unwrap()
                    .iter()
                    .zip(&gout)
                    .map(|(o, w)| o * w)
                    .sum();
                let expected = (plus - minus) / (2.0 * h);
                let scale = expected.abs().max(got.abs()).max(1e-6);
                assert!((got - expected).abs() / scale < 1e-4);
            }
        }
    }

    #[test]
    fn adam_leaves_parameters_alone_on_zero_gradient() {
        let mut net = Mlp::new(&[3, 4, 2], OutputActivation::Identity, &mut rng(5));
        let before = net.clone();
        let mut state = AdamState::new(&net, AdamParams::with_learning_rate(1e-3));
        let zero = MlpGrads::zeros_like(&net);
        adam_step(&mut net, &zero, &mut state).unwrap();
        assert_eq!(net, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_steps_approach_the_learning_rate_against_constant_gradient() {
        let mut net = Mlp::new(&[1, 1], OutputActivation::Identity, &mut rng(6));
        let lr = 1e-3;
        let mut state = AdamState::new(&net, AdamParams::with_learning_rate(lr));
        let mut grads = MlpGrads::zeros_like(&net);
        grads.layers[0].weights.data[0] = 0.37; // constant positive gradient
        let mut prev = net.layers[0].weights.data[0];
        for step in 0..300 {
            adam_step(&mut net, &grads, &mut state).unwrap();
            let now = net.layers[0].weights.data[0];
            let delta = now - prev;
            assert!(delta < 0.0, "moves against the gradient sign");
            if step > 100 {
                assert!((delta.abs() - lr).abs() < 0.05 * lr, "step {delta} vs lr {lr}");
            }
            prev = now;
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut net = Mlp::new(&[2, 3, 1], OutputActivation::Identity, &mut rng(8));
            let mut state = AdamState::new(&net, AdamParams::with_learning_rate(1e-2));
            let mut r = rng(9);
            for _ in 0..50 {
                let x: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
                let cache = net.forward_cached(&x).unwrap();
                let (grads, _) = net.backward(&cache, &[1.0]).unwrap();
                adam_step(&mut net, &grads, &mut state).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn soft_update_blends_and_converges() {
        let mut rng_ = rng(10);
        let online = Mlp::new(&[2, 3, 1], OutputActivation::Identity, &mut rng_);
        let mut target = Mlp::new(&[2, 3, 1], OutputActivation::Identity, &mut rng_);

        // tau = 1 copies outright.
        let mut t1 = target.clone();
        soft_update(&mut t1, &online, 1.0).unwrap();
        assert_eq!(t1, online);

        // tau = 0.005 from zero towards one.
        for l in &mut target.layers {
            l.weights.data.fill(0.0);
            l.bias.fill(0.0);
        }
        let mut ones = online.clone();
        for l in &mut ones.layers {
            l.weights.data.fill(1.0);
            l.bias.fill(1.0);
        }
        soft_update(&mut target, &ones, 0.005).unwrap();
        assert!((target.layers[0].weights.data[0] - 0.005).abs() < 1e-15);

        // Repeated updates converge geometrically in max-norm.
        let mut distance = 1.0 - 0.005;
        for _ in 0..200 {
            soft_update(&mut target, &ones, 0.005).unwrap();
            let worst = target
                .layers
                .iter()
                .flat_map(|l| l.weights.data.iter().chain(&l.bias))
                .map(|v| (v - 1.0).abs())
                .fold(0.0, f64::max);
            assert!(worst <= distance * (1.0 - 0.005) + 1e-12);
            distance = worst;
        }
        assert!(distance < 0.4);
    }

    #[test]
    fn soft_update_rejects_shape_mismatch() {
        let online = Mlp::new(&[2, 3, 1], OutputActivation::Identity, &mut rng(11));
        let mut target = Mlp::new(&[2, 4, 1], OutputActivation::Identity, &mut rng(12));
        assert!(soft_update(&mut target, &online, 0.5).is_err());
    }
}
