//! Heterogeneous client networks and their optimizer.
//!
//! Each client owns an MLP feature extractor with its own hidden widths
//! (model heterogeneity) and a classifier into the shared class count.
//! Forward passes return a cache; [`backward`] consumes it together with
//! gradients injected at the logits (CE, KD, FNTD, FCCM) and optionally at
//! the features (FISL), producing gradients for every parameter.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;

use crate::error::{Result, SimError};
use crate::numerics::{matmul, Matrix};
use crate::seeds;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    /// Smooth saturation; keeps finite-difference checks clean.
    #[default]
    Tanh,
    Relu,
    /// Pass-through, mainly for toy setups and tests.
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => Float::tanh(x),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative given pre-activation `x` and post-activation `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(SimError::Parameter(format!("unknown activation '{other}'"))),
        }
    }
}

/// One extractor layer: `out = act(in . weight + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

/// A client's private model: width-heterogeneous extractor plus a unified
/// classifier into the shared `class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientModel {
    layers: Vec<Layer>,
    classifier_weight: Matrix,
    classifier_bias: Matrix,
    input_dim: usize,
    feature_dim: usize,
    class_count: usize,
    /// Bumped on every parameter mutation; forward caches record it so a
    /// stale cache is rejected by [`backward`].
    version: u64,
}

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    version: u64,
}

/// Gradients (or any per-parameter tensor stack) shaped exactly like a
/// model's parameters: one (weight, bias) pair per layer plus the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<(Matrix, Matrix)>,
    pub classifier_weight: Matrix,
    pub classifier_bias: Matrix,
}

impl ParamGrads {
    pub fn zeros_like(model: &ClientModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.weight.rows(), l.weight.cols()),
                        Matrix::zeros(l.bias.rows(), l.bias.cols()),
                    )
                })
                .collect(),
            classifier_weight: Matrix::zeros(
                model.classifier_weight.rows(),
                model.classifier_weight.cols(),
            ),
            classifier_bias: Matrix::zeros(
                model.classifier_bias.rows(),
                model.classifier_bias.cols(),
            ),
        }
    }

    pub fn mats(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 2);
        for (w, b) in &self.layers {
            out.push(w);
            out.push(b);
        }
        out.push(&self.classifier_weight);
        out.push(&self.classifier_bias);
        out
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 2);
        for (w, b) in &mut self.layers {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    /// `self += factor * other` across all parameter tensors.
    pub fn add_scaled_in_place(&mut self, other: &ParamGrads, factor: f64) {
        for (a, b) in self.mats_mut().into_iter().zip(other.mats()) {
            a.add_scaled_in_place(b, factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mats().into_iter().all(Matrix::is_finite)
    }
}

impl ClientModel {
    /// Assemble a model from explicit parts; shapes must chain from
    /// `input_dim` through the layers to the classifier.
    pub fn from_parts(
        layers: Vec<Layer>,
        classifier_weight: Matrix,
        classifier_bias: Matrix,
        input_dim: usize,
    ) -> Result<Self> {
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.rows() != dim {
                return Err(SimError::Shape(format!(
                    "layer {i} expects input {} but got {dim}",
                    layer.weight.rows()
                )));
            }
            if layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols() {
                return Err(SimError::Shape(format!("layer {i} bias shape mismatch")));
            }
            dim = layer.weight.cols();
        }
        if classifier_weight.rows() != dim {
            return Err(SimError::Shape(format!(
                "classifier expects input {} but extractor ends at {dim}",
                classifier_weight.rows()
            )));
        }
        if classifier_bias.rows() != 1 || classifier_bias.cols() != classifier_weight.cols() {
            return Err(SimError::Shape(String::from("classifier bias shape mismatch")));
        }
        let class_count = classifier_weight.cols();
        Ok(Self {
            layers,
            classifier_weight,
            classifier_bias,
            input_dim,
            feature_dim: dim,
            class_count,
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn classifier(&self) -> (&Matrix, &Matrix) {
        (&self.classifier_weight, &self.classifier_bias)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// All parameter tensors in canonical order (layer weight, layer bias,
    /// ..., classifier weight, classifier bias).
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 2);
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.classifier_weight);
        out.push(&self.classifier_bias);
        out
    }

    /// Mutable parameter access; bumps the version so outstanding forward
    /// caches become stale.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.version += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 2);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    /// Named parameters, for the save/load container format.
    pub fn state_dict(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), l.weight.clone()));
            out.push((format!("layer{i}.bias"), l.bias.clone()));
        }
        out.push((String::from("classifier.weight"), self.classifier_weight.clone()));
        out.push((String::from("classifier.bias"), self.classifier_bias.clone()));
        out
    }

    pub fn total_parameter_count(&self) -> usize {
        self.params().iter().map(|m| m.data().len()).sum()
    }

    /// Forward pass: features `h` (post-activation extractor output), logits
    /// `z = h . W + b`, and the cache for [`backward`].
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix, ForwardCache)> {
        if x.cols() != self.input_dim {
            return Err(SimError::Shape(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let mut s = matmul(&current, &layer.weight)?;
            for r in 0..s.rows() {
                for c in 0..s.cols() {
                    s[(r, c)] += layer.bias[(0, c)];
                }
            }
            let a = s.map(|v| layer.activation.apply(v));
            pre.push(s);
            post.push(a.clone());
            current = a;
        }
        let h = current;
        let mut z = matmul(&h, &self.classifier_weight)?;
        for r in 0..z.rows() {
            for c in 0..z.cols() {
                z[(r, c)] += self.classifier_bias[(0, c)];
            }
        }
        let cache = ForwardCache { input: x.clone(), pre, post, version: self.version };
        Ok((h, z, cache))
    }

    /// Logits only; convenience for teachers and evaluation.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(_, z, _)| z)
    }
}

/// Backpropagate through the network body. `grad_z` attaches at the logits;
/// `grad_h`, when present, attaches at the features and is combined with the
/// classifier path (`grad into h = grad_h + grad_z . W^T`).
pub fn backward(
    model: &ClientModel,
    cache: &ForwardCache,
    grad_z: &Matrix,
    grad_h: Option<&Matrix>,
) -> Result<ParamGrads> {
    if cache.version != model.version {
        return Err(SimError::State(String::from(
            "forward cache is stale: parameters changed since the pass",
        )));
    }
    let batch = cache.input.rows();
    if grad_z.rows() != batch || grad_z.cols() != model.class_count {
        return Err(SimError::Shape(String::from("grad_z shape mismatch")));
    }
    let h = cache.post.last().unwrap_or(&cache.input);
    if let Some(gh) = grad_h {
        if gh.rows() != batch || gh.cols() != model.feature_dim {
            return Err(SimError::Shape(String::from("grad_h shape mismatch")));
        }
    }

    let grad_cls_w = matmul(&h.transpose(), grad_z)?;
    let grad_cls_b = Matrix::from_vec(1, model.class_count, grad_z.col_sums())?;

    let mut upstream = matmul(grad_z, &model.classifier_weight.transpose())?;
    if let Some(gh) = grad_h {
        upstream.add_scaled_in_place(gh, 1.0);
    }

    let mut layer_grads: Vec<(Matrix, Matrix)> = Vec::with_capacity(model.layers.len());
    for (idx, layer) in model.layers.iter().enumerate().rev() {
        let pre = &cache.pre[idx];
        let post = &cache.post[idx];
        let mut delta = upstream;
        for r in 0..delta.rows() {
            for c in 0..delta.cols() {
                delta[(r, c)] *= layer.activation.derivative(pre[(r, c)], post[(r, c)]);
            }
        }
        let below = if idx == 0 { &cache.input } else { &cache.post[idx - 1] };
        let gw = matmul(&below.transpose(), &delta)?;
        let gb = Matrix::from_vec(1, layer.bias.cols(), delta.col_sums())?;
        upstream = matmul(&delta, &layer.weight.transpose())?;
        layer_grads.push((gw, gb));
    }
    layer_grads.reverse();

    Ok(ParamGrads {
        layers: layer_grads,
        classifier_weight: grad_cls_w,
        classifier_bias: grad_cls_b,
    })
}

/// Immutable frozen copy of a model's parameters, tagged with the
/// communication epoch that produced it.
#[derive(Debug, Clone)]
pub struct Snapshot {
    model: ClientModel,
    epoch_tag: usize,
}

impl Snapshot {
    pub fn of(model: &ClientModel, epoch_tag: usize) -> Self {
        Self { model: model.clone(), epoch_tag }
    }

    pub fn epoch_tag(&self) -> usize {
        self.epoch_tag
    }

    pub fn model(&self) -> &ClientModel {
        &self.model
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.model.logits(x)
    }
}

/// Adam optimizer state; moment tensors mirror the model parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ParamGrads,
    v: ParamGrads,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(
        model: &ClientModel,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        Self {
            m: ParamGrads::zeros_like(model),
            v: ParamGrads::zeros_like(model),
            step: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction.
pub fn adam_step(state: &mut AdamState, model: &mut ClientModel, grads: &ParamGrads) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let lr = state.learning_rate;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bc1 = 1.0 - Float::powi(b1, t);
    let bc2 = 1.0 - Float::powi(b2, t);

    let params = model.params_mut();
    let ms = state.m.mats_mut();
    let vs = state.v.mats_mut();
    for ((p, g), (m, v)) in params.into_iter().zip(grads.mats()).zip(ms.into_iter().zip(vs)) {
        if !p.same_shape(g) {
            return Err(SimError::Shape(String::from(
                "gradient shape does not match parameter",
            )));
        }
        for i in 0..p.data().len() {
            let gi = g.data()[i];
            m.data_mut()[i] = b1 * m.data()[i] + (1.0 - b1) * gi;
            v.data_mut()[i] = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            let m_hat = m.data()[i] / bc1;
            let v_hat = v.data()[i] / bc2;
            p.data_mut()[i] -= lr * m_hat / (Float::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

/// He-style fan-in uniform init of one `rows x cols` weight matrix.
fn init_weight(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = Float::sqrt(6.0 / rows as f64);
    let mut w = Matrix::zeros(rows, cols);
    for i in 0..w.data().len() {
        w.data_mut()[i] = rng.random_range(-bound..bound);
    }
    w
}

/// Build one client model with the given hidden widths; biases start at zero.
pub fn build_client_model(
    input_dim: usize,
    hidden: &[usize],
    class_count: usize,
    activation: Activation,
    rng: &mut impl Rng,
) -> Result<ClientModel> {
    if hidden.is_empty() {
        return Err(SimError::Parameter(String::from(
            "client needs at least one extractor layer",
        )));
    }
    if hidden.contains(&0) || input_dim == 0 || class_count == 0 {
        return Err(SimError::Parameter(String::from("layer widths must be >= 1")));
    }
    let mut layers = Vec::with_capacity(hidden.len());
    let mut dim = input_dim;
    for &width in hidden {
        layers.push(Layer {
            weight: init_weight(dim, width, rng),
            bias: Matrix::zeros(1, width),
            activation,
        });
        dim = width;
    }
    let classifier_weight = init_weight(dim, class_count, rng);
    let classifier_bias = Matrix::zeros(1, class_count);
    ClientModel::from_parts(layers, classifier_weight, classifier_bias, input_dim)
}

/// Deterministically initialize every client in a scenario. Each client gets
/// its own sub-seed, so different clients draw distinct parameters while the
/// whole set is a pure function of `seed`.
pub fn build_scenario_models(
    widths: &[Vec<usize>],
    input_dim: usize,
    class_count: usize,
    activation: Activation,
    seed: u64,
) -> Result<Vec<ClientModel>> {
    if widths.is_empty() {
        return Err(SimError::Parameter(String::from("no client layer specs given")));
    }
    widths
        .iter()
        .enumerate()
        .map(|(i, hidden)| {
            let mut rng = seeds::rng(seed, "model_init", i as u64);
            build_client_model(input_dim, hidden, class_count, activation, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{central_difference, compare_gradients, FD_ATOL, FD_RTOL, FD_STEP};
    use crate::losses::{ce_loss, GRAD_Z_STUDENT};
    use alloc::vec;
    use alloc::vec::Vec;
    use approx::assert_abs_diff_eq;

    fn toy_model(seed: u64) -> ClientModel {
        let mut rng = seeds::rng(seed, "toy", 0);
        build_client_model(4, &[6, 5], 3, Activation::Tanh, &mut rng).unwrap()
    }

    fn toy_input(rows: usize, seed: u64) -> Matrix {
        let mut rng = seeds::rng(seed, "toy-in", 0);
        let data: Vec<f64> = (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, 4, data).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let layers = vec![Layer {
            weight: Matrix::zeros(3, 4),
            bias: Matrix::zeros(1, 4),
            activation: Activation::Tanh,
        }];
        let model =
            ClientModel::from_parts(layers, Matrix::zeros(4, 2), Matrix::zeros(1, 2), 3).unwrap();
        let x = Matrix::filled(2, 3, 0.7);
        let (h, z, _) = model.forward(&x).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let layers = vec![Layer {
            weight: Matrix::identity(3),
            bias: Matrix::zeros(1, 3),
            activation: Activation::Linear,
        }];
        let model =
            ClientModel::from_parts(layers, Matrix::zeros(3, 2), Matrix::zeros(1, 2), 3).unwrap();
        let x3 = Matrix::from_rows(&[vec![0.3, -0.8, 0.1], vec![1.2, 0.0, -0.4]]).unwrap();
        let (h, _, _) = model.forward(&x3).unwrap();
        assert_eq!(h, x3);
    }

    #[test]
    fn forward_matches_layerwise_oracle() {
        let model = toy_model(2);
        let x = toy_input(3, 3);
        let (h, z, _) = model.forward(&x).unwrap();
        let mut cur = x.clone();
        for layer in model.layers() {
            let mut s = matmul(&cur, &layer.weight).unwrap();
            for r in 0..s.rows() {
                for c in 0..s.cols() {
                    s[(r, c)] += layer.bias[(0, c)];
                }
            }
            cur = s.map(|v| layer.activation.apply(v));
        }
        assert!(cur.max_abs_diff(&h) < 1e-12);
        let (w, b) = model.classifier();
        let mut zz = matmul(&cur, w).unwrap();
        for r in 0..zz.rows() {
            for c in 0..zz.cols() {
                zz[(r, c)] += b[(0, c)];
            }
        }
        assert!(zz.max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn zero_gradients_in_zero_out() {
        let model = toy_model(4);
        let x = toy_input(3, 5);
        let (h, z, cache) = model.forward(&x).unwrap();
        let grads = backward(
            &model,
            &cache,
            &Matrix::zeros(z.rows(), z.cols()),
            Some(&Matrix::zeros(h.rows(), h.cols())),
        )
        .unwrap();
        assert!(grads.mats().iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn feature_only_gradient_leaves_classifier_untouched() {
        let model = toy_model(6);
        let x = toy_input(3, 7);
        let (h, z, cache) = model.forward(&x).unwrap();
        let grads = backward(
            &model,
            &cache,
            &Matrix::zeros(z.rows(), z.cols()),
            Some(&Matrix::filled(h.rows(), h.cols(), 0.3)),
        )
        .unwrap();
        assert!(grads.classifier_weight.data().iter().all(|&v| v == 0.0));
        assert!(grads.classifier_bias.data().iter().all(|&v| v == 0.0));
        assert!(grads.layers[0].0.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut model = toy_model(8);
        let x = toy_input(2, 9);
        let (_, z, cache) = model.forward(&x).unwrap();
        model.params_mut(); // any mutable access invalidates
        let err = backward(&model, &cache, &Matrix::zeros(z.rows(), z.cols()), None);
        assert!(matches!(err, Err(SimError::State(_))));
    }

    /// Full-network finite-difference check of CE through forward+backward.
    #[test]
    fn full_network_gradient_check() {
        let model = toy_model(10);
        assert!(model.total_parameter_count() <= 200);
        let x = toy_input(4, 11);
        let labels = [0usize, 2, 1, 2];

        let (_, z, cache) = model.forward(&x).unwrap();
        let loss = ce_loss(&z, &labels).unwrap();
        let grads = backward(&model, &cache, loss.grad(GRAD_Z_STUDENT).unwrap(), None).unwrap();

        let n_params = model.params().len();
        for pi in 0..n_params {
            let at = model.params()[pi].clone();
            let analytic = grads.mats()[pi].clone();
            let numeric = central_difference(
                |probe| {
                    let mut m = model.clone();
                    *m.params_mut()[pi] = probe.clone();
                    let (_, z, _) = m.forward(&x)?;
                    Ok(ce_loss(&z, &labels)?.value)
                },
                &at,
                FD_STEP,
            )
            .unwrap();
            compare_gradients(&analytic, &numeric, FD_RTOL, FD_ATOL).unwrap();
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut model = toy_model(12);
        let before = model.clone();
        let mut state = AdamState::new(&model, 0.001, 0.9, 0.999, 1e-8);
        let grads = ParamGrads::zeros_like(&model);
        adam_step(&mut state, &mut model, &grads).unwrap();
        for (a, b) in model.params().iter().zip(before.params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut model = toy_model(13);
        let before = model.clone();
        let mut state = AdamState::new(&model, 0.001, 0.9, 0.999, 1e-8);
        let mut grads = ParamGrads::zeros_like(&model);
        for m in grads.mats_mut() {
            for i in 0..m.data().len() {
                m.data_mut()[i] = 0.25;
            }
        }
        adam_step(&mut state, &mut model, &grads).unwrap();
        // after bias correction, m_hat = g and v_hat = g^2
        let expected_delta = -0.001 * 0.25 / (0.25 + 1e-8);
        for (a, b) in model.params().iter().zip(before.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_abs_diff_eq!(x - y, expected_delta, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adam_runs_are_bitwise_deterministic() {
        let run = || {
            let mut model = toy_model(14);
            let mut state = AdamState::new(&model, 0.001, 0.9, 0.999, 1e-8);
            let x = toy_input(4, 15);
            let labels = [1usize, 0, 2, 1];
            for _ in 0..5 {
                let (_, z, cache) = model.forward(&x).unwrap();
                let loss = ce_loss(&z, &labels).unwrap();
                let grads =
                    backward(&model, &cache, loss.grad(GRAD_Z_STUDENT).unwrap(), None).unwrap();
                adam_step(&mut state, &mut model, &grads).unwrap();
            }
            model
        };
        let a = run();
        let b = run();
        for (x, y) in a.params().iter().zip(b.params()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn scenario_models_are_heterogeneous_and_seeded() {
        let widths = vec![vec![32, 8], vec![48, 12]];
        let models = build_scenario_models(&widths, 16, 5, Activation::Tanh, 7).unwrap();
        assert_eq!(models[0].feature_dim(), 8);
        assert_eq!(models[1].feature_dim(), 12);
        assert_eq!(models[0].class_count(), 5);
        assert_eq!(models[1].class_count(), 5);

        let again = build_scenario_models(&widths, 16, 5, Activation::Tanh, 7).unwrap();
        for (a, b) in models.iter().zip(&again) {
            for (x, y) in a.params().iter().zip(b.params()) {
                assert_eq!(x.data(), y.data());
            }
        }

        // sub-seed separation: identical widths still draw distinct weights
        let same = build_scenario_models(&vec![vec![8, 4]; 2], 6, 3, Activation::Tanh, 7).unwrap();
        assert_ne!(same[0].layers()[0].weight.data(), same[1].layers()[0].weight.data());
    }

    #[test]
    fn empty_layer_list_is_rejected() {
        let mut rng = seeds::rng(1, "x", 0);
        assert!(matches!(
            build_client_model(4, &[], 3, Activation::Tanh, &mut rng),
            Err(SimError::Parameter(_))
        ));
    }

    #[test]
    fn snapshot_forward_is_bitwise_identical() {
        let model = toy_model(16);
        let snap = Snapshot::of(&model, 3);
        let x = toy_input(5, 17);
        let (_, z_live, _) = model.forward(&x).unwrap();
        let z_snap = snap.logits(&x).unwrap();
        assert_eq!(z_live.data(), z_snap.data());
        assert_eq!(snap.epoch_tag(), 3);
    }
}
