//! Small feed-forward classifier with exact forward/backward computation
//! and masked SGD steps.
//!
//! Weights are stored as `f32` (the wire format transmits 4-byte floats,
//! so stored and transmitted values are identical bit patterns); all
//! forward/backward arithmetic runs in `f64`. Hidden layers use ReLU, the
//! final layer is identity into softmax cross-entropy.

use crate::error::{Error, Result};
use crate::mask::Mask;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub has_bias: bool,
}

impl LayerShape {
    pub fn new(fan_in: usize, fan_out: usize, has_bias: bool) -> Self {
        assert!(fan_in >= 1 && fan_out >= 1);
        LayerShape {
            fan_in,
            fan_out,
            has_bias,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn bias_count(&self) -> usize {
        if self.has_bias {
            self.fan_out
        } else {
            0
        }
    }
}

/// One dense layer: weights in row-major `fan_out x fan_in` order plus an
/// optional bias vector. The flat index of weight (out, in) is
/// `out * fan_in + in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    shapes: Vec<LayerShape>,
    layers: Vec<Layer>,
}

impl Model {
    pub fn new(shapes: Vec<LayerShape>, layers: Vec<Layer>) -> Result<Self> {
        if shapes.len() != layers.len() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: format!("{} layers", shapes.len()),
                got: format!("{} layers", layers.len()),
            });
        }
        for (l, (s, layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.weights.len() != s.weight_count() {
                return Err(Error::ShapeMismatch {
                    layer: l,
                    expected: format!("{} weights", s.weight_count()),
                    got: format!("{} weights", layer.weights.len()),
                });
            }
            match (&layer.bias, s.has_bias) {
                (Some(b), true) if b.len() != s.fan_out => {
                    return Err(Error::ShapeMismatch {
                        layer: l,
                        expected: format!("bias length {}", s.fan_out),
                        got: format!("bias length {}", b.len()),
                    });
                }
                (Some(_), false) | (None, true) => {
                    return Err(Error::ShapeMismatch {
                        layer: l,
                        expected: format!("has_bias = {}", s.has_bias),
                        got: "opposite".into(),
                    });
                }
                _ => {}
            }
            if l > 0 && shapes[l - 1].fan_out != s.fan_in {
                return Err(Error::ShapeMismatch {
                    layer: l,
                    expected: format!("fan_in {}", shapes[l - 1].fan_out),
                    got: format!("fan_in {}", s.fan_in),
                });
            }
        }
        Ok(Model { shapes, layers })
    }

    /// MLP with the given layer sizes, e.g. `[4, 8, 2]` for a 4->8->2 net.
    /// Weights are drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn init_mlp<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        assert!(sizes.len() >= 2);
        let shapes: Vec<LayerShape> = sizes
            .windows(2)
            .map(|w| LayerShape::new(w[0], w[1], true))
            .collect();
        let mut layers = Vec::with_capacity(shapes.len());
        for s in &shapes {
            let bound = 1.0 / (s.fan_in as f64).sqrt();
            let weights = (0..s.weight_count())
                .map(|_| rng.gen_range(-bound..=bound) as f32)
                .collect();
            let bias = Some(vec![0.0f32; s.fan_out]);
            layers.push(Layer { weights, bias });
        }
        Model::new(shapes, layers)
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.shapes[self.shapes.len() - 1].fan_out
    }

    pub fn weight_count(&self) -> usize {
        self.shapes.iter().map(|s| s.weight_count()).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.shapes.iter().map(|s| s.bias_count()).sum()
    }

    /// Hadamard product with a mask: masked-out weights become exactly 0.
    pub fn masked(&self, mask: &Mask) -> Result<Model> {
        check_mask(self, mask)?;
        let mut out = self.clone();
        for (l, layer) in out.layers.iter_mut().enumerate() {
            for (w, &m) in layer.weights.iter_mut().zip(mask.layer(l)) {
                if m == 0 {
                    *w = 0.0;
                }
            }
        }
        Ok(out)
    }

    /// True iff every weight with mask bit 0 is exactly 0.0.
    pub fn respects_mask(&self, mask: &Mask) -> bool {
        self.layers.iter().enumerate().all(|(l, layer)| {
            layer
                .weights
                .iter()
                .zip(mask.layer(l))
                .all(|(&w, &m)| m == 1 || w == 0.0)
        })
    }

    /// First (layer, index) where a weight violates `w * m == w`, if any.
    pub fn mask_violation(&self, mask: &Mask) -> Option<(usize, usize)> {
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, (&w, &m)) in layer.weights.iter().zip(mask.layer(l)).enumerate() {
                if m == 0 && w != 0.0 {
                    return Some((l, i));
                }
            }
        }
        None
    }
}

/// A mini-batch: `n x d` features row-major, integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub n: usize,
    pub d: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, d: usize) -> Self {
        let n = labels.len();
        assert_eq!(features.len(), n * d);
        Batch {
            features,
            labels,
            n,
            d,
        }
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }
}

/// Gradient of the batch-mean loss, shape-congruent with a [`Model`].
#[derive(Debug, Clone)]
pub struct Gradient {
    pub layers: Vec<GradLayer>,
}

#[derive(Debug, Clone)]
pub struct GradLayer {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(model: &Model) -> Self {
        Gradient {
            layers: model
                .shapes()
                .iter()
                .map(|s| GradLayer {
                    weights: vec![0.0; s.weight_count()],
                    bias: if s.has_bias {
                        Some(vec![0.0; s.fan_out])
                    } else {
                        None
                    },
                })
                .collect(),
        }
    }
}

fn check_mask(model: &Model, mask: &Mask) -> Result<()> {
    if mask.num_layers() != model.num_layers() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: format!("{} mask layers", model.num_layers()),
            got: format!("{} mask layers", mask.num_layers()),
        });
    }
    for (l, s) in model.shapes.iter().enumerate() {
        if mask.layer(l).len() != s.weight_count() {
            return Err(Error::ShapeMismatch {
                layer: l,
                expected: format!("mask length {}", s.weight_count()),
                got: format!("mask length {}", mask.layer(l).len()),
            });
        }
    }
    Ok(())
}

fn check_batch(model: &Model, batch: &Batch) -> Result<()> {
    if batch.d != model.input_dim() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: format!("feature dim {}", model.input_dim()),
            got: format!("feature dim {}", batch.d),
        });
    }
    if batch.n == 0 {
        return Err(Error::EmptyDataset);
    }
    let c = model.output_dim();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= c) {
        return Err(Error::Domain(format!("label {bad} out of range [0, {c})")));
    }
    Ok(())
}

struct Pass {
    loss: f64,
    correct: usize,
    grad: Option<Gradient>,
}

/// One forward (and optionally backward) pass with optional weight masking.
/// Shared by `forward`, `masked_gradient` and `dense_gradient` so the three
/// public entry points cannot drift apart numerically.
fn run_pass(model: &Model, mask: Option<&Mask>, batch: &Batch, backward: bool) -> Result<Pass> {
    check_batch(model, batch)?;
    if let Some(m) = mask {
        check_mask(model, m)?;
    }
    let num_layers = model.num_layers();
    let n = batch.n;
    let mut grad = if backward {
        Some(Gradient::zeros_like(model))
    } else {
        None
    };
    let mut total_loss = 0.0;
    let mut correct = 0usize;

    // per-sample activations: acts[0] is the input, acts[l+1] the output of layer l
    for i in 0..n {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers + 1);
        acts.push(batch.sample(i).to_vec());
        for (l, layer) in model.layers.iter().enumerate() {
            let s = &model.shapes[l];
            let input = &acts[l];
            let mut out = vec![0.0f64; s.fan_out];
            for o in 0..s.fan_out {
                let mut z = layer.bias.as_ref().map_or(0.0, |b| b[o] as f64);
                let row = &layer.weights[o * s.fan_in..(o + 1) * s.fan_in];
                match mask {
                    Some(m) => {
                        let mrow = &m.layer(l)[o * s.fan_in..(o + 1) * s.fan_in];
                        for j in 0..s.fan_in {
                            if mrow[j] == 1 {
                                z += row[j] as f64 * input[j];
                            }
                        }
                    }
                    None => {
                        for j in 0..s.fan_in {
                            z += row[j] as f64 * input[j];
                        }
                    }
                }
                out[o] = if l + 1 < num_layers { z.max(0.0) } else { z };
            }
            acts.push(out);
        }

        let logits = &acts[num_layers];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = max + exp_sum.ln();
        let y = batch.labels[i];
        total_loss += log_sum - logits[y];
        let argmax = logits
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |best, (k, &z)| {
                if z > best.1 {
                    (k, z)
                } else {
                    best
                }
            })
            .0;
        if argmax == y {
            correct += 1;
        }

        if let Some(g) = grad.as_mut() {
            // delta at the logits: (softmax - onehot) / n
            let mut delta: Vec<f64> = logits
                .iter()
                .map(|&z| (z - log_sum).exp() / n as f64)
                .collect();
            delta[y] -= 1.0 / n as f64;
            for l in (0..num_layers).rev() {
                let s = &model.shapes[l];
                let input = &acts[l];
                let gl = &mut g.layers[l];
                for o in 0..s.fan_out {
                    let d = delta[o];
                    if let Some(b) = gl.bias.as_mut() {
                        b[o] += d;
                    }
                    let grow = &mut gl.weights[o * s.fan_in..(o + 1) * s.fan_in];
                    for j in 0..s.fan_in {
                        grow[j] += d * input[j];
                    }
                }
                if l > 0 {
                    let layer = &model.layers[l];
                    let mut prev = vec![0.0f64; s.fan_in];
                    for o in 0..s.fan_out {
                        let d = delta[o];
                        let row = &layer.weights[o * s.fan_in..(o + 1) * s.fan_in];
                        match mask {
                            Some(m) => {
                                let mrow = &m.layer(l)[o * s.fan_in..(o + 1) * s.fan_in];
                                for j in 0..s.fan_in {
                                    if mrow[j] == 1 {
                                        prev[j] += row[j] as f64 * d;
                                    }
                                }
                            }
                            None => {
                                for j in 0..s.fan_in {
                                    prev[j] += row[j] as f64 * d;
                                }
                            }
                        }
                    }
                    // ReLU gate from the forward pass
                    for (p, &a) in prev.iter_mut().zip(acts[l].iter()) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
    }

    let loss = total_loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            layer: num_layers - 1,
            context: "loss".into(),
        });
    }
    if let Some(g) = &grad {
        for (l, gl) in g.layers.iter().enumerate() {
            if gl.weights.iter().any(|v| !v.is_finite())
                || gl.bias.iter().flatten().any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite {
                    layer: l,
                    context: "gradient".into(),
                });
            }
        }
    }
    Ok(Pass {
        loss,
        correct,
        grad,
    })
}

/// Cross-entropy loss and top-1 accuracy of the masked model
/// (weights multiplied elementwise by the mask before the pass).
pub fn forward(model: &Model, mask: &Mask, batch: &Batch) -> Result<(f64, f64)> {
    let pass = run_pass(model, Some(mask), batch, false)?;
    Ok((pass.loss, pass.correct as f64 / batch.n as f64))
}

/// `m (.) grad L` evaluated at the masked weights. Coordinates with mask 0
/// are exactly 0; bias gradients are unmasked.
pub fn masked_gradient(model: &Model, mask: &Mask, batch: &Batch) -> Result<Gradient> {
    masked_loss_gradient(model, mask, batch).map(|(_, g)| g)
}

/// Same pass as [`masked_gradient`] but also returns the batch loss.
pub fn masked_loss_gradient(model: &Model, mask: &Mask, batch: &Batch) -> Result<(f64, Gradient)> {
    let pass = run_pass(model, Some(mask), batch, true)?;
    let mut grad = pass.grad.expect("backward pass requested");
    for (l, gl) in grad.layers.iter_mut().enumerate() {
        for (g, &m) in gl.weights.iter_mut().zip(mask.layer(l)) {
            if m == 0 {
                *g = 0.0;
            }
        }
    }
    Ok((pass.loss, grad))
}

/// Full unmasked gradient at the current (already sparse-valued) weights.
pub fn dense_gradient(model: &Model, batch: &Batch) -> Result<Gradient> {
    let pass = run_pass(model, None, batch, true)?;
    Ok(pass.grad.expect("backward pass requested"))
}

/// `w <- w - lr * grad` elementwise. Coordinates where the gradient is 0
/// are bit-unchanged.
pub fn sgd_step(model: &Model, grad: &Gradient, lr: f64) -> Result<Model> {
    if grad.layers.len() != model.num_layers() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: format!("{} grad layers", model.num_layers()),
            got: format!("{} grad layers", grad.layers.len()),
        });
    }
    let mut out = model.clone();
    for (l, (layer, gl)) in out.layers.iter_mut().zip(&grad.layers).enumerate() {
        if gl.weights.len() != layer.weights.len() {
            return Err(Error::ShapeMismatch {
                layer: l,
                expected: format!("{} weights", layer.weights.len()),
                got: format!("{} weights", gl.weights.len()),
            });
        }
        for (w, &g) in layer.weights.iter_mut().zip(&gl.weights) {
            if g != 0.0 {
                *w = (*w as f64 - lr * g) as f32;
            }
        }
        if let (Some(b), Some(gb)) = (layer.bias.as_mut(), gl.bias.as_ref()) {
            for (w, &g) in b.iter_mut().zip(gb) {
                if g != 0.0 {
                    *w = (*w as f64 - lr * g) as f32;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;
    use crate::rng::{derive, Stream};

    pub fn tiny_model(seed: u64) -> Model {
        let mut rng = derive(seed, Stream::InitModel, 0, 0);
        Model::init_mlp(&[4, 8, 2], &mut rng).unwrap()
    }

    pub fn tiny_batch(seed: u64, n: usize, d: usize, c: usize) -> Batch {
        let mut rng = derive(seed, Stream::DataGen, 0, 0);
        let features = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|i| i % c).collect();
        Batch::new(features, labels, d)
    }

    #[test]
    fn zero_weights_give_uniform_softmax_loss() {
        let shapes = vec![LayerShape::new(4, 8, true), LayerShape::new(8, 2, true)];
        let layers = shapes
            .iter()
            .map(|s| Layer {
                weights: vec![0.0; s.weight_count()],
                bias: Some(vec![0.0; s.fan_out]),
            })
            .collect();
        let model = Model::new(shapes.clone(), layers).unwrap();
        let mask = Mask::ones(&shapes);
        let batch = tiny_batch(1, 6, 4, 2);
        let (loss, _) = forward(&model, &mask, &batch).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn all_zero_mask_is_bias_only_network() {
        let model = tiny_model(42);
        let shapes = model.shapes().to_vec();
        let zero_mask = Mask::new(shapes.iter().map(|s| vec![0u8; s.weight_count()]).collect());
        let batch = tiny_batch(2, 8, 4, 2);
        let (loss_masked, _) = forward(&model, &zero_mask, &batch).unwrap();
        let zero_layers = shapes
            .iter()
            .zip(model.layers())
            .map(|(s, l)| Layer {
                weights: vec![0.0; s.weight_count()],
                bias: l.bias.clone(),
            })
            .collect();
        let zero_model = Model::new(shapes.clone(), zero_layers).unwrap();
        let (loss_zero, _) = forward(&zero_model, &Mask::ones(&shapes), &batch).unwrap();
        assert_eq!(loss_masked, loss_zero);
    }

    #[test]
    fn forward_mask_consistency() {
        // forward(model, mask, .) == forward(model (.) mask, ones, .)
        let model = tiny_model(42);
        let mut rng = derive(9, Stream::InitMask, 0, 0);
        let mask = crate::mask::erk_init(model.shapes(), 0.5, &mut rng).unwrap();
        let batch = tiny_batch(3, 8, 4, 2);
        let (l1, a1) = forward(&model, &mask, &batch).unwrap();
        let pre_masked = model.masked(&mask).unwrap();
        let ones = Mask::ones(model.shapes());
        let (l2, a2) = forward(&pre_masked, &ones, &batch).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert_eq!(a1, a2);
    }

    #[test]
    fn masked_gradient_zero_mask_all_zero() {
        let model = tiny_model(42);
        let shapes = model.shapes().to_vec();
        let zero_mask = Mask::new(shapes.iter().map(|s| vec![0u8; s.weight_count()]).collect());
        let batch = tiny_batch(4, 8, 4, 2);
        let g = masked_gradient(&model, &zero_mask, &batch).unwrap();
        for gl in &g.layers {
            assert!(gl.weights.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn masked_gradient_ones_equals_dense() {
        let model = tiny_model(42);
        let ones = Mask::ones(model.shapes());
        let batch = tiny_batch(5, 8, 4, 2);
        let gm = masked_gradient(&model, &ones, &batch).unwrap();
        let gd = dense_gradient(&model, &batch).unwrap();
        for (a, b) in gm.layers.iter().zip(&gd.layers) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn zero_model_symmetric_batch_zero_output_bias_grad() {
        // zero weights, balanced 2-class batch: softmax is uniform, so the
        // output-bias gradient cancels between the two classes
        let shapes = vec![LayerShape::new(4, 8, true), LayerShape::new(8, 2, true)];
        let layers = shapes
            .iter()
            .map(|s| Layer {
                weights: vec![0.0; s.weight_count()],
                bias: Some(vec![0.0; s.fan_out]),
            })
            .collect();
        let model = Model::new(shapes, layers).unwrap();
        let batch = tiny_batch(6, 8, 4, 2); // labels alternate 0,1 -> balanced
        let g = dense_gradient(&model, &batch).unwrap();
        let out_bias = g.layers[1].bias.as_ref().unwrap();
        for &v in out_bias {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_step_zero_grad_is_identity() {
        let model = tiny_model(42);
        let g = Gradient::zeros_like(&model);
        let stepped = sgd_step(&model, &g, 0.1).unwrap();
        assert_eq!(model, stepped);
    }

    #[test]
    fn sgd_step_scalar_arithmetic() {
        let shapes = vec![LayerShape::new(1, 1, false)];
        let model = Model::new(
            shapes,
            vec![Layer {
                weights: vec![1.0],
                bias: None,
            }],
        )
        .unwrap();
        let grad = Gradient {
            layers: vec![GradLayer {
                weights: vec![2.0],
                bias: None,
            }],
        };
        let out = sgd_step(&model, &grad, 0.1).unwrap();
        assert!((out.layers()[0].weights[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_reports_layer() {
        let model = tiny_model(42);
        let bad_mask = Mask::new(vec![vec![1; 32], vec![1; 5]]);
        match forward(&model, &bad_mask, &tiny_batch(1, 4, 4, 2)) {
            Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn batch_dim_mismatch_rejected() {
        let model = tiny_model(42);
        let mask = Mask::ones(model.shapes());
        let batch = tiny_batch(1, 4, 3, 2);
        assert!(forward(&model, &mask, &batch).is_err());
    }
}
